// Acceptance checks for the lab: one PASS/FAIL line per criterion.
// Exit status is non-zero when any criterion fails.

#include "fedimpres/app.hpp"
#include "fedimpres/errors.hpp"
#include "fedimpres/rng.hpp"
#include "fd_oracle.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <string>

using namespace fedimpres;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Random weights and biases so no unit sits exactly at a ReLU kink by construction.
Model randomized(std::vector<LayerSpec> layers, Shape sample, std::uint64_t seed) {
    Model m = Model::initialized(std::move(layers), sample, seed);
    Rng rng(derive_seed(seed, "bias"));
    TensorList p = m.params();
    for (std::size_t i = 1; i < p.size(); i += 2)
        for (double& v : p[i].data()) v = 0.3 * (2.0 * rng.uniform() - 1.0);
    return m.with_params(std::move(p));
}

Tensor uniform_tensor(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (double& v : t.data()) v = 0.05 + 0.9 * rng.uniform();
    return t;
}

std::vector<int> random_labels(std::size_t n, std::size_t K, Rng& rng) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(K));
    return y;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    const Shape img{1, 4, 4};
    double worst_first = 0.0, worst_penalty = 0.0;
    std::size_t checked = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(derive_seed(seed, "gradient-suite"));
        const std::vector<std::vector<LayerSpec>> nets = {
            {FlattenLayer{}, DenseLayer{16, 6}, ReluLayer{}, DenseLayer{6, 3}},
            {Conv2dLayer{1, 2, 3, 1, 1}, ReluLayer{}, FlattenLayer{}, DenseLayer{32, 5}, ReluLayer{}, DenseLayer{5, 3}},
            {Conv2dLayer{1, 2, 3, 2, 0}, FlattenLayer{}, DenseLayer{2, 3}},
        };
        for (std::size_t n = 0; n < nets.size(); ++n) {
            const Model m = randomized(nets[n], img, derive_seed(seed, "net", n));
            const Tensor x = uniform_tensor({3, 1, 4, 4}, rng);
            const auto y = random_labels(3, 3, rng);

            // Every layer and the CE loss, through parameters and inputs.
            const auto bw = backward(m, x, y);
            for (std::size_t p = 0; p < m.params().size(); ++p) {
                auto f = [&](const Tensor& t) {
                    TensorList q = m.params();
                    q[p] = t;
                    return ce_loss(forward(m.with_params(q), x), y);
                };
                auto r = fd::check(f, m.params()[p], bw.param_grads[p]);
                worst_first = std::max(worst_first, r.rel_error);
                checked += r.checked;
            }
            auto fx = [&](const Tensor& t) { return ce_loss(forward(m, t), y); };
            auto rx = fd::check(fx, x, bw.input_grads);
            worst_first = std::max(worst_first, rx.rel_error);
            checked += rx.checked;

            // Closed-form classifier gradient against perturbed head weights and bias.
            const auto out = forward_features(m, x);
            const Tensor cg = classifier_grad(out.features, out.logits, y);
            const std::size_t K = m.n_classes(), F = m.feature_dim();
            Tensor gw({K, F}), gb({K});
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t f = 0; f < F; ++f) gw[k * F + f] = cg[k * (F + 1) + f];
                gb[k] = cg[k * (F + 1) + F];
            }
            const std::size_t hw = m.params().size() - 2;
            for (std::size_t p : {hw, hw + 1}) {
                auto f = [&](const Tensor& t) {
                    TensorList q = m.params();
                    q[p] = t;
                    return ce_loss(forward(m.with_params(q), x), y);
                };
                auto r = fd::check(f, m.params()[p], p == hw ? gw : gb);
                worst_first = std::max(worst_first, r.rel_error);
                checked += r.checked;
            }

            // The impression objective with and without the penalty, w.r.t. the pixels.
            Tensor dual({K, F + 1});
            for (double& v : dual.data()) v = rng.normal();
            for (double rho : {0.0, 0.2, 1.0}) {
                const auto ev = evaluate_impression_objective(m, x, y, dual, rho);
                auto f = [&](const Tensor& t) { return impression_objective(m, t, y, dual, rho).total; };
                auto r = fd::check(f, x, ev.pixel_grad);
                (rho == 0.0 ? worst_first : worst_penalty) = std::max(rho == 0.0 ? worst_first : worst_penalty,
                                                                      r.rel_error);
                checked += r.checked;
            }
            const auto ce = evaluate_impression_objective(m, x, y, dual, 0.0, ObjectiveKind::ce_only);
            auto fce = [&](const Tensor& t) {
                return evaluate_impression_objective(m, t, y, dual, 0.0, ObjectiveKind::ce_only).terms.total;
            };
            auto rce = fd::check(fce, x, ce.pixel_grad);
            worst_first = std::max(worst_first, rce.rel_error);
            checked += rce.checked;
        }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst_first < 1e-4 && worst_penalty < 1e-3 && secs < 30.0 && checked > 0;
    o.detail = format("max rel err first-order %.2e (< 1e-4), with penalty %.2e (< 1e-3), %zu elements, 20 seeds, "
                      "%.1f s (< 30 s)",
                      worst_first, worst_penalty, checked, secs);
    return o;
}

// ---------------------------------------------------------------------------
// 2. Dual-update exactness

// sum_b (softmax(z_b) - onehot(y_b)) (outer) [h_b, 1], straight from the definition.
Tensor reference_head_grad(const Model& m, const Tensor& x, const std::vector<int>& y) {
    const auto out = forward_features(m, x);
    const std::size_t B = y.size(), K = m.n_classes(), F = m.feature_dim();
    Tensor g({K, F + 1}, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        double mx = -INFINITY, s = 0.0;
        for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, out.logits[b * K + k]);
        for (std::size_t k = 0; k < K; ++k) s += std::exp(out.logits[b * K + k] - mx);
        for (std::size_t k = 0; k < K; ++k) {
            const double d = std::exp(out.logits[b * K + k] - mx) / s - (static_cast<int>(k) == y[b] ? 1.0 : 0.0);
            for (std::size_t f = 0; f < F; ++f) g[k * (F + 1) + f] += d * out.features[b * F + f];
            g[k * (F + 1) + F] += d;
        }
    }
    return g;
}

Outcome dual_exactness() {
    ToyTaskSpec spec;
    spec.n_classes = 4;
    spec.per_class.assign(4, 32);
    spec.prototype_seed = 3;
    spec.sample_seed = 4;
    const Dataset d = make_toy_task(spec);
    std::size_t hidden[] = {16};
    Model m = Model::initialized(mlp_layers(64, hidden, 4), {1, 8, 8}, 5);
    for (int it = 0; it < 50; ++it) m = m.with_params(sgd_step(m.params(), backward(m, d.images, d.labels).param_grads, 0.5));

    SynthesisConfig cfg; // rho 0.2, 5 ADMM epochs
    const auto batch = admm_synthesize(m, random_seed_pool({1, 8, 8}, cfg.batch_size, 6), cfg);
    double worst = 0.0;
    bool shape_ok = batch.dual_trajectory.size() == 6 && batch.epoch_pixels.size() == 5;
    for (std::size_t t = 0; shape_ok && t < 5; ++t) {
        const Tensor g = reference_head_grad(m, batch.epoch_pixels[t], batch.pseudo_labels);
        const Tensor& a = batch.dual_trajectory[t];
        const Tensor& b = batch.dual_trajectory[t + 1];
        for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs((b[i] - a[i]) - cfg.rho * g[i]));
    }
    Outcome o;
    o.pass = shape_ok && cfg.rho == 0.2 && cfg.admm_epochs == 5 && worst < 1e-12;
    o.detail = format("max |dual step - rho*G| %.2e over %d epochs (< 1e-12), rho %.1f", worst, cfg.admm_epochs, cfg.rho);
    return o;
}

// ---------------------------------------------------------------------------
// 3. Reduction chain

Outcome reduction_chain() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    cfg.clients = 4;
    cfg.seed = 7;
    const ExperimentData data = prepare_data(cfg);
    const Model g0 = Model::initialized(parse_arch(cfg.arch, data.train.sample_shape(), data.train.n_classes),
                                        data.train.sample_shape(), derive_seed(cfg.seed, "model-init"));
    auto context = [&](Algorithm alg) {
        FederatedContext ctx;
        ctx.train = &data.train;
        ctx.test = &*data.test;
        ctx.round.algorithm = alg;
        ctx.round.total_rounds = 3;
        ctx.round.warmup_rounds = 0; // every round is post-warmup
        ctx.round.local_epochs = 2;
        ctx.round.beta = 0.0;
        ctx.round.mu = 0.0;
        ctx.round.local_lr = 0.05;
        ctx.master_seed = cfg.seed;
        ctx.threads = 1;
        return ctx;
    };
    const auto imp = context(Algorithm::fedimpres), prox = context(Algorithm::fedprox), avg = context(Algorithm::fedavg);
    const auto clients = make_clients(data.shards, g0, cfg.seed);
    Model a = g0, b = g0, c = g0;
    std::vector<ClientState> ca = clients, cb = clients, cc = clients;
    bool same = true, synthesized = true, moved = false;
    for (int r = 0; r < 3; ++r) {
        auto ra = run_round(a, ca, r, imp);
        auto rb = run_round(b, cb, r, prox);
        auto rc = run_round(c, cc, r, avg);
        synthesized = synthesized && ra.impression.has_value();
        for (std::size_t i = 0; i < clients.size(); ++i)
            same = same && ra.clients[i].model == rc.clients[i].model && rb.clients[i].model == rc.clients[i].model;
        same = same && ra.global == rc.global && rb.global == rc.global && ra.record.clients == rc.record.clients &&
               rb.record.clients == rc.record.clients;
        moved = moved || !(rc.global == c);
        a = ra.global, b = rb.global, c = rc.global;
        ca = ra.clients, cb = rb.clients, cc = rc.clients;
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = same && synthesized && moved && secs < 60.0;
    o.detail = format("fedimpres(beta=0) == fedprox(mu=0) == fedavg bitwise over 3 rounds, 4 clients: %s; "
                      "impressions synthesized: %s; %.1f s (< 60 s)",
                      same ? "yes" : "no", synthesized ? "yes" : "no", secs);
    return o;
}

// ---------------------------------------------------------------------------
// 4. Synthesis descent

Outcome synthesis_descent() {
    bool descends = true, trained = true;
    double alm_norm = 0.0, ce_norm = 0.0, min_acc = 1.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ToyTaskSpec s;
        s.n_classes = 2;
        s.per_class = {40, 40};
        s.noise = 0.2;
        s.prototype_seed = seed;
        s.sample_seed = seed + 1;
        const Dataset d = make_toy_task(s);
        std::size_t hidden[] = {16};
        Model m = Model::initialized(mlp_layers(64, hidden, 2), {1, 8, 8}, seed);
        for (int it = 0; it < 200; ++it)
            m = m.with_params(sgd_step(m.params(), backward(m, d.images, d.labels).param_grads, 0.5));
        const double acc = evaluate(m, d).accuracy;
        min_acc = std::min(min_acc, acc);
        trained = trained && acc >= 0.95;

        SynthesisConfig cfg;
        const SeedPool pool = random_seed_pool({1, 8, 8}, cfg.batch_size, derive_seed(seed, "pool"));
        const auto alm = admm_synthesize(m, pool, cfg);
        const auto ce = ce_only_synthesize(m, pool, cfg);
        descends = descends && alm.final_ce < alm.initial_ce && ce.final_ce < ce.initial_ce;
        alm_norm += std::sqrt(aggregated_head_grad(m, alm.pixels, alm.pseudo_labels).squared_norm()) / 5.0;
        ce_norm += std::sqrt(aggregated_head_grad(m, ce.pixels, ce.pseudo_labels).squared_norm()) / 5.0;
    }
    const double ratio = alm_norm / ce_norm;
    Outcome o;
    o.pass = trained && descends && ratio <= 0.7;
    o.detail = format("servers train acc >= %.3f (>= 0.95); CE descends for both objectives: %s; mean phi-grad norm "
                      "ALM %.4f vs CE-only %.4f, ratio %.3f (<= 0.70), 5 seeds",
                      min_acc, descends ? "yes" : "no", alm_norm, ce_norm, ratio);
    return o;
}

// ---------------------------------------------------------------------------
// 5. Forgetting

Outcome forgetting() {
    constexpr int kEpochs = 10, kWarmup = 3;
    double fall[2] = {0.0, 0.0};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ToyTaskSpec spec;
        spec.n_classes = 4;
        spec.per_class.assign(4, 64);
        spec.noise = 0.15;
        spec.prototype_seed = derive_seed(seed, "toy-prototypes");
        spec.sample_seed = derive_seed(seed, "toy-train");
        const Dataset train = make_toy_task(spec);
        const auto split = holdout_split(train.size(), 0.1, derive_seed(seed, "holdout"));
        ShardSet shards; // classes {0, 1} and {2, 3}
        shards.shards.resize(2);
        for (auto i : split.remaining) shards.shards[train.labels[i] < 2 ? 0 : 1].push_back(i);
        std::size_t hidden[] = {32};
        const Model g0 = Model::initialized(mlp_layers(64, hidden, 4), {1, 8, 8}, derive_seed(seed, "model-init"));
        for (int a = 0; a < 2; ++a) {
            FederatedContext ctx;
            ctx.train = &train;
            ctx.master_seed = seed;
            ctx.threads = 1;
            ctx.round.algorithm = a ? Algorithm::fedimpres : Algorithm::fedavg;
            ctx.round.local_epochs = kEpochs;
            ctx.round.local_lr = 0.05;
            ctx.round.beta = 1.0;
            ctx.round.warmup_rounds = kWarmup;
            ctx.round.total_rounds = kWarmup + 1;
            ctx.round.track_cross = true;
            ctx.init_pool = holdout_seed_pool(train, split.holdout);
            ctx.synthesis.init_mode = InitMode::holdout;
            const auto res = run_experiment(ctx, g0, make_clients(shards, g0, seed));
            const auto curve = forgetting_curve(res.records);
            double s = 0.0;
            for (const auto& c : curve) {
                double start = 0.0, end = 0.0;
                for (const auto& p : c) {
                    if (p.round != kWarmup) continue;
                    if (p.epoch == 0) start = p.value;
                    if (p.epoch == kEpochs) end = p.value;
                }
                s += start - end;
            }
            fall[a] += s / static_cast<double>(curve.size()) / 5.0;
        }
    }
    Outcome o;
    o.pass = fall[0] >= 0.30 && fall[1] <= 0.5 * fall[0];
    o.detail = format("mean off-diagonal accuracy fall over round %d (E=%d), 5 seeds: FedAvg %.1f pts (>= 30), "
                      "FedImpres %.1f pts (<= %.1f = half of FedAvg)",
                      kWarmup, kEpochs, 100.0 * fall[0], 100.0 * fall[1], 50.0 * fall[0]);
    return o;
}

// ---------------------------------------------------------------------------
// 6. End-to-end accuracy

ExperimentConfig end_to_end_config(std::uint64_t seed, Algorithm alg) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.clients = 4;
    cfg.alpha = 0.01;
    cfg.toy_classes = 8;
    cfg.toy_train_per_class = 256;
    cfg.toy_noise = 0.3;
    cfg.arch = "dense:64,relu,dense:32,relu";
    cfg.round.algorithm = alg;
    cfg.round.total_rounds = 8;
    cfg.round.local_epochs = 5;
    cfg.round.warmup_rounds = 2;
    cfg.round.local_lr = 0.1;
    cfg.synthesis.batch_size = 32;
    cfg.synthesis.init_mode = InitMode::holdout;
    cfg.run_id = "e2e";
    cfg.out = (fs::temp_directory_path() / "fedimpres_acceptance_e2e").string();
    return cfg;
}

Outcome end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    double acc[2] = {0.0, 0.0};
    bool budget = true;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (int a = 0; a < 2; ++a) {
            const auto cfg = end_to_end_config(seed, a ? Algorithm::fedimpres : Algorithm::fedavg);
            budget = budget && local_epoch_budget(cfg.round) == 40;
            const auto res = run_configured(cfg);
            acc[a] += *res.records.back().global_acc / 5.0;
        }
    }
    fs::remove_all(end_to_end_config(1, Algorithm::fedavg).out);
    const double secs = seconds_since(t0);
    const double gain = acc[1] - acc[0];
    Outcome o;
    o.pass = budget && gain >= 0.05 && secs < 600.0;
    o.detail = format("4 clients, alpha 0.01, rounds x E = 8 x 5 = 40: FedAvg %.1f%%, FedImpres %.1f%%, gain %+.1f pts "
                      "(>= +5.0), mean of 5 seeds, %.0f s (< 600 s)",
                      100.0 * acc[0], 100.0 * acc[1], 100.0 * gain, secs);
    return o;
}

// ---------------------------------------------------------------------------
// 7. Partition statistics

Outcome partition_statistics() {
    ToyTaskSpec spec;
    spec.n_classes = 8;
    spec.per_class.assign(8, 100);
    spec.height = 2;
    spec.width = 2;
    const Dataset d = make_toy_task(spec);
    const double alphas[] = {0.005, 0.01, 100.0};
    double mean[3] = {0.0, 0.0, 0.0};
    bool conserved = true;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        for (int a = 0; a < 3; ++a) {
            const auto s = dirichlet_partition(d, 8, alphas[a], derive_seed(seed, "partition"));
            std::vector<int> seen(d.size(), 0);
            for (const auto& shard : s.shards) {
                conserved = conserved && !shard.empty();
                for (auto i : shard) ++seen[i];
            }
            for (int c : seen) conserved = conserved && c == 1;
            mean[a] += mean_majority_fraction(d, s) / 50.0;
        }
    }
    Outcome o;
    o.pass = conserved && mean[0] > mean[1] && mean[1] > mean[2];
    o.detail = format("mean majority fraction over 50 seeds: alpha 0.005 %.3f > alpha 0.01 %.3f > alpha 100 %.3f; "
                      "every sample in exactly one non-empty shard: %s",
                      mean[0], mean[1], mean[2], conserved ? "yes" : "no");
    return o;
}

// ---------------------------------------------------------------------------
// 8. Determinism

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) {
            std::ifstream is(e.path(), std::ios::binary);
            files[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(is), {}};
        }
    return files;
}

Outcome determinism() {
    const fs::path out = fs::temp_directory_path() / "fedimpres_acceptance_determinism";
    ExperimentConfig cfg;
    cfg.seed = 11;
    cfg.clients = 4;
    cfg.round.total_rounds = 4;
    cfg.round.warmup_rounds = 1;
    cfg.round.local_epochs = 2;
    cfg.round.track_cross = true;
    cfg.synthesis.init_mode = InitMode::holdout;
    cfg.out = out.string();
    const char* saved = std::getenv("FEDIMPRES_THREADS");
    const std::string saved_value = saved ? saved : "";

    std::vector<std::map<std::string, std::string>> trees;
    for (const char* threads : {"1", "1", "4"}) {
        setenv("FEDIMPRES_THREADS", threads, 1);
        fs::remove_all(out);
        run_configured(cfg);
        trees.push_back(snapshot(out));
    }
    if (saved) setenv("FEDIMPRES_THREADS", saved_value.c_str(), 1);
    else unsetenv("FEDIMPRES_THREADS");
    fs::remove_all(out);

    Outcome o;
    o.pass = trees[0].size() == 5 && trees[0] == trees[1] && trees[0] == trees[2];
    o.detail = format("%zu output files; repeat run identical: %s; 4 client threads vs 1 identical: %s", trees[0].size(),
                      trees[0] == trees[1] ? "yes" : "no", trees[0] == trees[2] ? "yes" : "no");
    return o;
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient suite", gradient_suite},
        {"dual-update exactness", dual_exactness},
        {"reduction chain", reduction_chain},
        {"synthesis descent", synthesis_descent},
        {"forgetting", forgetting},
        {"end-to-end accuracy", end_to_end},
        {"partition statistics", partition_statistics},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %zu %s: %s  %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
