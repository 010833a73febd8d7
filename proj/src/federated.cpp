#include "fedimpres/federated.hpp"

#include "fedimpres/errors.hpp"
#include "fedimpres/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>

namespace fedimpres {

std::string to_string(Algorithm a) {
    switch (a) {
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedprox: return "fedprox";
    case Algorithm::fedimpres: return "fedimpres";
    }
    return "unknown";
}

std::string to_string(AggregationMode m) { return m == AggregationMode::uniform ? "uniform" : "weighted"; }

Algorithm parse_algorithm(const std::string& name) {
    if (name == "fedavg") return Algorithm::fedavg;
    if (name == "fedprox") return Algorithm::fedprox;
    if (name == "fedimpres") return Algorithm::fedimpres;
    throw ValidationError("unknown algorithm '" + name + "' (expected fedavg, fedprox or fedimpres)");
}

AggregationMode parse_aggregation(const std::string& name) {
    if (name == "uniform") return AggregationMode::uniform;
    if (name == "weighted") return AggregationMode::weighted;
    throw ValidationError("unknown aggregation '" + name + "' (expected uniform or weighted)");
}

void RoundConfig::validate() const {
    if (local_epochs < 1) throw ValidationError("local_epochs must be >= 1");
    if (!(local_lr > 0.0)) throw ValidationError("train_lr must be positive");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(beta >= 0.0)) throw ValidationError("beta must be >= 0");
    if (!(mu >= 0.0)) throw ValidationError("mu must be >= 0");
    if (total_rounds < 1) throw ValidationError("rounds must be >= 1");
    if (warmup_rounds < 0 || warmup_rounds >= total_rounds)
        throw ValidationError("warmup_rounds must be in [0, rounds)");
}

int local_epoch_budget(const RoundConfig& cfg) { return cfg.total_rounds * cfg.local_epochs; }

std::vector<ClientState> make_clients(const ShardSet& shards, const Model& global, std::uint64_t master_seed) {
    std::vector<ClientState> clients;
    for (std::size_t j = 0; j < shards.shards.size(); ++j)
        clients.push_back({static_cast<int>(j), shards.shards[j], global, derive_seed(master_seed, "client", j)});
    return clients;
}

namespace {

void axpy(GradientSet& acc, const GradientSet& x, double a) {
    for (std::size_t p = 0; p < acc.size(); ++p) {
        auto d = acc[p].data();
        const auto s = x[p].data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += a * s[i];
    }
}

struct StepObjective {
    const ImpressionBatch* impression = nullptr;
    double beta = 0.0;
    bool proximal = false;
    double mu = 0.0;
};

GradientSet step_gradient(const Model& current, const Model& global, const Tensor& batch,
                          std::span<const int> labels, const StepObjective& obj) {
    GradientSet g = backward(current, batch, labels).param_grads;
    if (obj.impression && obj.beta != 0.0) axpy(g, backward(current, obj.impression->pixels, obj.impression->pseudo_labels).param_grads, obj.beta);
    if (obj.proximal) {
        const auto& w = current.params();
        const auto& wg = global.params();
        for (std::size_t p = 0; p < g.size(); ++p) {
            auto d = g[p].data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += obj.mu * (w[p][i] - wg[p][i]);
        }
    }
    return g;
}

LocalUpdate train_local(const ClientState& client, const Model& global, const Dataset& data,
                        const StepObjective& obj, const RoundConfig& cfg, int round_idx, const EpochHook& hook) {
    if (client.shard.empty()) throw ConfigError("client " + std::to_string(client.id) + " has an empty shard");
    if (!same_shapes(client.model.params(), global.params()))
        throw ProtocolError("local model is not congruent with the global model", client.id);
    Model local = global;
    Rng rng(derive_seed(client.rng_seed, "local-shuffle", static_cast<std::uint64_t>(round_idx)));
    std::vector<std::size_t> order = client.shard;
    if (hook) hook(0, local);
    for (int epoch = 1; epoch <= cfg.local_epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
            Tensor x = gather_rows(data.images, idx);
            std::vector<int> y;
            y.reserve(idx.size());
            for (auto i : idx) y.push_back(data.labels[i]);
            GradientSet g = step_gradient(local, global, x, y, obj);
            local = local.with_params(sgd_step(local.params(), g, cfg.local_lr));
        }
        if (hook) hook(epoch, local);
    }
    return {client.id, local.params(), client.shard.size()};
}

} // namespace

GradientSet local_step_gradient(const Model& current, const Model& global, const Tensor& batch,
                                std::span<const int> labels, const ImpressionBatch* impression,
                                const LocalObjective& objective) {
    StepObjective obj{impression, objective.beta, objective.mu != 0.0, objective.mu};
    return step_gradient(current, global, batch, labels, obj);
}

LocalUpdate local_train(const ClientState& client, const Model& global, const Dataset& data,
                        const ImpressionBatch* impression, const RoundConfig& cfg, int round_idx,
                        const EpochHook& hook) {
    return train_local(client, global, data, StepObjective{impression, cfg.beta, false, 0.0}, cfg, round_idx, hook);
}

LocalUpdate fedprox_local_train(const ClientState& client, const Model& global, const Dataset& data,
                                const RoundConfig& cfg, int round_idx, const EpochHook& hook) {
    if (!(cfg.mu >= 0.0)) throw ValidationError("mu must be >= 0");
    return train_local(client, global, data, StepObjective{nullptr, 0.0, cfg.mu != 0.0, cfg.mu}, cfg, round_idx, hook);
}

TensorList aggregate(std::vector<LocalUpdate> updates, AggregationMode mode) {
    if (updates.empty()) throw InputError("aggregate needs at least one update");
    std::stable_sort(updates.begin(), updates.end(),
                     [](const LocalUpdate& a, const LocalUpdate& b) { return a.client < b.client; });
    const TensorList& ref = updates.front().params;
    for (std::size_t c = 0; c < updates.size(); ++c) {
        if (c > 0 && updates[c].client == updates[c - 1].client)
            throw ProtocolError("duplicate update", updates[c].client);
        if (!same_shapes(updates[c].params, ref))
            throw ProtocolError("update is not congruent with the other clients' weights", updates[c].client);
    }
    double denom = 0.0;
    std::vector<double> weight(updates.size(), 1.0);
    if (mode == AggregationMode::weighted) {
        for (std::size_t c = 0; c < updates.size(); ++c) {
            weight[c] = static_cast<double>(updates[c].n_samples);
            denom += weight[c];
        }
        if (denom <= 0.0) throw InputError("weighted aggregation needs a positive sample count");
    } else {
        denom = static_cast<double>(updates.size());
    }

    TensorList out = ref;
    for (std::size_t p = 0; p < out.size(); ++p) {
        auto o = out[p].data();
        for (std::size_t i = 0; i < o.size(); ++i) {
            double sum = 0.0, lo = ref[p][i], hi = ref[p][i];
            for (std::size_t c = 0; c < updates.size(); ++c) {
                const double v = updates[c].params[p][i];
                sum += mode == AggregationMode::weighted ? weight[c] * v : v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            // Rounding in the division may step one ulp outside the inputs' hull.
            o[i] = std::clamp(sum / denom, lo, hi);
        }
    }
    return out;
}

unsigned configured_threads() {
    if (const char* env = std::getenv("FEDIMPRES_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
        throw ConfigError(std::string("FEDIMPRES_THREADS must be a positive integer, got '") + env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

SeedPool round_seed_pool(const FederatedContext& ctx, const Model& global, int round_idx,
                         const ImpressionBatch* previous) {
    const std::size_t S = ctx.synthesis.batch_size;
    if (ctx.round.warm_start && previous) return SeedPool{previous->pixels, PoolSource::random};
    if (ctx.init_pool) {
        const SeedPool& pool = *ctx.init_pool;
        if (pool.size() < S)
            throw InputError("seed pool holds " + std::to_string(pool.size()) + " images, need " + std::to_string(S));
        std::vector<std::size_t> perm(pool.size());
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(derive_seed(ctx.master_seed, "pool-draw", static_cast<std::uint64_t>(round_idx)));
        rng.shuffle(std::span<std::size_t>(perm));
        perm.resize(S);
        return SeedPool{gather_rows(pool.images, perm), pool.source};
    }
    return random_seed_pool(global.sample_shape(), S,
                            derive_seed(ctx.master_seed, "synthesis-pool", static_cast<std::uint64_t>(round_idx)));
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    auto guarded = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) guarded(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < n;) guarded(i);
            });
        for (auto& t : pool) t.join();
    }
    // Barrier passed; report the lowest failing index first.
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace

RoundOutcome run_round(const Model& global, const std::vector<ClientState>& clients, int round_idx,
                       const FederatedContext& ctx, const ImpressionBatch* previous) {
    const RoundConfig& cfg = ctx.round;
    if (!ctx.train) throw ConfigError("federated context has no training data");
    if (round_idx < 0 || round_idx >= cfg.total_rounds)
        throw InputError("round " + std::to_string(round_idx) + " outside [0, " + std::to_string(cfg.total_rounds) + ")");
    if (clients.empty()) throw ConfigError("no clients");
    const Dataset& data = *ctx.train;

    RoundOutcome out;
    const bool impress = cfg.algorithm == Algorithm::fedimpres && round_idx >= cfg.warmup_rounds;
    if (impress) out.impression = synthesize(global, round_seed_pool(ctx, global, round_idx, previous), ctx.synthesis);
    const ImpressionBatch* imp = out.impression ? &*out.impression : nullptr;

    std::vector<std::vector<std::size_t>> eval_shards = ctx.eval_shards;
    if (eval_shards.empty())
        for (const auto& c : clients) eval_shards.push_back(c.shard);

    const std::size_t n = clients.size();
    std::vector<LocalUpdate> updates(n);
    // rows[e][i]: row i of the cross matrix after e local epochs.
    std::vector<CrossAccuracyMatrix> rows;
    if (cfg.track_cross) rows.assign(static_cast<std::size_t>(cfg.local_epochs) + 1, CrossAccuracyMatrix(n));

    const unsigned threads = ctx.threads ? ctx.threads : configured_threads();
    parallel_for(n, threads, [&](std::size_t i) {
        const ClientState& client = clients[i];
        EpochHook hook;
        if (cfg.track_cross)
            hook = [&, i](int epoch, const Model& local) {
                auto& r = rows[static_cast<std::size_t>(epoch)][i];
                r.clear();
                for (const auto& shard : eval_shards) r.push_back(evaluate(local, data, shard).accuracy);
            };
        try {
            updates[i] = cfg.algorithm == Algorithm::fedprox
                             ? fedprox_local_train(client, global, data, cfg, round_idx, hook)
                             : local_train(client, global, data, imp, cfg, round_idx, hook);
        } catch (const ConfigError&) {
            throw;
        } catch (const ProtocolError&) {
            throw;
        } catch (const Error& e) {
            throw ProtocolError(e.what(), client.id);
        }
    });

    out.global = global.with_params(aggregate(updates, cfg.aggregation));
    out.clients = clients;
    out.record.round = round_idx;
    out.record.algorithm = to_string(cfg.algorithm);
    for (std::size_t i = 0; i < n; ++i) {
        out.clients[i].model = global.with_params(updates[i].params);
        auto ev = evaluate(out.clients[i].model, data, out.clients[i].shard);
        out.record.clients.push_back({out.clients[i].id, ev.mean_loss, ev.accuracy});
    }
    if (ctx.test) {
        auto ev = evaluate(out.global, *ctx.test);
        out.record.global_acc = ev.accuracy;
        out.record.global_loss = ev.mean_loss;
    }
    out.record.cross_by_epoch = std::move(rows);
    if (imp) {
        auto terms = impression_objective(global, imp->pixels, imp->pseudo_labels, imp->dual, imp->rho);
        Tensor g = aggregated_head_grad(global, imp->pixels, imp->pseudo_labels);
        out.record.impression = ImpressionStats{imp->initial_ce, imp->final_ce, terms.penalty, std::sqrt(g.squared_norm())};
    }
    return out;
}

ExperimentResult run_experiment(const FederatedContext& ctx, Model initial, std::vector<ClientState> clients) {
    ctx.round.validate();
    ctx.synthesis.validate();
    if (!ctx.train) throw ConfigError("federated context has no training data");
    if (clients.empty()) throw ConfigError("no clients");
    for (const auto& c : clients)
        if (c.shard.empty()) throw ConfigError("client " + std::to_string(c.id) + " has an empty shard");

    ExperimentResult result;
    result.global = std::move(initial);
    result.clients = std::move(clients);
    std::optional<ImpressionBatch> previous;
    for (int r = 0; r < ctx.round.total_rounds; ++r) {
        auto outcome = run_round(result.global, result.clients, r, ctx, previous ? &*previous : nullptr);
        result.records.push_back(std::move(outcome.record));
        result.global = std::move(outcome.global);
        result.clients = std::move(outcome.clients);
        if (outcome.impression) previous = std::move(outcome.impression);
    }
    return result;
}

} // namespace fedimpres
