#include "fedimpres/impression.hpp"

#include "fedimpres/errors.hpp"

#include <algorithm>
#include <cmath>

namespace fedimpres {

void SynthesisConfig::validate() const {
    if (admm_epochs < 0) throw ValidationError("admm_epochs must be >= 0");
    if (pixel_steps_per_epoch < 1) throw ValidationError("pixel_steps must be >= 1");
    if (!(pixel_lr > 0.0)) throw ValidationError("synth_lr must be positive");
    if (!(rho >= 0.0)) throw ValidationError("rho must be non-negative");
    if (batch_size < 1) throw ValidationError("synth_batch must be >= 1");
    if (!(divergence_factor > 1.0)) throw ValidationError("divergence factor must exceed 1");
}

PseudoLabeled pseudo_label(const Model& server, const SeedPool& pool, std::size_t count) {
    if (count == 0) throw InputError("pseudo_label: batch size must be positive");
    if (pool.size() < count)
        throw InputError("seed pool exhausted: holds " + std::to_string(pool.size()) + " images, need " +
                         std::to_string(count));
    PseudoLabeled out;
    out.pixels = pool.images.slice_rows(0, count);
    out.labels = predict(server, out.pixels);
    return out;
}

void balance_round_robin(std::vector<int>& labels, std::size_t n_classes) {
    std::vector<bool> seen(n_classes, false);
    for (int y : labels) seen.at(static_cast<std::size_t>(y)) = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool s) { return s; })) return;
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % n_classes);
}

ObjectiveEval evaluate_impression_objective(const Model& server, const Tensor& pixels, std::span<const int> labels,
                                            const Tensor& dual, double rho, ObjectiveKind kind) {
    const std::size_t K = server.n_classes(), F = server.feature_dim();
    if (kind == ObjectiveKind::augmented_lagrangian && dual.shape() != Shape{K, F + 1})
        throw ShapeError("dual " + shape_str(dual.shape()) + " does not match head gradient [" + std::to_string(K) +
                         "x" + std::to_string(F + 1) + "]");
    if (!(rho >= 0.0)) throw InputError("rho must be non-negative");

    ad::Tape tape;
    ModelGraph g = record_forward(tape, server, pixels, false, true);
    ad::Var ce = ad::cross_entropy(g.logits, labels, ad::Reduction::sum);
    ad::Var per_sample = ad::per_sample_head_grads(g.features, g.logits, labels);
    ad::Var summed = ad::sum_rows(per_sample);

    ObjectiveEval out;
    out.terms.ce = ce.value().item();
    ad::Var total = ce;
    if (kind == ObjectiveKind::augmented_lagrangian) {
        ad::Var trace = ad::dot_const(summed, dual);
        ad::Var penalty = ad::scale(ad::sum_squares(per_sample), 0.5 * rho);
        total = ad::add(ad::add(ce, trace), penalty);
        out.terms.trace_term = trace.value().item();
        out.terms.penalty = penalty.value().item();
    }
    out.terms.total = total.value().item();
    if (!std::isfinite(out.terms.total)) throw NumericError("impression objective is not finite");
    tape.backward(total);
    out.pixel_grad = g.input.grad();
    if (!out.pixel_grad.all_finite()) throw NumericError("impression objective has non-finite pixel gradients");
    out.head_grad_sum = summed.value();
    return out;
}

ObjectiveTerms impression_objective(const Model& server, const Tensor& pixels, std::span<const int> labels,
                                    const Tensor& dual, double rho) {
    return evaluate_impression_objective(server, pixels, labels, dual, rho).terms;
}

Tensor aggregated_head_grad(const Model& server, const Tensor& pixels, std::span<const int> labels) {
    ad::Tape tape;
    ModelGraph g = record_forward(tape, server, pixels, false, false);
    return ad::sum_rows(ad::per_sample_head_grads(g.features, g.logits, labels)).value();
}

Tensor dual_step(const Tensor& dual, const Tensor& head_grad_sum, double rho) {
    if (dual.shape() != head_grad_sum.shape())
        throw ShapeError("dual " + shape_str(dual.shape()) + " and head gradient " + shape_str(head_grad_sum.shape()) +
                         " differ");
    Tensor out = dual;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += rho * head_grad_sum[i];
    return out;
}

namespace {

double mean_ce(const Model& server, const Tensor& pixels, std::span<const int> labels) {
    return ce_loss(forward(server, pixels), labels);
}

ImpressionBatch run_synthesis(const Model& server, const SeedPool& pool, const SynthesisConfig& cfg,
                              ObjectiveKind kind) {
    cfg.validate();
    auto init = pseudo_label(server, pool, cfg.batch_size);
    if (cfg.balance_labels) balance_round_robin(init.labels, server.n_classes());

    ImpressionBatch batch;
    batch.pixels = std::move(init.pixels);
    batch.pseudo_labels = std::move(init.labels);
    batch.rho = kind == ObjectiveKind::augmented_lagrangian ? cfg.rho : 0.0;
    batch.dual = Tensor({server.n_classes(), server.feature_dim() + 1}, 0.0);
    batch.dual_trajectory.push_back(batch.dual);
    batch.initial_ce = mean_ce(server, batch.pixels, batch.pseudo_labels);
    // Floor keeps an already-confident start (CE ~ 0) from tripping the guard on noise.
    const double limit = cfg.divergence_factor * std::max(batch.initial_ce, 1e-3);
    const double inv_s = 1.0 / static_cast<double>(batch.size());

    for (int epoch = 0; epoch < cfg.admm_epochs; ++epoch) {
        for (int step = 0; step < cfg.pixel_steps_per_epoch; ++step) {
            auto eval = evaluate_impression_objective(server, batch.pixels, batch.pseudo_labels, batch.dual, batch.rho,
                                                      kind);
            const double ce_mean = eval.terms.ce * inv_s;
            if (ce_mean > limit)
                throw DivergenceError("impression synthesis diverged at epoch " + std::to_string(epoch) + " step " +
                                      std::to_string(step) + ": mean CE " + std::to_string(ce_mean) +
                                      " exceeds " + std::to_string(cfg.divergence_factor) + "x initial " +
                                      std::to_string(batch.initial_ce));
            batch.history.push_back({epoch, step, eval.terms.ce, eval.terms.trace_term, eval.terms.penalty,
                                     std::sqrt(batch.dual.squared_norm())});
            auto v = batch.pixels.data();
            auto gv = eval.pixel_grad.data();
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double next = v[i] - cfg.pixel_lr * gv[i];
                // Projection onto [0, 1]; "+ 0.0" normalises a -0.0 result.
                v[i] = (next < 0.0 ? 0.0 : (next > 1.0 ? 1.0 : next)) + 0.0;
            }
        }
        Tensor g = aggregated_head_grad(server, batch.pixels, batch.pseudo_labels);
        if (kind == ObjectiveKind::augmented_lagrangian) batch.dual = dual_step(batch.dual, g, batch.rho);
        batch.epoch_pixels.push_back(batch.pixels);
        batch.epoch_head_grads.push_back(std::move(g));
        batch.dual_trajectory.push_back(batch.dual);
    }
    batch.final_ce = mean_ce(server, batch.pixels, batch.pseudo_labels);
    if (batch.final_ce > limit)
        throw DivergenceError("impression synthesis diverged: final mean CE " + std::to_string(batch.final_ce));
    return batch;
}

} // namespace

ImpressionBatch admm_synthesize(const Model& server, const SeedPool& pool, const SynthesisConfig& cfg) {
    return run_synthesis(server, pool, cfg, ObjectiveKind::augmented_lagrangian);
}

ImpressionBatch ce_only_synthesize(const Model& server, const SeedPool& pool, const SynthesisConfig& cfg) {
    return run_synthesis(server, pool, cfg, ObjectiveKind::ce_only);
}

ImpressionBatch synthesize(const Model& server, const SeedPool& pool, const SynthesisConfig& cfg) {
    return cfg.ablation_ce_only ? ce_only_synthesize(server, pool, cfg) : admm_synthesize(server, pool, cfg);
}

Dataset impression_dataset(const ImpressionBatch& batch, std::size_t n_classes) {
    Dataset d;
    d.images = batch.pixels;
    d.labels = batch.pseudo_labels;
    d.n_classes = n_classes;
    return d;
}

} // namespace fedimpres
