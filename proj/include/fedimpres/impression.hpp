#pragma once

#include "fedimpres/dataset.hpp"
#include "fedimpres/model.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace fedimpres {

enum class InitMode { random, holdout, file };

struct SynthesisConfig {
    int admm_epochs = 5;
    int pixel_steps_per_epoch = 10;
    double pixel_lr = 0.1;
    double rho = 0.2;
    std::size_t batch_size = 16;
    InitMode init_mode = InitMode::random;
    bool ablation_ce_only = false;
    // Reassign pseudo-labels round-robin when a class is missing from them.
    bool balance_labels = false;
    // Abort when the mean CE exceeds this multiple of its initial value.
    double divergence_factor = 10.0;

    void validate() const;
};

struct SynthesisStep {
    int epoch = 0;
    int step = 0;
    double ce = 0.0;
    double trace_term = 0.0;
    double penalty = 0.0;
    double dual_norm = 0.0;
};

// Synthesised impression V with its frozen pseudo-labels and dual state.
struct ImpressionBatch {
    Tensor pixels; // [S x C x H x W], always in [0, 1]
    std::vector<int> pseudo_labels;
    Tensor dual;   // [K x (F + 1)], same layout as classifier_grad
    double rho = 0.0;
    std::vector<SynthesisStep> history;
    double initial_ce = 0.0; // mean CE at V0
    double final_ce = 0.0;   // mean CE at the returned V

    // One entry per ADMM epoch: V after the pixel phase, the aggregated head
    // gradient at that V, and the dual after the ascent step.
    std::vector<Tensor> epoch_pixels;
    std::vector<Tensor> epoch_head_grads;
    std::vector<Tensor> dual_trajectory; // dual_trajectory[0] is the initial (zero) dual

    std::size_t size() const { return pseudo_labels.size(); }
};

struct PseudoLabeled {
    Tensor pixels;
    std::vector<int> labels;
};

// First `count` pool images labeled by the server's argmax (ties -> lowest class).
PseudoLabeled pseudo_label(const Model& server, const SeedPool& pool, std::size_t count);

// Cycles labels 0, 1, ..., K-1, 0, ... over the batch when any class is absent.
void balance_round_robin(std::vector<int>& labels, std::size_t n_classes);

struct ObjectiveTerms {
    double total = 0.0;
    double ce = 0.0;         // sum_i CE(v_i, y_i)
    double trace_term = 0.0; // sum_i tr(dual^T grad_phi CE_i)
    double penalty = 0.0;    // rho / 2 * sum_i ||grad_phi CE_i||^2
};

enum class ObjectiveKind { augmented_lagrangian, ce_only };

struct ObjectiveEval {
    ObjectiveTerms terms;
    Tensor pixel_grad;    // d total / d V
    Tensor head_grad_sum; // sum_i grad_phi CE_i, [K x (F + 1)]
};

// Augmented Lagrangian of the head-gradient equality constraint:
//   sum_i [ CE_i + tr(dual^T G_i) + rho/2 ||G_i||^2 ],  G_i = grad_phi CE(v_i, y_i)
// with G_i in closed form, differentiated w.r.t. the pixels.
ObjectiveEval evaluate_impression_objective(const Model& server, const Tensor& pixels, std::span<const int> labels,
                                            const Tensor& dual, double rho,
                                            ObjectiveKind kind = ObjectiveKind::augmented_lagrangian);

ObjectiveTerms impression_objective(const Model& server, const Tensor& pixels, std::span<const int> labels,
                                    const Tensor& dual, double rho);

// sum_i grad_phi CE(v_i, y_i)
Tensor aggregated_head_grad(const Model& server, const Tensor& pixels, std::span<const int> labels);

// Dual ascent: dual + rho * head_grad_sum.
Tensor dual_step(const Tensor& dual, const Tensor& head_grad_sum, double rho);

// Projected pixel SGD on the augmented Lagrangian alternating with dual
// ascent dual += rho * sum_i G_i, for cfg.admm_epochs epochs. The server is
// not modified.
ImpressionBatch admm_synthesize(const Model& server, const SeedPool& pool, const SynthesisConfig& cfg);

// Same loop on the plain CE objective; no dual updates.
ImpressionBatch ce_only_synthesize(const Model& server, const SeedPool& pool, const SynthesisConfig& cfg);

// Dispatches on cfg.ablation_ce_only.
ImpressionBatch synthesize(const Model& server, const SeedPool& pool, const SynthesisConfig& cfg);

// Training view of an impression batch.
Dataset impression_dataset(const ImpressionBatch& batch, std::size_t n_classes);

} // namespace fedimpres
