#pragma once

#include "fedimpres/autograd.hpp"
#include "fedimpres/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace fedimpres {

struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};
struct ReluLayer {
    friend bool operator==(const ReluLayer&, const ReluLayer&) = default;
};
struct Conv2dLayer {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 0;
    friend bool operator==(const Conv2dLayer&, const Conv2dLayer&) = default;
};
struct FlattenLayer {
    friend bool operator==(const FlattenLayer&, const FlattenLayer&) = default;
};

using LayerSpec = std::variant<DenseLayer, ReluLayer, Conv2dLayer, FlattenLayer>;

std::string describe(const LayerSpec& layer);

using GradientSet = TensorList;

// Feature extractor f(.; theta) followed by a linear classifier g(.; phi).
// phi is always the final dense layer: params()[n - 2] is its [K x F] weight
// and params()[n - 1] its [K] bias; everything before is theta.
class Model {
public:
    Model() = default;
    // Parameters start at zero. `sample_shape` is the per-sample input shape,
    // e.g. {C, H, W} or {features}.
    Model(std::vector<LayerSpec> layers, Shape sample_shape);

    // He-uniform weights, zero biases.
    static Model initialized(std::vector<LayerSpec> layers, Shape sample_shape, std::uint64_t seed);

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    const Shape& sample_shape() const noexcept { return sample_shape_; }
    const TensorList& params() const noexcept { return params_; }
    std::vector<std::string> param_names() const;

    // Copy with new parameter values; shapes must match exactly.
    Model with_params(TensorList params) const;

    std::size_t n_classes() const;
    std::size_t feature_dim() const;
    std::size_t n_extractor_params() const noexcept { return params_.size() - 2; }
    const Tensor& classifier_weight() const { return params_[params_.size() - 2]; }
    const Tensor& classifier_bias() const { return params_.back(); }

    friend bool operator==(const Model&, const Model&) = default;

private:
    std::vector<LayerSpec> layers_;
    Shape sample_shape_;
    TensorList params_;
};

// Hidden dense widths with ReLU between them, then a dense head to n_classes.
std::vector<LayerSpec> mlp_layers(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t n_classes);

// Variables created while recording a model on a tape.
struct ModelGraph {
    ad::Var input;
    std::vector<ad::Var> params;
    ad::Var features; // [B x F], input of the classifier head
    ad::Var logits;   // [B x K]
};

// Records the forward pass. Throws ShapeError naming the first layer whose
// input does not fit and NumericError on non-finite activations.
ModelGraph record_forward(ad::Tape& tape, const Model& model, const Tensor& batch, bool param_grads,
                          bool input_grads);

Tensor forward(const Model& model, const Tensor& batch);

struct FeatureOutput {
    Tensor features;
    Tensor logits;
};
FeatureOutput forward_features(const Model& model, const Tensor& batch);

Tensor softmax(const Tensor& logits);
// Mean over the batch of -log softmax(logits)[label].
double ce_loss(const Tensor& logits, std::span<const int> labels);
// Row-wise argmax, ties resolved toward the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> predict(const Model& model, const Tensor& batch);

struct BackwardResult {
    double loss = 0.0;
    GradientSet param_grads;
    Tensor input_grads;
};

// Gradients of the mean cross-entropy w.r.t. every parameter and every input element.
BackwardResult backward(const Model& model, const Tensor& batch, std::span<const int> labels);

// Closed-form gradient of the mean cross-entropy w.r.t. the classifier head,
// mean_b (softmax(z_b) - onehot(y_b)) (outer) [h_b, 1], as a [K x (F + 1)]
// matrix whose last column is the bias gradient.
Tensor classifier_grad(const Tensor& features, const Tensor& logits, std::span<const int> labels);

// Packs the head part of a full GradientSet into the classifier_grad layout.
Tensor pack_head_grad(const GradientSet& grads);

// p' = p - lr * g, element-wise.
TensorList sgd_step(const TensorList& params, const GradientSet& grads, double lr);

// Flat little-endian dump: u32 tensor count, then per tensor u32 rank,
// rank x u32 dims, f64 data.
void save_weights(const TensorList& params, const std::string& path);
TensorList load_weights(const std::string& path);

} // namespace fedimpres
