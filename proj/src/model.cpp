#include "fedimpres/model.hpp"

#include "fedimpres/errors.hpp"
#include "fedimpres/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fedimpres {

static_assert(std::endian::native == std::endian::little, "weight and dataset files assume a little-endian host");

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string layer_label(std::size_t i, const LayerSpec& l) { return "layer " + std::to_string(i) + " (" + describe(l) + ")"; }

// Per-sample output shape of `layer` given per-sample input shape `in`.
Shape propagate(std::size_t idx, const LayerSpec& layer, const Shape& in) {
    return std::visit(
        overloaded{
            [&](const DenseLayer& d) -> Shape {
                if (shape_numel(in) != d.in)
                    throw ShapeError(layer_label(idx, layer) + ": expected " + std::to_string(d.in) +
                                     " input features, got " + shape_str(in));
                return {d.out};
            },
            [&](const ReluLayer&) -> Shape { return in; },
            [&](const FlattenLayer&) -> Shape { return {shape_numel(in)}; },
            [&](const Conv2dLayer& c) -> Shape {
                if (in.size() != 3 || in[0] != c.in_ch)
                    throw ShapeError(layer_label(idx, layer) + ": expected [" + std::to_string(c.in_ch) +
                                     " x H x W] input, got " + shape_str(in));
                if (c.stride == 0 || c.kernel == 0 || in[1] + 2 * c.pad < c.kernel || in[2] + 2 * c.pad < c.kernel)
                    throw ShapeError(layer_label(idx, layer) + ": kernel does not fit input " + shape_str(in));
                return {c.out_ch, (in[1] + 2 * c.pad - c.kernel) / c.stride + 1,
                        (in[2] + 2 * c.pad - c.kernel) / c.stride + 1};
            },
        },
        layer);
}

} // namespace

std::string describe(const LayerSpec& layer) {
    return std::visit(overloaded{
                          [](const DenseLayer& d) { return "dense " + std::to_string(d.in) + "->" + std::to_string(d.out); },
                          [](const ReluLayer&) { return std::string("relu"); },
                          [](const FlattenLayer&) { return std::string("flatten"); },
                          [](const Conv2dLayer& c) {
                              return "conv2d " + std::to_string(c.in_ch) + "->" + std::to_string(c.out_ch) + " k" +
                                     std::to_string(c.kernel) + " s" + std::to_string(c.stride) + " p" +
                                     std::to_string(c.pad);
                          },
                      },
                      layer);
}

Model::Model(std::vector<LayerSpec> layers, Shape sample_shape)
    : layers_(std::move(layers)), sample_shape_(std::move(sample_shape)) {
    if (layers_.empty() || !std::holds_alternative<DenseLayer>(layers_.back()))
        throw ShapeError("model must end with a dense classifier layer");
    if (sample_shape_.empty() || shape_numel(sample_shape_) == 0)
        throw ShapeError("model input shape must be non-empty, got " + shape_str(sample_shape_));
    Shape s = sample_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        s = propagate(i, layers_[i], s);
        if (const auto* d = std::get_if<DenseLayer>(&layers_[i])) {
            if (d->in == 0 || d->out == 0) throw ShapeError(layer_label(i, layers_[i]) + ": zero width");
            params_.emplace_back(Shape{d->out, d->in}, 0.0);
            params_.emplace_back(Shape{d->out}, 0.0);
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layers_[i])) {
            if (c->out_ch == 0) throw ShapeError(layer_label(i, layers_[i]) + ": zero channels");
            params_.emplace_back(Shape{c->out_ch, c->in_ch, c->kernel, c->kernel}, 0.0);
            params_.emplace_back(Shape{c->out_ch}, 0.0);
        }
    }
}

Model Model::initialized(std::vector<LayerSpec> layers, Shape sample_shape, std::uint64_t seed) {
    Model m(std::move(layers), std::move(sample_shape));
    Rng rng(seed);
    for (std::size_t p = 0; p < m.params_.size(); p += 2) {
        Tensor& w = m.params_[p];
        const double fan_in = static_cast<double>(w.size() / w.dim(0));
        const double bound = std::sqrt(6.0 / fan_in);
        for (double& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
    }
    return m;
}

std::vector<std::string> Model::param_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (std::holds_alternative<DenseLayer>(layers_[i]) || std::holds_alternative<Conv2dLayer>(layers_[i])) {
            names.push_back("layer" + std::to_string(i) + ".weight");
            names.push_back("layer" + std::to_string(i) + ".bias");
        }
    }
    return names;
}

Model Model::with_params(TensorList params) const {
    if (!same_shapes(params, params_)) throw ShapeError("parameter list is not congruent with the model");
    Model m = *this;
    m.params_ = std::move(params);
    return m;
}

std::size_t Model::n_classes() const { return std::get<DenseLayer>(layers_.back()).out; }
std::size_t Model::feature_dim() const { return std::get<DenseLayer>(layers_.back()).in; }

std::vector<LayerSpec> mlp_layers(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t n_classes) {
    std::vector<LayerSpec> layers;
    std::size_t in = input_dim;
    for (std::size_t h : hidden) {
        layers.push_back(DenseLayer{in, h});
        layers.push_back(ReluLayer{});
        in = h;
    }
    layers.push_back(DenseLayer{in, n_classes});
    return layers;
}

ModelGraph record_forward(ad::Tape& tape, const Model& model, const Tensor& batch, bool param_grads, bool input_grads) {
    const auto& layers = model.layers();
    if (batch.rank() < 2 || batch.size() / batch.dim(0) != shape_numel(model.sample_shape()))
        throw ShapeError(layer_label(0, layers.front()) + ": batch " + shape_str(batch.shape()) +
                         " does not match model input " + shape_str(model.sample_shape()));
    ModelGraph g;
    g.input = tape.leaf(batch, input_grads);
    for (const Tensor& p : model.params()) g.params.push_back(tape.leaf(p, param_grads));

    const std::size_t B = batch.dim(0);
    Shape full{B};
    full.insert(full.end(), model.sample_shape().begin(), model.sample_shape().end());
    ad::Var x = batch.shape() == full ? g.input : ad::reshape(g.input, full);

    std::size_t p = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const bool last = i + 1 == layers.size();
        std::visit(overloaded{
                       [&](const DenseLayer&) {
                           if (x.shape().size() != 2) x = ad::reshape(x, {B, x.value().size() / B});
                           if (last) g.features = x;
                           x = ad::linear(x, g.params[p], g.params[p + 1]);
                           p += 2;
                       },
                       [&](const ReluLayer&) { x = ad::relu(x); },
                       [&](const FlattenLayer&) { x = ad::reshape(x, {B, x.value().size() / B}); },
                       [&](const Conv2dLayer& c) {
                           x = ad::conv2d(x, g.params[p], g.params[p + 1], c.stride, c.pad);
                           p += 2;
                       },
                   },
                   layers[i]);
        if (!x.value().all_finite())
            throw NumericError(layer_label(i, layers[i]) + " produced non-finite values", static_cast<int>(i));
    }
    g.logits = x;
    return g;
}

Tensor forward(const Model& model, const Tensor& batch) {
    ad::Tape tape;
    return record_forward(tape, model, batch, false, false).logits.value();
}

FeatureOutput forward_features(const Model& model, const Tensor& batch) {
    ad::Tape tape;
    auto g = record_forward(tape, model, batch, false, false);
    return {g.features.value(), g.logits.value()};
}

Tensor softmax(const Tensor& logits) {
    ad::Tape tape;
    return ad::softmax(tape.constant(logits)).value();
}

double ce_loss(const Tensor& logits, std::span<const int> labels) {
    if (labels.empty()) throw InputError("ce_loss needs at least one sample");
    ad::Tape tape;
    return ad::cross_entropy(tape.constant(logits), labels, ad::Reduction::mean).value().item();
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [B x K], got " + shape_str(logits.shape()));
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(B, 0);
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (logits[b * K + k] > logits[b * K + best]) best = k;
        out[b] = static_cast<int>(best);
    }
    return out;
}

std::vector<int> predict(const Model& model, const Tensor& batch) { return argmax_rows(forward(model, batch)); }

BackwardResult backward(const Model& model, const Tensor& batch, std::span<const int> labels) {
    if (labels.size() != batch.dim(0))
        throw ShapeError("backward: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch.dim(0)));
    ad::Tape tape;
    auto g = record_forward(tape, model, batch, true, true);
    ad::Var loss = ad::cross_entropy(g.logits, labels, ad::Reduction::mean);
    tape.backward(loss);

    BackwardResult r;
    r.loss = loss.value().item();
    const auto& layers = model.layers();
    std::size_t layer = 0;
    for (std::size_t p = 0; p < g.params.size(); ++p) {
        // Map parameter index back to its layer for diagnostics.
        while (!std::holds_alternative<DenseLayer>(layers[layer]) && !std::holds_alternative<Conv2dLayer>(layers[layer]))
            ++layer;
        Tensor grad = g.params[p].grad();
        if (!grad.all_finite())
            throw NumericError(layer_label(layer, layers[layer]) + " has non-finite gradients", static_cast<int>(layer));
        r.param_grads.push_back(std::move(grad));
        if (p % 2 == 1) ++layer;
    }
    r.input_grads = g.input.grad();
    if (!r.input_grads.all_finite()) throw NumericError("non-finite input gradients", 0);
    return r;
}

Tensor classifier_grad(const Tensor& features, const Tensor& logits, std::span<const int> labels) {
    ad::Tape tape;
    return ad::head_grad(tape.constant(features), tape.constant(logits), labels).value();
}

Tensor pack_head_grad(const GradientSet& grads) {
    if (grads.size() < 2) throw ShapeError("gradient set has no classifier head");
    const Tensor& w = grads[grads.size() - 2];
    const Tensor& b = grads.back();
    if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(0)) throw ShapeError("malformed classifier head gradient");
    const std::size_t K = w.dim(0), F = w.dim(1);
    Tensor out({K, F + 1});
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t f = 0; f < F; ++f) out[k * (F + 1) + f] = w[k * F + f];
        out[k * (F + 1) + F] = b[k];
    }
    return out;
}

TensorList sgd_step(const TensorList& params, const GradientSet& grads, double lr) {
    if (!(lr > 0.0)) throw InputError("sgd_step: learning rate must be positive");
    if (!same_shapes(params, grads)) throw ShapeError("sgd_step: gradients are not congruent with parameters");
    TensorList out = params;
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto d = out[i].data();
        const auto g = grads[i].data();
        for (std::size_t j = 0; j < d.size(); ++j) d[j] -= lr * g[j];
    }
    return out;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

} // namespace

void save_weights(const TensorList& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const Tensor& t : params) {
        write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw Error("write failed: " + path);
}

TensorList load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto read_u32 = [&]() {
        if (pos + 4 > bytes.size()) throw FormatError("truncated weight file " + path, pos);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    };
    TensorList out;
    const std::uint32_t count = read_u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t rank_at = pos;
        const std::uint32_t rank = read_u32();
        if (rank == 0 || rank > 8) throw FormatError("bad tensor rank " + std::to_string(rank), rank_at);
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const std::size_t at = pos;
            const std::uint32_t d = read_u32();
            if (d == 0) throw FormatError("zero tensor dimension", at);
            shape.push_back(d);
        }
        const std::size_t n = shape_numel(shape);
        if (pos + n * sizeof(double) > bytes.size()) throw FormatError("truncated tensor data in " + path, pos);
        std::vector<double> data(n);
        std::memcpy(data.data(), bytes.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        out.emplace_back(std::move(shape), std::move(data));
    }
    if (pos != bytes.size()) throw FormatError("trailing bytes in weight file " + path, pos);
    return out;
}

} // namespace fedimpres
