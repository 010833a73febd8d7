#include "fedimpres/autograd.hpp"

#include "fedimpres/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedimpres::ad {

const Tensor& Var::value() const { return tape_->value(*this); }
const Tensor& Var::grad() const { return tape_->grad(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) {
        if (p.tape_ != this) throw ShapeError("autograd: operands recorded on different tapes");
        needs = needs || nodes_[p.id_].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(backward) : nullptr});
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id_);
    if (!n.grad.empty()) return n.grad;
    zero_ = Tensor(n.value.shape(), 0.0);
    return zero_;
}

std::span<double> Tape::grad_buffer(Var v) {
    Node& n = nodes_.at(v.id_);
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad.data();
}

void Tape::backward(Var root) {
    if (root.tape_ != this) throw ShapeError("autograd: backward on a foreign variable");
    if (nodes_.at(root.id_).value.size() != 1) throw ShapeError("autograd: backward root must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor{};
    if (!nodes_[root.id_].requires_grad) return;
    grad_buffer(root)[0] = 1.0;
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) n.backward(*this, n.value, n.grad);
    }
}

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

} // namespace

Var linear(Var x, Var weight, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const Tensor& bv = bias.value();
    require(wv.rank() == 2 && bv.rank() == 1 && bv.dim(0) == wv.dim(0), "linear: bad parameter shapes");
    require(xv.rank() >= 1, "linear: input needs a batch dimension");
    const std::size_t batch = xv.dim(0);
    const std::size_t in = xv.size() / batch;
    const std::size_t out = wv.dim(0);
    require(in == wv.dim(1), "linear: expected " + std::to_string(wv.dim(1)) + " input features, got " +
                                 std::to_string(in));

    Tensor y({batch, out});
    auto xd = xv.data();
    auto wd = wv.data();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xr = xd.data() + b * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wr = wd.data() + o * in;
            double acc = bv[o];
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            y[b * out + o] = acc;
        }
    }
    Tape& tape = *x.tape();
    return tape.record(std::move(y), {x, weight, bias}, [x, weight, bias, batch, in, out](Tape& t, const Tensor&, const Tensor& g) {
        auto gd = g.data();
        auto xd = t.value(x).data();
        auto wd = t.value(weight).data();
        if (auto dx = t.grad_buffer(x); !dx.empty()) {
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < out; ++o) {
                    double go = gd[b * out + o];
                    const double* wr = wd.data() + o * in;
                    double* dr = dx.data() + b * in;
                    for (std::size_t i = 0; i < in; ++i) dr[i] += go * wr[i];
                }
        }
        if (auto dw = t.grad_buffer(weight); !dw.empty()) {
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < out; ++o) {
                    double go = gd[b * out + o];
                    const double* xr = xd.data() + b * in;
                    double* dr = dw.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) dr[i] += go * xr[i];
                }
        }
        if (auto db = t.grad_buffer(bias); !db.empty()) {
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < out; ++o) db[o] += gd[b * out + o];
        }
    });
}

Var relu(Var x) {
    Tensor y = x.value();
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    return x.tape()->record(std::move(y), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        auto dx = t.grad_buffer(x);
        auto xd = t.value(x).data();
        // Subgradient at 0 is 0.
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (xd[i] > 0.0) dx[i] += g[i];
    });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require(xv.rank() == 4, "conv2d: input must be [B x C x H x W], got " + shape_str(xv.shape()));
    require(wv.rank() == 4 && wv.dim(2) == wv.dim(3), "conv2d: weight must be [O x C x k x k]");
    require(bias.value().rank() == 1 && bias.value().dim(0) == wv.dim(0), "conv2d: bias must be [O]");
    require(stride >= 1, "conv2d: stride must be >= 1");
    const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::size_t O = wv.dim(0), k = wv.dim(2);
    require(wv.dim(1) == C, "conv2d: expected " + std::to_string(wv.dim(1)) + " input channels, got " +
                                std::to_string(C));
    require(H + 2 * pad >= k && W + 2 * pad >= k, "conv2d: kernel larger than padded input");
    const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - k) / stride + 1;

    Tensor y({B, O, Ho, Wo});
    const auto& bv = bias.value();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double acc = bv[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                acc += xv[((b * C + c) * H + iy) * W + ix] * wv[((o * C + c) * k + ky) * k + kx];
                            }
                        }
                    y[((b * O + o) * Ho + oy) * Wo + ox] = acc;
                }

    return x.tape()->record(std::move(y), {x, weight, bias},
                            [=](Tape& t, const Tensor&, const Tensor& g) {
                                const Tensor& xv = t.value(x);
                                const Tensor& wv = t.value(weight);
                                auto dx = t.grad_buffer(x);
                                auto dw = t.grad_buffer(weight);
                                auto db = t.grad_buffer(bias);
                                for (std::size_t b = 0; b < B; ++b)
                                    for (std::size_t o = 0; o < O; ++o)
                                        for (std::size_t oy = 0; oy < Ho; ++oy)
                                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                                double go = g[((b * O + o) * Ho + oy) * Wo + ox];
                                                if (!db.empty()) db[o] += go;
                                                for (std::size_t c = 0; c < C; ++c)
                                                    for (std::size_t ky = 0; ky < k; ++ky) {
                                                        long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                                        for (std::size_t kx = 0; kx < k; ++kx) {
                                                            long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                                            std::size_t xi = ((b * C + c) * H + iy) * W + ix;
                                                            std::size_t wi = ((o * C + c) * k + ky) * k + kx;
                                                            if (!dx.empty()) dx[xi] += go * wv[wi];
                                                            if (!dw.empty()) dw[wi] += go * xv[xi];
                                                        }
                                                    }
                                            }
                            });
}

Var reshape(Var x, Shape shape) {
    Tensor y = x.value().reshaped(std::move(shape));
    return x.tape()->record(std::move(y), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        auto dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    });
}

Var softmax(Var logits) {
    const Tensor& z = logits.value();
    require(z.rank() == 2, "softmax: expected [B x K], got " + shape_str(z.shape()));
    const std::size_t B = z.dim(0), K = z.dim(1);
    Tensor p(z.shape());
    for (std::size_t b = 0; b < B; ++b) {
        double m = z[b * K];
        for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[b * K + k]);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            p[b * K + k] = std::exp(z[b * K + k] - m);
            s += p[b * K + k];
        }
        for (std::size_t k = 0; k < K; ++k) p[b * K + k] /= s;
    }
    return logits.tape()->record(std::move(p), {logits}, [logits, B, K](Tape& t, const Tensor& p, const Tensor& g) {
        auto dz = t.grad_buffer(logits);
        for (std::size_t b = 0; b < B; ++b) {
            double pg = 0.0;
            for (std::size_t k = 0; k < K; ++k) pg += p[b * K + k] * g[b * K + k];
            for (std::size_t k = 0; k < K; ++k) dz[b * K + k] += p[b * K + k] * (g[b * K + k] - pg);
        }
    });
}

Var cross_entropy(Var logits, std::span<const int> labels, Reduction reduction) {
    const Tensor& z = logits.value();
    require(z.rank() == 2, "cross_entropy: expected [B x K] logits, got " + shape_str(z.shape()));
    const std::size_t B = z.dim(0), K = z.dim(1);
    if (labels.size() != B)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(B));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= K)
            throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");

    // Probabilities are kept for the backward pass.
    Tensor probs(z.shape());
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double m = z[b * K];
        for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[b * K + k]);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(z[b * K + k] - m);
        const double lse = m + std::log(s);
        for (std::size_t k = 0; k < K; ++k) probs[b * K + k] = std::exp(z[b * K + k] - lse);
        total += lse - z[b * K + static_cast<std::size_t>(labels[b])];
    }
    const double factor = reduction == Reduction::mean ? 1.0 / static_cast<double>(B) : 1.0;
    std::vector<int> ys(labels.begin(), labels.end());
    return logits.tape()->record(
        Tensor::scalar(total * factor), {logits},
        [logits, probs = std::move(probs), ys = std::move(ys), factor, K](Tape& t, const Tensor&, const Tensor& g) {
            auto dz = t.grad_buffer(logits);
            const double go = g[0] * factor;
            for (std::size_t b = 0; b < ys.size(); ++b)
                for (std::size_t k = 0; k < K; ++k) {
                    double e = static_cast<std::size_t>(ys[b]) == k ? 1.0 : 0.0;
                    dz[b * K + k] += go * (probs[b * K + k] - e);
                }
        });
}

Var add(Var a, Var b) {
    require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        for (Var v : {a, b}) {
            auto d = t.grad_buffer(v);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
    });
}

Var scale(Var a, double factor) {
    Tensor y = a.value();
    for (double& v : y.data()) v *= factor;
    return a.tape()->record(std::move(y), {a}, [a, factor](Tape& t, const Tensor&, const Tensor& g) {
        auto d = t.grad_buffer(a);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
    });
}

Var sub_const(Var a, const Tensor& c) {
    require(a.shape() == c.shape(), "sub_const: shape mismatch");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= c[i];
    return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        auto d = t.grad_buffer(a);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
}

Var append_ones(Var x) {
    const Tensor& xv = x.value();
    require(xv.rank() == 2, "append_ones: expected [B x F], got " + shape_str(xv.shape()));
    const std::size_t B = xv.dim(0), F = xv.dim(1);
    Tensor y({B, F + 1}, 1.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t f = 0; f < F; ++f) y[b * (F + 1) + f] = xv[b * F + f];
    return x.tape()->record(std::move(y), {x}, [x, B, F](Tape& t, const Tensor&, const Tensor& g) {
        auto d = t.grad_buffer(x);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t f = 0; f < F; ++f) d[b * F + f] += g[b * (F + 1) + f];
    });
}

Var batched_outer(Var u, Var s) {
    const Tensor& uv = u.value();
    const Tensor& sv = s.value();
    require(uv.rank() == 2 && sv.rank() == 2 && uv.dim(0) == sv.dim(0),
            "batched_outer: expected [B x K] and [B x M], got " + shape_str(uv.shape()) + " and " +
                shape_str(sv.shape()));
    const std::size_t B = uv.dim(0), K = uv.dim(1), M = sv.dim(1);
    Tensor y({B, K, M});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t m = 0; m < M; ++m) y[(b * K + k) * M + m] = uv[b * K + k] * sv[b * M + m];
    return u.tape()->record(std::move(y), {u, s}, [u, s, B, K, M](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& uv = t.value(u);
        const Tensor& sv = t.value(s);
        auto du = t.grad_buffer(u);
        auto ds = t.grad_buffer(s);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t m = 0; m < M; ++m) {
                    double go = g[(b * K + k) * M + m];
                    if (!du.empty()) du[b * K + k] += go * sv[b * M + m];
                    if (!ds.empty()) ds[b * M + m] += go * uv[b * K + k];
                }
    });
}

Var sum_rows(Var x) {
    const Tensor& xv = x.value();
    require(xv.rank() >= 2, "sum_rows: expected rank >= 2, got " + shape_str(xv.shape()));
    const std::size_t B = xv.dim(0), stride = xv.size() / B;
    Shape rest(xv.shape().begin() + 1, xv.shape().end());
    Tensor y(rest, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < stride; ++i) y[i] += xv[b * stride + i];
    return x.tape()->record(std::move(y), {x}, [x, B, stride](Tape& t, const Tensor&, const Tensor& g) {
        auto d = t.grad_buffer(x);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < stride; ++i) d[b * stride + i] += g[i];
    });
}

Var sum_squares(Var x) {
    double s = x.value().squared_norm();
    return x.tape()->record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        auto d = t.grad_buffer(x);
        const Tensor& xv = t.value(x);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * g[0] * xv[i];
    });
}

Var dot_const(Var a, const Tensor& c) {
    require(a.shape() == c.shape(), "dot_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * c[i];
    return a.tape()->record(Tensor::scalar(s), {a}, [a, c](Tape& t, const Tensor&, const Tensor& g) {
        auto d = t.grad_buffer(a);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * c[i];
    });
}

Tensor one_hot(std::span<const int> labels, std::size_t n_classes) {
    Tensor e({labels.size(), n_classes}, 0.0);
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= n_classes)
            throw InputError("one_hot: label " + std::to_string(labels[b]) + " outside [0, " +
                             std::to_string(n_classes) + ")");
        e[b * n_classes + static_cast<std::size_t>(labels[b])] = 1.0;
    }
    return e;
}

Var per_sample_head_grads(Var features, Var logits, std::span<const int> labels) {
    require(features.shape().size() == 2 && logits.shape().size() == 2 &&
                features.shape()[0] == logits.shape()[0],
            "head gradient: features " + shape_str(features.shape()) + " and logits " + shape_str(logits.shape()) +
                " disagree");
    Var residual = sub_const(softmax(logits), one_hot(labels, logits.shape()[1]));
    return batched_outer(residual, append_ones(features));
}

Var head_grad(Var features, Var logits, std::span<const int> labels) {
    Var per_sample = per_sample_head_grads(features, logits, labels);
    return scale(sum_rows(per_sample), 1.0 / static_cast<double>(labels.size()));
}

} // namespace fedimpres::ad
