#include "angiodit/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "angiodit/core/error.hpp"

namespace angiodit::ops {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using ColVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

const Tensor& in_value(Node& self, std::size_t i) { return self.inputs[i]->value; }

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <typename F>
Variable unary(const Variable& x, F&& fwd_and_deriv) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    Tensor deriv(xv.shape());
    for (std::int64_t i = 0; i < xv.numel(); ++i) {
        auto [y, d] = fwd_and_deriv(xv[i]);
        out[i] = y;
        deriv[i] = d;
    }
    return make_result(std::move(out), {x}, [deriv = std::move(deriv)](Node& self) {
        if (Tensor* gx = self.input_grad(0)) {
            for (std::int64_t i = 0; i < deriv.numel(); ++i) (*gx)[i] += self.grad[i] * deriv[i];
        }
    });
}

Variable with_precise(Variable v, double value) {
    v.node()->precise = value;
    return v;
}

bool scalar_pair(const Variable& a, const Variable& b) { return a.numel() == 1 && b.numel() == 1; }

Real sigmoidf(Real x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const Real e = std::exp(x);
    return e / (1.0f + e);
}

}  // namespace

Variable add(const Variable& a, const Variable& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    Variable r = make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (Tensor* g = self.input_grad(k)) {
                for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
            }
        }
    });
    return scalar_pair(a, b) ? with_precise(r, a.scalar() + b.scalar()) : r;
}

Variable sub(const Variable& a, const Variable& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
        }
        if (Tensor* g = self.input_grad(1)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] -= self.grad[i];
        }
    });
}

Variable mul(const Variable& a, const Variable& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = in_value(self, 0);
        const Tensor& bv = in_value(self, 1);
        if (Tensor* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * bv[i];
        }
        if (Tensor* g = self.input_grad(1)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * av[i];
        }
    });
}

Variable scale(const Variable& a, Real factor) {
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * factor;
    Variable r = make_result(std::move(out), {a}, [factor](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * factor;
        }
    });
    return a.numel() == 1 ? with_precise(r, a.scalar() * factor) : r;
}

Variable add_broadcast(const Variable& x, const Variable& y) {
    const Shape& xs = x.shape();
    const Shape& ys = y.shape();
    require(xs.size() == ys.size() + 1 && std::equal(ys.begin(), ys.end(), xs.begin() + 1),
            "add_broadcast: " + shape_str(ys) + " does not match trailing axes of " + shape_str(xs));
    const std::int64_t inner = y.numel();
    const std::int64_t outer = xs[0];
    Tensor out(xs);
    for (std::int64_t b = 0; b < outer; ++b) {
        for (std::int64_t i = 0; i < inner; ++i) {
            out[b * inner + i] = x.value()[b * inner + i] + y.value()[i];
        }
    }
    return make_result(std::move(out), {x, y}, [outer, inner](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
        }
        if (Tensor* g = self.input_grad(1)) {
            for (std::int64_t b = 0; b < outer; ++b) {
                for (std::int64_t i = 0; i < inner; ++i) (*g)[i] += self.grad[b * inner + i];
            }
        }
    });
}

Variable silu(const Variable& x) {
    return unary(x, [](Real v) {
        const Real s = sigmoidf(v);
        return std::pair{v * s, s * (1.0f + v * (1.0f - s))};
    });
}

Variable gelu(const Variable& x) {
    constexpr Real kC = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr Real kA = 0.044715f;
    return unary(x, [](Real v) {
        const Real u = kC * (v + kA * v * v * v);
        const Real th = std::tanh(u);
        const Real y = 0.5f * v * (1.0f + th);
        const Real d = 0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * kC * (1.0f + 3.0f * kA * v * v);
        return std::pair{y, d};
    });
}

Variable sigmoid(const Variable& x) {
    return unary(x, [](Real v) {
        const Real s = sigmoidf(v);
        return std::pair{s, s * (1.0f - s)};
    });
}

Variable clamp(const Variable& x, Real lo, Real hi) {
    return unary(x, [lo, hi](Real v) {
        if (v < lo) return std::pair{lo, 0.0f};
        if (v > hi) return std::pair{hi, 0.0f};
        return std::pair{v, 1.0f};
    });
}

Variable sum(const Variable& x) {
    double s = 0.0;
    for (Real v : x.value().values()) s += v;
    Variable r = make_result(Tensor::scalar(static_cast<Real>(s)), {x}, [](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            const Real go = self.grad[0];
            for (Real& v : g->values()) v += go;
        }
    });
    return with_precise(r, s);
}

Variable mean(const Variable& x) {
    double s = 0.0;
    for (Real v : x.value().values()) s += v;
    const auto n = static_cast<double>(x.numel());
    Variable r = make_result(Tensor::scalar(static_cast<Real>(s / n)), {x}, [n](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            const Real go = static_cast<Real>(self.grad[0] / n);
            for (Real& v : g->values()) v += go;
        }
    });
    return with_precise(r, s / n);
}

Variable mse(const Variable& a, const Variable& b) {
    require_same_shape(a.value(), b.value(), "mse");
    double s = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.value()[i]) - b.value()[i];
        s += d * d;
    }
    const auto n = static_cast<double>(a.numel());
    Variable r = make_result(Tensor::scalar(static_cast<Real>(s / n)), {a, b}, [n](Node& self) {
        const Tensor& av = in_value(self, 0);
        const Tensor& bv = in_value(self, 1);
        const Real k = static_cast<Real>(2.0 * self.grad[0] / n);
        if (Tensor* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += k * (av[i] - bv[i]);
        }
        if (Tensor* g = self.input_grad(1)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] -= k * (av[i] - bv[i]);
        }
    });
    return with_precise(r, s / n);
}

Variable weighted_sum(const Variable& x, const Tensor& weights) {
    require(weights.numel() == x.numel(), "weighted_sum: weight count mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) s += static_cast<double>(x.value()[i]) * weights[i];
    Variable r = make_result(Tensor::scalar(static_cast<Real>(s)), {x}, [weights](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            const Real go = self.grad[0];
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += go * weights[i];
        }
    });
    return with_precise(r, s);
}

Variable gaussian_kl(const Variable& mu, const Variable& logvar) {
    require_same_shape(mu.value(), logvar.value(), "gaussian_kl");
    double s = 0.0;
    for (std::int64_t i = 0; i < mu.numel(); ++i) {
        const double m = mu.value()[i];
        const double lv = logvar.value()[i];
        s += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
    }
    const auto n = static_cast<double>(mu.numel());
    Variable r = make_result(Tensor::scalar(static_cast<Real>(s / n)), {mu, logvar}, [n](Node& self) {
        const Real k = static_cast<Real>(self.grad[0] / n);
        if (Tensor* g = self.input_grad(0)) {
            const Tensor& m = in_value(self, 0);
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += k * m[i];
        }
        if (Tensor* g = self.input_grad(1)) {
            const Tensor& lv = in_value(self, 1);
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += k * 0.5f * (std::exp(lv[i]) - 1.0f);
        }
    });
    return with_precise(r, s / n);
}

Variable bce_with_logits(const Variable& logits, const Tensor& targets) {
    require(targets.numel() == logits.numel(), "bce_with_logits: target count mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
        const double x = logits.value()[i];
        s += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    }
    const auto n = static_cast<double>(logits.numel());
    Variable r = make_result(Tensor::scalar(static_cast<Real>(s / n)), {logits}, [targets, n](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            const Tensor& x = in_value(self, 0);
            const Real k = static_cast<Real>(self.grad[0] / n);
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += k * (sigmoidf(x[i]) - targets[i]);
        }
    });
    return with_precise(r, s / n);
}

Variable reshape(const Variable& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_result(std::move(out), {x}, [](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
        }
    });
}

Variable gather(const Variable& x, std::vector<std::int64_t> index, Shape out_shape) {
    Tensor out(std::move(out_shape));
    require(out.numel() == static_cast<std::int64_t>(index.size()), "gather: index count mismatch");
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && index[i] < xv.numel(), "gather: index out of range");
        out[static_cast<std::int64_t>(i)] = xv[index[i]];
    }
    return make_result(std::move(out), {x}, [index = std::move(index)](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            for (std::size_t i = 0; i < index.size(); ++i) {
                (*g)[index[i]] += self.grad[static_cast<std::int64_t>(i)];
            }
        }
    });
}

Variable slice_last(const Variable& x, std::int64_t start, std::int64_t len) {
    const Shape& xs = x.shape();
    const std::int64_t d = xs.back();
    require(start >= 0 && len > 0 && start + len <= d, "slice_last: range out of bounds");
    Shape os = xs;
    os.back() = len;
    Tensor out(os);
    const std::int64_t rows = x.numel() / d;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(x.value().data() + r * d + start, len, out.data() + r * len);
    }
    return make_result(std::move(out), {x}, [rows, d, start, len](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t j = 0; j < len; ++j) (*g)[r * d + start + j] += self.grad[r * len + j];
            }
        }
    });
}

Variable linear(const Variable& x, const Variable& weight, const Variable& bias) {
    const Shape& ws = weight.shape();
    require(ws.size() == 2, "linear: weight must be 2-D, got " + shape_str(ws));
    const std::int64_t out_f = ws[0];
    const std::int64_t in_f = ws[1];
    require(x.shape().back() == in_f, "linear: input feature axis " + shape_str(x.shape()) +
                                          " does not match weight " + shape_str(ws));
    if (bias.defined()) {
        require(bias.numel() == out_f, "linear: bias length mismatch");
    }
    const std::int64_t rows = x.numel() / in_f;
    Shape os = x.shape();
    os.back() = out_f;
    Tensor out(os);
    MapMat y(out.data(), rows, out_f);
    y.noalias() = CMapMat(x.value().data(), rows, in_f) *
                  CMapMat(weight.value().data(), out_f, in_f).transpose();
    if (bias.defined()) {
        y.rowwise() += Eigen::Map<const RowVec>(bias.value().data(), out_f);
    }
    std::vector<Variable> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs), [rows, in_f, out_f](Node& self) {
        CMapMat gy(self.grad.data(), rows, out_f);
        if (Tensor* gx = self.input_grad(0)) {
            MapMat(gx->data(), rows, in_f).noalias() +=
                gy * CMapMat(in_value(self, 1).data(), out_f, in_f);
        }
        if (Tensor* gw = self.input_grad(1)) {
            MapMat(gw->data(), out_f, in_f).noalias() +=
                gy.transpose() * CMapMat(in_value(self, 0).data(), rows, in_f);
        }
        if (self.inputs.size() > 2) {
            if (Tensor* gb = self.input_grad(2)) {
                Eigen::Map<RowVec>(gb->data(), out_f) += gy.colwise().sum();
            }
        }
    });
}

namespace {

// Normalization over groups of `count` elements spaced `stride` apart.
// Group g starts at base(g). Shared by layer_norm and channel_norm.
struct NormLayout {
    std::int64_t groups;
    std::int64_t count;
    std::int64_t stride;
    std::function<std::int64_t(std::int64_t)> base;
};

Variable normalize(const Variable& x, const Variable& scale, const Variable& shift, Real eps,
                   NormLayout layout) {
    require(eps > 0.0f, "normalization eps must be positive");
    if (scale.defined()) require(scale.numel() == layout.count, "norm: scale length mismatch");
    if (shift.defined()) require(shift.numel() == layout.count, "norm: shift length mismatch");
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    Tensor rstd({layout.groups});
    for (std::int64_t g = 0; g < layout.groups; ++g) {
        const std::int64_t b = layout.base(g);
        double m = 0.0;
        for (std::int64_t c = 0; c < layout.count; ++c) m += xv[b + c * layout.stride];
        m /= static_cast<double>(layout.count);
        double var = 0.0;
        for (std::int64_t c = 0; c < layout.count; ++c) {
            const double d = xv[b + c * layout.stride] - m;
            var += d * d;
        }
        var /= static_cast<double>(layout.count);
        const double r = 1.0 / std::sqrt(var + eps);
        rstd[g] = static_cast<Real>(r);
        for (std::int64_t c = 0; c < layout.count; ++c) {
            const std::int64_t i = b + c * layout.stride;
            const Real h = static_cast<Real>((xv[i] - m) * r);
            xhat[i] = h;
            const Real s = scale.defined() ? scale.value()[c] : 1.0f;
            const Real t = shift.defined() ? shift.value()[c] : 0.0f;
            out[i] = h * s + t;
        }
    }
    std::vector<Variable> inputs{x};
    const bool has_scale = scale.defined();
    const bool has_shift = shift.defined();
    if (has_scale) inputs.push_back(scale);
    if (has_shift) inputs.push_back(shift);
    return make_result(
        std::move(out), std::move(inputs),
        [xhat = std::move(xhat), rstd = std::move(rstd), layout, has_scale, has_shift](Node& self) {
            const std::size_t scale_idx = 1;
            const std::size_t shift_idx = has_scale ? 2 : 1;
            Tensor* gx = self.input_grad(0);
            Tensor* gs = has_scale ? self.input_grad(scale_idx) : nullptr;
            Tensor* gt = has_shift ? self.input_grad(shift_idx) : nullptr;
            const Tensor* sv = has_scale ? &self.inputs[scale_idx]->value : nullptr;
            for (std::int64_t g = 0; g < layout.groups; ++g) {
                const std::int64_t b = layout.base(g);
                double mean_dh = 0.0;
                double mean_dh_h = 0.0;
                for (std::int64_t c = 0; c < layout.count; ++c) {
                    const std::int64_t i = b + c * layout.stride;
                    const Real gy = self.grad[i];
                    const Real dh = gy * (sv ? (*sv)[c] : 1.0f);
                    mean_dh += dh;
                    mean_dh_h += static_cast<double>(dh) * xhat[i];
                    if (gs) (*gs)[c] += gy * xhat[i];
                    if (gt) (*gt)[c] += gy;
                }
                if (!gx) continue;
                mean_dh /= static_cast<double>(layout.count);
                mean_dh_h /= static_cast<double>(layout.count);
                for (std::int64_t c = 0; c < layout.count; ++c) {
                    const std::int64_t i = b + c * layout.stride;
                    const Real dh = self.grad[i] * (sv ? (*sv)[c] : 1.0f);
                    (*gx)[i] += rstd[g] * static_cast<Real>(dh - mean_dh - xhat[i] * mean_dh_h);
                }
            }
        });
}

}  // namespace

Variable layer_norm(const Variable& x, const Variable& scale, const Variable& shift, Real eps) {
    const std::int64_t d = x.shape().back();
    const std::int64_t rows = x.numel() / d;
    return normalize(x, scale, shift, eps, {rows, d, 1, [d](std::int64_t g) { return g * d; }});
}

Variable channel_norm(const Variable& x, const Variable& scale, const Variable& shift, Real eps) {
    require(x.shape().size() == 5, "channel_norm expects NCTHW, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0);
    const std::int64_t c = x.dim(1);
    const std::int64_t sp = x.dim(2) * x.dim(3) * x.dim(4);
    return normalize(x, scale, shift, eps,
                     {n * sp, c, sp, [c, sp](std::int64_t g) { return (g / sp) * c * sp + g % sp; }});
}

namespace {

struct ConvGeometry {
    std::int64_t n, c, t, h, w;
    std::int64_t o, kt, kh, kw;
    std::int64_t st, sh, sw;
    std::int64_t to, ho, wo;
    std::int64_t ph, pw;
    std::int64_t k() const { return c * kt * kh * kw; }
};

// Rows [r0, r0+rows) of the output frame (b, tau) as columns.
void im2col(const Real* in, const ConvGeometry& g, std::int64_t b, std::int64_t tau,
            std::int64_t r0, std::int64_t rows, Real* cols) {
    const std::int64_t p = rows * g.wo;
    std::int64_t k = 0;
    for (std::int64_t c = 0; c < g.c; ++c) {
        for (std::int64_t a = 0; a < g.kt; ++a) {
            const std::int64_t f = std::max<std::int64_t>(0, tau * g.st - (g.kt - 1) + a);
            const Real* frame = in + ((b * g.c + c) * g.t + f) * g.h * g.w;
            for (std::int64_t i = 0; i < g.kh; ++i) {
                for (std::int64_t j = 0; j < g.kw; ++j, ++k) {
                    Real* dst = cols + k * p;
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const std::int64_t hi = (r0 + r) * g.sh - g.ph + i;
                        Real* row = dst + r * g.wo;
                        if (hi < 0 || hi >= g.h) {
                            std::fill_n(row, g.wo, 0.0f);
                            continue;
                        }
                        const Real* src = frame + hi * g.w;
                        for (std::int64_t x = 0; x < g.wo; ++x) {
                            const std::int64_t wi = x * g.sw - g.pw + j;
                            row[x] = (wi >= 0 && wi < g.w) ? src[wi] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const Real* cols, const ConvGeometry& g, std::int64_t b, std::int64_t tau,
            std::int64_t r0, std::int64_t rows, Real* grad_in) {
    const std::int64_t p = rows * g.wo;
    std::int64_t k = 0;
    for (std::int64_t c = 0; c < g.c; ++c) {
        for (std::int64_t a = 0; a < g.kt; ++a) {
            const std::int64_t f = std::max<std::int64_t>(0, tau * g.st - (g.kt - 1) + a);
            Real* frame = grad_in + ((b * g.c + c) * g.t + f) * g.h * g.w;
            for (std::int64_t i = 0; i < g.kh; ++i) {
                for (std::int64_t j = 0; j < g.kw; ++j, ++k) {
                    const Real* src = cols + k * p;
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const std::int64_t hi = (r0 + r) * g.sh - g.ph + i;
                        if (hi < 0 || hi >= g.h) continue;
                        const Real* row = src + r * g.wo;
                        Real* dst = frame + hi * g.w;
                        for (std::int64_t x = 0; x < g.wo; ++x) {
                            const std::int64_t wi = x * g.sw - g.pw + j;
                            if (wi >= 0 && wi < g.w) dst[wi] += row[x];
                        }
                    }
                }
            }
        }
    }
}

// Output rows per im2col chunk, keeping the column buffer near 4M floats.
std::int64_t rows_per_chunk(const ConvGeometry& g) {
    const std::int64_t budget = std::int64_t{1} << 22;
    return std::clamp<std::int64_t>(budget / std::max<std::int64_t>(1, g.k() * g.wo), 1, g.ho);
}

}  // namespace

Variable causal_conv3d(const Variable& input, const Variable& weight, const Variable& bias,
                       Stride3 stride) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    require(xs.size() == 5, "causal_conv3d: input must be NCTHW, got " + shape_str(xs));
    require(ws.size() == 5, "causal_conv3d: weight must be O x C x kt x kh x kw, got " + shape_str(ws));
    require(xs[1] == ws[1], "causal_conv3d: input has " + std::to_string(xs[1]) +
                                " channels but weight expects " + std::to_string(ws[1]) +
                                " (input " + shape_str(xs) + ", weight " + shape_str(ws) + ")");
    require(ws[2] % 2 == 1 && ws[3] % 2 == 1 && ws[4] % 2 == 1,
            "causal_conv3d: kernel extents must be odd, got " + shape_str(ws));
    require(stride.t >= 1 && stride.h >= 1 && stride.w >= 1, "causal_conv3d: stride must be >= 1");
    require(xs[3] % stride.h == 0 && xs[4] % stride.w == 0,
            "causal_conv3d: spatial extents " + shape_str(xs) + " not divisible by stride");
    if (bias.defined()) require(bias.numel() == ws[0], "causal_conv3d: bias length mismatch");

    ConvGeometry g{xs[0], xs[1], xs[2], xs[3], xs[4], ws[0], ws[2], ws[3], ws[4],
                   stride.t, stride.h, stride.w, (xs[2] - 1) / stride.t + 1,
                   xs[3] / stride.h, xs[4] / stride.w, (ws[3] - 1) / 2, (ws[4] - 1) / 2};

    Tensor out({g.n, g.o, g.to, g.ho, g.wo});
    const std::int64_t chunk = rows_per_chunk(g);
    const std::int64_t frame_stride = g.to * g.ho * g.wo;
    RowMat cols;
    CMapMat wmat(weight.value().data(), g.o, g.k());
    for (std::int64_t b = 0; b < g.n; ++b) {
        for (std::int64_t tau = 0; tau < g.to; ++tau) {
            for (std::int64_t r0 = 0; r0 < g.ho; r0 += chunk) {
                const std::int64_t rows = std::min(chunk, g.ho - r0);
                cols.resize(g.k(), rows * g.wo);
                im2col(input.value().data(), g, b, tau, r0, rows, cols.data());
                Real* ybase = out.data() + (b * g.o * g.to + tau) * g.ho * g.wo + r0 * g.wo;
                StridedMap y(ybase, g.o, rows * g.wo, Eigen::OuterStride<>(frame_stride));
                y.noalias() = wmat * cols;
                if (bias.defined()) {
                    y.colwise() += Eigen::Map<const ColVec>(bias.value().data(), g.o);
                }
            }
        }
    }

    std::vector<Variable> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs), [g, chunk, frame_stride](Node& self) {
        Tensor* gx = self.input_grad(0);
        Tensor* gw = self.input_grad(1);
        Tensor* gb = self.inputs.size() > 2 ? self.input_grad(2) : nullptr;
        const Tensor& xv = in_value(self, 0);
        CMapMat wmat(in_value(self, 1).data(), g.o, g.k());
        RowMat cols;
        RowMat dcols;
        for (std::int64_t b = 0; b < g.n; ++b) {
            for (std::int64_t tau = 0; tau < g.to; ++tau) {
                for (std::int64_t r0 = 0; r0 < g.ho; r0 += chunk) {
                    const std::int64_t rows = std::min(chunk, g.ho - r0);
                    const Real* gybase =
                        self.grad.data() + (b * g.o * g.to + tau) * g.ho * g.wo + r0 * g.wo;
                    CStridedMap gy(gybase, g.o, rows * g.wo, Eigen::OuterStride<>(frame_stride));
                    if (gb) Eigen::Map<ColVec>(gb->data(), g.o) += gy.rowwise().sum();
                    if (gw) {
                        cols.resize(g.k(), rows * g.wo);
                        im2col(xv.data(), g, b, tau, r0, rows, cols.data());
                        MapMat(gw->data(), g.o, g.k()).noalias() += gy * cols.transpose();
                    }
                    if (gx) {
                        dcols.noalias() = wmat.transpose() * gy;
                        col2im(dcols.data(), g, b, tau, r0, rows, gx->data());
                    }
                }
            }
        }
    });
}

Variable upsample_nearest(const Variable& x, std::int64_t ft, std::int64_t fs) {
    const Shape& xs = x.shape();
    require(xs.size() == 5, "upsample_nearest expects NCTHW, got " + shape_str(xs));
    require(ft >= 1 && fs >= 1, "upsample_nearest: factors must be >= 1");
    const std::int64_t nc = xs[0] * xs[1];
    const std::int64_t t = xs[2], h = xs[3], w = xs[4];
    const std::int64_t t2 = (t - 1) * ft + 1, h2 = h * fs, w2 = w * fs;
    Tensor out({xs[0], xs[1], t2, h2, w2});
    std::vector<std::int64_t> src(static_cast<std::size_t>(out.numel()));
    std::int64_t o = 0;
    for (std::int64_t q = 0; q < nc; ++q) {
        for (std::int64_t j = 0; j < t2; ++j) {
            const std::int64_t tj = (j + ft - 1) / ft;
            for (std::int64_t y = 0; y < h2; ++y) {
                const std::int64_t row = ((q * t + tj) * h + y / fs) * w;
                for (std::int64_t xx = 0; xx < w2; ++xx, ++o) {
                    src[static_cast<std::size_t>(o)] = row + xx / fs;
                }
            }
        }
    }
    return gather(x, std::move(src), out.shape());
}

Variable spatial_mean(const Variable& x) {
    const Shape& xs = x.shape();
    require(xs.size() == 5, "spatial_mean expects NCTHW, got " + shape_str(xs));
    const std::int64_t groups = xs[0] * xs[1] * xs[2];
    const std::int64_t hw = xs[3] * xs[4];
    Tensor out({xs[0], xs[1] * xs[2]});
    for (std::int64_t g = 0; g < groups; ++g) {
        double s = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) s += x.value()[g * hw + i];
        out[g] = static_cast<Real>(s / static_cast<double>(hw));
    }
    return make_result(std::move(out), {x}, [groups, hw](Node& self) {
        if (Tensor* gx = self.input_grad(0)) {
            const Real inv = 1.0f / static_cast<Real>(hw);
            for (std::int64_t g = 0; g < groups; ++g) {
                const Real v = self.grad[g] * inv;
                for (std::int64_t i = 0; i < hw; ++i) (*gx)[g * hw + i] += v;
            }
        }
    });
}

Variable spatial_max(const Variable& x) {
    const Shape& xs = x.shape();
    require(xs.size() == 5, "spatial_max expects NCTHW, got " + shape_str(xs));
    const std::int64_t groups = xs[0] * xs[1] * xs[2];
    const std::int64_t hw = xs[3] * xs[4];
    require(hw > 0, "spatial_max: empty frame");
    Tensor out({xs[0], xs[1] * xs[2]});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(groups));
    for (std::int64_t g = 0; g < groups; ++g) {
        std::int64_t best = 0;
        for (std::int64_t i = 1; i < hw; ++i)
            if (x.value()[g * hw + i] > x.value()[g * hw + best]) best = i;
        arg[static_cast<std::size_t>(g)] = g * hw + best;
        out[g] = x.value()[g * hw + best];
    }
    return make_result(std::move(out), {x}, [arg = std::move(arg)](Node& self) {
        if (Tensor* gx = self.input_grad(0))
            for (std::size_t g = 0; g < arg.size(); ++g) (*gx)[arg[g]] += self.grad[static_cast<std::int64_t>(g)];
    });
}

namespace {

struct AttnDims {
    std::int64_t b, h, lq, lk, d, dv;
};

AttnDims attention_dims(const Tensor& q, const Tensor& k, const Tensor* v,
                        std::span<const Real> key_mask) {
    require(q.rank() == 4 && k.rank() == 4, "attention: q and k must be B x H x L x d");
    require(q.dim(0) == k.dim(0) && q.dim(1) == k.dim(1) && q.dim(3) == k.dim(3),
            "attention: q " + shape_str(q.shape()) + " and k " + shape_str(k.shape()) +
                " disagree on batch, heads or key dimension");
    std::int64_t dv = q.dim(3);
    if (v) {
        require(v->rank() == 4 && v->dim(0) == k.dim(0) && v->dim(1) == k.dim(1) &&
                    v->dim(2) == k.dim(2),
                "attention: v " + shape_str(v->shape()) + " does not match k " + shape_str(k.shape()));
        dv = v->dim(3);
    }
    if (!key_mask.empty()) {
        require(static_cast<std::int64_t>(key_mask.size()) == k.dim(0) * k.dim(2),
                "attention: key mask must be B x Lk");
    }
    return {q.dim(0), q.dim(1), q.dim(2), k.dim(2), q.dim(3), dv};
}

// Softmax weights for one (batch, head) pair into p[Lq, Lk].
void softmax_block(const Real* q, const Real* k, const Real* mask, const AttnDims& a, Real* p) {
    MapMat pm(p, a.lq, a.lk);
    pm.noalias() = CMapMat(q, a.lq, a.d) * CMapMat(k, a.lk, a.d).transpose();
    const Real inv = 1.0f / std::sqrt(static_cast<Real>(a.d));
    for (std::int64_t i = 0; i < a.lq; ++i) {
        Real* row = p + i * a.lk;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::int64_t j = 0; j < a.lk; ++j) {
            row[j] *= inv;
            if (!mask || mask[j] > 0.5f) mx = std::max(mx, row[j]);
        }
        if (!std::isfinite(mx)) {
            std::fill_n(row, a.lk, 0.0f);
            continue;
        }
        double s = 0.0;
        for (std::int64_t j = 0; j < a.lk; ++j) {
            const Real e = (!mask || mask[j] > 0.5f) ? std::exp(row[j] - mx) : 0.0f;
            row[j] = e;
            s += e;
        }
        const Real r = static_cast<Real>(1.0 / s);
        for (std::int64_t j = 0; j < a.lk; ++j) row[j] *= r;
    }
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, std::span<const Real> key_mask) {
    const AttnDims a = attention_dims(q, k, nullptr, key_mask);
    Tensor p({a.b, a.h, a.lq, a.lk});
    for (std::int64_t bh = 0; bh < a.b * a.h; ++bh) {
        const Real* mask = key_mask.empty() ? nullptr : key_mask.data() + (bh / a.h) * a.lk;
        softmax_block(q.data() + bh * a.lq * a.d, k.data() + bh * a.lk * a.d, mask, a,
                      p.data() + bh * a.lq * a.lk);
    }
    return p;
}

Variable attention(const Variable& q, const Variable& k, const Variable& v,
                   std::span<const Real> key_mask) {
    const AttnDims a = attention_dims(q.value(), k.value(), &v.value(), key_mask);
    Tensor p = attention_weights(q.value(), k.value(), key_mask);
    Tensor out({a.b, a.h, a.lq, a.dv});
    for (std::int64_t bh = 0; bh < a.b * a.h; ++bh) {
        MapMat(out.data() + bh * a.lq * a.dv, a.lq, a.dv).noalias() =
            CMapMat(p.data() + bh * a.lq * a.lk, a.lq, a.lk) *
            CMapMat(v.value().data() + bh * a.lk * a.dv, a.lk, a.dv);
    }
    return make_result(std::move(out), {q, k, v}, [p = std::move(p), a](Node& self) {
        Tensor* gq = self.input_grad(0);
        Tensor* gk = self.input_grad(1);
        Tensor* gv = self.input_grad(2);
        const Real inv = 1.0f / std::sqrt(static_cast<Real>(a.d));
        RowMat dp;
        for (std::int64_t bh = 0; bh < a.b * a.h; ++bh) {
            CMapMat pm(p.data() + bh * a.lq * a.lk, a.lq, a.lk);
            CMapMat go(self.grad.data() + bh * a.lq * a.dv, a.lq, a.dv);
            if (gv) MapMat(gv->data() + bh * a.lk * a.dv, a.lk, a.dv).noalias() += pm.transpose() * go;
            if (!gq && !gk) continue;
            dp.noalias() = go * CMapMat(in_value(self, 2).data() + bh * a.lk * a.dv, a.lk, a.dv).transpose();
            // dS = P * (dP - rowsum(dP * P)), then fold in the 1/sqrt(d) factor.
            for (std::int64_t i = 0; i < a.lq; ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < a.lk; ++j) dot += static_cast<double>(dp(i, j)) * pm(i, j);
                for (std::int64_t j = 0; j < a.lk; ++j) {
                    dp(i, j) = pm(i, j) * (dp(i, j) - static_cast<Real>(dot)) * inv;
                }
            }
            if (gq) {
                MapMat(gq->data() + bh * a.lq * a.d, a.lq, a.d).noalias() +=
                    dp * CMapMat(in_value(self, 1).data() + bh * a.lk * a.d, a.lk, a.d);
            }
            if (gk) {
                MapMat(gk->data() + bh * a.lk * a.d, a.lk, a.d).noalias() +=
                    dp.transpose() * CMapMat(in_value(self, 0).data() + bh * a.lq * a.d, a.lq, a.d);
            }
        }
    });
}

namespace {

// Index map between [B, L, H*d] and [B, H, L, d] layouts.
std::vector<std::int64_t> head_index(std::int64_t b, std::int64_t l, std::int64_t heads,
                                     std::int64_t d, bool to_heads) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(b * l * heads * d));
    std::size_t o = 0;
    if (to_heads) {
        for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t h = 0; h < heads; ++h)
                for (std::int64_t li = 0; li < l; ++li)
                    for (std::int64_t di = 0; di < d; ++di) idx[o++] = ((bi * l + li) * heads + h) * d + di;
    } else {
        for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t li = 0; li < l; ++li)
                for (std::int64_t h = 0; h < heads; ++h)
                    for (std::int64_t di = 0; di < d; ++di) idx[o++] = ((bi * heads + h) * l + li) * d + di;
    }
    return idx;
}

}  // namespace

Variable split_heads(const Variable& x, std::int64_t heads) {
    const Shape& xs = x.shape();
    require(xs.size() == 3 && xs[2] % heads == 0,
            "split_heads: " + shape_str(xs) + " not divisible into " + std::to_string(heads) + " heads");
    const std::int64_t d = xs[2] / heads;
    return gather(x, head_index(xs[0], xs[1], heads, d, true), {xs[0], heads, xs[1], d});
}

Variable merge_heads(const Variable& x) {
    const Shape& xs = x.shape();
    require(xs.size() == 4, "merge_heads expects B x H x L x d, got " + shape_str(xs));
    return gather(x, head_index(xs[0], xs[2], xs[1], xs[3], false), {xs[0], xs[2], xs[1] * xs[3]});
}

Variable embedding(const Variable& table, std::span<const std::int64_t> ids) {
    const Shape& ts = table.shape();
    require(ts.size() == 2, "embedding: table must be V x d");
    const std::int64_t vocab = ts[0], d = ts[1];
    std::vector<std::int64_t> idx;
    idx.reserve(ids.size() * static_cast<std::size_t>(d));
    for (auto id : ids) {
        require(id >= 0 && id < vocab, "embedding: id " + std::to_string(id) +
                                           " outside vocabulary of size " + std::to_string(vocab));
        for (std::int64_t j = 0; j < d; ++j) idx.push_back(id * d + j);
    }
    return gather(table, std::move(idx), {static_cast<std::int64_t>(ids.size()), d});
}

Variable mask_rows(const Variable& x, std::span<const Real> mask) {
    const Shape& xs = x.shape();
    require(xs.size() == 3 && static_cast<std::int64_t>(mask.size()) == xs[0] * xs[1],
            "mask_rows: mask must be B x L for " + shape_str(xs));
    const std::int64_t d = xs[2];
    std::vector<Real> m(mask.begin(), mask.end());
    Tensor out(xs);
    for (std::int64_t r = 0; r < xs[0] * xs[1]; ++r)
        for (std::int64_t j = 0; j < d; ++j) out[r * d + j] = x.value()[r * d + j] * m[static_cast<std::size_t>(r)];
    return make_result(std::move(out), {x}, [m = std::move(m), d](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            for (std::size_t r = 0; r < m.size(); ++r)
                for (std::int64_t j = 0; j < d; ++j) {
                    const auto i = static_cast<std::int64_t>(r) * d + j;
                    (*g)[i] += self.grad[i] * m[r];
                }
        }
    });
}

namespace {

void require_token_params(const Variable& x, const Variable& p, const char* what) {
    const Shape& xs = x.shape();
    require(xs.size() == 3 && p.shape().size() == 2 && p.dim(0) == xs[0] && p.dim(1) == xs[2],
            std::string(what) + ": expected x[B,N,d] with params [B,d], got " + shape_str(xs) +
                " and " + shape_str(p.shape()));
}

}  // namespace

Variable modulate(const Variable& x, const Variable& shift, const Variable& scale) {
    require_token_params(x, shift, "modulate");
    require_token_params(x, scale, "modulate");
    const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    Tensor out(x.shape());
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) {
                const std::int64_t o = (bi * n + i) * d + j;
                out[o] = x.value()[o] * (1.0f + scale.value()[bi * d + j]) + shift.value()[bi * d + j];
            }
    return make_result(std::move(out), {x, shift, scale}, [b, n, d](Node& self) {
        const Tensor& xv = in_value(self, 0);
        const Tensor& sc = in_value(self, 2);
        Tensor* gx = self.input_grad(0);
        Tensor* gsh = self.input_grad(1);
        Tensor* gsc = self.input_grad(2);
        for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < d; ++j) {
                    const std::int64_t o = (bi * n + i) * d + j;
                    const Real g = self.grad[o];
                    if (gx) (*gx)[o] += g * (1.0f + sc[bi * d + j]);
                    if (gsh) (*gsh)[bi * d + j] += g;
                    if (gsc) (*gsc)[bi * d + j] += g * xv[o];
                }
    });
}

Variable gated_residual(const Variable& x, const Variable& gate, const Variable& y) {
    require_token_params(x, gate, "gated_residual");
    require_same_shape(x.value(), y.value(), "gated_residual");
    const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    Tensor out(x.shape());
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) {
                const std::int64_t o = (bi * n + i) * d + j;
                out[o] = x.value()[o] + gate.value()[bi * d + j] * y.value()[o];
            }
    return make_result(std::move(out), {x, gate, y}, [b, n, d](Node& self) {
        const Tensor& gv = in_value(self, 1);
        const Tensor& yv = in_value(self, 2);
        Tensor* gx = self.input_grad(0);
        Tensor* gg = self.input_grad(1);
        Tensor* gy = self.input_grad(2);
        for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < d; ++j) {
                    const std::int64_t o = (bi * n + i) * d + j;
                    const Real g = self.grad[o];
                    if (gx) (*gx)[o] += g;
                    if (gg) (*gg)[bi * d + j] += g * yv[o];
                    if (gy) (*gy)[o] += g * gv[bi * d + j];
                }
    });
}

}  // namespace angiodit::ops
