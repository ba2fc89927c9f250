#include "angiodit/wavelet/haar.hpp"

#include <cmath>
#include <string>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/ops.hpp"

namespace angiodit::wavelet {

namespace {

const Real kInvSqrt2 = static_cast<Real>(1.0 / std::sqrt(2.0));

// View of a tensor as [outer, n, inner] around one axis.
struct AxisView {
    std::int64_t outer;
    std::int64_t n;
    std::int64_t inner;
};

AxisView view_of(const Shape& s, std::size_t axis) {
    AxisView v{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

// One orthonormal Haar split along `axis` (extent must be even).
std::pair<Tensor, Tensor> split(const Tensor& x, std::size_t axis) {
    const AxisView v = view_of(x.shape(), axis);
    Shape hs = x.shape();
    hs[axis] = v.n / 2;
    Tensor lo(hs), hi(hs);
    const std::int64_t half = v.n / 2;
    for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t k = 0; k < half; ++k) {
            const Real* a = x.data() + (o * v.n + 2 * k) * v.inner;
            const Real* b = a + v.inner;
            Real* l = lo.data() + (o * half + k) * v.inner;
            Real* h = hi.data() + (o * half + k) * v.inner;
            for (std::int64_t i = 0; i < v.inner; ++i) {
                l[i] = (a[i] + b[i]) * kInvSqrt2;
                h[i] = (a[i] - b[i]) * kInvSqrt2;
            }
        }
    }
    return {std::move(lo), std::move(hi)};
}

Tensor merge(const Tensor& lo, const Tensor& hi, std::size_t axis) {
    require_same_shape(lo, hi, "idwt3d sub-band pair");
    const AxisView v = view_of(lo.shape(), axis);
    Shape fs = lo.shape();
    fs[axis] = v.n * 2;
    Tensor out(fs);
    for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t k = 0; k < v.n; ++k) {
            const Real* l = lo.data() + (o * v.n + k) * v.inner;
            const Real* h = hi.data() + (o * v.n + k) * v.inner;
            Real* a = out.data() + (o * 2 * v.n + 2 * k) * v.inner;
            Real* b = a + v.inner;
            for (std::int64_t i = 0; i < v.inner; ++i) {
                a[i] = (l[i] + h[i]) * kInvSqrt2;
                b[i] = (l[i] - h[i]) * kInvSqrt2;
            }
        }
    }
    return out;
}

void require_rank(const Tensor& x, const char* what) {
    if (x.rank() < 3) {
        throw ShapeError(std::string(what) + ": need at least (t, h, w) axes, got " + shape_str(x.shape()));
    }
}

// Prepends one copy of the first frame along the temporal axis.
Tensor extend_past(const Tensor& x, std::size_t taxis) {
    const AxisView v = view_of(x.shape(), taxis);
    Shape s = x.shape();
    s[taxis] += 1;
    Tensor out(s);
    for (std::int64_t o = 0; o < v.outer; ++o) {
        const Real* src = x.data() + o * v.n * v.inner;
        Real* dst = out.data() + o * (v.n + 1) * v.inner;
        std::copy_n(src, v.inner, dst);
        std::copy_n(src, v.n * v.inner, dst + v.inner);
    }
    return out;
}

}  // namespace

const char* band_name(int band) {
    static const char* names[kBandCount] = {"LLL", "LLH", "LHL", "LHH", "HLL", "HLH", "HHL", "HHH"};
    return names[band];
}

std::int64_t WaveletPyramid::coefficient_count() const {
    std::int64_t n = top.numel();
    for (const auto& level : bands)
        for (int b = 1; b < kBandCount; ++b) n += level[static_cast<std::size_t>(b)].numel();
    return n;
}

double WaveletPyramid::energy() const {
    double e = sum_squares(top);
    for (const auto& level : bands)
        for (int b = 1; b < kBandCount; ++b) e += sum_squares(level[static_cast<std::size_t>(b)]);
    return e;
}

WaveletPyramid dwt3d(const Tensor& video, int levels) {
    require_rank(video, "dwt3d");
    if (levels < 1) throw ShapeError("dwt3d: levels must be positive");
    const std::size_t r = video.rank();
    const std::int64_t need = std::int64_t{1} << levels;
    const std::int64_t t = video.dim(r - 3), h = video.dim(r - 2), w = video.dim(r - 1);
    if (t % need || h % need || w % need) {
        throw ShapeError("dwt3d: extents T=" + std::to_string(t) + " H=" + std::to_string(h) +
                         " W=" + std::to_string(w) + " must each be divisible by 2^" +
                         std::to_string(levels) + " = " + std::to_string(need));
    }
    WaveletPyramid p;
    p.levels = levels;
    Tensor current = video;
    for (int l = 0; l < levels; ++l) {
        std::array<Tensor, kBandCount> level;
        auto [xl, xh] = split(current, r - 1);
        std::array<Tensor, 4> hw;
        auto [ll, lh] = split(xl, r - 2);
        auto [hl, hh] = split(xh, r - 2);
        hw = {std::move(ll), std::move(hl), std::move(lh), std::move(hh)};  // index (h<<1)|w
        for (int b = 0; b < 4; ++b) {
            auto [tl, th] = split(hw[static_cast<std::size_t>(b)], r - 3);
            level[static_cast<std::size_t>(b)] = std::move(tl);
            level[static_cast<std::size_t>(b + 4)] = std::move(th);
        }
        current = level[0];
        p.bands.push_back(std::move(level));
    }
    p.top = std::move(current);
    return p;
}

Tensor idwt3d(const WaveletPyramid& pyramid) {
    if (pyramid.levels < 1 || static_cast<int>(pyramid.bands.size()) != pyramid.levels) {
        throw ShapeError("idwt3d: pyramid level count is inconsistent");
    }
    require_rank(pyramid.top, "idwt3d");
    const std::size_t r = pyramid.top.rank();
    Tensor current = pyramid.top;
    for (int l = pyramid.levels - 1; l >= 0; --l) {
        const auto& level = pyramid.bands[static_cast<std::size_t>(l)];
        for (int b = 1; b < kBandCount; ++b) {
            if (level[static_cast<std::size_t>(b)].shape() != current.shape()) {
                throw ShapeError(std::string("idwt3d: level ") + std::to_string(l + 1) + " band " +
                                 band_name(b) + " has shape " +
                                 shape_str(level[static_cast<std::size_t>(b)].shape()) + ", expected " +
                                 shape_str(current.shape()));
            }
        }
        std::array<Tensor, 4> hw;
        hw[0] = merge(current, level[4], r - 3);
        for (int b = 1; b < 4; ++b) {
            hw[static_cast<std::size_t>(b)] =
                merge(level[static_cast<std::size_t>(b)], level[static_cast<std::size_t>(b + 4)], r - 3);
        }
        Tensor xl = merge(hw[0], hw[2], r - 2);
        Tensor xh = merge(hw[1], hw[3], r - 2);
        current = merge(xl, xh, r - 1);
    }
    return current;
}

Tensor haar_lowpass(const Tensor& x, Axes axes, bool causal) {
    require_rank(x, "haar_lowpass");
    const std::size_t r = x.rank();
    Tensor current = x;
    auto step = [&](std::size_t axis, const char* name) {
        if (current.dim(axis) % 2) {
            throw ShapeError(std::string("haar_lowpass: ") + name + " extent " +
                             std::to_string(current.dim(axis)) + " is odd");
        }
        current = split(current, axis).first;
    };
    if (axes.w) step(r - 1, "width");
    if (axes.h) step(r - 2, "height");
    if (axes.t) {
        if (causal && current.dim(r - 3) % 2) current = extend_past(current, r - 3);
        step(r - 3, "temporal");
    }
    return current;
}

Variable haar_lowpass_synthesis(const Variable& x, Axes axes, bool causal) {
    const Shape& s = x.shape();
    if (s.size() < 3) throw ShapeError("haar_lowpass_synthesis: need (t, h, w) axes");
    const std::size_t r = s.size();
    const std::int64_t ft = axes.t ? 2 : 1, fh = axes.h ? 2 : 1, fw = axes.w ? 2 : 1;
    const std::int64_t t = s[r - 3], h = s[r - 2], w = s[r - 1];
    const std::int64_t drop = (axes.t && causal) ? 1 : 0;
    const std::int64_t t2 = t * ft - drop, h2 = h * fh, w2 = w * fw;
    std::int64_t outer = 1;
    for (std::size_t i = 0; i + 3 < r; ++i) outer *= s[i];
    Shape os = s;
    os[r - 3] = t2;
    os[r - 2] = h2;
    os[r - 1] = w2;
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(outer * t2 * h2 * w2));
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t j = 0; j < t2; ++j) {
            const std::int64_t tj = (j + drop) / ft;
            for (std::int64_t y = 0; y < h2; ++y)
                for (std::int64_t xx = 0; xx < w2; ++xx) idx.push_back(((o * t + tj) * h + y / fh) * w + xx / fw);
        }
    int halvings = static_cast<int>(axes.t) + static_cast<int>(axes.h) + static_cast<int>(axes.w);
    const Real gain = static_cast<Real>(std::pow(kInvSqrt2, halvings));
    return ops::scale(ops::gather(x, std::move(idx), os), gain);
}

}  // namespace angiodit::wavelet
