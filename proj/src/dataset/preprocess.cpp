#include "angiodit/dataset/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "angiodit/core/error.hpp"

namespace angiodit::dataset {

VideoClip standardize_frames(const VideoClip& video, std::int64_t target) {
    const std::int64_t n = video.frames();
    if (n < 2) throw ShapeError("standardize_frames: need at least 2 frames, got " + std::to_string(n));
    if (target < 2) throw ShapeError("standardize_frames: target must be at least 2");
    if (n == target) return video;
    const std::int64_t c = video.channels(), hw = video.frame_size();
    VideoClip out(c, target, video.height(), video.width());
    out.lo = video.lo;
    out.hi = video.hi;
    if (n > target) {
        for (std::int64_t ch = 0; ch < c; ++ch)
            std::copy_n(video.data.data() + (ch * n + n - target) * hw, target * hw, out.data.data() + ch * target * hw);
        return out;
    }
    for (std::int64_t j = 0; j < target; ++j) {
        const double p = static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(target - 1);
        std::int64_t i = static_cast<std::int64_t>(std::floor(p));
        if (i > n - 2) i = n - 2;
        const double t = p - static_cast<double>(i);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const Real* a = video.data.data() + (ch * n + i) * hw;
            const Real* b = a + hw;
            Real* o = out.data.data() + (ch * target + j) * hw;
            for (std::int64_t k = 0; k < hw; ++k) o[k] = static_cast<Real>((1.0 - t) * a[k] + t * b[k]);
        }
    }
    return out;
}

double vessel_area_ratio(const Tensor& frame) {
    const std::int64_t n = frame.numel();
    if (n == 0) return 0.0;
    std::vector<Real> v(frame.values().begin(), frame.values().end());
    const auto mid = v.begin() + n / 2;
    std::nth_element(v.begin(), mid, v.end());
    double median = *mid;
    if (n % 2 == 0) median = 0.5 * (median + *std::max_element(v.begin(), mid));
    const double cut = median + kVesselMargin;
    std::int64_t count = 0;
    for (Real x : frame.values()) count += x > cut;
    return static_cast<double>(count) / static_cast<double>(n);
}

double min_vessel_area_ratio(const VideoClip& video) {
    double m = 1.0;
    for (std::int64_t t = 0; t < video.frames(); ++t) m = std::min(m, vessel_area_ratio(video.frame(t, 0)));
    return m;
}

}  // namespace angiodit::dataset
