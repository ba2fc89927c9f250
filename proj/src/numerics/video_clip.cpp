#include "angiodit/core/video_clip.hpp"

#include <algorithm>

#include "angiodit/core/error.hpp"

namespace angiodit {

VideoClip::VideoClip(Tensor t, Real lo_, Real hi_) : data(std::move(t)), lo(lo_), hi(hi_) {
    if (data.rank() != 4) throw ShapeError("VideoClip requires C x T x H x W, got " + shape_str(data.shape()));
}

VideoClip::VideoClip(std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w, Real fill)
    : data({c, t, h, w}, fill) {}

Tensor VideoClip::frame(std::int64_t t, std::int64_t c) const {
    if (t < 0 || t >= frames() || c < 0 || c >= channels()) {
        throw ShapeError("frame index out of range");
    }
    Tensor out({height(), width()});
    const Real* src = data.data() + (c * frames() + t) * frame_size();
    std::copy_n(src, frame_size(), out.data());
    return out;
}

}  // namespace angiodit
