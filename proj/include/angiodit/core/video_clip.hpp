#pragma once

#include "angiodit/numerics/tensor.hpp"

namespace angiodit {

// A (channels, frames, height, width) video with its nominal pixel range.
struct VideoClip {
    Tensor data;
    Real lo = 0.0f;
    Real hi = 1.0f;

    VideoClip() = default;
    explicit VideoClip(Tensor t, Real lo_ = 0.0f, Real hi_ = 1.0f);
    VideoClip(std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w, Real fill = 0.0f);

    std::int64_t channels() const { return data.dim(0); }
    std::int64_t frames() const { return data.dim(1); }
    std::int64_t height() const { return data.dim(2); }
    std::int64_t width() const { return data.dim(3); }
    std::int64_t frame_size() const { return height() * width(); }

    Real& at(std::int64_t c, std::int64_t t, std::int64_t y, std::int64_t x) {
        return data[((c * frames() + t) * height() + y) * width() + x];
    }
    Real at(std::int64_t c, std::int64_t t, std::int64_t y, std::int64_t x) const {
        return data[((c * frames() + t) * height() + y) * width() + x];
    }

    // Channel c of frame t as an H x W tensor.
    Tensor frame(std::int64_t t, std::int64_t c = 0) const;

    // [1, C, T, H, W] view for batched model input.
    Tensor as_batch() const { return data.reshaped({1, channels(), frames(), height(), width()}); }
};

}  // namespace angiodit
