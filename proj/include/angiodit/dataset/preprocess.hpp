#pragma once

#include <cstdint>

#include "angiodit/core/video_clip.hpp"

namespace angiodit::dataset {

inline constexpr std::int64_t kStandardFrames = 21;
inline constexpr double kVesselThreshold = 0.005;
inline constexpr Real kVesselMargin = 0.15f;

// Longer inputs keep their last `target` frames in forward order. Shorter
// inputs are resampled at p_j = j (N-1) / (target-1) with
// (1-t) F_i + t F_{i+1}, i = floor(p_j), t = p_j - i.
VideoClip standardize_frames(const VideoClip& video, std::int64_t target = kStandardFrames);

// Fraction of pixels brighter than the frame median plus kVesselMargin.
double vessel_area_ratio(const Tensor& frame);

// Minimum of vessel_area_ratio over the frames of channel 0.
double min_vessel_area_ratio(const VideoClip& video);

}  // namespace angiodit::dataset
