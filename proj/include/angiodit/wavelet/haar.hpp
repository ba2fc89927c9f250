#pragma once

#include <array>
#include <vector>

#include "angiodit/numerics/autograd.hpp"
#include "angiodit/numerics/tensor.hpp"

namespace angiodit::wavelet {

// Sub-band index: bit 2 = temporal, bit 1 = vertical, bit 0 = horizontal,
// 0 = low-pass, 1 = high-pass. Index 0 is LLL and 7 is HHH.
inline constexpr int kBandCount = 8;
const char* band_name(int band);

// Output of a multi-level separable 3D Haar analysis over the trailing
// (t, h, w) axes. Leading axes are carried through untouched.
struct WaveletPyramid {
    int levels = 0;
    // bands[l][b] is sub-band b at level l+1; bands[l][0] is that level's LLL.
    std::vector<std::array<Tensor, kBandCount>> bands;
    // Final LLL, identical to bands.back()[0].
    Tensor top;

    // Detail coefficients over all levels plus the top band.
    std::int64_t coefficient_count() const;
    double energy() const;
};

// Orthonormal Haar analysis, w then h then t at every level. Requires T, H,
// W to be divisible by 2^levels.
WaveletPyramid dwt3d(const Tensor& video, int levels);

// Exact inverse of dwt3d using the top band and the detail bands.
Tensor idwt3d(const WaveletPyramid& pyramid);

// Which trailing axes a single Haar step halves.
struct Axes {
    bool t = true;
    bool h = true;
    bool w = true;
};

// Low-pass half of one Haar step. With `causal` set, an odd temporal length
// is first extended by one copy of the first frame on the past side, so
// T -> (T+1)/2 and output frame k depends only on input frames <= 2k.
Tensor haar_lowpass(const Tensor& x, Axes axes, bool causal = false);

// Synthesis of one Haar step from the low-pass band with zero detail bands
// (differentiable). With `causal` set, the first synthesized frame is
// dropped, inverting the causal extension of haar_lowpass.
Variable haar_lowpass_synthesis(const Variable& x, Axes axes, bool causal = false);

}  // namespace angiodit::wavelet
