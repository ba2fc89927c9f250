#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "angiodit/numerics/autograd.hpp"

namespace angiodit::ops {

// Elementwise arithmetic on identically shaped operands.
Variable add(const Variable& a, const Variable& b);
Variable sub(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable scale(const Variable& a, Real factor);
// x[B, ...] + y[...]: y is broadcast over the leading axis.
Variable add_broadcast(const Variable& x, const Variable& y);

Variable silu(const Variable& x);
// tanh approximation.
Variable gelu(const Variable& x);
Variable sigmoid(const Variable& x);
// Values outside [lo, hi] are clamped and receive zero gradient.
Variable clamp(const Variable& x, Real lo, Real hi);

// Reductions produce a one-element tensor; accumulation is in double.
Variable sum(const Variable& x);
Variable mean(const Variable& x);
Variable mse(const Variable& a, const Variable& b);
// sum_i w_i * x_i with a constant weight tensor.
Variable weighted_sum(const Variable& x, const Tensor& weights);
// Mean over elements of 0.5 * (mu^2 + exp(logvar) - logvar - 1).
Variable gaussian_kl(const Variable& mu, const Variable& logvar);
// Mean binary cross-entropy of logits against {0,1} targets.
Variable bce_with_logits(const Variable& logits, const Tensor& targets);

Variable reshape(const Variable& x, Shape shape);
// out[i] = x[index[i]]; backward scatters. Index values address x's storage.
Variable gather(const Variable& x, std::vector<std::int64_t> index, Shape out_shape);
// Columns [start, start+len) of the trailing axis.
Variable slice_last(const Variable& x, std::int64_t start, std::int64_t len);

// x[..., in] -> x W^T + b with W[out, in], b[out] (bias may be undefined).
Variable linear(const Variable& x, const Variable& weight, const Variable& bias);

// Normalizes over the trailing axis with population variance. Scale and
// shift may be undefined, meaning 1 and 0.
Variable layer_norm(const Variable& x, const Variable& scale, const Variable& shift,
                    Real eps = 1e-5f);

// Per-position normalization over the channel axis of an NCTHW tensor.
// Touches no other axis, so it is causal in time and local in space.
Variable channel_norm(const Variable& x, const Variable& scale, const Variable& shift,
                      Real eps = 1e-5f);

struct Stride3 {
    std::int64_t t = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;
};

// Causal 3D convolution over NCTHW input with weight [O, C, kt, kh, kw].
// Time is padded on the past side only with kt-1 copies of the first frame;
// space is zero padded symmetrically by (k-1)/2. Output length in time is
// floor((T-1)/st)+1 and in space H/sh, W/sw.
Variable causal_conv3d(const Variable& input, const Variable& weight, const Variable& bias,
                       Stride3 stride = {});

// Nearest upsampling of NCTHW. In time, output frame j copies input frame
// ceil(j/ft), so T -> (T-1)*ft+1 and the first frame stays single.
Variable upsample_nearest(const Variable& x, std::int64_t ft, std::int64_t fs);

// Mean over (H, W) of NCTHW, giving [N, C*T].
Variable spatial_mean(const Variable& x);
// Max over (H, W) of NCTHW, giving [N, C*T]; the gradient goes to the first maximum.
Variable spatial_max(const Variable& x);

// softmax(q k^T / sqrt(d)) v over [B, H, L, d] operands. key_mask, when
// non-empty, is [B, Lk] with 1 for attendable keys; a query whose keys are
// all masked yields a zero row.
Variable attention(const Variable& q, const Variable& k, const Variable& v,
                   std::span<const Real> key_mask = {});

// The attention weights alone (no graph), for inspection and tests.
Tensor attention_weights(const Tensor& q, const Tensor& k, std::span<const Real> key_mask = {});

// [B, L, H*d] <-> [B, H, L, d]
Variable split_heads(const Variable& x, std::int64_t heads);
Variable merge_heads(const Variable& x);

// Rows of table[V, d] selected by ids, shaped [ids.size(), d].
Variable embedding(const Variable& table, std::span<const std::int64_t> ids);

// x[B, L, d] * mask[B, L] (constant mask).
Variable mask_rows(const Variable& x, std::span<const Real> mask);

// x[B, N, d] * (1 + scale[B, d]) + shift[B, d]
Variable modulate(const Variable& x, const Variable& shift, const Variable& scale);
// x[B, N, d] + gate[B, d] * y[B, N, d]
Variable gated_residual(const Variable& x, const Variable& gate, const Variable& y);

}  // namespace angiodit::ops
