#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <map>
#include <string>
#include <vector>

#include "angiodit/core/video_clip.hpp"
#include "angiodit/wfvae/wfvae.hpp"

namespace angiodit::eval {

struct GaussianFit {
    std::vector<double> mean;
    std::vector<double> cov;  // D x D, row-major
    std::int64_t dim() const { return static_cast<std::int64_t>(mean.size()); }
};

inline constexpr double kCovarianceEpsilon = 1e-6;

// Mean and unbiased covariance of the rows of features [N, D]. When N <= D
// the covariance is rank deficient and kCovarianceEpsilon * I is added.
GaussianFit fit_gaussian(const Tensor& features);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0.
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

// Maps a clip to a fixed-length feature vector.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual std::int64_t dim() const = 0;
    virtual Tensor extract(const VideoClip& clip) const = 0;  // [D]
};

// Latent mean of a trained autoencoder averaged over time and space: D = Cz.
class VaePooledExtractor final : public FeatureExtractor {
public:
    explicit VaePooledExtractor(std::shared_ptr<const wfvae::WfVae> vae) : vae_(std::move(vae)) {}
    std::string name() const override { return "vae-pooled"; }
    std::int64_t dim() const override { return vae_->config().latent_channels; }
    Tensor extract(const VideoClip& clip) const override;

private:
    std::shared_ptr<const wfvae::WfVae> vae_;
};

// Fixed Gaussian random projection of the raw pixels, scaled by 1/sqrt(P).
class RandomProjectionExtractor final : public FeatureExtractor {
public:
    explicit RandomProjectionExtractor(std::uint64_t seed = 0, std::int64_t dim = 64) : seed_(seed), dim_(dim) {}
    std::string name() const override { return "rand-proj"; }
    std::int64_t dim() const override { return dim_; }
    Tensor extract(const VideoClip& clip) const override;

private:
    const Tensor& matrix(std::int64_t pixels) const;
    std::uint64_t seed_;
    std::int64_t dim_;
    mutable std::mutex mutex_;
    mutable std::map<std::int64_t, std::shared_ptr<Tensor>> cache_;
};

// Features of every clip as rows of [N, D].
Tensor extract_all(const FeatureExtractor& extractor, const std::vector<VideoClip>& clips);

// Seeded random convolutional feature pyramid applied frame by frame.
class PerceptualNet {
public:
    explicit PerceptualNet(std::uint64_t seed = 0, std::vector<std::int64_t> channels = {8, 16, 16},
                           std::int64_t in_channels = 1);

    // Layer activations for one frame [C_in, H, W]: 3x3 convolutions with
    // zero padding 1, stride 1 for the first layer and 2 after, each
    // followed by ReLU. Returns [C_l, H_l, W_l] per layer.
    std::vector<Tensor> layers(const Tensor& frame) const;

    const std::vector<Tensor>& weights() const { return weights_; }  // [O, I, 3, 3]
    const std::vector<Tensor>& biases() const { return biases_; }

private:
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
};

inline constexpr double kUnitNormEpsilon = 1e-10;

// Per frame and layer: channel vectors divided by their L2 norm (plus
// kUnitNormEpsilon), squared differences summed over channels and averaged
// over positions; summed over layers and averaged over frames.
double perceptual_patch_distance(const VideoClip& x, const VideoClip& y, const PerceptualNet& net);

struct TextSimilarity {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

// Greedy cosine matching of token embeddings (rows of table [V, d]).
TextSimilarity report_similarity(const std::vector<std::int64_t>& candidate,
                                 const std::vector<std::int64_t>& reference, const Tensor& table);

// Fraction of rows i whose gt row i ranks within the top k of gen row i by
// cosine similarity, ties broken by ascending index.
double recall_at_k(const Tensor& gen, const Tensor& gt, std::int64_t k);

// P(X >= successes) for X ~ Binomial(trials, p).
double binomial_upper_tail(std::int64_t successes, std::int64_t trials, double p);

}  // namespace angiodit::eval
