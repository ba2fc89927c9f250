#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "angiodit/core/video_clip.hpp"
#include "angiodit/dataset/synth.hpp"
#include "angiodit/numerics/optim.hpp"
#include "angiodit/numerics/params.hpp"

namespace angiodit::eval {

struct ProbeConfig {
    std::vector<dataset::Lesion> lesions = dataset::all_lesions();
    std::int64_t frames = 9;
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::array<std::int64_t, 3> channels{8, 16, 16};
    void validate() const;
};

struct ProbeExample {
    VideoClip video;
    std::vector<dataset::Lesion> lesions;
    dataset::Laterality laterality = dataset::Laterality::Right;
};

struct ProbeTrainOptions {
    std::int64_t steps = 3000;
    std::int64_t batch_size = 8;
    AdamConfig adam{3e-3f, 0.9f, 0.999f, 1e-8f, 1.0f};
    std::uint64_t seed = 0;
};

struct ProbeReading {
    std::vector<double> lesion_prob;  // per configured lesion
    double left_prob = 0.5;

    std::vector<dataset::Lesion> present(const ProbeConfig& config) const;
    dataset::Laterality laterality() const {
        return left_prob >= 0.5 ? dataset::Laterality::Left : dataset::Laterality::Right;
    }
};

// Small causal-convolutional multi-label classifier over lesion terms plus
// laterality, trained on renderer output only.
class LesionProbe {
public:
    LesionProbe(ProbeConfig config, std::uint64_t seed);
    LesionProbe(ProbeConfig config, ParamStore params);

    const ProbeConfig& config() const { return config_; }
    const ParamStore& params() const { return params_; }
    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    // [B, 1, T, H, W] -> [B, lesions + 1]; the last column is laterality (left).
    Variable logits(const Variable& batch) const;
    ProbeReading read(const VideoClip& video) const;

    std::vector<double> train(const std::vector<ProbeExample>& examples, const ProbeTrainOptions& options);

    // Fraction of (video, lesion) pairs predicted correctly, per lesion.
    std::vector<double> per_lesion_accuracy(const std::vector<ProbeExample>& examples) const;

private:
    void build(std::uint64_t seed);
    ProbeConfig config_;
    ParamStore params_;
    bool trained_ = false;
};

struct AlignmentResult {
    double alignment = 0;  // mean per-lesion agreement
    std::int64_t hits = 0;    // videos whose top-scoring lesion is one the prompt names
    std::int64_t trials = 0;  // videos naming some but not all probe lesions
    double p_value = 1.0;     // one-sided binomial against 0.5
};

AlignmentResult lesion_probe_alignment(const std::vector<VideoClip>& videos,
                                       const std::vector<std::vector<dataset::Lesion>>& prompts,
                                       const LesionProbe& probe);

}  // namespace angiodit::eval
