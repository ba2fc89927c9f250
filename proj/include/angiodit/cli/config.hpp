#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "angiodit/dataset/synth.hpp"
#include "angiodit/dit/dit.hpp"
#include "angiodit/wfvae/wfvae.hpp"

namespace angiodit::cli {

struct DataConfig {
    std::int64_t cases = 64;
    // Raw renders get a frame count drawn uniformly from this range.
    std::int64_t min_raw_frames = 12;
    std::int64_t max_raw_frames = 30;
    std::int64_t frames = 21;  // standardized length
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::vector<dataset::Lesion> lesions = dataset::all_lesions();
    double lesion_prob = 0.3;
    // Exactly one lesion per case, cycling through `lesions`.
    bool balanced = false;
    double vessel_threshold = 0.005;
    std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct DiffusionConfig {
    std::int64_t train_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    std::int64_t sample_steps = 50;
    double guidance = 3.0;
    double p_uncond = 0.1;
    std::int64_t tile = 0;  // latent tile edge for decoding; 0 decodes untiled
    std::int64_t overlap = 6;
};

struct TrainConfig {
    std::int64_t vae_steps = 200;
    std::int64_t vae_batch = 4;
    double vae_lr = 1e-3;
    std::int64_t dit_steps = 1000;
    std::int64_t dit_batch = 8;
    double dit_lr = 1e-3;
    std::int64_t probe_steps = 3000;
    std::int64_t probe_examples = 3000;
    std::int64_t probe_batch = 8;
    double probe_lr = 3e-3;
};

struct EvalConfig {
    std::vector<std::int64_t> ks{5, 10, 50};
    std::string extractor = "rand-proj";
    std::string split = "test";
    std::int64_t audit_count = 0;  // 0 audits every training record
    // evaluate exits with the gate status when the probe p-value is not below this.
    double probe_p_max = 1.0;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string output = "out";
    DataConfig data;
    wfvae::VaeConfig vae;
    dit::DitConfig dit;
    DiffusionConfig diffusion;
    TrainConfig train;
    EvalConfig eval;

    // Throws ConfigError naming the offending key path.
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig from_file(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;
};

dataset::Lesion lesion_from_name(const std::string& name);

nlohmann::json vae_config_json(const wfvae::VaeConfig& c);
wfvae::VaeConfig vae_config_from(const nlohmann::json& j);
nlohmann::json dit_config_json(const dit::DitConfig& c);
dit::DitConfig dit_config_from(const nlohmann::json& j);

}  // namespace angiodit::cli
