#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "angiodit/cli/config.hpp"
#include "angiodit/dataset/report.hpp"
#include "angiodit/diffusion/diffusion.hpp"
#include "angiodit/eval/probe.hpp"

namespace angiodit::cli {

using LogFn = std::function<void(const std::string&)>;

// Case i of a run: its scene description and raw frame count.
struct CasePlan {
    std::string id;
    dataset::SyntheticCase synth;
    std::int64_t raw_frames = 0;
};

std::vector<CasePlan> plan_cases(const DataConfig& data, std::uint64_t seed);

diffusion::NoiseSchedule schedule_from(const DiffusionConfig& c);

struct PromptSpec {
    std::vector<dataset::Lesion> lesions;
    dataset::Laterality laterality = dataset::Laterality::Right;
};

// Comma-separated terms such as "left eye, leakage, microaneurysms".
PromptSpec parse_prompt(const std::string& text);

dit::PromptTokens prompt_tokens(const std::vector<std::int64_t>& ids, const dit::DitConfig& config);

// Trains an autoencoder on standardized clips [C, T, H, W].
std::shared_ptr<wfvae::WfVae> train_vae_stage(const PipelineConfig& cfg, const std::vector<Tensor>& clips,
                                              std::vector<double>& history, const LogFn& log);

// Latent means [Cz, Tz, Hz, Wz] of each clip.
std::vector<Tensor> encode_latents(const wfvae::WfVae& vae, const std::vector<Tensor>& clips);

struct DitStage {
    std::shared_ptr<dit::CrossDit> model;
    Real latent_scale = 1.0f;
    Shape latent_shape;
    std::vector<double> history;
};

DitStage train_dit_stage(const PipelineConfig& cfg, const wfvae::WfVae& vae, const std::vector<Tensor>& clips,
                         const std::vector<std::vector<std::int64_t>>& token_ids, const LogFn& log);

diffusion::ModelBundle make_bundle(const PipelineConfig& cfg, std::shared_ptr<const wfvae::WfVae> vae,
                                   std::shared_ptr<const dit::CrossDit> model, Real latent_scale, Shape latent_shape);

diffusion::GenerateOptions generate_options(const PipelineConfig& cfg);

// Video `index` of a run: the sampler noise comes from Rng::derive(seed, index).
VideoClip generate_video(const diffusion::ModelBundle& bundle, const PipelineConfig& cfg,
                         const std::vector<std::int64_t>& token_ids, std::uint64_t seed, std::uint64_t index);

eval::ProbeConfig probe_config(const PipelineConfig& cfg);

// Probe trained on fresh renders (never on generated videos).
eval::LesionProbe train_probe_stage(const PipelineConfig& cfg, const LogFn& log);

std::vector<eval::ProbeExample> probe_examples(const PipelineConfig& cfg, std::uint64_t seed, std::int64_t count);

}  // namespace angiodit::cli
