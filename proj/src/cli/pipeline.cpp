#include "angiodit/cli/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "angiodit/core/error.hpp"
#include "angiodit/dataset/preprocess.hpp"
#include "angiodit/numerics/parallel.hpp"
#include "angiodit/numerics/random.hpp"

namespace angiodit::cli {

namespace {

std::string trim_lower(std::string s) {
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), [](unsigned char c) { return !std::isspace(c); }));
    s.erase(std::find_if(s.rbegin(), s.rend(), [](unsigned char c) { return !std::isspace(c); }).base(), s.end());
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

AdamConfig adam_with(double lr) {
    AdamConfig a;
    a.lr = static_cast<Real>(lr);
    return a;
}

}  // namespace

std::vector<CasePlan> plan_cases(const DataConfig& data, std::uint64_t seed) {
    std::vector<CasePlan> plans;
    for (std::int64_t i = 0; i < data.cases; ++i) {
        Rng rng = Rng::derive(seed, 0x5e00 + static_cast<std::uint64_t>(i));
        std::vector<dataset::Lesion> lesions;
        if (data.balanced) {
            lesions.push_back(data.lesions[static_cast<std::size_t>(i) % data.lesions.size()]);
        } else {
            for (auto l : data.lesions)
                if (rng.bernoulli(data.lesion_prob)) lesions.push_back(l);
        }
        const std::int64_t span = data.max_raw_frames - data.min_raw_frames + 1;
        CasePlan p;
        char id[32];
        std::snprintf(id, sizeof id, "case_%05lld", static_cast<long long>(i));
        p.id = id;
        p.raw_frames = data.min_raw_frames + rng.index(span);
        p.synth = dataset::SyntheticCase::random(rng.next_u64(), lesions);
        plans.push_back(std::move(p));
    }
    return plans;
}

diffusion::NoiseSchedule schedule_from(const DiffusionConfig& c) {
    return diffusion::NoiseSchedule::linear(c.train_steps, c.beta_start, c.beta_end);
}

PromptSpec parse_prompt(const std::string& text) {
    PromptSpec spec;
    std::stringstream ss(text);
    std::string term;
    bool sided = false;
    while (std::getline(ss, term, ',')) {
        term = trim_lower(term);
        if (term.empty() || term == "ffa" || term == "normal") continue;
        if (term == "left eye" || term == "left" || term == "right eye" || term == "right") {
            const auto lat = term.rfind("left", 0) == 0 ? dataset::Laterality::Left : dataset::Laterality::Right;
            if (sided && lat != spec.laterality) throw ConfigError("prompt names both eyes");
            spec.laterality = lat;
            sided = true;
            continue;
        }
        const dataset::Lesion l = lesion_from_name(term);
        if (std::find(spec.lesions.begin(), spec.lesions.end(), l) == spec.lesions.end()) spec.lesions.push_back(l);
    }
    std::sort(spec.lesions.begin(), spec.lesions.end());
    return spec;
}

dit::PromptTokens prompt_tokens(const std::vector<std::int64_t>& ids, const dit::DitConfig& config) {
    return dit::PromptTokens::from_ids(ids, config.text_max_len);
}

std::shared_ptr<wfvae::WfVae> train_vae_stage(const PipelineConfig& cfg, const std::vector<Tensor>& clips,
                                              std::vector<double>& history, const LogFn& log) {
    auto vae = std::make_shared<wfvae::WfVae>(cfg.vae, Rng::derive(cfg.seed, 0xa1).next_u64());
    wfvae::VaeTrainOptions opts;
    opts.steps = cfg.train.vae_steps;
    opts.batch_size = cfg.train.vae_batch;
    opts.adam = adam_with(cfg.train.vae_lr);
    opts.seed = Rng::derive(cfg.seed, 0xa2).next_u64();
    const std::int64_t every = std::max<std::int64_t>(1, opts.steps / 10);
    opts.on_step = [&](std::int64_t step, double loss) {
        if (log && (step % every == 0 || step + 1 == opts.steps))
            log("train-vae step " + std::to_string(step) + " loss " + std::to_string(loss));
    };
    history = wfvae::train_vae(*vae, clips, opts);
    return vae;
}

std::vector<Tensor> encode_latents(const wfvae::WfVae& vae, const std::vector<Tensor>& clips) {
    NoGradGuard guard;
    std::vector<Tensor> out;
    for (const auto& c : clips) {
        Tensor mu = vae.encode(VideoClip(c)).mu.value();
        Shape s(mu.shape().begin() + 1, mu.shape().end());
        out.push_back(mu.reshaped(s));
    }
    return out;
}

DitStage train_dit_stage(const PipelineConfig& cfg, const wfvae::WfVae& vae, const std::vector<Tensor>& clips,
                         const std::vector<std::vector<std::int64_t>>& token_ids, const LogFn& log) {
    if (clips.size() != token_ids.size()) throw ShapeError("train_dit_stage: clips and prompts differ in count");
    DitStage st;
    std::vector<Tensor> latents = encode_latents(vae, clips);
    st.latent_scale = diffusion::latent_scale_from(latents);
    st.latent_shape = latents.front().shape();
    for (auto& z : latents)
        for (auto& v : z.values()) v *= st.latent_scale;
    std::vector<dit::PromptTokens> prompts;
    for (const auto& ids : token_ids) prompts.push_back(prompt_tokens(ids, cfg.dit));
    st.model = std::make_shared<dit::CrossDit>(cfg.dit, Rng::derive(cfg.seed, 0xd1).next_u64());
    diffusion::DitTrainOptions opts;
    opts.steps = cfg.train.dit_steps;
    opts.batch_size = cfg.train.dit_batch;
    opts.p_uncond = cfg.diffusion.p_uncond;
    opts.adam = adam_with(cfg.train.dit_lr);
    opts.seed = Rng::derive(cfg.seed, 0xd2).next_u64();
    const std::int64_t every = std::max<std::int64_t>(1, opts.steps / 10);
    opts.on_step = [&](std::int64_t step, double loss) {
        if (log && (step % every == 0 || step + 1 == opts.steps))
            log("train-dit step " + std::to_string(step) + " loss " + std::to_string(loss));
    };
    st.history = diffusion::train_dit(*st.model, latents, prompts, schedule_from(cfg.diffusion), opts);
    return st;
}

diffusion::ModelBundle make_bundle(const PipelineConfig& cfg, std::shared_ptr<const wfvae::WfVae> vae,
                                   std::shared_ptr<const dit::CrossDit> model, Real latent_scale, Shape latent_shape) {
    diffusion::ModelBundle b;
    b.vae = std::move(vae);
    b.dit = std::move(model);
    b.schedule = schedule_from(cfg.diffusion);
    b.latent_scale = latent_scale;
    b.latent_shape = std::move(latent_shape);
    return b;
}

diffusion::GenerateOptions generate_options(const PipelineConfig& cfg) {
    diffusion::GenerateOptions o;
    o.sampler.steps = cfg.diffusion.sample_steps;
    o.sampler.guidance = cfg.diffusion.guidance;
    o.tile = {cfg.diffusion.tile, cfg.diffusion.tile};
    o.overlap = cfg.diffusion.overlap;
    return o;
}

VideoClip generate_video(const diffusion::ModelBundle& bundle, const PipelineConfig& cfg,
                         const std::vector<std::int64_t>& token_ids, std::uint64_t seed, std::uint64_t index) {
    Rng rng = Rng::derive(seed, index);
    return diffusion::generate(bundle, prompt_tokens(token_ids, bundle.dit->config()), generate_options(cfg), rng);
}

eval::ProbeConfig probe_config(const PipelineConfig& cfg) {
    eval::ProbeConfig p;
    p.lesions = cfg.data.lesions;
    p.frames = cfg.data.frames;
    p.height = cfg.data.height;
    p.width = cfg.data.width;
    return p;
}

std::vector<eval::ProbeExample> probe_examples(const PipelineConfig& cfg, std::uint64_t seed, std::int64_t count) {
    DataConfig d = cfg.data;
    d.cases = count;
    const auto plans = plan_cases(d, seed);
    std::vector<eval::ProbeExample> out(plans.size());
    parallel_for(static_cast<std::int64_t>(plans.size()), [&](std::int64_t i) {
        const auto& p = plans[static_cast<std::size_t>(i)];
        const VideoClip raw = dataset::synth_render(p.synth, p.raw_frames, d.height, d.width);
        out[static_cast<std::size_t>(i)] = {dataset::standardize_frames(raw, d.frames), p.synth.lesions, p.synth.laterality};
    });
    return out;
}

eval::LesionProbe train_probe_stage(const PipelineConfig& cfg, const LogFn& log) {
    const auto examples = probe_examples(cfg, Rng::derive(cfg.seed, 0xb1).next_u64(), cfg.train.probe_examples);
    eval::LesionProbe probe(probe_config(cfg), Rng::derive(cfg.seed, 0xb2).next_u64());
    eval::ProbeTrainOptions opts;
    opts.steps = cfg.train.probe_steps;
    opts.batch_size = cfg.train.probe_batch;
    opts.adam = adam_with(cfg.train.probe_lr);
    opts.seed = Rng::derive(cfg.seed, 0xb3).next_u64();
    const auto history = probe.train(examples, opts);
    if (log && !history.empty())
        log("probe trained: loss " + std::to_string(history.front()) + " -> " + std::to_string(history.back()));
    return probe;
}

}  // namespace angiodit::cli
