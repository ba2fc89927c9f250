#include "angiodit/cli/config.hpp"

#include <set>

#include "angiodit/cli/io.hpp"
#include "angiodit/core/error.hpp"

namespace angiodit::cli {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object, remembering which were consumed so
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "must be an object");
    }

    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key " + path_ + (path_.empty() ? "" : ".") + key + " has the wrong type");
        }
    }

    Section sub(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    const std::string& path() const { return path_; }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key))
                throw ConfigError("unknown config key " + (path_.empty() ? key : path_ + "." + key));
    }

private:
    std::string where() const { return "config " + (path_.empty() ? std::string("root") : path_) + " "; }
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_vae(Section s, wfvae::VaeConfig& c) {
    s.get("in_channels", c.in_channels);
    s.get("latent_channels", c.latent_channels);
    s.get("temporal_compression", c.temporal_compression);
    s.get("spatial_compression", c.spatial_compression);
    s.get("base_channels", c.base_channels);
    s.get("channel_mult", c.channel_mult);
    s.get("wavelet_levels", c.wavelet_levels);
    s.get("kl_weight", c.kl_weight);
    s.finish();
}

void read_dit(Section s, dit::DitConfig& c) {
    s.get("hidden", c.hidden);
    s.get("blocks", c.blocks);
    s.get("heads", c.heads);
    s.get("patch", c.patch);
    s.get("latent_channels", c.latent_channels);
    s.get("vocab_size", c.vocab_size);
    s.get("text_max_len", c.text_max_len);
    s.get("text_layers", c.text_layers);
    s.get("mlp_ratio", c.mlp_ratio);
    s.finish();
}

template <class F>
void wrap(const std::string& what, F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

}  // namespace

dataset::Lesion lesion_from_name(const std::string& name) {
    for (auto l : dataset::all_lesions())
        if (name == dataset::lesion_name(l)) return l;
    throw ConfigError("unknown lesion term \"" + name + "\"");
}

json vae_config_json(const wfvae::VaeConfig& c) {
    return {{"in_channels", c.in_channels},
            {"latent_channels", c.latent_channels},
            {"temporal_compression", c.temporal_compression},
            {"spatial_compression", c.spatial_compression},
            {"base_channels", c.base_channels},
            {"channel_mult", c.channel_mult},
            {"wavelet_levels", c.wavelet_levels},
            {"kl_weight", c.kl_weight}};
}

wfvae::VaeConfig vae_config_from(const json& j) {
    wfvae::VaeConfig c;
    read_vae(Section(j, "vae"), c);
    return c;
}

json dit_config_json(const dit::DitConfig& c) {
    return {{"hidden", c.hidden},         {"blocks", c.blocks},
            {"heads", c.heads},           {"patch", c.patch},
            {"latent_channels", c.latent_channels}, {"vocab_size", c.vocab_size},
            {"text_max_len", c.text_max_len},       {"text_layers", c.text_layers},
            {"mlp_ratio", c.mlp_ratio}};
}

dit::DitConfig dit_config_from(const json& j) {
    dit::DitConfig c;
    read_dit(Section(j, "dit"), c);
    return c;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    Section root(j, "");
    root.get("seed", c.seed);
    root.get("output", c.output);
    {
        Section s = root.sub("data");
        s.get("cases", c.data.cases);
        s.get("min_raw_frames", c.data.min_raw_frames);
        s.get("max_raw_frames", c.data.max_raw_frames);
        s.get("frames", c.data.frames);
        s.get("height", c.data.height);
        s.get("width", c.data.width);
        std::vector<std::string> names;
        s.get("lesions", names);
        if (s.has("lesions")) {
            c.data.lesions.clear();
            for (const auto& n : names) {
                try {
                    c.data.lesions.push_back(lesion_from_name(n));
                } catch (const ConfigError& e) {
                    throw ConfigError("config key data.lesions: " + std::string(e.what()));
                }
            }
        }
        s.get("lesion_prob", c.data.lesion_prob);
        s.get("balanced", c.data.balanced);
        s.get("vessel_threshold", c.data.vessel_threshold);
        s.get("split", c.data.split);
        s.finish();
    }
    read_vae(root.sub("vae"), c.vae);
    read_dit(root.sub("dit"), c.dit);
    {
        Section s = root.sub("diffusion");
        s.get("train_steps", c.diffusion.train_steps);
        s.get("beta_start", c.diffusion.beta_start);
        s.get("beta_end", c.diffusion.beta_end);
        s.get("sample_steps", c.diffusion.sample_steps);
        s.get("guidance", c.diffusion.guidance);
        s.get("p_uncond", c.diffusion.p_uncond);
        s.get("tile", c.diffusion.tile);
        s.get("overlap", c.diffusion.overlap);
        s.finish();
    }
    {
        Section s = root.sub("train");
        s.get("vae_steps", c.train.vae_steps);
        s.get("vae_batch", c.train.vae_batch);
        s.get("vae_lr", c.train.vae_lr);
        s.get("dit_steps", c.train.dit_steps);
        s.get("dit_batch", c.train.dit_batch);
        s.get("dit_lr", c.train.dit_lr);
        s.get("probe_steps", c.train.probe_steps);
        s.get("probe_examples", c.train.probe_examples);
        s.get("probe_batch", c.train.probe_batch);
        s.get("probe_lr", c.train.probe_lr);
        s.finish();
    }
    {
        Section s = root.sub("eval");
        s.get("ks", c.eval.ks);
        s.get("extractor", c.eval.extractor);
        s.get("split", c.eval.split);
        s.get("audit_count", c.eval.audit_count);
        s.get("probe_p_max", c.eval.probe_p_max);
        s.finish();
    }
    root.finish();
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

json PipelineConfig::to_json() const {
    json lesions = json::array();
    for (auto l : data.lesions) lesions.push_back(dataset::lesion_name(l));
    return {{"seed", seed},
            {"output", output},
            {"data",
             {{"cases", data.cases},
              {"min_raw_frames", data.min_raw_frames},
              {"max_raw_frames", data.max_raw_frames},
              {"frames", data.frames},
              {"height", data.height},
              {"width", data.width},
              {"lesions", lesions},
              {"lesion_prob", data.lesion_prob},
              {"balanced", data.balanced},
              {"vessel_threshold", data.vessel_threshold},
              {"split", data.split}}},
            {"vae", vae_config_json(vae)},
            {"dit", dit_config_json(dit)},
            {"diffusion",
             {{"train_steps", diffusion.train_steps},
              {"beta_start", diffusion.beta_start},
              {"beta_end", diffusion.beta_end},
              {"sample_steps", diffusion.sample_steps},
              {"guidance", diffusion.guidance},
              {"p_uncond", diffusion.p_uncond},
              {"tile", diffusion.tile},
              {"overlap", diffusion.overlap}}},
            {"train",
             {{"vae_steps", train.vae_steps},
              {"vae_batch", train.vae_batch},
              {"vae_lr", train.vae_lr},
              {"dit_steps", train.dit_steps},
              {"dit_batch", train.dit_batch},
              {"dit_lr", train.dit_lr},
              {"probe_steps", train.probe_steps},
              {"probe_examples", train.probe_examples},
              {"probe_batch", train.probe_batch},
              {"probe_lr", train.probe_lr}}},
            {"eval",
             {{"ks", eval.ks},
              {"extractor", eval.extractor},
              {"split", eval.split},
              {"audit_count", eval.audit_count},
              {"probe_p_max", eval.probe_p_max}}}};
}

void PipelineConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError("config key " + key + ": " + msg); };
    if (data.cases < 1) fail("data.cases", "must be positive");
    if (data.min_raw_frames < 2 || data.max_raw_frames < data.min_raw_frames)
        fail("data.min_raw_frames", "need 2 <= min_raw_frames <= max_raw_frames");
    if (data.frames < 2) fail("data.frames", "must be at least 2");
    if (data.height < 8 || data.width < 8) fail("data.height", "frames must be at least 8x8");
    if (data.lesions.empty()) fail("data.lesions", "must name at least one lesion");
    if (!(data.lesion_prob >= 0 && data.lesion_prob <= 1)) fail("data.lesion_prob", "must lie in [0, 1]");
    if (!(data.vessel_threshold >= 0)) fail("data.vessel_threshold", "must be non-negative");
    for (double f : data.split)
        if (!(f >= 0)) fail("data.split", "fractions must be non-negative");
    if (std::abs(data.split[0] + data.split[1] + data.split[2] - 1.0) > 1e-9) fail("data.split", "fractions must sum to 1");
    wrap("config section vae", [&] { vae.validate(); });
    wrap("config section dit", [&] { dit.validate(); });
    if (dit.latent_channels != vae.latent_channels) fail("dit.latent_channels", "must equal vae.latent_channels");
    if (dit.vocab_size < 22) fail("dit.vocab_size", "must cover the 22-word report vocabulary");
    if (diffusion.train_steps < 1) fail("diffusion.train_steps", "must be positive");
    if (!(diffusion.beta_start > 0 && diffusion.beta_end < 1 && diffusion.beta_start <= diffusion.beta_end))
        fail("diffusion.beta_start", "need 0 < beta_start <= beta_end < 1");
    if (diffusion.sample_steps < 1 || diffusion.sample_steps > diffusion.train_steps)
        fail("diffusion.sample_steps", "must lie in [1, train_steps]");
    if (!(diffusion.guidance >= 0)) fail("diffusion.guidance", "must be non-negative");
    if (!(diffusion.p_uncond >= 0 && diffusion.p_uncond <= 1)) fail("diffusion.p_uncond", "must lie in [0, 1]");
    if (diffusion.tile < 0 || diffusion.overlap < 0) fail("diffusion.tile", "tile and overlap must be non-negative");
    if (train.vae_steps < 0 || train.dit_steps < 0 || train.probe_steps < 0) fail("train", "step counts must be non-negative");
    if (train.vae_batch < 1 || train.dit_batch < 1 || train.probe_batch < 1) fail("train", "batch sizes must be positive");
    if (!(train.vae_lr > 0 && train.dit_lr > 0 && train.probe_lr > 0)) fail("train", "learning rates must be positive");
    if (train.probe_examples < 1) fail("train.probe_examples", "must be positive");
    if (eval.ks.empty()) fail("eval.ks", "must list at least one k");
    for (auto k : eval.ks)
        if (k < 1) fail("eval.ks", "entries must be positive");
    if (eval.extractor != "rand-proj" && eval.extractor != "vae-pooled")
        fail("eval.extractor", "must be \"rand-proj\" or \"vae-pooled\"");
    if (eval.split != "train" && eval.split != "val" && eval.split != "test")
        fail("eval.split", "must be train, val or test");
    if (eval.audit_count < 0) fail("eval.audit_count", "must be non-negative");
}

}  // namespace angiodit::cli
