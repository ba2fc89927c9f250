#include "angiodit/cli/commands.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <unistd.h>

#include "angiodit/cli/io.hpp"
#include "angiodit/cli/pipeline.hpp"
#include "angiodit/core/error.hpp"
#include "angiodit/dataset/manifest.hpp"
#include "angiodit/dataset/preprocess.hpp"
#include "angiodit/eval/evaluate.hpp"
#include "angiodit/numerics/parallel.hpp"

namespace angiodit::cli {

using nlohmann::json;

namespace {

class GateFailure : public Error {
public:
    using Error::Error;
};

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::string prompt;
    std::optional<std::int64_t> steps;
    std::optional<double> guidance;
    std::string ks;
};

struct Context {
    PipelineConfig cfg;
    Flags flags;
    fs::path dir;
    std::ostream& log;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    json summary;
    std::vector<std::string> artifacts;

    void note(const std::string& msg) const {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char buf[32];
        std::snprintf(buf, sizeof buf, "[%8.2fs] ", s);
        log << buf << msg << std::endl;
    }
    LogFn logger() const {
        return [this](const std::string& m) { note(m); };
    }
    void wrote(const std::string& rel) { artifacts.push_back(rel); }
};

dataset::DatasetManifest load_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing input " + path.string());
    return dataset::DatasetManifest::from_jsonl(read_file(path));
}

void save_manifest(Context& ctx, const std::string& rel, const dataset::DatasetManifest& m) {
    write_file_atomic(ctx.dir / rel, m.to_jsonl());
    ctx.wrote(rel);
}

struct TrainingSet {
    std::vector<Tensor> clips;
    std::vector<std::vector<std::int64_t>> tokens;
    std::vector<std::string> ids;
};

TrainingSet load_split(const Context& ctx, const std::string& split) {
    const auto m = load_manifest(ctx.dir / "splits.jsonl");
    TrainingSet set;
    for (const auto* r : m.in_split(split)) {
        set.clips.push_back(read_single_tvid(ctx.dir / r->video_path).data);
        set.tokens.push_back(r->token_ids);
        set.ids.push_back(r->id);
    }
    if (set.clips.empty()) throw ConfigError("split \"" + split + "\" has no kept records");
    return set;
}

std::shared_ptr<wfvae::WfVae> load_vae(const Context& ctx) {
    const fs::path p = ctx.dir / "vae.ckpt";
    if (!fs::exists(p)) throw IoError("missing input " + p.string() + " (run train-vae first)");
    Checkpoint ck = load_checkpoint(p);
    return std::make_shared<wfvae::WfVae>(vae_config_from(ck.meta.at("vae")), std::move(ck.params));
}

diffusion::ModelBundle load_bundle(const Context& ctx) {
    auto vae = load_vae(ctx);
    const fs::path p = ctx.dir / "dit.ckpt";
    if (!fs::exists(p)) throw IoError("missing input " + p.string() + " (run train-dit first)");
    Checkpoint ck = load_checkpoint(p);
    auto model = std::make_shared<dit::CrossDit>(dit_config_from(ck.meta.at("dit")), std::move(ck.params));
    PipelineConfig cfg = ctx.cfg;
    return make_bundle(cfg, vae, model, ck.meta.at("latent_scale").get<Real>(), ck.meta.at("latent_shape").get<Shape>());
}

std::vector<std::int64_t> parse_ks(const std::string& text, const std::vector<std::int64_t>& fallback) {
    if (text.empty()) return fallback;
    std::vector<std::int64_t> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long long k = std::stoll(item, &used);
            if (used != item.size() || k < 1) throw std::invalid_argument(item);
            ks.push_back(k);
        } catch (const std::exception&) {
            throw ConfigError("--k expects positive integers separated by commas, got \"" + text + "\"");
        }
    }
    return ks;
}

// ---------------------------------------------------------------- commands

void cmd_synth(Context& ctx) {
    const auto plans = plan_cases(ctx.cfg.data, ctx.cfg.seed);
    dataset::DatasetManifest m;
    m.records.resize(plans.size());
    parallel_for(static_cast<std::int64_t>(plans.size()), [&](std::int64_t i) {
        const auto& p = plans[static_cast<std::size_t>(i)];
        const VideoClip v = dataset::synth_render(p.synth, p.raw_frames, ctx.cfg.data.height, ctx.cfg.data.width);
        const std::string rel = "raw/" + p.id + ".tvid";
        write_tvid(ctx.dir / rel, {v});
        const auto report = dataset::case_to_report(p.synth);
        auto& r = m.records[static_cast<std::size_t>(i)];
        r.id = p.id;
        r.video_path = rel;
        r.report_text = report.text;
        r.token_ids = report.token_ids;
    });
    for (const auto& r : m.records) ctx.wrote(r.video_path);
    save_manifest(ctx, "raw_manifest.jsonl", m);
    ctx.note("rendered " + std::to_string(plans.size()) + " cases");
    ctx.summary["results"] = {{"cases", plans.size()}};
}

void cmd_preprocess(Context& ctx) {
    dataset::DatasetManifest m = load_manifest(ctx.dir / "raw_manifest.jsonl");
    std::vector<std::string> errors(m.records.size());
    parallel_for(static_cast<std::int64_t>(m.records.size()), [&](std::int64_t i) {
        auto& r = m.records[static_cast<std::size_t>(i)];
        const std::string rel = "clips/" + r.id + ".tvid";
        try {
            const VideoClip raw = read_single_tvid(ctx.dir / r.video_path);
            write_tvid(ctx.dir / rel, {dataset::standardize_frames(raw, ctx.cfg.data.frames)});
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
        r.video_path = rel;
    });
    const fs::path dir = ctx.dir;
    m = dataset::filter_dataset(std::move(m), [&dir](const std::string& p) { return read_single_tvid(dir / p); },
                                ctx.cfg.data.vessel_threshold);
    std::int64_t kept = 0;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        if (!errors[i].empty()) {
            m.records[i].kept = false;
            m.records[i].error = errors[i];
        } else {
            ctx.wrote(m.records[i].video_path);
        }
        kept += m.records[i].kept ? 1 : 0;
    }
    save_manifest(ctx, "manifest.jsonl", m);
    ctx.note("kept " + std::to_string(kept) + " of " + std::to_string(m.records.size()) + " videos");
    ctx.summary["results"] = {{"videos", m.records.size()}, {"kept", kept}, {"frames", ctx.cfg.data.frames}};
}

void cmd_split(Context& ctx) {
    dataset::DatasetManifest m = load_manifest(ctx.dir / "manifest.jsonl");
    m = dataset::split_dataset(std::move(m), ctx.cfg.data.split, ctx.cfg.seed);
    save_manifest(ctx, "splits.jsonl", m);
    json counts = json::object();
    for (const char* s : {"train", "val", "test"}) counts[s] = m.in_split(s).size();
    ctx.summary["results"] = {{"videos", counts}};
}

void cmd_train_vae(Context& ctx) {
    if (ctx.flags.steps) ctx.cfg.train.vae_steps = *ctx.flags.steps;
    const TrainingSet set = load_split(ctx, "train");
    ctx.note("training autoencoder on " + std::to_string(set.clips.size()) + " clips");
    std::vector<double> history;
    auto vae = train_vae_stage(ctx.cfg, set.clips, history, ctx.logger());
    save_checkpoint(ctx.dir / "vae.ckpt", vae->params(), {{"kind", "vae"}, {"vae", vae_config_json(ctx.cfg.vae)}});
    ctx.wrote("vae.ckpt");
    ctx.summary["results"] = {{"clips", set.clips.size()},
                              {"steps", history.size()},
                              {"loss_first", history.empty() ? 0.0 : history.front()},
                              {"loss_last", history.empty() ? 0.0 : history.back()}};
}

void cmd_train_dit(Context& ctx) {
    if (ctx.flags.steps) ctx.cfg.train.dit_steps = *ctx.flags.steps;
    const TrainingSet set = load_split(ctx, "train");
    auto vae = load_vae(ctx);
    ctx.note("training denoiser on " + std::to_string(set.clips.size()) + " latents");
    DitStage st = train_dit_stage(ctx.cfg, *vae, set.clips, set.tokens, ctx.logger());
    save_checkpoint(ctx.dir / "dit.ckpt", st.model->params(),
                    {{"kind", "dit"},
                     {"dit", dit_config_json(ctx.cfg.dit)},
                     {"latent_scale", st.latent_scale},
                     {"latent_shape", st.latent_shape}});
    ctx.wrote("dit.ckpt");
    ctx.summary["results"] = {{"latents", set.clips.size()},
                              {"latent_scale", st.latent_scale},
                              {"latent_shape", st.latent_shape},
                              {"loss_first", st.history.empty() ? 0.0 : st.history.front()},
                              {"loss_last", st.history.empty() ? 0.0 : st.history.back()}};
}

void cmd_generate(Context& ctx) {
    if (ctx.flags.steps) ctx.cfg.diffusion.sample_steps = *ctx.flags.steps;
    if (ctx.flags.guidance) ctx.cfg.diffusion.guidance = *ctx.flags.guidance;
    ctx.cfg.validate();
    const PromptSpec spec = parse_prompt(ctx.flags.prompt);
    const auto tokens = dataset::lesion_tokens(spec.lesions, spec.laterality);
    const auto bundle = load_bundle(ctx);
    VideoClip v = generate_video(bundle, ctx.cfg, tokens, ctx.cfg.seed, 0);
    if (!all_finite(v.data)) throw NumericError("generated video contains non-finite values");
    write_tvid(ctx.dir / "generated/video.tvid", {v});
    ctx.wrote("generated/video.tvid");
    const std::int64_t clamped = export_frames(v, ctx.dir / "generated/frames");
    for (std::int64_t t = 0; t < v.frames(); ++t) {
        char name[64];
        std::snprintf(name, sizeof name, "generated/frames/frame_%03lld.pgm", static_cast<long long>(t));
        ctx.wrote(name);
    }
    json lesions = json::array();
    for (auto l : spec.lesions) lesions.push_back(dataset::lesion_name(l));
    ctx.summary["results"] = {{"prompt", ctx.flags.prompt},
                              {"lesions", lesions},
                              {"laterality", spec.laterality == dataset::Laterality::Left ? "left" : "right"},
                              {"token_ids", tokens},
                              {"shape", v.data.shape()},
                              {"clamped_pixels", clamped}};
}

eval::LesionProbe obtain_probe(Context& ctx) {
    const fs::path p = ctx.dir / "probe.ckpt";
    const json settings = {{"kind", "probe"},
                           {"seed", ctx.cfg.seed},
                           {"data", ctx.cfg.to_json().at("data")},
                           {"train", ctx.cfg.to_json().at("train")}};
    if (fs::exists(p)) {
        Checkpoint ck = load_checkpoint(p);
        if (ck.meta == settings) {
            ctx.note("reusing trained lesion probe");
            return eval::LesionProbe(probe_config(ctx.cfg), std::move(ck.params));
        }
    }
    ctx.note("training lesion probe on " + std::to_string(ctx.cfg.train.probe_examples) + " renders");
    eval::LesionProbe probe = train_probe_stage(ctx.cfg, ctx.logger());
    save_checkpoint(p, probe.params(), settings);
    ctx.wrote("probe.ckpt");
    return probe;
}

std::unique_ptr<eval::FeatureExtractor> make_extractor(const Context& ctx, const diffusion::ModelBundle& bundle) {
    if (ctx.cfg.eval.extractor == "vae-pooled") return std::make_unique<eval::VaePooledExtractor>(bundle.vae);
    return std::make_unique<eval::RandomProjectionExtractor>(ctx.cfg.seed);
}

void cmd_evaluate(Context& ctx) {
    if (ctx.flags.steps) ctx.cfg.diffusion.sample_steps = *ctx.flags.steps;
    if (ctx.flags.guidance) ctx.cfg.diffusion.guidance = *ctx.flags.guidance;
    ctx.cfg.eval.ks = parse_ks(ctx.flags.ks, ctx.cfg.eval.ks);
    ctx.cfg.validate();
    const auto bundle = load_bundle(ctx);
    const eval::LesionProbe probe = obtain_probe(ctx);
    const auto m = load_manifest(ctx.dir / "splits.jsonl");
    const auto records = m.in_split(ctx.cfg.eval.split);
    if (records.empty()) throw ConfigError("eval.split \"" + ctx.cfg.eval.split + "\" has no kept records");
    std::vector<eval::EvalCase> cases;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto* r = records[i];
        eval::EvalCase c;
        c.reference = read_single_tvid(ctx.dir / r->video_path);
        c.generated = generate_video(bundle, ctx.cfg, r->token_ids, ctx.cfg.seed, i);
        if (!all_finite(c.generated.data)) throw NumericError("generated video " + r->id + " contains non-finite values");
        c.prompt_tokens = r->token_ids;
        c.lesions = dataset::lesions_in_tokens(r->token_ids);
        cases.push_back(std::move(c));
    }
    ctx.note("generated " + std::to_string(cases.size()) + " videos for split " + ctx.cfg.eval.split);
    const auto extractor = make_extractor(ctx, bundle);
    const eval::PerceptualNet net(ctx.cfg.seed);
    eval::EvalSettings settings;
    settings.ks = ctx.cfg.eval.ks;
    settings.config_echo = {{"split", ctx.cfg.eval.split},
                            {"sample_steps", std::to_string(ctx.cfg.diffusion.sample_steps)},
                            {"guidance", std::to_string(ctx.cfg.diffusion.guidance)},
                            {"seed", std::to_string(ctx.cfg.seed)}};
    const eval::MetricsReport report =
        eval::evaluate_cases(cases, *extractor, probe, net, bundle.dit->params().at("text.tok").value(), settings);
    write_file_atomic(ctx.dir / "metrics.json", report.to_json());
    ctx.wrote("metrics.json");
    ctx.summary["results"] = json::parse(report.to_json());
    if (ctx.cfg.eval.probe_p_max < 1.0 && !(report.probe_p_value < ctx.cfg.eval.probe_p_max))
        throw GateFailure("probe alignment gate failed: p = " + std::to_string(report.probe_p_value) +
                          " is not below " + std::to_string(ctx.cfg.eval.probe_p_max));
}

void cmd_audit(Context& ctx) {
    if (ctx.flags.steps) ctx.cfg.diffusion.sample_steps = *ctx.flags.steps;
    if (ctx.flags.guidance) ctx.cfg.diffusion.guidance = *ctx.flags.guidance;
    ctx.cfg.eval.ks = parse_ks(ctx.flags.ks, ctx.cfg.eval.ks);
    ctx.cfg.validate();
    const auto bundle = load_bundle(ctx);
    const auto m = load_manifest(ctx.dir / "splits.jsonl");
    auto records = m.in_split("train");
    if (ctx.cfg.eval.audit_count > 0 && static_cast<std::int64_t>(records.size()) > ctx.cfg.eval.audit_count)
        records.resize(static_cast<std::size_t>(ctx.cfg.eval.audit_count));
    if (records.empty()) throw ConfigError("no kept training records to audit");
    std::vector<VideoClip> gen, real;
    for (std::size_t i = 0; i < records.size(); ++i) {
        real.push_back(read_single_tvid(ctx.dir / records[i]->video_path));
        gen.push_back(generate_video(bundle, ctx.cfg, records[i]->token_ids, ctx.cfg.seed, 0x10000 + i));
    }
    const auto extractor = make_extractor(ctx, bundle);
    const Tensor fg = eval::extract_all(*extractor, gen), fr = eval::extract_all(*extractor, real);
    json recall = json::object(), errors = json::object();
    double sum = 0;
    int counted = 0;
    for (auto k : ctx.cfg.eval.ks) {
        try {
            const double r = eval::recall_at_k(fg, fr, k);
            recall[std::to_string(k)] = r;
            sum += r;
            ++counted;
        } catch (const std::exception& e) {
            errors["recall@" + std::to_string(k)] = e.what();
        }
    }
    const json result = {{"extractor", extractor->name()},
                         {"queries", records.size()},
                         {"recall_at", recall},
                         {"average_recall", counted ? sum / counted : 0.0},
                         {"errors", errors}};
    write_file_atomic(ctx.dir / "privacy.json", result.dump(2));
    ctx.wrote("privacy.json");
    ctx.summary["results"] = result;
}

fs::path self_dir() {
    std::error_code ec;
    const fs::path exe = fs::read_symlink("/proc/self/exe", ec);
    return ec ? fs::current_path() : exe.parent_path();
}

void cmd_gradcheck(Context& ctx) {
    std::vector<fs::path> candidates;
    if (const char* env = std::getenv("ANGIODIT_GRADCHECK_BIN")) candidates.emplace_back(env);
    const fs::path here = self_dir();
    candidates.push_back(here / "angiodit-gradcheck");
    candidates.push_back(here.parent_path() / "tools" / "angiodit-gradcheck");
    fs::path bin;
    for (const auto& c : candidates)
        if (fs::exists(c)) {
            bin = c;
            break;
        }
    if (bin.empty()) throw IoError("missing input angiodit-gradcheck (expected next to " + here.string() + ")");
    std::string output;
    FILE* pipe = popen(("\"" + bin.string() + "\"").c_str(), "r");
    if (!pipe) throw IoError("cannot run " + bin.string());
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) output.append(buf.data(), n);
    const int status = pclose(pipe);
    json result;
    try {
        result = json::parse(output);
    } catch (const json::exception&) {
        throw IoError("angiodit-gradcheck produced unreadable output (status " + std::to_string(status) + ")");
    }
    write_file_atomic(ctx.dir / "gradcheck.json", result.dump(2));
    ctx.wrote("gradcheck.json");
    ctx.summary["results"] = result;
    ctx.note("max relative error " + std::to_string(result.at("max_rel_error").get<double>()));
    if (!result.at("passed").get<bool>()) throw GateFailure("finite-difference check failed");
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const GateFailure*>(&e)) return kExitGate;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kExitConfig;
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return kExitConfig;
    return kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
    CLI::App app{"Text-conditioned angiography video synthesis pipeline", "angiodit"};
    app.require_subcommand(1, 1);
    Flags flags;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "render synthetic cases and their reports"},
        {"preprocess", "standardize frame counts and apply the vessel-area filter"},
        {"split", "partition reports into train/val/test"},
        {"train-vae", "train the wavelet-flow autoencoder"},
        {"train-dit", "train the conditional diffusion transformer"},
        {"generate", "sample one video from a text prompt"},
        {"evaluate", "generate the evaluation split and score it"},
        {"audit-privacy", "Recall@K retrieval audit against training videos"},
        {"gradcheck", "finite-difference gradient suite"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", flags.config, "pipeline config (JSON)");
        sub->add_option("--seed", flags.seed, "override the global seed");
        sub->add_option("--out", flags.out, "override the output directory");
        if (name == "generate") sub->add_option("--prompt", flags.prompt, "comma-separated terms")->required();
        if (name == "generate" || name == "evaluate" || name == "audit-privacy" || name == "train-vae" ||
            name == "train-dit")
            sub->add_option("--steps", flags.steps, "sampler steps (or optimizer steps for training)");
        if (name == "generate" || name == "evaluate" || name == "audit-privacy")
            sub->add_option("--guidance", flags.guidance, "classifier-free guidance scale");
        if (name == "evaluate" || name == "audit-privacy") sub->add_option("--k", flags.ks, "e.g. 5,10,50");
    }

    std::vector<std::string> storage{"angiodit"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, err;
        const int code = app.exit(e, o, err);
        out << o.str();
        log << err.str();
        return code == 0 ? kExitOk : kExitConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        PipelineConfig cfg = flags.config.empty() ? PipelineConfig{} : PipelineConfig::from_file(flags.config);
        if (flags.seed) cfg.seed = *flags.seed;
        if (flags.out) cfg.output = *flags.out;
        cfg.validate();
        Context ctx{cfg, flags, fs::path(cfg.output), log, std::chrono::steady_clock::now(), {}, {}};
        fs::create_directories(ctx.dir);
        ctx.note(command + ": output " + ctx.dir.string() + ", " + std::to_string(worker_count()) + " worker(s)");
        if (command == "synth") cmd_synth(ctx);
        else if (command == "preprocess") cmd_preprocess(ctx);
        else if (command == "split") cmd_split(ctx);
        else if (command == "train-vae") cmd_train_vae(ctx);
        else if (command == "train-dit") cmd_train_dit(ctx);
        else if (command == "generate") cmd_generate(ctx);
        else if (command == "evaluate") cmd_evaluate(ctx);
        else if (command == "audit-privacy") cmd_audit(ctx);
        else if (command == "gradcheck") cmd_gradcheck(ctx);
        ctx.summary["command"] = command;
        ctx.summary["status"] = "ok";
        ctx.summary["config"] = ctx.cfg.to_json();
        ctx.summary["artifacts"] = ctx.artifacts;
        const std::string text = ctx.summary.dump(2);
        write_file_atomic(ctx.dir / (command + ".summary.json"), text);
        out << text << std::endl;
        ctx.note(command + ": done");
        return kExitOk;
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        const json summary = {{"command", command}, {"status", "error"}, {"exit_code", code}, {"error", e.what()}};
        out << summary.dump(2) << std::endl;
        log << "error: " << e.what() << std::endl;
        return code;
    }
}

}  // namespace angiodit::cli
