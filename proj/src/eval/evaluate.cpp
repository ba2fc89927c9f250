#include "angiodit/eval/evaluate.hpp"

#include <cmath>
#include <functional>

#include <json.hpp>

#include "angiodit/core/error.hpp"
#include "angiodit/dataset/report.hpp"
#include "angiodit/numerics/parallel.hpp"

namespace angiodit::eval {

namespace {

// JSON has no NaN; non-finite values become null.
nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

void attempt(MetricsReport& report, const std::string& metric, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report.errors[metric] = e.what();
    }
}

}  // namespace

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["frechet"] = number(frechet);
    j["perceptual_mean"] = number(perceptual_mean);
    j["probe_alignment"] = number(probe_alignment);
    j["probe_hits"] = probe_hits;
    j["probe_trials"] = probe_trials;
    j["probe_p_value"] = number(probe_p_value);
    j["report_similarity"] = {{"precision", number(report_similarity.precision)},
                              {"recall", number(report_similarity.recall)},
                              {"f1", number(report_similarity.f1)}};
    nlohmann::json recall = nlohmann::json::object();
    for (const auto& [k, v] : recall_at) recall[std::to_string(k)] = number(v);
    j["recall_at"] = recall;
    j["average_recall"] = number(average_recall);
    j["generated_count"] = generated_count;
    j["reference_count"] = reference_count;
    j["extractor"] = extractor;
    j["alignment_metric"] = "lesion-probe agreement (stands in for a VQA-based text-video alignment score)";
    j["errors"] = errors;
    j["config"] = config;
    return j.dump(2);
}

MetricsReport evaluate_cases(const std::vector<EvalCase>& cases, const FeatureExtractor& extractor,
                             const LesionProbe& probe, const PerceptualNet& perceptual, const Tensor& token_table,
                             const EvalSettings& settings) {
    MetricsReport report;
    report.extractor = extractor.name();
    report.config = settings.config_echo;
    report.generated_count = static_cast<std::int64_t>(cases.size());
    report.reference_count = static_cast<std::int64_t>(cases.size());
    if (cases.empty()) {
        report.errors["all"] = "no evaluation cases";
        return report;
    }

    std::vector<VideoClip> gen, ref;
    std::vector<std::vector<dataset::Lesion>> prompts;
    for (const auto& c : cases) {
        gen.push_back(c.generated);
        ref.push_back(c.reference);
        prompts.push_back(c.lesions);
    }

    Tensor gen_features, ref_features;
    bool have_features = false;
    attempt(report, "features", [&] {
        gen_features = extract_all(extractor, gen);
        ref_features = extract_all(extractor, ref);
        have_features = true;
    });

    if (have_features) {
        attempt(report, "frechet", [&] {
            report.frechet = frechet_distance(fit_gaussian(gen_features), fit_gaussian(ref_features));
        });
        double sum = 0;
        std::int64_t counted = 0;
        for (auto k : settings.ks) {
            attempt(report, "recall@" + std::to_string(k), [&] {
                const double r = recall_at_k(gen_features, ref_features, k);
                report.recall_at[k] = r;
                sum += r;
                ++counted;
            });
        }
        report.average_recall = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
    }

    attempt(report, "perceptual", [&] {
        std::vector<double> d(cases.size());
        parallel_for(static_cast<std::int64_t>(cases.size()), [&](std::int64_t i) {
            const auto& c = cases[static_cast<std::size_t>(i)];
            d[static_cast<std::size_t>(i)] = perceptual_patch_distance(c.generated, c.reference, perceptual);
        });
        double s = 0;
        for (double v : d) s += v;
        report.perceptual_mean = s / static_cast<double>(d.size());
    });

    attempt(report, "probe_alignment", [&] {
        if (!probe.trained()) throw ConfigError("lesion probe has not been trained");
        const AlignmentResult a = lesion_probe_alignment(gen, prompts, probe);
        report.probe_alignment = a.alignment;
        report.probe_hits = a.hits;
        report.probe_trials = a.trials;
        report.probe_p_value = a.p_value;
    });

    attempt(report, "report_similarity", [&] {
        if (!probe.trained()) throw ConfigError("lesion probe has not been trained");
        TextSimilarity total;
        for (const auto& c : cases) {
            const ProbeReading r = probe.read(c.generated);
            const auto candidate = dataset::lesion_tokens(r.present(probe.config()), r.laterality());
            const TextSimilarity s = report_similarity(candidate, c.prompt_tokens, token_table);
            total.precision += s.precision;
            total.recall += s.recall;
            total.f1 += s.f1;
        }
        const auto n = static_cast<double>(cases.size());
        report.report_similarity = {total.precision / n, total.recall / n, total.f1 / n};
    });
    return report;
}

}  // namespace angiodit::eval
