#pragma once

#include <map>
#include <string>
#include <vector>

#include "angiodit/eval/metrics.hpp"
#include "angiodit/eval/probe.hpp"

namespace angiodit::eval {

struct MetricsReport {
    double frechet = 0;
    double perceptual_mean = 0;
    double probe_alignment = 0;
    std::int64_t probe_hits = 0;
    std::int64_t probe_trials = 0;
    double probe_p_value = 1;
    TextSimilarity report_similarity;
    std::map<std::int64_t, double> recall_at;
    double average_recall = 0;
    std::int64_t generated_count = 0;
    std::int64_t reference_count = 0;
    std::string extractor;
    std::map<std::string, std::string> errors;  // metric -> message
    std::map<std::string, std::string> config;  // echo of the run settings

    std::string to_json() const;
};

struct EvalCase {
    VideoClip generated;
    VideoClip reference;
    std::vector<std::int64_t> prompt_tokens;
    std::vector<dataset::Lesion> lesions;
};

struct EvalSettings {
    std::vector<std::int64_t> ks{5, 10, 50};
    std::map<std::string, std::string> config_echo;
};

// Runs every metric family over paired generated/reference clips. A metric
// that fails records its message under errors and the rest still run.
MetricsReport evaluate_cases(const std::vector<EvalCase>& cases, const FeatureExtractor& extractor,
                             const LesionProbe& probe, const PerceptualNet& perceptual, const Tensor& token_table,
                             const EvalSettings& settings);

}  // namespace angiodit::eval
