#include "angiodit/dataset/manifest.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/parallel.hpp"
#include "angiodit/numerics/random.hpp"

namespace angiodit::dataset {

using nlohmann::json;

std::string DatasetManifest::to_jsonl() const {
    std::string out;
    for (const auto& r : records) {
        json j;
        j["id"] = r.id;
        j["video_path"] = r.video_path;
        j["report_text"] = r.report_text;
        j["token_ids"] = r.token_ids;
        j["split"] = r.split;
        j["min_vessel_area_ratio"] = r.min_vessel_area_ratio;
        j["kept"] = r.kept;
        if (!r.error.empty()) j["error"] = r.error;
        out += j.dump();
        out += '\n';
    }
    return out;
}

DatasetManifest DatasetManifest::from_jsonl(const std::string& text) {
    DatasetManifest m;
    std::istringstream in(text);
    std::string line;
    std::int64_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            ManifestRecord r;
            r.id = j.at("id").get<std::string>();
            r.video_path = j.at("video_path").get<std::string>();
            r.report_text = j.at("report_text").get<std::string>();
            r.token_ids = j.at("token_ids").get<std::vector<std::int64_t>>();
            r.split = j.value("split", std::string());
            r.min_vessel_area_ratio = j.value("min_vessel_area_ratio", 0.0);
            r.kept = j.value("kept", true);
            r.error = j.value("error", std::string());
            m.records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw IoError("manifest line " + std::to_string(number) + ": " + e.what());
        }
    }
    return m;
}

std::vector<const ManifestRecord*> DatasetManifest::in_split(const std::string& split) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
        if (r.kept && r.split == split) out.push_back(&r);
    return out;
}

DatasetManifest filter_dataset(DatasetManifest manifest, const VideoLoader& load, double threshold) {
    auto& recs = manifest.records;
    parallel_for(static_cast<std::int64_t>(recs.size()), [&](std::int64_t i) {
        ManifestRecord& r = recs[static_cast<std::size_t>(i)];
        try {
            const VideoClip v = load(r.video_path);
            r.min_vessel_area_ratio = min_vessel_area_ratio(v);
            r.kept = r.min_vessel_area_ratio >= threshold;
            r.error.clear();
        } catch (const std::exception& e) {
            r.min_vessel_area_ratio = 0.0;
            r.kept = false;
            r.error = e.what();
        }
    });
    return manifest;
}

DatasetManifest split_dataset(DatasetManifest manifest, std::array<double, 3> fractions, std::uint64_t seed) {
    for (double f : fractions)
        if (!(f >= 0.0)) throw ConfigError("split: fractions must be non-negative");
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw ConfigError("split: fractions must sum to 1");
    std::vector<std::string> reports;
    std::map<std::string, std::size_t> index;
    for (const auto& r : manifest.records) {
        if (!r.kept) continue;
        if (index.emplace(r.report_text, reports.size()).second) reports.push_back(r.report_text);
    }
    const auto count = static_cast<std::int64_t>(reports.size());
    if (count < 3) throw ConfigError("split: need at least 3 distinct reports, got " + std::to_string(count));
    Rng rng(seed);
    std::vector<std::size_t> order(reports.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::int64_t i = count - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.index(i + 1))]);
    const auto n_train = std::llround(fractions[0] * static_cast<double>(count));
    const auto n_val = std::llround((fractions[0] + fractions[1]) * static_cast<double>(count));
    std::vector<std::string> split_of(reports.size());
    for (std::int64_t k = 0; k < count; ++k) {
        split_of[order[static_cast<std::size_t>(k)]] = k < n_train ? "train" : (k < n_val ? "val" : "test");
    }
    for (auto& r : manifest.records) r.split = r.kept ? split_of[index.at(r.report_text)] : "";
    return manifest;
}

}  // namespace angiodit::dataset
