#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "angiodit/core/video_clip.hpp"
#include "angiodit/dataset/preprocess.hpp"

namespace angiodit::dataset {

struct ManifestRecord {
    std::string id;
    std::string video_path;
    std::string report_text;
    std::vector<std::int64_t> token_ids;
    std::string split;  // "train", "val", "test" or empty
    double min_vessel_area_ratio = 0.0;
    bool kept = true;
    std::string error;  // set when the video could not be read
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    // One JSON object per line.
    std::string to_jsonl() const;
    static DatasetManifest from_jsonl(const std::string& text);

    std::vector<const ManifestRecord*> in_split(const std::string& split) const;
};

using VideoLoader = std::function<VideoClip(const std::string& path)>;

// Flags records whose minimum vessel-area ratio falls below `threshold`.
// Unreadable videos are flagged with an error note; records are never removed.
DatasetManifest filter_dataset(DatasetManifest manifest, const VideoLoader& load, double threshold = kVesselThreshold);

// Shuffles the distinct reports of kept records by seed and assigns the first
// round(f0 R) to train, up to round((f0+f1) R) to val, the rest to test.
// Every record inherits its report's split; unkept records get none.
DatasetManifest split_dataset(DatasetManifest manifest, std::array<double, 3> fractions = {0.8, 0.1, 0.1},
                              std::uint64_t seed = 0);

}  // namespace angiodit::dataset
