#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "angiodit/core/video_clip.hpp"
#include "angiodit/numerics/params.hpp"

#include <json.hpp>

namespace angiodit::cli {

namespace fs = std::filesystem;

// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// .tvid: "TVID", u32 version 1, u32 N, C, T, H, W, u32 dtype 0 (float32),
// then N*C*T*H*W little-endian float32 values, row-major.
inline constexpr std::uint32_t kTvidVersion = 1;
inline constexpr std::size_t kTvidHeaderBytes = 32;

std::string encode_tvid(const std::vector<VideoClip>& clips);
std::vector<VideoClip> decode_tvid(const std::string& bytes);
void write_tvid(const fs::path& path, const std::vector<VideoClip>& clips);
std::vector<VideoClip> read_tvid(const fs::path& path);
// The single clip of a file holding N = 1.
VideoClip read_single_tvid(const fs::path& path);

// One binary PGM (P5) per frame of channel 0, bytes round(v*255) with
// halves rounded up, named frame_000.pgm, frame_001.pgm, ...
// Returns how many pixel values were clamped into [0, 1].
std::int64_t export_frames(const VideoClip& video, const fs::path& dir);
std::string encode_pgm(const Tensor& frame, std::int64_t* clamped = nullptr);
// Frame values in [0, 1] from an 8-bit P5 file.
Tensor decode_pgm(const std::string& bytes);

// Checkpoint: "ADCK", u32 version, u64 header length, JSON header, body of
// little-endian float32 parameter values. The header carries the format
// version, the caller's metadata and name -> {shape, offset, length}.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json meta;
    ParamStore params;
};

std::string encode_checkpoint(const ParamStore& params, const nlohmann::json& meta);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const fs::path& path, const ParamStore& params, const nlohmann::json& meta);
Checkpoint load_checkpoint(const fs::path& path);

}  // namespace angiodit::cli
