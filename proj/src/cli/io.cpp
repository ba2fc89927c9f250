#include "angiodit/cli/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "angiodit/core/error.hpp"

namespace angiodit::cli {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

void put_floats(std::string& out, const Tensor& t) {
    if constexpr (std::is_same_v<Real, float>) {
        out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.numel()) * 4);
    } else {
        for (Real v : t.values()) {
            const float f = static_cast<float>(v);
            out.append(reinterpret_cast<const char*>(&f), 4);
        }
    }
}

void get_floats(const std::string& bytes, std::size_t offset, Tensor& t) {
    if constexpr (std::is_same_v<Real, float>) {
        std::memcpy(t.data(), bytes.data() + offset, static_cast<std::size_t>(t.numel()) * 4);
    } else {
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            float f;
            std::memcpy(&f, bytes.data() + offset + static_cast<std::size_t>(i) * 4, 4);
            t[i] = f;
        }
    }
}

class Reader {
public:
    Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    void need(std::size_t n, const std::string& field) const {
        if (pos_ + n > bytes_.size())
            throw IoError(what_ + ": truncated at byte " + std::to_string(pos_) + " reading " + field + ": need " +
                          std::to_string(pos_ + n) + " bytes, file has " + std::to_string(bytes_.size()));
    }
    std::uint32_t u32(const std::string& field) {
        need(4, field);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const std::string& field) {
        need(8, field);
        std::uint64_t v;
        std::memcpy(&v, bytes_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    std::string take(std::size_t n, const std::string& field) {
        need(n, field);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::string fail_at(std::size_t offset, const std::string& msg) const {
        return what_ + ": byte " + std::to_string(offset) + ": " + msg;
    }

private:
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string encode_tvid(const std::vector<VideoClip>& clips) {
    if (clips.empty()) throw ShapeError("tvid: nothing to write");
    const Shape& s = clips.front().data.shape();
    if (s.size() != 4) throw ShapeError("tvid: clips must be [C, T, H, W], got " + shape_str(s));
    for (const auto& c : clips) require_same_shape(c.data, clips.front().data, "tvid clips");
    std::string out = "TVID";
    put_u32(out, kTvidVersion);
    put_u32(out, static_cast<std::uint32_t>(clips.size()));
    for (auto d : s) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, 0);
    for (const auto& c : clips) put_floats(out, c.data);
    return out;
}

std::vector<VideoClip> decode_tvid(const std::string& bytes) {
    Reader r(bytes, "tvid");
    if (r.take(4, "magic") != "TVID") throw IoError(r.fail_at(0, "bad magic, expected \"TVID\""));
    const auto version = r.u32("version");
    if (version != kTvidVersion)
        throw IoError(r.fail_at(4, "unsupported version " + std::to_string(version)));
    std::uint32_t dims[5];
    const char* names[5] = {"N", "C", "T", "H", "W"};
    for (int i = 0; i < 5; ++i) {
        dims[i] = r.u32(names[i]);
        if (dims[i] == 0) throw IoError(r.fail_at(8 + 4 * static_cast<std::size_t>(i), std::string("zero extent ") + names[i]));
    }
    const auto dtype = r.u32("dtype");
    if (dtype != 0) throw IoError(r.fail_at(28, "unsupported dtype code " + std::to_string(dtype)));
    const std::uint64_t per = std::uint64_t{dims[1]} * dims[2] * dims[3] * dims[4];
    const std::uint64_t body = per * dims[0] * 4;
    if (bytes.size() != kTvidHeaderBytes + body)
        throw IoError("tvid: body length mismatch: expected " + std::to_string(kTvidHeaderBytes + body) +
                      " bytes in total, file has " + std::to_string(bytes.size()));
    std::vector<VideoClip> clips;
    for (std::uint32_t n = 0; n < dims[0]; ++n) {
        Tensor t({dims[1], dims[2], dims[3], dims[4]});
        get_floats(bytes, kTvidHeaderBytes + n * per * 4, t);
        clips.emplace_back(std::move(t));
    }
    return clips;
}

void write_tvid(const fs::path& path, const std::vector<VideoClip>& clips) { write_file_atomic(path, encode_tvid(clips)); }

std::vector<VideoClip> read_tvid(const fs::path& path) {
    try {
        return decode_tvid(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

VideoClip read_single_tvid(const fs::path& path) {
    auto clips = read_tvid(path);
    if (clips.size() != 1) throw IoError(path.string() + ": expected one clip, found " + std::to_string(clips.size()));
    return std::move(clips.front());
}

std::string encode_pgm(const Tensor& frame, std::int64_t* clamped) {
    if (frame.rank() != 2) throw ShapeError("pgm: frame must be [H, W]");
    std::string out = "P5\n" + std::to_string(frame.dim(1)) + " " + std::to_string(frame.dim(0)) + "\n255\n";
    std::int64_t clamps = 0;
    for (Real v : frame.values()) {
        double x = static_cast<double>(v);
        if (!(x >= 0.0 && x <= 1.0)) {
            ++clamps;
            x = std::isnan(x) ? 0.0 : std::clamp(x, 0.0, 1.0);
        }
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::floor(x * 255.0 + 0.5))));
    }
    if (clamped) *clamped += clamps;
    return out;
}

Tensor decode_pgm(const std::string& bytes) {
    std::istringstream in(bytes);
    std::string magic;
    std::int64_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (!in || magic != "P5") throw IoError("pgm: expected a binary P5 header");
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError("pgm: unsupported dimensions or maxval");
    in.get();
    const auto offset = static_cast<std::size_t>(in.tellg());
    if (bytes.size() != offset + static_cast<std::size_t>(w * h))
        throw IoError("pgm: expected " + std::to_string(offset + static_cast<std::size_t>(w * h)) + " bytes, got " +
                      std::to_string(bytes.size()));
    Tensor t({h, w});
    for (std::int64_t i = 0; i < w * h; ++i)
        t[i] = static_cast<Real>(static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]) / 255.0);
    return t;
}

std::int64_t export_frames(const VideoClip& video, const fs::path& dir) {
    std::int64_t clamped = 0;
    for (std::int64_t t = 0; t < video.frames(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03lld.pgm", static_cast<long long>(t));
        write_file_atomic(dir / name, encode_pgm(video.frame(t, 0), &clamped));
    }
    return clamped;
}

std::string encode_checkpoint(const ParamStore& params, const nlohmann::json& meta) {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["meta"] = meta;
    nlohmann::json dir = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, var] : params) {
        const std::uint64_t length = static_cast<std::uint64_t>(var.value().numel()) * 4;
        dir[name] = {{"shape", var.shape()}, {"offset", offset}, {"length", length}};
        offset += length;
    }
    header["params"] = dir;
    const std::string text = header.dump();
    std::string out = "ADCK";
    put_u32(out, kCheckpointVersion);
    put_u64(out, text.size());
    out += text;
    for (const auto& [name, var] : params) put_floats(out, var.value());
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes, "checkpoint");
    if (r.take(4, "magic") != "ADCK") throw IoError(r.fail_at(0, "bad magic, expected \"ADCK\""));
    const auto version = r.u32("version");
    if (version != kCheckpointVersion) throw IoError(r.fail_at(4, "unsupported version " + std::to_string(version)));
    const auto header_len = r.u64("header length");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.take(static_cast<std::size_t>(header_len), "header"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(r.fail_at(16, std::string("malformed header: ") + e.what()));
    }
    const std::size_t body = r.pos();
    Checkpoint ck;
    ck.meta = header.value("meta", nlohmann::json::object());
    std::uint64_t expected = 0;
    try {
        for (const auto& [name, entry] : header.at("params").items()) {
            const Shape shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto length = entry.at("length").get<std::uint64_t>();
            if (offset != expected || length != static_cast<std::uint64_t>(shape_numel(shape)) * 4)
                throw IoError("checkpoint: parameter " + name + " has an inconsistent offset or length");
            if (body + offset + length > bytes.size())
                throw IoError("checkpoint: parameter " + name + " needs bytes up to " +
                              std::to_string(body + offset + length) + ", file has " + std::to_string(bytes.size()));
            Tensor t(shape);
            get_floats(bytes, body + static_cast<std::size_t>(offset), t);
            ck.params.add(name, std::move(t));
            expected = offset + length;
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: malformed parameter directory: ") + e.what());
    }
    if (body + expected != bytes.size())
        throw IoError("checkpoint: expected " + std::to_string(body + expected) + " bytes, file has " +
                      std::to_string(bytes.size()));
    return ck;
}

void save_checkpoint(const fs::path& path, const ParamStore& params, const nlohmann::json& meta) {
    write_file_atomic(path, encode_checkpoint(params, meta));
}

Checkpoint load_checkpoint(const fs::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace angiodit::cli
