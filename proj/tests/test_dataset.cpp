#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "angiodit/core/error.hpp"
#include "angiodit/dataset/manifest.hpp"
#include "angiodit/dataset/preprocess.hpp"
#include "angiodit/dataset/report.hpp"
#include "angiodit/dataset/synth.hpp"

using namespace angiodit;
using namespace angiodit::dataset;

namespace {

// Mean over a disc of normalized radius r around (cx, cy) in frame t.
double region_mean(const VideoClip& v, std::int64_t t, double cx, double cy, double r) {
    double s = 0;
    int n = 0;
    for (std::int64_t y = 0; y < v.height(); ++y)
        for (std::int64_t x = 0; x < v.width(); ++x) {
            const double u = (x + 0.5) / v.width(), w = (y + 0.5) / v.height();
            if ((u - cx) * (u - cx) + (w - cy) * (w - cy) <= r * r) {
                s += v.at(0, t, y, x);
                ++n;
            }
        }
    return s / n;
}

VideoClip ramp_clip(std::int64_t frames) {
    VideoClip v(1, frames, 3, 2);
    for (std::int64_t t = 0; t < frames; ++t)
        for (std::int64_t i = 0; i < 6; ++i) v.data[t * 6 + i] = static_cast<Real>(t * 10 + i);
    return v;
}

}  // namespace

TEST_CASE("renderer is deterministic, bounded and keeps every frame") {
    Rng pick(1);
    for (int i = 0; i < 12; ++i) {
        SyntheticCase c = SyntheticCase::random(1000 + i, random_lesion_set(pick, 0.4));
        VideoClip a = synth_render(c, 9, 64, 64);
        VideoClip b = synth_render(c, 9, 64, 64);
        CHECK(max_abs_diff(a.data, b.data) == 0);
        for (Real v : a.data.values()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(min_vessel_area_ratio(a) >= kVesselThreshold);
    }
    CHECK_THROWS_AS(synth_render(SyntheticCase::random(1, {}), 1, 64, 64), ShapeError);
}

TEST_CASE("case parameters are valid") {
    for (std::uint64_t s = 0; s < 200; ++s) {
        SyntheticCase c = SyntheticCase::random(s, all_lesions());
        const auto& o = c.phase_onsets;
        CHECK(o[0] < o[1]);
        CHECK(o[1] < o[2]);
        for (const auto& p : c.placements) {
            CHECK(p.cx - p.radius >= 0);
            CHECK(p.cx + p.radius <= 1);
            CHECK(p.cy - p.radius >= 0);
            CHECK(p.cy + p.radius <= 1);
        }
    }
    SyntheticCase bad = SyntheticCase::random(3, {});
    bad.phase_onsets = {0.5f, 0.4f, 0.9f};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("lesion-free late phase has no growing blob") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        SyntheticCase c = SyntheticCase::random(50 + s, {});
        const std::int64_t frames = 21;
        VideoClip v = synth_render(c, frames, 64, 64);
        CaseMaps m = case_maps(c, 64, 64);
        const auto venous = static_cast<std::int64_t>(std::ceil((c.phase_onsets[1] + 0.1) * (frames - 1)));
        double worst = 0;
        for (std::int64_t k = 0; k < 64 * 64; ++k) {
            if (m.arteries[k] > 0.05f || m.veins[k] > 0.05f) continue;
            worst = std::max(worst, double(v.data[(frames - 1) * 4096 + k]) - v.data[venous * 4096 + k]);
        }
        CHECK(worst < 0.05);
    }
}

TEST_CASE("leakage region brightens through the last third") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        SyntheticCase c = SyntheticCase::random(70 + s, {Lesion::Leakage});
        const auto& p = c.placements.front();
        const std::int64_t frames = 21;
        VideoClip v = synth_render(c, frames, 64, 64);
        for (std::int64_t t = frames - frames / 3; t < frames; ++t)
            CHECK(region_mean(v, t, p.cx, p.cy, p.radius) > region_mean(v, t - 1, p.cx, p.cy, p.radius));
    }
}

TEST_CASE("non-perfusion erases vessels inside its region") {
    SyntheticCase c = SyntheticCase::random(90, {Lesion::NonPerfusion});
    CaseMaps m = case_maps(c, 64, 64);
    VideoClip v = synth_render(c, 9, 64, 64);
    const auto disc = disc_center(c.laterality);
    int inside = 0;
    for (std::int64_t k = 0; k < 4096; ++k) {
        const double u = (k % 64 + 0.5) / 64 - disc[0], w = (k / 64 + 0.5) / 64 - disc[1];
        if (m.perfused[k] == 0 && u * u + w * w > 0.12 * 0.12) {
            ++inside;
            CHECK(v.data[8 * 4096 + k] < 0.15f);
        }
    }
    CHECK(inside > 20);
}

TEST_CASE("reports") {
    const Vocabulary& vocab = Vocabulary::standard();
    SyntheticCase empty = SyntheticCase::random(5, {});
    Report r = case_to_report(empty);
    CHECK(r.text.find("No obvious abnormalities") != std::string::npos);
    for (auto id : r.token_ids) {
        const std::string& w = vocab.word(id);
        CHECK((w == "left" || w == "right" || w == "eye" || w == "ffa"));
    }

    SyntheticCase two = SyntheticCase::random(6, {Lesion::Leakage, Lesion::Microaneurysms});
    Report r2 = case_to_report(two);
    std::set<std::int64_t> ids(r2.token_ids.begin(), r2.token_ids.end());
    CHECK(ids.count(vocab.id("microaneurysms")) == 1);
    CHECK(ids.count(vocab.id("leakage")) == 1);
    for (const char* w : {"non-perfusion", "neovascularization", "staining", "edema"}) CHECK(ids.count(vocab.id(w)) == 0);
    CHECK(r2.text.rfind("microaneurysms,leakage,", 0) == 0);

    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        SyntheticCase c = SyntheticCase::random(10000 + i, random_lesion_set(rng, 0.4));
        Report rep = case_to_report(c);
        ParsedReport parsed = parse_report(rep.text);
        CHECK(parsed.lesions == c.lesions);
        CHECK(parsed.laterality == c.laterality);
        CHECK(lesions_in_tokens(rep.token_ids) == c.lesions);
        CHECK(rep.token_ids == lesion_tokens(c.lesions, c.laterality));
    }
    CHECK_THROWS_AS(parse_report("leakage, without a header"), ConfigError);
    CHECK_THROWS_AS(parse_report("glaucoma,Left eye FFA: 1. x"), ConfigError);

    CHECK(vocab.tokenize("Leakage, RIGHT eye; unknown words") ==
          std::vector<std::int64_t>{vocab.id("leakage"), vocab.id("right"), vocab.id("eye")});
}

TEST_CASE("standardize_frames") {
    for (std::int64_t n : {2L, 5L, 20L, 21L, 22L, 100L}) {
        VideoClip v = standardize_frames(ramp_clip(n));
        CHECK(v.frames() == 21);
    }
    VideoClip same = ramp_clip(21);
    CHECK(max_abs_diff(standardize_frames(same).data, same.data) == 0);

    // Longer inputs keep the last 21 frames in forward order.
    VideoClip longer = standardize_frames(ramp_clip(30));
    for (std::int64_t t = 0; t < 21; ++t) CHECK(longer.data[t * 6] == static_cast<Real>((t + 9) * 10));

    VideoClip two(1, 2, 2, 2);
    for (int i = 0; i < 4; ++i) two.data[4 + i] = 1.0f;
    VideoClip out = standardize_frames(two);
    for (std::int64_t j = 0; j < 21; ++j)
        for (int i = 0; i < 4; ++i) CHECK(out.data[j * 4 + i] == static_cast<Real>(j / 20.0));

    // Convex midpoint: 100 and 200 at t = 0.5 give 150 (the subtractive form would give -50).
    VideoClip pair(1, 2, 1, 1);
    pair.data[0] = 100;
    pair.data[1] = 200;
    VideoClip mid = standardize_frames(pair, 3);
    CHECK(mid.data[1] == 150.0f);

    // Convexity and monotone positions on random input.
    Rng rng(8);
    VideoClip rnd(1, 7, 4, 4);
    for (auto& x : rnd.data.values()) x = rng.uniform();
    VideoClip s = standardize_frames(rnd);
    for (std::int64_t j = 0; j < 21; ++j) {
        const double p = j * 6.0 / 20.0;
        const auto i = std::min<std::int64_t>(5, static_cast<std::int64_t>(p));
        for (int k = 0; k < 16; ++k) {
            const Real a = rnd.data[i * 16 + k], b = rnd.data[(i + 1) * 16 + k];
            CHECK(s.data[j * 16 + k] >= std::min(a, b) - 1e-6f);
            CHECK(s.data[j * 16 + k] <= std::max(a, b) + 1e-6f);
        }
    }
    CHECK_THROWS_AS(standardize_frames(ramp_clip(1)), ShapeError);
}

TEST_CASE("vessel area ratio") {
    CHECK(vessel_area_ratio(Tensor({10, 10})) == 0.0);
    Tensor f({10, 10});
    f[3] = 1.0f;
    CHECK(vessel_area_ratio(f) == doctest::Approx(0.01));
    Tensor g({20, 20});
    for (int i = 0; i < 4; ++i) g[i * 37] = 1.0f;
    CHECK(vessel_area_ratio(g) == doctest::Approx(0.01));
}

TEST_CASE("filter flags without deleting") {
    DatasetManifest m;
    std::map<std::string, VideoClip> store;
    Rng rng(9);
    for (int i = 0; i < 12; ++i) {
        ManifestRecord r;
        r.id = "v" + std::to_string(i);
        r.video_path = r.id;
        r.report_text = "r" + std::to_string(i);
        m.records.push_back(r);
        VideoClip v(1, 3, 16, 16, 0.1f);
        // Vessel fraction varies around the threshold.
        const int lit = i * 1;
        for (std::int64_t t = 0; t < 3; ++t)
            for (int k = 0; k < lit; ++k) v.data[t * 256 + k * 7] = 0.9f;
        if (i == 5) v.data[256 + 7] = 0.1f;  // one frame drops a vessel pixel
        store[r.id] = v;
    }
    m.records.push_back({"broken", "missing", "rx", {}, "", 0, true, ""});
    VideoLoader load = [&](const std::string& p) {
        auto it = store.find(p);
        if (it == store.end()) throw IoError("no such video: " + p);
        return it->second;
    };
    DatasetManifest f = filter_dataset(m, load, kVesselThreshold);
    REQUIRE(f.records.size() == m.records.size());
    for (const auto& r : f.records) {
        if (r.id == "broken") {
            CHECK_FALSE(r.kept);
            CHECK(r.error.find("no such video") != std::string::npos);
            continue;
        }
        // Independent pass: count bright pixels per frame directly.
        const VideoClip& v = store[r.id];
        bool keep = true;
        for (std::int64_t t = 0; t < 3; ++t) {
            int bright = 0;
            for (int k = 0; k < 256; ++k) bright += v.data[t * 256 + k] > 0.1f + 0.15f;
            keep = keep && bright / 256.0 >= 0.005;
        }
        CHECK(r.kept == keep);
    }
    DatasetManifest all = filter_dataset(m, load, 0.0);
    for (const auto& r : all.records) CHECK(r.kept == (r.id != "broken"));

    DatasetManifest black;
    for (int i = 0; i < 3; ++i) black.records.push_back({"b" + std::to_string(i), "b", "r", {}, "", 0, true, ""});
    store["b"] = VideoClip(1, 2, 8, 8, 0.0f);
    for (const auto& r : filter_dataset(black, load).records) CHECK_FALSE(r.kept);
}

TEST_CASE("split by report") {
    DatasetManifest m;
    for (int i = 0; i < 10; ++i) m.records.push_back({"v" + std::to_string(i), "", "r" + std::to_string(i), {}, "", 0, true, ""});
    DatasetManifest s = split_dataset(m, {0.8, 0.1, 0.1}, 3);
    CHECK(s.in_split("train").size() == 8);
    CHECK(s.in_split("val").size() == 1);
    CHECK(s.in_split("test").size() == 1);
    DatasetManifest again = split_dataset(m, {0.8, 0.1, 0.1}, 3);
    CHECK(again.to_jsonl() == s.to_jsonl());

    // Shared reports stay together; unkept records get no split.
    DatasetManifest g;
    Rng rng(4);
    for (int i = 0; i < 300; ++i) {
        ManifestRecord r{"v" + std::to_string(i), "", "report" + std::to_string(rng.index(120)), {}, "", 0, i % 17 != 0, ""};
        g.records.push_back(r);
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        DatasetManifest out = split_dataset(g, {0.8, 0.1, 0.1}, seed);
        std::map<std::string, std::string> seen;
        for (const auto& r : out.records) {
            if (!r.kept) {
                CHECK(r.split.empty());
                continue;
            }
            CHECK((r.split == "train" || r.split == "val" || r.split == "test"));
            auto [it, fresh] = seen.emplace(r.report_text, r.split);
            if (!fresh) CHECK(it->second == r.split);
        }
        std::map<std::string, int> groups;
        for (const auto& [rep, sp] : seen) groups[sp]++;
        const int R = static_cast<int>(seen.size());
        CHECK(groups["train"] == std::lround(0.8 * R));
        CHECK(groups["train"] + groups["val"] == std::lround(0.9 * R));
    }
    DatasetManifest tiny;
    for (int i = 0; i < 4; ++i) tiny.records.push_back({"v", "", i < 2 ? "a" : "b", {}, "", 0, true, ""});
    CHECK_THROWS_AS(split_dataset(tiny), ConfigError);
    CHECK_THROWS_AS(split_dataset(m, {0.5, 0.1, 0.1}), ConfigError);
}

TEST_CASE("manifest JSONL round trip") {
    DatasetManifest m;
    m.records.push_back({"a", "videos/a.tvid", "leakage,Left eye FFA: 1. x", {6, 1, 3, 4}, "train", 0.0125, true, ""});
    m.records.push_back({"b", "videos/b.tvid", "Right eye FFA: 1. y", {2, 3, 4}, "", 0.0, false, "unreadable"});
    const std::string text = m.to_jsonl();
    DatasetManifest back = DatasetManifest::from_jsonl(text);
    CHECK(back.to_jsonl() == text);
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[1].error == "unreadable");
    CHECK(back.records[0].token_ids == std::vector<std::int64_t>{6, 1, 3, 4});
    CHECK_THROWS_AS(DatasetManifest::from_jsonl("{\"id\": 3}\n"), IoError);
}
