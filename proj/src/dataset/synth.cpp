#include "angiodit/dataset/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "angiodit/core/error.hpp"

namespace angiodit::dataset {

namespace {

struct Segment {
    double x0, y0, x1, y1;
    double width;  // normalized
};

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

double ramp(double e0, double e1, double x) { return std::clamp((x - e0) / (e1 - e0), 0.0, 1.0); }

void grow(std::vector<Segment>& out, Rng& rng, double x, double y, double angle, double width, int depth,
          double tortuosity) {
    const int steps = 4 + static_cast<int>(rng.index(3));
    const double step = 0.04;
    for (int s = 0; s < steps; ++s) {
        angle += tortuosity * 0.6 * rng.normal();
        const double nx = x + step * std::cos(angle), ny = y + step * std::sin(angle);
        out.push_back({x, y, nx, ny, width});
        x = nx;
        y = ny;
        if (x < -0.05 || x > 1.05 || y < -0.05 || y > 1.05) return;
    }
    if (depth <= 0) return;
    const double spread = 0.35 + 0.25 * rng.uniform();
    grow(out, rng, x, y, angle + spread, width * 0.72, depth - 1, tortuosity);
    grow(out, rng, x, y, angle - spread, width * 0.72, depth - 1, tortuosity);
}

// Max over segments of a Gaussian cross-section profile, written into map.
void rasterize(const std::vector<Segment>& segs, Tensor& map, std::int64_t h, std::int64_t w, double min_px = 0.6) {
    const double sx = static_cast<double>(w), sy = static_cast<double>(h);
    for (const Segment& s : segs) {
        const double ax = s.x0 * sx, ay = s.y0 * sy, bx = s.x1 * sx, by = s.y1 * sy;
        const double wp = std::max(min_px, s.width * sx);
        const double reach = 3.0 * wp;
        const auto xlo = static_cast<std::int64_t>(std::max(0.0, std::floor(std::min(ax, bx) - reach)));
        const auto xhi = static_cast<std::int64_t>(std::min(sx - 1, std::ceil(std::max(ax, bx) + reach)));
        const auto ylo = static_cast<std::int64_t>(std::max(0.0, std::floor(std::min(ay, by) - reach)));
        const auto yhi = static_cast<std::int64_t>(std::min(sy - 1, std::ceil(std::max(ay, by) + reach)));
        const double dx = bx - ax, dy = by - ay, len2 = dx * dx + dy * dy;
        for (std::int64_t y = ylo; y <= yhi; ++y)
            for (std::int64_t x = xlo; x <= xhi; ++x) {
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double ex = ax + t * dx - px, ey = ay + t * dy - py;
                const double v = std::exp(-(ex * ex + ey * ey) / (wp * wp));
                Real& m = map[y * w + x];
                m = std::max(m, static_cast<Real>(v));
            }
    }
}

bool inside_polygon(const std::vector<std::array<double, 2>>& poly, double x, double y) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
    }
    return in;
}

std::vector<std::array<double, 2>> nonperfusion_polygon(const LesionPlacement& p) {
    Rng rng = Rng::derive(p.seed, 3);
    std::vector<std::array<double, 2>> poly;
    const int n = 6;
    const double phase = rng.uniform() * 2.0 * std::numbers::pi;
    for (int i = 0; i < n; ++i) {
        const double a = phase + 2.0 * std::numbers::pi * i / n;
        const double r = p.radius * (0.7 + 0.3 * rng.uniform());
        poly.push_back({p.cx + r * std::cos(a), p.cy + r * std::sin(a)});
    }
    return poly;
}

// Dot centres of a microaneurysm cluster, normalized.
std::vector<std::array<double, 2>> microaneurysm_dots(const LesionPlacement& p) {
    Rng rng = Rng::derive(p.seed, 4);
    const int n = 6 + static_cast<int>(rng.index(6));
    std::vector<std::array<double, 2>> dots;
    for (int i = 0; i < n; ++i) {
        const double a = rng.uniform() * 2.0 * std::numbers::pi;
        const double r = p.radius * std::sqrt(rng.uniform());
        dots.push_back({p.cx + r * std::cos(a), p.cy + r * std::sin(a)});
    }
    return dots;
}

double gauss(double dx, double dy, double sigma) { return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)); }

LesionPlacement place(Lesion kind, Rng& rng, Laterality lat) {
    LesionPlacement p;
    p.kind = kind;
    p.seed = rng.next_u64();
    const auto disc = disc_center(lat);
    const auto mac = macula_center(lat);
    double cx = 0.5, cy = 0.5, r = 0.1;
    switch (kind) {
        case Lesion::Microaneurysms:
            r = 0.16;
            cx = mac[0] + rng.uniform(-0.1f, 0.1f);
            cy = mac[1] + rng.uniform(-0.1f, 0.1f);
            break;
        case Lesion::Leakage:
            r = rng.uniform(0.08f, 0.11f);
            cx = rng.uniform(0.25f, 0.75f);
            cy = rng.uniform(0.25f, 0.75f);
            break;
        case Lesion::NonPerfusion:
            r = rng.uniform(0.15f, 0.2f);
            cx = rng.uniform(0.25f, 0.75f);
            cy = rng.uniform(0.25f, 0.75f);
            break;
        case Lesion::Neovascularization: {
            r = 0.06;
            const double a = rng.uniform() * 2.0 * std::numbers::pi;
            const double d = rng.uniform(0.14f, 0.22f);
            cx = disc[0] + d * std::cos(a);
            cy = disc[1] + d * std::sin(a);
            break;
        }
        case Lesion::DiscStaining:
            r = 0.08;
            cx = disc[0];
            cy = disc[1];
            break;
        case Lesion::MacularEdema:
            r = 0.1;
            cx = mac[0];
            cy = mac[1];
            break;
    }
    p.radius = static_cast<Real>(r);
    p.cx = static_cast<Real>(std::clamp(cx, r, 1.0 - r));
    p.cy = static_cast<Real>(std::clamp(cy, r, 1.0 - r));
    return p;
}

}  // namespace

const char* lesion_name(Lesion lesion) {
    switch (lesion) {
        case Lesion::Microaneurysms: return "microaneurysms";
        case Lesion::Leakage: return "leakage";
        case Lesion::NonPerfusion: return "non-perfusion";
        case Lesion::Neovascularization: return "neovascularization";
        case Lesion::DiscStaining: return "disc staining";
        case Lesion::MacularEdema: return "macular edema";
    }
    return "?";
}

std::vector<Lesion> all_lesions() {
    std::vector<Lesion> out;
    for (int i = 0; i < kLesionCount; ++i) out.push_back(static_cast<Lesion>(i));
    return out;
}

std::array<Real, 2> disc_center(Laterality laterality) {
    return laterality == Laterality::Right ? std::array<Real, 2>{0.68f, 0.5f} : std::array<Real, 2>{0.32f, 0.5f};
}

std::array<Real, 2> macula_center(Laterality laterality) {
    return laterality == Laterality::Right ? std::array<Real, 2>{0.38f, 0.52f} : std::array<Real, 2>{0.62f, 0.52f};
}

SyntheticCase SyntheticCase::random(std::uint64_t seed, std::vector<Lesion> lesions) {
    std::sort(lesions.begin(), lesions.end());
    lesions.erase(std::unique(lesions.begin(), lesions.end()), lesions.end());
    Rng rng = Rng::derive(seed, 1);
    SyntheticCase c;
    c.seed = seed;
    c.laterality = rng.bernoulli(0.5) ? Laterality::Left : Laterality::Right;
    c.branch_count = 4 + static_cast<int>(rng.index(3));
    c.tortuosity = rng.uniform(0.15f, 0.45f);
    c.phase_onsets = {rng.uniform(0.05f, 0.15f), rng.uniform(0.3f, 0.42f), rng.uniform(0.6f, 0.72f)};
    c.lesions = lesions;
    for (Lesion l : lesions) c.placements.push_back(place(l, rng, c.laterality));
    c.validate();
    return c;
}

bool SyntheticCase::has(Lesion lesion) const {
    return std::find(lesions.begin(), lesions.end(), lesion) != lesions.end();
}

void SyntheticCase::validate() const {
    const auto& o = phase_onsets;
    if (!(0.0f <= o[0] && o[0] < o[1] && o[1] < o[2] && o[2] <= 1.0f))
        throw ConfigError("synthetic case: phase onsets must increase strictly within [0, 1]");
    if (branch_count < 1) throw ConfigError("synthetic case: need at least one vessel branch");
    for (std::size_t i = 1; i < lesions.size(); ++i)
        if (!(lesions[i - 1] < lesions[i])) throw ConfigError("synthetic case: lesions must be sorted and unique");
    if (placements.size() != lesions.size()) throw ConfigError("synthetic case: one placement per lesion");
    for (std::size_t i = 0; i < placements.size(); ++i) {
        const auto& p = placements[i];
        if (p.kind != lesions[i]) throw ConfigError("synthetic case: placement order differs from lesion order");
        if (!(p.radius > 0 && p.cx - p.radius >= 0 && p.cx + p.radius <= 1 && p.cy - p.radius >= 0 &&
              p.cy + p.radius <= 1))
            throw ConfigError(std::string("synthetic case: ") + lesion_name(p.kind) + " placement leaves the frame");
    }
}

std::vector<Lesion> random_lesion_set(Rng& rng, double p) {
    std::vector<Lesion> out;
    for (Lesion l : all_lesions())
        if (rng.bernoulli(p)) out.push_back(l);
    return out;
}

CaseMaps case_maps(const SyntheticCase& c, std::int64_t height, std::int64_t width) {
    CaseMaps m;
    m.height = height;
    m.width = width;
    m.arteries = Tensor({height, width});
    m.veins = Tensor({height, width});
    m.perfused = Tensor({height, width}, 1.0f);
    m.background = Tensor({height, width});

    Rng tree = Rng::derive(c.seed, 2);
    const auto disc = disc_center(c.laterality);
    std::vector<Segment> art, vein;
    for (int b = 0; b < c.branch_count; ++b) {
        const double angle = 2.0 * std::numbers::pi * b / c.branch_count + tree.uniform(-0.3f, 0.3f);
        const double x = disc[0] + 0.05 * std::cos(angle), y = disc[1] + 0.05 * std::sin(angle);
        grow(b % 2 ? vein : art, tree, x, y, angle, 0.022, 2, c.tortuosity);
    }
    rasterize(art, m.arteries, height, width);
    rasterize(vein, m.veins, height, width);

    for (const auto& p : c.placements) {
        if (p.kind != Lesion::NonPerfusion) continue;
        const auto poly = nonperfusion_polygon(p);
        for (std::int64_t y = 0; y < height; ++y)
            for (std::int64_t x = 0; x < width; ++x) {
                const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
                const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
                if (inside_polygon(poly, u, v)) m.perfused[y * width + x] = 0.0f;
            }
    }

    Rng tex = Rng::derive(c.seed, 5);
    struct Wave { double fx, fy, phase, amp; };
    std::vector<Wave> waves;
    for (int i = 0; i < 6; ++i)
        waves.push_back({tex.uniform(1.0f, 5.0f), tex.uniform(1.0f, 5.0f), tex.uniform(0.0f, 6.28f), 0.004});
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
            const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
            double s = 0;
            for (const auto& w : waves) s += w.amp * std::cos(2 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
            m.background[y * width + x] = static_cast<Real>(s);
        }
    return m;
}

VideoClip synth_render(const SyntheticCase& c, std::int64_t frames, std::int64_t height, std::int64_t width) {
    if (frames < 2) throw ShapeError("synth_render: need at least 2 frames");
    if (height < 8 || width < 8) throw ShapeError("synth_render: frame must be at least 8x8");
    c.validate();
    const CaseMaps m = case_maps(c, height, width);
    const double a_on = c.phase_onsets[0], v_on = c.phase_onsets[1], l_on = c.phase_onsets[2];
    const auto disc = disc_center(c.laterality);
    const double sx = static_cast<double>(width), sy = static_cast<double>(height);

    // Static lesion geometry.
    std::vector<std::array<double, 2>> dots;
    std::vector<Segment> tuft;
    for (const auto& p : c.placements) {
        if (p.kind == Lesion::Microaneurysms) dots = microaneurysm_dots(p);
        if (p.kind == Lesion::Neovascularization) {
            Rng rng = Rng::derive(p.seed, 6);
            for (int i = 0; i < 5; ++i) grow(tuft, rng, p.cx, p.cy, rng.uniform() * 6.28, 0.008, 0, 1.2);
        }
    }
    Tensor neo({height, width});
    if (!tuft.empty()) {
        for (auto& s : tuft) {
            // Keep the tuft compact around its centre.
            s.x1 = s.x0 + 0.4 * (s.x1 - s.x0);
            s.y1 = s.y0 + 0.4 * (s.y1 - s.y0);
        }
        rasterize(tuft, neo, height, width, 0.5);
    }

    VideoClip out(1, frames, height, width);
    for (std::int64_t j = 0; j < frames; ++j) {
        const double tau = static_cast<double>(j) / static_cast<double>(frames - 1);
        const double fill_a = smoothstep(a_on, a_on + 0.12, tau);
        const double fill_v = smoothstep(v_on - 0.05, v_on + 0.1, tau);
        const double late = smoothstep(l_on, 1.0, tau);
        const double grow_late = ramp(v_on, 1.0, tau);  // strictly increasing after the venous onset
        const double art_i = 0.35 + 0.5 * fill_a - 0.08 * late;
        const double vein_i = 0.35 + 0.5 * fill_v - 0.08 * late;
        const double bg_level = 0.06 + 0.08 * fill_a;

        for (std::int64_t y = 0; y < height; ++y)
            for (std::int64_t x = 0; x < width; ++x) {
                const std::int64_t k = y * width + x;
                const double u = (static_cast<double>(x) + 0.5) / sx, v = (static_cast<double>(y) + 0.5) / sy;
                const double perf = m.perfused[k];
                double px = (bg_level + m.background[k]) * (perf > 0 ? 1.0 : 0.5);
                px += perf * std::max(art_i * m.arteries[k], vein_i * m.veins[k]);
                px += 0.2 * fill_a * gauss(u - disc[0], v - disc[1], 0.035);
                for (const auto& p : c.placements) {
                    const double du = u - p.cx, dv = v - p.cy;
                    switch (p.kind) {
                        case Lesion::Microaneurysms:
                            for (const auto& d : dots)
                                px += 0.5 * fill_v * gauss((u - d[0]) * sx, (v - d[1]) * sy, std::max(0.7 * sx / 64.0, 0.8));
                            break;
                        case Lesion::Leakage:
                            px += 0.5 * grow_late * gauss(du, dv, p.radius * (0.5 + 0.8 * grow_late));
                            break;
                        case Lesion::NonPerfusion:
                            break;
                        case Lesion::Neovascularization: {
                            // New vessels leak early, already during venous filling.
                            const double early = smoothstep(a_on, v_on + 0.1, tau);
                            px += (0.4 + 0.5 * fill_a) * neo[k] + 0.55 * early * gauss(du, dv, p.radius * (0.6 + 0.6 * early));
                            break;
                        }
                        case Lesion::DiscStaining: {
                            const double r = std::sqrt(du * du + dv * dv);
                            px += 0.45 * grow_late * std::exp(-std::pow((r - p.radius) / (0.3 * p.radius), 2));
                            break;
                        }
                        case Lesion::MacularEdema: {
                            double petals = gauss(du, dv, 0.25 * p.radius);
                            for (int i = 0; i < 6; ++i) {
                                const double a = std::numbers::pi * i / 3.0;
                                petals += gauss(du - 0.55 * p.radius * std::cos(a), dv - 0.55 * p.radius * std::sin(a),
                                                0.22 * p.radius);
                            }
                            px += 0.4 * late * std::min(1.0, petals);
                            break;
                        }
                    }
                }
                out.at(0, j, y, x) = static_cast<Real>(std::clamp(px, 0.0, 1.0));
            }
    }
    return out;
}

}  // namespace angiodit::dataset
