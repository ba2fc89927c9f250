#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "angiodit/core/video_clip.hpp"
#include "angiodit/numerics/random.hpp"

namespace angiodit::dataset {

enum class Laterality { Left, Right };

// Canonical order; reports list lesions in this order.
enum class Lesion { Microaneurysms, Leakage, NonPerfusion, Neovascularization, DiscStaining, MacularEdema };
inline constexpr int kLesionCount = 6;
const char* lesion_name(Lesion lesion);
std::vector<Lesion> all_lesions();

// Where one lesion sits, in normalized [0, 1] image coordinates.
struct LesionPlacement {
    Lesion kind = Lesion::Microaneurysms;
    Real cx = 0.5f;
    Real cy = 0.5f;
    Real radius = 0.1f;
    std::uint64_t seed = 0;  // fine detail (dot positions, polygon vertices)
};

struct SyntheticCase {
    std::uint64_t seed = 0;
    Laterality laterality = Laterality::Right;
    int branch_count = 5;
    Real tortuosity = 0.3f;
    // Arterial, venous and late onsets as fractions of the sequence.
    std::array<Real, 3> phase_onsets{0.1f, 0.35f, 0.65f};
    std::vector<Lesion> lesions;  // sorted, unique
    std::vector<LesionPlacement> placements;

    // Draws every parameter from `seed` for the given lesion set.
    static SyntheticCase random(std::uint64_t seed, std::vector<Lesion> lesions);

    bool has(Lesion lesion) const;
    // Throws ConfigError unless onsets increase within [0, 1] and every
    // placement lies inside the frame.
    void validate() const;
};

// Random lesion subset: each lesion independently with probability p.
std::vector<Lesion> random_lesion_set(Rng& rng, double p = 0.3);

// Optic disc centre for a laterality, normalized coordinates.
std::array<Real, 2> disc_center(Laterality laterality);
std::array<Real, 2> macula_center(Laterality laterality);

// Per-pixel component maps of a case at a given resolution, used by the
// renderer and exposed for tests.
struct CaseMaps {
    std::int64_t height = 0;
    std::int64_t width = 0;
    Tensor arteries;    // [H, W] vessel profile in [0, 1]
    Tensor veins;       // [H, W]
    Tensor perfused;    // [H, W] 0 inside non-perfusion regions, else 1
    Tensor background;  // [H, W] static choroidal texture
};
CaseMaps case_maps(const SyntheticCase& c, std::int64_t height, std::int64_t width);

// Renders an angiography-like sequence [1, frames, H, W] with values in [0, 1].
VideoClip synth_render(const SyntheticCase& c, std::int64_t frames, std::int64_t height, std::int64_t width);

}  // namespace angiodit::dataset
