#include "doctest.h"

#include "angiodit/verify/gradient_suite.hpp"

using namespace angiodit;

static_assert(sizeof(Real) == 8, "gradient checks run in the 64-bit build");

TEST_CASE("finite differences agree with reverse mode for every layer and both losses") {
    const auto entries = verify::run_gradient_suite();
    CHECK(entries.size() >= 20);
    for (const auto& e : entries) {
        INFO(e.name << ": worst " << e.result.worst_param << " analytic " << e.result.worst_analytic << " numeric "
                    << e.result.worst_numeric << " over " << e.result.checked << " coordinates");
        CHECK(e.result.checked > 0);
        CHECK(e.result.max_rel_error < verify::kGradientTolerance);
    }
}
