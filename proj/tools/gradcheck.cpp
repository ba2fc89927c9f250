#include <chrono>
#include <iostream>

#include <json.hpp>

#include "angiodit/verify/gradient_suite.hpp"

// Runs the 64-bit finite-difference suite and prints a JSON report to stdout.
// Exit status 0 when every check passes, 5 otherwise.
int main() {
    const auto start = std::chrono::steady_clock::now();
    const auto entries = angiodit::verify::run_gradient_suite();
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    nlohmann::json checks = nlohmann::json::array();
    double worst = 0;
    bool passed = true;
    for (const auto& e : entries) {
        worst = std::max(worst, e.result.max_rel_error);
        passed = passed && e.passed() && e.result.checked > 0;
        checks.push_back({{"name", e.name},
                          {"max_rel_error", e.result.max_rel_error},
                          {"worst_param", e.result.worst_param},
                          {"coordinates", e.result.checked},
                          {"passed", e.passed()}});
        std::cerr << (e.passed() ? "pass " : "FAIL ") << e.name << "  max rel error " << e.result.max_rel_error << "\n";
    }
    std::cerr << "max relative error " << worst << " (tolerance " << angiodit::verify::kGradientTolerance << "), "
              << seconds << " s\n";
    const nlohmann::json report = {{"passed", passed},
                                   {"max_rel_error", worst},
                                   {"tolerance", angiodit::verify::kGradientTolerance},
                                   {"checks", checks}};
    std::cout << report.dump(2) << std::endl;
    return passed ? 0 : 5;
}
