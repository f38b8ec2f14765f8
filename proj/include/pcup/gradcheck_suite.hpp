#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pcup/gradcheck.hpp"

namespace pcup {

// Finite-difference sweep over every differentiable operation plus a small
// end-to-end cascade. Returns (op name, worst relative error) in a stable
// order. `corrupt` names an op whose result is deliberately invalidated, as
// a negative control of the runner.
std::vector<std::pair<std::string, double>> run_gradcheck_suite(
    uint64_t seed, const std::string& corrupt = "");

constexpr double kGradCheckTolerance = 1e-4;

}  // namespace pcup
