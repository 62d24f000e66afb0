#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdfn/gradcheck.hpp"

namespace sdfn {

struct SuiteCase {
  std::string component;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

/// Components covered by the suite, in run order. "full" is the whole model
/// under the total training loss.
std::vector<std::string> gradcheck_components();

// Runs one component at tiny dimensions (D=8, K=4, L=3, B=2). Inputs fed to a
// single module are parameters too, so their gradients are checked as well.
SuiteCase run_gradcheck_case(const std::string& component, std::uint64_t seed, const GradCheckOptions& options = {});

std::vector<SuiteCase> run_gradcheck_suite(std::span<const std::uint64_t> seeds,
                                           const GradCheckOptions& options = {});

}  // namespace sdfn
