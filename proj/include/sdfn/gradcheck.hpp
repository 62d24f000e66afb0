#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdfn/autodiff.hpp"

namespace sdfn {

/// One evaluation of a scalar objective plus the branch signature of the tape
/// that produced it.
struct Probe {
  double value = 0.0;
  std::uint64_t signature = 0;
};

Probe probe(const Tape& tape, Var loss);

using Objective = std::function<Probe(const ParamStore&)>;
using GraphBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // When a ±step perturbation crosses a ReLU or max-pool switch, the
  // coordinate is re-differenced with step/10, at most this many times.
  int max_refinements = 3;
};

struct BlockError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  std::size_t refined = 0;
};

struct GradCheckReport {
  std::vector<BlockError> blocks;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t refined = 0;
  bool passed = false;
};

// Compares analytic gradients with central differences (f(θ+h) - f(θ-h)) / 2h.
// The error of a block is ||analytic - numeric||_inf / max(||analytic||_inf,
// ||numeric||_inf); a block whose gradients are both identically zero has
// error 0. Raises NumericsError when f is not finite.
GradCheckReport finite_diff_check(const Objective& f, const ParamStore& params, const GradientMap& analytic,
                                  const GradCheckOptions& options = {});

/// Runs `build` on a fresh tape for the analytic side, then differences it.
GradCheckReport check_gradients(const GraphBuilder& build, const ParamStore& params,
                                const GradCheckOptions& options = {});

}  // namespace sdfn
