#include "sdfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sdfn/errors.hpp"

namespace sdfn {

Probe probe(const Tape& tape, Var loss) {
  if (loss.value().size() != 1) throw ShapeError("probe: objective is not scalar");
  return {loss.value()[0], tape.branch_signature()};
}

namespace {

double checked(const Probe& p) {
  if (!std::isfinite(p.value)) throw NumericsError("finite_diff_check: objective is not finite");
  return p.value;
}

}  // namespace

GradCheckReport finite_diff_check(const Objective& f, const ParamStore& params, const GradientMap& analytic,
                                  const GradCheckOptions& options) {
  ParamStore work = params;
  const Probe base = f(work);
  checked(base);
  GradCheckReport report;
  for (auto& [name, tensor] : work) {
    auto it = analytic.find(name);
    if (it == analytic.end()) throw InvariantError("finite_diff_check: no analytic gradient for " + name);
    const Tensor& grad = it->second;
    if (grad.shape() != tensor.shape()) {
      throw ShapeError("finite_diff_check: gradient " + shape_str(grad.shape()) + " vs parameter " +
                       shape_str(tensor.shape()) + " for " + name);
    }
    BlockError block{name};
    double max_diff = 0.0, max_numeric = 0.0;
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double original = tensor[i];
      double h = options.step;
      double numeric = 0.0;
      for (int attempt = 0;; ++attempt) {
        tensor[i] = original + h;
        const Probe plus = f(work);
        tensor[i] = original - h;
        const Probe minus = f(work);
        tensor[i] = original;
        numeric = (checked(plus) - checked(minus)) / (2.0 * h);
        const bool smooth = plus.signature == base.signature && minus.signature == base.signature;
        if (smooth || attempt >= options.max_refinements) break;
        if (attempt == 0) ++block.refined;
        h /= 10.0;
      }
      max_diff = std::max(max_diff, std::abs(numeric - grad[i]));
      max_numeric = std::max(max_numeric, std::abs(numeric));
      block.max_abs_grad = std::max(block.max_abs_grad, std::abs(grad[i]));
    }
    const double denom = std::max(block.max_abs_grad, max_numeric);
    block.max_rel_error = denom > 0.0 ? max_diff / denom : 0.0;
    report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
    report.coordinates += tensor.size();
    report.refined += block.refined;
    report.blocks.push_back(std::move(block));
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

GradCheckReport check_gradients(const GraphBuilder& build, const ParamStore& params,
                                const GradCheckOptions& options) {
  Tape tape(&params);
  const GradientMap analytic = tape.backward(build(tape));
  Objective f = [&build](const ParamStore& p) {
    Tape t(&p, false);
    Var loss = build(t);
    return probe(t, loss);
  };
  return finite_diff_check(f, params, analytic, options);
}

}  // namespace sdfn
