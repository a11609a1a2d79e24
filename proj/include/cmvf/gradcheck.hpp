#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cmvf/array.hpp"

namespace cmvf {

// One named parameter group under test: the checker perturbs *value in place
// and compares the supplied reverse-mode gradient against central differences.
struct GradCheckTarget {
  std::string name;
  Array* value;
  const Array* analytic_grad;
};

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t entries = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_err = 0.0;
  std::string worst_group;

  bool passed(double tol) const { return max_rel_err < tol; }
  std::string to_string() const;
};

// Central-difference check of d(loss)/d(param) for every entry of every
// target. loss_value must re-evaluate the loss at the current parameter
// values with all noise frozen. Throws NumericError on a non-finite loss.
//
// Central differences carry cancellation noise of roughly eps * |loss| / step;
// a disagreement inside that envelope (scaled by roundoff_factor) is counted
// as exact agreement, so near-zero gradients do not register as spurious
// mismatches. Gradients larger than the envelope are still held to the full
// relative comparison.
GradCheckReport gradient_check(std::span<const GradCheckTarget> targets,
                               const std::function<double()>& loss_value, double step = 1e-5,
                               double roundoff_factor = 4096.0);

// Relative error used throughout: |a-b| scaled by max(|a|,|b|), floored so
// that near-zero pairs compare as equal.
double rel_err(double a, double b, double floor = 1e-8);

}  // namespace cmvf
