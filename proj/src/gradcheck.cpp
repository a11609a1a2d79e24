#include "cmvf/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "cmvf/errors.hpp"

namespace cmvf {

double rel_err(double a, double b, double floor) {
  double denom = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / denom;
}

GradCheckReport gradient_check(std::span<const GradCheckTarget> targets,
                               const std::function<double()>& loss_value, double step,
                               double roundoff_factor) {
  double base = loss_value();
  if (!std::isfinite(base)) {
    throw NumericError("gradient_check: loss is non-finite at the unperturbed parameters");
  }
  double noise_floor = roundoff_factor * std::numeric_limits<double>::epsilon() *
                       std::max(1.0, std::fabs(base)) / step;

  GradCheckReport report;
  for (const GradCheckTarget& target : targets) {
    if (!target.analytic_grad->same_shape(*target.value)) {
      throw DimensionError("gradient_check: grad for '" + target.name + "' is " +
                           shape_str(target.analytic_grad->shape()) + ", value is " +
                           shape_str(target.value->shape()));
    }
    GradCheckGroup group{target.name, 0.0, target.value->size()};
    Array& v = *target.value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      double saved = v[i];
      v[i] = saved + step;
      double up = loss_value();
      v[i] = saved - step;
      double down = loss_value();
      v[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("gradient_check: non-finite loss while perturbing '" + target.name +
                           "[" + std::to_string(i) + "]'");
      }
      double fd = (up - down) / (2.0 * step);
      double ad = (*target.analytic_grad)[i];
      if (std::fabs(ad - fd) > noise_floor) {
        group.max_rel_err = std::max(group.max_rel_err, rel_err(ad, fd));
      }
    }
    if (group.max_rel_err >= report.max_rel_err) {
      // >= so the worst group is always named, even when every error is 0
      report.max_rel_err = group.max_rel_err;
      report.worst_group = group.name;
    }
    report.groups.push_back(std::move(group));
  }
  return report;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  for (const GradCheckGroup& g : groups) {
    os << "  " << g.name << ": max_rel_err=" << g.max_rel_err << " (" << g.entries
       << " entries)\n";
  }
  os << "max_rel_err=" << max_rel_err << " worst=" << worst_group << "\n";
  return os.str();
}

}  // namespace cmvf
