#include "cmvf/array.hpp"

#include <cmath>
#include <sstream>

#include "cmvf/errors.hpp"

namespace cmvf {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Array::Array(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Array::Array(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("array: shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Array Array::scalar(double v) { return Array({1}, {v}); }

Array Array::validated(Shape shape, std::vector<double> data) {
  Array a(std::move(shape), std::move(data));
  if (!a.all_finite()) {
    throw ValidationError("array: non-finite value in " + shape_str(a.shape()));
  }
  return a;
}

void Array::fill(double v) {
  for (double& x : data_) x = v;
}

bool Array::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace cmvf
