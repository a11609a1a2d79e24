#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cmvf {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major array of 64-bit floats. This is the one numeric container
// in the project; vectors are rank-1, matrices rank-2, stacked capsule
// matrices rank-3.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape);  // zero-filled
  Array(Shape shape, std::vector<double> data);
  static Array scalar(double v);
  // Rejects non-finite entries; for values crossing an IO boundary.
  static Array validated(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Array& o) const { return shape_ == o.shape_; }
  bool is_scalar() const { return data_.size() == 1; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace cmvf
