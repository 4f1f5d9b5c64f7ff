#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace resgen {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f64 tensor. A rank-0 shape holds a single scalar.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  // Extent of the last dimension (1 for scalars).
  std::size_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
};

// Compares shape and raw bit patterns (distinguishes -0.0 from 0.0).
bool bit_identical(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);

// Named tensors in deterministic (lexicographic) order.
using TensorMap = std::map<std::string, Tensor>;

bool bit_identical(const TensorMap& a, const TensorMap& b);

}  // namespace resgen
