// mtap: dense double-precision tensor carrier (rank 1..4, row-major).
#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace mtap {

// Dense real-valued tensor. Rank 1 for vectors, rank 2 for dense weight
// matrices, rank 3 as channels x height x width, rank 4 for conv kernel
// banks (out x in x k x k). Row-major storage.
class Grid {
 public:
  Grid() = default;
  explicit Grid(std::vector<int> shape, double fill = 0.0);

  static Grid vec(int n, double fill = 0.0);
  static Grid mat(int rows, int cols, double fill = 0.0);
  static Grid image(int channels, int height, int width, double fill = 0.0);
  static Grid kernel(int cout, int cin, int kh, int kw, double fill = 0.0);
  static Grid scalar(double v);

  // Rank-1 grid from a literal value list.
  static Grid from(std::initializer_list<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int size() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Extent along a dimension; rank-3 helpers by role.
  int extent(int dim) const { return shape_[static_cast<size_t>(dim)]; }
  int channels() const { return shape_[0]; }
  int height() const { return shape_[1]; }
  int width() const { return shape_[2]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<size_t>(i)]; }

  // Rank-3 access (channel, row, col).
  double& at(int c, int y, int x) { return data_[idx3(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[idx3(c, y, x)]; }
  // Rank-2 access.
  double& at(int i, int j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  // Rank-4 access (out channel, in channel, row, col).
  double& at(int o, int i, int y, int x) { return data_[idx4(o, i, y, x)]; }
  double at(int o, int i, int y, int x) const { return data_[idx4(o, i, y, x)]; }

  void fill(double v);
  bool all_finite() const;

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

 private:
  size_t idx3(int c, int y, int x) const {
    return static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x);
  }
  size_t idx4(int o, int i, int y, int x) const {
    return static_cast<size_t>(((o * shape_[1] + i) * shape_[2] + y) * shape_[3] + x);
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

bool same_shape(const Grid& a, const Grid& b);
std::string shape_str(const Grid& g);

// Throws std::invalid_argument naming `where` when shapes differ.
void require_same_shape(const Grid& a, const Grid& b, const char* where);

// Largest absolute elementwise difference; grids must share a shape.
double max_abs_diff(const Grid& a, const Grid& b);

// Sum of absolute values (L1 norm).
double l1_norm(const Grid& g);

// Exact elementwise bit equality: distinguishes +0.0 from -0.0 and compares
// NaNs by payload rather than by (always-false) numeric equality.
bool bit_identical(const Grid& a, const Grid& b);

}  // namespace mtap
