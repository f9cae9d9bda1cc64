#include "mtap/grid.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace mtap {

Grid::Grid(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4)
    throw std::invalid_argument("Grid: rank must be 1..4");
  size_t n = 1;
  for (int e : shape_) {
    if (e <= 0) throw std::invalid_argument("Grid: extents must be positive");
    n *= static_cast<size_t>(e);
  }
  data_.assign(n, fill);
}

Grid Grid::vec(int n, double fill) { return Grid({n}, fill); }
Grid Grid::mat(int rows, int cols, double fill) { return Grid({rows, cols}, fill); }
Grid Grid::image(int channels, int height, int width, double fill) {
  return Grid({channels, height, width}, fill);
}
Grid Grid::kernel(int cout, int cin, int kh, int kw, double fill) {
  return Grid({cout, cin, kh, kw}, fill);
}
Grid Grid::scalar(double v) { return Grid({1}, v); }

Grid Grid::from(std::initializer_list<double> values) {
  Grid g({static_cast<int>(values.size())});
  int i = 0;
  for (double v : values) g[i++] = v;
  return g;
}

void Grid::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Grid::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool same_shape(const Grid& a, const Grid& b) { return a.shape() == b.shape(); }

std::string shape_str(const Grid& g) {
  std::string s = "[";
  for (size_t i = 0; i < g.shape().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(g.shape()[i]);
  }
  return s + "]";
}

void require_same_shape(const Grid& a, const Grid& b, const char* where) {
  if (!same_shape(a, b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
}

double max_abs_diff(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double l1_norm(const Grid& g) {
  double s = 0.0;
  for (int i = 0; i < g.size(); ++i) s += std::fabs(g[i]);
  return s;
}

bool bit_identical(const Grid& a, const Grid& b) {
  if (!same_shape(a, b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

}  // namespace mtap
