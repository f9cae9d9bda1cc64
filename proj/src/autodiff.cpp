#include "mtap/autodiff.hpp"

#include <limits>
#include <stdexcept>

namespace mtap {

Var Tape::leaf(Grid value) {
  return Var{this, add_node(std::move(value), {}, nullptr)};
}

int Tape::add_node(Grid value, std::vector<int> parents, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  if (recording_) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Grid& Tape::adjoint(int idx) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  if (n.adjoint.empty()) n.adjoint = Grid(n.value.shape(), 0.0);
  return n.adjoint;
}

const Grid& Tape::grad(Var v) {
  Node& n = nodes_[static_cast<size_t>(v.idx)];
  if (n.acc.empty()) n.acc = Grid(n.value.shape(), 0.0);
  return n.acc;
}

void Tape::backward(Var loss) {
  if (loss.tape != this || loss.idx < 0 || loss.idx >= size())
    throw std::invalid_argument("backward: loss is not a node of this tape");
  const Node& ln = nodes_[static_cast<size_t>(loss.idx)];
  if (ln.value.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(ln.value));
  if (!recording_)
    throw std::invalid_argument("backward: tape was not recording");

  // Clear adjoints left over from a previous pass; accumulators persist.
  for (Node& n : nodes_)
    if (!n.adjoint.empty()) n.adjoint.fill(0.0);

  adjoint(loss.idx)[0] = 1.0;
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.adjoint.empty() || !n.back) continue;
    n.back(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.adjoint.empty()) continue;
    if (n.acc.empty()) n.acc = Grid(n.value.shape(), 0.0);
    axpy(n.acc, 1.0, n.adjoint);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (!n.adjoint.empty()) n.adjoint.fill(0.0);
    if (!n.acc.empty()) n.acc.fill(0.0);
  }
}

void Tape::reset() {
  nodes_.clear();
  reset_kink_margin();
}

void Tape::reset_kink_margin() {
  kink_margin_ = std::numeric_limits<double>::infinity();
}

void Tape::note_margin(double m) {
  if (m < kink_margin_) kink_margin_ = m;
}

void axpy(Grid& y, double a, const Grid& x) {
  require_same_shape(y, x, "axpy");
  double* yp = y.data();
  const double* xp = x.data();
  const int n = y.size();
  for (int i = 0; i < n; ++i) yp[i] += a * xp[i];
}

}  // namespace mtap
