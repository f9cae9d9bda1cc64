// Reverse-mode differentiation over Grid values: a flat tape of nodes in
// creation order (always topological), each holding its value, a per-pass
// adjoint, a persistent gradient accumulator, and a backward closure.
#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "mtap/grid.hpp"

namespace mtap {

class Tape;

// Lightweight handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Grid value);

  const Grid& value(Var v) const { return node_value(v.idx); }

  // Accumulated gradient of the last backward() call(s); zeros if untouched.
  const Grid& grad(Var v);

  // Propagates dLoss through every node reachable from `loss` (scalar, shape
  // [1]). Accumulators are added to, not overwritten: calling twice without
  // zero_grad() doubles them.
  void backward(Var loss);

  void zero_grad();

  // Drops every node. Outstanding Vars become invalid.
  void reset();

  // With recording off, ops compute values but store no backward closures;
  // backward() on such a graph is rejected. Used by finite-difference passes.
  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  int size() const { return static_cast<int>(nodes_.size()); }

  // Smallest distance to a nondifferentiable point (relu/clamp kink, maxpool
  // tie) observed by any op since the last reset. Infinity if none seen.
  double kink_margin() const { return kink_margin_; }
  void reset_kink_margin();

  // --- surface for op implementations ---
  int add_node(Grid value, std::vector<int> parents, BackFn back);
  const Grid& node_value(int idx) const { return nodes_[static_cast<size_t>(idx)].value; }
  // Adjoint buffer, allocated zero-filled on first touch.
  Grid& adjoint(int idx);
  bool has_adjoint(int idx) const { return !nodes_[static_cast<size_t>(idx)].adjoint.empty(); }
  void note_margin(double m);

 private:
  struct Node {
    Grid value;
    Grid adjoint;  // empty until touched by a backward pass
    Grid acc;      // empty until gradients are accumulated or read
    std::vector<int> parents;
    BackFn back;
  };

  std::vector<Node> nodes_;
  bool recording_ = true;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

// y += a * x
void axpy(Grid& y, double a, const Grid& x);

}  // namespace mtap
