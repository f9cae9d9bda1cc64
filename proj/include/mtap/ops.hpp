// Differentiable operations over tape Vars. Forward semantics are standard;
// backward closures accumulate into parent adjoints.
#pragma once

#include <vector>

#include "mtap/autodiff.hpp"

namespace mtap {

// Cross-correlation with zero padding, stride 1. input C_in x H x W,
// kernels C_out x C_in x k x k, bias C_out. Output C_out x H' x W' with
// H' = H + 2*padding - k + 1.
Var conv2d(Var input, Var kernels, Var bias, int padding);

// Nearest-neighbour duplication of each cell into a 2x2 block.
Var upsample2(Var input);

// Non-overlapping 2x2 window maximum per channel; extents must be even.
// Gradient routes to the first maximal element in scan order on ties.
Var maxpool2(Var input);

Var relu(Var x);        // max(0, x); gradient at exactly 0 is 0
Var clamp01(Var x);     // min(max(x, 0), 1); pixel-range prediction head
Var sigmoid(Var x);
Var tanh(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var x, double c);

// Stacks rank-3 grids along the channel axis, preserving operand order.
Var concat_channels(const std::vector<Var>& parts);

// weight (m x n) * x (n) + bias (m).
Var affine(Var weight, Var bias, Var x);

// Normalized exponential over a rank-1 grid.
Var softmax(Var x);

Var sum(Var x);   // scalar [1]
Var mean(Var x);  // scalar [1]

// Value-only counterparts used by code that works on plain grids.
Grid conv2d_val(const Grid& input, const Grid& kernels, const Grid& bias, int padding);
Grid relu_val(const Grid& x);
Grid clamp01_val(const Grid& x);

}  // namespace mtap
