// Neural building blocks: the ConvLSTM generative core, the leaky
// time-scale blend, and the action-gating MLP.
#pragma once

#include <vector>

#include "mtap/autodiff.hpp"
#include "mtap/ops.hpp"

namespace mtap {

// Parameter bundles are templated over storage so the same structure holds
// plain grids (persisted parameters) or tape Vars (one evaluation).
template <typename T>
struct ConvT {
  T kernel;  // out x in x k x k
  T bias;    // out
};

template <typename T>
struct ConvLSTMT {
  ConvT<T> gate_i, gate_f, gate_o, gate_g;
};

template <typename T>
struct AffineT {
  T weight;  // out x in
  T bias;    // out
};

template <typename T>
struct GateMLPT {
  AffineT<T> hidden;  // action_dim -> gate_hidden, tanh
  AffineT<T> out;     // gate_hidden -> K (mixture) or r_l (channel gate)
};

using ConvParams = ConvT<Grid>;
using ConvLSTMParams = ConvLSTMT<Grid>;
using GateMLPParams = GateMLPT<Grid>;
using ConvVars = ConvT<Var>;
using ConvLSTMVars = ConvLSTMT<Var>;
using GateMLPVars = GateMLPT<Var>;

struct ConvLSTMState {
  Grid hidden;
  Grid cell;
};

struct ConvLSTMStateV {
  Var hidden;
  Var cell;
};

// Standard ConvLSTM update with a single concatenated-input convolution per
// gate: i,f,o = sigmoid(conv(input (+) hidden)), g = tanh(conv(...)),
// cell' = f.cell + i.g, hidden' = o.tanh(cell'). The returned hidden is the
// unit's output.
ConvLSTMStateV convlstm_step(const ConvLSTMVars& p, const ConvLSTMStateV& s, Var input);

struct LeakyState {
  Grid blended;  // R^d
  double tau = 1.0;
};

// blended' = (1 - 1/tau) * blended_prev + (1/tau) * fresh. tau = 1 is an
// exact pass-through of fresh (bitwise).
Var leaky_blend(Var prev, Var fresh, double tau);
LeakyState leaky_blend(const LeakyState& s, const Grid& fresh);

enum class GatingMode { Mixture, ChannelGate };

// MLP(action): tanh hidden layer, then softmax over K generative units
// (mixture) or sigmoid per representation channel (channel gate).
Var gate_weights(const GateMLPVars& p, Var action, GatingMode mode);

// Mixture: R = sum_k w_k * unit_k. Channel gate: single unit, per-channel
// broadcast multiply.
Var modulate(Var weights, const std::vector<Var>& units, GatingMode mode);

}  // namespace mtap
