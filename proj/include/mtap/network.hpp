// The L-layer predictive-coding network: assembles ConvLSTM generative
// units, leaky time-scale blending, and action gating into the per-timestep
// schedule, and evaluates sequences for training and inference.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mtap/cells.hpp"
#include "mtap/data.hpp"

namespace mtap {

struct NetworkConfig {
  int layers = 3;  // L + 1
  int input_channels = 1;
  int input_height = 8;
  int input_width = 12;
  std::vector<double> taus{1.0, 1.3, 2.0};
  std::vector<int> channels{1, 8, 16};     // target channels c_l
  std::vector<int> rchannels{8, 16, 32};   // representation channels r_l
  int units_per_layer = 2;                 // generative units K
  GatingMode gating = GatingMode::Mixture;
  int kernel = 3;
  int padding = 1;
  int pooling = 2;
  std::vector<double> loss_weights{1.0, 0.1, 0.1};
  int action_dim = 2;
  int gate_hidden = 16;
  bool leaky_blend_enabled = true;  // off: R^d is the raw ConvLSTM output

  int top() const { return layers - 1; }
  int level_height(int l) const { return input_height >> l; }
  int level_width(int l) const { return input_width >> l; }

  // Throws std::invalid_argument on structural violations (non-integral
  // pooled extents, per-layer list length mismatches, tau < 1, ...).
  void validate() const;
  // Non-fatal advisories, e.g. a tau ladder that is not non-decreasing.
  std::vector<std::string> warnings() const;
};

template <typename T>
struct LayerT {
  std::vector<ConvLSTMT<T>> units;  // K generative unit banks
  ConvT<T> predict;                 // r_l -> c_l
  ConvT<T> feedforward;             // 2 c_{l-1} -> c_l, layers l >= 1
  ConvT<T> topdown;                 // r_{l+1} -> r_{l+1} after upsample, l < L
  GateMLPT<T> gate;
};

template <typename T>
struct NetworkT {
  std::vector<LayerT<T>> layers;
};

using NetworkParams = NetworkT<Grid>;
using NetworkVars = NetworkT<Var>;

// Deterministic parameter bank: every tensor uniform in [-s, s] with
// s = sqrt(1 / fan_in), drawn from mt19937_64(seed). Biases share their
// operation's fan-in scale.
NetworkParams init_params(const NetworkConfig& cfg, uint64_t seed);

// Correctly shaped, all-zero parameter bank (checkpoint loading, ablations).
NetworkParams zero_params(const NetworkConfig& cfg);

// Stable enumeration of every parameter tensor with its checkpoint name
// (e.g. "layer0.gu1.gate_f.kernel"). Order is the persistence order.
void for_each_tensor(NetworkParams& p,
                     const std::function<void(const std::string&, Grid&)>& fn);
void for_each_tensor(const NetworkParams& p,
                     const std::function<void(const std::string&, const Grid&)>& fn);
int tensor_count(const NetworkParams& p);
long long parameter_count(const NetworkParams& p);

NetworkVars lift(Tape& tape, const NetworkParams& p);

// Recurrent state. All grids are zero at a sequence start.
struct UnitState {
  Grid hidden, cell;  // ConvLSTM state
  Grid rd;            // leaky-blended R^d
};
struct LayerState {
  std::vector<UnitState> units;
  Grid error;  // E_l, 2 c_l channels, elementwise >= 0
};
struct NetworkState {
  std::vector<LayerState> layers;
};
NetworkState zero_state(const NetworkConfig& cfg);

// Fresh parameter bank plus matching all-zero state.
std::pair<NetworkParams, NetworkState> init_network(const NetworkConfig& cfg,
                                                    uint64_t seed);

struct UnitStateV {
  Var hidden, cell, rd;
};
struct LayerStateV {
  std::vector<UnitStateV> units;
  Var error;
};
struct NetworkStateV {
  std::vector<LayerStateV> layers;
};
NetworkStateV lift_state(Tape& tape, const NetworkState& s);
NetworkState lower_state(const NetworkStateV& s);

// Everything the step produces for one timestep, as tape handles.
struct LayerStepV {
  Var repr;              // R_l
  std::vector<Var> rd;   // R_l^{d,k} per unit
  Var pred;              // X_l hat
  Var target;            // X_l
  Var error;             // E_l
  Var gate;              // mixture weights or channel gains
};
struct StepV {
  std::vector<LayerStepV> layers;
};

// One timestep: top-down representation update (Phase A), predictions
// (Phase B), bottom-up targets + errors (Phase C). Mutates `state` to the
// post-step Vars.
StepV step(Tape& tape, const NetworkVars& params, const NetworkConfig& cfg,
           NetworkStateV& state, Var frame, Var action);

// Plain-grid snapshot of a step, the unit of tracing and dump tooling.
struct LayerTrace {
  Grid repr;
  std::vector<Grid> rd;
  Grid pred;
  Grid target;
  Grid error;
  Grid gate;
};
struct StepTrace {
  std::vector<LayerTrace> layers;
};
StepTrace snapshot(Tape& tape, const StepV& sv);

// Inference driver: owns a tape that is reset every step, so arbitrarily
// long runs stay bounded. Results are identical to the recorded path.
class Runner {
 public:
  Runner(const NetworkParams& params, const NetworkConfig& cfg);
  ~Runner();

  // Advances one timestep; frame values must lie in [0,1]. Throws on
  // non-finite activations.
  StepTrace step(const Grid& frame, const Grid& action);
  void reset();
  const NetworkState& state() const { return state_; }
  const NetworkConfig& config() const { return cfg_; }

 private:
  const NetworkParams& params_;
  NetworkConfig cfg_;
  NetworkState state_;
  std::unique_ptr<Tape> tape_;
};

struct WindowResult {
  double loss = 0.0;
  // layer_error_means[t][l] = mean(E_l(t)) for t in [0, window).
  std::vector<std::vector<double>> layer_error_means;
  std::vector<StepTrace> traces;  // filled when requested
  // Closest approach to a relu/clamp kink or pooling tie during the run;
  // finite-difference probes need this comfortably above the perturbation.
  double kink_margin = 0.0;
};

// Evaluates `window` steps starting at `start` from zero state. The loss is
// the per-timestep average (t = 0 excluded) of sum_l lambda_l mean(E_l(t)).
// With `grads_out` non-null, backpropagates and returns gradients aligned
// with the for_each_tensor order.
WindowResult run_sequence(const NetworkParams& params, const NetworkConfig& cfg,
                          const Sequence& seq, int start, int window,
                          bool collect_traces = false,
                          std::vector<Grid>* grads_out = nullptr);

// The window loss as an open tape computation: lifts the parameters (in
// for_each_tensor order) and returns the loss Var, ready for backward() or
// value-only finite-difference passes.
struct WindowLoss {
  Var loss;
  std::vector<Var> params;
};
WindowLoss build_window_loss(Tape& tape, const NetworkParams& params,
                             const NetworkConfig& cfg, const Sequence& seq, int start,
                             int window);

// Teacher-forced for t < prime, then closed loop on the network's own
// previous pixel prediction; actions always come from the recording.
// Returns X_0 hat for every t in [0, prime + horizon).
std::vector<Grid> rollout(const NetworkParams& params, const NetworkConfig& cfg,
                          const Sequence& seq, int prime, int horizon);

// Decodes one generative unit's R^d through the layer's prediction conv
// (with the layer's output activation).
Grid layer_image(const NetworkParams& params, const NetworkConfig& cfg,
                 const StepTrace& trace, int layer, int unit);

// Relative mean step-to-step L1 change of a grid series:
// mean_t |x(t) - x(t-1)|_1 / max(1e-12, mean_t |x(t)|_1).
double temporal_smoothness(const std::vector<Grid>& series);

}  // namespace mtap
