// Adam training loop over recorded sequences, evaluation metrics, and
// checkpoint persistence.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtap/network.hpp"

namespace mtap {

struct AdamConfig {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-tensor moment accumulators, aligned with the for_each_tensor order.
struct AdamState {
  std::vector<Grid> m, v;
  long long t = 0;
  AdamConfig hyper;
};

AdamState init_adam(const NetworkParams& params, const AdamConfig& hyper = {});

// One bias-corrected Adam step; increments t once. Shapes of grads and
// moments must mirror the parameters.
void adam_update(AdamState& adam, NetworkParams& params, const std::vector<Grid>& grads);

// Scales grads so the global L2 norm is at most max_norm (direction
// preserved); returns the pre-clip norm. max_norm <= 0 disables.
double clip_gradients(std::vector<Grid>& grads, double max_norm);

struct TrainConfig {
  int epochs = 200;
  int window = 20;           // truncated-window length, zero state at start
  int windows_per_epoch = 8;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  uint64_t seed = 0;
  int eval_every = 0;    // epochs between on_epoch metric hooks; 0 = never
  double stop_loss = 0;  // early-stop threshold on epoch loss; <= 0 disables

  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean window loss per completed epoch
  AdamState adam;
};

// Optimizes params in place. Window starts are drawn from mt19937_64(seed),
// one optimizer step per window. `resume` continues from saved optimizer
// state; `on_epoch(epoch, loss)` fires after each epoch when set.
TrainResult train(NetworkParams& params, const NetworkConfig& net, const Sequence& data,
                  const TrainConfig& cfg, const AdamState* resume = nullptr,
                  const std::function<void(int, double)>& on_epoch = nullptr);

struct EvalMetrics {
  double one_step_mse = 0.0;  // mean over t >= 1, prediction made before frame t
  double baseline_mse = 0.0;  // copy-last-frame predictor on the same steps
  std::vector<double> layer_error_means;  // time-averaged mean(E_l)
  std::vector<double> smoothness;         // temporal_smoothness of each R_l series
  std::vector<double> per_step_mse;       // entry i is t = i + 1
  std::vector<double> per_step_baseline;
};

EvalMetrics evaluate(const NetworkParams& params, const NetworkConfig& net,
                     const Sequence& data);

// JSON mirrors used in checkpoints, manifests, and tooling.
void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Checkpoint file: magic "MTAP", version, JSON config blob, named tensors.
// Optimizer moments ride along under "adam." names when provided.
void save_checkpoint(const std::string& path, const NetworkParams& params,
                     const NetworkConfig& net, const TrainConfig& train,
                     const AdamState* adam = nullptr);

struct Checkpoint {
  NetworkParams params;
  NetworkConfig net;
  TrainConfig train;
  AdamState adam;  // fresh when the file carries no optimizer state
  bool has_adam = false;
  std::vector<std::string> warnings;  // config mismatches vs. expectation
};

// The file's config is authoritative. The `expected` overload records
// human-readable warnings where the file disagrees.
Checkpoint load_checkpoint(const std::string& path);
Checkpoint load_checkpoint(const std::string& path, const NetworkConfig& expected);

}  // namespace mtap
