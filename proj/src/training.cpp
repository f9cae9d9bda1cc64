#include "mtap/training.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include "mtap/serial.hpp"

namespace mtap {

namespace {

constexpr uint32_t kCheckpointVersion = 1;
constexpr int64_t kMaxTensorElems = 1'000'000'000;

std::vector<Grid*> tensor_ptrs(NetworkParams& p) {
  std::vector<Grid*> out;
  for_each_tensor(p, [&](const std::string&, Grid& g) { out.push_back(&g); });
  return out;
}

double frame_mse(const Grid& a, const Grid& b) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / a.size();
}

std::string gating_name(GatingMode m) {
  return m == GatingMode::Mixture ? "mixture" : "channel-gate";
}

GatingMode gating_from_name(const std::string& s) {
  if (s == "mixture") return GatingMode::Mixture;
  if (s == "channel-gate") return GatingMode::ChannelGate;
  throw std::invalid_argument("unknown gating mode '" + s + "'");
}

}  // namespace

AdamState init_adam(const NetworkParams& params, const AdamConfig& hyper) {
  AdamState s;
  s.hyper = hyper;
  for_each_tensor(params, [&](const std::string&, const Grid& g) {
    s.m.push_back(Grid(g.shape()));
    s.v.push_back(Grid(g.shape()));
  });
  return s;
}

void adam_update(AdamState& adam, NetworkParams& params, const std::vector<Grid>& grads) {
  std::vector<Grid*> ps = tensor_ptrs(params);
  if (grads.size() != ps.size() || adam.m.size() != ps.size() || adam.v.size() != ps.size())
    throw std::invalid_argument("adam_update: gradient/moment group count mismatch");
  adam.t += 1;
  const AdamConfig& h = adam.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(adam.t));
  for (size_t i = 0; i < ps.size(); ++i) {
    Grid& p = *ps[i];
    const Grid& g = grads[i];
    require_same_shape(p, g, "adam_update: gradient");
    require_same_shape(p, adam.m[i], "adam_update: first moment");
    require_same_shape(p, adam.v[i], "adam_update: second moment");
    Grid& m = adam.m[i];
    Grid& v = adam.v[i];
    for (int j = 0; j < p.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= h.alpha * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

double clip_gradients(std::vector<Grid>& grads, double max_norm) {
  double sq = 0.0;
  for (const Grid& g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Grid& g : grads)
      for (double& x : g) x *= s;
  }
  return norm;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (window < 2) throw std::invalid_argument("TrainConfig: window must be >= 2");
  if (windows_per_epoch < 1)
    throw std::invalid_argument("TrainConfig: windows_per_epoch must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
  if (eval_every < 0) throw std::invalid_argument("TrainConfig: eval_every must be >= 0");
}

TrainResult train(NetworkParams& params, const NetworkConfig& net, const Sequence& data,
                  const TrainConfig& cfg, const AdamState* resume,
                  const std::function<void(int, double)>& on_epoch) {
  net.validate();
  cfg.validate();
  if (data.size() < cfg.window)
    throw std::invalid_argument("train: dataset shorter than one window (" +
                                std::to_string(data.size()) + " < " +
                                std::to_string(cfg.window) + ")");
  TrainResult res;
  AdamConfig hyper;
  hyper.alpha = cfg.learning_rate;
  res.adam = resume ? *resume : init_adam(params, hyper);
  res.adam.hyper = hyper;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick(0, data.size() - cfg.window);
  std::vector<Grid> grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int w = 0; w < cfg.windows_per_epoch; ++w) {
      const int start = pick(rng);
      WindowResult wr;
      try {
        wr = run_sequence(params, net, data, start, cfg.window, false, &grads);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: aborted at epoch " + std::to_string(epoch) + ": " +
                                 e.what());
      }
      for (const Grid& g : grads)
        if (!g.all_finite())
          throw std::runtime_error("train: non-finite gradient at epoch " +
                                   std::to_string(epoch));
      clip_gradients(grads, cfg.clip_norm);
      adam_update(res.adam, params, grads);
      epoch_loss += wr.loss;
    }
    epoch_loss /= cfg.windows_per_epoch;
    res.loss_history.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (cfg.stop_loss > 0.0 && epoch_loss < cfg.stop_loss) break;
  }
  return res;
}

EvalMetrics evaluate(const NetworkParams& params, const NetworkConfig& net,
                     const Sequence& data) {
  net.validate();
  if (data.size() < 2) throw std::invalid_argument("evaluate: need at least two frames");
  Runner runner(params, net);
  EvalMetrics out;
  out.layer_error_means.assign(static_cast<size_t>(net.layers), 0.0);
  std::vector<std::vector<Grid>> repr_series(static_cast<size_t>(net.layers));
  for (int t = 0; t < data.size(); ++t) {
    StepTrace tr = runner.step(data.frames[static_cast<size_t>(t)],
                               data.actions[static_cast<size_t>(t)]);
    if (t >= 1) {
      out.per_step_mse.push_back(
          frame_mse(tr.layers[0].pred, data.frames[static_cast<size_t>(t)]));
      out.per_step_baseline.push_back(frame_mse(data.frames[static_cast<size_t>(t - 1)],
                                                data.frames[static_cast<size_t>(t)]));
    }
    for (int l = 0; l < net.layers; ++l) {
      const Grid& e = tr.layers[static_cast<size_t>(l)].error;
      double s = 0.0;
      for (double x : e) s += x;
      out.layer_error_means[static_cast<size_t>(l)] += s / e.size();
      repr_series[static_cast<size_t>(l)].push_back(tr.layers[static_cast<size_t>(l)].repr);
    }
  }
  for (double& v : out.layer_error_means) v /= data.size();
  for (int l = 0; l < net.layers; ++l)
    out.smoothness.push_back(temporal_smoothness(repr_series[static_cast<size_t>(l)]));
  double mse = 0.0, base = 0.0;
  for (size_t i = 0; i < out.per_step_mse.size(); ++i) {
    mse += out.per_step_mse[i];
    base += out.per_step_baseline[i];
  }
  out.one_step_mse = mse / out.per_step_mse.size();
  out.baseline_mse = base / out.per_step_baseline.size();
  return out;
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"input_channels", c.input_channels},
                     {"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"taus", c.taus},
                     {"channels", c.channels},
                     {"rchannels", c.rchannels},
                     {"units_per_layer", c.units_per_layer},
                     {"gating", gating_name(c.gating)},
                     {"kernel", c.kernel},
                     {"padding", c.padding},
                     {"pooling", c.pooling},
                     {"loss_weights", c.loss_weights},
                     {"action_dim", c.action_dim},
                     {"gate_hidden", c.gate_hidden},
                     {"leaky_blend_enabled", c.leaky_blend_enabled}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.layers = j.value("layers", d.layers);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.input_height = j.value("input_height", d.input_height);
  c.input_width = j.value("input_width", d.input_width);
  c.taus = j.value("taus", d.taus);
  c.channels = j.value("channels", d.channels);
  c.rchannels = j.value("rchannels", d.rchannels);
  c.units_per_layer = j.value("units_per_layer", d.units_per_layer);
  c.gating = gating_from_name(j.value("gating", gating_name(d.gating)));
  c.kernel = j.value("kernel", d.kernel);
  c.padding = j.value("padding", d.padding);
  c.pooling = j.value("pooling", d.pooling);
  c.loss_weights = j.value("loss_weights", d.loss_weights);
  c.action_dim = j.value("action_dim", d.action_dim);
  c.gate_hidden = j.value("gate_hidden", d.gate_hidden);
  c.leaky_blend_enabled = j.value("leaky_blend_enabled", d.leaky_blend_enabled);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"window", c.window},
                     {"windows_per_epoch", c.windows_per_epoch},
                     {"learning_rate", c.learning_rate},
                     {"clip_norm", c.clip_norm},
                     {"seed", c.seed},
                     {"eval_every", c.eval_every},
                     {"stop_loss", c.stop_loss}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.window = j.value("window", d.window);
  c.windows_per_epoch = j.value("windows_per_epoch", d.windows_per_epoch);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.seed = j.value("seed", d.seed);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.stop_loss = j.value("stop_loss", d.stop_loss);
}

namespace {

void write_tensor(std::ostream& os, const std::string& name, const Grid& g) {
  if (name.size() > 0xffff)
    throw std::invalid_argument("checkpoint tensor name too long: " + name);
  write_u16(os, static_cast<uint16_t>(name.size()));
  write_bytes(os, name.data(), name.size());
  write_u8(os, static_cast<uint8_t>(g.rank()));
  for (int d = 0; d < g.rank(); ++d) write_u32(os, static_cast<uint32_t>(g.extent(d)));
  for (int i = 0; i < g.size(); ++i) write_f64(os, g[i]);
}

std::pair<std::string, Grid> read_tensor(std::istream& is) {
  const uint16_t name_len = read_u16(is);
  std::string name(name_len, '\0');
  read_bytes(is, name.data(), name_len);
  const uint8_t rank = read_u8(is);
  if (rank < 1 || rank > 4)
    throw io_error(io_errc::range, "checkpoint tensor '" + name + "' has unsupported rank " +
                                       std::to_string(rank));
  std::vector<int> shape(rank);
  int64_t elems = 1;
  for (auto& e : shape) {
    const uint32_t v = read_u32(is);
    if (v == 0 || static_cast<int64_t>(v) > kMaxTensorElems)
      throw io_error(io_errc::range, "checkpoint tensor '" + name + "' has invalid extent");
    e = static_cast<int>(v);
    elems *= v;
    if (elems > kMaxTensorElems)
      throw io_error(io_errc::range, "checkpoint tensor '" + name + "' is implausibly large");
  }
  Grid g(shape);
  for (int i = 0; i < g.size(); ++i) g[i] = read_f64(is);
  return {std::move(name), std::move(g)};
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkParams& params,
                     const NetworkConfig& net, const TrainConfig& train,
                     const AdamState* adam) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error(io_errc::io, "cannot open checkpoint for writing: " + path);

  nlohmann::json blob{{"network", net}, {"train", train}};
  const std::string text = blob.dump();

  write_bytes(os, "MTAP", 4);
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<uint32_t>(text.size()));
  write_bytes(os, text.data(), text.size());

  const int n = tensor_count(params);
  uint32_t total = static_cast<uint32_t>(n);
  if (adam) total += 1 + 2 * static_cast<uint32_t>(n);
  write_u32(os, total);
  for_each_tensor(params,
                  [&](const std::string& name, const Grid& g) { write_tensor(os, name, g); });
  if (adam) {
    if (static_cast<int>(adam->m.size()) != n || static_cast<int>(adam->v.size()) != n)
      throw std::invalid_argument("save_checkpoint: optimizer moments do not match parameters");
    write_tensor(os, "adam.step", Grid::from({static_cast<double>(adam->t)}));
    int i = 0;
    for_each_tensor(params, [&](const std::string& name, const Grid&) {
      write_tensor(os, "adam.m." + name, adam->m[static_cast<size_t>(i)]);
      write_tensor(os, "adam.v." + name, adam->v[static_cast<size_t>(i)]);
      ++i;
    });
  }
  os.flush();
  if (!os) throw io_error(io_errc::io, "failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error(io_errc::io, "cannot open checkpoint: " + path);

  expect_magic(is, "MTAP", "checkpoint");
  const uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw io_error(io_errc::bad_version, "checkpoint version " + std::to_string(version) +
                                             " unsupported (expected " +
                                             std::to_string(kCheckpointVersion) + ")");
  const uint32_t blob_len = read_u32(is);
  std::string text(blob_len, '\0');
  read_bytes(is, text.data(), blob_len);

  Checkpoint cp;
  try {
    nlohmann::json blob = nlohmann::json::parse(text);
    cp.net = blob.at("network").get<NetworkConfig>();
    cp.train = blob.at("train").get<TrainConfig>();
  } catch (const io_error&) {
    throw;
  } catch (const std::exception& e) {
    throw io_error(io_errc::inconsistent,
                   std::string("checkpoint config blob is not valid: ") + e.what());
  }
  try {
    cp.net.validate();
  } catch (const std::exception& e) {
    throw io_error(io_errc::inconsistent,
                   std::string("checkpoint network config invalid: ") + e.what());
  }

  const uint32_t count = read_u32(is);
  std::map<std::string, Grid> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, g] = read_tensor(is);
    if (!tensors.emplace(std::move(name), std::move(g)).second)
      throw io_error(io_errc::inconsistent, "checkpoint contains a duplicate tensor name");
  }

  cp.params = zero_params(cp.net);
  for_each_tensor(cp.params, [&](const std::string& name, Grid& dst) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw io_error(io_errc::inconsistent, "checkpoint is missing tensor '" + name + "'");
    if (!same_shape(dst, it->second))
      throw io_error(io_errc::inconsistent,
                     "checkpoint tensor '" + name + "' has shape " + shape_str(it->second) +
                         " but the stored config implies " + shape_str(dst));
    dst = std::move(it->second);
    tensors.erase(it);
  });

  AdamConfig hyper;
  hyper.alpha = cp.train.learning_rate;
  cp.adam = init_adam(cp.params, hyper);
  auto step_it = tensors.find("adam.step");
  if (step_it != tensors.end()) {
    if (step_it->second.size() != 1)
      throw io_error(io_errc::inconsistent, "checkpoint adam.step must hold one value");
    cp.adam.t = static_cast<long long>(step_it->second[0]);
    tensors.erase(step_it);
    int i = 0;
    for_each_tensor(cp.params, [&](const std::string& name, const Grid& p) {
      for (const char* kind : {"m", "v"}) {
        const std::string key = std::string("adam.") + kind + "." + name;
        auto it = tensors.find(key);
        if (it == tensors.end())
          throw io_error(io_errc::inconsistent, "checkpoint is missing tensor '" + key + "'");
        if (!same_shape(p, it->second))
          throw io_error(io_errc::inconsistent, "checkpoint tensor '" + key + "' shape mismatch");
        (kind[0] == 'm' ? cp.adam.m : cp.adam.v)[static_cast<size_t>(i)] =
            std::move(it->second);
        tensors.erase(it);
      }
      ++i;
    });
    cp.has_adam = true;
  }
  if (!tensors.empty())
    throw io_error(io_errc::inconsistent,
                   "checkpoint contains unexpected tensor '" + tensors.begin()->first + "'");
  return cp;
}

Checkpoint load_checkpoint(const std::string& path, const NetworkConfig& expected) {
  Checkpoint cp = load_checkpoint(path);
  nlohmann::json a = cp.net, b = expected;
  for (auto& [key, val] : a.items()) {
    if (b.contains(key) && b[key] != val)
      cp.warnings.push_back("checkpoint config '" + key + "' is " + val.dump() +
                            " but caller expected " + b[key].dump() + "; using the file's value");
  }
  return cp;
}

}  // namespace mtap
