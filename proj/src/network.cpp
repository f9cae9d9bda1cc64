#include "mtap/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "mtap/ops.hpp"

namespace mtap {

namespace {

std::string cfg_err(const std::string& what) { return "NetworkConfig: " + what; }

double grid_mean(const Grid& g) {
  double s = 0.0;
  for (double v : g) s += v;
  return g.size() ? s / g.size() : 0.0;
}

// Channels entering a layer's generative units: the layer's previous error
// plus, below the top, the transformed representation from above.
int lstm_in_channels(const NetworkConfig& cfg, int l) {
  int c = 2 * cfg.channels[static_cast<size_t>(l)];
  if (l < cfg.top()) c += cfg.rchannels[static_cast<size_t>(l + 1)];
  return c;
}

// Visits every parameter tensor with its persistence name, in a fixed order
// shared by initialization, lifting, checkpointing, and gradient export.
template <typename Net, typename Fn>
void walk(Net& net, Fn&& fn) {
  const int top = static_cast<int>(net.layers.size()) - 1;
  for (int l = 0; l <= top; ++l) {
    auto& ly = net.layers[static_cast<size_t>(l)];
    const std::string pre = "layer" + std::to_string(l) + ".";
    for (size_t k = 0; k < ly.units.size(); ++k) {
      const std::string up = pre + "gu" + std::to_string(k) + ".";
      fn(up + "gate_i.kernel", ly.units[k].gate_i.kernel);
      fn(up + "gate_i.bias", ly.units[k].gate_i.bias);
      fn(up + "gate_f.kernel", ly.units[k].gate_f.kernel);
      fn(up + "gate_f.bias", ly.units[k].gate_f.bias);
      fn(up + "gate_o.kernel", ly.units[k].gate_o.kernel);
      fn(up + "gate_o.bias", ly.units[k].gate_o.bias);
      fn(up + "gate_g.kernel", ly.units[k].gate_g.kernel);
      fn(up + "gate_g.bias", ly.units[k].gate_g.bias);
    }
    fn(pre + "predict.kernel", ly.predict.kernel);
    fn(pre + "predict.bias", ly.predict.bias);
    if (l > 0) {
      fn(pre + "feedforward.kernel", ly.feedforward.kernel);
      fn(pre + "feedforward.bias", ly.feedforward.bias);
    }
    if (l < top) {
      fn(pre + "topdown.kernel", ly.topdown.kernel);
      fn(pre + "topdown.bias", ly.topdown.bias);
    }
    fn(pre + "gate.hidden.weight", ly.gate.hidden.weight);
    fn(pre + "gate.hidden.bias", ly.gate.hidden.bias);
    fn(pre + "gate.out.weight", ly.gate.out.weight);
    fn(pre + "gate.out.bias", ly.gate.out.bias);
  }
}

struct InitRng {
  std::mt19937_64 eng;
  std::uniform_real_distribution<double> unit{0.0, 1.0};
  explicit InitRng(uint64_t seed) : eng(seed) {}
  void fill(Grid& g, int fan_in) {
    const double s = std::sqrt(1.0 / fan_in);
    for (double& v : g) v = (2.0 * unit(eng) - 1.0) * s;
  }
};

// Shapes every tensor; with an rng, also fills the weights (draw order =
// walk order). Biases start at zero except the prediction decoders: a fully
// saturated output head passes no gradient and cannot recover, so the
// clamped pixel head starts mid-range (0.5, far from both rails) and the
// relu heads start slightly positive (0.1, off the dead-at-zero rail).
NetworkParams build_params(const NetworkConfig& cfg, InitRng* rng) {
  cfg.validate();
  const int k = cfg.kernel;
  auto fill = [&](Grid& g, int fan_in) {
    if (rng) rng->fill(g, fan_in);
  };
  NetworkParams net;
  net.layers.resize(static_cast<size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    auto& ly = net.layers[static_cast<size_t>(l)];
    const int cl = cfg.channels[static_cast<size_t>(l)];
    const int rl = cfg.rchannels[static_cast<size_t>(l)];
    const int gate_in = lstm_in_channels(cfg, l) + rl;  // input (+) hidden
    ly.units.resize(static_cast<size_t>(cfg.units_per_layer));
    for (auto& u : ly.units) {
      for (ConvParams* c : {&u.gate_i, &u.gate_f, &u.gate_o, &u.gate_g}) {
        c->kernel = Grid::kernel(rl, gate_in, k, k);
        c->bias = Grid::vec(rl);
        fill(c->kernel, gate_in * k * k);
      }
    }
    ly.predict.kernel = Grid::kernel(cl, rl, k, k);
    ly.predict.bias = Grid::vec(cl, rng ? (l == 0 ? 0.5 : 0.1) : 0.0);
    fill(ly.predict.kernel, rl * k * k);
    if (l > 0) {
      const int below = 2 * cfg.channels[static_cast<size_t>(l - 1)];
      ly.feedforward.kernel = Grid::kernel(cl, below, k, k);
      ly.feedforward.bias = Grid::vec(cl);
      fill(ly.feedforward.kernel, below * k * k);
    }
    if (l < cfg.top()) {
      const int above = cfg.rchannels[static_cast<size_t>(l + 1)];
      ly.topdown.kernel = Grid::kernel(above, above, k, k);
      ly.topdown.bias = Grid::vec(above);
      fill(ly.topdown.kernel, above * k * k);
    }
    const int gate_out = cfg.gating == GatingMode::Mixture ? cfg.units_per_layer : rl;
    ly.gate.hidden.weight = Grid::mat(cfg.gate_hidden, cfg.action_dim);
    ly.gate.hidden.bias = Grid::vec(cfg.gate_hidden);
    fill(ly.gate.hidden.weight, cfg.action_dim);
    ly.gate.out.weight = Grid::mat(gate_out, cfg.gate_hidden);
    ly.gate.out.bias = Grid::vec(gate_out);
    fill(ly.gate.out.weight, cfg.gate_hidden);
  }
  return net;
}

}  // namespace

void NetworkConfig::validate() const {
  if (layers < 1) throw std::invalid_argument(cfg_err("need at least one layer"));
  const size_t n = static_cast<size_t>(layers);
  if (taus.size() != n) throw std::invalid_argument(cfg_err("taus length != layer count"));
  if (channels.size() != n)
    throw std::invalid_argument(cfg_err("channels length != layer count"));
  if (rchannels.size() != n)
    throw std::invalid_argument(cfg_err("rchannels length != layer count"));
  if (loss_weights.size() != n)
    throw std::invalid_argument(cfg_err("loss_weights length != layer count"));
  if (input_channels < 1 || input_height < 1 || input_width < 1)
    throw std::invalid_argument(cfg_err("input shape must be positive"));
  if (channels[0] != input_channels)
    throw std::invalid_argument(cfg_err("channels[0] must equal input channel count"));
  for (int l = 0; l < layers; ++l) {
    if (taus[static_cast<size_t>(l)] < 1.0)
      throw std::invalid_argument(cfg_err("tau must be >= 1 at layer " + std::to_string(l)));
    if (channels[static_cast<size_t>(l)] < 1 || rchannels[static_cast<size_t>(l)] < 1)
      throw std::invalid_argument(cfg_err("channel counts must be positive"));
    const int div = 1 << l;
    if (input_height % div != 0 || input_width % div != 0)
      throw std::invalid_argument(
          cfg_err("input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                  " not divisible by 2^" + std::to_string(l) + " (layer " + std::to_string(l) +
                  " extents would be fractional)"));
  }
  if (units_per_layer < 1)
    throw std::invalid_argument(cfg_err("need at least one generative unit"));
  if (gating == GatingMode::ChannelGate && units_per_layer != 1)
    throw std::invalid_argument(cfg_err("channel gating requires exactly one unit per layer"));
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument(cfg_err("kernel must be odd and positive"));
  if (padding != (kernel - 1) / 2)
    throw std::invalid_argument(cfg_err("padding must preserve spatial extents ((kernel-1)/2)"));
  if (pooling != 2) throw std::invalid_argument(cfg_err("only 2x2 pooling is supported"));
  if (action_dim < 1) throw std::invalid_argument(cfg_err("action_dim must be positive"));
  if (gate_hidden < 1) throw std::invalid_argument(cfg_err("gate_hidden must be positive"));
}

std::vector<std::string> NetworkConfig::warnings() const {
  std::vector<std::string> out;
  for (int l = 1; l < layers; ++l) {
    if (taus[static_cast<size_t>(l)] < taus[static_cast<size_t>(l - 1)]) {
      out.push_back("taus not non-decreasing at layer " + std::to_string(l) +
                    "; upper layers are meant to integrate more slowly");
      break;
    }
  }
  return out;
}

NetworkParams init_params(const NetworkConfig& cfg, uint64_t seed) {
  InitRng rng(seed);
  return build_params(cfg, &rng);
}

NetworkParams zero_params(const NetworkConfig& cfg) { return build_params(cfg, nullptr); }

std::pair<NetworkParams, NetworkState> init_network(const NetworkConfig& cfg, uint64_t seed) {
  return {init_params(cfg, seed), zero_state(cfg)};
}

void for_each_tensor(NetworkParams& p,
                     const std::function<void(const std::string&, Grid&)>& fn) {
  walk(p, fn);
}

void for_each_tensor(const NetworkParams& p,
                     const std::function<void(const std::string&, const Grid&)>& fn) {
  walk(p, fn);
}

int tensor_count(const NetworkParams& p) {
  int n = 0;
  walk(p, [&](const std::string&, const Grid&) { ++n; });
  return n;
}

long long parameter_count(const NetworkParams& p) {
  long long n = 0;
  walk(p, [&](const std::string&, const Grid& g) { n += g.size(); });
  return n;
}

NetworkVars lift(Tape& tape, const NetworkParams& p) {
  NetworkVars v;
  v.layers.resize(p.layers.size());
  for (size_t l = 0; l < p.layers.size(); ++l)
    v.layers[l].units.resize(p.layers[l].units.size());
  std::vector<const Grid*> src;
  walk(p, [&](const std::string&, const Grid& g) { src.push_back(&g); });
  size_t i = 0;
  walk(v, [&](const std::string&, Var& dst) { dst = tape.leaf(*src[i++]); });
  return v;
}

NetworkState zero_state(const NetworkConfig& cfg) {
  cfg.validate();
  NetworkState s;
  s.layers.resize(static_cast<size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    auto& ls = s.layers[static_cast<size_t>(l)];
    const int rl = cfg.rchannels[static_cast<size_t>(l)];
    const int cl = cfg.channels[static_cast<size_t>(l)];
    const int h = cfg.level_height(l), w = cfg.level_width(l);
    ls.units.resize(static_cast<size_t>(cfg.units_per_layer));
    for (auto& u : ls.units) {
      u.hidden = Grid::image(rl, h, w);
      u.cell = Grid::image(rl, h, w);
      u.rd = Grid::image(rl, h, w);
    }
    ls.error = Grid::image(2 * cl, h, w);
  }
  return s;
}

NetworkStateV lift_state(Tape& tape, const NetworkState& s) {
  NetworkStateV v;
  v.layers.resize(s.layers.size());
  for (size_t l = 0; l < s.layers.size(); ++l) {
    v.layers[l].units.resize(s.layers[l].units.size());
    for (size_t k = 0; k < s.layers[l].units.size(); ++k) {
      v.layers[l].units[k].hidden = tape.leaf(s.layers[l].units[k].hidden);
      v.layers[l].units[k].cell = tape.leaf(s.layers[l].units[k].cell);
      v.layers[l].units[k].rd = tape.leaf(s.layers[l].units[k].rd);
    }
    v.layers[l].error = tape.leaf(s.layers[l].error);
  }
  return v;
}

NetworkState lower_state(const NetworkStateV& s) {
  NetworkState out;
  out.layers.resize(s.layers.size());
  for (size_t l = 0; l < s.layers.size(); ++l) {
    out.layers[l].units.resize(s.layers[l].units.size());
    for (size_t k = 0; k < s.layers[l].units.size(); ++k) {
      const auto& u = s.layers[l].units[k];
      out.layers[l].units[k].hidden = u.hidden.tape->value(u.hidden);
      out.layers[l].units[k].cell = u.cell.tape->value(u.cell);
      out.layers[l].units[k].rd = u.rd.tape->value(u.rd);
    }
    out.layers[l].error = s.layers[l].error.tape->value(s.layers[l].error);
  }
  return out;
}

StepV step(Tape& tape, const NetworkVars& params, const NetworkConfig& cfg,
           NetworkStateV& state, Var frame, Var action) {
  if (frame.tape != &tape || action.tape != &tape)
    throw std::invalid_argument("step: frame and action must live on the given tape");
  const int top = cfg.top();
  StepV out;
  out.layers.resize(static_cast<size_t>(cfg.layers));

  // Phase A: representation update, top-down so each layer can read the
  // already-updated representation one level above.
  for (int l = top; l >= 0; --l) {
    const auto& pl = params.layers[static_cast<size_t>(l)];
    auto& sl = state.layers[static_cast<size_t>(l)];
    auto& ol = out.layers[static_cast<size_t>(l)];
    Var lstm_in;
    if (l < top) {
      Var above = out.layers[static_cast<size_t>(l + 1)].repr;
      Var td = conv2d(upsample2(above), pl.topdown.kernel, pl.topdown.bias, cfg.padding);
      lstm_in = concat_channels({sl.error, td});
    } else {
      lstm_in = sl.error;
    }
    const double tau = cfg.taus[static_cast<size_t>(l)];
    for (int k = 0; k < cfg.units_per_layer; ++k) {
      auto& u = sl.units[static_cast<size_t>(k)];
      ConvLSTMStateV next =
          convlstm_step(pl.units[static_cast<size_t>(k)], {u.hidden, u.cell}, lstm_in);
      Var rd = cfg.leaky_blend_enabled ? leaky_blend(u.rd, next.hidden, tau) : next.hidden;
      u.hidden = next.hidden;
      u.cell = next.cell;
      u.rd = rd;
      ol.rd.push_back(rd);
    }
    ol.gate = gate_weights(pl.gate, action, cfg.gating);
    ol.repr = modulate(ol.gate, ol.rd, cfg.gating);
  }

  // Phase B: decode each representation into this step's prediction. The
  // pixel layer is clamped to image range.
  for (int l = 0; l <= top; ++l) {
    const auto& pl = params.layers[static_cast<size_t>(l)];
    auto& ol = out.layers[static_cast<size_t>(l)];
    Var z = conv2d(ol.repr, pl.predict.kernel, pl.predict.bias, cfg.padding);
    ol.pred = l == 0 ? clamp01(z) : relu(z);
  }

  // Phase C: targets and split errors, bottom-up so each layer consumes the
  // error just computed below it.
  for (int l = 0; l <= top; ++l) {
    const auto& pl = params.layers[static_cast<size_t>(l)];
    auto& ol = out.layers[static_cast<size_t>(l)];
    Var x;
    if (l == 0) {
      x = frame;
    } else {
      Var below = out.layers[static_cast<size_t>(l - 1)].error;
      x = maxpool2(relu(conv2d(below, pl.feedforward.kernel, pl.feedforward.bias, cfg.padding)));
    }
    ol.target = x;
    ol.error = concat_channels({relu(sub(x, ol.pred)), relu(sub(ol.pred, x))});
    state.layers[static_cast<size_t>(l)].error = ol.error;
  }
  return out;
}

StepTrace snapshot(Tape& tape, const StepV& sv) {
  StepTrace tr;
  tr.layers.resize(sv.layers.size());
  for (size_t l = 0; l < sv.layers.size(); ++l) {
    const auto& s = sv.layers[l];
    auto& d = tr.layers[l];
    d.repr = tape.value(s.repr);
    for (const Var& v : s.rd) d.rd.push_back(tape.value(v));
    d.pred = tape.value(s.pred);
    d.target = tape.value(s.target);
    d.error = tape.value(s.error);
    d.gate = tape.value(s.gate);
  }
  return tr;
}

Runner::Runner(const NetworkParams& params, const NetworkConfig& cfg)
    : params_(params), cfg_(cfg), state_(zero_state(cfg)), tape_(new Tape) {
  tape_->set_recording(false);
}

Runner::~Runner() = default;

StepTrace Runner::step(const Grid& frame, const Grid& action) {
  if (frame.rank() != 3 || frame.channels() != cfg_.input_channels ||
      frame.height() != cfg_.input_height || frame.width() != cfg_.input_width)
    throw std::invalid_argument("Runner::step: frame shape " + shape_str(frame) +
                                " does not match the configured input");
  if (action.rank() != 1 || action.size() != cfg_.action_dim)
    throw std::invalid_argument("Runner::step: action shape " + shape_str(action) +
                                " does not match action_dim");
  for (double v : frame)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("Runner::step: frame values must lie in [0,1]");

  tape_->reset();
  NetworkVars pv = lift(*tape_, params_);
  NetworkStateV sv = lift_state(*tape_, state_);
  Var f = tape_->leaf(frame);
  Var a = tape_->leaf(action);
  StepV out = mtap::step(*tape_, pv, cfg_, sv, f, a);
  StepTrace tr = snapshot(*tape_, out);
  state_ = lower_state(sv);
  for (size_t l = 0; l < state_.layers.size(); ++l) {
    bool ok = state_.layers[l].error.all_finite();
    for (const auto& u : state_.layers[l].units)
      ok = ok && u.hidden.all_finite() && u.cell.all_finite() && u.rd.all_finite();
    if (!ok)
      throw std::runtime_error("Runner::step: non-finite activation at layer " +
                               std::to_string(l));
  }
  return tr;
}

void Runner::reset() { state_ = zero_state(cfg_); }

WindowResult run_sequence(const NetworkParams& params, const NetworkConfig& cfg,
                          const Sequence& seq, int start, int window,
                          bool collect_traces, std::vector<Grid>* grads_out) {
  cfg.validate();
  if (seq.size() == 0) throw std::invalid_argument("run_sequence: empty sequence");
  if (window < 1) throw std::invalid_argument("run_sequence: window must be >= 1");
  if (start < 0 || start + window > seq.size())
    throw std::out_of_range("run_sequence: window [" + std::to_string(start) + ", " +
                            std::to_string(start + window) + ") exceeds sequence length " +
                            std::to_string(seq.size()));
  if (grads_out && window < 2)
    throw std::invalid_argument("run_sequence: gradients need window >= 2 (t=0 carries no loss)");

  Tape tape;
  if (!grads_out) tape.set_recording(false);
  NetworkVars pv = lift(tape, params);
  NetworkStateV sv = lift_state(tape, zero_state(cfg));

  WindowResult res;
  std::vector<Var> loss_terms;
  for (int t = 0; t < window; ++t) {
    Var frame = tape.leaf(seq.frames[static_cast<size_t>(start + t)]);
    Var action = tape.leaf(seq.actions[static_cast<size_t>(start + t)]);
    StepV sout = step(tape, pv, cfg, sv, frame, action);
    std::vector<double> means(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
      const auto& err = sout.layers[static_cast<size_t>(l)].error;
      if (t >= 1) {
        Var m = mean(err);
        means[static_cast<size_t>(l)] = tape.value(m)[0];
        loss_terms.push_back(scale(m, cfg.loss_weights[static_cast<size_t>(l)]));
      } else {
        means[static_cast<size_t>(l)] = grid_mean(tape.value(err));
      }
    }
    res.layer_error_means.push_back(std::move(means));
    if (collect_traces) res.traces.push_back(snapshot(tape, sout));
  }

  res.kink_margin = tape.kink_margin();
  if (loss_terms.empty()) {
    res.loss = 0.0;
    return res;
  }
  Var acc = loss_terms[0];
  for (size_t i = 1; i < loss_terms.size(); ++i) acc = add(acc, loss_terms[i]);
  Var loss = scale(acc, 1.0 / (window - 1));
  res.loss = tape.value(loss)[0];
  if (!std::isfinite(res.loss))
    throw std::runtime_error("run_sequence: non-finite loss over window starting at " +
                             std::to_string(start));
  if (grads_out) {
    tape.backward(loss);
    grads_out->clear();
    walk(pv, [&](const std::string&, Var& v) { grads_out->push_back(tape.grad(v)); });
  }
  return res;
}

WindowLoss build_window_loss(Tape& tape, const NetworkParams& params,
                             const NetworkConfig& cfg, const Sequence& seq, int start,
                             int window) {
  cfg.validate();
  if (window < 2) throw std::invalid_argument("build_window_loss: window must be >= 2");
  if (start < 0 || start + window > seq.size())
    throw std::out_of_range("build_window_loss: window exceeds sequence length");
  WindowLoss out;
  NetworkVars pv = lift(tape, params);
  walk(pv, [&](const std::string&, Var& v) { out.params.push_back(v); });
  NetworkStateV sv = lift_state(tape, zero_state(cfg));
  Var acc;
  for (int t = 0; t < window; ++t) {
    Var frame = tape.leaf(seq.frames[static_cast<size_t>(start + t)]);
    Var action = tape.leaf(seq.actions[static_cast<size_t>(start + t)]);
    StepV sout = step(tape, pv, cfg, sv, frame, action);
    if (t < 1) continue;
    for (int l = 0; l < cfg.layers; ++l) {
      Var term = scale(mean(sout.layers[static_cast<size_t>(l)].error),
                       cfg.loss_weights[static_cast<size_t>(l)]);
      acc = acc.valid() ? add(acc, term) : term;
    }
  }
  out.loss = scale(acc, 1.0 / (window - 1));
  return out;
}

std::vector<Grid> rollout(const NetworkParams& params, const NetworkConfig& cfg,
                          const Sequence& seq, int prime, int horizon) {
  if (prime < 1) throw std::invalid_argument("rollout: prime must be >= 1");
  if (horizon < 0) throw std::invalid_argument("rollout: horizon must be >= 0");
  if (prime + horizon > seq.size())
    throw std::out_of_range("rollout: prime + horizon exceeds sequence length");
  Runner runner(params, cfg);
  std::vector<Grid> preds;
  preds.reserve(static_cast<size_t>(prime + horizon));
  for (int t = 0; t < prime + horizon; ++t) {
    const Grid& frame = t < prime ? seq.frames[static_cast<size_t>(t)] : preds.back();
    StepTrace tr = runner.step(frame, seq.actions[static_cast<size_t>(t)]);
    preds.push_back(tr.layers[0].pred);
  }
  return preds;
}

Grid layer_image(const NetworkParams& params, const NetworkConfig& cfg,
                 const StepTrace& trace, int layer, int unit) {
  if (layer < 0 || layer >= static_cast<int>(trace.layers.size()))
    throw std::out_of_range("layer_image: layer index out of range");
  const auto& lt = trace.layers[static_cast<size_t>(layer)];
  if (unit < 0 || unit >= static_cast<int>(lt.rd.size()))
    throw std::out_of_range("layer_image: unit index out of range");
  const auto& pl = params.layers[static_cast<size_t>(layer)];
  Grid z = conv2d_val(lt.rd[static_cast<size_t>(unit)], pl.predict.kernel, pl.predict.bias,
                      cfg.padding);
  return layer == 0 ? clamp01_val(z) : relu_val(z);
}

double temporal_smoothness(const std::vector<Grid>& series) {
  if (series.size() < 2)
    throw std::invalid_argument("temporal_smoothness: need at least two grids");
  double diff = 0.0, mag = 0.0;
  for (size_t t = 1; t < series.size(); ++t) {
    require_same_shape(series[t - 1], series[t], "temporal_smoothness");
    for (int i = 0; i < series[t].size(); ++i)
      diff += std::fabs(series[t][i] - series[t - 1][i]);
  }
  diff /= static_cast<double>(series.size() - 1);
  for (const Grid& g : series) mag += l1_norm(g);
  mag /= static_cast<double>(series.size());
  return diff / std::max(1e-12, mag);
}

}  // namespace mtap
