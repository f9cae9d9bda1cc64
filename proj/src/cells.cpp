#include "mtap/cells.hpp"

#include <stdexcept>
#include <string>

namespace mtap {

ConvLSTMStateV convlstm_step(const ConvLSTMVars& p, const ConvLSTMStateV& s, Var input) {
  Tape& t = *input.tape;
  const Grid& kv = t.value(p.gate_i.kernel);
  const int k = kv.extent(3);
  if (k % 2 == 0) throw std::invalid_argument("convlstm_step: kernel size must be odd");
  const int pad = (k - 1) / 2;
  const Grid& inv = t.value(input);
  const Grid& hv = t.value(s.hidden);
  if (inv.height() != hv.height() || inv.width() != hv.width())
    throw std::invalid_argument("convlstm_step: input " + shape_str(inv) +
                                " vs hidden " + shape_str(hv));
  if (kv.extent(1) != inv.channels() + hv.channels())
    throw std::invalid_argument("convlstm_step: gate kernels expect " +
                                std::to_string(kv.extent(1)) + " channels, got " +
                                std::to_string(inv.channels() + hv.channels()));

  Var z = concat_channels({input, s.hidden});
  Var gi = sigmoid(conv2d(z, p.gate_i.kernel, p.gate_i.bias, pad));
  Var gf = sigmoid(conv2d(z, p.gate_f.kernel, p.gate_f.bias, pad));
  Var go = sigmoid(conv2d(z, p.gate_o.kernel, p.gate_o.bias, pad));
  Var gg = tanh(conv2d(z, p.gate_g.kernel, p.gate_g.bias, pad));
  Var cell = add(hadamard(gf, s.cell), hadamard(gi, gg));
  Var hidden = hadamard(go, tanh(cell));
  return ConvLSTMStateV{hidden, cell};
}

namespace {

void blend_values(const Grid& prev, const Grid& fresh, double tau, Grid& out) {
  const double b = 1.0 / tau;
  const double a = 1.0 - b;
  if (a == 0.0) {
    out = fresh;  // exact pass-through, preserves bits
    return;
  }
  out = Grid(prev.shape());
  for (int i = 0; i < prev.size(); ++i) out[i] = a * prev[i] + b * fresh[i];
}

}  // namespace

Var leaky_blend(Var prev, Var fresh, double tau) {
  if (!(tau >= 1.0)) throw std::invalid_argument("leaky_blend: tau must be >= 1");
  Tape& t = *prev.tape;
  const Grid& pv = t.value(prev);
  const Grid& fv = t.value(fresh);
  require_same_shape(pv, fv, "leaky_blend");
  Grid out;
  blend_values(pv, fv, tau, out);
  const double b = 1.0 / tau;
  const double a = 1.0 - b;
  const int pi = prev.idx, fi = fresh.idx;
  int id = t.add_node(std::move(out), {pi, fi}, [pi, fi, a, b](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    if (a != 0.0) axpy(t.adjoint(pi), a, g);
    axpy(t.adjoint(fi), b, g);
  });
  return Var{&t, id};
}

LeakyState leaky_blend(const LeakyState& s, const Grid& fresh) {
  if (!(s.tau >= 1.0)) throw std::invalid_argument("leaky_blend: tau must be >= 1");
  require_same_shape(s.blended, fresh, "leaky_blend");
  LeakyState next;
  next.tau = s.tau;
  blend_values(s.blended, fresh, s.tau, next.blended);
  return next;
}

Var gate_weights(const GateMLPVars& p, Var action, GatingMode mode) {
  Var h = tanh(affine(p.hidden.weight, p.hidden.bias, action));
  Var pre = affine(p.out.weight, p.out.bias, h);
  return mode == GatingMode::Mixture ? softmax(pre) : sigmoid(pre);
}

Var modulate(Var weights, const std::vector<Var>& units, GatingMode mode) {
  if (units.empty()) throw std::invalid_argument("modulate: no units");
  Tape& t = *weights.tape;
  const Grid& wv = t.value(weights);
  const Grid& u0 = t.value(units[0]);

  if (mode == GatingMode::Mixture) {
    if (wv.size() != static_cast<int>(units.size()))
      throw std::invalid_argument("modulate: " + std::to_string(wv.size()) +
                                  " weights for " + std::to_string(units.size()) + " units");
    Grid out(u0.shape(), 0.0);
    std::vector<int> parents{weights.idx};
    for (size_t k = 0; k < units.size(); ++k) {
      const Grid& uv = t.value(units[k]);
      require_same_shape(u0, uv, "modulate");
      axpy(out, wv[static_cast<int>(k)], uv);
      parents.push_back(units[k].idx);
    }
    int id = t.add_node(std::move(out), parents, [parents](Tape& t, int self) {
      const Grid& g = t.adjoint(self);
      const Grid& wv = t.node_value(parents[0]);
      Grid& dw = t.adjoint(parents[0]);
      for (size_t k = 1; k < parents.size(); ++k) {
        const Grid& uv = t.node_value(parents[k]);
        double dot = 0.0;
        for (int i = 0; i < g.size(); ++i) dot += g[i] * uv[i];
        dw[static_cast<int>(k - 1)] += dot;
        axpy(t.adjoint(parents[k]), wv[static_cast<int>(k - 1)], g);
      }
    });
    return Var{&t, id};
  }

  // Channel gate: one unit, one gain per channel.
  if (units.size() != 1)
    throw std::invalid_argument("modulate: channel gate expects a single unit");
  if (wv.size() != u0.channels())
    throw std::invalid_argument("modulate: " + std::to_string(wv.size()) +
                                " gains for " + std::to_string(u0.channels()) + " channels");
  const int c = u0.channels(), plane = u0.height() * u0.width();
  Grid out(u0.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < plane; ++i) out[ci * plane + i] = wv[ci] * u0[ci * plane + i];
  const int wi = weights.idx, ui = units[0].idx;
  int id = t.add_node(std::move(out), {wi, ui}, [wi, ui, c, plane](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& wv = t.node_value(wi);
    const Grid& uv = t.node_value(ui);
    Grid& dw = t.adjoint(wi);
    Grid& du = t.adjoint(ui);
    for (int ci = 0; ci < c; ++ci) {
      double dot = 0.0;
      for (int i = 0; i < plane; ++i) {
        dot += g[ci * plane + i] * uv[ci * plane + i];
        du[ci * plane + i] += wv[ci] * g[ci * plane + i];
      }
      dw[ci] += dot;
    }
  });
  return Var{&t, id};
}

}  // namespace mtap
