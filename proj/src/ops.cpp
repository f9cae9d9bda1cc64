#include "mtap/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace mtap {

namespace {

Tape& tape_of(Var v, const char* where) {
  if (!v.valid()) throw std::invalid_argument(std::string(where) + ": invalid Var");
  return *v.tape;
}

void require_same_tape(Var a, Var b, const char* where) {
  if (a.tape != b.tape)
    throw std::invalid_argument(std::string(where) + ": operands on different tapes");
}

void require_rank(const Grid& g, int rank, const char* where) {
  if (g.rank() != rank)
    throw std::invalid_argument(std::string(where) + ": expected rank " +
                                std::to_string(rank) + ", got " + shape_str(g));
}

// out[co,oy,ox] = bias[co] + sum_ci,ky,kx in[ci,oy+ky-pad,ox+kx-pad] * ker[co,ci,ky,kx]
void conv_forward(const Grid& in, const Grid& ker, const Grid& bias, int pad, Grid& out) {
  const int cin = in.channels(), h = in.height(), w = in.width();
  const int cout = ker.extent(0), k = ker.extent(2);
  const int ho = out.height(), wo = out.width();
  const double* ip = in.data();
  const double* kp = ker.data();
  double* op = out.data();
  for (int co = 0; co < cout; ++co) {
    const double b = bias[co];
    for (int oy = 0; oy < ho; ++oy) {
      const int ky0 = std::max(0, pad - oy);
      const int ky1 = std::min(k, h + pad - oy);
      for (int ox = 0; ox < wo; ++ox) {
        const int kx0 = std::max(0, pad - ox);
        const int kx1 = std::min(k, w + pad - ox);
        double acc = b;
        for (int ci = 0; ci < cin; ++ci) {
          const double* kbase = kp + static_cast<size_t>(((co * cin + ci) * k) * k);
          const double* ibase = ip + static_cast<size_t>(ci * h * w);
          for (int ky = ky0; ky < ky1; ++ky) {
            const double* irow = ibase + (oy + ky - pad) * w + (ox + kx0 - pad);
            const double* krow = kbase + ky * k + kx0;
            const int n = kx1 - kx0;
            for (int i = 0; i < n; ++i) acc += irow[i] * krow[i];
          }
        }
        op[(co * ho + oy) * wo + ox] = acc;
      }
    }
  }
}

// Accumulates input/kernel/bias adjoints from the output adjoint.
void conv_backward(const Grid& in, const Grid& ker, int pad, const Grid& gout,
                   Grid& din, Grid& dker, Grid& dbias) {
  const int cin = in.channels(), h = in.height(), w = in.width();
  const int cout = ker.extent(0), k = ker.extent(2);
  const int ho = gout.height(), wo = gout.width();
  const double* ip = in.data();
  const double* kp = ker.data();
  const double* gp = gout.data();
  double* dip = din.data();
  double* dkp = dker.data();
  for (int co = 0; co < cout; ++co) {
    double baccum = 0.0;
    for (int oy = 0; oy < ho; ++oy) {
      const int ky0 = std::max(0, pad - oy);
      const int ky1 = std::min(k, h + pad - oy);
      for (int ox = 0; ox < wo; ++ox) {
        const int kx0 = std::max(0, pad - ox);
        const int kx1 = std::min(k, w + pad - ox);
        const double g = gp[(co * ho + oy) * wo + ox];
        baccum += g;
        if (g == 0.0) continue;
        for (int ci = 0; ci < cin; ++ci) {
          const size_t koff = static_cast<size_t>(((co * cin + ci) * k) * k);
          const size_t ioff = static_cast<size_t>(ci * h * w);
          for (int ky = ky0; ky < ky1; ++ky) {
            const size_t irow = ioff + static_cast<size_t>((oy + ky - pad) * w + (ox + kx0 - pad));
            const size_t krow = koff + static_cast<size_t>(ky * k + kx0);
            const int n = kx1 - kx0;
            for (int i = 0; i < n; ++i) {
              dkp[krow + static_cast<size_t>(i)] += g * ip[irow + static_cast<size_t>(i)];
              dip[irow + static_cast<size_t>(i)] += g * kp[krow + static_cast<size_t>(i)];
            }
          }
        }
      }
    }
    dbias[co] += baccum;
  }
}

}  // namespace

Var conv2d(Var input, Var kernels, Var bias, int padding) {
  Tape& t = tape_of(input, "conv2d");
  require_same_tape(input, kernels, "conv2d");
  require_same_tape(input, bias, "conv2d");
  const Grid& in = t.value(input);
  const Grid& ker = t.value(kernels);
  const Grid& b = t.value(bias);
  require_rank(in, 3, "conv2d input");
  require_rank(ker, 4, "conv2d kernels");
  require_rank(b, 1, "conv2d bias");
  if (ker.extent(2) != ker.extent(3))
    throw std::invalid_argument("conv2d: kernels must be square, got " + shape_str(ker));
  if (ker.extent(1) != in.channels())
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(ker.extent(1)) +
                                " input channels, input has " + std::to_string(in.channels()));
  if (b.extent(0) != ker.extent(0))
    throw std::invalid_argument("conv2d: bias length " + std::to_string(b.extent(0)) +
                                " vs " + std::to_string(ker.extent(0)) + " output channels");
  if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
  const int k = ker.extent(2);
  const int ho = in.height() + 2 * padding - k + 1;
  const int wo = in.width() + 2 * padding - k + 1;
  if (ho < 1 || wo < 1)
    throw std::invalid_argument("conv2d: kernel larger than padded input");

  Grid out = Grid::image(ker.extent(0), ho, wo);
  conv_forward(in, ker, b, padding, out);

  const int ii = input.idx, ki = kernels.idx, bi = bias.idx;
  int id = t.add_node(std::move(out), {ii, ki, bi}, [ii, ki, bi, padding](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& in = t.node_value(ii);
    const Grid& ker = t.node_value(ki);
    conv_backward(in, ker, padding, g, t.adjoint(ii), t.adjoint(ki), t.adjoint(bi));
  });
  return Var{&t, id};
}

Grid conv2d_val(const Grid& input, const Grid& kernels, const Grid& bias, int padding) {
  const int k = kernels.extent(2);
  Grid out = Grid::image(kernels.extent(0), input.height() + 2 * padding - k + 1,
                         input.width() + 2 * padding - k + 1);
  conv_forward(input, kernels, bias, padding, out);
  return out;
}

Var upsample2(Var input) {
  Tape& t = tape_of(input, "upsample2");
  const Grid& in = t.value(input);
  require_rank(in, 3, "upsample2");
  const int c = in.channels(), h = in.height(), w = in.width();
  Grid out = Grid::image(c, 2 * h, 2 * w);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x) out.at(ci, y, x) = in.at(ci, y / 2, x / 2);

  const int ii = input.idx;
  int id = t.add_node(std::move(out), {ii}, [ii](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    Grid& din = t.adjoint(ii);
    const int c = din.channels(), h = din.height(), w = din.width();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x) din.at(ci, y / 2, x / 2) += g.at(ci, y, x);
  });
  return Var{&t, id};
}

Var maxpool2(Var input) {
  Tape& t = tape_of(input, "maxpool2");
  const Grid& in = t.value(input);
  require_rank(in, 3, "maxpool2");
  const int c = in.channels(), h = in.height(), w = in.width();
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("maxpool2: extents must be even, got " + shape_str(in));
  Grid out = Grid::image(c, h / 2, w / 2);
  std::vector<int> argmax(static_cast<size_t>(out.size()));
  int o = 0;
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < h / 2; ++oy) {
      for (int ox = 0; ox < w / 2; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        double second = best;
        int besti = -1;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = 2 * oy + dy, ix = 2 * ox + dx;
            const double v = in.at(ci, iy, ix);
            if (v > best) {  // strict: first maximal element wins ties
              second = best;
              best = v;
              besti = (ci * h + iy) * w + ix;
            } else if (v > second) {
              second = v;
            }
          }
        }
        out[o] = best;
        argmax[static_cast<size_t>(o)] = besti;
        // Exact ties are overwhelmingly relu-saturated zeros that stay put
        // under perturbation, so finite differences remain valid there; only
        // near-ties make the winner fragile.
        if (best != second) t.note_margin(best - second);
      }
    }
  }
  const int ii = input.idx;
  int id = t.add_node(std::move(out), {ii},
                      [ii, argmax = std::move(argmax)](Tape& t, int self) {
                        const Grid& g = t.adjoint(self);
                        Grid& din = t.adjoint(ii);
                        for (int i = 0; i < g.size(); ++i)
                          din[argmax[static_cast<size_t>(i)]] += g[i];
                      });
  return Var{&t, id};
}

Var relu(Var x) {
  Tape& t = tape_of(x, "relu");
  const Grid& in = t.value(x);
  Grid out(in.shape());
  for (int i = 0; i < in.size(); ++i) {
    out[i] = in[i] > 0.0 ? in[i] : 0.0;
    // An input of exactly 0.0 means upstream saturation (e.g. the split
    // error of two relu-flattened values), locally constant and safe for
    // finite differences; its fragility is tracked where the value moves.
    if (in[i] != 0.0) t.note_margin(std::fabs(in[i]));
  }
  const int ii = x.idx;
  int id = t.add_node(std::move(out), {ii}, [ii](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& in = t.node_value(ii);
    Grid& din = t.adjoint(ii);
    for (int i = 0; i < g.size(); ++i)
      if (in[i] > 0.0) din[i] += g[i];
  });
  return Var{&t, id};
}

Grid relu_val(const Grid& x) {
  Grid out(x.shape());
  for (int i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Var clamp01(Var x) {
  Tape& t = tape_of(x, "clamp01");
  const Grid& in = t.value(x);
  Grid out(in.shape());
  for (int i = 0; i < in.size(); ++i) {
    out[i] = std::clamp(in[i], 0.0, 1.0);
    const double m = std::min(std::fabs(in[i]), std::fabs(in[i] - 1.0));
    if (m != 0.0) t.note_margin(m);
  }
  const int ii = x.idx;
  int id = t.add_node(std::move(out), {ii}, [ii](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& in = t.node_value(ii);
    Grid& din = t.adjoint(ii);
    for (int i = 0; i < g.size(); ++i)
      if (in[i] > 0.0 && in[i] < 1.0) din[i] += g[i];
  });
  return Var{&t, id};
}

Grid clamp01_val(const Grid& x) {
  Grid out(x.shape());
  for (int i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], 0.0, 1.0);
  return out;
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x, "sigmoid");
  const Grid& in = t.value(x);
  Grid out(in.shape());
  for (int i = 0; i < in.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
  const int ii = x.idx;
  int id = t.add_node(std::move(out), {ii}, [ii](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& y = t.node_value(self);
    Grid& din = t.adjoint(ii);
    for (int i = 0; i < g.size(); ++i) din[i] += g[i] * y[i] * (1.0 - y[i]);
  });
  return Var{&t, id};
}

Var tanh(Var x) {
  Tape& t = tape_of(x, "tanh");
  const Grid& in = t.value(x);
  Grid out(in.shape());
  for (int i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
  const int ii = x.idx;
  int id = t.add_node(std::move(out), {ii}, [ii](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& y = t.node_value(self);
    Grid& din = t.adjoint(ii);
    for (int i = 0; i < g.size(); ++i) din[i] += g[i] * (1.0 - y[i] * y[i]);
  });
  return Var{&t, id};
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, "add");
  require_same_tape(a, b, "add");
  const Grid& av = t.value(a);
  const Grid& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Grid out(av.shape());
  for (int i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const int ai = a.idx, bi = b.idx;
  int id = t.add_node(std::move(out), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    axpy(t.adjoint(ai), 1.0, g);
    axpy(t.adjoint(bi), 1.0, g);
  });
  return Var{&t, id};
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, "sub");
  require_same_tape(a, b, "sub");
  const Grid& av = t.value(a);
  const Grid& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  Grid out(av.shape());
  for (int i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const int ai = a.idx, bi = b.idx;
  int id = t.add_node(std::move(out), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    axpy(t.adjoint(ai), 1.0, g);
    axpy(t.adjoint(bi), -1.0, g);
  });
  return Var{&t, id};
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, "hadamard");
  require_same_tape(a, b, "hadamard");
  const Grid& av = t.value(a);
  const Grid& bv = t.value(b);
  require_same_shape(av, bv, "hadamard");
  Grid out(av.shape());
  for (int i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const int ai = a.idx, bi = b.idx;
  int id = t.add_node(std::move(out), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& av = t.node_value(ai);
    const Grid& bv = t.node_value(bi);
    Grid& da = t.adjoint(ai);
    Grid& db = t.adjoint(bi);
    for (int i = 0; i < g.size(); ++i) {
      da[i] += g[i] * bv[i];
      db[i] += g[i] * av[i];
    }
  });
  return Var{&t, id};
}

Var scale(Var x, double c) {
  Tape& t = tape_of(x, "scale");
  const Grid& in = t.value(x);
  Grid out(in.shape());
  for (int i = 0; i < in.size(); ++i) out[i] = c * in[i];
  const int ii = x.idx;
  int id = t.add_node(std::move(out), {ii}, [ii, c](Tape& t, int self) {
    axpy(t.adjoint(ii), c, t.adjoint(self));
  });
  return Var{&t, id};
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no operands");
  Tape& t = tape_of(parts[0], "concat_channels");
  int channels = 0;
  const Grid& first = t.value(parts[0]);
  require_rank(first, 3, "concat_channels");
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_channels");
    const Grid& g = t.value(p);
    require_rank(g, 3, "concat_channels");
    if (g.height() != first.height() || g.width() != first.width())
      throw std::invalid_argument("concat_channels: spatial mismatch " + shape_str(first) +
                                  " vs " + shape_str(g));
    channels += g.channels();
  }
  const int h = first.height(), w = first.width();
  Grid out = Grid::image(channels, h, w);
  std::vector<int> parent_idx;
  std::vector<int> offsets;  // channel offset per part
  int off = 0;
  for (const Var& p : parts) {
    const Grid& g = t.value(p);
    std::copy(g.data(), g.data() + g.size(), out.data() + static_cast<size_t>(off) * h * w);
    parent_idx.push_back(p.idx);
    offsets.push_back(off);
    off += g.channels();
  }
  int id = t.add_node(std::move(out), parent_idx,
                      [parent_idx, offsets, h, w](Tape& t, int self) {
                        const Grid& g = t.adjoint(self);
                        for (size_t p = 0; p < parent_idx.size(); ++p) {
                          Grid& dp = t.adjoint(parent_idx[p]);
                          const double* src = g.data() + static_cast<size_t>(offsets[p]) * h * w;
                          for (int i = 0; i < dp.size(); ++i) dp[i] += src[i];
                        }
                      });
  return Var{&t, id};
}

Var affine(Var weight, Var bias, Var x) {
  Tape& t = tape_of(x, "affine");
  require_same_tape(weight, x, "affine");
  require_same_tape(bias, x, "affine");
  const Grid& wv = t.value(weight);
  const Grid& bv = t.value(bias);
  const Grid& xv = t.value(x);
  require_rank(wv, 2, "affine weight");
  require_rank(bv, 1, "affine bias");
  require_rank(xv, 1, "affine input");
  const int m = wv.extent(0), n = wv.extent(1);
  if (xv.extent(0) != n)
    throw std::invalid_argument("affine: weight " + shape_str(wv) + " vs input " + shape_str(xv));
  if (bv.extent(0) != m)
    throw std::invalid_argument("affine: weight " + shape_str(wv) + " vs bias " + shape_str(bv));
  Grid out = Grid::vec(m);
  for (int i = 0; i < m; ++i) {
    double acc = bv[i];
    for (int j = 0; j < n; ++j) acc += wv.at(i, j) * xv[j];
    out[i] = acc;
  }
  const int wi = weight.idx, bi = bias.idx, xi = x.idx;
  int id = t.add_node(std::move(out), {wi, bi, xi}, [wi, bi, xi](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& wv = t.node_value(wi);
    const Grid& xv = t.node_value(xi);
    Grid& dw = t.adjoint(wi);
    Grid& db = t.adjoint(bi);
    Grid& dx = t.adjoint(xi);
    const int m = wv.extent(0), n = wv.extent(1);
    for (int i = 0; i < m; ++i) {
      db[i] += g[i];
      for (int j = 0; j < n; ++j) {
        dw.at(i, j) += g[i] * xv[j];
        dx[j] += g[i] * wv.at(i, j);
      }
    }
  });
  return Var{&t, id};
}

Var softmax(Var x) {
  Tape& t = tape_of(x, "softmax");
  const Grid& in = t.value(x);
  require_rank(in, 1, "softmax");
  double mx = in[0];
  for (int i = 1; i < in.size(); ++i) mx = std::max(mx, in[i]);
  Grid out(in.shape());
  double z = 0.0;
  for (int i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - mx);
    z += out[i];
  }
  for (int i = 0; i < in.size(); ++i) out[i] /= z;
  const int ii = x.idx;
  int id = t.add_node(std::move(out), {ii}, [ii](Tape& t, int self) {
    const Grid& g = t.adjoint(self);
    const Grid& y = t.node_value(self);
    Grid& din = t.adjoint(ii);
    double s = 0.0;
    for (int i = 0; i < g.size(); ++i) s += g[i] * y[i];
    for (int i = 0; i < g.size(); ++i) din[i] += y[i] * (g[i] - s);
  });
  return Var{&t, id};
}

Var sum(Var x) {
  Tape& t = tape_of(x, "sum");
  const Grid& in = t.value(x);
  double s = 0.0;
  for (int i = 0; i < in.size(); ++i) s += in[i];
  const int ii = x.idx;
  int id = t.add_node(Grid::scalar(s), {ii}, [ii](Tape& t, int self) {
    const double g = t.adjoint(self)[0];
    Grid& din = t.adjoint(ii);
    for (int i = 0; i < din.size(); ++i) din[i] += g;
  });
  return Var{&t, id};
}

Var mean(Var x) {
  Tape& t = tape_of(x, "mean");
  const Grid& in = t.value(x);
  const int n = in.size();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += in[i];
  const int ii = x.idx;
  int id = t.add_node(Grid::scalar(s / n), {ii}, [ii, n](Tape& t, int self) {
    const double g = t.adjoint(self)[0] / n;
    Grid& din = t.adjoint(ii);
    for (int i = 0; i < din.size(); ++i) din[i] += g;
  });
  return Var{&t, id};
}

}  // namespace mtap
