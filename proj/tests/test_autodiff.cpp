#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mtap/gradcheck.hpp"
#include "mtap/ops.hpp"

using namespace mtap;

namespace {

Grid random_grid(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                 double hi = 1.0) {
  Grid g(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (int i = 0; i < g.size(); ++i) g[i] = d(rng);
  return g;
}

// Checks d(sum(op(x) . c))/dx against finite differences for a one-input op.
template <typename Op>
GradCheckReport check_unary(Grid& x, const Grid& weights, Op&& op) {
  std::vector<ParamRef> refs{{"x", &x}};
  auto build = [&](Tape& t) {
    Var xv = t.leaf(x);
    Var y = op(xv);
    Var loss = sum(hadamard(y, t.leaf(weights)));
    return BuiltLoss{loss, {xv}};
  };
  return grad_check(refs, build);
}

}  // namespace

TEST_CASE("gradients of a quadratic are near machine precision") {
  std::mt19937_64 rng(7);
  Grid x = random_grid({12}, rng);
  std::vector<ParamRef> refs{{"x", &x}};
  auto build = [&](Tape& t) {
    Var xv = t.leaf(x);
    return BuiltLoss{sum(hadamard(xv, xv)), {xv}};
  };
  GradCheckReport rep = grad_check(refs, build);
  CHECK(rep.max_rel_err < 1e-8);
  CHECK(rep.groups.size() == 1);
  CHECK(rep.groups[0].elements_checked == 12);
}

TEST_CASE("an empty parameter list yields an empty report") {
  auto build = [](Tape& t) { return BuiltLoss{sum(t.leaf(Grid::from({1.0}))), {}}; };
  GradCheckReport rep = grad_check({}, build);
  CHECK(rep.groups.empty());
  CHECK(rep.max_rel_err == 0.0);
  CHECK(rep.passed(1e-12));
}

TEST_CASE("pointwise op gradients pass finite differences") {
  std::mt19937_64 rng(8);
  Grid w = random_grid({9}, rng);

  Grid x = random_grid({9}, rng, -2.0, 2.0);
  CHECK(check_unary(x, w, [](Var v) { return relu(v); }).passed(1e-6));
  CHECK(check_unary(x, w, [](Var v) { return clamp01(v); }).passed(1e-6));
  CHECK(check_unary(x, w, [](Var v) { return sigmoid(v); }).passed(1e-6));
  CHECK(check_unary(x, w, [](Var v) { return mtap::tanh(v); }).passed(1e-6));
  CHECK(check_unary(x, w, [](Var v) { return scale(v, -1.7); }).passed(1e-6));
}

TEST_CASE("softmax gradient passes finite differences") {
  std::mt19937_64 rng(9);
  Grid w = random_grid({5}, rng);
  Grid x = random_grid({5}, rng, -2.0, 2.0);
  CHECK(check_unary(x, w, [](Var v) { return softmax(v); }).passed(1e-6));
}

TEST_CASE("structural op gradients pass finite differences") {
  std::mt19937_64 rng(10);
  Grid w4 = random_grid({2, 8, 10}, rng);
  Grid x = random_grid({2, 4, 5}, rng);
  CHECK(check_unary(x, w4, [](Var v) { return upsample2(v); }).passed(1e-6));

  Grid wp = random_grid({2, 2, 3}, rng);
  Grid xp = random_grid({2, 4, 6}, rng);
  CHECK(check_unary(xp, wp, [](Var v) { return maxpool2(v); }).passed(1e-6));

  CHECK(check_unary(xp, Grid::scalar(1.0), [](Var v) { return mean(v); }).passed(1e-6));
}

TEST_CASE("binary op gradients pass finite differences") {
  std::mt19937_64 rng(11);
  Grid w = random_grid({3, 2, 2}, rng);
  Grid a = random_grid({3, 2, 2}, rng);
  Grid b = random_grid({3, 2, 2}, rng);
  std::vector<ParamRef> refs{{"a", &a}, {"b", &b}};

  auto check_pair = [&](const Grid& weight, auto&& op) {
    auto build = [&](Tape& t) {
      Var av = t.leaf(a), bv = t.leaf(b);
      return BuiltLoss{sum(hadamard(op(av, bv), t.leaf(weight))), {av, bv}};
    };
    return grad_check(refs, build);
  };
  CHECK(check_pair(w, [](Var p, Var q) { return add(p, q); }).passed(1e-6));
  CHECK(check_pair(w, [](Var p, Var q) { return sub(p, q); }).passed(1e-6));
  CHECK(check_pair(w, [](Var p, Var q) { return hadamard(p, q); }).passed(1e-6));
  Grid w2 = random_grid({6, 2, 2}, rng);  // concat doubles the channel count
  CHECK(check_pair(w2, [](Var p, Var q) { return concat_channels({p, q}); }).passed(1e-6));
}

TEST_CASE("conv2d gradients pass finite differences for all three inputs") {
  std::mt19937_64 rng(12);
  Grid in = random_grid({2, 4, 5}, rng);
  Grid k = random_grid({3, 2, 3, 3}, rng);
  Grid b = random_grid({3}, rng);
  Grid w = random_grid({3, 4, 5}, rng);
  std::vector<ParamRef> refs{{"input", &in}, {"kernel", &k}, {"bias", &b}};
  auto build = [&](Tape& t) {
    Var iv = t.leaf(in), kv = t.leaf(k), bv = t.leaf(b);
    return BuiltLoss{sum(hadamard(conv2d(iv, kv, bv, 1), t.leaf(w))), {iv, kv, bv}};
  };
  CHECK(grad_check(refs, build).passed(1e-6));
}

TEST_CASE("affine gradients pass finite differences") {
  std::mt19937_64 rng(13);
  Grid W = random_grid({3, 4}, rng);
  Grid b = random_grid({3}, rng);
  Grid x = random_grid({4}, rng);
  Grid c = random_grid({3}, rng);
  std::vector<ParamRef> refs{{"weight", &W}, {"bias", &b}, {"x", &x}};
  auto build = [&](Tape& t) {
    Var wv = t.leaf(W), bv = t.leaf(b), xv = t.leaf(x);
    return BuiltLoss{sum(hadamard(affine(wv, bv, xv), t.leaf(c))), {wv, bv, xv}};
  };
  CHECK(grad_check(refs, build).passed(1e-6));
}

TEST_CASE("relu routes no gradient through an exact zero") {
  Tape t;
  Var x = t.leaf(Grid::from({0.0, -1.0, 2.0}));
  t.backward(sum(relu(x)));
  const Grid& g = t.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 1.0);
}

TEST_CASE("maxpool ties route gradient to the first maximum in scan order") {
  Tape t;
  Var x = t.leaf(Grid::image(1, 2, 2, 3.0));
  t.backward(sum(maxpool2(x)));
  const Grid& g = t.grad(x);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("backward accumulates until zero_grad") {
  Tape t;
  Var x = t.leaf(Grid::from({2.0, -3.0}));
  Var loss = sum(hadamard(x, x));
  t.backward(loss);
  CHECK(t.grad(x)[0] == doctest::Approx(4.0));
  t.backward(loss);
  CHECK(t.grad(x)[0] == doctest::Approx(8.0));  // second pass adds
  t.zero_grad();
  t.backward(loss);
  CHECK(t.grad(x)[0] == doctest::Approx(4.0));
  CHECK(t.grad(x)[1] == doctest::Approx(-6.0));
}

TEST_CASE("gradient of an untouched leaf is zero") {
  Tape t;
  Var x = t.leaf(Grid::from({1.0, 2.0}));
  Var unused = t.leaf(Grid::from({5.0}));
  t.backward(sum(x));
  CHECK(t.grad(unused)[0] == 0.0);
}

TEST_CASE("backward rejects bad losses") {
  Tape t;
  Var v = t.leaf(Grid::from({1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(v), std::invalid_argument);  // not scalar

  Tape off;
  off.set_recording(false);
  Var s = sum(off.leaf(Grid::from({1.0})));
  CHECK_THROWS_AS(off.backward(s), std::invalid_argument);

  Tape other;
  Var foreign = other.leaf(Grid::scalar(1.0));
  (void)foreign;
  CHECK_THROWS_AS(t.backward(Var{&t, 9999}), std::invalid_argument);
}

TEST_CASE("reset drops all nodes") {
  Tape t;
  t.leaf(Grid::from({1.0}));
  CHECK(t.size() == 1);
  t.reset();
  CHECK(t.size() == 0);
}

TEST_CASE("kink margin tracks the closest approach to a nondifferentiable point") {
  Tape t;
  CHECK(t.kink_margin() == std::numeric_limits<double>::infinity());

  relu(t.leaf(Grid::from({0.25, -3.0})));
  CHECK(t.kink_margin() == doctest::Approx(0.25));

  clamp01(t.leaf(Grid::from({0.93})));  // 0.07 from the upper rail
  CHECK(t.kink_margin() == doctest::Approx(0.07));

  t.reset_kink_margin();
  CHECK(t.kink_margin() == std::numeric_limits<double>::infinity());

  // Bit-exact zeros come from saturation upstream, not from a value passing
  // through the kink; they are excluded.
  relu(t.leaf(Grid::from({0.0, 0.0})));
  CHECK(t.kink_margin() == std::numeric_limits<double>::infinity());

  // Same for exact pooling ties.
  maxpool2(t.leaf(Grid::image(1, 2, 2, 1.0)));
  CHECK(t.kink_margin() == std::numeric_limits<double>::infinity());

  Grid near = Grid::image(1, 2, 2, 1.0);
  near.at(0, 1, 1) = 1.01;
  maxpool2(t.leaf(near));
  CHECK(t.kink_margin() == doctest::Approx(0.01));
}
