#include <doctest.h>

#include "gradcheck.hpp"
#include "pathogan/rng.hpp"
#include "pathogan/tape.hpp"

using namespace pathogan;
using gradcheck::random_tensor;

namespace {

// Wraps a tape-building function into the pair of evaluators gradcheck wants.
template <typename Build>
gradcheck::Result run_check(const std::vector<Parameter<double>*>& params,
                            Build build, double h = 1e-5) {
  auto eval_bw = [&](bool) {
    Tape<double> tape;
    const int loss = build(tape);
    tape.backward(loss);
    return tape.scalar(loss);
  };
  auto eval = [&]() {
    Tape<double> tape;
    return tape.scalar(build(tape));
  };
  return gradcheck::check(eval_bw, eval, params, h);
}

}  // namespace

TEST_CASE("conv2d shapes follow stride-only arithmetic") {
  Tape<double> tape;
  Rng rng(7);
  const int x = tape.leaf(random_tensor({1, 3, 240, 240}, rng));
  Parameter<double> w("w", {8, 3, 3, 3}), b("b", {8});
  for (auto& v : w.value.data) v = rng.normal(0, 0.1);
  const int y1 = tape.conv2d(x, tape.param(w), tape.param(b), 1);
  CHECK(tape.value(y1).shape == std::vector<int>{1, 8, 240, 240});
  const int y2 = tape.conv2d(x, tape.param(w), tape.param(b), 2);
  CHECK(tape.value(y2).shape == std::vector<int>{1, 8, 120, 120});

  Parameter<double> w4("w4", {2, 3, 4, 4}), b4("b4", {2});
  const int y3 = tape.conv2d(x, tape.param(w4), tape.param(b4), 1);
  CHECK(tape.value(y3).shape == std::vector<int>{1, 2, 240, 240});
  const int y4 = tape.conv2d(x, tape.param(w4), tape.param(b4), 2);
  CHECK(tape.value(y4).shape == std::vector<int>{1, 2, 120, 120});
}

TEST_CASE("conv2d gradients match central differences") {
  for (const int stride : {1, 2}) {
    for (const int k : {3, 4}) {
      Rng rng(100 + 10 * stride + k);
      Parameter<double> x("x", {2, 3, 6, 6}), w("w", {4, 3, k, k}), b("b", {4});
      x.value = random_tensor({2, 3, 6, 6}, rng);
      w.value = random_tensor({4, 3, k, k}, rng, -0.5, 0.5);
      b.value = random_tensor({4}, rng, -0.1, 0.1);
      auto build = [&](Tape<double>& t) {
        const int y = t.conv2d(t.param(x), t.param(w), t.param(b), stride);
        return t.mean_all(t.square(y));
      };
      const auto res = run_check({&x, &w, &b}, build);
      INFO("stride=", stride, " k=", k, " worst=", res.worst);
      CHECK(res.max_rel_err < 1e-6);
    }
  }
}

TEST_CASE("conv2d_transpose doubles spatial size and matches finite differences") {
  Rng rng(11);
  Parameter<double> x("x", {2, 3, 5, 5}), w("w", {3, 4, 3, 3}), b("b", {4});
  x.value = random_tensor({2, 3, 5, 5}, rng);
  w.value = random_tensor({3, 4, 3, 3}, rng, -0.5, 0.5);
  b.value = random_tensor({4}, rng, -0.1, 0.1);
  {
    Tape<double> tape;
    const int y = tape.conv2d_transpose(tape.param(x), tape.param(w), tape.param(b));
    CHECK(tape.value(y).shape == std::vector<int>{2, 4, 10, 10});
  }
  auto build = [&](Tape<double>& t) {
    const int y = t.conv2d_transpose(t.param(x), t.param(w), t.param(b));
    return t.mean_all(t.square(y));
  };
  const auto res = run_check({&x, &w, &b}, build);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("linear and instance_norm gradients") {
  Rng rng(21);
  Parameter<double> x("x", {3, 7}), w("w", {4, 7}), b("b", {4});
  x.value = random_tensor({3, 7}, rng);
  w.value = random_tensor({4, 7}, rng);
  b.value = random_tensor({4}, rng);
  auto lin = [&](Tape<double>& t) {
    return t.mean_all(t.tanh_(t.linear(t.param(x), t.param(w), t.param(b))));
  };
  CHECK(run_check({&x, &w, &b}, lin).max_rel_err < 1e-6);

  Parameter<double> xi("xi", {2, 3, 4, 4});
  xi.value = random_tensor({2, 3, 4, 4}, rng);
  auto in = [&](Tape<double>& t) {
    const int y = t.instance_norm(t.param(xi));
    return t.mean_all(t.mul(y, t.affine(y, 0.5, 0.3)));
  };
  const auto res = run_check({&xi}, in);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("pointwise op gradients") {
  Rng rng(33);
  Parameter<double> x("x", {2, 3, 4, 4});
  x.value = random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0);
  // keep away from the |x| kink
  for (auto& v : x.value.data)
    if (std::abs(v) < 0.05) v = 0.1;

  auto composite = [&](Tape<double>& t) {
    const int p = t.param(x);
    const int a = t.elu(p);
    const int b = t.leaky_relu(p, 0.2);
    const int c = t.sigmoid_(t.tanh_(p));
    const int d = t.abs_(p);
    const int e = t.exp_(t.affine(p, 0.3, 0.0));
    const int f = t.log_(t.affine(t.square(p), 1.0, 1.0));
    const int g = t.min_const(p, 0.5);
    const int h = t.max_const(p, -0.5);
    return t.mean_all(t.add_n({a, b, c, d, e, f, g, h}));
  };
  const auto res = run_check({&x}, composite);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("structural op gradients: concat, slice, reshape, mul_channel, div") {
  Rng rng(44);
  Parameter<double> a("a", {2, 3}), b("b", {2, 5});
  a.value = random_tensor({2, 3}, rng);
  b.value = random_tensor({2, 5}, rng, 0.5, 2.0);
  auto cc = [&](Tape<double>& t) {
    const int c = t.concat_ax1(t.param(a), t.param(b));
    const int s = t.slice_ax1(c, 1, 6);
    return t.mean_all(t.square(s));
  };
  CHECK(run_check({&a, &b}, cc).max_rel_err < 1e-6);

  Parameter<double> l("l", {2, 1, 3, 3}), x("x", {2, 4, 3, 3});
  l.value = random_tensor({2, 1, 3, 3}, rng, 0.1, 0.9);
  x.value = random_tensor({2, 4, 3, 3}, rng);
  auto mc = [&](Tape<double>& t) {
    const int y = t.mul_channel(t.param(l), t.param(x));
    const int flat = t.reshape(y, {2, 36});
    return t.mean_all(t.square(flat));
  };
  CHECK(run_check({&l, &x}, mc).max_rel_err < 1e-6);

  Parameter<double> num("num", {4}), den("den", {4});
  num.value = random_tensor({4}, rng);
  den.value = random_tensor({4}, rng, 0.5, 2.0);
  auto dv = [&](Tape<double>& t) {
    return t.mean_all(t.div_elem(t.param(num), t.param(den)));
  };
  CHECK(run_check({&num, &den}, dv).max_rel_err < 1e-6);
}

TEST_CASE("per-sample reduction gradients") {
  Rng rng(55);
  Parameter<double> x("x", {3, 2, 2, 2});
  x.value = random_tensor({3, 2, 2, 2}, rng, 0.2, 1.0);
  auto build = [&](Tape<double>& t) {
    const int s = t.sum_per_sample(t.param(x));
    return t.mean_all(t.square(s));
  };
  CHECK(run_check({&x}, build).max_rel_err < 1e-6);
}

TEST_CASE("gradients accumulate across parameter reuse") {
  Rng rng(66);
  Parameter<double> w("w", {3, 3});
  w.value = random_tensor({3, 3}, rng);
  auto build = [&](Tape<double>& t) {
    const int p1 = t.param(w);
    const int p2 = t.param(w);
    return t.mean_all(t.mul(p1, p2));
  };
  CHECK(run_check({&w}, build).max_rel_err < 1e-6);
}

TEST_CASE("detached leaves receive no gradient") {
  Rng rng(77);
  Parameter<double> x("x", {2, 2});
  x.value = random_tensor({2, 2}, rng);
  Tape<double> tape;
  const int p = tape.param(x);
  const int d = tape.detach(p);
  const int loss = tape.mean_all(tape.mul(p, d));
  tape.backward(loss);
  // d treated as constant: dL/dx == d/4, not 2x/4
  for (int i = 0; i < 4; ++i)
    CHECK(x.grad[i] == doctest::Approx(tape.value(d)[i] / 4.0));
}
