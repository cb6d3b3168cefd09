#include <doctest.h>
#include <omp.h>

#include <cmath>

#include "grad_cases.hpp"
#include "tsn/adam.hpp"
#include "tsn/kernels.hpp"

using namespace tsn;
using namespace tsn::test;

namespace {

// Six nested loops straight from the definition of cross-correlation.
Tensor direct_conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::array<std::size_t, 3> s,
                     std::array<std::size_t, 3> p) {
  const Shape os = conv3d_out(x.shape(), w.shape(), s, p);
  Tensor y(os);
  const long T = static_cast<long>(x.dim(2)), H = static_cast<long>(x.dim(3)), W = static_cast<long>(x.dim(4));
  for (std::size_t n = 0; n < os[0]; ++n)
    for (std::size_t co = 0; co < os[1]; ++co)
      for (std::size_t ot = 0; ot < os[2]; ++ot)
        for (std::size_t oh = 0; oh < os[3]; ++oh)
          for (std::size_t ow = 0; ow < os[4]; ++ow) {
            double acc = b[co];
            for (std::size_t ci = 0; ci < w.dim(1); ++ci)
              for (std::size_t dt = 0; dt < w.dim(2); ++dt)
                for (std::size_t dh = 0; dh < w.dim(3); ++dh)
                  for (std::size_t dw = 0; dw < w.dim(4); ++dw) {
                    const long it = static_cast<long>(ot * s[0] + dt) - static_cast<long>(p[0]);
                    const long ih = static_cast<long>(oh * s[1] + dh) - static_cast<long>(p[1]);
                    const long iw = static_cast<long>(ow * s[2] + dw) - static_cast<long>(p[2]);
                    if (it < 0 || ih < 0 || iw < 0 || it >= T || ih >= H || iw >= W) continue;
                    acc += w[(((co * w.dim(1) + ci) * w.dim(2) + dt) * w.dim(3) + dh) * w.dim(4) + dw] *
                           x[(((n * x.dim(1) + ci) * T + it) * H + ih) * W + iw];
                  }
            y[(((n * os[1] + co) * os[2] + ot) * os[3] + oh) * os[4] + ow] = acc;
          }
  return y;
}

Tensor run_conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const ops::Conv3dParams& p) {
  Tape t;
  return t.value(ops::conv3d(t, t.constant(x), t.constant(w), t.constant(b), p));
}

}  // namespace

TEST_CASE("tape replays ops in reverse execution order") {
  Tape t;
  Tensor a({2}, 1.5);
  a.set_requires_grad(true);
  const Var x = t.leaf(a);
  const Var y = ops::square(t, x);
  const Var z = ops::scale(t, y, 3.0);
  const Var s = ops::sum(t, z);
  t.backward(s);
  const std::vector<std::size_t> want{s.id, z.id, y.id};
  CHECK(t.last_backward_order() == want);
  CHECK(t.grad(x)[0] == doctest::Approx(9.0));
}

TEST_CASE("shared inputs accumulate gradients additively") {
  Tape t;
  Tensor a({3}, std::vector<double>{1.0, -2.0, 0.5});
  a.set_requires_grad(true);
  const Var x = t.leaf(a);
  const Var s = ops::sum(t, ops::add(t, ops::add(t, x, x), ops::square(t, x)));
  t.backward(s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(t.grad(x)[i] == doctest::Approx(2.0 + 2.0 * a[i]).epsilon(1e-15));
}

TEST_CASE("backward of a sum of losses is the sum of backward passes") {
  Rng rng(11);
  Tensor x = random_tensor({4, 3}, rng);
  x.set_requires_grad(true);
  const Tensor w = random_tensor({2, 3}, rng), b = random_tensor({2}, rng);
  auto l1 = [&](Tape& t, Var v) { return ops::sum(t, ops::square(t, ops::linear(t, v, t.constant(w), t.constant(b)))); };
  auto l2 = [&](Tape& t, Var v) { return ops::sum(t, ops::relu(t, v)); };
  Tensor g1, g2, g12;
  {
    Tape t;
    const Var v = t.leaf(x);
    t.backward(l1(t, v));
    g1 = t.grad(v);
  }
  {
    Tape t;
    const Var v = t.leaf(x);
    t.backward(l2(t, v));
    g2 = t.grad(v);
  }
  {
    Tape t;
    const Var v = t.leaf(x);
    t.backward(ops::add(t, l1(t, v), l2(t, v)));
    g12 = t.grad(v);
  }
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("constants receive no gradient and drop their closures") {
  Tape t;
  const Var c = t.constant(Tensor({2}, 1.0));
  const Var y = ops::square(t, c);
  CHECK_FALSE(t.requires_grad(y));
  CHECK(t.grad(c) == Tensor({2}));
}

TEST_CASE("non-finite values are a hard error") {
  Tape t;
  Tensor bad({2}, std::vector<double>{1.0, std::nan("")});
  CHECK_THROWS_AS(t.leaf(bad), NonFiniteError);
  const Var x = t.constant(Tensor({1}, 1e200));
  CHECK_THROWS_AS(ops::square(t, ops::square(t, x)), NonFiniteError);
}

TEST_CASE("conv3d trivial cases") {
  Rng rng(1);
  const Tensor x = random_tensor({1, 2, 3, 4, 4}, rng);
  SUBCASE("zero input and zero bias give zero output") {
    const Tensor y = run_conv3d(Tensor({1, 2, 3, 4, 4}), random_tensor({3, 2, 3, 3, 3}, rng), Tensor({3}), {});
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("unit 1x1x1 kernel is the identity") {
    const Tensor y = run_conv3d(x.reshaped({2, 1, 3, 4, 4}), Tensor({1, 1, 1, 1, 1}, 1.0), Tensor({1}), {});
    CHECK(y == x.reshaped({2, 1, 3, 4, 4}));
  }
}

TEST_CASE("conv3d matches the direct summation oracle") {
  Rng rng(2);
  const Tensor x = random_tensor({1, 2, 4, 5, 5}, rng);
  const Tensor w = random_tensor({3, 2, 2, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  for (auto [s, p] : std::vector<std::pair<std::array<std::size_t, 3>, std::array<std::size_t, 3>>>{
           {{1, 1, 1}, {0, 0, 0}}, {{1, 1, 1}, {1, 1, 1}}, {{2, 2, 1}, {0, 1, 2}}}) {
    ops::Conv3dParams params;
    params.stride = s;
    params.padding = p;
    CHECK(max_abs_diff(run_conv3d(x, w, b, params), direct_conv3d(x, w, b, s, p)) < 1e-10);
  }
}

TEST_CASE("conv2d cases") {
  Rng rng(3);
  Tape t;
  SUBCASE("all-ones 3x3 kernel on a constant image gives 9c") {
    const Var y = ops::conv2d(t, t.constant(Tensor({1, 1, 5, 5}, 0.25)), t.constant(Tensor({1, 1, 3, 3}, 1.0)),
                              t.constant(Tensor({1})));
    CHECK(t.value(y).shape() == Shape{1, 1, 3, 3});
    for (double v : t.value(y).data()) CHECK(v == doctest::Approx(2.25).epsilon(1e-15));
  }
  SUBCASE("equals conv3d on a singleton time axis, exactly") {
    const Tensor x = random_tensor({2, 3, 6, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    ops::Conv2dParams p2;
    p2.stride = {2, 1};
    p2.padding = {1, 1};
    ops::Conv3dParams p3;
    p3.stride = {1, 2, 1};
    p3.padding = {0, 1, 1};
    const Tensor y2 = t.value(ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b), p2));
    const Tensor y3 = run_conv3d(x.reshaped({2, 3, 1, 6, 5}), w.reshaped({4, 3, 1, 3, 3}), b, p3);
    CHECK(y2.reshaped(y3.shape()) == y3);
  }
  SUBCASE("random case matches the direct oracle") {
    const Tensor x = random_tensor({2, 2, 6, 7}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    ops::Conv2dParams p;
    p.padding = {1, 1};
    const Tensor y = t.value(ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b), p));
    const Tensor want = direct_conv3d(x.reshaped({2, 2, 1, 6, 7}), w.reshaped({3, 2, 1, 3, 3}), b, {1, 1, 1}, {0, 1, 1});
    CHECK(max_abs_diff(y.reshaped(want.shape()), want) < 1e-10);
  }
}

TEST_CASE("omp kernels agree with the serial reference") {
  Rng rng(4);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 2), ci = 1 + uniform_index(rng, 3), co = 1 + uniform_index(rng, 4);
    const Shape xs{n, ci, 2 + uniform_index(rng, 4), 3 + uniform_index(rng, 5), 3 + uniform_index(rng, 5)};
    const Shape ws{co, ci, 1 + uniform_index(rng, 2), 1 + uniform_index(rng, 3), 1 + uniform_index(rng, 3)};
    const std::array<std::size_t, 3> stride{1 + uniform_index(rng, 2), 1 + uniform_index(rng, 2), 1};
    const std::array<std::size_t, 3> pad{uniform_index(rng, 2), uniform_index(rng, 2), uniform_index(rng, 2)};
    const kernels::ConvGeometry g = kernels::make_conv_geometry(xs, ws, stride, pad);
    const Tensor x = random_tensor(xs, rng), w = random_tensor(ws, rng), b = random_tensor({co}, rng);
    const Tensor gy = random_tensor({g.output_size()}, rng);

    std::vector<double> y_s(g.output_size()), y_o(g.output_size());
    kernels::serial::conv3d_forward(g, x.data(), w.data(), b.data(), y_s);
    kernels::omp::conv3d_forward(g, x.data(), w.data(), b.data(), y_o);
    std::vector<double> gx_s(g.input_size()), gx_o(g.input_size());
    kernels::serial::conv3d_backward_input(g, gy.data(), w.data(), gx_s);
    kernels::omp::conv3d_backward_input(g, gy.data(), w.data(), gx_o);
    std::vector<double> gw_s(g.kernel_size()), gw_o(g.kernel_size()), gb_s(co), gb_o(co);
    kernels::serial::conv3d_backward_kernel(g, x.data(), gy.data(), gw_s, gb_s);
    kernels::omp::conv3d_backward_kernel(g, x.data(), gy.data(), gw_o, gb_o);

    auto close = [](const std::vector<double>& a, const std::vector<double>& b) {
      double m = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
      return m;
    };
    CHECK(close(y_s, y_o) < 1e-12);
    CHECK(close(gx_s, gx_o) < 1e-12);
    CHECK(close(gw_s, gw_o) < 1e-12);
    CHECK(close(gb_s, gb_o) < 1e-12);
  }
  SUBCASE("pooling") {
    const Tensor x = random_tensor({2, 3, 4, 6, 5}, rng);
    const kernels::PoolGeometry g = kernels::make_pool_geometry(x.shape(), {2, 2, 2}, {2, 2, 2});
    std::vector<double> y_s(g.output_size()), y_o(g.output_size());
    std::vector<std::size_t> a_s(g.output_size()), a_o(g.output_size());
    kernels::serial::maxpool3d_forward(g, x.data(), y_s, a_s);
    kernels::omp::maxpool3d_forward(g, x.data(), y_o, a_o);
    CHECK(y_s == y_o);
    CHECK(a_s == a_o);
    const Tensor gy = random_tensor({g.output_size()}, rng);
    std::vector<double> gx_s(g.input_size()), gx_o(g.input_size());
    kernels::serial::maxpool3d_backward(g, gy.data(), a_s, gx_s);
    kernels::omp::maxpool3d_backward(g, gy.data(), a_o, gx_o);
    CHECK(gx_s == gx_o);
  }
}

TEST_CASE("omp kernels are bitwise independent of the thread count") {
  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 4, 9, 9}, rng), w = random_tensor({5, 3, 3, 3, 3}, rng), b = random_tensor({5}, rng);
  ops::Conv3dParams p;
  p.padding = {1, 1, 1};
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const Tensor one = run_conv3d(x, w, b, p);
  omp_set_num_threads(4);
  const Tensor four = run_conv3d(x, w, b, p);
  omp_set_num_threads(saved);
  CHECK(one == four);
}

TEST_CASE("softmax cross-entropy values") {
  Tape t;
  const std::vector<int> zero{0};
  CHECK(t.value(ops::softmax_cross_entropy(t, t.constant(Tensor({1, 3})), zero))[0] ==
        doctest::Approx(std::log(3.0)).epsilon(1e-15));
  Rng rng(6);
  const Tensor z = random_tensor({4, 3}, rng, -5.0, 5.0);
  const std::vector<int> labels{2, 0, 1, 1};
  double want = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    const double m = std::max({z[3 * r], z[3 * r + 1], z[3 * r + 2]});
    const double lse = m + std::log(std::exp(z[3 * r] - m) + std::exp(z[3 * r + 1] - m) + std::exp(z[3 * r + 2] - m));
    want += lse - z[3 * r + static_cast<std::size_t>(labels[r])];
  }
  CHECK(t.value(ops::softmax_cross_entropy(t, t.constant(z), labels))[0] == doctest::Approx(want / 4.0).epsilon(1e-12));
  const std::vector<int> bad{0, 3, 1, 1};
  CHECK_THROWS_AS(ops::softmax_cross_entropy(t, t.constant(z), bad), std::invalid_argument);
}

TEST_CASE("dropout semantics") {
  Rng rng(7);
  Tape t;
  const Tensor x = random_tensor({50, 40}, rng, 0.5, 1.5);
  CHECK(t.value(ops::dropout(t, t.constant(x), 0.7, false, rng)) == x);
  const Tensor y = t.value(ops::dropout(t, t.constant(x), 0.25, true, rng));
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] != 0.0) {
      ++kept;
      CHECK(y[i] == doctest::Approx(x[i] / 0.75).epsilon(1e-15));
    }
  }
  CHECK(std::abs(static_cast<double>(kept) / 2000.0 - 0.75) < 0.05);
  CHECK_THROWS_AS(ops::dropout(t, t.constant(x), 1.0, true, rng), std::invalid_argument);
}

TEST_CASE("adam step") {
  SUBCASE("zero gradient leaves the parameter and moments unchanged") {
    Tensor p({3}, std::vector<double>{1.0, 2.0, 3.0});
    const Tensor g({3});
    AdamState s;
    std::vector<Tensor*> ps{&p};
    std::vector<const Tensor*> gs{&g};
    adam_step(ps, gs, s);
    CHECK(p == Tensor({3}, std::vector<double>{1.0, 2.0, 3.0}));
    CHECK(s.first_moment[0] == Tensor({3}));
    CHECK(s.second_moment[0] == Tensor({3}));
    CHECK(s.step == 1);
  }
  SUBCASE("first step with g=1 moves by lr / (1 + eps)") {
    Tensor p({1}, 0.5);
    const Tensor g({1}, 1.0);
    AdamState s;
    std::vector<Tensor*> ps{&p};
    std::vector<const Tensor*> gs{&g};
    adam_step(ps, gs, s);
    // m_hat = 1, v_hat = 1 after bias correction.
    CHECK(p[0] == doctest::Approx(0.5 - 1e-5 / (1.0 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("identical parameters update identically and frozen slots are skipped") {
    Rng rng(8);
    Tensor a = random_tensor({4}, rng), b = a, frozen = a;
    const Tensor original = a;
    const Tensor g = random_tensor({4}, rng);
    AdamState s;
    s.learning_rate = 1e-2;
    std::vector<Tensor*> ps{&a, &b, &frozen};
    std::vector<const Tensor*> gs{&g, &g, nullptr};
    for (int i = 0; i < 3; ++i) adam_step(ps, gs, s);
    CHECK(a == b);
    CHECK(frozen == original);
    CHECK_FALSE(a == original);
    CHECK(s.step == 3);
    CHECK(s.first_moment[2] == Tensor({4}));
  }
  SUBCASE("shape mismatch throws") {
    Tensor p({2});
    const Tensor g({3});
    AdamState s;
    std::vector<Tensor*> ps{&p};
    std::vector<const Tensor*> gs{&g};
    CHECK_THROWS_AS(adam_step(ps, gs, s), std::invalid_argument);
  }
}

TEST_CASE("grad_check sanity") {
  Rng rng(9);
  const Tensor x = random_tensor({5}, rng);
  ScalarFn sq = [](Tape& t, Var v) { return ops::sum(t, ops::square(t, v)); };
  CHECK(grad_check(sq, x, 1e-4).max_relative_error < 1e-7);
  ScalarFn constant = [](Tape& t, Var) { return t.constant(Tensor({1}, 2.0)); };
  const GradCheckResult r = grad_check(constant, x, 1e-4);
  for (double g : r.analytic.data()) CHECK(g == 0.0);
  CHECK(r.max_relative_error == 0.0);
  CHECK_THROWS_AS(grad_check(sq, x, 0.0), std::invalid_argument);
}

TEST_CASE("every op passes finite-difference gradient checks") {
  Rng rng(10);
  for (const GradCase& c : op_grad_cases()) {
    CAPTURE(c.name);
    CHECK(run_grad_case(c, 5, 1e-4, rng).worst < 1e-4);
  }
}

TEST_CASE("compact 3D network passes finite-difference gradient checks") {
  Rng rng(12);
  for (const GradCase& c : network_grad_cases()) {
    CAPTURE(c.name);
    CHECK(run_grad_case(c, 2, 1e-4, rng).worst < 1e-4);
  }
}
