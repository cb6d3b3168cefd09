#pragma once
// Finite-difference gradient cases shared by the unit tests and the
// acceptance binary. Each case draws a random small instance and checks one
// argument of one op; instances that sit too close to a ReLU or max-pool
// kink are redrawn, since central differences straddling a kink measure the
// wrong derivative.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tsn/grad_check.hpp"
#include "tsn/model.hpp"
#include "tsn/ops.hpp"
#include "test_util.hpp"

namespace tsn::test {

struct GradInstance {
  ScalarFn f;
  Tensor point;
};

struct GradCase {
  std::string name;
  std::function<GradInstance(Rng&)> draw;
};

// Smooth scalar read-out: sum((y + offset)^2) with a fixed random offset, so
// every output coordinate carries a distinct nonzero weight.
inline Var readout(Tape& tape, Var y, const Tensor& offset) {
  return ops::sum(tape, ops::square(tape, ops::add(tape, y, tape.constant(offset))));
}

inline Tensor offset_like(const Shape& shape, Rng& rng) { return random_tensor(shape, rng, -0.5, 0.5); }

inline Shape conv3d_out(const Shape& x, const Shape& w, std::array<std::size_t, 3> s, std::array<std::size_t, 3> p) {
  return {x[0], w[0], (x[2] + 2 * p[0] - w[2]) / s[0] + 1, (x[3] + 2 * p[1] - w[3]) / s[1] + 1,
          (x[4] + 2 * p[2] - w[4]) / s[2] + 1};
}

inline std::vector<GradCase> op_grad_cases() {
  std::vector<GradCase> cases;

  // conv3d: one case per argument, alternating stride/padding settings.
  for (int arg = 0; arg < 3; ++arg) {
    cases.push_back({std::string("conv3d/") + (arg == 0 ? "input" : arg == 1 ? "kernel" : "bias"),
                     [arg](Rng& rng) {
                       const bool strided = uniform01(rng) < 0.5;
                       ops::Conv3dParams p;
                       p.stride = strided ? std::array<std::size_t, 3>{1, 2, 2} : std::array<std::size_t, 3>{1, 1, 1};
                       p.padding = {1, 1, strided ? 0u : 1u};
                       const Tensor x = random_tensor({2, 2, 3, 5, 4}, rng);
                       const Tensor w = random_tensor({3, 2, 2, 3, 3}, rng);
                       const Tensor b = random_tensor({3}, rng);
                       const Tensor off = offset_like(conv3d_out(x.shape(), w.shape(), p.stride, p.padding), rng);
                       ScalarFn f = [=](Tape& t, Var v) {
                         const Var xi = arg == 0 ? v : t.constant(x);
                         const Var wi = arg == 1 ? v : t.constant(w);
                         const Var bi = arg == 2 ? v : t.constant(b);
                         return readout(t, ops::conv3d(t, xi, wi, bi, p), off);
                       };
                       return GradInstance{f, arg == 0 ? x : arg == 1 ? w : b};
                     }});
  }
  for (int arg = 0; arg < 3; ++arg) {
    cases.push_back({std::string("conv2d/") + (arg == 0 ? "input" : arg == 1 ? "kernel" : "bias"),
                     [arg](Rng& rng) {
                       ops::Conv2dParams p;
                       p.stride = {2, 1};
                       p.padding = {1, 0};
                       const Tensor x = random_tensor({2, 3, 5, 6}, rng);
                       const Tensor w = random_tensor({2, 3, 3, 3}, rng);
                       const Tensor b = random_tensor({2}, rng);
                       const Tensor off = offset_like({2, 2, 3, 4}, rng);
                       ScalarFn f = [=](Tape& t, Var v) {
                         const Var xi = arg == 0 ? v : t.constant(x);
                         const Var wi = arg == 1 ? v : t.constant(w);
                         const Var bi = arg == 2 ? v : t.constant(b);
                         return readout(t, ops::conv2d(t, xi, wi, bi, p), off);
                       };
                       return GradInstance{f, arg == 0 ? x : arg == 1 ? w : b};
                     }});
  }
  cases.push_back({"maxpool3d", [](Rng& rng) {
                     const Tensor x = random_tensor({2, 2, 4, 4, 5}, rng);
                     const Tensor off = offset_like({2, 2, 2, 2, 2}, rng);
                     ScalarFn f = [=](Tape& t, Var v) { return readout(t, ops::maxpool3d(t, v, {2, 2, 2}, {2, 2, 2}), off); };
                     return GradInstance{f, x};
                   }});
  cases.push_back({"maxpool2d", [](Rng& rng) {
                     const Tensor x = random_tensor({2, 3, 4, 6}, rng);
                     const Tensor off = offset_like({2, 3, 2, 3}, rng);
                     ScalarFn f = [=](Tape& t, Var v) { return readout(t, ops::maxpool2d(t, v, {2, 2}, {2, 2}), off); };
                     return GradInstance{f, x};
                   }});
  cases.push_back({"global_avgpool", [](Rng& rng) {
                     const Tensor x = random_tensor({2, 3, 2, 3, 3}, rng);
                     const Tensor off = offset_like({2, 3}, rng);
                     ScalarFn f = [=](Tape& t, Var v) { return readout(t, ops::global_avgpool(t, v), off); };
                     return GradInstance{f, x};
                   }});
  cases.push_back({"relu", [](Rng& rng) {
                     const Tensor x = random_tensor({3, 7}, rng);
                     const Tensor off = offset_like({3, 7}, rng);
                     ScalarFn f = [=](Tape& t, Var v) { return readout(t, ops::relu(t, v), off); };
                     return GradInstance{f, x};
                   }});
  for (int arg = 0; arg < 3; ++arg) {
    cases.push_back({std::string("linear/") + (arg == 0 ? "input" : arg == 1 ? "weight" : "bias"),
                     [arg](Rng& rng) {
                       const Tensor x = random_tensor({4, 5}, rng);
                       const Tensor w = random_tensor({3, 5}, rng);
                       const Tensor b = random_tensor({3}, rng);
                       const Tensor off = offset_like({4, 3}, rng);
                       ScalarFn f = [=](Tape& t, Var v) {
                         const Var xi = arg == 0 ? v : t.constant(x);
                         const Var wi = arg == 1 ? v : t.constant(w);
                         const Var bi = arg == 2 ? v : t.constant(b);
                         return readout(t, ops::linear(t, xi, wi, bi), off);
                       };
                       return GradInstance{f, arg == 0 ? x : arg == 1 ? w : b};
                     }});
  }
  cases.push_back({"dropout", [](Rng& rng) {
                     const Tensor x = random_tensor({4, 6}, rng);
                     const Tensor off = offset_like({4, 6}, rng);
                     const std::uint64_t seed = rng();
                     const double p = uniform(rng, 0.1, 0.8);
                     ScalarFn f = [=](Tape& t, Var v) {
                       Rng mask_rng(seed);  // same mask on every evaluation
                       return readout(t, ops::dropout(t, v, p, true, mask_rng), off);
                     };
                     return GradInstance{f, x};
                   }});
  cases.push_back({"softmax_cross_entropy", [](Rng& rng) {
                     const Tensor z = random_tensor({5, 3}, rng, -3.0, 3.0);
                     std::vector<int> labels(5);
                     for (int& l : labels) l = static_cast<int>(uniform_index(rng, 3));
                     ScalarFn f = [=](Tape& t, Var v) { return ops::softmax_cross_entropy(t, v, labels); };
                     return GradInstance{f, z};
                   }});
  cases.push_back({"group_mean", [](Rng& rng) {
                     const Tensor x = random_tensor({6, 3}, rng);
                     const Tensor off = offset_like({2, 3}, rng);
                     ScalarFn f = [=](Tape& t, Var v) { return readout(t, ops::group_mean(t, v, 2), off); };
                     return GradInstance{f, x};
                   }});
  for (int arg = 0; arg < 2; ++arg) {
    cases.push_back({std::string("add/") + (arg == 0 ? "lhs" : "rhs"), [arg](Rng& rng) {
                       const Tensor a = random_tensor({3, 4}, rng);
                       const Tensor b = random_tensor({3, 4}, rng);
                       ScalarFn f = [=](Tape& t, Var v) {
                         const Var other = t.constant(arg == 0 ? b : a);
                         const Var y = arg == 0 ? ops::add(t, v, other) : ops::add(t, other, v);
                         return ops::sum(t, ops::square(t, y));
                       };
                       return GradInstance{f, arg == 0 ? a : b};
                     }});
  }
  cases.push_back({"scale", [](Rng& rng) {
                     const Tensor x = random_tensor({3, 4}, rng);
                     const Tensor off = offset_like({3, 4}, rng);
                     const double k = uniform(rng, -2.0, 2.0);
                     ScalarFn f = [=](Tape& t, Var v) { return readout(t, ops::scale(t, v, k), off); };
                     return GradInstance{f, x};
                   }});
  cases.push_back({"square", [](Rng& rng) {
                     const Tensor x = random_tensor({3, 4}, rng);
                     const Tensor off = offset_like({3, 4}, rng);
                     ScalarFn f = [=](Tape& t, Var v) { return readout(t, ops::square(t, v), off); };
                     return GradInstance{f, x};
                   }});
  cases.push_back({"sum", [](Rng& rng) {
                     const Tensor x = random_tensor({2, 5}, rng);
                     ScalarFn f = [](Tape& t, Var v) { return ops::square(t, ops::sum(t, v)); };
                     return GradInstance{f, x};
                   }});
  cases.push_back({"reshape", [](Rng& rng) {
                     const Tensor x = random_tensor({2, 6}, rng);
                     const Tensor off = offset_like({3, 4}, rng);
                     ScalarFn f = [=](Tape& t, Var v) { return readout(t, ops::reshape(t, v, {3, 4}), off); };
                     return GradInstance{f, x};
                   }});
  return cases;
}

/// Small compact 3D network with dropout active; cases differentiate the
/// cross-entropy loss w.r.t. the input and each parameter tensor.
inline std::vector<GradCase> network_grad_cases() {
  CompactOptions opts;
  opts.widths = {3, 4, 5};
  opts.dropout = 0.3;
  const ModelSpec spec = compact_spec(true, 2, 4, 4, opts);
  std::vector<std::string> targets{"input"};
  for (const auto& [name, shape] : parameter_shapes(spec)) targets.push_back(name);

  std::vector<GradCase> cases;
  for (const std::string& target : targets) {
    cases.push_back({"compact3d/" + target, [spec, target](Rng& rng) {
                       Checkpoint ck;
                       ck.spec = spec;
                       for (const auto& [name, shape] : parameter_shapes(spec))
                         ck.params.push_back({name, random_tensor(shape, rng, -0.6, 0.6)});
                       const Tensor x = random_tensor({2, 2, 4, 4, 4}, rng, 0.0, 1.0);
                       const std::vector<int> labels{static_cast<int>(uniform_index(rng, 3)),
                                                     static_cast<int>(uniform_index(rng, 3))};
                       const std::uint64_t seed = rng();
                       ScalarFn f = [ck, x, labels, seed, target](Tape& t, Var v) {
                         BoundModel m = bind_model(t, ck);
                         Var in = target == "input" ? v : t.constant(x);
                         if (target != "input") m.vars[target] = v;
                         Rng drop(seed);
                         return ops::softmax_cross_entropy(t, forward(t, m, in, true, drop), labels);
                       };
                       return GradInstance{f, target == "input" ? x : ck.param(target)};
                     }});
  }
  return cases;
}

struct GradSummary {
  double worst = 0.0;
  std::size_t instances = 0;
  std::size_t redraws = 0;
};

/// Runs `instances` accepted draws of one case. A draw is accepted when its
/// kink margin exceeds `min_margin`.
inline GradSummary run_grad_case(const GradCase& c, std::size_t instances, double h, Rng& rng,
                                 double min_margin = 5e-4) {
  GradSummary s;
  while (s.instances < instances) {
    GradInstance inst = c.draw(rng);
    {
      Tape tape;
      inst.f(tape, tape.constant(inst.point));
      if (kink_margin(tape) < min_margin) {
        ++s.redraws;
        if (s.redraws > 50 * instances) throw std::runtime_error(c.name + ": could not draw kink-free instances");
        continue;
      }
    }
    s.worst = std::max(s.worst, grad_check(inst.f, inst.point, h).max_relative_error);
    ++s.instances;
  }
  return s;
}

}  // namespace tsn::test
