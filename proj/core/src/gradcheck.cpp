#include "tristream/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tristream/error.hpp"
#include "tristream/rng.hpp"

namespace tristream::ad {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& theta, double h) {
  Tensor grad(theta.shape());
  Tensor probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double analytic, double numeric, double floor) noexcept {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::string GradReport::summary() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s max_rel_err=%.3e max_abs_err=%.3e (tol %.1e, h %.1e)",
                passed() ? "PASS" : "FAIL", max_rel_err, max_abs_err, tolerance, step);
  std::string s = buf;
  if (!failing_params.empty()) {
    s += "\nfailing parameters:";
    for (const auto& p : failing_params) s += " " + p;
  }
  if (!failing_ops.empty()) {
    s += "\nfailing ops:";
    for (const auto& o : failing_ops) s += " " + o;
  }
  return s;
}

namespace {

double eval_loss(const ParamStore& params, const LossBuilder& loss) {
  Graph g(false);
  Binder bind(g, params);
  return loss(bind).value().item();
}

}  // namespace

GradReport gradcheck(const ParamStore& params, const LossBuilder& loss, const GradcheckOptions& options) {
  GradReport report;
  report.step = options.step;
  report.tolerance = options.tolerance;

  std::map<std::string, Tensor> analytic;
  for (std::size_t attempt = 0;; ++attempt) {
    Graph g;
    Binder bind(g, params);
    Var l = loss(bind);
    if (g.min_kink_distance() >= options.kink_margin || !options.nudge || attempt >= options.max_nudges) {
      analytic = g.backward(l);
      break;
    }
    options.nudge(attempt);
  }

  ParamStore probe = params;
  for (auto& entry : probe.entries()) {
    GradReport::Entry e{entry.name, entry.value.size(), 0.0, 0.0};
    Tensor& theta = entry.value;
    const Tensor original = theta;
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& t) {
          theta = t;
          return eval_loss(probe, loss);
        },
        original, options.step);
    theta = original;
    const auto it = analytic.find(entry.name);
    const Tensor a = it != analytic.end() ? it->second : Tensor(original.shape());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      e.max_abs_err = std::max(e.max_abs_err, std::abs(a[i] - numeric[i]));
      e.max_rel_err = std::max(e.max_rel_err, relative_error(a[i], numeric[i], options.floor));
    }
    report.max_abs_err = std::max(report.max_abs_err, e.max_abs_err);
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    if (e.max_rel_err > options.tolerance) report.failing_params.push_back(e.name);
    report.params.push_back(std::move(e));
  }
  if (!report.passed() && options.localize) report.failing_ops = check_op_rules(options.step, options.tolerance);
  return report;
}

// ---------------------------------------------------------------------------
// Op-level checks

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from 0 so relu never sits on its kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
  return t;
}

struct OpCase {
  std::string op;
  std::function<void(ParamStore&, Rng&)> init;
  LossBuilder loss;
};

// Random linear readout so every output element carries a distinct weight.
Var readout(Binder& p, Var y) { return sum(mul(y, p("readout"))); }

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto with_readout = [](Shape out_shape) {
    return [out_shape](ParamStore& s, Rng& r) { s.add("readout", random_tensor(out_shape, r)); };
  };
  cases.push_back({"add",
                   [=](ParamStore& s, Rng& r) {
                     s.add("a", random_tensor({3, 4}, r));
                     s.add("b", random_tensor({3, 4}, r));
                     with_readout({3, 4})(s, r);
                   },
                   [](Binder& p) { return readout(p, add(p("a"), p("b"))); }});
  cases.push_back({"sub",
                   [=](ParamStore& s, Rng& r) {
                     s.add("a", random_tensor({3, 4}, r));
                     s.add("b", random_tensor({3, 4}, r));
                     with_readout({3, 4})(s, r);
                   },
                   [](Binder& p) { return readout(p, sub(p("a"), p("b"))); }});
  cases.push_back({"mul",
                   [=](ParamStore& s, Rng& r) {
                     s.add("a", random_tensor({3, 4}, r));
                     s.add("b", random_tensor({3, 4}, r));
                     with_readout({3, 4})(s, r);
                   },
                   [](Binder& p) { return readout(p, mul(p("a"), p("b"))); }});
  cases.push_back({"relu",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", away_from_zero({3, 5}, r));
                     with_readout({3, 5})(s, r);
                   },
                   [](Binder& p) { return readout(p, relu(p("x"))); }});
  cases.push_back({"sigmoid",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({3, 5}, r, -2, 2));
                     with_readout({3, 5})(s, r);
                   },
                   [](Binder& p) { return readout(p, sigmoid(p("x"))); }});
  cases.push_back({"tanh",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({3, 5}, r, -2, 2));
                     with_readout({3, 5})(s, r);
                   },
                   [](Binder& p) { return readout(p, tanh(p("x"))); }});
  cases.push_back({"matmul",
                   [=](ParamStore& s, Rng& r) {
                     s.add("a", random_tensor({3, 4}, r));
                     s.add("b", random_tensor({4, 2}, r));
                     with_readout({3, 2})(s, r);
                   },
                   [](Binder& p) { return readout(p, matmul(p("a"), p("b"))); }});
  for (bool causal : {true, false}) {
    cases.push_back({causal ? "conv1d_causal" : "conv1d_anticausal",
                     [=](ParamStore& s, Rng& r) {
                       s.add("x", random_tensor({2, 9}, r));
                       s.add("w", random_tensor({3, 2, 3}, r));
                       s.add("b", random_tensor({3}, r));
                       with_readout({3, 9})(s, r);
                     },
                     [causal](Binder& p) {
                       Var y = causal ? conv1d_causal(p("x"), p("w"), p("b"), 2)
                                      : conv1d_anticausal(p("x"), p("w"), p("b"), 2);
                       return readout(p, y);
                     }});
  }
  cases.push_back({"depthwise_conv1d",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({3, 8}, r));
                     s.add("k", random_tensor({3, 3}, r));
                     with_readout({3, 8})(s, r);
                   },
                   [](Binder& p) { return readout(p, depthwise_conv1d(p("x"), p("k"), 2)); }});
  cases.push_back({"pointwise_conv1d",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({3, 6}, r));
                     s.add("k", random_tensor({4, 3}, r));
                     with_readout({4, 6})(s, r);
                   },
                   [](Binder& p) { return readout(p, pointwise_conv1d(p("x"), p("k"))); }});
  cases.push_back({"avg_pool_time",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({3, 6}, r));
                     with_readout({3})(s, r);
                   },
                   [](Binder& p) { return readout(p, avg_pool_time(p("x"))); }});
  cases.push_back({"concat",
                   [=](ParamStore& s, Rng& r) {
                     s.add("a", random_tensor({2, 4}, r));
                     s.add("b", random_tensor({3, 4}, r));
                     with_readout({5, 4})(s, r);
                   },
                   [](Binder& p) {
                     const Var parts[] = {p("a"), p("b")};
                     return readout(p, concat_channels(parts));
                   }});
  cases.push_back({"slice",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({5, 3}, r));
                     with_readout({2, 3})(s, r);
                   },
                   [](Binder& p) { return readout(p, slice_channels(p("x"), 1, 2)); }});
  cases.push_back({"reverse_time",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({2, 5}, r));
                     with_readout({2, 5})(s, r);
                   },
                   [](Binder& p) { return readout(p, reverse_time(p("x"))); }});
  cases.push_back({"reshape",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({2, 3}, r));
                     with_readout({3, 2})(s, r);
                   },
                   [](Binder& p) { return readout(p, reshape(p("x"), {3, 2})); }});
  cases.push_back({"scale_channels",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({3, 5}, r));
                     s.add("s", random_tensor({3}, r));
                     with_readout({3, 5})(s, r);
                   },
                   [](Binder& p) { return readout(p, scale_channels(p("x"), p("s"))); }});
  cases.push_back({"dense",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({4}, r));
                     s.add("w", random_tensor({3, 4}, r));
                     s.add("b", random_tensor({3}, r));
                     with_readout({3})(s, r);
                   },
                   [](Binder& p) { return readout(p, dense(p("x"), p("w"), p("b"))); }});
  cases.push_back({"lstm_cell",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({3}, r));
                     s.add("h", random_tensor({2}, r));
                     s.add("c", random_tensor({2}, r));
                     s.add("wx", random_tensor({8, 3}, r));
                     s.add("wh", random_tensor({8, 2}, r));
                     s.add("b", random_tensor({8}, r));
                     s.add("rh", random_tensor({2}, r));
                     s.add("rc", random_tensor({2}, r));
                   },
                   [](Binder& p) {
                     auto st = lstm_cell(p("x"), p("h"), p("c"), p("wx"), p("wh"), p("b"));
                     return add(sum(mul(st.h, p("rh"))), sum(mul(st.c, p("rc"))));
                   }});
  cases.push_back({"lstm_scan",
                   [=](ParamStore& s, Rng& r) {
                     s.add("x", random_tensor({3, 6}, r));
                     s.add("wx", random_tensor({8, 3}, r));
                     s.add("wh", random_tensor({8, 2}, r));
                     s.add("b", random_tensor({8}, r));
                     with_readout({2, 6})(s, r);
                   },
                   [](Binder& p) { return readout(p, lstm_scan(p("x"), p("wx"), p("wh"), p("b"))); }});
  cases.push_back({"cross_entropy",
                   [=](ParamStore& s, Rng& r) { s.add("logits", random_tensor({3, 4}, r, -2, 2)); },
                   [](Binder& p) {
                     const std::size_t labels[] = {0, 3, 1};
                     return cross_entropy(p("logits"), labels);
                   }});
  return cases;
}

}  // namespace

std::vector<std::string> check_op_rules(double step, double tolerance, std::uint64_t seed) {
  std::vector<std::string> failing;
  Rng rng(seed);
  for (const OpCase& c : op_cases()) {
    ParamStore store;
    c.init(store, rng);
    GradcheckOptions opts;
    opts.step = step;
    opts.tolerance = tolerance;
    opts.localize = false;
    const GradReport r = gradcheck(store, c.loss, opts);
    if (!r.passed()) failing.push_back(c.op);
  }
  return failing;
}

}  // namespace tristream::ad
