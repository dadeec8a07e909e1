// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance                      run every criterion
//   acceptance --criterion NAME     run one (exit 0 on PASS, 1 on FAIL)
//   acceptance --list               print criterion names

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "tristream/data.hpp"
#include "tristream/layers.hpp"
#include "tristream/model.hpp"
#include "tristream/ops.hpp"
#include "tristream/train.hpp"

namespace fs = std::filesystem;
using namespace tristream;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail.clear();
    pass = false;
    detail += (detail.empty() ? "" : "; ") + what;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Tensor eval_layer(const ParamStore& p, const Tensor& x, const std::function<ad::Var(const ad::Binder&, ad::Var)>& f) {
  return layers::evaluate(p, [&](ad::Binder& b) { return f(b, b.graph().constant(x)); });
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("tristream_acceptance_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int cli_run(std::vector<std::string> args, std::string* captured = nullptr) {
  args.insert(args.begin(), "tristream");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (captured) *captured = out.str() + err.str();
  return code;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- criteria -------------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const GradSuiteResult r = gradcheck_suite(1, 1e-4);
  const double secs = seconds_since(t0);
  o.detail = std::to_string(r.reports.size()) + " checks, max_rel_err " + fmt("%.3e", r.max_rel_err) + " (h=1e-5), " +
             fmt("%.2f", secs) + " s";
  o.require(r.passed(), "gradient mismatch: " + r.summary(1e-4));
  o.require(r.max_rel_err <= 1e-4, "max_rel_err " + fmt("%.3e", r.max_rel_err) + " > 1e-4");
  o.require(secs <= 60.0, "runtime " + fmt("%.1f", secs) + " s > 60 s");
  return o;
}

Outcome causality_suite() {
  Outcome o;
  Rng rng(101);
  std::size_t probes = 0;
  // Each entry maps an input to the output of one causal layer.
  struct Case {
    std::string name;
    std::size_t in_channels;
    std::function<Tensor(const Tensor&)> f;
  };
  std::vector<Case> cases;
  const Conv1dKernel k{random_tensor({3, 2, 3}, rng), random_tensor({3}, rng), 2};
  cases.push_back({"conv1d_causal", 2, [k](const Tensor& x) { return conv1d_causal(x, k); }});
  const Tensor dw = random_tensor({2, 4}, rng);
  cases.push_back({"depthwise_conv1d", 2, [dw](const Tensor& x) { return depthwise_conv1d(x, dw, 3); }});

  auto block = std::make_shared<ParamStore>();
  const layers::TcnBlockSpec bspec{2, 3, 3, 2};
  layers::init_tcn_block(*block, "t", bspec, rng);
  cases.push_back({"tcn_block", 2, [block, bspec](const Tensor& x) {
                     return eval_layer(*block, x, [&](const ad::Binder& b, ad::Var v) {
                       return layers::tcn_block(b, "t", bspec, v);
                     });
                   }});
  auto stack = std::make_shared<ParamStore>();
  layers::TcnStackSpec sspec;
  sspec.in_channels = 2;
  sspec.filters = 3;
  sspec.dilations = {1, 2, 4};
  layers::init_tcn_stack(*stack, "s", sspec, rng);
  cases.push_back({"tcn_stack", 2, [stack, sspec](const Tensor& x) {
                     return eval_layer(*stack, x, [&](const ad::Binder& b, ad::Var v) {
                       return layers::tcn_stack(b, "s", sspec, v);
                     });
                   }});
  auto bi = std::make_shared<ParamStore>();
  layers::init_bitcn(*bi, "a", sspec, rng);
  cases.push_back({"bitcn forward half", 2, [bi, sspec](const Tensor& x) {
                     const Tensor y = eval_layer(*bi, x, [&](const ad::Binder& b, ad::Var v) {
                       return layers::bitcn(b, "a", sspec, v);
                     });
                     const std::vector<std::size_t> extents{3, 3};
                     return split_channels(y, extents)[0];
                   }});

  for (const auto& c : cases) {
    for (int trial = 0; trial < 4; ++trial) {
      const std::size_t T = 24;
      const Tensor x = random_tensor({c.in_channels, T}, rng);
      const Tensor y = c.f(x);
      for (std::size_t s = 0; s < T; ++s) {
        Tensor xp = x;
        for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
          for (std::size_t t = s; t < T; ++t) xp.at(ch, t) += rng.uniform(-2.0, 2.0);
        }
        const Tensor yp = c.f(xp);
        ++probes;
        for (std::size_t ch = 0; ch < y.dim(0); ++ch) {
          for (std::size_t t = 0; t < s; ++t) {
            if (y.at(ch, t) != yp.at(ch, t)) {
              o.require(false, c.name + ": output t=" + std::to_string(t) + " moved when inputs >= " +
                                   std::to_string(s) + " changed");
            }
          }
        }
      }
    }
  }
  if (o.pass) o.detail = std::to_string(cases.size()) + " causal layers, " + std::to_string(probes) + " probes, past outputs bitwise unchanged";
  return o;
}

Outcome bi_branch_identities() {
  Outcome o;
  Rng rng(202);
  std::size_t conv_cases = 0;
  for (int trial = 0; trial < 200; ++trial, ++conv_cases) {
    const std::size_t T = 1 + rng.below(64), cin = 1 + rng.below(5), cout = 1 + rng.below(5);
    const Tensor x = random_tensor({cin, T}, rng);
    const Conv1dKernel k{random_tensor({cout, cin, 1 + rng.below(5)}, rng), random_tensor({cout}, rng),
                         1 + rng.below(4)};
    if (!(conv1d_anticausal(x, k) == reverse_time(conv1d_causal(reverse_time(x), k)))) {
      o.require(false, "anticausal != reverse(causal(reverse)) at trial " + std::to_string(trial));
    }
  }

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t In = 1 + rng.below(4), H = 1 + rng.below(5), T = 1 + rng.below(12);
    ParamStore p;
    layers::init_bilstm(p, "l", {In, H}, rng);
    const Tensor x = random_tensor({In, T}, rng);
    const Tensor y = eval_layer(p, x, [](const ad::Binder& b, ad::Var v) {
      return layers::bilstm(b, "l", v, layers::Combine::concat);
    });
    // Scalar reference scan over t = T-1 .. 0 with the backward parameters.
    const Tensor& wi = p.at("l.bwd.w_input");
    const Tensor& wh = p.at("l.bwd.w_hidden");
    const Tensor& bias = p.at("l.bwd.bias");
    const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> h(H, 0.0), c(H, 0.0), a(4 * H);
    for (std::size_t step = 0; step < T; ++step) {
      const std::size_t t = T - 1 - step;
      for (std::size_t r = 0; r < 4 * H; ++r) {
        a[r] = bias[r];
        for (std::size_t j = 0; j < In; ++j) a[r] += wi.at(r, j) * x.at(j, t);
        for (std::size_t j = 0; j < H; ++j) a[r] += wh.at(r, j) * h[j];
      }
      for (std::size_t j = 0; j < H; ++j) {
        c[j] = sig(a[H + j]) * c[j] + sig(a[j]) * std::tanh(a[2 * H + j]);
        h[j] = sig(a[3 * H + j]) * std::tanh(c[j]);
        worst = std::max(worst, std::abs(y.at(H + j, t) - h[j]));
      }
    }
  }
  o.require(worst <= 1e-12, "BiLSTM backward scan deviates by " + fmt("%.3e", worst));
  if (o.pass) {
    o.detail = std::to_string(conv_cases) + " anticausal cases exact; BiLSTM backward max |diff| " + fmt("%.2e", worst);
  }
  return o;
}

Outcome se_attention_contract() {
  Outcome o;
  Rng rng(303);
  std::size_t checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng.below(4), C = r * (1 + rng.below(6)), T = 1 + rng.below(30);
    const layers::SeSpec se{C, r, layers::Gate::sigmoid};
    ParamStore p;
    layers::init_se(p, "se", se, rng);
    for (auto& e : p.entries()) {
      for (double& v : e.value.data()) v = rng.uniform(-3.0, 3.0);
    }
    Tensor x = random_tensor({C, T}, rng);
    for (double& v : x.data()) v *= 5.0;
    const Tensor y = eval_layer(p, x, [&](const ad::Binder& b, ad::Var v) { return layers::se_block(b, "se", se, v); });
    for (std::size_t i = 0; i < x.size(); ++i, ++checked) {
      if (std::abs(y[i]) > std::abs(x[i])) o.require(false, "SE output exceeds input at element " + std::to_string(i));
    }
    ParamStore q;
    layers::init_channel_attention(q, "at", {C, r}, rng);
    const Tensor f = random_tensor({C}, rng);
    const Tensor g = eval_layer(q, f, [](const ad::Binder& b, ad::Var v) { return layers::channel_attention(b, "at", v); });
    for (std::size_t i = 0; i < C; ++i, ++checked) {
      if (std::abs(g[i]) > std::abs(f[i])) o.require(false, "attention output exceeds input");
    }

    for (auto& e : p.entries()) e.value.fill(0.0);
    const Tensor half = eval_layer(p, x, [&](const ad::Binder& b, ad::Var v) { return layers::se_block(b, "se", se, v); });
    if (!(half == mul(x, Tensor::scalar(0.5)))) o.require(false, "zero-weight SE is not exactly x/2");
  }
  if (o.pass) o.detail = std::to_string(checked) + " gated elements bounded; zero-weight SE returns x/2 exactly";
  return o;
}

Outcome softmax_cross_entropy() {
  Outcome o;
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor v({1 + rng.below(100)});
    for (double& x : v.data()) x = rng.uniform(-50.0, 50.0);
    const Tensor p = softmax(v);
    double s = 0.0;
    for (double x : p.data()) s += x;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  o.require(worst <= 1e-12, "softmax sum off by " + fmt("%.3e", worst));
  double worst_ce = 0.0;
  for (std::size_t K = 2; K <= 64; ++K) {
    const Tensor logits({4, K}, rng.uniform(-5, 5));
    const std::vector<std::size_t> labels{0, K - 1, K / 2, 1};
    worst_ce = std::max(worst_ce, std::abs(cross_entropy(logits, labels) - std::log(static_cast<double>(K))));
  }
  const std::vector<std::size_t> label{3};
  const double k52 = cross_entropy(Tensor({1, 52}), label);
  o.require(worst_ce <= 1e-4, "uniform-logit loss deviates from ln K by " + fmt("%.3e", worst_ce));
  o.require(std::abs(k52 - 3.9512) <= 1e-4, "K=52 loss " + fmt("%.6f", k52));
  if (o.pass) {
    o.detail = "max |sum-1| " + fmt("%.1e", worst) + "; K=52 loss " + fmt("%.4f", k52) + "; max |CE-lnK| " +
               fmt("%.1e", worst_ce);
  }
  return o;
}

Outcome flops_linearity() {
  Outcome o;
  const ModelConfig c;
  const FlopReport a = count_flops(c, {}, 1000), b = count_flops(c, {}, 10000);
  const double ratio = static_cast<double>(b.total) / static_cast<double>(a.total);
  o.detail = "count(1000)=" + std::to_string(a.total) + " (" + fmt("%.3f", a.mflops()) + " MFLOPs), count(10000)=" +
             std::to_string(b.total) + " (" + fmt("%.3f", b.mflops()) + " MFLOPs), ratio " + fmt("%.6f", ratio);
  o.require(ratio == 10.0, "ratio " + fmt("%.6f", ratio) + " != 10.0; " + o.detail);
  return o;
}

// Synthetic end-to-end run through the command-line pipeline.
constexpr int kSynthPerClass = 80;
constexpr const char* kSynthPipeline = R"({"preprocess": {"augment_copies": 0}})";

Outcome synthetic_end_to_end() {
  Outcome o;
  TempDir dir("e2e");
  std::string log;
  if (cli_run({"synth", "--classes", "6", "--channels", "12", "--window", "500", "--per-class",
               std::to_string(kSynthPerClass), "--seed", "1", "--out", dir / "synth.emgb"},
              &log) != 0) {
    o.require(false, "synth failed: " + log);
    return o;
  }
  std::ofstream(dir / "pipeline.json") << kSynthPipeline;
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cli_run({"train", "--config", dir / "pipeline.json", "--preset", "db5", "--epochs", "30", "--data",
                            dir / "synth.emgb", "--out", dir / "model.tsw", "--report", dir / "test.json"},
                           &log);
  const double secs = seconds_since(t0);
  if (code != 0) {
    o.require(false, "train failed: " + log);
    return o;
  }
  const double acc = nlohmann::json::parse(slurp(dir / "test.json")).at("accuracy").get<double>();
  o.require(acc >= 95.0, "test accuracy " + fmt("%.2f", acc) + "% < 95%");
  o.require(secs <= 300.0, "training took " + fmt("%.1f", secs) + " s > 300 s");

  std::string table;
  const int abl = cli_run({"ablate", "--config", dir / "pipeline.json", "--preset", "db5", "--epochs", "2", "--data",
                           dir / "synth.emgb", "--out", dir / "ablation.json"},
                          &table);
  std::size_t rows = 0;
  if (abl == 0) rows = nlohmann::json::parse(slurp(dir / "ablation.json")).size();
  o.require(abl == 0 && rows == 5, "ablation harness produced " + std::to_string(rows) + " rows: " + table);
  if (o.pass) {
    o.detail = "db5 preset, 30 epochs: test accuracy " + fmt("%.2f", acc) + "% in " + fmt("%.1f", secs) +
               " s; ablation harness ran 5 rows";
  }
  return o;
}

Outcome determinism() {
  Outcome o;
  TempDir dir("determinism");
  const nlohmann::json cfg = {{"model",
                               {{"stream_a", {{"filters", 8}}},
                                {"stream_b", {{"separable_filters", 8}}},
                                {"stream_c", {{"tcn_filters", 8}, {"lstm_hidden", 8}}}}}};
  std::ofstream(dir / "cfg.json") << cfg.dump();
  std::string log;
  cli_run({"synth", "--classes", "4", "--channels", "4", "--window", "100", "--per-class", "10", "--out",
           dir / "d.emgb"},
          &log);
  const char* saved = std::getenv("TRISTREAM_THREADS");
  const std::string saved_value = saved ? saved : "";
  std::vector<std::string> logs, ckpts;
  for (const char* threads : {"1", "3"}) {
    setenv("TRISTREAM_THREADS", threads, 1);
    const std::string out = dir / (std::string("m") + threads + ".tsw");
    if (cli_run({"train", "--config", dir / "cfg.json", "--epochs", "4", "--seed", "7", "--data", dir / "d.emgb",
                 "--out", out},
                &log) != 0) {
      o.require(false, "train failed: " + log);
      break;
    }
    logs.push_back(slurp(out + ".log.jsonl"));
    ckpts.push_back(slurp(out));
  }
  if (saved) {
    setenv("TRISTREAM_THREADS", saved_value.c_str(), 1);
  } else {
    unsetenv("TRISTREAM_THREADS");
  }
  if (!o.pass) return o;
  o.require(!logs[0].empty() && logs[0] == logs[1], "training logs differ");
  o.require(ckpts[0] == ckpts[1], "checkpoints differ");
  if (o.pass) o.detail = "two seeded runs (1 and 3 workers): logs and " + std::to_string(ckpts[0].size()) + "-byte checkpoints identical";
  return o;
}

Outcome preprocessing() {
  Outcome o;
  Rng rng(505);
  double worst_mean = 0.0, worst_std = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 1 + rng.below(16), T = 2 + rng.below(1000);
    Tensor x({C, T});
    const double scale = rng.uniform(1e-3, 1e3), shift = rng.uniform(-1e3, 1e3);
    for (double& v : x.data()) v = shift + scale * rng.normal();
    const Tensor y = data::zscore(x);
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t t = 0; t < T; ++t) m += y.at(c, t);
      m /= static_cast<double>(T);
      for (std::size_t t = 0; t < T; ++t) v += (y.at(c, t) - m) * (y.at(c, t) - m);
      worst_mean = std::max(worst_mean, std::abs(m));
      worst_std = std::max(worst_std, std::abs(std::sqrt(v / static_cast<double>(T)) - 1.0));
    }
  }
  o.require(worst_mean <= 1e-10 && worst_std <= 1e-10,
            "zscore moments off: |mean| " + fmt("%.2e", worst_mean) + ", |std-1| " + fmt("%.2e", worst_std));

  const Tensor noise = data::add_gaussian_noise(Tensor({1000000}), 0.1, rng);
  double m = 0.0, var = 0.0;
  for (double v : noise.data()) m += v;
  m /= 1e6;
  for (double v : noise.data()) var += (v - m) * (v - m);
  var /= 1e6 - 1.0;
  o.require(std::abs(var - 0.1) <= 0.002, "noise variance " + fmt("%.5f", var));
  o.require(std::abs(m) <= 0.001, "noise mean " + fmt("%.5f", m));

  data::SynthConfig sc;
  sc.per_class = 37;
  sc.window = 8;
  Rng srng(9);
  data::WindowedDataset ds = data::synth_generate(sc, srng);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.windows.row(i)[0] = static_cast<double>(i);  // window id
  const auto ids = [](const data::WindowedDataset& d) {
    std::multiset<double> s;
    for (std::size_t i = 0; i < d.size(); ++i) s.insert(d.windows.row(i)[0]);
    return s;
  };
  const data::Split split = data::split_ratio(ds, {6, 2, 2}, srng);
  std::multiset<double> joined;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (double v : ids(*part)) joined.insert(v);
  }
  const auto all = ids(ds);
  o.require(joined == all && std::set<double>(joined.begin(), joined.end()).size() == ds.size(),
            "ratio split is not a partition");

  const data::RepetitionSplit rep = data::split_repetition(ds, {1, 3, 4, 6}, {2, 5});
  bool reps_ok = rep.train.size() + rep.test.size() == ds.size();
  for (auto r : rep.train.repetitions) reps_ok = reps_ok && (r == 1 || r == 3 || r == 4 || r == 6);
  for (auto r : rep.test.repetitions) reps_ok = reps_ok && (r == 2 || r == 5);
  o.require(reps_ok, "repetition split does not honor {1,3,4,6}/{2,5}");
  if (o.pass) {
    o.detail = "zscore |mean| " + fmt("%.1e", worst_mean) + ", |std-1| " + fmt("%.1e", worst_std) +
               "; noise var " + fmt("%.5f", var) + ", mean " + fmt("%.5f", m) + "; splits " +
               std::to_string(split.train.size()) + "/" + std::to_string(split.val.size()) + "/" +
               std::to_string(split.test.size()) + " and reps " + std::to_string(rep.train.size()) + "/" +
               std::to_string(rep.test.size());
  }
  return o;
}

Outcome format_round_trips() {
  Outcome o;
  TempDir dir("formats");
  data::SynthConfig sc;
  sc.per_class = 5;
  sc.window = 64;
  Rng rng(606);
  const data::WindowedDataset ds = data::synth_generate(sc, rng);
  data::save_emgb(ds, dir / "a.emgb");
  data::save_emgb(data::load_emgb(dir / "a.emgb"), dir / "b.emgb");
  const std::string ea = slurp(dir / "a.emgb"), eb = slurp(dir / "b.emgb");
  o.require(!ea.empty() && ea == eb, "EMGB save-load-save bytes differ");

  ModelConfig c;
  c.num_classes = 6;
  const AblationFlags flags{true, true, false, true};
  const Checkpoint ck{c, flags, build(c, flags, rng)};
  save_checkpoint(ck, dir / "a.tsw");
  save_checkpoint(load_checkpoint(dir / "a.tsw"), dir / "b.tsw");
  const std::string ta = slurp(dir / "a.tsw"), tb = slurp(dir / "b.tsw");
  o.require(!ta.empty() && ta == tb, "TSW1 save-load-save bytes differ");
  if (o.pass) o.detail = "EMGB " + std::to_string(ea.size()) + " bytes, TSW1 " + std::to_string(ta.size()) + " bytes identical";
  return o;
}

struct Criterion {
  const char* name;
  const char* title;
  Outcome (*run)();
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"gradient_suite", "Gradient suite", gradient_suite},
      {"causality", "Causality suite", causality_suite},
      {"bi_branch", "Bi-branch identities", bi_branch_identities},
      {"se_attention", "SE/attention contract", se_attention_contract},
      {"softmax_ce", "Softmax/cross-entropy", softmax_cross_entropy},
      {"flops_linearity", "FLOPs linearity", flops_linearity},
      {"synthetic_e2e", "Synthetic end-to-end", synthetic_end_to_end},
      {"determinism", "Determinism", determinism},
      {"preprocessing", "Preprocessing", preprocessing},
      {"format_round_trips", "Format round trips", format_round_trips},
  };
  return all;
}

bool report(const Criterion& c) {
  Outcome o;
  try {
    o = c.run();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " (" << c.title << "): " << o.detail << std::endl;
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  if (args.size() == 1 && args[0] == "--list") {
    for (const auto& c : criteria()) std::cout << c.name << "\n";
    return 0;
  }
  if (args.size() == 2 && args[0] == "--criterion") {
    for (const auto& c : criteria()) {
      if (args[1] == c.name) return report(c) ? 0 : 1;
    }
    std::cerr << "unknown criterion " << args[1] << "\n";
    return 2;
  }
  if (!args.empty()) {
    std::cerr << "usage: acceptance [--list | --criterion NAME]\n";
    return 2;
  }
  std::size_t failed = 0;
  for (const auto& c : criteria()) failed += report(c) ? 0 : 1;
  std::cout << (criteria().size() - failed) << "/" << criteria().size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
