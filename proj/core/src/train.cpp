#include "tristream/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "tristream/error.hpp"
#include "tristream/layers.hpp"
#include "tristream/ops.hpp"
#include "tristream/parallel.hpp"

namespace tristream {

using Json = nlohmann::json;

double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const bool single = logits.rank() == 1;
  if (!single && logits.rank() != 2) throw ShapeError("cross_entropy expects [B,K] or [K], got " + shape_str(logits.shape()));
  const std::size_t B = single ? 1 : logits.dim(0);
  const std::size_t K = single ? logits.dim(0) : logits.dim(1);
  if (labels.size() != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(B) + " rows");
  }
  if (B == 0) throw ShapeError("cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= K) {
      throw ShapeError("cross_entropy: label " + std::to_string(labels[b]) + " out of range for " + std::to_string(K) +
                       " classes");
    }
    const auto row = logits.data().subspan(b * K, K);
    total += log_sum_exp(row) - row[labels[b]];
  }
  return total / static_cast<double>(B);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
}

TrainConfig preset(std::string_view name) {
  TrainConfig t;
  t.batch_size = 32;
  t.epochs = 100;
  if (name == "db2" || name == "db5") {
    t.learning_rate = 0.01;
  } else if (name == "db4") {
    t.learning_rate = 0.0025;
  } else if (name == "legacy") {
    t.learning_rate = 0.001;
  } else if (name == "synth") {
    t.learning_rate = 0.01;
    t.epochs = 30;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
  }
  return t;
}

std::vector<std::string> preset_names() { return {"db2", "db4", "db5", "legacy", "synth"}; }

// --- Adam ----------------------------------------------------------------------

AdamState AdamState::init(const ParamStore& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const auto& e : params.entries()) {
    s.m.add(e.name, Tensor(e.value.shape()));
    s.v.add(e.name, Tensor(e.value.shape()));
  }
  return s;
}

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ShapeError("adam_step: gradient for unknown parameter " + name);
    if (g.shape() != params.at(name).shape()) {
      throw ShapeError("adam_step: gradient " + shape_str(g.shape()) + " for " + name + " " +
                       shape_str(params.at(name).shape()));
    }
  }
  for (const auto& e : params.entries()) {
    if (!state.m.contains(e.name) || state.m.at(e.name).shape() != e.value.shape()) {
      throw ShapeError("adam_step: optimizer state does not mirror parameter " + e.name);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& e : params.entries()) {
    const auto it = grads.find(e.name);
    auto m = state.m.at(e.name).data();
    auto v = state.v.at(e.name).data();
    auto theta = e.value.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = it != grads.end() ? it->second[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// --- Training ------------------------------------------------------------------

Json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}, {"val_accuracy", val_accuracy}};
}

namespace {

void check_dataset(const data::WindowedDataset& ds, const ModelConfig& config, const char* what) {
  if (ds.size() == 0) throw DataError(std::string(what) + " dataset is empty");
  if (ds.channels() != config.channels || ds.window() != config.window) {
    throw DataError(std::string(what) + " windows are [" + std::to_string(ds.channels()) + ", " +
                    std::to_string(ds.window()) + "] but the model expects [" + std::to_string(config.channels) +
                    ", " + std::to_string(config.window) + "]");
  }
  if (ds.num_classes != config.num_classes) {
    throw DataError(std::string(what) + " dataset declares K=" + std::to_string(ds.num_classes) +
                    " classes but the model has K=" + std::to_string(config.num_classes));
  }
}

constexpr std::size_t kEvalChunk = 128;

/// Eval-mode logits [N,K] in chunks.
Tensor predict(const ParamStore& params, const ModelConfig& config, const AblationFlags& flags,
               const data::WindowedDataset& ds) {
  const std::size_t N = ds.size(), K = config.num_classes;
  std::vector<double> out;
  out.reserve(N * K);
  for (std::size_t start = 0; start < N; start += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, N - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = forward(params, config, flags, ds.batch(idx));
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  return Tensor({N, K}, std::move(out));
}

std::vector<std::size_t> labels_of(const data::WindowedDataset& ds) {
  return {ds.labels.begin(), ds.labels.end()};
}

}  // namespace

FitResult fit(const ModelConfig& config, const AblationFlags& flags, const ParamStore& initial,
              const data::WindowedDataset& train, const data::WindowedDataset& val, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  require_valid(config, flags);
  check_dataset(train, config, "training");
  check_dataset(val, config, "validation");

  FitResult result;
  ParamStore params = initial;
  result.best = initial;
  AdamState adam = AdamState::init(params, cfg.learning_rate);
  const std::vector<std::size_t> val_labels = labels_of(val);
  const std::size_t N = train.size();

  double best_acc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = Rng::derive(cfg.seed, epoch);
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(epoch_seed);
    for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size, ++batch_index) {
      const std::size_t n = std::min(cfg.batch_size, N - start);
      std::vector<std::map<std::string, Tensor>> grads(n);
      std::vector<double> losses(n);
      try {
        parallel_for(n, [&](std::size_t i) {
          const std::size_t idx = order[start + i];
          ad::Graph g;
          ad::Binder bind(g, params);
          Rng drop(Rng::derive(epoch_seed, idx));
          const ad::Var x = g.constant(train.window_tensor(idx));
          const ad::Var logits = forward_sample(bind, config, flags, x, layers::Mode::train, drop);
          const std::size_t label = train.labels[idx];
          const ad::Var loss = ad::cross_entropy(logits, std::span<const std::size_t>(&label, 1));
          losses[i] = loss.value().item();
          grads[i] = g.backward(loss);
        });
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) + ": " +
                           e.what());
      }

      double batch_loss = 0.0;
      for (double l : losses) batch_loss += l;
      if (!std::isfinite(batch_loss)) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) +
                           ": non-finite loss");
      }
      loss_sum += batch_loss;
      if (epoch == 1 && batch_index == 0) result.first_batch_loss = batch_loss / static_cast<double>(n);

      std::map<std::string, Tensor> mean;
      const double inv = 1.0 / static_cast<double>(n);
      for (const auto& e : params.entries()) {
        Tensor total(e.value.shape());
        for (const auto& g : grads) {
          const auto it = g.find(e.name);
          if (it == g.end()) continue;
          for (std::size_t k = 0; k < total.size(); ++k) total[k] += it->second[k];
        }
        for (double& v : total.data()) v *= inv;
        mean.emplace(e.name, std::move(total));
      }
      adam_step(params, mean, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(N);
    const Tensor logits = predict(params, config, flags, val);
    rec.val_loss = cross_entropy(logits, val_labels);
    const auto pred = argmax_rows(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == val_labels[i];
    rec.val_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(val.size());
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("epoch " + std::to_string(epoch) + ": non-finite validation loss");
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_accuracy > best_acc || (rec.val_accuracy == best_acc && rec.val_loss < best_loss)) {
      best_acc = rec.val_accuracy;
      best_loss = rec.val_loss;
      result.best = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  result.last = std::move(params);
  return result;
}

// --- Metrics -------------------------------------------------------------------

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows expects [N,K], got " + shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::vector<std::size_t> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    const auto row = logits.data().subspan(i * K, K);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

MetricsReport metrics_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                       std::size_t num_classes, double loss) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("metrics: " + std::to_string(truth.size()) + " labels vs " + std::to_string(predicted.size()) +
                     " predictions");
  }
  MetricsReport r;
  r.num_classes = num_classes;
  r.total = truth.size();
  r.loss = loss;
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw DataError("metrics: class id out of range for " + std::to_string(num_classes) + " classes");
    }
    ++r.confusion[truth[i]][predicted[i]];
    correct += truth[i] == predicted[i];
  }
  r.accuracy = r.total ? 100.0 * static_cast<double>(correct) / static_cast<double>(r.total) : 0.0;

  auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  std::size_t p_n = 0, r_n = 0;
  r.per_class.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassMetrics& m = r.per_class[c];
    for (std::size_t k = 0; k < num_classes; ++k) {
      m.support += r.confusion[c][k];
      m.predicted += r.confusion[k][c];
    }
    const std::size_t tp = r.confusion[c][c];
    m.precision = 100.0 * ratio(tp, m.predicted);
    m.recall = 100.0 * ratio(tp, m.support);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (m.support == 0 && m.predicted == 0) continue;
    p_sum += m.precision;
    f_sum += m.f1;
    ++p_n;
    if (m.support > 0) {
      r_sum += m.recall;
      ++r_n;
    }
  }
  r.precision = p_n ? p_sum / static_cast<double>(p_n) : 0.0;
  r.f1 = p_n ? f_sum / static_cast<double>(p_n) : 0.0;
  r.recall = r_n ? r_sum / static_cast<double>(r_n) : 0.0;
  return r;
}

Json MetricsReport::to_json() const {
  Json j = {{"num_classes", num_classes}, {"total", total},   {"accuracy", accuracy}, {"precision", precision},
            {"recall", recall},           {"f1", f1},         {"loss", loss},         {"confusion", confusion}};
  Json classes = Json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    classes.push_back({{"class", c},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"support", m.support},
                       {"predicted", m.predicted}});
  }
  j["per_class"] = std::move(classes);
  if (!per_subject.empty()) {
    Json subjects = Json::object();
    for (const auto& [s, m] : per_subject) {
      subjects[std::to_string(s)] = {{"total", m.total},   {"accuracy", m.accuracy}, {"precision", m.precision},
                                     {"recall", m.recall}, {"f1", m.f1}};
    }
    j["per_subject"] = std::move(subjects);
  }
  return j;
}

MetricsReport evaluate(const ParamStore& params, const ModelConfig& config, const AblationFlags& flags,
                       const data::WindowedDataset& ds) {
  require_valid(config, flags);
  check_dataset(ds, config, "evaluation");
  const Tensor logits = predict(params, config, flags, ds);
  const auto truth = labels_of(ds);
  const auto pred = argmax_rows(logits);
  MetricsReport r = metrics_from_predictions(truth, pred, config.num_classes, cross_entropy(logits, truth));

  std::map<std::uint16_t, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < ds.size(); ++i) by_subject[ds.subjects[i]].push_back(i);
  for (const auto& [s, idx] : by_subject) {
    std::vector<std::size_t> t, p;
    for (std::size_t i : idx) {
      t.push_back(truth[i]);
      p.push_back(pred[i]);
    }
    r.per_subject.emplace(s, metrics_from_predictions(t, p, config.num_classes));
  }
  return r;
}

// --- Ablation ------------------------------------------------------------------

std::vector<AblationVariant> ablation_rows() {
  // AblationFlags order: stream_a (BiTCN), stream_b (CNN), stream_c (BiLSTM), attention.
  return {{"1", {true, true, true, false}},
          {"2", {false, true, true, true}},
          {"3", {true, false, true, true}},
          {"4", {true, true, false, true}},
          {"Proposed", {true, true, true, true}}};
}

std::vector<AblationResult> ablate(const ModelConfig& config, std::span<const AblationVariant> variants,
                                   const data::WindowedDataset& train, const data::WindowedDataset& val,
                                   const data::WindowedDataset& test, const TrainConfig& cfg) {
  if (variants.empty()) throw ConfigError("ablate: no variants given");
  std::vector<AblationResult> out;
  for (const auto& v : variants) {
    Rng rng(cfg.seed);
    const ParamStore init = build(config, v.flags, rng);
    const FitResult fitted = fit(config, v.flags, init, train, val, cfg);
    out.push_back({v, evaluate(fitted.best, config, v.flags, test), fitted.best_epoch});
  }
  return out;
}

std::string format_ablation_table(std::span<const AblationResult> rows) {
  std::string s = "Row       Branch-1 (BiLSTM)  Branch-2 (CNN)  Branch-3 (BiTCN)  Ch-Attention  Accuracy (%)\n";
  auto mark = [](bool b) { return b ? "yes" : "no"; };
  for (const auto& r : rows) {
    char line[160];
    const auto& f = r.variant.flags;
    std::snprintf(line, sizeof line, "%-9s %-18s %-15s %-17s %-13s %.2f\n", r.variant.name.c_str(), mark(f.stream_c),
                  mark(f.stream_b), mark(f.stream_a), mark(f.attention), r.metrics.accuracy);
    s += line;
  }
  return s;
}

Json ablation_to_json(std::span<const AblationResult> rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    const auto& f = r.variant.flags;
    out.push_back({{"row", r.variant.name},
                   {"branch_1_bilstm", f.stream_c},
                   {"branch_2_cnn", f.stream_b},
                   {"branch_3_bitcn", f.stream_a},
                   {"channel_attention", f.attention},
                   {"best_epoch", r.best_epoch},
                   {"metrics", r.metrics.to_json()}});
  }
  return out;
}

// --- Gradient suite ------------------------------------------------------------

bool GradSuiteResult::passed() const noexcept {
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.second.passed(); });
}

std::string GradSuiteResult::summary(double tolerance) const {
  std::string s;
  for (const auto& [name, report] : reports) {
    char line[200];
    std::snprintf(line, sizeof line, "  %-18s %s max_rel_err=%.3e\n", name.c_str(), report.passed() ? "ok  " : "FAIL",
                  report.max_rel_err);
    s += line;
    if (!report.passed()) s += report.summary() + "\n";
  }
  char tail[120];
  std::snprintf(tail, sizeof tail, "%s max_rel_err=%.3e %s %.0e", passed() ? "PASS" : "FAIL", max_rel_err,
                passed() ? "<=" : ">", tolerance);
  return s + tail;
}

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Zero-initialized biases put relus exactly on their kink wherever the
/// incoming activations vanish; checks run at a generic point instead.
void randomize_biases(ParamStore& params, Rng& rng) {
  for (auto& e : params.entries()) {
    if (e.name.ends_with("bias")) e.value = uniform_tensor(e.value.shape(), rng, -0.1, 0.1);
  }
}

/// Checks `layer` applied to a random input, with the output reduced by a
/// fixed random weighting. Inputs are redrawn when a relu sits near its kink.
ad::GradReport check_layer(ParamStore params, Shape input_shape, Rng& rng, double tolerance, double floor,
                           const std::function<ad::Var(ad::Binder&, ad::Var)>& layer) {
  randomize_biases(params, rng);
  Tensor input = uniform_tensor(input_shape, rng);
  Tensor readout;
  {
    ad::Graph g(false);
    ad::Binder b(g, params);
    readout = uniform_tensor(layer(b, g.constant(input)).shape(), rng);
  }
  ad::GradcheckOptions opts;
  opts.tolerance = tolerance;
    opts.floor = floor;
  opts.kink_margin = 1e-4;
  opts.nudge = [&](std::size_t) { input = uniform_tensor(input.shape(), rng); };
  return ad::gradcheck(params, [&](ad::Binder& b) {
    ad::Graph& g = b.graph();
    const ad::Var y = layer(b, g.constant(input));
    return ad::sum(ad::mul(y, g.constant(readout)));
  }, opts);
}

}  // namespace

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.channels = 2;
  c.window = 12;
  c.num_classes = 2;
  c.stream_a = {3, 2, {1, 2}};
  c.stream_b = {2, 2, 4, 2, layers::Gate::sigmoid};
  c.stream_c = {3, 2, {1}, 4, layers::Combine::sum};
  c.attention_ratio = 2;
  return c;
}

ad::GradReport model_gradcheck(const ModelConfig& config, const AblationFlags& flags, const ParamStore& params,
                               std::uint64_t seed, double tolerance, double floor, std::size_t batch) {
  Rng rng(seed);
  Tensor inputs({batch, config.channels, config.window});
  for (double& v : inputs.data()) v = rng.uniform(-1.0, 1.0);
  std::vector<std::size_t> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = i % config.num_classes;
  const std::uint64_t drop_seed = rng.next_u64();

  ad::GradcheckOptions opts;
  opts.tolerance = tolerance;
  opts.floor = floor;
  opts.kink_margin = 1e-4;
  opts.nudge = [&](std::size_t) {
    for (double& v : inputs.data()) v = rng.uniform(-1.0, 1.0);
  };
  return ad::gradcheck(params, [&](ad::Binder& b) {
    ad::Graph& g = b.graph();
    std::vector<ad::Var> rows;
    for (std::size_t i = 0; i < batch; ++i) {
      const auto row = inputs.row(i);
      const ad::Var x = g.constant(Tensor({config.channels, config.window}, std::vector<double>(row.begin(), row.end())));
      Rng drop(Rng::derive(drop_seed, i));
      rows.push_back(forward_sample(b, config, flags, x, layers::Mode::train, drop));
    }
    const ad::Var logits = ad::reshape(ad::concat_channels(rows), {batch, config.num_classes});
    return ad::cross_entropy(logits, labels);
  }, opts);
}

GradSuiteResult gradcheck_suite(std::uint64_t seed, double tolerance, double floor) {
  GradSuiteResult out;
  Rng rng(seed);
  auto record = [&](std::string name, ad::GradReport r) {
    out.max_rel_err = std::max(out.max_rel_err, r.max_rel_err);
    out.reports.emplace_back(std::move(name), std::move(r));
  };

  {
    ParamStore p;
    const layers::TcnBlockSpec spec{3, 4, 3, 2};
    layers::init_tcn_block(p, "blk", spec, rng);
    record("tcn_block", check_layer(p, {3, 12}, rng, tolerance, floor, [&](ad::Binder& b, ad::Var x) {
             return layers::tcn_block(b, "blk", spec, x);
           }));
  }
  {
    ParamStore p;
    const layers::TcnStackSpec spec{3, 4, 2, {1, 2}};
    layers::init_bitcn(p, "bi", spec, rng);
    record("bitcn", check_layer(p, {3, 10}, rng, tolerance, floor,
                                [&](ad::Binder& b, ad::Var x) { return layers::bitcn(b, "bi", spec, x); }));
  }
  {
    ParamStore p;
    const layers::SeparableSpec spec{3, 5, 3, 2};
    layers::init_separable(p, "sep", spec, rng);
    record("separable", check_layer(p, {3, 10}, rng, tolerance, floor, [&](ad::Binder& b, ad::Var x) {
             return layers::separable_stack(b, "sep", spec, x);
           }));
  }
  for (layers::Gate gate : {layers::Gate::sigmoid, layers::Gate::relu}) {
    ParamStore p;
    const layers::SeSpec spec{8, 4, gate};
    layers::init_se(p, "se", spec, rng);
    record(std::string("se_") + layers::to_string(gate), check_layer(p, {8, 6}, rng, tolerance, floor, [&](ad::Binder& b, ad::Var x) {
             return layers::se_block(b, "se", spec, x);
           }));
  }
  for (layers::Combine combine : {layers::Combine::sum, layers::Combine::concat}) {
    ParamStore p;
    layers::init_bilstm(p, "lstm", {3, 4}, rng);
    record(std::string("bilstm_") + layers::to_string(combine),
           check_layer(p, {3, 7}, rng, tolerance, floor,
                       [&](ad::Binder& b, ad::Var x) { return layers::bilstm(b, "lstm", x, combine); }));
  }
  {
    ParamStore p;
    layers::init_dense(p, "fc", {6, 4}, rng);
    record("dense", check_layer(p, {6}, rng, tolerance, floor,
                                [&](ad::Binder& b, ad::Var x) { return layers::dense(b, "fc", x); }));
  }
  {
    ParamStore p;
    layers::init_channel_attention(p, "attn", {8, 4}, rng);
    record("channel_attention", check_layer(p, {8}, rng, tolerance, floor, [&](ad::Binder& b, ad::Var x) {
             return layers::channel_attention(b, "attn", x);
           }));
  }
  {
    ParamStore p;
    p.add("logits", uniform_tensor({3, 5}, rng, -2.0, 2.0));
    const std::vector<std::size_t> labels{0, 4, 2};
    ad::GradcheckOptions opts;
    opts.tolerance = tolerance;
    opts.floor = floor;
    record("cross_entropy", ad::gradcheck(p, [&](ad::Binder& b) { return ad::cross_entropy(b("logits"), labels); },
                                          opts));
  }
  {
    const ModelConfig c = gradcheck_model_config();
    const AblationFlags flags;
    ParamStore p = build(c, flags, rng);
    randomize_biases(p, rng);
    record("model", model_gradcheck(c, flags, p, rng.next_u64(), tolerance, floor));
  }
  return out;
}

}  // namespace tristream
