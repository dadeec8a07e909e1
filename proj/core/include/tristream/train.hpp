#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tristream/data.hpp"
#include "tristream/gradcheck.hpp"
#include "tristream/model.hpp"
#include "tristream/params.hpp"
#include "tristream/tensor.hpp"

namespace tristream {

/// Mean cross-entropy of logits [B,K] (or [K]) against labels.
double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t seed = 42;
  /// Stop after this many epochs without a new best; 0 disables.
  std::size_t patience = 0;

  void validate() const;
};

/// Named hyperparameter profiles: db2, db4, db5, legacy, synth.
TrainConfig preset(std::string_view name);
std::vector<std::string> preset_names();

struct AdamState {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  ParamStore m;
  ParamStore v;

  /// Zero moments mirroring `params`.
  static AdamState init(const ParamStore& params, double learning_rate);
};

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having zero gradient. Throws ShapeError on mismatched shapes.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // percent

  nlohmann::json to_json() const;
};

struct FitResult {
  std::vector<EpochRecord> log;
  ParamStore best;
  ParamStore last;
  /// 0 when no epoch ran.
  std::size_t best_epoch = 0;
  /// Loss of the first mini-batch, measured before any update.
  double first_batch_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam training. Each epoch shuffles the training set with an rng
/// derived from (seed, epoch); dropout masks derive from (seed, epoch, sample).
/// Per-sample gradients are summed in sample order, so results do not depend
/// on the worker count. The best epoch has the highest validation accuracy,
/// ties going to the lower validation loss.
FitResult fit(const ModelConfig& config, const AblationFlags& flags, const ParamStore& initial,
              const data::WindowedDataset& train, const data::WindowedDataset& val, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  std::size_t predicted = 0;
};

/// Percent-valued metrics. Macro means skip a class that has neither support
/// nor predictions; a class with predictions but no support scores precision 0
/// and is left out of the recall mean. 0/0 precision or recall counts as 0.
struct MetricsReport {
  std::size_t num_classes = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double loss = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
  std::vector<ClassMetrics> per_class;
  /// Metrics restricted to each subject id; filled by evaluate().
  std::map<std::uint16_t, MetricsReport> per_subject;

  nlohmann::json to_json() const;
};

MetricsReport metrics_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                       std::size_t num_classes, double loss = 0.0);

std::vector<std::size_t> argmax_rows(const Tensor& logits);

MetricsReport evaluate(const ParamStore& params, const ModelConfig& config, const AblationFlags& flags,
                       const data::WindowedDataset& ds);

struct AblationVariant {
  std::string name;
  AblationFlags flags;
};

/// Rows 1-4 and "Proposed" of the published ablation table.
std::vector<AblationVariant> ablation_rows();

struct AblationResult {
  AblationVariant variant;
  MetricsReport metrics;
  std::size_t best_epoch = 0;
};

/// Trains every variant from the same seed and schedule and evaluates its best
/// checkpoint on `test`.
std::vector<AblationResult> ablate(const ModelConfig& config, std::span<const AblationVariant> variants,
                                   const data::WindowedDataset& train, const data::WindowedDataset& val,
                                   const data::WindowedDataset& test, const TrainConfig& cfg);

/// Columns: Row, Branch-1 (BiLSTM), Branch-2 (CNN), Branch-3 (BiTCN), Ch-Attention, Accuracy.
std::string format_ablation_table(std::span<const AblationResult> rows);
nlohmann::json ablation_to_json(std::span<const AblationResult> rows);

/// Finite-difference checks of every layer and of a small full model.
struct GradSuiteResult {
  std::vector<std::pair<std::string, ad::GradReport>> reports;
  double max_rel_err = 0.0;

  bool passed() const noexcept;
  std::string summary(double tolerance) const;
};

/// `floor` is the relative-error denominator floor (see ad::relative_error).
GradSuiteResult gradcheck_suite(std::uint64_t seed = 1, double tolerance = 1e-4, double floor = 1e-12);

/// Tiny 2-class configuration used by the model-level check.
ModelConfig gradcheck_model_config();

/// Finite-difference check of the full network in train mode (fixed dropout
/// masks) on a random batch; inputs are redrawn while a relu sits near its kink.
ad::GradReport model_gradcheck(const ModelConfig& config, const AblationFlags& flags, const ParamStore& params,
                               std::uint64_t seed, double tolerance = 1e-4, double floor = 1e-12,
                               std::size_t batch = 4);

}  // namespace tristream
