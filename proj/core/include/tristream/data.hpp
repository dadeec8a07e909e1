#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tristream/rng.hpp"
#include "tristream/tensor.hpp"

namespace tristream::data {

/// Continuous multichannel recording with per-sample annotations.
struct Recording {
  Tensor signal;                           // [C, N]
  std::vector<std::uint16_t> labels;       // gesture id per sample, 0 = rest
  std::vector<std::uint16_t> repetitions;  // repetition id per sample
  std::uint16_t subject = 0;

  std::size_t channels() const { return signal.dim(0); }
  std::size_t length() const { return signal.dim(1); }
  /// Throws DataError when the annotation streams do not match the signal.
  void validate() const;
};

/// Labeled fixed-length windows.
struct WindowedDataset {
  Tensor windows;  // [N, C, W]
  std::vector<std::uint16_t> labels;
  std::vector<std::uint16_t> subjects;
  std::vector<std::uint16_t> repetitions;
  std::size_t num_classes = 0;

  /// Empty dataset with the given geometry.
  static WindowedDataset empty(std::size_t channels, std::size_t window, std::size_t num_classes);

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const { return windows.dim(1); }
  std::size_t window() const { return windows.dim(2); }

  /// Window i as [C, W].
  Tensor window_tensor(std::size_t i) const;
  /// Windows at the given indices as [n, C, W].
  Tensor batch(std::span<const std::size_t> indices) const;
  WindowedDataset subset(std::span<const std::size_t> indices) const;
  void append(const WindowedDataset& other);
  /// Throws DataError on inconsistent shapes or out-of-range labels.
  void validate() const;

  friend bool operator==(const WindowedDataset&, const WindowedDataset&) = default;
};

enum class Standardize { none, window };

enum class SplitMode { ratio, repetition };

struct SplitSpec {
  SplitMode mode = SplitMode::ratio;
  std::array<double, 3> ratios{6.0, 2.0, 2.0};
  std::set<std::uint16_t> train_reps{1, 3, 4, 6};
  std::set<std::uint16_t> test_reps{2, 5};
};

struct PreprocessConfig {
  std::size_t window = 500;
  std::size_t stride = 500;
  double noise_variance = 0.1;
  /// Noisy copies added per training window.
  std::size_t augment_copies = 1;
  double epsilon = 1e-8;
  /// Keep rest (label 0) windows as class 0; otherwise gesture g maps to class g-1.
  bool include_rest = false;
  Standardize standardize = Standardize::window;
  SplitSpec split;

  void validate() const;
};

/// Per-channel (x - mean) / max(std, eps), population std.
Tensor zscore(const Tensor& x, double epsilon = 1e-8);

/// Copy of x with i.i.d. N(0, variance) noise added.
Tensor add_gaussian_noise(const Tensor& x, double variance, Rng& rng);

/// Applies zscore to every window.
WindowedDataset standardize_windows(const WindowedDataset& ds, double epsilon = 1e-8);

/// The original windows followed by `copies` noisy copies of each (labels and
/// metadata duplicated). The source is never modified.
WindowedDataset augment(const WindowedDataset& ds, std::size_t copies, double variance, Rng& rng);

/// Cuts windows from maximal runs of constant (label, repetition), stepping by
/// the stride and dropping the remainder of each run. `num_classes` is the
/// class count recorded in the result.
WindowedDataset slice_windows(const Recording& rec, const PreprocessConfig& cfg, std::size_t num_classes);

struct Split {
  WindowedDataset train;
  WindowedDataset val;
  WindowedDataset test;
};

/// Stratified split by class. Per class with n windows: val and test get
/// floor(n * r / sum(r)) each (at least one each when n >= 3), train the rest.
/// Classes with fewer than 5 windows produce a warning.
Split split_ratio(const WindowedDataset& ds, const std::array<double, 3>& ratios, Rng& rng);

struct RepetitionSplit {
  WindowedDataset train;
  WindowedDataset test;
};

/// Membership by repetition id only; other repetitions are dropped with a
/// warning. Throws DataError if either side ends up empty.
RepetitionSplit split_repetition(const WindowedDataset& ds, const std::set<std::uint16_t>& train_reps,
                                 const std::set<std::uint16_t>& test_reps);

/// Synthetic gesture generator.
///
/// Class k oscillates at nu_k = 0.05 + 0.35 * k / (K - 1) cycles per sample.
/// Channel c is active for class k when (c + k) % 3 != 0 (amplitude 1.0),
/// otherwise it carries the same oscillation at amplitude 0.25. Each window
/// and channel gets a uniform random phase, then N(0, noise_std^2) noise is
/// added and values are rounded to float precision. Windows are emitted class
/// by class, `per_class` each; repetition ids cycle through 1..6.
struct SynthConfig {
  std::size_t classes = 6;
  std::size_t channels = 12;
  std::size_t window = 500;
  std::size_t per_class = 40;
  double noise_std = 0.3;
};

WindowedDataset synth_generate(const SynthConfig& cfg, Rng& rng);

// --- EMGB files ----------------------------------------------------------------

/// EMGB layout: "EMG1", u32 LE {format_version=1, N, C, W, K}, then N records
/// of {u16 label, u16 subject, u16 repetition, u16 reserved=0} followed by
/// C*W little-endian f32 values, channel-major.
std::string encode_emgb(const WindowedDataset& ds);
WindowedDataset decode_emgb(const std::string& bytes);

void save_emgb(const WindowedDataset& ds, const std::filesystem::path& path);
WindowedDataset load_emgb(const std::filesystem::path& path);

}  // namespace tristream::data
