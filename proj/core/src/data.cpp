#include "tristream/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>

#include "tristream/error.hpp"
#include "tristream/log.hpp"

namespace tristream::data {

void Recording::validate() const {
  if (signal.rank() != 2) throw DataError("recording signal must be [C, N], got " + shape_str(signal.shape()));
  if (labels.size() != length()) {
    throw DataError("recording has " + std::to_string(labels.size()) + " labels for " + std::to_string(length()) +
                    " samples");
  }
  if (repetitions.size() != length()) {
    throw DataError("recording has " + std::to_string(repetitions.size()) + " repetition ids for " +
                    std::to_string(length()) + " samples");
  }
}

WindowedDataset WindowedDataset::empty(std::size_t channels, std::size_t window, std::size_t num_classes) {
  WindowedDataset ds;
  ds.windows = Tensor({0, channels, window});
  ds.num_classes = num_classes;
  return ds;
}

Tensor WindowedDataset::window_tensor(std::size_t i) const {
  const auto row = windows.row(i);
  return Tensor({channels(), window()}, std::vector<double>(row.begin(), row.end()));
}

Tensor WindowedDataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t stride = channels() * window();
  std::vector<double> data;
  data.reserve(indices.size() * stride);
  for (std::size_t i : indices) {
    const auto row = windows.row(i);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({indices.size(), channels(), window()}, std::move(data));
}

WindowedDataset WindowedDataset::subset(std::span<const std::size_t> indices) const {
  WindowedDataset out;
  out.windows = batch(indices);
  out.num_classes = num_classes;
  for (std::size_t i : indices) {
    out.labels.push_back(labels[i]);
    out.subjects.push_back(subjects[i]);
    out.repetitions.push_back(repetitions[i]);
  }
  return out;
}

void WindowedDataset::append(const WindowedDataset& other) {
  if (size() == 0 && windows.rank() != 3) {
    *this = other;
    return;
  }
  if (other.channels() != channels() || other.window() != window()) {
    throw DataError("cannot append windows " + shape_str(other.windows.shape()) + " to " + shape_str(windows.shape()));
  }
  std::vector<double> data(windows.data().begin(), windows.data().end());
  data.insert(data.end(), other.windows.data().begin(), other.windows.data().end());
  windows = Tensor({size() + other.size(), channels(), window()}, std::move(data));
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  subjects.insert(subjects.end(), other.subjects.begin(), other.subjects.end());
  repetitions.insert(repetitions.end(), other.repetitions.begin(), other.repetitions.end());
  num_classes = std::max(num_classes, other.num_classes);
}

void WindowedDataset::validate() const {
  if (windows.rank() != 3) throw DataError("windows must be [N, C, W], got " + shape_str(windows.shape()));
  const std::size_t n = windows.dim(0);
  if (labels.size() != n || subjects.size() != n || repetitions.size() != n) {
    throw DataError("dataset metadata lengths do not match " + std::to_string(n) + " windows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("window " + std::to_string(i) + " has label " + std::to_string(labels[i]) + " >= " +
                      std::to_string(num_classes) + " classes");
    }
  }
}

void PreprocessConfig::validate() const {
  if (window < 1) throw ConfigError("preprocess.window must be >= 1");
  if (stride < 1) throw ConfigError("preprocess.stride must be >= 1");
  if (!(noise_variance >= 0.0)) throw ConfigError("preprocess.noise_variance must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("preprocess.epsilon must be > 0");
  double total = 0.0;
  for (double r : split.ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be >= 0");
    total += r;
  }
  if (!(total > 0.0)) throw ConfigError("split ratios must not all be zero");
}

Tensor zscore(const Tensor& x, double epsilon) {
  if (x.rank() != 2) throw ShapeError("zscore expects [C, T], got " + shape_str(x.shape()));
  const std::size_t C = x.dim(0), T = x.dim(1);
  if (T == 0) throw ShapeError("zscore: empty time axis");
  Tensor out({C, T});
  for (std::size_t c = 0; c < C; ++c) {
    const auto row = x.row(c);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(T);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(T));
    auto dst = out.row(c);
    // A channel with no spread maps to zeros.
    if (sd <= epsilon) continue;
    for (std::size_t t = 0; t < T; ++t) dst[t] = (row[t] - mean) / sd;
  }
  return out;
}

Tensor add_gaussian_noise(const Tensor& x, double variance, Rng& rng) {
  if (!(variance >= 0.0)) throw ConfigError("noise variance must be >= 0");
  Tensor out = x;
  if (variance == 0.0) return out;
  const double sd = std::sqrt(variance);
  for (double& v : out.data()) v += sd * rng.normal();
  return out;
}

WindowedDataset standardize_windows(const WindowedDataset& ds, double epsilon) {
  WindowedDataset out = ds;
  const std::size_t stride = ds.channels() * ds.window();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor z = zscore(ds.window_tensor(i), epsilon);
    std::copy(z.data().begin(), z.data().end(), out.windows.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

WindowedDataset augment(const WindowedDataset& ds, std::size_t copies, double variance, Rng& rng) {
  WindowedDataset out = ds;
  for (std::size_t k = 0; k < copies; ++k) {
    WindowedDataset noisy = ds;
    noisy.windows = add_gaussian_noise(ds.windows, variance, rng);
    out.append(noisy);
  }
  return out;
}

WindowedDataset slice_windows(const Recording& rec, const PreprocessConfig& cfg, std::size_t num_classes) {
  rec.validate();
  cfg.validate();
  const std::size_t C = rec.channels(), N = rec.length(), W = cfg.window;
  WindowedDataset ds = WindowedDataset::empty(C, W, num_classes);
  if (W > N) {
    log::warn("slice_windows: window " + std::to_string(W) + " exceeds recording length " + std::to_string(N) +
              "; no windows produced");
    return ds;
  }
  std::vector<double> data;
  std::size_t start = 0;
  while (start < N) {
    std::size_t end = start;
    while (end < N && rec.labels[end] == rec.labels[start] && rec.repetitions[end] == rec.repetitions[start]) ++end;
    const std::uint16_t gesture = rec.labels[start];
    const bool keep = cfg.include_rest || gesture != 0;
    if (keep) {
      const std::size_t cls = cfg.include_rest ? gesture : gesture - 1u;
      if (cls >= num_classes) {
        throw DataError("gesture " + std::to_string(gesture) + " maps to class " + std::to_string(cls) +
                        " outside " + std::to_string(num_classes) + " classes");
      }
      for (std::size_t w = start; w + W <= end; w += cfg.stride) {
        for (std::size_t c = 0; c < C; ++c) {
          const auto row = rec.signal.row(c);
          data.insert(data.end(), row.begin() + static_cast<std::ptrdiff_t>(w),
                      row.begin() + static_cast<std::ptrdiff_t>(w + W));
        }
        ds.labels.push_back(static_cast<std::uint16_t>(cls));
        ds.subjects.push_back(rec.subject);
        ds.repetitions.push_back(rec.repetitions[start]);
      }
    }
    start = end;
  }
  ds.windows = Tensor({ds.labels.size(), C, W}, std::move(data));
  return ds;
}

Split split_ratio(const WindowedDataset& ds, const std::array<double, 3>& ratios, Rng& rng) {
  if (ds.size() == 0) throw DataError("split_ratio: empty dataset");
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0.0)) throw ConfigError("split_ratio: ratios must not all be zero");
  std::map<std::uint16_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  std::vector<std::size_t> train, val, test;
  for (auto& [cls, idx] : by_class) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t n = idx.size();
    if (n < 5) {
      log::warn("split_ratio: class " + std::to_string(cls) + " has only " + std::to_string(n) +
                " windows; assignment is best-effort");
    }
    auto share = [&](double r) {
      auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * r / total + 1e-9));
      if (k == 0 && r > 0.0 && n >= 3) k = 1;
      return k;
    };
    const std::size_t n_val = share(ratios[1]);
    const std::size_t n_test = std::min(share(ratios[2]), n - n_val);
    const std::size_t n_train = n - n_val - n_test;
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    val.insert(val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(val), ds.subset(test)};
}

RepetitionSplit split_repetition(const WindowedDataset& ds, const std::set<std::uint16_t>& train_reps,
                                 const std::set<std::uint16_t>& test_reps) {
  std::vector<std::size_t> train, test;
  std::set<std::uint16_t> dropped;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::uint16_t rep = ds.repetitions[i];
    if (train_reps.contains(rep)) {
      train.push_back(i);
    } else if (test_reps.contains(rep)) {
      test.push_back(i);
    } else {
      dropped.insert(rep);
    }
  }
  if (!dropped.empty()) {
    std::string reps;
    for (auto r : dropped) reps += (reps.empty() ? "" : ",") + std::to_string(r);
    log::warn("split_repetition: excluded windows with repetitions {" + reps + "}");
  }
  if (train.empty()) throw DataError("split_repetition: no training windows");
  if (test.empty()) throw DataError("split_repetition: no test windows");
  return {ds.subset(train), ds.subset(test)};
}

WindowedDataset synth_generate(const SynthConfig& cfg, Rng& rng) {
  if (cfg.classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (cfg.channels < 1 || cfg.window < 1) throw ConfigError("synth: channels and window must be positive");
  const std::size_t K = cfg.classes, C = cfg.channels, W = cfg.window, n = K * cfg.per_class;
  WindowedDataset ds;
  ds.num_classes = K;
  ds.windows = Tensor({n, C, W});
  std::size_t i = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double nu = 0.05 + 0.35 * static_cast<double>(k) / static_cast<double>(K - 1);
    for (std::size_t j = 0; j < cfg.per_class; ++j, ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        const double amp = (c + k) % 3 != 0 ? 1.0 : 0.25;
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t t = 0; t < W; ++t) {
          const double v = amp * std::sin(2.0 * std::numbers::pi * nu * static_cast<double>(t) + phase) +
                           cfg.noise_std * rng.normal();
          ds.windows.at(i, c, t) = static_cast<double>(static_cast<float>(v));
        }
      }
      ds.labels.push_back(static_cast<std::uint16_t>(k));
      ds.subjects.push_back(1);
      ds.repetitions.push_back(static_cast<std::uint16_t>(1 + j % 6));
    }
  }
  return ds;
}

// --- EMGB ----------------------------------------------------------------------

namespace {

constexpr char kEmgbMagic[4] = {'E', 'M', 'G', '1'};
constexpr std::size_t kEmgbHeader = 4 + 5 * 4;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const std::string& in, std::size_t pos) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(in[pos]) |
                                    (static_cast<unsigned char>(in[pos + 1]) << 8));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_emgb(const WindowedDataset& ds) {
  ds.validate();
  const std::size_t N = ds.size(), C = ds.channels(), W = ds.window();
  std::string out(kEmgbMagic, 4);
  for (std::size_t v : {std::size_t{1}, N, C, W, ds.num_classes}) put_u32(out, static_cast<std::uint32_t>(v));
  out.reserve(kEmgbHeader + N * (8 + C * W * 4));
  for (std::size_t i = 0; i < N; ++i) {
    put_u16(out, ds.labels[i]);
    put_u16(out, ds.subjects[i]);
    put_u16(out, ds.repetitions[i]);
    put_u16(out, 0);
    for (double v : ds.windows.row(i)) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

WindowedDataset decode_emgb(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kEmgbMagic, 4) != 0) {
    throw FormatError("EMGB: bad magic (expected \"EMG1\")");
  }
  if (bytes.size() < kEmgbHeader) {
    throw FormatError("EMGB: truncated header, expected " + std::to_string(kEmgbHeader) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != 1) throw FormatError("EMGB: unsupported format_version " + std::to_string(version));
  const std::size_t N = get_u32(bytes, 8), C = get_u32(bytes, 12), W = get_u32(bytes, 16), K = get_u32(bytes, 20);
  const std::size_t record = 8 + C * W * 4;
  const std::size_t expected = kEmgbHeader + N * record;
  if (bytes.size() != expected) {
    throw FormatError("EMGB: payload size mismatch, expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  WindowedDataset ds;
  ds.num_classes = K;
  ds.windows = Tensor({N, C, W});
  ds.labels.resize(N);
  ds.subjects.resize(N);
  ds.repetitions.resize(N);
  std::size_t pos = kEmgbHeader;
  for (std::size_t i = 0; i < N; ++i) {
    ds.labels[i] = get_u16(bytes, pos);
    ds.subjects[i] = get_u16(bytes, pos + 2);
    ds.repetitions[i] = get_u16(bytes, pos + 4);
    pos += 8;
    if (ds.labels[i] >= K) {
      throw FormatError("EMGB: record " + std::to_string(i) + " has label " + std::to_string(ds.labels[i]) +
                        " >= declared K=" + std::to_string(K));
    }
    for (double& v : ds.windows.row(i)) {
      v = static_cast<double>(std::bit_cast<float>(get_u32(bytes, pos)));
      pos += 4;
    }
  }
  return ds;
}

void save_emgb(const WindowedDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_emgb(ds);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

WindowedDataset load_emgb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_emgb(bytes);
}

}  // namespace tristream::data
