#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "tristream/data.hpp"
#include "tristream/error.hpp"
#include "tristream/log.hpp"

using namespace tristream;
using namespace tristream::data;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, double offset = 0.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = offset + scale * rng.normal();
  return t;
}

Recording make_recording(const std::vector<std::pair<std::uint16_t, std::size_t>>& runs, std::size_t channels = 2,
                         std::uint16_t rep = 1) {
  Recording rec;
  std::size_t n = 0;
  for (const auto& r : runs) n += r.second;
  rec.signal = Tensor({channels, n});
  std::size_t t = 0;
  for (const auto& [label, len] : runs) {
    for (std::size_t i = 0; i < len; ++i, ++t) {
      for (std::size_t c = 0; c < channels; ++c) rec.signal.at(c, t) = static_cast<double>(label * 1000 + t);
      rec.labels.push_back(label);
      rec.repetitions.push_back(rep);
    }
  }
  rec.subject = 3;
  return rec;
}

WindowedDataset labelled(const std::vector<std::uint16_t>& labels, std::size_t K, std::size_t C = 2,
                         std::size_t W = 4) {
  WindowedDataset ds = WindowedDataset::empty(C, W, K);
  ds.windows = Tensor({labels.size(), C, W});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = 0; j < C * W; ++j) ds.windows.row(i)[j] = static_cast<double>(i);
    ds.labels.push_back(labels[i]);
    ds.subjects.push_back(1);
    ds.repetitions.push_back(static_cast<std::uint16_t>(1 + i % 6));
  }
  return ds;
}

// Window ids survive splitting because every window is filled with its index.
std::vector<double> ids(const WindowedDataset& ds) {
  std::vector<double> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(ds.windows.row(i)[0]);
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("tristream_test_" + name);
}

}  // namespace

TEST(Zscore, HandValues) {
  const Tensor y = zscore(Tensor({1, 3}, std::vector<double>{1, 2, 3}));
  EXPECT_NEAR(y[0], -1.2247, 1e-4);
  EXPECT_NEAR(y[1], 0.0, 1e-15);
  EXPECT_NEAR(y[2], 1.2247, 1e-4);
  EXPECT_TRUE(zscore(Tensor({2, 5}, 3.5)) == Tensor({2, 5}));
}

TEST(Zscore, MomentsWithinTolerance) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng.below(6), T = 2 + rng.below(400);
    const Tensor y = zscore(random_tensor({C, T}, rng, rng.uniform(0.01, 100.0), rng.uniform(-50, 50)));
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t t = 0; t < T; ++t) m += y.at(c, t);
      m /= static_cast<double>(T);
      for (std::size_t t = 0; t < T; ++t) v += (y.at(c, t) - m) * (y.at(c, t) - m);
      EXPECT_LE(std::abs(m), 1e-10);
      EXPECT_LE(std::abs(std::sqrt(v / static_cast<double>(T)) - 1.0), 1e-10);
    }
  }
}

TEST(Zscore, StandardizedInputIsFixedPoint) {
  Rng rng(2);
  const Tensor once = zscore(random_tensor({3, 100}, rng, 4.0, 1.0));
  EXPECT_LE(max_abs_diff(zscore(once), once), 1e-12);
}

TEST(Noise, ZeroVarianceIsIdentity) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 10}, rng);
  EXPECT_TRUE(add_gaussian_noise(x, 0.0, rng) == x);
}

TEST(Noise, MomentsOnMillionDraws) {
  Rng rng(4);
  const Tensor x({1000000});
  const Tensor y = add_gaussian_noise(x, 0.1, rng);
  double m = 0.0, v = 0.0;
  for (double s : y.data()) m += s;
  m /= 1e6;
  for (double s : y.data()) v += (s - m) * (s - m);
  v /= 1e6 - 1.0;
  EXPECT_NEAR(m, 0.0, 0.001);
  EXPECT_NEAR(v, 0.1, 0.002);
  EXPECT_TRUE(x == Tensor({1000000}));
}

TEST(Noise, SuccessiveCallsAreUncorrelated) {
  Rng rng(5);
  const Tensor x({100000});
  const Tensor a = add_gaussian_noise(x, 0.1, rng), b = add_gaussian_noise(x, 0.1, rng);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += a[i] * b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
  }
  EXPECT_NEAR(sab / std::sqrt(saa * sbb), 0.0, 0.01);
}

TEST(Augment, PreservesSourceLabelsAndShapes) {
  Rng rng(6);
  const WindowedDataset ds = labelled({0, 1, 2, 1}, 3);
  const WindowedDataset copy = ds;
  const WindowedDataset aug = augment(ds, 2, 0.1, rng);
  EXPECT_TRUE(ds == copy);
  ASSERT_EQ(aug.size(), 12u);
  EXPECT_EQ(aug.windows.shape(), (Shape{12, 2, 4}));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(aug.labels[i], ds.labels[i % 4]);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(aug.window_tensor(i) == ds.window_tensor(i));
  EXPECT_FALSE(aug.window_tensor(4) == ds.window_tensor(0));
}

TEST(Slice, CountsAndRemainder) {
  PreprocessConfig cfg;
  const WindowedDataset five = slice_windows(make_recording({{1, 2600}}), cfg, 3);
  EXPECT_EQ(five.size(), 5u);
  EXPECT_EQ(five.subjects[0], 3);
  EXPECT_EQ(five.labels[0], 0);  // gesture 1 -> class 0 with rest excluded
  EXPECT_EQ(slice_windows(make_recording({{1, 499}}), cfg, 3).size(), 0u);
}

TEST(Slice, WindowLongerThanRecordingWarns) {
  PreprocessConfig cfg;
  log::CaptureWarnings warnings;
  const WindowedDataset ds = slice_windows(make_recording({{1, 300}}), cfg, 3);
  EXPECT_EQ(ds.size(), 0u);
  EXPECT_EQ(warnings.messages().size(), 1u);
}

TEST(Slice, NeverCrossesLabelBoundaries) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<std::uint16_t, std::size_t>> runs;
    for (int r = 0; r < 8; ++r) runs.push_back({static_cast<std::uint16_t>(rng.below(4)), 1 + rng.below(60)});
    const Recording rec = make_recording(runs, 1);
    PreprocessConfig cfg;
    cfg.window = 1 + rng.below(20);
    cfg.stride = 1 + rng.below(20);
    cfg.include_rest = true;
    const WindowedDataset ds = slice_windows(rec, cfg, 4);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      // Signal encodes label*1000 + t; every sample must carry the window label.
      for (std::size_t t = 0; t < cfg.window; ++t) {
        const auto sample = static_cast<std::size_t>(ds.windows.at(i, 0, t));
        EXPECT_EQ(rec.labels[sample % 1000], ds.labels[i]);
        EXPECT_EQ(sample / 1000, ds.labels[i]);
      }
    }
  }
}

TEST(Slice, TwoLabelRunsYieldPureWindows) {
  PreprocessConfig cfg;
  cfg.window = 100;
  cfg.stride = 100;
  const WindowedDataset ds = slice_windows(make_recording({{1, 250}, {2, 250}}), cfg, 2);
  ASSERT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.labels, (std::vector<std::uint16_t>{0, 0, 1, 1}));
}

TEST(Slice, RestHandling) {
  PreprocessConfig cfg;
  cfg.window = 100;
  cfg.stride = 100;
  const Recording rec = make_recording({{0, 200}, {1, 100}});
  EXPECT_EQ(slice_windows(rec, cfg, 1).size(), 1u);
  cfg.include_rest = true;
  const WindowedDataset with_rest = slice_windows(rec, cfg, 2);
  EXPECT_EQ(with_rest.labels, (std::vector<std::uint16_t>{0, 0, 1}));
  EXPECT_THROW(slice_windows(make_recording({{5, 100}}), cfg, 2), DataError);
}

TEST(Slice, RecordingValidation) {
  Recording rec = make_recording({{1, 10}});
  rec.labels.pop_back();
  EXPECT_THROW(rec.validate(), DataError);
}

TEST(SplitRatio, TenWindowsGoSixTwoTwo) {
  Rng rng(8);
  const Split s = split_ratio(labelled(std::vector<std::uint16_t>(10, 0), 1), {6, 2, 2}, rng);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(SplitRatio, PartitionIsDisjointExhaustiveAndStratified) {
  Rng gen(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint16_t> labels;
    const std::size_t K = 2 + gen.below(5);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0, n = 5 + gen.below(40); j < n; ++j) labels.push_back(static_cast<std::uint16_t>(k));
    }
    const WindowedDataset ds = labelled(labels, K);
    Rng rng(trial);
    const Split s = split_ratio(ds, {6, 2, 2}, rng);
    std::multiset<double> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (double id : ids(*part)) all.insert(id);
    }
    const auto expect = ids(ds);
    EXPECT_EQ(all, std::multiset<double>(expect.begin(), expect.end()));
    EXPECT_EQ(std::set<double>(all.begin(), all.end()).size(), ds.size());
    for (std::size_t k = 0; k < K; ++k) {
      const auto count = [&](const WindowedDataset& d) { return std::count(d.labels.begin(), d.labels.end(), k); };
      const auto n = count(ds);
      EXPECT_EQ(count(s.val), static_cast<long>(std::floor(n * 0.2 + 1e-9)));
      EXPECT_EQ(count(s.test), static_cast<long>(std::floor(n * 0.2 + 1e-9)));
    }
  }
}

TEST(SplitRatio, DeterministicUnderSeed) {
  const WindowedDataset ds = labelled(std::vector<std::uint16_t>(30, 0), 1);
  Rng a(3), b(3);
  const Split x = split_ratio(ds, {6, 2, 2}, a), y = split_ratio(ds, {6, 2, 2}, b);
  EXPECT_TRUE(x.train == y.train && x.val == y.val && x.test == y.test);
}

TEST(SplitRatio, SmallClassWarns) {
  Rng rng(10);
  log::CaptureWarnings warnings;
  const Split s = split_ratio(labelled({0, 0, 0, 1, 1, 1, 1, 1, 1, 1}, 2), {6, 2, 2}, rng);
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), 10u);
  EXPECT_FALSE(warnings.messages().empty());
}

TEST(SplitRepetition, HonorsDefaultSets) {
  std::vector<std::uint16_t> labels(60, 0);
  WindowedDataset ds = labelled(labels, 1);
  const RepetitionSplit s = split_repetition(ds, {1, 3, 4, 6}, {2, 5});
  EXPECT_EQ(s.train.size(), 40u);
  EXPECT_EQ(s.test.size(), 20u);
  for (auto r : s.train.repetitions) EXPECT_TRUE(r == 1 || r == 3 || r == 4 || r == 6);
  for (auto r : s.test.repetitions) EXPECT_TRUE(r == 2 || r == 5);
}

TEST(SplitRepetition, ExtraRepsExcludedWithWarning) {
  WindowedDataset ds = labelled(std::vector<std::uint16_t>(10, 0), 1);
  ds.repetitions = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  log::CaptureWarnings warnings;
  const RepetitionSplit s = split_repetition(ds, {1, 3, 4, 6}, {2, 5});
  EXPECT_EQ(s.train.size() + s.test.size(), 6u);
  ASSERT_EQ(warnings.messages().size(), 1u);
  EXPECT_NE(warnings.messages()[0].find("7"), std::string::npos);
  EXPECT_THROW(split_repetition(ds, {1}, {42}), DataError);
}

TEST(Synth, UniformLabelsAndDeterministic) {
  SynthConfig cfg;
  cfg.per_class = 7;
  Rng a(1), b(1);
  const WindowedDataset x = synth_generate(cfg, a);
  EXPECT_EQ(x.size(), 42u);
  for (std::uint16_t k = 0; k < 6; ++k) EXPECT_EQ(std::count(x.labels.begin(), x.labels.end(), k), 7);
  EXPECT_EQ(encode_emgb(x), encode_emgb(synth_generate(cfg, b)));
  SynthConfig bad;
  bad.classes = 1;
  EXPECT_THROW(synth_generate(bad, a), ConfigError);
}

TEST(Synth, NoiselessTwoClassesSeparableByChannelEnergy) {
  SynthConfig cfg;
  cfg.classes = 2;
  cfg.channels = 6;
  cfg.window = 200;
  cfg.per_class = 25;
  cfg.noise_std = 0.0;
  Rng rng(11);
  const WindowedDataset ds = synth_generate(cfg, rng);
  // Channel c is strong for class k iff (c + k) % 3 != 0; channel 0 is weak
  // for class 0 and strong for class 1.
  std::vector<double> energy(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t t = 0; t < cfg.window; ++t) energy[i] += ds.windows.at(i, 0, t) * ds.windows.at(i, 0, t);
  }
  const double threshold = 0.5 * (0.25 * 0.25 + 1.0) / 2.0 * static_cast<double>(cfg.window);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) correct += (energy[i] > threshold) == (ds.labels[i] == 1);
  EXPECT_EQ(correct, ds.size());
}

TEST(Emgb, RoundTripByteIdentical) {
  SynthConfig cfg;
  cfg.per_class = 3;
  cfg.window = 50;
  Rng rng(12);
  const WindowedDataset ds = synth_generate(cfg, rng);
  const auto path = temp_file("roundtrip.emgb");
  save_emgb(ds, path);
  const WindowedDataset back = load_emgb(path);
  EXPECT_TRUE(back == ds);
  EXPECT_EQ(encode_emgb(back), encode_emgb(ds));
  std::filesystem::remove(path);
}

TEST(Emgb, LayoutIsLittleEndian) {
  WindowedDataset ds = labelled({1}, 2, 1, 2);
  ds.windows = Tensor({1, 1, 2}, std::vector<double>{1.0, -2.0});
  ds.subjects = {7};
  ds.repetitions = {3};
  const std::string b = encode_emgb(ds);
  ASSERT_EQ(b.size(), 4u + 20 + 8 + 8);
  EXPECT_EQ(b.substr(0, 4), "EMG1");
  const auto u32 = [&](std::size_t p) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(b[p]) | static_cast<unsigned char>(b[p + 1]) << 8 |
                                      static_cast<unsigned char>(b[p + 2]) << 16 |
                                      static_cast<unsigned char>(b[p + 3]) << 24);
  };
  EXPECT_EQ(u32(4), 1u);   // version
  EXPECT_EQ(u32(8), 1u);   // N
  EXPECT_EQ(u32(12), 1u);  // C
  EXPECT_EQ(u32(16), 2u);  // W
  EXPECT_EQ(u32(20), 2u);  // K
  EXPECT_EQ(b[24], 1);
  EXPECT_EQ(b[26], 7);
  EXPECT_EQ(b[28], 3);
  EXPECT_EQ(u32(32), 0x3F800000u);  // 1.0f
  EXPECT_EQ(u32(36), 0xC0000000u);  // -2.0f
}

TEST(Emgb, EmptyHeaderGivesEmptyDataset) {
  const WindowedDataset ds = WindowedDataset::empty(4, 10, 3);
  const WindowedDataset back = decode_emgb(encode_emgb(ds));
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.num_classes, 3u);
}

TEST(Emgb, MalformedFilesAreRejected) {
  const std::string good = encode_emgb(labelled({0, 1}, 2));
  std::string magic = good;
  magic[3] = '2';
  try {
    decode_emgb(magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  try {
    decode_emgb(good.substr(0, good.size() - 5));
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(good.size())), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(good.size() - 5)), std::string::npos) << msg;
  }
  EXPECT_THROW(decode_emgb(good.substr(0, 10)), FormatError);
  std::string label = good;
  label[24] = 9;
  EXPECT_THROW(decode_emgb(label), FormatError);
  EXPECT_THROW(load_emgb(temp_file("missing.emgb")), DataError);
}

TEST(Preprocess, ConfigValidation) {
  PreprocessConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.window = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.noise_variance = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
