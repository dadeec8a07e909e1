#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "tristream/data.hpp"
#include "tristream/model.hpp"

namespace fs = std::filesystem;
using namespace tristream;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "tristream");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tristream_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small architecture so the end-to-end commands run in seconds.
  std::string small_config() const {
    const nlohmann::json j = {
        {"model",
         {{"stream_a", {{"filters", 4}}},
          {"stream_b", {{"separable_filters", 8}}},
          {"stream_c", {{"tcn_filters", 4}, {"lstm_hidden", 4}}}}}};
    const std::string p = path("small.json");
    std::ofstream(p) << j.dump(2);
    return p;
  }

  std::string synth(const std::string& name, int per_class = 10) const {
    const std::string p = path(name);
    const Result r = run({"synth", "--classes", "3", "--channels", "3", "--window", "40", "--per-class",
                          std::to_string(per_class), "--out", p});
    EXPECT_EQ(r.code, 0) << r.err;
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpAllMatchesGoldenSnapshot) {
  const Result r = run({"--help-all"});
  EXPECT_EQ(r.code, 0);
  const fs::path golden = fs::path(TRISTREAM_GOLDEN_DIR) / "help_all.txt";
  if (std::getenv("TRISTREAM_UPDATE_GOLDEN") != nullptr) std::ofstream(golden, std::ios::binary) << r.out;
  EXPECT_EQ(r.out, slurp(golden));
}

TEST_F(CliTest, HelpShowsEveryFlagDefault) {
  const Result r = run({"--help-all"});
  for (const char* d : {"[db5]", "[window]", "[1]", "[0.0001]", "[6]", "[12]", "[500]", "[40]", "[0.3]"}) {
    EXPECT_NE(r.out.find(d), std::string::npos) << d;
  }
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"bogus"}).code, 1);
  EXPECT_EQ(run({"train", "--data", "x"}).code, 1);  // --out missing
  EXPECT_EQ(run({"train", "--preset", "db9", "--data", "x", "--out", "y"}).code, 1);

  const Result missing = run({"train", "--data", path("nope.emgb"), "--out", path("m.tsw")});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find(path("nope.emgb")), std::string::npos) << missing.err;

  std::ofstream(path("bad.json")) << R"({"train": {"epochs": "many"}})";
  const std::string data = synth("d.emgb");
  EXPECT_EQ(run({"train", "--config", path("bad.json"), "--data", data, "--out", path("m.tsw")}).code, 1);

  std::ofstream(path("junk.emgb")) << "not an emgb file";
  EXPECT_EQ(run({"eval", "--model", path("m.tsw"), "--data", path("junk.emgb")}).code, 2);
}

TEST_F(CliTest, SynthTrainEvalChain) {
  const std::string data = synth("d.emgb", 12);
  const std::string before = slurp(data);
  const std::string ckpt = path("m.tsw");
  const Result tr = run({"train", "--config", small_config(), "--preset", "synth", "--epochs", "3", "--data", data,
                         "--out", ckpt, "--report", path("train_report.json")});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(ckpt));
  EXPECT_EQ(slurp(data), before);

  std::ifstream log(ckpt + ".log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("val_accuracy") && j.contains("train_loss") && j.contains("val_loss"));
    ++lines;
  }
  EXPECT_EQ(lines, 3);

  const Result ev = run({"eval", "--model", ckpt, "--data", data, "--report", path("report.json")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("accuracy"), std::string::npos);
  EXPECT_NE(ev.out.find("subject"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(path("report.json")));
  std::size_t diag = 0, total = 0;
  const auto& cm = report.at("confusion");
  for (std::size_t i = 0; i < cm.size(); ++i) {
    for (std::size_t j = 0; j < cm[i].size(); ++j) {
      total += cm[i][j].get<std::size_t>();
      if (i == j) diag += cm[i][j].get<std::size_t>();
    }
  }
  EXPECT_EQ(total, 36u);
  EXPECT_DOUBLE_EQ(report.at("accuracy").get<double>(), 100.0 * static_cast<double>(diag) / total);
}

TEST_F(CliTest, SameSeedGivesIdenticalLogsAndCheckpoints) {
  const std::string data = synth("d.emgb");
  const std::string cfg = small_config();
  for (const char* name : {"a.tsw", "b.tsw"}) {
    ASSERT_EQ(run({"train", "--config", cfg, "--epochs", "2", "--seed", "9", "--data", data, "--out", path(name)}).code,
              0);
  }
  EXPECT_EQ(slurp(path("a.tsw.log.jsonl")), slurp(path("b.tsw.log.jsonl")));
  EXPECT_EQ(slurp(path("a.tsw")), slurp(path("b.tsw")));
}

TEST_F(CliTest, EvalNamesGeometryMismatch) {
  const std::string data = synth("d.emgb");
  ASSERT_EQ(run({"train", "--config", small_config(), "--epochs", "1", "--data", data, "--out", path("m.tsw")}).code, 0);
  const std::string other = path("k4.emgb");
  ASSERT_EQ(run({"synth", "--classes", "4", "--channels", "3", "--window", "40", "--per-class", "3", "--out", other})
                .code,
            0);
  const Result r = run({"eval", "--model", path("m.tsw"), "--data", other});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("K="), std::string::npos) << r.err;
}

TEST_F(CliTest, GradcheckPasses) {
  const Result r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("PASS max_rel_err="), std::string::npos);
  EXPECT_NE(r.out.find("<= 1e-04"), std::string::npos);
}

TEST_F(CliTest, FlopsPrintsTableAndTotal) {
  const Result a = run({"flops", "--input-len", "1000"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("a.fwd.block0.conv1"), std::string::npos);
  EXPECT_NE(a.out.find("at input length 1000"), std::string::npos);
  const std::uint64_t expected = count_flops(ModelConfig{}, {}, 1000).total;
  EXPECT_NE(a.out.find("total " + std::to_string(expected)), std::string::npos) << a.out;
}

TEST_F(CliTest, SplitWritesThreeParts) {
  const std::string data = synth("d.emgb");
  ASSERT_EQ(run({"split", "--data", data, "--out-prefix", path("p")}).code, 0);
  std::size_t n = 0;
  for (const char* part : {"train", "val", "test"}) n += data::load_emgb(path(std::string("p.") + part + ".emgb")).size();
  EXPECT_EQ(n, 30u);
}

TEST_F(CliTest, AblateEmitsFiveRows) {
  const std::string data = synth("d.emgb", 6);
  const Result r = run({"ablate", "--config", small_config(), "--epochs", "1", "--data", data, "--out", path("t.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Proposed"), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("t.json"))).size(), 5u);
}
