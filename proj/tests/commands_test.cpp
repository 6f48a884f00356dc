#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixture_support.hpp"
#include "guidedial/checkpoint.hpp"
#include "guidedial/commands.hpp"
#include "guidedial/errors.hpp"

using namespace guidedial;
using namespace guidedial::testing;

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

class Commands : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    out_ = new std::filesystem::path(scratch_dir("commands") / "run");
    TrainCommand t;
    t.config = std::filesystem::path(GUIDEDIAL_CONFIG_DIR) / "tiny.ini";
    t.out = *out_;
    std::ostringstream progress;
    outcome_ = new TrainOutcome(cmd_train(t, progress));
  }
  static void TearDownTestSuite() {
    delete outcome_;
    delete out_;
  }
  static std::filesystem::path checkpoint() { return *out_ / "checkpoint" / "best"; }

  static std::filesystem::path* out_;
  static TrainOutcome* outcome_;
};

std::filesystem::path* Commands::out_ = nullptr;
TrainOutcome* Commands::outcome_ = nullptr;

TEST_F(Commands, TrainWritesCheckpointsAndLogs) {
  EXPECT_EQ(outcome_->fit.epochs.size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(*out_ / "checkpoint" / "best" / "weights.bin"));
  EXPECT_TRUE(std::filesystem::exists(*out_ / "checkpoint" / "last" / "optimizer.bin"));
  EXPECT_EQ(static_cast<long>(read_lines(*out_ / "train_log.jsonl").size()), outcome_->fit.state.step);
  EXPECT_EQ(read_lines(*out_ / "epochs.jsonl").size(), 3u);
  auto rc = nlohmann::json::parse(std::ifstream(*out_ / "run_config.json"));
  EXPECT_EQ(rc["config"]["model"]["d"], 32);
}

TEST_F(Commands, ResumeContinuesFromLast) {
  auto dir = scratch_dir("commands_resume") / "run";
  std::filesystem::create_directories(dir);
  std::filesystem::copy(*out_, dir, std::filesystem::copy_options::recursive);
  TrainCommand t;
  t.config = std::filesystem::path(GUIDEDIAL_CONFIG_DIR) / "tiny.ini";
  t.out = dir;
  t.resume = true;
  std::ostringstream progress;
  TrainOutcome r = cmd_train(t, progress);
  // The tiny config has already run all its epochs, so nothing more happens.
  EXPECT_TRUE(r.fit.epochs.empty());
  EXPECT_EQ(r.fit.state.step, outcome_->fit.state.step);
}

TEST_F(Commands, EvaluatePrintsTableAndWritesReports) {
  auto dir = scratch_dir("commands_eval");
  EvalCommand e;
  e.checkpoint = checkpoint();
  e.split = "dev";
  e.out = dir / "report.json";
  e.predictions = dir / "pred.jsonl";
  std::ostringstream table;
  EvalReport r = cmd_evaluate(e, table);
  EXPECT_NE(table.str().find("W.F1"), std::string::npos);
  EXPECT_NE(table.str().find("dev"), std::string::npos);
  EXPECT_EQ(static_cast<size_t>(r.n_samples), read_lines(fixture_dir() / "tiny" / "dev.jsonl").size());
  auto j = nlohmann::json::parse(std::ifstream(dir / "report.json"));
  EXPECT_EQ(EvalReport::from_json(j).to_json(), r.to_json());
  EXPECT_EQ(static_cast<long>(read_lines(dir / "pred.jsonl").size()), r.n_samples);
}

TEST_F(Commands, EvaluateModesDifferOnlyInModeMetadata) {
  EvalCommand e;
  e.checkpoint = checkpoint();
  e.split = "test_id";
  std::ostringstream table;
  e.overrides.mode = SelectionMode::hard;
  auto hard = cmd_evaluate(e, table).to_json();
  e.overrides.mode = SelectionMode::soft;
  auto soft = cmd_evaluate(e, table).to_json();
  EXPECT_EQ(hard["mode"], "hard");
  EXPECT_EQ(soft["mode"], "soft");
  EXPECT_EQ(hard["n_samples"], soft["n_samples"]);
  EXPECT_EQ(hard["use_ikb"], soft["use_ikb"]);
}

TEST_F(Commands, EvaluateRejectsUnknownSplit) {
  EvalCommand e;
  e.checkpoint = checkpoint();
  e.split = "valid";
  std::ostringstream table;
  try {
    cmd_evaluate(e, table);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& err) {
    EXPECT_NE(std::string(err.what()).find("valid"), std::string::npos);
  }
}

TEST_F(Commands, OodGuardRejectsCorruptedSplit) {
  auto dir = scratch_dir("commands_ood");
  for (const char* name : {"train", "dev", "test_id", "test_ood"}) {
    std::filesystem::copy_file(fixture_dir() / "tiny" / (std::string(name) + ".jsonl"),
                               dir / (std::string(name) + ".jsonl"));
  }
  // Put a training dialogue's turn into test_ood.
  std::ofstream(dir / "test_ood.jsonl", std::ios::app) << read_lines(dir / "train.jsonl").front() << '\n';
  EvalCommand e;
  e.checkpoint = checkpoint();
  e.split = "test_ood";
  e.data_dir = dir;
  std::ostringstream table;
  EXPECT_THROW(cmd_evaluate(e, table), ValidationError);
  e.data_dir = fixture_dir() / "tiny";
  EXPECT_NO_THROW(cmd_evaluate(e, table));
}

TEST_F(Commands, InspectReportsSortedTopK) {
  InspectCommand i;
  i.checkpoint = checkpoint();
  i.split = "dev";
  i.index = 1;
  i.top_k = 10;
  auto j = cmd_inspect(i);
  ASSERT_EQ(j["bias"]["top"].size(), 10u);
  EXPECT_FALSE(j["bias"]["uniform"].get<bool>());
  for (size_t k = 1; k < 10; ++k) EXPECT_GE(j["bias"]["top"][k - 1]["prob"], j["bias"]["top"][k]["prob"]);
  EXPECT_EQ(static_cast<int>(j["keywords"]["type"].size()), load_checkpoint(checkpoint()).inventory.num_types());
  EXPECT_TRUE(j["selection"].contains("type"));
  EXPECT_TRUE(j.contains("generated") && j.contains("reference") && j.contains("trace"));

  i.overrides.no_csm = true;
  auto flat = cmd_inspect(i);
  EXPECT_TRUE(flat["bias"]["uniform"].get<bool>());

  i.index = 999;
  EXPECT_THROW(cmd_inspect(i), std::out_of_range);
}

TEST_F(Commands, GenerateEmitsOneLinePerSample) {
  GenerateCommand g;
  g.checkpoint = checkpoint();
  g.split = "test_id";
  g.count = 2;
  std::ostringstream out;
  cmd_generate(g, out);
  std::istringstream lines(out.str());
  int n = 0;
  for (std::string line; std::getline(lines, line); ++n) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["index"], n);
    EXPECT_TRUE(j["achieved"].is_boolean());
  }
  EXPECT_EQ(n, 2);
}

TEST(InferenceOverrides, ApplyOnlySetsGivenFields) {
  InferenceOptions o;
  o.delta = 0.3;
  InferenceOverrides ov;
  ov.m = 2;
  ov.no_ikb = true;
  ov.apply(o);
  EXPECT_EQ(o.m, 2);
  EXPECT_DOUBLE_EQ(o.delta, 0.3);
  EXPECT_FALSE(o.use_ikb);
  EXPECT_TRUE(o.use_csm);
}
