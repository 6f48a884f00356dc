#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <tuple>

#include "fixture_support.hpp"
#include "guidedial/config.hpp"
#include "guidedial/errors.hpp"
#include "guidedial/metrics.hpp"
#include "guidedial/synth.hpp"

using namespace guidedial;
using namespace guidedial::testing;

TEST(Synth, SameSeedSameCorpus) {
  SynthOptions o;
  o.seed = 4;
  SynthCorpus a = synthesize(o), b = synthesize(o);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(to_json(a.train[i]), to_json(b.train[i]));
  o.seed = 5;
  SynthCorpus c = synthesize(o);
  EXPECT_NE(to_json(a.train.front()).dump() + to_json(a.train.back()).dump(),
            to_json(c.train.front()).dump() + to_json(c.train.back()).dump());
}

TEST(Synth, OodTargetsAreUnseenInTraining) {
  SynthOptions o;
  o.seed = 8;
  LoadedDataset data = resolve_dataset(synthesize(o));
  OodReport r = verify_ood(data.split, data.inventory);
  EXPECT_TRUE(r.disjoint);
  EXPECT_FALSE(data.split.test_ood.empty());
}

TEST(Synth, InventoryHasThirteenTypes) {
  EXPECT_EQ(synth_types().size(), 13u);
  LoadedDataset data = resolve_dataset(synthesize(SynthOptions{}));
  EXPECT_LE(data.inventory.num_types(), 13);
  for (const auto& s : data.split.train) {
    ASSERT_FALSE(s.bridge.empty());
    EXPECT_EQ(s.bridge.back(), s.target);
    // Each system turn mentions the topic of its own keyword.
    EXPECT_TRUE(target_achieved(s.reference, data.inventory.topic_name(s.bridge.front().topic_id))) << s.reference;
  }
}

TEST(Synth, FullInventoryCoversAllTopics) {
  SynthOptions o;
  o.topics_per_kind = kDurecdialTopicsPerKind;
  o.cover_all_topics = true;
  o.train_dialogues = 10;
  LoadedDataset data = resolve_dataset(synthesize(o));
  EXPECT_EQ(data.inventory.num_topics(), 640);
  EXPECT_EQ(data.inventory.num_types(), 13);
  std::set<int> seen;
  for (const auto& s : data.split.train) {
    for (const auto& k : s.bridge) seen.insert(k.topic_id);
  }
  EXPECT_EQ(static_cast<int>(seen.size()), 640);
}

TEST(Synth, KnowledgeHasNoDuplicateFacts) {
  SynthOptions o;
  o.seed = 2;
  for (const auto& s : synthesize(o).train) {
    std::set<std::tuple<std::string, std::string, std::string>> facts;
    for (const auto& k : s.knowledge) EXPECT_TRUE(facts.insert({k.subject, k.relation, k.object}).second);
  }
}

TEST(Synth, WriteCorpusProducesLoadableFiles) {
  auto dir = scratch_dir("synth_write");
  SynthOptions o;
  o.train_dialogues = 3;
  write_corpus(dir, synthesize(o));
  LoadedDataset data = load_dataset(dir);
  EXPECT_FALSE(data.split.train.empty());
  EXPECT_TRUE(verify_ood(data.split, data.inventory).disjoint);
}

namespace {

const char* kIni = R"([run]
seed = 9
output_dir = out

[data]
dir = data

[model]
d = 32
n_layers = 2
n_heads = 4

[optimizer]
lr = 0.001
epochs = 3

[bridging]
mode = soft
m = 3
delta = 0.25

[ablation]
use_ikb = false
)";

}  // namespace

TEST(Config, ParsesSectionsAndResolvesPaths) {
  RunConfig c = parse_run_config(kIni, "/base");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.model.seed, 9u);
  EXPECT_EQ(c.optimizer.seed, 9u);
  EXPECT_EQ(c.data_dir, std::filesystem::path("/base/data"));
  EXPECT_EQ(c.output_dir, std::filesystem::path("/base/out"));
  EXPECT_EQ(c.model.d, 32);
  EXPECT_DOUBLE_EQ(c.optimizer.learning_rate, 1e-3);
  EXPECT_EQ(c.inference.mode, SelectionMode::soft);
  EXPECT_EQ(c.inference.m, 3);
  EXPECT_DOUBLE_EQ(c.inference.delta, 0.25);
  EXPECT_FALSE(c.inference.use_ikb);
  EXPECT_FALSE(c.objective().use_ikb);
  EXPECT_EQ(c.objective().m, 3);

  RunConfig back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Config, OutOfRangeDeltaNamesTheField) {
  std::string text = kIni;
  text.replace(text.find("delta = 0.25"), 12, "delta = 1.5");
  try {
    parse_run_config(text, "/base");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("bridging.delta", 0), 0u) << e.what();
  }
}

TEST(Config, UnknownKeyAndBadValueAreRejected) {
  try {
    parse_run_config("[model]\nwidth = 3\n");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("model.width"), std::string::npos) << e.what();
  }
  try {
    parse_run_config("[data]\ndir = x\n[optimizer]\nepochs = many\n");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("optimizer.epochs"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config("[data]\ndir = x\n[ablation]\nuse_csm = false\ndrop_knowledge = true\n"),
               ValidationError);
}

TEST(Config, SyntaxErrorReportsLine) {
  try {
    parse_run_config("[run]\nseed = 1\nthis line is wrong\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(Config, CommittedTinyConfigLoads) {
  RunConfig c = load_run_config(std::filesystem::path(GUIDEDIAL_CONFIG_DIR) / "tiny.ini");
  EXPECT_TRUE(std::filesystem::exists(c.data_dir / "train.jsonl")) << c.data_dir;
  EXPECT_EQ(c.model.d, 32);
}
