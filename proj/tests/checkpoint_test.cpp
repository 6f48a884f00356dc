#include <gtest/gtest.h>

#include <fstream>
#include <functional>

#include "fixture_support.hpp"
#include "guidedial/checkpoint.hpp"
#include "guidedial/errors.hpp"

using namespace guidedial;
using namespace guidedial::testing;

namespace {

void rewrite_index(const std::filesystem::path& file, const std::function<void(nlohmann::json&)>& edit) {
  nlohmann::json j = nlohmann::json::parse(std::ifstream(file));
  edit(j);
  std::ofstream(file) << j.dump();
}

}  // namespace

TEST(Tensors, RoundTripExactly) {
  auto dir = scratch_dir("tensors");
  Matrix<float> a(2, 3), b(1, 1);
  a << 1.5f, -2.0f, 3.25f, 0.0f, 1e-8f, -7.0f;
  b << 42.0f;
  write_tensors(dir, "t", {{"a", a}, {"b", b}});
  auto back = read_tensors(dir, "t");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a");
  EXPECT_EQ(back[0].value, a);
  EXPECT_EQ(back[1].value, b);
}

TEST(Checkpoint, RoundTripKeepsEverything) {
  TinyCorpus tc;
  auto model = tc.model<float>();
  OptimizerConfig c;
  c.epochs = 1;
  c.batch_size = 4;
  OptimizerState<float> opt;
  opt.init(model.params());
  TrainState st;
  FitOptions<float> fo;
  fo.checkpoint = [&](std::string_view, const OptimizerState<float>& o, const TrainState& s) {
    opt = o;
    st = s;
  };
  fit(model, tc.train, tc.dev, c, fo);

  auto dir = scratch_dir("ckpt") / "last";
  nlohmann::json settings{{"m", 4}, {"note", "x"}};
  save_checkpoint(dir, model, tc.vocab, tc.data.inventory, settings, &opt, &st);
  Checkpoint ck = load_checkpoint(dir);
  ASSERT_TRUE(ck.model);
  for (int i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(ck.model->params().value(i), model.params().value(i)) << model.params().name(i);
  }
  EXPECT_EQ(ck.vocab, tc.vocab);
  EXPECT_EQ(ck.inventory, tc.data.inventory);
  EXPECT_EQ(ck.settings, settings);
  ASSERT_TRUE(ck.optimizer && ck.state);
  EXPECT_EQ(ck.optimizer->step, opt.step);
  EXPECT_EQ(ck.optimizer->second.back(), opt.second.back());
  EXPECT_EQ(ck.state->to_json(), st.to_json());

  // Overwriting an existing checkpoint replaces it.
  save_checkpoint(dir, model, tc.vocab, tc.data.inventory, {{"m", 2}});
  Checkpoint again = load_checkpoint(dir);
  EXPECT_EQ(again.settings["m"], 2);
  EXPECT_FALSE(again.optimizer.has_value());
}

TEST(Checkpoint, MissingTensorIsASchemaError) {
  TinyCorpus tc;
  auto model = tc.model<float>();
  auto dir = scratch_dir("ckpt_missing") / "c";
  save_checkpoint(dir, model, tc.vocab, tc.data.inventory, {});
  rewrite_index(dir / "weights.json", [](nlohmann::json& j) {
    auto& list = j.at("tensors");
    for (auto it = list.begin(); it != list.end(); ++it) {
      if ((*it)["name"] == "bridge.topic_head.weight") {
        list.erase(it);
        break;
      }
    }
  });
  try {
    load_checkpoint(dir);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("bridge.topic_head.weight"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, ShapeMismatchIsASchemaError) {
  TinyCorpus tc;
  auto model = tc.model<float>();
  auto dir = scratch_dir("ckpt_shape") / "c";
  save_checkpoint(dir, model, tc.vocab, tc.data.inventory, {});
  rewrite_index(dir / "weights.json", [](nlohmann::json& j) {
    for (auto& t : j.at("tensors")) {
      if (t["name"] == "scenario.bias_matrix") t["shape"][1] = t["shape"][1].get<int>() + 1;
    }
  });
  EXPECT_THROW(load_checkpoint(dir), SchemaError);
}

TEST(Checkpoint, MissingDirectoryNamesThePath) {
  try {
    load_checkpoint("/nonexistent/guidedial/ckpt");
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/guidedial/ckpt"), std::string::npos) << e.what();
  }
}
