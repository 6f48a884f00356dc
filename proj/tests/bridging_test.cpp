#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "fixture_support.hpp"
#include "guidedial/bridging.hpp"
#include "guidedial/errors.hpp"

using namespace guidedial;
using namespace guidedial::testing;

namespace {

Eigen::VectorXd random_probs(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd p(n);
  for (int i = 0; i < n; ++i) p[i] = u(rng);
  return p;
}

std::set<int> ids(const std::vector<Pick>& picks) {
  std::set<int> out;
  for (const auto& p : picks) out.insert(p.id);
  return out;
}

double mth_largest(const Eigen::VectorXd& p, int m) {
  std::vector<double> v(p.data(), p.data() + p.size());
  std::sort(v.begin(), v.end(), std::greater<>());
  return v[static_cast<size_t>(m - 1)];
}

Eigen::MatrixXd random_table(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd t(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t(i, j) = n(rng);
  return t;
}

}  // namespace

TEST(SelectHard, PicksTopMWithTieRule) {
  KeywordDistribution d{Eigen::Vector3d(0.1, 0.9, 0.5), Eigen::Vector3d(0.5, 0.5, 0.5)};
  BridgeSelection s = select_hard(d, 2);
  EXPECT_EQ(s.type_picks, (std::vector<Pick>{{1, 1.0}, {2, 1.0}}));
  EXPECT_EQ(s.topic_picks, (std::vector<Pick>{{0, 1.0}, {1, 1.0}}));
  EXPECT_EQ(select_hard(d, 3).type_picks.size(), 3u);
  EXPECT_THROW(select_hard(d, 0), ValidationError);
  EXPECT_THROW(select_hard(d, 4), ValidationError);
}

TEST(SelectHard, MatchesSortOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    KeywordDistribution d{random_probs(rng, 13), random_probs(rng, 40)};
    const int m = 1 + trial % 6;
    BridgeSelection s = select_hard(d, m);
    std::vector<int> order(40);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return d.topic_probs[a] != d.topic_probs[b] ? d.topic_probs[a] > d.topic_probs[b] : a < b;
    });
    order.resize(static_cast<size_t>(m));
    std::sort(order.begin(), order.end());
    std::vector<int> got;
    for (const auto& p : s.topic_picks) got.push_back(p.id);
    EXPECT_EQ(got, order);
  }
}

TEST(SelectHard, RaisingALogitNeverDropsThatIndex) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    KeywordDistribution d{random_probs(rng, 10), random_probs(rng, 10)};
    BridgeSelection before = select_hard(d, 3);
    const int j = before.type_picks.back().id;
    d.type_probs[j] = std::min(1.0, d.type_probs[j] + 0.3);
    EXPECT_TRUE(ids(select_hard(d, 3).type_picks).count(j));
  }
}

TEST(SelectSoft, ThresholdsAndWeights) {
  KeywordDistribution d{Eigen::Vector3d(0.1, 0.9, 0.5), Eigen::Vector3d(0.05, 0.1, 0.15)};
  BridgeSelection s = select_soft(d, 0.2);
  EXPECT_EQ(s.type_picks, (std::vector<Pick>{{1, 0.9}, {2, 0.5}}));
  EXPECT_FALSE(s.type_fallback);
  EXPECT_EQ(s.topic_picks, (std::vector<Pick>{{2, 0.15}}));
  EXPECT_TRUE(s.topic_fallback);
  EXPECT_THROW(select_soft(d, 1.5), ValidationError);
  EXPECT_THROW(select_soft(d, -0.1), ValidationError);
}

TEST(SelectSoft, ZeroThresholdSelectsEverything) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    KeywordDistribution d{random_probs(rng, 13), random_probs(rng, 30)};
    BridgeSelection s = select_soft(d, 0.0);
    ASSERT_EQ(s.type_picks.size(), 13u);
    ASSERT_EQ(s.topic_picks.size(), 30u);
    for (const auto& p : s.topic_picks) EXPECT_EQ(p.weight, d.topic_probs[p.id]);
  }
}

TEST(SelectSoft, HardIsContainedInSoftBelowMthLargest) {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> pick_m(1, 8);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    KeywordDistribution d{random_probs(rng, 13), random_probs(rng, 50)};
    const int m = pick_m(rng);
    const double delta = frac(rng) * std::min(mth_largest(d.type_probs, m), mth_largest(d.topic_probs, m));
    BridgeSelection hard = select_hard(d, m);
    BridgeSelection soft = select_soft(d, delta);
    auto st = ids(soft.type_picks), sp = ids(soft.topic_picks);
    for (const auto& p : hard.type_picks) EXPECT_TRUE(st.count(p.id));
    for (const auto& p : hard.topic_picks) EXPECT_TRUE(sp.count(p.id));
  }
}

TEST(SelectSoft, FallbackYieldsOnePickPerHead) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    KeywordDistribution d{0.5 * random_probs(rng, 13), 0.5 * random_probs(rng, 20)};
    BridgeSelection s = select_soft(d, 0.75);
    ASSERT_EQ(s.type_picks.size(), 1u);
    ASSERT_EQ(s.topic_picks.size(), 1u);
    EXPECT_TRUE(s.type_fallback && s.topic_fallback);
    Eigen::Index best;
    d.topic_probs.maxCoeff(&best);
    EXPECT_EQ(s.topic_picks[0].id, best);
    EXPECT_EQ(s.topic_picks[0].weight, d.topic_probs[best]);
  }
}

TEST(BridgeState, MatchesPerCoordinateMaxOracle) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd types = random_table(rng, 13, 8), topics = random_table(rng, 30, 8);
    KeywordDistribution d{random_probs(rng, 13), random_probs(rng, 30)};
    BridgeSelection s = trial % 2 ? select_soft(d, 0.3) : select_hard(d, 4);
    Eigen::MatrixXd h = bridge_state(s, types, topics);
    ASSERT_EQ(h.rows(), 2);
    for (int c = 0; c < 8; ++c) {
      double a = -1e300, t = -1e300;
      for (const auto& p : s.type_picks) a = std::max(a, p.weight * types(p.id, c));
      for (const auto& p : s.topic_picks) t = std::max(t, p.weight * topics(p.id, c));
      EXPECT_NEAR(h(0, c), a, 1e-12);
      EXPECT_NEAR(h(1, c), t, 1e-12);
    }
  }
}

TEST(BridgeState, InvariantToPickOrder) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd types = random_table(rng, 13, 8), topics = random_table(rng, 30, 8);
    BridgeSelection s = select_soft({random_probs(rng, 13), random_probs(rng, 30)}, 0.1);
    Eigen::MatrixXd ref = bridge_state(s, types, topics);
    for (int shuffle = 0; shuffle < 10; ++shuffle) {
      BridgeSelection p = s;
      std::shuffle(p.type_picks.begin(), p.type_picks.end(), rng);
      std::shuffle(p.topic_picks.begin(), p.topic_picks.end(), rng);
      EXPECT_EQ(bridge_state(p, types, topics), ref);
    }
  }
}

TEST(BridgeState, SinglePickReturnsTheEmbedding) {
  std::mt19937_64 rng(18);
  Eigen::MatrixXd types = random_table(rng, 5, 4), topics = random_table(rng, 6, 4);
  BridgeSelection s;
  s.type_picks = {{3, 1.0}};
  s.topic_picks = {{1, 1.0}};
  Eigen::MatrixXd h = bridge_state(s, types, topics);
  EXPECT_EQ(h.row(0), types.row(3));
  EXPECT_EQ(h.row(1), topics.row(1));
  s.topic_picks.clear();
  EXPECT_THROW(bridge_state(s, types, topics), ValidationError);
}

TEST(TeacherSelection, PicksGoldPositives) {
  TinyCorpus tc;
  for (const auto& ex : tc.train) {
    BridgeSelection s = teacher_selection(ex);
    int positives = 0;
    for (float v : ex.keyword_targets) positives += v > 0.5f;
    EXPECT_EQ(static_cast<int>(s.type_picks.size() + s.topic_picks.size()), positives);
    for (const auto& p : s.type_picks) EXPECT_EQ(ex.keyword_targets[static_cast<size_t>(p.id)], 1.0f);
    for (const auto& p : s.topic_picks) {
      EXPECT_EQ(ex.keyword_targets[static_cast<size_t>(ex.num_types + p.id)], 1.0f);
    }
  }
  TrainingExample empty = tc.train[0];
  std::fill(empty.keyword_targets.begin(), empty.keyword_targets.end(), 0.0f);
  EXPECT_THROW(teacher_selection(empty), ValidationError);
}

TEST(Heads, MatchAffineLogisticOracle) {
  TinyCorpus tc;
  auto model = tc.model<double>();
  std::mt19937_64 rng(19);
  Eigen::VectorXd fused = random_table(rng, 16, 1);
  KeywordDistribution d = predict_keywords(model, fused);
  const auto& p = model.params();
  const auto& b = model.bridging();
  auto oracle = [&](const LinearSlots& s, int j) {
    double z = p.value(s.bias)(0, j);
    for (int i = 0; i < 16; ++i) z += fused[i] * p.value(s.weight)(i, j);
    return 1.0 / (1.0 + std::exp(-z));
  };
  ASSERT_EQ(d.type_probs.size(), tc.data.inventory.num_types());
  for (int j = 0; j < d.type_probs.size(); ++j) EXPECT_NEAR(d.type_probs[j], oracle(b.type_head, j), 1e-12);
  for (int j = 0; j < d.topic_probs.size(); ++j) EXPECT_NEAR(d.topic_probs[j], oracle(b.topic_head, j), 1e-12);
}

TEST(Fusion, ZeroSummariesReduceToGatedContextProjection) {
  TinyCorpus tc;
  auto model = tc.model<double>();
  EncoderState<double> enc = encode(model, tc.train[2].context_ids);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(16);
  Eigen::VectorXd fused = fuse(model, enc, zero, zero);

  const auto& p = model.params();
  const auto& f = model.bridging().fusion;
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(16);
  int n = 0;
  for (int i = 0; i < enc.length(); ++i) {
    if (enc.mask[static_cast<size_t>(i)]) {
      mean += enc.hidden.row(i);
      ++n;
    }
  }
  mean /= n;
  Eigen::RowVectorXd gate = mean * p.value(f.gate_context.weight) + p.value(f.gate_context.bias);
  gate = (1.0 / (1.0 + (-gate.array()).exp())).matrix();
  Eigen::RowVectorXd z = gate.cwiseProduct(mean * p.value(f.proj_context.weight));
  Eigen::RowVectorXd out = z * p.value(f.out.weight) + p.value(f.out.bias);
  EXPECT_LE((fused - out.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(fuse(model, enc, zero, zero), fused);
}

TEST(PredictionJson, RankedWithPickedFlags) {
  KeywordInventory inv({"a", "b", "c"}, {"x", "y"});
  KeywordDistribution d{Eigen::Vector3d(0.2, 0.7, 0.4), Eigen::Vector2d(0.9, 0.1)};
  auto j = prediction_json(d, select_soft(d, 0.3), inv);
  ASSERT_EQ(j["type"].size(), 3u);
  EXPECT_EQ(j["type"][0]["name"], "b");
  EXPECT_EQ(j["type"][1]["name"], "c");
  EXPECT_TRUE(j["type"][1]["picked"].get<bool>());
  EXPECT_FALSE(j["type"][2]["picked"].get<bool>());
  EXPECT_EQ(j["topic"][0]["prob"].get<double>(), 0.9);
}
