#include <gtest/gtest.h>

#include <stdexcept>

#include "test_support.hpp"

using namespace guidedial;
using namespace guidedial::testing;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(2024);
  return r;
}

}  // namespace

TEST(TapeGrad, Matmul) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) { return t.matmul(v[0], v[1]); };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 4, rng()), random_matrix(4, 5, rng())}), 1e-6);
}

TEST(TapeGrad, MatmulTransposed) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) { return t.matmul_nt(v[0], v[1]); };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 4, rng()), random_matrix(6, 4, rng())}), 1e-6);
}

TEST(TapeGrad, AddRowMulScale) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) {
    return t.scale(t.mul(t.add_row(v[0], v[1]), t.add(v[0], v[2])), 0.7);
  };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 4, rng()), random_matrix(1, 4, rng()), random_matrix(3, 4, rng())}),
            1e-6);
}

TEST(TapeGrad, GatherRepeatsAccumulate) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) { return t.gather_rows(v[0], {2, 0, 2, 1}); };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 5, rng())}), 1e-6);
}

TEST(TapeGrad, SliceAndConcat) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) {
    auto a = t.slice_cols(v[0], 1, 2);
    auto b = t.slice_rows(v[1], 1, 3);
    return t.concat_cols({a, t.concat_rows({t.slice_rows(b, 0, 1), t.slice_rows(b, 1, 2)})});
  };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 4, rng()), random_matrix(5, 3, rng())}), 1e-6);
}

TEST(TapeGrad, ScaleRows) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) { return t.scale_rows(v[0], {0.5, -2.0, 1.5}); };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 4, rng())}), 1e-6);
}

TEST(TapeGrad, LayerNorm) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) { return t.layer_norm(v[0], v[1], v[2]); };
  EXPECT_LT(check_gradients(f, {random_matrix(4, 6, rng()), random_matrix(1, 6, rng()), random_matrix(1, 6, rng())}),
            1e-5);
}

TEST(TapeGrad, Pointwise) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) { return t.add(t.gelu(v[0]), t.mul(t.tanh(v[0]), t.sigmoid(v[0]))); };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 5, rng())}), 1e-6);
}

TEST(TapeGrad, MaskedSoftmax) {
  AttentionMask mask = AttentionMask::causal(3, 1);
  auto f = [&](TapeD& t, const std::vector<VarD>& v) { return t.masked_softmax_rows(v[0], mask); };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 4, rng())}), 1e-6);
}

TEST(TapeGrad, MaskedMeanAndMax) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) {
    return t.concat_rows({t.masked_mean_rows(v[0], {1, 0, 1, 1}), t.max_rows(v[0])});
  };
  EXPECT_LT(check_gradients(f, {random_matrix(4, 5, rng())}), 1e-6);
}

TEST(TapeGrad, CrossEntropySkipsNegativeTargets) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) { return t.cross_entropy(v[0], {2, -1, 0}); };
  EXPECT_LT(check_gradients(f, {random_matrix(3, 5, rng())}), 1e-6);
  TapeD t;
  MatD z = random_matrix(3, 5, rng());
  auto x = t.parameter(0, z);
  auto loss = t.cross_entropy(x, {2, -1, 0});
  t.backward(loss);
  EXPECT_EQ(t.grad(x).row(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TapeGrad, BinaryCrossEntropy) {
  auto f = [](TapeD& t, const std::vector<VarD>& v) {
    return t.binary_cross_entropy(t.sigmoid(v[0]), {1.f, 0.f, 0.f, 1.f, 0.f, 1.f});
  };
  EXPECT_LT(check_gradients(f, {random_matrix(1, 6, rng())}), 1e-6);
}

TEST(Tape, FullyMaskedSoftmaxRowIsZero) {
  TapeD t(false);
  AttentionMask mask{2, 3, {0, 0, 0, 1, 1, 0}};
  auto p = t.masked_softmax_rows(t.constant(random_matrix(2, 3, rng())), mask);
  EXPECT_EQ(t.value(p).row(0).cwiseAbs().sum(), 0.0);
  EXPECT_NEAR(t.value(p).row(1).sum(), 1.0, 1e-12);
  EXPECT_EQ(t.value(p)(1, 2), 0.0);
}

TEST(Tape, MaskedMeanRejectsEmptyMask) {
  TapeD t(false);
  EXPECT_THROW(t.masked_mean_rows(t.constant(random_matrix(2, 3, rng())), {0, 0}), std::invalid_argument);
}

TEST(Tape, MaxRowsTieGoesToFirstRow) {
  TapeD t;
  MatD m(2, 2);
  m << 1.0, 3.0, 1.0, 2.0;
  auto x = t.parameter(0, m);
  auto out = t.max_rows(x);
  auto loss = t.matmul(out, t.constant(MatD::Ones(2, 1)));
  t.backward(loss);
  EXPECT_EQ(t.grad(x)(0, 0), 1.0);
  EXPECT_EQ(t.grad(x)(1, 0), 0.0);
}

TEST(Tape, ParameterSharedAcrossUses) {
  TapeD t;
  MatD w = random_matrix(2, 2, rng());
  auto a = t.parameter(3, w);
  auto b = t.parameter(3, w);
  EXPECT_EQ(a.id, b.id);
  int seen = 0;
  t.backward(t.matmul(t.matmul(t.constant(MatD::Ones(1, 2)), t.mul(a, b)), t.constant(MatD::Ones(2, 1))));
  t.for_each_parameter_grad([&](int slot, const MatD& g) {
    ++seen;
    EXPECT_EQ(slot, 3);
    EXPECT_NEAR((g - 2 * w).norm(), 0.0, 1e-12);
  });
  EXPECT_EQ(seen, 1);
}

TEST(Tape, NoRecordingSkipsGradients) {
  TapeD t(false);
  MatD w = random_matrix(2, 2, rng());
  auto a = t.parameter(0, w);
  auto s = t.matmul(t.matmul(t.constant(MatD::Ones(1, 2)), a), t.constant(MatD::Ones(2, 1)));
  EXPECT_NEAR(t.value(s)(0, 0), w.sum(), 1e-12);
  EXPECT_THROW(t.backward(s), std::logic_error);
}
