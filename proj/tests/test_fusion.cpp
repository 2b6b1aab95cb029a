#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cvl/fusion.hpp"
#include "test_util.hpp"

namespace cvl {
namespace {

using testing::random_map;

TEST(QkvTransform, IdentityStackPassesNegativeValuesThrough) {
  Rng rng(1);
  const auto frame = random_map(6, 5, 3, rng, -2.0, 2.0, 0.2);
  const auto qkv = qkv_transform(frame, QkvWeights::identity(3));
  EXPECT_EQ(qkv.query, frame);
  EXPECT_EQ(qkv.key, frame);
  EXPECT_EQ(qkv.value, frame);
}

TEST(QkvTransform, ZeroFrameGivesBiasResponse) {
  ConvStack s = ConvStack::zeros(1, 1, 1);
  s.first.bias[0] = 0.5;
  for (std::size_t ky = 0; ky < 3; ++ky)
    for (std::size_t kx = 0; kx < 3; ++kx) s.second.weight(ky, kx, 0, 0) = 0.1;
  s.second.bias[0] = -0.2;
  FeatureMap<double> zero(4, 4, 1, true);
  zero.set_valid(3, 3, false);
  const auto out = apply(s, zero);
  // Interior: -0.2 + 9 taps * 0.1 * relu(0.5).
  EXPECT_NEAR(out.at(1, 1, 0), 0.25, 1e-12);
  // Corner (0,0): four in-bounds taps.
  EXPECT_NEAR(out.at(0, 0, 0), 0.0, 1e-12);
  // (2,2) loses the masked neighbour (3,3): eight taps.
  EXPECT_NEAR(out.at(2, 2, 0), 0.2, 1e-12);
  EXPECT_EQ(out.at(3, 3, 0), 0.0);
  EXPECT_FALSE(out.valid(3, 3));
}

TEST(QkvTransform, HandComputedTwoLayerStack) {
  // 1x1 input, so only the centre taps act.
  ConvStack s = ConvStack::zeros(2, 2, 2);
  s.first.weight(1, 1, 0, 0) = 1;
  s.first.weight(1, 1, 0, 1) = 2;
  s.first.weight(1, 1, 1, 0) = 3;
  s.first.weight(1, 1, 1, 1) = 4;
  s.first.bias = {0.5, -10};
  s.second.weight(1, 1, 0, 0) = 1;
  s.second.weight(1, 1, 0, 1) = -1;
  s.second.weight(1, 1, 1, 0) = 0.5;
  s.second.weight(1, 1, 1, 1) = 2;
  s.second.bias = {0.1, 0.2};
  FeatureMap<double> x(1, 1, 2, true);
  x.at(0, 0, 0) = 2;
  x.at(0, 0, 1) = 1;
  // Layer 1: (2 + 3 + 0.5, 4 + 4 - 10) = (5.5, -2) -> ReLU (5.5, 0).
  // Layer 2: (5.5 + 0.1, -5.5 + 0.2).
  const auto qkv = qkv_transform(x, QkvWeights{s, s, s});
  EXPECT_NEAR(qkv.query.at(0, 0, 0), 5.6, 1e-12);
  EXPECT_NEAR(qkv.query.at(0, 0, 1), -5.3, 1e-12);
}

TEST(QkvTransform, ChannelMismatch) {
  const FeatureMap<double> frame(4, 4, 2, true);
  try {
    qkv_transform(frame, QkvWeights::identity(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(AttentionMatrix, SingleFrameIsAllOnes) {
  Rng rng(2);
  const auto q = random_map(4, 4, 2, rng, -1, 1, 0.25);
  const auto m = attention_matrix<double>({q}, {q});
  for (std::size_t p = 0; p < 16; ++p) {
    if (q.valid(p / 4, p % 4)) {
      EXPECT_TRUE(m.valid(p));
      EXPECT_DOUBLE_EQ(m(0, 0, p), 1.0);
    } else {
      EXPECT_FALSE(m.valid(p));
      EXPECT_EQ(m(0, 0, p), 0.0);
    }
  }
}

TEST(AttentionMatrix, IdenticalFramesAreUniform) {
  Rng rng(3);
  const auto f = random_map(3, 3, 4, rng);
  const auto m = attention_matrix<double>({f, f, f}, {f, f, f});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t p = 0; p < 9; ++p) EXPECT_NEAR(m(i, j, p), 1.0 / 3.0, 1e-15);
}

TEST(AttentionMatrix, TwoFrameSoftmaxValue) {
  FeatureMap<double> q1(1, 1, 1, true), q2(1, 1, 1, true), k1(1, 1, 1, true), k2(1, 1, 1, true);
  q1.at(0, 0, 0) = 1;
  k1.at(0, 0, 0) = 2;
  k2.at(0, 0, 0) = 0;
  const auto m = attention_matrix<double>({q1, q2}, {k1, k2});
  // softmax(2, 0) = (e^2, 1) / (e^2 + 1).
  EXPECT_NEAR(m(0, 0, 0), 0.8808, 1e-4);
  EXPECT_NEAR(m(0, 1, 0), 0.1192, 1e-4);
  EXPECT_NEAR(m(0, 0, 0), std::exp(2.0) / (std::exp(2.0) + 1.0), 1e-15);
}

TEST(AttentionMatrix, MaskedFramesGetNoWeight) {
  FeatureMap<double> a(1, 2, 1, true), b(1, 2, 1, true);
  a.at(0, 0, 0) = 0.3;
  a.at(0, 1, 0) = -4.0;
  b.set_valid(0, 1, false);  // b is invisible at pixel 1
  b.at(0, 0, 0) = 0.1;
  const auto m = attention_matrix<double>({a, b}, {a, b});
  EXPECT_DOUBLE_EQ(m(0, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(m(0, 1, 1), 0.0);
  EXPECT_DOUBLE_EQ(m(1, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(m(1, 1, 1), 0.0);
}

TEST(AttentionMatrix, AllMaskedPixelIsInvalid) {
  FeatureMap<double> a(1, 1, 1, false), b(1, 1, 1, false);
  const auto m = attention_matrix<double>({a, b}, {a, b});
  EXPECT_FALSE(m.valid(0));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(m(i, j, 0), 0.0);
  const auto fused = pcsf_fuse(m, std::vector<FeatureMap<double>>{a, b});
  EXPECT_FALSE(fused.valid(0, 0));
}

TEST(AttentionMatrix, EmptySequence) {
  try {
    attention_matrix<double>({}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySequence);
  }
}

TEST(AttentionMatrix, LargeLogitsStayFinite) {
  FeatureMap<double> a(1, 1, 1, true), b(1, 1, 1, true);
  a.at(0, 0, 0) = 100;
  b.at(0, 0, 0) = -100;
  const auto m = attention_matrix<double>({a, b}, {a, b});
  EXPECT_DOUBLE_EQ(m(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m(1, 1, 0), 1.0);
  EXPECT_DOUBLE_EQ(m(0, 0, 0) + m(0, 1, 0), 1.0);
}

TEST(AttentionMatrix, LogitScalingKeepsRowsStochastic) {
  Rng rng(4);
  std::vector<FeatureMap<double>> f{random_map(3, 3, 4, rng), random_map(3, 3, 4, rng)};
  const auto plain = attention_matrix(f, f);
  const auto scaled = attention_matrix(f, f, {true});
  EXPECT_NE(plain(0, 1, 0), scaled(0, 1, 0));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t p = 0; p < 9; ++p) EXPECT_NEAR(scaled(i, 0, p) + scaled(i, 1, p), 1.0, 1e-12);
}

TEST(PcsfFuse, SingleFrameReturnsValue) {
  Rng rng(5);
  const auto v = random_map(5, 5, 2, rng, -1, 1, 0.3);
  const auto m = attention_matrix<double>({v}, {v});
  EXPECT_EQ(pcsf_fuse(m, std::vector<FeatureMap<double>>{v}), v);
}

TEST(PcsfFuse, IdenticalFramesReturnValue) {
  Rng rng(6);
  const auto v = random_map(5, 5, 2, rng);
  const std::vector<FeatureMap<double>> frames(4, v);
  const auto fused = pcsf_fuse(attention_matrix(frames, frames), frames);
  for (std::size_t i = 0; i < v.data().size(); ++i) EXPECT_NEAR(fused.data()[i], v.data()[i], 1e-12);
}

TEST(PcsfFuse, DiagonalAttentionAveragesValues) {
  AttentionTensor m(2, 1, 1);
  m(0, 0, 0) = 1;
  m(1, 1, 0) = 1;
  m.set_valid(0, true);
  FeatureMap<double> v1(1, 1, 2, true), v2(1, 1, 2, true);
  v1.at(0, 0, 0) = 1.0;
  v1.at(0, 0, 1) = -3.0;
  v2.at(0, 0, 0) = 4.0;
  v2.at(0, 0, 1) = 0.5;
  const auto fused = pcsf_fuse(m, std::vector<FeatureMap<double>>{v1, v2});
  EXPECT_DOUBLE_EQ(fused.at(0, 0, 0), 2.5);
  EXPECT_DOUBLE_EQ(fused.at(0, 0, 1), -1.25);
}

TEST(PcsfFuse, ShapeMismatch) {
  AttentionTensor m(2, 2, 2);
  const std::vector<FeatureMap<double>> v{FeatureMap<double>(2, 2, 1, true)};
  EXPECT_THROW(pcsf_fuse(m, v), Error);
}

TEST(MeanFuse, Examples) {
  FeatureMap<double> a(1, 2, 1, true), b(1, 2, 1, true);
  a.at(0, 0, 0) = 2.0;
  b.at(0, 0, 0) = 5.0;
  a.set_valid(0, 1, false);
  b.at(0, 1, 0) = -7.0;
  EXPECT_EQ(mean_fuse<double>({a}), a);
  const auto m = mean_fuse<double>({a, b});
  EXPECT_DOUBLE_EQ(m.at(0, 0, 0), 3.5);
  EXPECT_DOUBLE_EQ(m.at(0, 1, 0), -7.0);  // valid only in the second frame
  EXPECT_THROW(mean_fuse<double>({}), Error);
}

// ---- invariants -----------------------------------------------------------------

TEST(FusionInvariants, RowsAreStochastic) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform(0, 6));
    std::vector<FeatureMap<double>> q, k;
    for (std::size_t i = 0; i < n; ++i) {
      q.push_back(random_map(6, 6, 3, rng, -2, 2, 0.3));
      k.push_back(random_map(6, 6, 3, rng, -2, 2, 0.3));
    }
    const auto m = attention_matrix(q, k);
    for (std::size_t p = 0; p < 36; ++p) {
      if (!m.valid(p)) continue;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) {
          EXPECT_GE(m(i, j, p), 0.0);
          s += m(i, j, p);
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(FusionInvariants, PermutationInvariant) {
  Rng rng(8);
  ConvStack s = ConvStack::zeros(2, 2, 2);
  for (auto* layer : {&s.first, &s.second})
    for (auto& w : layer->kernel) w = rng.uniform(-0.5, 0.5);
  const QkvWeights weights{s, ConvStack::identity(2), s};
  std::vector<FeatureMap<double>> frames;
  for (int i = 0; i < 5; ++i) frames.push_back(random_map(8, 8, 2, rng, -1, 1, 0.3));
  const auto reference = fuse_sequence(frames, weights);
  std::vector<std::size_t> order{4, 2, 0, 3, 1};
  std::vector<FeatureMap<double>> permuted;
  for (auto i : order) permuted.push_back(frames[i]);
  const auto fused = fuse_sequence(permuted, weights);
  EXPECT_EQ(std::vector<std::uint8_t>(fused.mask().begin(), fused.mask().end()),
            std::vector<std::uint8_t>(reference.mask().begin(), reference.mask().end()));
  for (std::size_t i = 0; i < fused.data().size(); ++i) EXPECT_NEAR(fused.data()[i], reference.data()[i], 1e-6);
}

TEST(FusionInvariants, PhotoConsistentPixelKeepsAgreedValue) {
  // Pixel 0: both frames agree on v = 0.8. Pixel 1: they disagree; the key
  // of frame 2 is anti-aligned there so its value is suppressed.
  FeatureMap<double> q1(1, 2, 1, true), q2(1, 2, 1, true);
  q1.at(0, 0, 0) = q2.at(0, 0, 0) = 1.0;
  q1.at(0, 1, 0) = q2.at(0, 1, 0) = 1.0;
  FeatureMap<double> k1 = q1, k2 = q1;
  k2.at(0, 1, 0) = -3.0;
  FeatureMap<double> v1(1, 2, 1, true), v2(1, 2, 1, true);
  v1.at(0, 0, 0) = v2.at(0, 0, 0) = 0.8;
  v1.at(0, 1, 0) = 1.0;
  v2.at(0, 1, 0) = -1.0;
  const auto fused = pcsf_fuse(attention_matrix<double>({q1, q2}, {k1, k2}), std::vector<FeatureMap<double>>{v1, v2});
  EXPECT_NEAR(fused.at(0, 0, 0), 0.8, 1e-6);
  // Weight on frame 1 is softmax(1, -3)[0] = 1 / (1 + e^-4).
  const double w1 = 1.0 / (1.0 + std::exp(-4.0));
  EXPECT_NEAR(fused.at(0, 1, 0), w1 * 1.0 + (1 - w1) * -1.0, 1e-12);
  EXPECT_GT(fused.at(0, 1, 0), 0.9);
}

TEST(FusionInvariants, ScheduleIndependent) {
  Rng rng(9);
  std::vector<FeatureMap<double>> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(random_map(16, 16, 2, rng, -1, 1, 0.2));
  FeatureMap<double> one, four;
  {
    testing::ThreadsGuard g(1);
    one = fuse_sequence(frames, QkvWeights::identity(2));
  }
  {
    testing::ThreadsGuard g(4);
    four = fuse_sequence(frames, QkvWeights::identity(2));
  }
  EXPECT_EQ(one, four);
}

}  // namespace
}  // namespace cvl
