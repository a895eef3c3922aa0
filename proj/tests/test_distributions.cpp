#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "boxseg/distributions.hpp"
#include "boxseg/error.hpp"
#include "boxseg/kernels.hpp"
#include "boxseg/random.hpp"

namespace boxseg {
namespace {

PixelLogits pixel(std::initializer_list<double> v) {
  return PixelLogits(Tensor({v.size(), 1, 1}, std::vector<double>(v)));
}

LabelDistribution dist(std::initializer_list<double> v) {
  return LabelDistribution(Tensor({v.size(), 1, 1}, std::vector<double>(v)));
}

PixelLogits random_logits(Rng& rng, Shape dims, double scale = 3.0) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  return PixelLogits(std::move(t));
}

// Objective minimized by the fused target: KL(q||p) + alpha KL(q||p_anc).
double fusion_objective(const LabelDistribution& q, const PixelLogits& l, const PixelLogits& la,
                        double alpha) {
  return kl_divergence(q, make_factorial(l)) + alpha * kl_divergence(q, make_factorial(la));
}

TEST(MakeFactorial, ClosedForms) {
  const Tensor zero = make_factorial(PixelLogits(Tensor({2, 3, 3}))).probs();
  for (double v : zero.data()) EXPECT_EQ(v, 0.5);
  const Tensor p = make_factorial(pixel({0, 1})).probs();
  EXPECT_NEAR(p[0], 0.26894, 1e-5);
  EXPECT_NEAR(p[1], 0.73106, 1e-5);
}

TEST(MakeFactorial, ShiftInvariant) {
  Rng rng(1);
  const PixelLogits l = random_logits(rng, {4, 3, 3});
  Tensor shifted = l.scores();
  for (std::size_t i = 0; i < 9; ++i) {
    const double c = rng.uniform(-50, 50);
    for (std::size_t ch = 0; ch < 4; ++ch) shifted[ch * 9 + i] += c;
  }
  const Tensor a = make_factorial(l).probs(), b = make_factorial(PixelLogits(shifted)).probs();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Invariants, RejectNonFiniteLogitsAndOffSimplexProbs) {
  EXPECT_THROW(pixel({0, std::numeric_limits<double>::quiet_NaN()}), Error);
  EXPECT_THROW(dist({0.5, 0.6}), Error);
  EXPECT_THROW(dist({-0.1, 1.1}), Error);
  EXPECT_THROW(OneHotMask(Tensor({2, 1, 1}, std::vector<double>{1, 1})), Error);
}

TEST(Kl, SelfIsZero) {
  Rng rng(2);
  const LabelDistribution p = make_factorial(random_logits(rng, {3, 4, 4}));
  EXPECT_EQ(kl_divergence(p, p), 0.0);
}

TEST(Kl, OneHotAgainstUniformIsLn2) {
  EXPECT_NEAR(kl_divergence(dist({1, 0}), dist({0.5, 0.5})), std::log(2.0), 1e-15);
}

TEST(Kl, ZeroWhereQPositiveIsInfinite) {
  EXPECT_EQ(kl_divergence(dist({0.5, 0.5}), dist({1, 0})), std::numeric_limits<double>::infinity());
  EXPECT_THROW(kl_divergence(dist({1, 0}), LabelDistribution(Tensor({2, 1, 2}, 0.5))), Error);
}

TEST(Kl, FactorizesOverPixels) {
  Rng rng(3);
  const PixelLogits a = random_logits(rng, {3, 1, 2}), b = random_logits(rng, {3, 1, 2});
  const LabelDistribution q = make_factorial(a), p = make_factorial(b);
  double parts = 0.0;
  for (std::size_t px = 0; px < 2; ++px) {
    Tensor qi({3, 1, 1}), pi({3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) {
      qi[c] = q.probs()[c * 2 + px];
      pi[c] = p.probs()[c * 2 + px];
    }
    parts += kl_divergence(LabelDistribution(qi), LabelDistribution(pi));
  }
  EXPECT_NEAR(kl_divergence(q, p), parts, 1e-14);
}

TEST(FuseLinear, AlphaZeroIsPrimary) {
  Rng rng(4);
  const PixelLogits l = random_logits(rng, {3, 2, 2}), la = random_logits(rng, {3, 2, 2});
  EXPECT_TRUE(fuse_linear(l, la, 0.0).scores().identical(l.scores()));
}

TEST(FuseLinear, LargeAlphaIsAncillary) {
  const Tensor q = make_factorial(fuse_linear(pixel({0, 1}), pixel({1, 0}), 1e9)).probs();
  const Tensor pa = make_factorial(pixel({1, 0})).probs();
  EXPECT_LT(0.5 * (std::abs(q[0] - pa[0]) + std::abs(q[1] - pa[1])), 1e-4);
}

TEST(FuseLinear, AlphaOneAveragesAndMinimizesOnGrid) {
  const PixelLogits l = pixel({0, 1}), la = pixel({1, 0});
  const PixelLogits f = fuse_linear(l, la, 1.0);
  EXPECT_EQ(f.scores()[0], 0.5);
  EXPECT_EQ(f.scores()[1], 0.5);
  const LabelDistribution q = make_factorial(f);
  const double at_q = fusion_objective(q, l, la, 1.0);
  for (int i = 0; i <= 1000; ++i) {
    const double a = i * 1e-3;
    EXPECT_LE(at_q, fusion_objective(dist({a, 1.0 - a}), l, la, 1.0) + 1e-12) << a;
  }
}

TEST(FuseLinear, RejectsBadAlphaAndShapes) {
  EXPECT_THROW(fuse_linear(pixel({0, 1}), pixel({1, 0}), -0.1), Error);
  EXPECT_THROW(fuse_linear(pixel({0, 1}), pixel({1, 0}), std::nan("")), Error);
  EXPECT_THROW(fuse_linear(pixel({0, 1}), pixel({1, 0, 2}), 1.0), Error);
}

TEST(FuseLinear, InterpolatesBetweenSources) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const PixelLogits l = random_logits(rng, {3, 1, 1}), la = random_logits(rng, {3, 1, 1});
    const double a1 = rng.uniform(0.01, 5.0), a2 = a1 + rng.uniform(0.01, 5.0);
    const LabelDistribution p = make_factorial(l), pa = make_factorial(la);
    const LabelDistribution q1 = make_factorial(fuse_linear(l, la, a1));
    const LabelDistribution q2 = make_factorial(fuse_linear(l, la, a2));
    EXPECT_LE(kl_divergence(q1, p), kl_divergence(q2, p) + 1e-12);
    EXPECT_GE(kl_divergence(q1, pa) + 1e-12, kl_divergence(q2, pa));
  }
}

TEST(FuseLinear, ShiftInvariantAfterSoftmax) {
  Rng rng(6);
  const PixelLogits l = random_logits(rng, {3, 2, 2}), la = random_logits(rng, {3, 2, 2});
  Tensor ls = l.scores(), las = la.scores();
  for (std::size_t px = 0; px < 4; ++px) {
    const double c1 = rng.uniform(-9, 9), c2 = rng.uniform(-9, 9);
    for (std::size_t c = 0; c < 3; ++c) {
      ls[c * 4 + px] += c1;
      las[c * 4 + px] += c2;
    }
  }
  const Tensor a = make_factorial(fuse_linear(l, la, 2.5)).probs();
  const Tensor b = make_factorial(fuse_linear(PixelLogits(ls), PixelLogits(las), 2.5)).probs();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(SoftCrossEntropy, OneHotIsHardCrossEntropy) {
  Rng rng(7);
  const PixelLogits l = random_logits(rng, {3, 2, 2});
  LabelMap labels{2, 2, {0, 2, 1, 2}};
  const OneHotMask y = OneHotMask::from_labels(labels, 3);
  const Tensor logp = kernels::log_softmax_channels(l.scores());
  double hard = 0.0;
  for (std::size_t px = 0; px < 4; ++px) hard -= logp[labels.labels[px] * 4 + px];
  EXPECT_NEAR(soft_cross_entropy(LabelDistribution(y.tensor()), l), hard, 1e-12);
}

TEST(SoftCrossEntropy, UniformIsLn2) {
  EXPECT_NEAR(soft_cross_entropy(dist({0.5, 0.5}), pixel({0, 0})), std::log(2.0), 1e-15);
}

TEST(SoftCrossEntropy, DescentReachesTheTarget) {
  // Plain gradient descent on l with gradient softmax(l) - q.
  const LabelDistribution q = dist({0.2, 0.5, 0.3});
  Tensor l({3, 1, 1});
  for (int it = 0; it < 5000; ++it) {
    const Tensor p = kernels::softmax_channels(l);
    for (std::size_t c = 0; c < 3; ++c) l[c] -= 1.0 * (p[c] - q.probs()[c]);
  }
  const Tensor p = kernels::softmax_channels(l);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(p[c], q.probs()[c], 1e-9);
  EXPECT_NEAR(soft_cross_entropy(q, PixelLogits(l)), entropy(q), 1e-12);
}

TEST(SoftCrossEntropy, GibbsInequality) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const LabelDistribution q = make_factorial(random_logits(rng, {4, 2, 2}));
    const PixelLogits l = random_logits(rng, {4, 2, 2});
    EXPECT_GE(soft_cross_entropy(q, l), entropy(q) - 1e-8);
    // Equality at l = log q.
    Tensor lq = q.probs();
    for (double& v : lq.data()) v = std::log(v);
    EXPECT_NEAR(soft_cross_entropy(q, PixelLogits(lq)), entropy(q), 1e-8);
  }
}

TEST(LogProb, Saturates) {
  const OneHotMask y = OneHotMask::from_labels(LabelMap{1, 2, {1, 0}}, 2);
  const PixelLogits l(Tensor({2, 1, 2}, std::vector<double>{0, 20, 20, 0}));
  EXPECT_NEAR(log_prob(l, y), 0.0, 1e-6);
  EXPECT_LT(log_prob(l, y), 0.0);
}

TEST(LogProb, UniformIsMinusMLn2) {
  const std::size_t m = 12;
  const OneHotMask y = OneHotMask::from_labels(LabelMap{3, 4, std::vector<std::uint8_t>(m, 1)}, 2);
  EXPECT_NEAR(log_prob(PixelLogits(Tensor({2, 3, 4})), y), -double(m) * std::log(2.0), 1e-12);
}

TEST(LogProb, IsNegativeSoftCrossEntropyOfOneHot) {
  Rng rng(9);
  const PixelLogits l = random_logits(rng, {3, 2, 3});
  const OneHotMask y = OneHotMask::from_labels(LabelMap{2, 3, {0, 1, 2, 2, 1, 0}}, 3);
  EXPECT_NEAR(log_prob(l, y), -soft_cross_entropy(LabelDistribution(y.tensor()), l), 1e-12);
  EXPECT_EQ(y.to_labels(), (LabelMap{2, 3, {0, 1, 2, 2, 1, 0}}));
}

TEST(ArgmaxLabels, PicksLargestChannel) {
  const Tensor s({3, 1, 2}, std::vector<double>{0, 5, 9, 1, 2, 3});
  EXPECT_EQ(argmax_labels(s), (LabelMap{1, 2, {1, 0}}));
}

}  // namespace
}  // namespace boxseg
