#include <gtest/gtest.h>

#include <cmath>

#include "boxseg/error.hpp"
#include "boxseg/kernels.hpp"
#include "boxseg/ops.hpp"
#include "boxseg/random.hpp"
#include "boxseg/selfcorrect.hpp"
#include "support.hpp"

namespace boxseg {
namespace {

using testing::tiny_arch;

PixelLogits random_logits(Rng& rng, Shape dims) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(-3, 3);
  return PixelLogits(std::move(t));
}

double total_variation(const Tensor& a, const Tensor& b, std::size_t channels) {
  double worst = 0.0;
  const std::size_t plane = a.numel() / channels;
  for (std::size_t i = 0; i < plane; ++i) {
    double tv = 0.0;
    for (std::size_t c = 0; c < channels; ++c) tv += std::abs(a[c * plane + i] - b[c * plane + i]);
    worst = std::max(worst, 0.5 * tv);
  }
  return worst;
}

TEST(AlphaSchedule, Endpoints) {
  const AlphaSchedule s{30.0, 0.5, 1000};
  EXPECT_EQ(alpha_at(s, 0), 30.0);
  EXPECT_EQ(alpha_at(s, 1000), 0.5);
  EXPECT_NEAR(alpha_at(s, 500), std::sqrt(15.0), 1e-12);
  EXPECT_NEAR(std::sqrt(15.0), 3.8730, 1e-4);
}

TEST(AlphaSchedule, ClampsAndIsMonotone) {
  const AlphaSchedule s{30.0, 0.5, 777};
  EXPECT_EQ(alpha_at(s, -5), 30.0);
  EXPECT_EQ(alpha_at(s, 10000), 0.5);
  double prev = alpha_at(s, 0);
  for (std::int64_t t = 1; t <= 777; ++t) {
    const double a = alpha_at(s, t);
    EXPECT_LE(a, prev);
    EXPECT_LT(prev / a, 1.01);  // no jumps
    prev = a;
  }
}

TEST(AlphaSchedule, Validation) {
  EXPECT_THROW((AlphaSchedule{0.5, 30.0, 10}.validate()), Error);
  EXPECT_THROW((AlphaSchedule{30.0, 0.0, 10}.validate()), Error);
  EXPECT_THROW((AlphaSchedule{30.0, 0.5, 0}.validate()), Error);
  EXPECT_NO_THROW((AlphaSchedule{1.0, 1.0, 1}.validate()));
}

TEST(Strategy, Names) {
  for (Strategy s : {Strategy::kNone, Strategy::kLinear, Strategy::kConv, Strategy::kEmFixed})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("bogus"), Error);
}

TEST(TargetDistribution, NoneCopiesAncillary) {
  const ArchConfig a = tiny_arch();
  Rng rng(1);
  const PixelLogits l = random_logits(rng, {4, 4, 4}), la = random_logits(rng, {4, 4, 4});
  const Tensor q = target_distribution(Strategy::kNone, l, la, nullptr, a, 3.0).probs();
  EXPECT_TRUE(q.identical(make_factorial(la).probs()));
}

TEST(TargetDistribution, LinearLimits) {
  const ArchConfig a = tiny_arch();
  Rng rng(2);
  const PixelLogits l = random_logits(rng, {4, 4, 4}), la = random_logits(rng, {4, 4, 4});
  const Tensor big = target_distribution(Strategy::kLinear, l, la, nullptr, a, 1e9).probs();
  EXPECT_LT(total_variation(big, make_factorial(la).probs(), 4), 1e-4);
  const Tensor zero = target_distribution(Strategy::kLinear, l, la, nullptr, a, 0.0).probs();
  EXPECT_TRUE(zero.identical(make_factorial(l).probs()));
}

TEST(TargetDistribution, ConvNeedsLambda) {
  const ArchConfig a = tiny_arch();
  Rng rng(3);
  const PixelLogits l = random_logits(rng, {4, 16, 16}), la = random_logits(rng, {4, 16, 16});
  try {
    target_distribution(Strategy::kConv, l, la, nullptr, a, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kState);
  }
  const ParamSet lam = init_selfcorr_head(a, 4);
  const Tensor q = target_distribution(Strategy::kConv, l, la, &lam, a, 1.0).probs();
  const Tensor direct = make_factorial(selfcorr_head_forward(a, lam, l, la)).probs();
  EXPECT_TRUE(q.identical(direct));
}

TEST(TargetDistribution, AlwaysOnTheSimplex) {
  const ArchConfig a = tiny_arch();
  Rng rng(5);
  const ParamSet lam = init_selfcorr_head(a, 6);
  for (Strategy s : {Strategy::kNone, Strategy::kLinear, Strategy::kConv}) {
    const PixelLogits l = random_logits(rng, {4, 16, 16}), la = random_logits(rng, {4, 16, 16});
    // The constructor validates the simplex invariant.
    EXPECT_NO_THROW(target_distribution(s, l, la, &lam, a, 2.0));
  }
}

TEST(ClampOutsideBoxes, ForcesBackground) {
  Tensor probs({3, 1, 2}, 1.0 / 3.0);
  const Tensor boxes = boxes_to_mask({{1, 0, 0, 1, 1}}, 2, 1, 2).tensor();
  clamp_outside_boxes(probs, boxes);
  EXPECT_NEAR(probs.at(0, 0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(probs.at(0, 0, 1), 1.0);
  EXPECT_EQ(probs.at(1, 0, 1), 0.0);
  EXPECT_EQ(probs.at(2, 0, 1), 0.0);
}

TEST(LossFullySupervised, ClosedForms) {
  const std::vector<std::uint8_t> labels{1, 0, 1, 1};
  Graph g;
  Tensor peaked({2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) peaked[labels[i] * 4 + i] = 40.0;
  EXPECT_LT(loss_fully_supervised(g.constant(peaked), labels).value()[0], 1e-6);
  EXPECT_NEAR(loss_fully_supervised(g.constant(Tensor({2, 2, 2})), labels).value()[0], std::log(2.0), 1e-15);
  Rng rng(7);
  const PixelLogits l = random_logits(rng, {2, 2, 2});
  const OneHotMask y = OneHotMask::from_labels(LabelMap{2, 2, labels}, 2);
  EXPECT_NEAR(loss_fully_supervised(g.constant(l.scores()), labels).value()[0],
              loss_weak(g.constant(l.scores()), y.tensor()).value()[0], 1e-14);
}

TEST(LossWeak, ClosedFormsAndNoGradientIntoTarget) {
  Graph g;
  EXPECT_NEAR(loss_weak(g.constant(Tensor({2, 1, 1})), Tensor({2, 1, 1}, 0.5)).value()[0], std::log(2.0), 1e-15);
  // Gradient w.r.t. logits is (softmax(l) - q) / M; there is no node for q.
  Rng rng(8);
  const PixelLogits l = random_logits(rng, {3, 2, 2});
  const Tensor q = make_factorial(random_logits(rng, {3, 2, 2})).probs();
  Graph h;
  Var lv = h.variable(l.scores());
  h.backward(loss_weak(lv, q));
  const Tensor p = kernels::softmax_channels(l.scores());
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(lv.grad()[i], (p[i] - q[i]) / 4.0, 1e-15);
}

TEST(LossQconv, GradientReachesOnlyLambda) {
  const ArchConfig a = tiny_arch();
  Rng rng(9);
  const ParamSet lam = init_selfcorr_head(a, 10);
  std::vector<std::uint8_t> labels(2 * 16 * 16);
  for (auto& v : labels) v = static_cast<std::uint8_t>(rng.below(4));
  Graph g;
  Var l = g.variable(random_logits(rng, {2, 4, 16, 16}).scores());
  Var la = g.variable(random_logits(rng, {2, 4, 16, 16}).scores());
  const BoundParams lb = bind(g, lam, true);
  g.backward(loss_qconv(a, lb, l, la, labels));
  // Detached inputs never get a gradient slot at all.
  auto no_grad = [](const Var& v) {
    try {
      const Tensor gr = v.grad();
      for (double x : gr.data())
        if (x != 0.0) return false;
      return true;
    } catch (const Error& e) {
      return e.kind() == ErrorKind::kState;
    }
  };
  EXPECT_TRUE(no_grad(l));
  EXPECT_TRUE(no_grad(la));
  double norm = 0.0;
  for (const auto& [name, t] : g.param_grads())
    for (double v : t.data()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(LossQconv, ClosedFormsThroughTheHead) {
  // With the averaging head, l = l_anc = uniform gives ln(K) per pixel.
  const ArchConfig a = tiny_arch();
  const ParamSet head = testing::averaging_head(a);
  std::vector<std::uint8_t> labels(16 * 16, 2);
  Graph g;
  const BoundParams lb = bind(g, head, false);
  Var zero = g.constant(Tensor({1, 4, 16, 16}));
  EXPECT_NEAR(loss_qconv(a, lb, zero, zero, labels).value()[0], std::log(4.0), 1e-14);
  Tensor peaked({1, 4, 16, 16});
  for (std::size_t i = 0; i < 256; ++i) peaked[2 * 256 + i] = 40.0;
  Var pk = g.constant(peaked);
  EXPECT_LT(loss_qconv(a, lb, pk, pk, labels).value()[0], 1e-6);
}

TEST(Eq2Equivalence, LinearAtHugeAlphaMatchesNone) {
  const ArchConfig a = tiny_arch();
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const PixelLogits l = random_logits(rng, {4, 8, 8}), la = random_logits(rng, {4, 8, 8});
    auto loss = [&](Strategy s) {
      Graph g;
      return loss_weak(g.constant(l.scores()), target_distribution(s, l, la, nullptr, a, 1e9).probs())
          .value()[0];
    };
    EXPECT_NEAR(loss(Strategy::kNone), loss(Strategy::kLinear), 1e-4);
  }
}

TEST(StopGradient, FrozenAndRecomputedTargetGiveSameGradient) {
  // Recomputing q from the perturbed logits must not change the gradient:
  // q enters the loss as a value.
  const ArchConfig a = tiny_arch();
  Rng rng(12);
  const PixelLogits l = random_logits(rng, {4, 4, 4}), la = random_logits(rng, {4, 4, 4});
  const Tensor q = target_distribution(Strategy::kLinear, l, la, nullptr, a, 0.7).probs();
  Graph g1, g2;
  Var v1 = g1.variable(l.scores()), v2 = g2.variable(l.scores());
  g1.backward(loss_weak(v1, q));
  g2.backward(loss_weak(v2, target_distribution(Strategy::kLinear, PixelLogits(v2.value()), la, nullptr, a, 0.7)
                                .probs()));
  EXPECT_TRUE(v1.grad().identical(v2.grad()));
}

}  // namespace
}  // namespace boxseg
