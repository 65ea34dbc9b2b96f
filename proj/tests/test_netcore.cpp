#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "scc/netcore.hpp"

using namespace scc;

namespace {

constexpr double kLn2 = std::numbers::ln2;

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<double> random_target(std::size_t n, Rng& rng) { return random_vec(n, rng, 0.0, 1.0); }

Prediction uniform_pred(std::size_t c) { return Prediction{std::vector<double>(c, 0.5)}; }

// Independent central-difference gradient, used to cross-check gradient_check.
std::vector<double> numeric_gradient(const MlpModel& m, const std::vector<double>& x, const LossSpec& spec) {
  std::vector<double> g(m.params.size());
  MlpModel probe = m;
  const double h = 1e-5;
  for (std::size_t i = 0; i < g.size(); ++i) {
    probe.params[i] = m.params[i] + h;
    double up = evaluate_loss(probe, x, spec);
    probe.params[i] = m.params[i] - h;
    double down = evaluate_loss(probe, x, spec);
    probe.params[i] = m.params[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(Forward, ZeroModelGivesHalf) {
  auto m = MlpModel::zeros(4, 3, 5);
  auto p = forward(m, std::vector<double>{1, 2, 3, 4});
  ASSERT_EQ(p.probs.size(), 5u);
  for (double v : p.probs) EXPECT_EQ(v, 0.5);
}

TEST(Forward, EvalModeIsDeterministic) {
  auto m = MlpModel::random(6, 8, 3, 42, 0.5);
  Rng rng = make_rng(1);
  auto x = random_vec(6, rng);
  EXPECT_EQ(forward(m, x).probs, forward(m, x).probs);
}

TEST(Forward, OutputsAreIndependentSigmoids) {
  auto m = MlpModel::random(6, 8, 4, 3);
  Rng rng = make_rng(2);
  for (int t = 0; t < 50; ++t) {
    auto p = forward(m, random_vec(6, rng, -5, 5));
    for (double v : p.probs) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Forward, DropoutAveragesToEvalOutput) {
  // With a linear readout of the hidden layer, E[dropout output logits] equals
  // the eval logits; compare the mean logit-space prediction.
  auto m = MlpModel::random(5, 32, 3, 9, 0.5);
  Rng rng = make_rng(3);
  auto x = random_vec(5, rng);
  auto eval = forward_trace(m, x, Mode::eval);
  std::vector<double> mean(3, 0.0);
  const int trials = 20000;
  Rng drop = make_rng(4);
  for (int t = 0; t < trials; ++t) {
    auto tr = forward_trace(m, x, Mode::train, &drop);
    for (int j = 0; j < 3; ++j) mean[j] += tr.logits[j] / trials;
  }
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(mean[j], eval.logits[j], 0.05 + 0.02 * std::abs(eval.logits[j]));
}

TEST(Forward, DropoutMaskScalesSurvivors) {
  auto m = MlpModel::random(4, 200, 2, 5, 0.5);
  Rng rng = make_rng(6);
  auto tr = forward_trace(m, random_vec(4, rng), Mode::train, &rng);
  std::size_t kept = 0;
  for (double s : tr.mask) {
    EXPECT_TRUE(s == 0.0 || s == 2.0);
    kept += s != 0.0;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 200.0, 0.5, 0.15);
}

TEST(Forward, DimensionMismatchThrows) {
  auto m = MlpModel::zeros(4, 3, 2);
  EXPECT_THROW(forward(m, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(LossWeb, PerfectPredictionNearZero) {
  Prediction p{{0.0, 1.0, 0.0}};
  EXPECT_LE(loss_web(p, 1), 3 * kProbEps * 2);
  EXPECT_GE(loss_web(p, 1), 0.0);
}

TEST(LossWeb, UniformPredictionIsCLn2) {
  for (std::size_t c : {1u, 2u, 5u, 10u}) EXPECT_NEAR(loss_web(uniform_pred(c), 0), c * kLn2, 1e-14);
}

TEST(LossWeb, SingleClass) { EXPECT_NEAR(loss_web(Prediction{{0.9}}, 0), -std::log(0.9), 1e-15); }

TEST(LossWeb, LabelOutOfRange) { EXPECT_THROW(loss_web(uniform_pred(3), 3), std::out_of_range); }

TEST(LossSelf, SelfTargetGivesBinaryEntropy) {
  EXPECT_NEAR(loss_self(uniform_pred(4), std::vector<double>(4, 0.5)), 4 * kLn2, 1e-14);
  Prediction p{{0.2, 0.7}};
  double h = 0.0;
  for (double q : p.probs) h -= q * std::log(q) + (1 - q) * std::log(1 - q);
  EXPECT_NEAR(loss_self(p, p.probs), h, 1e-14);
}

TEST(LossSelf, OneHotEqualsWebExactly) {
  Rng rng = make_rng(7);
  for (int t = 0; t < 200; ++t) {
    Prediction p{random_vec(6, rng, 0.0, 1.0)};
    int w = t % 6;
    std::vector<double> q(6, 0.0);
    q[w] = 1.0;
    EXPECT_EQ(loss_self(p, q), loss_web(p, w));
  }
}

TEST(LossSelf, PerfectOneHotNearZero) {
  Prediction p{{1.0, 0.0}};
  EXPECT_LE(loss_self(p, std::vector<double>{1.0, 0.0}), 4 * kProbEps);
}

TEST(LossSelf, LengthMismatch) {
  EXPECT_THROW(loss_self(uniform_pred(3), std::vector<double>{0.5}), std::invalid_argument);
}

TEST(LossCombined, EndpointsAndArithmetic) {
  Rng rng = make_rng(8);
  Prediction p{random_vec(5, rng, 0.01, 0.99)};
  auto q = random_target(5, rng);
  EXPECT_EQ(loss_combined(p, 2, q, 1.0).total, loss_web(p, 2));
  EXPECT_EQ(loss_combined(p, 2, q, 0.0).total, loss_self(p, q));
  LossBreakdown b{2.0, 1.0, 0.5, 0.5 * 2.0 + 0.5 * 1.0};
  EXPECT_DOUBLE_EQ(b.total, 1.5);
}

TEST(LossCombined, AffineInC) {
  Rng rng = make_rng(9);
  for (int t = 0; t < 100; ++t) {
    Prediction p{random_vec(4, rng, 0.0, 1.0)};
    auto q = random_target(4, rng);
    double c = std::uniform_real_distribution<double>(0, 1)(rng);
    auto b = loss_combined(p, t % 4, q, c);
    EXPECT_NEAR(b.total, c * b.l_w + (1 - c) * b.l_s, 1e-14);
    EXPECT_GE(b.total, 0.0);
  }
}

TEST(LossCombined, RejectsOutOfRangeC) {
  EXPECT_THROW(loss_combined(uniform_pred(2), 0, std::vector<double>{0.5, 0.5}, 1.1), std::invalid_argument);
  EXPECT_THROW(loss_combined(uniform_pred(2), 0, std::vector<double>{0.5, 0.5}, -0.1), std::invalid_argument);
}

TEST(LabelSmoothing, ZeroEpsilonIsWebLoss) {
  Prediction p{{0.3, 0.8, 0.1}};
  EXPECT_EQ(loss_label_smoothing(p, 1, 0.0), loss_web(p, 1));
}

TEST(LabelSmoothing, UniformPredictionUnchanged) {
  EXPECT_NEAR(loss_label_smoothing(uniform_pred(2), 0, 0.1), 2 * kLn2, 1e-14);
}

TEST(LabelSmoothing, TargetConvention) {
  auto t = smoothed_target(4, 2, 0.1);
  EXPECT_EQ(t, (std::vector<double>{0.1, 0.1, 0.9, 0.1}));
  double sum = 0.0;
  for (double v : t) sum += v;
  EXPECT_NEAR(sum, (1 - 0.1) + 3 * 0.1, 1e-15);
}

TEST(EntropyReg, ZeroWeightIsWebLoss) {
  Prediction p{{0.3, 0.8}};
  EXPECT_EQ(loss_entropy_reg(p, 0, 0.0), loss_web(p, 0));
}

TEST(EntropyReg, PenaltyAtUniform) {
  auto p = uniform_pred(3);
  EXPECT_NEAR(loss_entropy_reg(p, 0, 0.1) - loss_web(p, 0), -3 * kLn2 * 0.1, 1e-14);
}

TEST(EntropyReg, SaturatedPenaltyVanishesAndGradientPushesBack) {
  Prediction sat{{1 - 1e-6, 1e-6}};
  EXPECT_NEAR(negative_entropy(sat), 0.0, 1e-4);

  // Single-sample model whose output logit is driven by b2; a saturated head
  // should be pulled toward 0.5 by the penalty alone.
  auto m = MlpModel::zeros(2, 2, 1);
  m.b2()[0] = 8.0;
  std::vector<double> x{0.0, 0.0};
  auto with = backward(m, x, EntropyRegLoss{0, 0.1}).grads.values;
  auto without = backward(m, x, WebLoss{0}).grads.values;
  const double penalty_grad = with[m.b2_offset()] - without[m.b2_offset()];
  EXPECT_GT(penalty_grad, 0.0);  // descent lowers the logit, away from saturation
  auto num = numeric_gradient(m, x, EntropyRegLoss{0, 0.1});
  auto num0 = numeric_gradient(m, x, WebLoss{0});
  EXPECT_GT(num[m.b2_offset()] - num0[m.b2_offset()], 0.0);
}

TEST(Consistency, Basics) {
  Prediction a{{0.2, 0.4}};
  EXPECT_EQ(loss_consistency(a, a), 0.0);
  EXPECT_EQ(loss_consistency(Prediction{{1, 1, 1}}, Prediction{{0, 0, 0}}), 1.0);
  Rng rng = make_rng(10);
  for (int t = 0; t < 50; ++t) {
    auto x = random_vec(7, rng, 0, 1), y = random_vec(7, rng, 0, 1);
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += (x[j] - y[j]) * (x[j] - y[j]);
    EXPECT_NEAR(loss_consistency({x}, {y}), s / 7, 1e-15);
  }
}

TEST(Backward, CombinedAtOneEqualsWeb) {
  auto m = MlpModel::random(5, 7, 3, 11);
  Rng rng = make_rng(11);
  auto x = random_vec(5, rng);
  auto web = backward(m, x, WebLoss{1});
  auto comb = backward(m, x, CombinedLoss{1, random_target(3, rng), 1.0});
  EXPECT_EQ(web.grads.values, comb.grads.values);
  EXPECT_EQ(web.loss, comb.loss);
}

TEST(Backward, ZeroInputZeroWeightsGivesZeroHiddenGradient) {
  auto m = MlpModel::zeros(4, 6, 3);
  auto g = backward(m, std::vector<double>(4, 0.0), WebLoss{0}).grads.values;
  for (std::size_t i = m.w1_offset(); i < m.b1_offset(); ++i) EXPECT_EQ(g[i], 0.0);
}

TEST(Backward, MatchesIndependentFiniteDifferences) {
  auto m = MlpModel::random(4, 5, 3, 12);
  Rng rng = make_rng(12);
  auto x = random_vec(4, rng);
  LossSpec spec = CombinedLoss{2, random_target(3, rng), 0.3};
  auto a = backward(m, x, spec).grads.values;
  auto n = numeric_gradient(m, x, spec);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], n[i], 1e-7 + 1e-5 * std::abs(n[i]));
}

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, AllLossesWithinTolerance) {
  const int seed = GetParam();
  Rng rng = make_rng(seed, 99);
  auto m = MlpModel::random(6, 10, 4, seed);
  auto x = random_vec(6, rng, -2, 2);
  const int w = seed % 4;
  auto q = random_target(4, rng);
  std::vector<LossSpec> specs{WebLoss{w},
                              SelfLoss{q},
                              CombinedLoss{w, q, 0.0},
                              CombinedLoss{w, q, 0.3},
                              CombinedLoss{w, q, 1.0},
                              SmoothedLoss{w, 0.1},
                              EntropyRegLoss{w, 0.1},
                              ConsistencyLoss{w, random_vec(6, rng, -2, 2), random_vec(6, rng, -2, 2), 1.0}};
  for (std::size_t s = 0; s < specs.size(); ++s) {
    auto rep = gradient_check(m, x, specs[s]);
    EXPECT_EQ(rep.checked, m.params.size());
    EXPECT_LT(rep.max_rel_error, 1e-4) << "spec " << s << " worst param " << rep.worst_index;
  }
}

INSTANTIATE_TEST_SUITE_P(Models, GradientCheck, ::testing::Range(1, 11));

TEST(Checkpoint, RoundTripIsExact) {
  auto m = MlpModel::random(7, 9, 4, 13, 0.25);
  auto dir = std::filesystem::temp_directory_path() / "scc_netcore_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(m, dir / "m.txt");
  EXPECT_EQ(load_checkpoint(dir / "m.txt"), m);
}

TEST(Checkpoint, RejectsGarbage) {
  auto dir = std::filesystem::temp_directory_path() / "scc_netcore_ckpt";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "bad.txt");
    out << "not a checkpoint\n";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.txt"), SchemaError);
  EXPECT_THROW(load_checkpoint(dir / "missing.txt"), std::runtime_error);
}
