#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "scc/calib.hpp"
#include "scc/graph.hpp"

namespace fs = std::filesystem;
using namespace scc;

namespace {

// Brute force: for every bin m scan all samples and test (m-1)/M < c <= m/M
// directly (c == 0 joins bin 1).
struct Brute {
  double mse = 0, ece = 0, oce = 0;
};

Brute brute_force(const std::vector<int>& v, const std::vector<double>& c, int M) {
  Brute b;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) b.mse += (v[i] - c[i]) * (v[i] - c[i]) / n;
  for (int m = 1; m <= M; ++m) {
    double lo = static_cast<double>(m - 1) / M, hi = static_cast<double>(m) / M;
    double cnt = 0, cs = 0, vs = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      bool in = (c[i] > lo && c[i] <= hi) || (m == 1 && c[i] == 0.0);
      if (!in) continue;
      cnt += 1;
      cs += c[i];
      vs += v[i];
    }
    if (cnt == 0) continue;
    double conf = cs / cnt, rel = vs / cnt;
    b.ece += cnt / n * std::fabs(rel - conf);
    b.oce += cnt / n * conf * (conf > rel ? conf - rel : 0.0);
  }
  return b;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("scc_calib_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Mse, Examples) {
  std::vector<int> v{1, 0};
  std::vector<double> c{0.5, 0.5};
  EXPECT_DOUBLE_EQ(mse(v, c), 0.25);
  std::vector<double> exact{1.0, 0.0};
  EXPECT_EQ(mse(v, exact), 0.0);
  EXPECT_THROW(mse(v, std::vector<double>{0.5}), std::invalid_argument);
}

TEST(Ece, HandExample) {
  std::vector<int> v{1, 1, 0, 0};
  std::vector<double> c{0.9, 0.9, 0.9, 0.2};
  auto r = calibration_report(v, c, 2);
  EXPECT_EQ(r.bins[1].count, 3u);
  EXPECT_NEAR(r.bins[1].conf, 0.9, 1e-15);
  EXPECT_NEAR(r.bins[1].rel, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.bins[0].count, 1u);
  EXPECT_NEAR(r.ece, 0.225, 1e-15);
  EXPECT_NEAR(r.oce, 0.1675, 1e-15);
}

TEST(Ece, PerfectlyCalibratedIsZero) {
  // 10 samples at c = 0.7 with 7 correct, 4 at c = 0.25 with 1 correct.
  std::vector<int> v;
  std::vector<double> c;
  for (int i = 0; i < 10; ++i) {
    v.push_back(i < 7);
    c.push_back(0.7);
  }
  for (int i = 0; i < 4; ++i) {
    v.push_back(i < 1);
    c.push_back(0.25);
  }
  EXPECT_NEAR(ece(v, c), 0.0, 1e-15);
}

TEST(Oce, UnderConfidentIsZero) {
  std::vector<int> v{1, 1, 1, 0};
  std::vector<double> c{0.2, 0.3, 0.6, 0.1};
  EXPECT_EQ(oce(v, c, 2), 0.0);
}

TEST(Calibration, DefaultBins) {
  EXPECT_EQ(kMetricBins, 100);
  EXPECT_EQ(kDiagramBins, 10);
}

TEST(Calibration, BinEdges) {
  EXPECT_EQ(bin_index(0.0, 10), 1);
  EXPECT_EQ(bin_index(0.1, 10), 1);
  EXPECT_EQ(bin_index(0.1000001, 10), 2);
  EXPECT_EQ(bin_index(1.0, 10), 10);
  EXPECT_EQ(bin_index(0.3, 10), 3);
  EXPECT_EQ(bin_index(0.7, 100), 70);
}

TEST(Calibration, MatchesBruteForceOracle) {
  Rng rng = make_rng(1);
  std::uniform_int_distribution<int> mpick(1, 120), npick(1, 300);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 1000; ++t) {
    const int M = mpick(rng), n = npick(rng);
    std::vector<int> v(n);
    std::vector<double> c(n);
    for (int i = 0; i < n; ++i) {
      double r = u(rng);
      // include exact bin edges and endpoints
      c[i] = r < 0.1 ? std::floor(u(rng) * (M + 1)) / M : (r < 0.15 ? 0.0 : u(rng));
      c[i] = std::min(c[i], 1.0);
      v[i] = u(rng) < c[i] ? 1 : 0;
    }
    auto r = calibration_report(v, c, M);
    auto b = brute_force(v, c, M);
    ASSERT_NEAR(r.mse, b.mse, 1e-12);
    ASSERT_NEAR(r.ece, b.ece, 1e-12);
    ASSERT_NEAR(r.oce, b.oce, 1e-12);
  }
}

TEST(Calibration, RangesAndBinInvariants) {
  Rng rng = make_rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> v(200);
    std::vector<double> c(200);
    for (int i = 0; i < 200; ++i) {
      c[i] = u(rng);
      v[i] = u(rng) < 0.5;
    }
    auto r = calibration_report(v, c, 20);
    std::size_t total = 0;
    for (int m = 0; m < 20; ++m) {
      total += r.bins[m].count;
      if (r.bins[m].count == 0) continue;
      EXPECT_GT(r.bins[m].conf, m / 20.0 - 1e-15);
      EXPECT_LE(r.bins[m].conf, (m + 1) / 20.0 + 1e-15);
    }
    EXPECT_EQ(total, r.n);
    for (double x : {r.mse, r.ece, r.oce}) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(Calibration, PermutationInvariant) {
  Rng rng = make_rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<int> v(300);
  std::vector<double> c(300);
  for (int i = 0; i < 300; ++i) {
    c[i] = u(rng);
    v[i] = u(rng) < c[i];
  }
  auto a = calibration_report(v, c, 100);
  std::vector<std::size_t> perm(300);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> vp(300);
  std::vector<double> cp(300);
  for (int i = 0; i < 300; ++i) {
    vp[i] = v[perm[i]];
    cp[i] = c[perm[i]];
  }
  auto b = calibration_report(vp, cp, 100);
  EXPECT_NEAR(a.mse, b.mse, 1e-15);
  EXPECT_NEAR(a.ece, b.ece, 1e-15);
  EXPECT_NEAR(a.oce, b.oce, 1e-15);
}

TEST(Calibration, RejectsBadInput) {
  std::vector<int> v{1};
  EXPECT_THROW(calibration_report(v, std::vector<double>{1.5}, 10), std::invalid_argument);
  EXPECT_THROW(calibration_report(v, std::vector<double>{0.5}, 0), std::invalid_argument);
  EXPECT_THROW(calibration_report({}, {}, 10), std::invalid_argument);
}

TEST(Spearman, KnownValues) {
  std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_NEAR(spearman(x, std::vector<double>{2, 4, 6, 8, 10}), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-15);
  // ties: ranks of y = (1.5, 1.5, 3, 4, 5) -> 9.5 / sqrt(10 * 9.5)
  EXPECT_NEAR(spearman(x, std::vector<double>{1, 1, 2, 3, 4}), 9.5 / std::sqrt(95.0), 1e-12);
  EXPECT_NEAR(spearman(x, std::vector<double>{1, 3, 2, 5, 4}), 0.8, 1e-12);
}

TEST(ReliabilityCsv, RowsRoundTripAndEce) {
  Rng rng = make_rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<int> v(500);
  std::vector<double> c(500);
  for (int i = 0; i < 500; ++i) {
    c[i] = u(rng) * 0.6;  // leaves the top bins empty
    v[i] = u(rng) < c[i] + 0.2;
  }
  auto r = calibration_report(v, c, 10);
  auto dir = temp_dir("rel");
  emit_reliability_csv(r, dir / "r.csv");
  auto t = csv::read(dir / "r.csv");
  EXPECT_EQ(t.rows.size(), 10u);
  EXPECT_EQ(t.rows.back()[2], "0");
  auto back = parse_reliability_csv(dir / "r.csv");
  ASSERT_EQ(back.bins.size(), r.bins.size());
  for (std::size_t m = 0; m < r.bins.size(); ++m) {
    EXPECT_EQ(back.bins[m].count, r.bins[m].count);
    EXPECT_EQ(back.bins[m].conf, r.bins[m].conf);
    EXPECT_EQ(back.bins[m].rel, r.bins[m].rel);
  }
  EXPECT_NEAR(back.ece, r.ece, 1e-12);
  EXPECT_NEAR(back.oce, r.oce, 1e-12);
}

TEST(MetricsSummary, Format) {
  std::vector<ProviderMetrics> rows{{"vanilla", 0.25, 0.5, 0.125, std::nullopt}, {"mixup", 0, 0, 0, 0.75}};
  EXPECT_EQ(metrics_summary_csv(rows), "provider,mse,ece,oce,sav_top1\nvanilla,0.25,0.5,0.125,\nmixup,0,0,0,0.75\n");
}

TEST(Accuracy, PerfectPredictor) {
  auto ds = generate_clusters(3, 10, 3, 0.0, 1);
  // Output head c fires when the input is nearest center c: use the centers as
  // W2 rows through an identity-like hidden layer.
  auto centers = detail::class_centers(3, 3, kDefaultSeparation, 1);
  auto m = MlpModel::zeros(3, 6, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    m.w1()[k * 3 + k] = 1.0;
    m.w1()[(k + 3) * 3 + k] = -1.0;
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < 3; ++k) {
      m.w2()[c * 6 + k] = centers[c][k];
      m.w2()[c * 6 + k + 3] = -centers[c][k];
    }
  for (std::size_t c = 0; c < 3; ++c) m.b2()[c] = -0.5 * kDefaultSeparation * kDefaultSeparation;
  auto acc = accuracy(m, ds);
  EXPECT_EQ(acc.top1, 1.0);
  EXPECT_EQ(acc.top5, 1.0);
}

TEST(Accuracy, TopFiveTrivialForFewClasses) {
  auto ds = generate_clusters(5, 20, 4, 1.0, 2);
  auto m = MlpModel::random(4, 8, 5, 2);
  EXPECT_EQ(accuracy(m, ds).top5, 1.0);
}

TEST(Accuracy, RandomPredictorNearChance) {
  auto ds = generate_clusters(10, 300, 12, 1.0, 3);
  auto m = MlpModel::random(12, 16, 10, 77);
  // scramble the labels so the fixed random model is uncorrelated with them
  Rng rng = make_rng(5);
  std::uniform_int_distribution<int> pick(0, 9);
  for (auto& s : ds.samples) s.true_label = pick(rng);
  EXPECT_NEAR(accuracy(m, ds).top1, 0.1, 0.03);
}

TEST(Accuracy, TiesGoToLowerIndex) {
  std::vector<double> p{0.5, 0.5, 0.5};
  EXPECT_EQ(label_rank(p, 0), 0u);
  EXPECT_EQ(label_rank(p, 2), 2u);
}

class Sav : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto full = generate_clusters(3, 140, 6, 1.0, 3);
    auto split = split_holdout(full, 40, 3);
    train_ = new SyntheticDataset(inject_noise(split.first, NoiseModel::uniform, 0.4, 3));
    test_ = new SyntheticDataset(split.second);
    cfg_ = TrainConfig{};
    cfg_.hidden = 16;
    cfg_.epochs = 6;
    cfg_.warmup_epochs = 2;
    art_ = new StageOneArtifacts(extract(*train_, pretrain(*train_, cfg_).models, cfg_));
    cfg_.initial_lr = 0.05;
  }
  static void TearDownTestSuite() {
    delete train_;
    delete test_;
    delete art_;
  }
  static inline SyntheticDataset* train_ = nullptr;
  static inline SyntheticDataset* test_ = nullptr;
  static inline StageOneArtifacts* art_ = nullptr;
  static inline TrainConfig cfg_;
};

TEST_F(Sav, OwnConfidenceEqualsPlainFinetune) {
  double sav = sav_harness(*train_, *art_, art_->scc, cfg_, *test_);
  EXPECT_EQ(sav, accuracy(finetune(*train_, *art_, cfg_).model, *test_).top1);
}

TEST_F(Sav, AllOnesEqualsWebContinuation) {
  std::vector<double> ones(train_->size(), 1.0);
  double sav = sav_harness(*train_, *art_, ones, cfg_, *test_);
  auto web = train_from(art_->model_theta0, *train_, cfg_, Objective{});
  EXPECT_EQ(sav, accuracy(web.model, *test_).top1);
}

TEST_F(Sav, LengthMismatch) {
  std::vector<double> short_vec(train_->size() - 1, 0.5);
  EXPECT_THROW(sav_harness(*train_, *art_, short_vec, cfg_, *test_), std::invalid_argument);
}

TEST(SavRanking, SmoothedAndMixupConfidenceBeatVanilla) {
  // The default desk-scale scenario with seed 1.
  auto full = generate_clusters(5, 1400, 16, 1.0, 1);
  auto [clean, test] = split_holdout(full, 1000, 1);
  auto train = inject_noise(clean, NoiseModel::uniform, 0.4, 1);
  TrainConfig cfg;
  auto vanilla = extract(train, pretrain(train, cfg).models, cfg);
  auto mcfg = cfg;
  mcfg.regularizer = Regularizer::mixup;
  auto mixup = extract(train, pretrain(train, mcfg).models, mcfg);
  auto gba = smooth_artifacts(vanilla, train);
  auto fcfg = TrainConfig::finetune_defaults();
  double s_van = sav_harness(train, vanilla, vanilla.scc, fcfg, test);
  double s_mix = sav_harness(train, vanilla, mixup.scc, fcfg, test);
  double s_gba = sav_harness(train, vanilla, gba.scc, fcfg, test);
  EXPECT_GE(s_gba, s_van);
  EXPECT_GE(s_mix, s_van);
}
