// Confidence-quality metrics against a verification set: MSE, binned ECE and
// over-confidence error, reliability tables and the SAV harness.
#pragma once

#include <cmath>
#include <filesystem>
#include <algorithm>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scc/accuracy.hpp"
#include "scc/common.hpp"
#include "scc/csv.hpp"
#include "scc/dataset.hpp"
#include "scc/trainer.hpp"

namespace scc {

inline constexpr int kMetricBins = 100;
inline constexpr int kDiagramBins = 10;

struct ReliabilityBin {
  std::size_t count = 0;
  double conf = 0.0;  // mean confidence, 0 when empty
  double rel = 0.0;   // fraction of correct web labels, 0 when empty
};

struct CalibrationReport {
  int m_bins = 0;
  std::vector<ReliabilityBin> bins;
  double mse = 0.0;
  double ece = 0.0;
  double oce = 0.0;
  std::size_t n = 0;
};

namespace detail {
inline void check_pairs(std::span<const int> v, std::span<const double> c) {
  if (v.size() != c.size()) throw std::invalid_argument("calibration: v and c lengths differ");
  if (v.empty()) throw std::invalid_argument("calibration: empty input");
}
}  // namespace detail

inline double mse(std::span<const int> v, std::span<const double> c) {
  detail::check_pairs(v, c);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    double d = static_cast<double>(v[i]) - c[i];
    s += d * d;
  }
  return s / static_cast<double>(v.size());
}

/// 1-based bin m with (m-1)/M < c <= m/M; c = 0 goes to bin 1.
inline int bin_index(double c, int M) {
  int m = static_cast<int>(std::ceil(c * M));
  m = std::clamp(m, 1, M);
  // ceil(c*M) can land one off the interval test on rounding; settle on the
  // comparison against m/M itself.
  while (m < M && c > static_cast<double>(m) / M) ++m;
  while (m > 1 && c <= static_cast<double>(m - 1) / M) --m;
  return m;
}

/// Bins, MSE, ECE and OCE in one pass.
inline CalibrationReport calibration_report(std::span<const int> v, std::span<const double> c, int M) {
  detail::check_pairs(v, c);
  if (M < 1) throw std::invalid_argument("calibration: M must be >= 1");
  CalibrationReport r;
  r.m_bins = M;
  r.n = v.size();
  r.bins.assign(M, {});
  std::vector<double> conf_sum(M, 0.0), rel_sum(M, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(c[i] >= 0.0 && c[i] <= 1.0)) throw std::invalid_argument("calibration: confidence outside [0,1]");
    const int b = bin_index(c[i], M) - 1;
    ++r.bins[b].count;
    conf_sum[b] += c[i];
    rel_sum[b] += v[i];
  }
  const double n = static_cast<double>(r.n);
  for (int b = 0; b < M; ++b) {
    auto& bin = r.bins[b];
    if (bin.count == 0) continue;
    bin.conf = conf_sum[b] / static_cast<double>(bin.count);
    bin.rel = rel_sum[b] / static_cast<double>(bin.count);
    const double w = static_cast<double>(bin.count) / n;
    r.ece += w * std::abs(bin.rel - bin.conf);
    r.oce += w * bin.conf * std::max(bin.conf - bin.rel, 0.0);
  }
  r.mse = mse(v, c);
  return r;
}

inline double ece(std::span<const int> v, std::span<const double> c, int M = kMetricBins) {
  return calibration_report(v, c, M).ece;
}

inline double oce(std::span<const int> v, std::span<const double> c, int M = kMetricBins) {
  return calibration_report(v, c, M).oce;
}

/// Confidence of every verified sample, looked up by sample id.
inline std::vector<double> verified_confidences(const VerificationSet& vs, std::span<const double> scc) {
  std::vector<double> out;
  out.reserve(vs.entries.size());
  for (const auto& e : vs.entries) {
    if (e.sample_id >= scc.size()) throw std::out_of_range("verification id " + std::to_string(e.sample_id) + " has no confidence");
    out.push_back(scc[e.sample_id]);
  }
  return out;
}

inline std::vector<int> verified_flags(const VerificationSet& vs) {
  std::vector<int> out;
  out.reserve(vs.entries.size());
  for (const auto& e : vs.entries) out.push_back(e.v);
  return out;
}

inline CalibrationReport evaluate_confidence(const VerificationSet& vs, std::span<const double> scc, int M) {
  auto c = verified_confidences(vs, scc);
  auto v = verified_flags(vs);
  return calibration_report(v, c, M);
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  auto ranks = [](std::span<const double> a) {
    std::vector<std::size_t> idx(a.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return a[i] < a[j]; });
    std::vector<double> r(a.size());
    for (std::size_t s = 0; s < idx.size();) {
      std::size_t e = s;
      while (e + 1 < idx.size() && a[idx[e + 1]] == a[idx[s]]) ++e;
      const double avg = 0.5 * static_cast<double>(s + e) + 1.0;
      for (std::size_t t = s; t <= e; ++t) r[idx[t]] = avg;
      s = e + 1;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Spearman correlation between bin index and reliability over nonempty bins.
inline double reliability_trend(const CalibrationReport& r) {
  std::vector<double> idx, rel;
  for (int b = 0; b < r.m_bins; ++b) {
    if (r.bins[b].count == 0) continue;
    idx.push_back(b + 1);
    rel.push_back(r.bins[b].rel);
  }
  if (idx.size() < 2) return 0.0;
  return spearman(idx, rel);
}

// ---- files ------------------------------------------------------------------

inline std::string reliability_csv(const CalibrationReport& r) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,count,conf,rel\n";
  for (int b = 0; b < r.m_bins; ++b) {
    const auto& bin = r.bins[b];
    out << csv::format_real(static_cast<double>(b) / r.m_bins, 17) << ','
        << csv::format_real(static_cast<double>(b + 1) / r.m_bins, 17) << ',' << bin.count << ','
        << csv::format_real(bin.conf, 17) << ',' << csv::format_real(bin.rel, 17) << '\n';
  }
  return out.str();
}

inline void emit_reliability_csv(const CalibrationReport& r, const std::filesystem::path& path) {
  csv::write_atomic(path, reliability_csv(r));
}

/// Reads a reliability CSV back into bins; scalar metrics are recomputed from
/// the bins (ECE, OCE) and MSE is left at 0.
inline CalibrationReport parse_reliability_csv(const std::filesystem::path& path) {
  auto t = csv::read(path);
  if (t.header != std::vector<std::string>{"bin_lo", "bin_hi", "count", "conf", "rel"})
    throw SchemaError(path.string() + ": expected header bin_lo,bin_hi,count,conf,rel", 1);
  CalibrationReport r;
  r.m_bins = static_cast<int>(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    ReliabilityBin b;
    auto count = csv::parse_int(t.rows[i][2], t.lines[i]);
    if (count < 0) throw SchemaError(path.string() + ": negative count", t.lines[i]);
    b.count = static_cast<std::size_t>(count);
    b.conf = csv::parse_real(t.rows[i][3], t.lines[i]);
    b.rel = csv::parse_real(t.rows[i][4], t.lines[i]);
    r.n += b.count;
    r.bins.push_back(b);
  }
  for (const auto& b : r.bins) {
    if (b.count == 0) continue;
    const double w = static_cast<double>(b.count) / static_cast<double>(r.n);
    r.ece += w * std::abs(b.rel - b.conf);
    r.oce += w * b.conf * std::max(b.conf - b.rel, 0.0);
  }
  return r;
}

struct ProviderMetrics {
  std::string provider;
  double mse = 0.0;
  double ece = 0.0;
  double oce = 0.0;
  std::optional<double> sav_top1;
};

inline std::string metrics_summary_csv(const std::vector<ProviderMetrics>& rows) {
  std::ostringstream out;
  out << "provider,mse,ece,oce,sav_top1\n";
  for (const auto& m : rows) {
    out << m.provider << ',' << csv::format_real(m.mse, 17) << ',' << csv::format_real(m.ece, 17) << ','
        << csv::format_real(m.oce, 17) << ',';
    if (m.sav_top1) out << csv::format_real(*m.sav_top1, 17);
    out << '\n';
  }
  return out.str();
}

// ---- SAV ----------------------------------------------------------------------

/// Second-stage accuracy when the self labels and theta0 come from the vanilla
/// artifacts and only the confidence vector varies.
inline double sav_harness(const SyntheticDataset& ds, const StageOneArtifacts& vanilla,
                          std::span<const double> confidence, const TrainConfig& cfg,
                          const SyntheticDataset& test) {
  if (confidence.size() != ds.samples.size())
    throw std::invalid_argument("sav_harness: confidence length " + std::to_string(confidence.size()) +
                                " does not match dataset size " + std::to_string(ds.samples.size()));
  StageOneArtifacts a = vanilla;
  a.scc.assign(confidence.begin(), confidence.end());
  auto r = finetune(ds, a, cfg);
  return accuracy(r.model, test).top1;
}

}  // namespace scc
