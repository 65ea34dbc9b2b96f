// Synthetic stand-ins for webly crawled data: Gaussian class clusters, label
// corruption models, verification subsets and CSV persistence.
#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "scc/common.hpp"
#include "scc/csv.hpp"

namespace scc {

struct LabeledSample {
  std::size_t id = 0;
  int true_label = 0;
  int web_label = 0;
  std::vector<double> features;

  bool operator==(const LabeledSample&) const = default;
};

enum class NoiseModel { uniform, class_conditional, neighborhood };

inline std::string to_string(NoiseModel m) {
  switch (m) {
    case NoiseModel::uniform: return "uniform";
    case NoiseModel::class_conditional: return "class_conditional";
    case NoiseModel::neighborhood: return "neighborhood";
  }
  return "?";
}

inline NoiseModel parse_noise_model(const std::string& s) {
  if (s == "uniform") return NoiseModel::uniform;
  if (s == "class_conditional" || s == "class-conditional") return NoiseModel::class_conditional;
  if (s == "neighborhood") return NoiseModel::neighborhood;
  throw std::invalid_argument("unknown noise model: " + s);
}

struct SyntheticDataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  std::size_t dimension = 0;
  double noise_rate = 0.0;
  NoiseModel noise_model = NoiseModel::uniform;
  std::uint64_t rng_seed = 0;
  // Number of samples whose web label differs from the true label.
  std::size_t flipped = 0;

  std::size_t size() const { return samples.size(); }

  /// Equality of content: samples, class count and dimension.
  bool same_content(const SyntheticDataset& o) const {
    return samples == o.samples && num_classes == o.num_classes && dimension == o.dimension;
  }
};

struct VerificationEntry {
  std::size_t sample_id = 0;
  int v = 0;
  bool operator==(const VerificationEntry&) const = default;
};

struct VerificationSet {
  std::vector<VerificationEntry> entries;
};

/// Center separation used by generate_clusters when none is given.
inline constexpr double kDefaultSeparation = 3.0;

namespace detail {

// Class centers: separation * (rotated basis vector c) when C <= d, so every
// pair of centers is separation*sqrt(2) apart; random directions otherwise.
inline std::vector<std::vector<double>> class_centers(int num_classes, std::size_t dim,
                                                      double separation, std::uint64_t seed) {
  Rng rng = make_rng(seed, stream::kCenters);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> basis;
  if (static_cast<std::size_t>(num_classes) <= dim) {
    // Gram-Schmidt on a Gaussian matrix gives a random orthonormal frame.
    while (basis.size() < static_cast<std::size_t>(num_classes)) {
      std::vector<double> v(dim);
      for (auto& x : v) x = gauss(rng);
      for (const auto& b : basis) {
        double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
        for (std::size_t k = 0; k < dim; ++k) v[k] -= dot * b[k];
      }
      double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      if (norm < 1e-8) continue;
      for (auto& x : v) x /= norm;
      basis.push_back(std::move(v));
    }
  } else {
    for (int c = 0; c < num_classes; ++c) {
      std::vector<double> v(dim);
      double norm = 0.0;
      do {
        for (auto& x : v) x = gauss(rng);
        norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      } while (norm < 1e-8);
      for (auto& x : v) x /= norm;
      basis.push_back(std::move(v));
    }
  }
  for (auto& b : basis)
    for (auto& x : b) x *= separation;
  return basis;
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// N = num_classes * per_class samples, class-major, with web labels equal to
/// the true labels. Features are rounded to single precision so the 9-digit
/// CSV form round-trips exactly.
inline SyntheticDataset generate_clusters(int num_classes, int per_class, std::size_t dimension,
                                          double spread, std::uint64_t seed,
                                          double separation = kDefaultSeparation) {
  if (num_classes < 2) throw std::invalid_argument("generate_clusters: need at least 2 classes");
  if (per_class < 1) throw std::invalid_argument("generate_clusters: per_class must be positive");
  if (dimension < 2) throw std::invalid_argument("generate_clusters: dimension must be >= 2");
  if (!(spread >= 0.0)) throw std::invalid_argument("generate_clusters: spread must be >= 0");
  if (!(separation > 0.0)) throw std::invalid_argument("generate_clusters: separation must be > 0");

  auto centers = detail::class_centers(num_classes, dimension, separation, seed);
  Rng rng = make_rng(seed, stream::kSamples);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticDataset ds;
  ds.num_classes = num_classes;
  ds.dimension = dimension;
  ds.rng_seed = seed;
  ds.samples.reserve(static_cast<std::size_t>(num_classes) * per_class);
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      LabeledSample s;
      s.id = ds.samples.size();
      s.true_label = c;
      s.web_label = c;
      s.features.resize(dimension);
      for (std::size_t k = 0; k < dimension; ++k) {
        double v = centers[c][k] + spread * gauss(rng);
        s.features[k] = static_cast<double>(static_cast<float>(v));
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

/// Corrupts exactly round(rate * N) web labels, chosen uniformly at random.
/// Web labels of all other samples are reset to the true label, so the
/// result's corruption count does not depend on the input's.
inline SyntheticDataset inject_noise(const SyntheticDataset& ds, NoiseModel model, double rate,
                                     std::uint64_t seed) {
  if (!(rate >= 0.0) || rate >= 1.0)
    throw std::invalid_argument("inject_noise: rate must lie in [0, 1)");
  SyntheticDataset out = ds;
  out.noise_rate = rate;
  out.noise_model = model;
  for (auto& s : out.samples) s.web_label = s.true_label;

  const std::size_t n = out.samples.size();
  const auto flips = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  out.flipped = flips;
  if (flips == 0) return out;
  if (out.num_classes < 2) throw std::invalid_argument("inject_noise: need at least 2 classes");

  Rng rng = make_rng(seed, stream::kNoise);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(flips);
  std::sort(order.begin(), order.end());

  const int C = out.num_classes;
  switch (model) {
    case NoiseModel::uniform: {
      std::uniform_int_distribution<int> pick(0, C - 2);
      for (auto i : order) {
        int t = out.samples[i].true_label;
        int w = pick(rng);
        out.samples[i].web_label = w >= t ? w + 1 : w;
      }
      break;
    }
    case NoiseModel::class_conditional: {
      // A random cyclic order of the classes; each class is confused with its
      // successor in that cycle, which never maps a class onto itself.
      std::vector<int> cycle(C);
      std::iota(cycle.begin(), cycle.end(), 0);
      std::shuffle(cycle.begin(), cycle.end(), rng);
      std::vector<int> target(C);
      for (int k = 0; k < C; ++k) target[cycle[k]] = cycle[(k + 1) % C];
      for (auto i : order) out.samples[i].web_label = target[out.samples[i].true_label];
      break;
    }
    case NoiseModel::neighborhood: {
      for (auto i : order) {
        const auto& si = ds.samples[i];
        double best = std::numeric_limits<double>::infinity();
        int label = -1;
        for (const auto& sj : ds.samples) {
          if (sj.true_label == si.true_label) continue;
          double d = detail::squared_distance(si.features, sj.features);
          if (d < best) {
            best = d;
            label = sj.true_label;
          }
        }
        if (label < 0) throw std::invalid_argument("inject_noise: no sample of another class");
        out.samples[i].web_label = label;
      }
      break;
    }
  }
  return out;
}

/// Samples `per_class` entries without replacement from each web-label class
/// (from `classes` randomly chosen classes, or all when classes <= 0).
inline VerificationSet build_verification_set(const SyntheticDataset& ds, int per_class,
                                              std::uint64_t seed, int classes = 0) {
  if (per_class < 1) throw std::invalid_argument("build_verification_set: per_class must be positive");
  const int C = ds.num_classes;
  if (classes > C) throw std::invalid_argument("build_verification_set: more classes than exist");
  Rng rng = make_rng(seed, stream::kVerify);

  std::vector<int> chosen(C);
  std::iota(chosen.begin(), chosen.end(), 0);
  if (classes > 0) {
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(classes);
    std::sort(chosen.begin(), chosen.end());
  }

  std::vector<std::vector<std::size_t>> members(C);
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    members[ds.samples[i].web_label].push_back(i);

  VerificationSet vs;
  for (int c : chosen) {
    auto& pool = members[c];
    if (pool.size() < static_cast<std::size_t>(per_class))
      throw InsufficientSamples("class " + std::to_string(c) + " has " +
                                std::to_string(pool.size()) + " samples, need " +
                                std::to_string(per_class));
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> pick(pool.begin(), pool.begin() + per_class);
    std::sort(pick.begin(), pick.end());
    for (auto i : pick) {
      const auto& s = ds.samples[i];
      vs.entries.push_back({s.id, s.web_label == s.true_label ? 1 : 0});
    }
  }
  return vs;
}

/// Moves `test_per_class` random samples of every true class into a held-out
/// split. Both splits get dense ids in their original relative order.
inline std::pair<SyntheticDataset, SyntheticDataset> split_holdout(const SyntheticDataset& ds,
                                                                   int test_per_class,
                                                                   std::uint64_t seed) {
  if (test_per_class < 0) throw std::invalid_argument("split_holdout: negative test size");
  Rng rng = make_rng(seed, stream::kSplit);
  std::vector<std::vector<std::size_t>> members(ds.num_classes);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) members[ds.samples[i].true_label].push_back(i);
  std::vector<char> is_test(ds.samples.size(), 0);
  for (int c = 0; c < ds.num_classes; ++c) {
    auto& pool = members[c];
    if (pool.size() < static_cast<std::size_t>(test_per_class))
      throw InsufficientSamples("split_holdout: class " + std::to_string(c) + " too small");
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int k = 0; k < test_per_class; ++k) is_test[pool[k]] = 1;
  }
  SyntheticDataset train = ds, test = ds;
  train.samples.clear();
  test.samples.clear();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    auto& dst = is_test[i] ? test : train;
    LabeledSample s = ds.samples[i];
    s.id = dst.samples.size();
    dst.samples.push_back(std::move(s));
  }
  auto count_flips = [](SyntheticDataset& d) {
    d.flipped = 0;
    for (const auto& s : d.samples) d.flipped += s.web_label != s.true_label;
  };
  count_flips(train);
  count_flips(test);
  return {std::move(train), std::move(test)};
}

// ---- persistence ----------------------------------------------------------

inline std::string dataset_to_csv(const SyntheticDataset& ds) {
  std::ostringstream out;
  out << "id,true_label,web_label";
  for (std::size_t k = 0; k < ds.dimension; ++k) out << ",f" << k;
  out << '\n';
  for (const auto& s : ds.samples) {
    out << s.id << ',' << s.true_label << ',' << s.web_label;
    for (double f : s.features) out << ',' << csv::format_real(f, 9);
    out << '\n';
  }
  return out.str();
}

inline void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& path) {
  csv::write_atomic(path, dataset_to_csv(ds));
}

/// Loads a dataset CSV. The class count is one past the largest label seen;
/// noise_rate is recovered from the observed corruption count.
inline SyntheticDataset load_dataset(const std::filesystem::path& path) {
  auto table = csv::read(path);
  const auto& h = table.header;
  if (h.size() < 4 || h[0] != "id" || h[1] != "true_label" || h[2] != "web_label")
    throw SchemaError(path.string() + ": expected header id,true_label,web_label,f0,...", 1);
  const std::size_t dim = h.size() - 3;
  for (std::size_t k = 0; k < dim; ++k)
    if (h[3 + k] != "f" + std::to_string(k))
      throw SchemaError(path.string() + ": bad feature column '" + h[3 + k] + "'", 1);

  SyntheticDataset ds;
  ds.dimension = dim;
  int max_label = -1;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.lines[r];
    LabeledSample s;
    auto id = csv::parse_int(row[0], line);
    if (id != static_cast<long long>(r))
      throw SchemaError(path.string() + ": ids must be dense and ordered", line);
    s.id = static_cast<std::size_t>(id);
    auto t = csv::parse_int(row[1], line);
    auto w = csv::parse_int(row[2], line);
    if (t < 0 || w < 0) throw SchemaError(path.string() + ": negative label", line);
    s.true_label = static_cast<int>(t);
    s.web_label = static_cast<int>(w);
    max_label = std::max({max_label, s.true_label, s.web_label});
    s.features.resize(dim);
    // Nine significant digits carry single precision; snapping back to float
    // restores the generated values exactly.
    for (std::size_t k = 0; k < dim; ++k)
      s.features[k] = static_cast<double>(static_cast<float>(csv::parse_real(row[3 + k], line)));
    ds.flipped += s.true_label != s.web_label;
    ds.samples.push_back(std::move(s));
  }
  ds.num_classes = max_label + 1;
  ds.noise_rate = ds.samples.empty() ? 0.0 : static_cast<double>(ds.flipped) / ds.samples.size();
  return ds;
}

inline void save_verification(const VerificationSet& vs, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "id,v\n";
  for (const auto& e : vs.entries) out << e.sample_id << ',' << e.v << '\n';
  csv::write_atomic(path, out.str());
}

inline VerificationSet load_verification(const std::filesystem::path& path) {
  auto table = csv::read(path);
  if (table.header != std::vector<std::string>{"id", "v"})
    throw SchemaError(path.string() + ": expected header id,v", 1);
  VerificationSet vs;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    auto id = csv::parse_int(table.rows[r][0], table.lines[r]);
    auto v = csv::parse_int(table.rows[r][1], table.lines[r]);
    if (id < 0 || (v != 0 && v != 1))
      throw SchemaError(path.string() + ": bad verification entry", table.lines[r]);
    vs.entries.push_back({static_cast<std::size_t>(id), static_cast<int>(v)});
  }
  return vs;
}

}  // namespace scc
