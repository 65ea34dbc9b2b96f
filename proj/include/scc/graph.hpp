// Cosine k-NN graph over stage-1 features and one-hop graph-based
// aggregation of self labels:
//   P_hat = D^{-1/2} (lambda I + A) D^{-1/2} P,  D(i,i) = lambda + sum_j A(i,j).
#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "scc/common.hpp"
#include "scc/csv.hpp"
#include "scc/dataset.hpp"
#include "scc/trainer.hpp"

namespace scc {

inline constexpr int kDefaultGraphK = 10;
inline constexpr double kDefaultGraphLambda = 0.5;

struct Edge {
  std::size_t neighbor;
  double weight;
  bool operator==(const Edge&) const = default;
};

/// Undirected weighted graph; every edge is stored under both endpoints and
/// each adjacency list is sorted by neighbor index.
class KnnGraph {
 public:
  KnnGraph(std::size_t n, int k, double lambda) : n_(n), k_(k), lambda_(lambda), adj_(n) {
    if (!(lambda > 0.0)) throw std::invalid_argument("KnnGraph: lambda must be > 0");
  }

  /// Builds from undirected (a, b, weight) triples; a == b is rejected.
  static KnnGraph from_edges(std::size_t n, double lambda,
                             const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges,
                             int k = 0) {
    KnnGraph g(n, k, lambda);
    std::map<std::pair<std::size_t, std::size_t>, double> uniq;
    for (auto [a, b, w] : edges) {
      if (a == b || a >= n || b >= n) throw std::invalid_argument("KnnGraph: bad edge");
      if (!(w >= 0.0)) throw std::invalid_argument("KnnGraph: negative edge weight");
      uniq[{std::min(a, b), std::max(a, b)}] = w;
    }
    for (auto [key, w] : uniq) {
      g.adj_[key.first].push_back({key.second, w});
      g.adj_[key.second].push_back({key.first, w});
    }
    for (auto& list : g.adj_)
      std::sort(list.begin(), list.end(), [](const Edge& x, const Edge& y) { return x.neighbor < y.neighbor; });
    return g;
  }

  std::size_t size() const { return n_; }
  int k() const { return k_; }
  double lambda() const { return lambda_; }
  const std::vector<Edge>& neighbors(std::size_t i) const { return adj_[i]; }

  double degree(std::size_t i) const {
    double d = lambda_;
    for (const auto& e : adj_[i]) d += e.weight;
    return d;
  }

  std::size_t edge_count() const {
    std::size_t s = 0;
    for (const auto& l : adj_) s += l.size();
    return s / 2;
  }

  /// Debug dump: `src,dst,weight` with src < dst.
  std::string to_csv() const {
    std::ostringstream out;
    out << "src,dst,weight\n";
    for (std::size_t i = 0; i < n_; ++i)
      for (const auto& e : adj_[i])
        if (i < e.neighbor) out << i << ',' << e.neighbor << ',' << csv::format_real(e.weight, 17) << '\n';
    return out.str();
  }

 private:
  std::size_t n_;
  int k_;
  double lambda_;
  std::vector<std::vector<Edge>> adj_;
};

/// What build_knn does with an all-zero feature row, whose cosine similarity
/// is undefined.
enum class ZeroNormRows { reject, isolate };

/// Cosine k-NN graph. Each node selects its k most similar other nodes (ties
/// to the lower index); selections are symmetrized by union and negative
/// similarities stored as 0. k = 0 yields the edgeless graph. Isolated
/// zero-norm rows neither select nor get selected.
inline KnnGraph build_knn(const Matrix& features, int k, double lambda = kDefaultGraphLambda,
                          ZeroNormRows zero_rows = ZeroNormRows::reject) {
  const std::size_t n = features.rows, dim = features.cols;
  if (k < 0) throw std::invalid_argument("build_knn: k must be >= 0");
  if (static_cast<std::size_t>(k) >= n) throw std::invalid_argument("build_knn: k must be below the node count");
  std::vector<double> norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = features.row(i);
    double s = 0.0;
    for (double v : r) s += v * v;
    norm[i] = std::sqrt(s);
    if (!(norm[i] > 0.0) && zero_rows == ZeroNormRows::reject)
      throw std::invalid_argument("build_knn: feature row " + std::to_string(i) + " has zero norm");
  }
  auto usable = [&](std::size_t i) { return norm[i] > 0.0; };
  auto cosine = [&](std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    auto ra = features.row(a), rb = features.row(b);
    double dot = 0.0;
    for (std::size_t t = 0; t < dim; ++t) dot += ra[t] * rb[t];
    return dot / (norm[a] * norm[b]);
  };

  std::vector<std::vector<std::size_t>> chosen(n);
  if (k > 0) {
    parallel_for(n, [&](std::size_t i) {
      if (!usable(i)) return;
      std::vector<std::pair<double, std::size_t>> cand;
      cand.reserve(n - 1);
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && usable(j)) cand.emplace_back(cosine(i, j), j);
      auto better = [](const auto& x, const auto& y) {
        return x.first > y.first || (x.first == y.first && x.second < y.second);
      };
      const auto take = std::min<std::size_t>(k, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + take, cand.end(), better);
      for (std::size_t t = 0; t < take; ++t) chosen[i].push_back(cand[t].second);
    });
  }
  std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : chosen[i]) edges.emplace_back(i, j, std::max(0.0, cosine(i, j)));
  return KnnGraph::from_edges(n, lambda, edges, k);
}

/// Applies the normalized one-hop smoothing to the rows of P.
inline Matrix gba_smooth(const KnnGraph& g, const Matrix& P) {
  if (P.rows != g.size()) throw std::invalid_argument("gba_smooth: P has " + std::to_string(P.rows) +
                                                      " rows, graph has " + std::to_string(g.size()) + " nodes");
  const std::size_t n = g.size(), C = P.cols;
  std::vector<double> deg(n), inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    deg[i] = g.degree(i);
    inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
  }
  Matrix out(n, C);
  parallel_for(n, [&](std::size_t i) {
    auto dst = out.row(i);
    const double self = g.lambda() / deg[i];
    auto src = P.row(i);
    for (std::size_t c = 0; c < C; ++c) dst[c] = self * src[c];
    for (const auto& e : g.neighbors(i)) {
      const double w = e.weight * inv_sqrt[i] * inv_sqrt[e.neighbor];
      auto pj = P.row(e.neighbor);
      for (std::size_t c = 0; c < C; ++c) dst[c] += w * pj[c];
    }
  });
  return out;
}

/// Smoothed copy of the artifacts: self labels become P_hat (clamped to
/// [0,1]) and SCC is re-read at each web label. Samples whose hidden features
/// are all zero stay isolated and keep their own self labels.
inline StageOneArtifacts smooth_artifacts(const StageOneArtifacts& artifacts, const SyntheticDataset& ds,
                                          int k = kDefaultGraphK, double lambda = kDefaultGraphLambda) {
  if (artifacts.features.rows != ds.samples.size() || artifacts.self_labels.rows != ds.samples.size())
    throw std::invalid_argument("smooth_artifacts: artifacts do not match dataset");
  auto graph = build_knn(artifacts.features, k, lambda, ZeroNormRows::isolate);
  StageOneArtifacts out = artifacts;
  out.self_labels = gba_smooth(graph, artifacts.self_labels);
  for (auto& v : out.self_labels.data) v = clamp01(v);
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    out.scc[i] = out.self_labels(i, ds.samples[i].web_label);
  return out;
}

}  // namespace scc
