#pragma once

#include "scc/dataset.hpp"
#include "scc/netcore.hpp"

namespace scc {

struct Accuracy {
  double top1 = 0.0;
  double top5 = 0.0;
};

/// Position of `label` when classes are ordered by descending probability,
/// ties going to the lower class index.
inline std::size_t label_rank(std::span<const double> probs, int label) {
  const double p = probs[label];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > p || (probs[j] == p && static_cast<int>(j) < label)) ++rank;
  }
  return rank;
}

/// Top-1 / top-5 agreement of the eval-mode prediction with the true labels.
inline Accuracy accuracy(const MlpModel& model, const SyntheticDataset& test) {
  Accuracy a;
  if (test.samples.empty()) return a;
  std::size_t hit1 = 0, hit5 = 0;
  for (const auto& s : test.samples) {
    auto pred = forward(model, s.features);
    auto r = label_rank(pred.probs, s.true_label);
    hit1 += r < 1;
    hit5 += r < 5;
  }
  const double n = static_cast<double>(test.samples.size());
  a.top1 = static_cast<double>(hit1) / n;
  a.top5 = static_cast<double>(hit5) / n;
  return a;
}

}  // namespace scc
