// Optimization loop and the two-stage procedure: pretraining on web labels,
// extraction of self labels and confidences, and confidence-balanced
// finetuning.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scc/accuracy.hpp"
#include "scc/common.hpp"
#include "scc/dataset.hpp"
#include "scc/netcore.hpp"

namespace scc {

enum class Regularizer { vanilla, label_smoothing, entropy_reg, mc_dropout, mixup, ensemble };

inline std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::vanilla: return "vanilla";
    case Regularizer::label_smoothing: return "label-smoothing";
    case Regularizer::entropy_reg: return "entropy";
    case Regularizer::mc_dropout: return "mc-dropout";
    case Regularizer::mixup: return "mixup";
    case Regularizer::ensemble: return "ensemble";
  }
  return "?";
}

inline Regularizer parse_regularizer(const std::string& s) {
  if (s == "vanilla") return Regularizer::vanilla;
  if (s == "label-smoothing" || s == "label_smoothing") return Regularizer::label_smoothing;
  if (s == "entropy" || s == "entropy_reg" || s == "entropy-reg") return Regularizer::entropy_reg;
  if (s == "mc-dropout" || s == "mc_dropout") return Regularizer::mc_dropout;
  if (s == "mixup") return Regularizer::mixup;
  if (s == "ensemble") return Regularizer::ensemble;
  throw std::invalid_argument("unknown regularizer: " + s);
}

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double initial_lr = 0.1;
  int warmup_epochs = 10;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  Regularizer regularizer = Regularizer::vanilla;
  double mixup_alpha = 0.2;
  int ensemble_size = 5;
  double dropout_rate = 0.5;
  bool class_reweighting = true;
  std::uint64_t seed = 1;

  std::size_t hidden = 256;
  double label_smoothing = 0.1;
  double entropy_weight = 0.1;
  int mc_passes = 50;
  double consistency_weight = 1.0;
  double jitter_sigma = 0.5;

  /// Stage-2 defaults: half the pretraining learning rate.
  static TrainConfig finetune_defaults() {
    TrainConfig c;
    c.initial_lr = 0.05;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs) fail("need 0 <= warmup_epochs < epochs");
    if (!(initial_lr > 0.0)) fail("initial_lr must be > 0");
    if (momentum < 0.0 || weight_decay < 0.0) fail("momentum and weight_decay must be >= 0");
    if (regularizer == Regularizer::mixup && !(mixup_alpha > 0.0)) fail("mixup_alpha must be > 0");
    if (ensemble_size < 1) fail("ensemble_size must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0,1)");
    if (hidden < 1) fail("hidden must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) fail("label_smoothing must be in [0,1)");
    if (entropy_weight < 0.0 || consistency_weight < 0.0 || jitter_sigma < 0.0)
      fail("regularizer weights must be >= 0");
    if (mc_passes < 0) fail("mc_passes must be >= 0");
  }
};

/// Linear warmup to initial_lr over warmup_epochs, then cosine decay.
inline double lr_at(const TrainConfig& cfg, int epoch) {
  const int W = cfg.warmup_epochs, L = cfg.epochs;
  if (epoch < W) return cfg.initial_lr * static_cast<double>(epoch + 1) / static_cast<double>(W);
  return 0.5 * cfg.initial_lr *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch - W) / static_cast<double>(L - W)));
}

struct SgdState {
  std::vector<double> velocity;
};

/// v <- momentum * v + g + wd * w (wd skipped for biases); w <- w - lr * v.
inline void sgd_step(MlpModel& model, const Gradients& grads, double lr, double momentum,
                     double weight_decay, SgdState& state) {
  const std::size_t n = model.params.size();
  if (grads.values.size() != n) throw std::invalid_argument("sgd_step: gradient shape mismatch");
  if (state.velocity.empty()) state.velocity.assign(n, 0.0);
  if (state.velocity.size() != n) throw std::invalid_argument("sgd_step: velocity shape mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    double g = grads.values[i];
    if (weight_decay != 0.0 && !model.is_bias(i)) g += weight_decay * model.params[i];
    state.velocity[i] = momentum * state.velocity[i] + g;
    model.params[i] -= lr * state.velocity[i];
  }
}

/// Inverse web-label frequency normalized to mean one: (N/C) / count_c.
inline std::vector<double> class_weights(const SyntheticDataset& ds) {
  const int C = ds.num_classes;
  std::vector<std::size_t> counts(C, 0);
  for (const auto& s : ds.samples) ++counts[s.web_label];
  std::vector<double> w(C);
  const double per_class = static_cast<double>(ds.samples.size()) / C;
  for (int c = 0; c < C; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("class_weights: class " + std::to_string(c) + " is empty");
    w[c] = per_class / static_cast<double>(counts[c]);
  }
  return w;
}

// ---- mixup ----------------------------------------------------------------

/// One training example as seen by the loss: input, web target, optional
/// self-label target, confidence and sample weight.
struct MixItem {
  std::vector<double> x;
  std::vector<double> web_target;
  std::vector<double> self_target;  // empty in stage 1
  double c = 1.0;
  double weight = 1.0;
};

inline double sample_beta(double alpha, Rng& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  for (;;) {
    double a = g(rng), b = g(rng);
    if (a + b > 0.0) return a / (a + b);
  }
}

/// Mixes item i with item partner[i] using weight lambdas[i] on item i.
inline std::vector<MixItem> mix_batch(const std::vector<MixItem>& batch,
                                      std::span<const std::size_t> partner,
                                      std::span<const double> lambdas) {
  if (partner.size() != batch.size() || lambdas.size() != batch.size())
    throw std::invalid_argument("mix_batch: size mismatch");
  auto blend = [](const std::vector<double>& a, const std::vector<double>& b, double lam) {
    std::vector<double> out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = lam * a[k] + (1.0 - lam) * b[k];
    return out;
  };
  std::vector<MixItem> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& a = batch[i];
    const auto& b = batch[partner[i]];
    const double lam = lambdas[i];
    MixItem m;
    m.x = blend(a.x, b.x, lam);
    m.web_target = blend(a.web_target, b.web_target, lam);
    if (!a.self_target.empty()) m.self_target = blend(a.self_target, b.self_target, lam);
    m.c = lam * a.c + (1.0 - lam) * b.c;
    m.weight = lam * a.weight + (1.0 - lam) * b.weight;
    out.push_back(std::move(m));
  }
  return out;
}

/// Pairs every item with a random permutation partner, lambda ~ Beta(alpha, alpha).
inline std::vector<MixItem> mixup_batch(const std::vector<MixItem>& batch, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("mixup_batch: alpha must be > 0");
  std::vector<std::size_t> partner(batch.size());
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  std::shuffle(partner.begin(), partner.end(), rng);
  std::vector<double> lambdas(batch.size());
  for (auto& l : lambdas) l = sample_beta(alpha, rng);
  return mix_batch(batch, partner, lambdas);
}

// ---- training loop --------------------------------------------------------

struct TrainLogRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double clean_test_acc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  MlpModel model;
  std::vector<TrainLogRow> log;
};

/// Snapshot handed to an optional observer before each parameter update.
struct BatchRecord {
  int epoch;
  std::size_t batch;
  const MlpModel& model;
  std::span<const std::size_t> indices;
  double loss;  // sum of weight * loss over the batch, divided by batch size
};
using BatchObserver = std::function<void(const BatchRecord&)>;

/// What the loss is fit to.
struct Objective {
  enum class Kind { web, combined, consistency } kind = Kind::web;
  // combined: frozen self labels (N x C) and per-sample confidence
  const Matrix* self_labels = nullptr;
  std::span<const double> confidence;
};

struct TrainOptions {
  const SyntheticDataset* test = nullptr;
  BatchObserver observer;
};

namespace detail {

inline LossSpec make_spec(const TrainConfig& cfg, const Objective& obj, const MixItem& item,
                          int web_label, bool mixed, Rng& jitter) {
  switch (obj.kind) {
    case Objective::Kind::combined:
      if (mixed) {
        // BCE is affine in its target, so c*BCE(y) + (1-c)*BCE(q) = BCE(c*y + (1-c)*q).
        std::vector<double> t(item.web_target.size());
        for (std::size_t j = 0; j < t.size(); ++j)
          t[j] = item.c * item.web_target[j] + (1.0 - item.c) * item.self_target[j];
        return SelfLoss{std::move(t)};
      }
      return CombinedLoss{web_label, item.self_target, item.c};
    case Objective::Kind::consistency: {
      std::normal_distribution<double> g(0.0, 1.0);
      std::vector<double> a = item.x, b = item.x;
      for (auto& v : a) v += cfg.jitter_sigma * g(jitter);
      for (auto& v : b) v += cfg.jitter_sigma * g(jitter);
      return ConsistencyLoss{web_label, std::move(a), std::move(b), cfg.consistency_weight};
    }
    case Objective::Kind::web:
      break;
  }
  if (mixed) return SelfLoss{item.web_target};
  switch (cfg.regularizer) {
    case Regularizer::label_smoothing: return SmoothedLoss{web_label, cfg.label_smoothing};
    case Regularizer::entropy_reg: return EntropyRegLoss{web_label, cfg.entropy_weight};
    default: return WebLoss{web_label};
  }
}

}  // namespace detail

/// Trains `init` on ds for cfg.epochs. Batches follow a per-epoch shuffle of
/// the seed; gradients are summed in batch order, so runs are bit-identical
/// for a fixed (config, dataset).
inline TrainResult train_from(MlpModel init, const SyntheticDataset& ds, const TrainConfig& cfg,
                              const Objective& obj, const TrainOptions& opts = {}) {
  cfg.validate();
  if (ds.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (ds.dimension != init.input_dim || static_cast<std::size_t>(ds.num_classes) != init.num_classes)
    throw std::invalid_argument("train: model shape does not match dataset");
  const std::size_t N = ds.samples.size();
  const std::size_t C = init.num_classes;
  if (obj.kind == Objective::Kind::combined) {
    if (!obj.self_labels || obj.self_labels->rows != N || obj.self_labels->cols != C)
      throw std::invalid_argument("train: self labels do not match dataset");
    if (obj.confidence.size() != N) throw std::invalid_argument("train: confidence length mismatch");
  }

  std::vector<double> weights(ds.num_classes, 1.0);
  if (cfg.class_reweighting) weights = class_weights(ds);

  const bool use_mixup = cfg.regularizer == Regularizer::mixup;
  const Mode mode = init.dropout_rate > 0.0 ? Mode::train : Mode::eval;

  Rng shuffle_rng = make_rng(cfg.seed, stream::kShuffle);
  Rng dropout_rng = make_rng(cfg.seed, stream::kDropout);
  Rng mixup_rng = make_rng(cfg.seed, stream::kMixup);
  Rng jitter_rng = make_rng(cfg.seed, stream::kJitter);

  TrainResult result{std::move(init), {}};
  MlpModel& model = result.model;
  SgdState sgd;
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto B = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < N; start += B, ++batch_no) {
      const std::size_t end = std::min(N, start + B);
      std::span<const std::size_t> idx(order.data() + start, end - start);

      std::vector<MixItem> items;
      items.reserve(idx.size());
      for (auto i : idx) {
        const auto& s = ds.samples[i];
        MixItem it;
        it.x = s.features;
        it.web_target.assign(C, 0.0);
        it.web_target[s.web_label] = 1.0;
        if (obj.kind == Objective::Kind::combined) {
          auto row = obj.self_labels->row(i);
          it.self_target.assign(row.begin(), row.end());
          it.c = obj.confidence[i];
        }
        it.weight = weights[s.web_label];
        items.push_back(std::move(it));
      }
      if (use_mixup) items = mixup_batch(items, cfg.mixup_alpha, mixup_rng);

      Gradients g(model.params.size());
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < items.size(); ++k) {
        const auto& it = items[k];
        auto spec = detail::make_spec(cfg, obj, it, ds.samples[idx[k]].web_label, use_mixup, jitter_rng);
        batch_loss += it.weight * accumulate_gradient(model, it.x, spec, g, it.weight, mode, &dropout_rng);
      }
      const double inv = 1.0 / static_cast<double>(items.size());
      for (auto& v : g.values) v *= inv;
      batch_loss *= inv;
      if (!std::isfinite(batch_loss))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch));
      if (opts.observer) opts.observer(BatchRecord{epoch, batch_no, model, idx, batch_loss});
      epoch_loss += batch_loss * static_cast<double>(items.size());
      sgd_step(model, g, lr, cfg.momentum, cfg.weight_decay, sgd);
    }
    TrainLogRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = epoch_loss / static_cast<double>(N);
    if (opts.test) row.clean_test_acc = accuracy(model, *opts.test).top1;
    result.log.push_back(row);
  }
  return result;
}

struct PretrainResult {
  std::vector<MlpModel> models;  // one per ensemble member, otherwise a single model
  std::vector<std::vector<TrainLogRow>> logs;
};

/// Stage 1: train from random initialization on web labels with the selected
/// regularizer. The ensemble trains ensemble_size vanilla members with seeds
/// seed, seed+1, ...
inline PretrainResult pretrain(const SyntheticDataset& ds, const TrainConfig& cfg,
                               const TrainOptions& opts = {}) {
  cfg.validate();
  PretrainResult out;
  const int members = cfg.regularizer == Regularizer::ensemble ? cfg.ensemble_size : 1;
  for (int e = 0; e < members; ++e) {
    TrainConfig member = cfg;
    member.seed = cfg.seed + static_cast<std::uint64_t>(e);
    if (cfg.regularizer == Regularizer::ensemble) member.regularizer = Regularizer::vanilla;
    const double dropout = cfg.regularizer == Regularizer::mc_dropout ? cfg.dropout_rate : 0.0;
    auto init = MlpModel::random(ds.dimension, cfg.hidden, ds.num_classes, member.seed, dropout);
    auto r = train_from(std::move(init), ds, member, Objective{}, opts);
    out.models.push_back(std::move(r.model));
    out.logs.push_back(std::move(r.log));
  }
  return out;
}

/// Everything stage 2 consumes from the pretrained model.
struct StageOneArtifacts {
  MlpModel model_theta0;
  Matrix self_labels;  // N x C
  Matrix features;     // N x hidden
  std::vector<double> scc;
};

/// Self labels, hidden features and SCC for every sample. Ensembles average
/// member predictions; a dropout model averages mc_passes stochastic passes.
/// Features and theta0 come from the first model.
inline StageOneArtifacts extract(const SyntheticDataset& ds, const std::vector<MlpModel>& models,
                                 const TrainConfig& cfg) {
  if (models.empty()) throw std::invalid_argument("extract: no model");
  for (const auto& m : models)
    if (m.input_dim != ds.dimension || m.num_classes != static_cast<std::size_t>(ds.num_classes))
      throw std::invalid_argument("extract: model shape does not match dataset");
  const std::size_t N = ds.samples.size(), C = ds.num_classes;
  const MlpModel& first = models.front();
  StageOneArtifacts a{first, Matrix(N, C), Matrix(N, first.hidden_dim), std::vector<double>(N)};

  const bool mc = models.size() == 1 && first.dropout_rate > 0.0 && cfg.mc_passes > 0;
  Rng rng = make_rng(cfg.seed, stream::kExtract);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& x = ds.samples[i].features;
    auto row = a.self_labels.row(i);
    if (mc) {
      for (int pass = 0; pass < cfg.mc_passes; ++pass) {
        auto p = forward(first, x, Mode::train, &rng);
        for (std::size_t j = 0; j < C; ++j) row[j] += p.probs[j];
      }
      for (auto& v : row) v /= static_cast<double>(cfg.mc_passes);
    } else if (models.size() == 1) {
      auto p = forward(first, x);
      std::copy(p.probs.begin(), p.probs.end(), row.begin());
    } else {
      for (const auto& m : models) {
        auto p = forward(m, x);
        for (std::size_t j = 0; j < C; ++j) row[j] += p.probs[j];
      }
      for (auto& v : row) v /= static_cast<double>(models.size());
    }
    auto h = hidden_features(first, x);
    std::copy(h.begin(), h.end(), a.features.row(i).begin());
    a.scc[i] = row[ds.samples[i].web_label];
  }
  return a;
}

/// Stage 2: start from theta0 and minimize c_i * L_w + (1 - c_i) * L_s with
/// the frozen self labels and per-sample confidences of `artifacts`.
inline TrainResult finetune(const SyntheticDataset& ds, const StageOneArtifacts& artifacts,
                            const TrainConfig& cfg, const TrainOptions& opts = {}) {
  if (artifacts.scc.size() != ds.samples.size())
    throw std::invalid_argument("finetune: artifacts do not match dataset");
  for (double c : artifacts.scc)
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("finetune: confidence outside [0,1]");
  Objective obj{Objective::Kind::combined, &artifacts.self_labels, artifacts.scc};
  return train_from(artifacts.model_theta0, ds, cfg, obj, opts);
}

/// finetune with every c_i replaced by one constant.
inline TrainResult finetune_constant(const SyntheticDataset& ds, const StageOneArtifacts& artifacts,
                                     double c, const TrainConfig& cfg, const TrainOptions& opts = {}) {
  if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("finetune_constant: c outside [0,1]");
  StageOneArtifacts a = artifacts;
  std::fill(a.scc.begin(), a.scc.end(), c);
  return finetune(ds, a, cfg, opts);
}

/// Single-stage baseline: web loss plus consistency between two
/// Gaussian-jittered views (sigma = cfg.jitter_sigma).
inline TrainResult train_consistency_baseline(const SyntheticDataset& ds, const TrainConfig& cfg,
                                              const TrainOptions& opts = {}) {
  TrainConfig base = cfg;
  base.regularizer = Regularizer::vanilla;
  auto init = MlpModel::random(ds.dimension, base.hidden, ds.num_classes, base.seed);
  return train_from(std::move(init), ds, base, Objective{Objective::Kind::consistency, nullptr, {}}, opts);
}

}  // namespace scc
