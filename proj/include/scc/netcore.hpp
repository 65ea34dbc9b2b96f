// One-hidden-layer perceptron with independent sigmoid heads, the BCE-family
// losses used by both training stages, and their analytic gradients.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "scc/common.hpp"
#include "scc/csv.hpp"

namespace scc {

/// Clamp applied to probabilities inside every log term.
inline constexpr double kProbEps = 1e-7;

enum class Mode { train, eval };

/// Parameters live in one flat buffer laid out as [W1 | b1 | W2 | b2], with
/// W1 (hidden x input) and W2 (classes x hidden) row-major.
struct MlpModel {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  double dropout_rate = 0.0;
  std::vector<double> params;

  static MlpModel zeros(std::size_t d, std::size_t h, std::size_t c, double dropout = 0.0) {
    if (d == 0 || h == 0 || c == 0) throw std::invalid_argument("MlpModel: zero layer size");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("MlpModel: dropout in [0,1)");
    MlpModel m;
    m.input_dim = d;
    m.hidden_dim = h;
    m.num_classes = c;
    m.dropout_rate = dropout;
    m.params.assign(h * d + h + c * h + c, 0.0);
    return m;
  }

  /// He-normal hidden weights, Glorot-normal output weights, zero biases.
  static MlpModel random(std::size_t d, std::size_t h, std::size_t c, std::uint64_t seed,
                         double dropout = 0.0) {
    MlpModel m = zeros(d, h, c, dropout);
    Rng rng = make_rng(seed, stream::kInit);
    std::normal_distribution<double> g1(0.0, std::sqrt(2.0 / static_cast<double>(d)));
    std::normal_distribution<double> g2(0.0, std::sqrt(2.0 / static_cast<double>(h + c)));
    for (auto& w : m.w1()) w = g1(rng);
    for (auto& w : m.w2()) w = g2(rng);
    return m;
  }

  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return hidden_dim * input_dim; }
  std::size_t w2_offset() const { return b1_offset() + hidden_dim; }
  std::size_t b2_offset() const { return w2_offset() + num_classes * hidden_dim; }

  std::span<double> w1() { return {params.data() + w1_offset(), hidden_dim * input_dim}; }
  std::span<double> b1() { return {params.data() + b1_offset(), hidden_dim}; }
  std::span<double> w2() { return {params.data() + w2_offset(), num_classes * hidden_dim}; }
  std::span<double> b2() { return {params.data() + b2_offset(), num_classes}; }
  std::span<const double> w1() const { return {params.data() + w1_offset(), hidden_dim * input_dim}; }
  std::span<const double> b1() const { return {params.data() + b1_offset(), hidden_dim}; }
  std::span<const double> w2() const { return {params.data() + w2_offset(), num_classes * hidden_dim}; }
  std::span<const double> b2() const { return {params.data() + b2_offset(), num_classes}; }

  bool is_bias(std::size_t i) const {
    return (i >= b1_offset() && i < w2_offset()) || i >= b2_offset();
  }

  bool operator==(const MlpModel&) const = default;
};

/// Gradient buffer with the same layout as MlpModel::params.
struct Gradients {
  std::vector<double> values;

  explicit Gradients(std::size_t n = 0) : values(n, 0.0) {}
  Gradients& operator+=(const Gradients& o) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
};

struct Prediction {
  std::vector<double> probs;
};

/// Intermediate values of one forward pass, kept for backward.
struct ForwardTrace {
  std::vector<double> input;
  std::vector<double> hidden_pre;  // before rectifier
  std::vector<double> hidden;      // after rectifier and dropout
  std::vector<double> mask;        // dropout scale per hidden unit (0 or 1/(1-p)); empty if none
  std::vector<double> logits;
  std::vector<double> probs;
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

inline ForwardTrace forward_trace(const MlpModel& m, std::span<const double> x, Mode mode,
                                  Rng* rng = nullptr) {
  if (x.size() != m.input_dim)
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                " features, model expects " + std::to_string(m.input_dim));
  const std::size_t d = m.input_dim, h = m.hidden_dim, c = m.num_classes;
  ForwardTrace t;
  t.input.assign(x.begin(), x.end());
  t.hidden_pre.resize(h);
  t.hidden.resize(h);
  auto w1 = m.w1();
  auto b1 = m.b1();
  for (std::size_t j = 0; j < h; ++j) {
    double s = b1[j];
    const double* row = w1.data() + j * d;
    for (std::size_t k = 0; k < d; ++k) s += row[k] * x[k];
    t.hidden_pre[j] = s;
    t.hidden[j] = s > 0.0 ? s : 0.0;
  }
  if (mode == Mode::train && m.dropout_rate > 0.0) {
    if (rng == nullptr) throw std::invalid_argument("forward: train-mode dropout needs an rng");
    std::bernoulli_distribution keep(1.0 - m.dropout_rate);
    const double scale = 1.0 / (1.0 - m.dropout_rate);
    t.mask.resize(h);
    for (std::size_t j = 0; j < h; ++j) {
      t.mask[j] = keep(*rng) ? scale : 0.0;
      t.hidden[j] *= t.mask[j];
    }
  }
  t.logits.resize(c);
  t.probs.resize(c);
  auto w2 = m.w2();
  auto b2 = m.b2();
  for (std::size_t i = 0; i < c; ++i) {
    double s = b2[i];
    const double* row = w2.data() + i * h;
    for (std::size_t j = 0; j < h; ++j) s += row[j] * t.hidden[j];
    t.logits[i] = s;
    t.probs[i] = sigmoid(s);
  }
  return t;
}

inline Prediction forward(const MlpModel& m, std::span<const double> x, Mode mode = Mode::eval,
                          Rng* rng = nullptr) {
  return {forward_trace(m, x, mode, rng).probs};
}

/// Rectified hidden activations in eval mode (the representation fed to the
/// output layer).
inline std::vector<double> hidden_features(const MlpModel& m, std::span<const double> x) {
  return forward_trace(m, x, Mode::eval).hidden;
}

/// Accumulates the parameter gradient for upstream logit gradient `dlogits`.
inline void backward_into(const MlpModel& m, const ForwardTrace& t, std::span<const double> dlogits,
                          Gradients& g, double scale = 1.0) {
  const std::size_t d = m.input_dim, h = m.hidden_dim, c = m.num_classes;
  auto w2 = m.w2();
  double* gw1 = g.values.data() + m.w1_offset();
  double* gb1 = g.values.data() + m.b1_offset();
  double* gw2 = g.values.data() + m.w2_offset();
  double* gb2 = g.values.data() + m.b2_offset();
  std::vector<double> dh(h, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    const double dz = scale * dlogits[i];
    gb2[i] += dz;
    double* grow = gw2 + i * h;
    const double* wrow = w2.data() + i * h;
    for (std::size_t j = 0; j < h; ++j) {
      grow[j] += dz * t.hidden[j];
      dh[j] += dz * wrow[j];
    }
  }
  for (std::size_t j = 0; j < h; ++j) {
    double dpre = t.hidden_pre[j] > 0.0 ? dh[j] : 0.0;
    if (!t.mask.empty()) dpre *= t.mask[j];
    if (dpre == 0.0) continue;
    gb1[j] += dpre;
    double* grow = gw1 + j * d;
    for (std::size_t k = 0; k < d; ++k) grow[k] += dpre * t.input[k];
  }
}

// ---- losses ---------------------------------------------------------------

namespace detail {
inline double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }
inline bool clamp_active(double p) { return p < kProbEps || p > 1.0 - kProbEps; }

inline void check_label(int label, std::size_t classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes)
    throw std::out_of_range("label " + std::to_string(label) + " outside [0, " +
                            std::to_string(classes) + ")");
}
}  // namespace detail

/// Webly supervised BCE: -[log p_w + sum_{j != w} log(1 - p_j)].
inline double loss_web(const Prediction& pred, int web_label) {
  detail::check_label(web_label, pred.probs.size());
  double s = 0.0;
  for (std::size_t j = 0; j < pred.probs.size(); ++j) {
    double p = detail::clamp_prob(pred.probs[j]);
    s += static_cast<int>(j) == web_label ? std::log(p) : std::log(1.0 - p);
  }
  return -s;
}

/// BCE against a soft per-class target q (the self label).
inline double loss_self(const Prediction& pred, std::span<const double> target) {
  if (target.size() != pred.probs.size()) throw std::invalid_argument("loss_self: length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < pred.probs.size(); ++j) {
    double p = detail::clamp_prob(pred.probs[j]);
    s += target[j] * std::log(p) + (1.0 - target[j]) * std::log(1.0 - p);
  }
  return -s;
}

struct LossBreakdown {
  double l_w = 0.0;
  double l_s = 0.0;
  double c = 0.0;
  double total = 0.0;
};

inline LossBreakdown loss_combined(const Prediction& pred, int web_label,
                                   std::span<const double> self_label, double c) {
  if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("loss_combined: c outside [0,1]");
  LossBreakdown b;
  b.l_w = loss_web(pred, web_label);
  b.l_s = loss_self(pred, self_label);
  b.c = c;
  b.total = c * b.l_w + (1.0 - c) * b.l_s;
  return b;
}

/// Target 1 - eps at the web label and eps elsewhere.
inline std::vector<double> smoothed_target(std::size_t classes, int web_label, double epsilon) {
  std::vector<double> t(classes, epsilon);
  t[web_label] = 1.0 - epsilon;
  return t;
}

inline double loss_label_smoothing(const Prediction& pred, int web_label, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("label smoothing: eps in [0,1)");
  detail::check_label(web_label, pred.probs.size());
  if (epsilon == 0.0) return loss_web(pred, web_label);
  return loss_self(pred, smoothed_target(pred.probs.size(), web_label, epsilon));
}

/// Sum over classes of p log p + (1-p) log(1-p), the negative binary entropy.
inline double negative_entropy(const Prediction& pred) {
  double s = 0.0;
  for (double raw : pred.probs) {
    double p = detail::clamp_prob(raw);
    s += p * std::log(p) + (1.0 - p) * std::log(1.0 - p);
  }
  return s;
}

inline double loss_entropy_reg(const Prediction& pred, int web_label, double weight) {
  if (!(weight >= 0.0)) throw std::invalid_argument("entropy regularizer: weight must be >= 0");
  double base = loss_web(pred, web_label);
  if (weight == 0.0) return base;
  return base + weight * negative_entropy(pred);
}

/// Mean squared difference of two probability vectors.
inline double loss_consistency(const Prediction& a, const Prediction& b) {
  if (a.probs.size() != b.probs.size() || a.probs.empty())
    throw std::invalid_argument("loss_consistency: length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < a.probs.size(); ++j) {
    double d = a.probs[j] - b.probs[j];
    s += d * d;
  }
  return s / static_cast<double>(a.probs.size());
}

// ---- loss specs and gradients ---------------------------------------------

struct WebLoss {
  int web_label;
};
/// BCE against an arbitrary soft target (self labels, mixed one-hots).
struct SelfLoss {
  std::vector<double> target;
};
struct CombinedLoss {
  int web_label;
  std::vector<double> self_label;
  double c;
};
struct SmoothedLoss {
  int web_label;
  double epsilon;
};
struct EntropyRegLoss {
  int web_label;
  double weight;
};
/// loss_web on the primary input plus weight * loss_consistency between the
/// predictions on two perturbed views.
struct ConsistencyLoss {
  int web_label;
  std::vector<double> view_a;
  std::vector<double> view_b;
  double weight;
};

using LossSpec =
    std::variant<WebLoss, SelfLoss, CombinedLoss, SmoothedLoss, EntropyRegLoss, ConsistencyLoss>;

namespace detail {

// d/dz of the BCE against target t for a sigmoid head. Zero where the clamp
// is active, matching the clamped loss exactly.
inline void bce_dlogits(std::span<const double> probs, std::span<const double> target,
                        std::span<double> out, double scale = 1.0) {
  for (std::size_t j = 0; j < probs.size(); ++j)
    out[j] += clamp_active(probs[j]) ? 0.0 : scale * (probs[j] - target[j]);
}

inline std::vector<double> one_hot(std::size_t classes, int label) {
  std::vector<double> t(classes, 0.0);
  t[label] = 1.0;
  return t;
}

}  // namespace detail

/// Loss value and parameter gradient of one sample.
struct SampleGradient {
  double loss = 0.0;
  Gradients grads;
};

/// Evaluates `spec` on input x and accumulates scale * dLoss/dparams into g.
/// `rng` drives dropout in train mode. Returns the (unscaled) loss.
inline double accumulate_gradient(const MlpModel& m, std::span<const double> x, const LossSpec& spec,
                                  Gradients& g, double scale = 1.0, Mode mode = Mode::eval,
                                  Rng* rng = nullptr) {
  const std::size_t C = m.num_classes;
  auto trace = forward_trace(m, x, mode, rng);
  Prediction pred{trace.probs};
  std::vector<double> dz(C, 0.0);

  double loss = std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, WebLoss>) {
          double l = loss_web(pred, s.web_label);
          detail::bce_dlogits(pred.probs, detail::one_hot(C, s.web_label), dz);
          return l;
        } else if constexpr (std::is_same_v<T, SelfLoss>) {
          double l = loss_self(pred, s.target);
          detail::bce_dlogits(pred.probs, s.target, dz);
          return l;
        } else if constexpr (std::is_same_v<T, CombinedLoss>) {
          auto b = loss_combined(pred, s.web_label, s.self_label, s.c);
          detail::bce_dlogits(pred.probs, detail::one_hot(C, s.web_label), dz, s.c);
          detail::bce_dlogits(pred.probs, s.self_label, dz, 1.0 - s.c);
          return b.total;
        } else if constexpr (std::is_same_v<T, SmoothedLoss>) {
          double l = loss_label_smoothing(pred, s.web_label, s.epsilon);
          detail::bce_dlogits(pred.probs, smoothed_target(C, s.web_label, s.epsilon), dz);
          return l;
        } else if constexpr (std::is_same_v<T, EntropyRegLoss>) {
          double l = loss_entropy_reg(pred, s.web_label, s.weight);
          detail::bce_dlogits(pred.probs, detail::one_hot(C, s.web_label), dz);
          // d/dz [p log p + (1-p) log(1-p)] = log(p / (1-p)) * p (1-p)
          for (std::size_t j = 0; j < C; ++j) {
            double p = pred.probs[j];
            if (detail::clamp_active(p)) continue;
            dz[j] += s.weight * (std::log(p) - std::log(1.0 - p)) * p * (1.0 - p);
          }
          return l;
        } else {
          static_assert(std::is_same_v<T, ConsistencyLoss>);
          double l = loss_web(pred, s.web_label);
          detail::bce_dlogits(pred.probs, detail::one_hot(C, s.web_label), dz);
          if (s.weight != 0.0) {
            auto ta = forward_trace(m, s.view_a, mode, rng);
            auto tb = forward_trace(m, s.view_b, mode, rng);
            l += s.weight * loss_consistency({ta.probs}, {tb.probs});
            std::vector<double> da(C), db(C);
            for (std::size_t j = 0; j < C; ++j) {
              double diff = ta.probs[j] - tb.probs[j];
              double dp = 2.0 * s.weight * diff / static_cast<double>(C);
              da[j] = dp * ta.probs[j] * (1.0 - ta.probs[j]);
              db[j] = -dp * tb.probs[j] * (1.0 - tb.probs[j]);
            }
            backward_into(m, ta, da, g, scale);
            backward_into(m, tb, db, g, scale);
          }
          return l;
        }
      },
      spec);
  backward_into(m, trace, dz, g, scale);
  return loss;
}

/// Loss value of `spec` in eval mode (no gradient).
inline double evaluate_loss(const MlpModel& m, std::span<const double> x, const LossSpec& spec) {
  Prediction pred = forward(m, x);
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, WebLoss>) {
          return loss_web(pred, s.web_label);
        } else if constexpr (std::is_same_v<T, SelfLoss>) {
          return loss_self(pred, s.target);
        } else if constexpr (std::is_same_v<T, CombinedLoss>) {
          return loss_combined(pred, s.web_label, s.self_label, s.c).total;
        } else if constexpr (std::is_same_v<T, SmoothedLoss>) {
          return loss_label_smoothing(pred, s.web_label, s.epsilon);
        } else if constexpr (std::is_same_v<T, EntropyRegLoss>) {
          return loss_entropy_reg(pred, s.web_label, s.weight);
        } else {
          double l = loss_web(pred, s.web_label);
          if (s.weight != 0.0) l += s.weight * loss_consistency(forward(m, s.view_a), forward(m, s.view_b));
          return l;
        }
      },
      spec);
}

/// Analytic gradient of `spec` at x in eval mode.
inline SampleGradient backward(const MlpModel& m, std::span<const double> x, const LossSpec& spec) {
  SampleGradient out{0.0, Gradients(m.params.size())};
  out.loss = accumulate_gradient(m, x, spec, out.grads);
  return out;
}

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares the analytic gradient against central differences over every
/// parameter. Relative error is |a - n| / max(|a| + |n|, floor).
inline GradientCheckReport gradient_check(const MlpModel& m, std::span<const double> x,
                                          const LossSpec& spec, double step = 1e-5,
                                          double floor = 1e-8) {
  auto analytic = backward(m, x, spec).grads;
  MlpModel probe = m;
  GradientCheckReport rep;
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const double orig = probe.params[i];
    probe.params[i] = orig + step;
    double up = evaluate_loss(probe, x, spec);
    probe.params[i] = orig - step;
    double down = evaluate_loss(probe, x, spec);
    probe.params[i] = orig;
    double numeric = (up - down) / (2.0 * step);
    double a = analytic.values[i];
    double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
    ++rep.checked;
  }
  return rep;
}

// ---- checkpoint -----------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "scc-mlp-checkpoint v1";

inline std::string checkpoint_to_string(const MlpModel& m) {
  std::ostringstream out;
  out << kCheckpointMagic << '\n';
  out << "layers " << m.input_dim << ' ' << m.hidden_dim << ' ' << m.num_classes << '\n';
  out << "dropout " << csv::format_real(m.dropout_rate, 17) << '\n';
  auto block = [&](const char* name, std::span<const double> v, std::size_t rows, std::size_t cols) {
    out << name << ' ' << rows << ' ' << cols << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        if (c) out << ' ';
        out << csv::format_real(v[r * cols + c], 17);
      }
      out << '\n';
    }
  };
  block("W1", m.w1(), m.hidden_dim, m.input_dim);
  block("b1", m.b1(), 1, m.hidden_dim);
  block("W2", m.w2(), m.num_classes, m.hidden_dim);
  block("b2", m.b2(), 1, m.num_classes);
  return out.str();
}

inline void save_checkpoint(const MlpModel& m, const std::filesystem::path& path) {
  csv::write_atomic(path, checkpoint_to_string(m));
}

inline MlpModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic)
    throw SchemaError(path.string() + ": not a checkpoint", 1);
  std::string tag;
  std::size_t d = 0, h = 0, c = 0;
  double dropout = 0.0;
  if (!(in >> tag >> d >> h >> c) || tag != "layers") throw SchemaError(path.string() + ": bad layers", 2);
  if (!(in >> tag >> dropout) || tag != "dropout") throw SchemaError(path.string() + ": bad dropout", 3);
  MlpModel m = MlpModel::zeros(d, h, c, dropout);
  auto block = [&](const char* name, std::span<double> v, std::size_t rows, std::size_t cols) {
    std::size_t r = 0, k = 0;
    if (!(in >> tag >> r >> k) || tag != name || r != rows || k != cols)
      throw SchemaError(path.string() + ": bad block header for " + name, 0);
    for (auto& x : v) {
      std::string tok;
      if (!(in >> tok)) throw SchemaError(path.string() + ": truncated block " + name, 0);
      x = csv::parse_real(tok, 0);
    }
  };
  block("W1", m.w1(), h, d);
  block("b1", m.b1(), 1, h);
  block("W2", m.w2(), c, h);
  block("b2", m.b2(), 1, c);
  return m;
}

}  // namespace scc
