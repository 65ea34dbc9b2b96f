// On-disk layout of stage-1 artifacts and training logs.
#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "scc/csv.hpp"
#include "scc/netcore.hpp"
#include "scc/trainer.hpp"

namespace scc::io {

namespace fs = std::filesystem;

inline constexpr const char* kCheckpointFile = "checkpoint.txt";
inline constexpr const char* kGbaSuffix = "_gba";

inline fs::path self_labels_path(const fs::path& dir, const std::string& suffix = "") {
  return dir / ("self_labels" + suffix + ".csv");
}
inline fs::path features_path(const fs::path& dir, const std::string& suffix = "") {
  return dir / ("features" + suffix + ".csv");
}
inline fs::path scc_path(const fs::path& dir, const std::string& suffix = "") {
  return dir / ("scc" + suffix + ".csv");
}

/// `id,<prefix>0,...` rows at 17 significant digits.
inline std::string matrix_csv(const Matrix& m, const std::string& prefix) {
  std::ostringstream out;
  out << "id";
  for (std::size_t c = 0; c < m.cols; ++c) out << ',' << prefix << c;
  out << '\n';
  for (std::size_t r = 0; r < m.rows; ++r) {
    out << r;
    for (double v : m.row(r)) out << ',' << csv::format_real(v, 17);
    out << '\n';
  }
  return out.str();
}

inline Matrix load_matrix_csv(const fs::path& path, const std::string& prefix) {
  auto t = csv::read(path);
  if (t.header.empty() || t.header[0] != "id") throw SchemaError(path.string() + ": expected id column", 1);
  for (std::size_t c = 1; c < t.header.size(); ++c)
    if (t.header[c] != prefix + std::to_string(c - 1))
      throw SchemaError(path.string() + ": bad column '" + t.header[c] + "'", 1);
  Matrix m(t.rows.size(), t.header.size() - 1);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (csv::parse_int(t.rows[r][0], t.lines[r]) != static_cast<long long>(r))
      throw SchemaError(path.string() + ": ids must be dense and ordered", t.lines[r]);
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = csv::parse_real(t.rows[r][c + 1], t.lines[r]);
  }
  return m;
}

inline std::string scc_csv(std::span<const double> scc) {
  std::ostringstream out;
  out << "id,c\n";
  for (std::size_t i = 0; i < scc.size(); ++i) out << i << ',' << csv::format_real(scc[i], 17) << '\n';
  return out.str();
}

inline std::vector<double> load_scc(const fs::path& path) {
  auto t = csv::read(path);
  if (t.header != std::vector<std::string>{"id", "c"}) throw SchemaError(path.string() + ": expected header id,c", 1);
  std::vector<double> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (csv::parse_int(t.rows[r][0], t.lines[r]) != static_cast<long long>(r))
      throw SchemaError(path.string() + ": ids must be dense and ordered", t.lines[r]);
    double c = csv::parse_real(t.rows[r][1], t.lines[r]);
    if (!(c >= 0.0 && c <= 1.0)) throw SchemaError(path.string() + ": confidence outside [0,1]", t.lines[r]);
    out.push_back(c);
  }
  return out;
}

/// Writes self labels, features and SCC (with an optional file-name suffix)
/// plus the theta0 checkpoint.
inline void save_artifacts(const StageOneArtifacts& a, const fs::path& dir, const std::string& suffix = "") {
  csv::write_atomic(self_labels_path(dir, suffix), matrix_csv(a.self_labels, "p"));
  csv::write_atomic(features_path(dir, suffix), matrix_csv(a.features, "h"));
  csv::write_atomic(scc_path(dir, suffix), scc_csv(a.scc));
  save_checkpoint(a.model_theta0, dir / kCheckpointFile);
}

inline StageOneArtifacts load_artifacts(const fs::path& dir, const std::string& suffix = "") {
  if (!fs::is_directory(dir)) throw std::runtime_error("artifacts directory not found: " + dir.string());
  StageOneArtifacts a{load_checkpoint(dir / kCheckpointFile), load_matrix_csv(self_labels_path(dir, suffix), "p"),
                      load_matrix_csv(features_path(dir, suffix), "h"), load_scc(scc_path(dir, suffix))};
  if (a.self_labels.rows != a.scc.size() || a.features.rows != a.scc.size())
    throw std::runtime_error("artifacts in " + dir.string() + " disagree on the sample count");
  if (a.self_labels.cols != a.model_theta0.num_classes || a.features.cols != a.model_theta0.hidden_dim)
    throw std::runtime_error("artifacts in " + dir.string() + " do not match the checkpoint shape");
  return a;
}

inline std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream out;
  out << "epoch,lr,train_loss,clean_test_acc\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << csv::format_real(r.lr, 17) << ',' << csv::format_real(r.train_loss, 17) << ',';
    if (!std::isnan(r.clean_test_acc)) out << csv::format_real(r.clean_test_acc, 17);
    out << '\n';
  }
  return out.str();
}

inline void save_train_log(const std::vector<TrainLogRow>& log, const fs::path& path) {
  csv::write_atomic(path, train_log_csv(log));
}

}  // namespace scc::io
