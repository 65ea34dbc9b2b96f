// Command-line front end: generate, pretrain, extract, finetune, evaluate and
// the end-to-end pipeline. Every command accepts --config <file> with flat
// `key = value` lines; flags given on the command line take precedence.
#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scc/calib.hpp"
#include "scc/csv.hpp"
#include "scc/dataset.hpp"
#include "scc/graph.hpp"
#include "scc/io.hpp"
#include "scc/netcore.hpp"
#include "scc/trainer.hpp"

namespace scc::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "1.0.0";

// ---- config files ----------------------------------------------------------

/// Turns `key = value` lines into `--key=value` tokens. Underscores in keys
/// are read as hyphens; `#` starts a comment.
inline std::vector<std::string> config_tokens(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw SchemaError(path.string() + ": expected key = value", lineno);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw SchemaError(path.string() + ": empty key", lineno);
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") throw SchemaError(path.string() + ": config files cannot nest", lineno);
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

/// argv with the config file's tokens spliced in right after the subcommand,
/// so later command-line flags override them.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (!config || args.size() < 2) return args;
  std::vector<std::string> out{args[0], args[1]};
  for (auto& t : config_tokens(*config)) out.push_back(std::move(t));
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

// ---- manifest ----------------------------------------------------------------

/// Resolved `key = value` lines for every option of a subcommand (defaults
/// included), suitable for replay through --config.
inline std::string resolved_options(const CLI::App& sub) {
  std::ostringstream out;
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->get_expected_min() == 0) {
      out << name << " = " << (opt->as<bool>() ? "true" : "false") << '\n';
    } else if (opt->count() > 0) {
      for (const auto& r : opt->results()) out << name << " = " << r << '\n';
    } else if (!opt->get_default_str().empty()) {
      out << name << " = " << opt->get_default_str() << '\n';
    }
  }
  return out.str();
}

struct RunManifest {
  std::string command;
  std::string resolved;  // key = value lines
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::uint64_t seed = 0;
  double seconds = 0.0;

  std::string to_string() const {
    std::ostringstream out;
    out << "# scc_lab run manifest\n";
    out << "# command = " << command << '\n';
    out << "# version = " << kVersion << '\n';
    out << "# seed = " << seed << '\n';
    out << "# duration_s = " << csv::format_real(seconds, 6) << '\n';
    for (const auto& p : inputs) out << "# input = " << p.string() << '\n';
    for (const auto& p : outputs) out << "# output = " << p.string() << '\n';
    out << resolved;
    return out.str();
  }
};

// ---- flag groups -----------------------------------------------------------

struct DataFlags {
  int classes = 5;
  int per_class = 400;
  std::size_t dim = 16;
  double spread = 1.0;
  double separation = kDefaultSeparation;
  double noise = 0.4;
  std::string noise_model = "uniform";
  int test_per_class = 1000;
  int verify_per_class = 300;
  int verify_classes = 0;
};

inline void add_data_flags(CLI::App& app, DataFlags& f) {
  app.add_option("--classes", f.classes, "number of classes");
  app.add_option("--per-class", f.per_class, "training samples per class");
  app.add_option("--dim", f.dim, "feature dimension");
  app.add_option("--spread", f.spread, "cluster standard deviation");
  app.add_option("--separation", f.separation, "class-center scale");
  app.add_option("--noise", f.noise, "fraction of corrupted web labels");
  app.add_option("--noise-model", f.noise_model, "uniform | class_conditional | neighborhood");
  app.add_option("--test-per-class", f.test_per_class, "clean held-out samples per class");
  app.add_option("--verify-per-class", f.verify_per_class, "verification samples per web-label class");
  app.add_option("--verify-classes", f.verify_classes, "classes drawn for verification (0 = all)");
}

struct TrainFlags {
  TrainConfig cfg;
  std::string reg = "vanilla";

  TrainConfig resolved(std::uint64_t seed) const {
    TrainConfig c = cfg;
    c.regularizer = parse_regularizer(reg);
    c.seed = seed;
    c.validate();
    return c;
  }
};

/// Optimizer and regularizer flags shared by the training commands. `lr_name`
/// and `epochs_name` let the pipeline expose both stages side by side.
inline void add_train_flags(CLI::App& app, TrainFlags& f, bool with_reg = true,
                            const std::string& lr_name = "--lr", const std::string& epochs_name = "--epochs") {
  auto& c = f.cfg;
  app.add_option(epochs_name, c.epochs, "epochs");
  app.add_option(lr_name, c.initial_lr, "initial learning rate");
  app.add_option("--batch-size", c.batch_size, "batch size");
  app.add_option("--warmup", c.warmup_epochs, "linear warmup epochs");
  app.add_option("--momentum", c.momentum, "SGD momentum");
  app.add_option("--weight-decay", c.weight_decay, "weight decay (weights only)");
  app.add_option("--class-reweighting", c.class_reweighting, "inverse-frequency class weights");
  app.add_option("--mixup-alpha", c.mixup_alpha, "Beta(alpha, alpha) for mixup");
  if (with_reg) {
    app.add_option("--reg", f.reg, "vanilla|label-smoothing|entropy|mc-dropout|mixup|ensemble");
    app.add_option("--hidden", c.hidden, "hidden width");
    app.add_option("--ensemble-size", c.ensemble_size, "ensemble members");
    app.add_option("--dropout", c.dropout_rate, "dropout rate for mc-dropout");
    app.add_option("--label-smoothing", c.label_smoothing, "label smoothing epsilon");
    app.add_option("--entropy-weight", c.entropy_weight, "entropy regularizer weight");
    app.add_option("--mc-passes", c.mc_passes, "stochastic passes when extracting from a dropout model");
  }
}

// ---- helpers -----------------------------------------------------------------

inline void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("output directory does not exist: " + dir.string());
}

inline void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw std::runtime_error(what + " is not finite");
}

inline std::string sweep_csv(const std::vector<std::pair<double, double>>& rows) {
  std::ostringstream out;
  out << "c,top1\n";
  for (auto [c, a] : rows) out << csv::format_real(c, 17) << ',' << csv::format_real(a, 17) << '\n';
  return out.str();
}

/// Constant confidences 0, 0.1, ..., 1.0.
inline std::vector<double> sweep_values() {
  std::vector<double> v;
  for (int k = 0; k <= 10; ++k) v.push_back(k / 10.0);
  return v;
}

// ---- commands ---------------------------------------------------------------

struct GenerateOutputs {
  SyntheticDataset train, test;
  VerificationSet verification;
};

inline GenerateOutputs generate_data(const DataFlags& f, std::uint64_t seed) {
  auto full = generate_clusters(f.classes, f.per_class + f.test_per_class, f.dim, f.spread, seed, f.separation);
  auto [clean_train, test] = split_holdout(full, f.test_per_class, seed);
  auto train = inject_noise(clean_train, parse_noise_model(f.noise_model), f.noise, seed);
  auto vs = build_verification_set(train, f.verify_per_class, seed, f.verify_classes);
  return {std::move(train), std::move(test), std::move(vs)};
}

inline std::vector<fs::path> write_generated(const GenerateOutputs& g, const fs::path& out) {
  std::vector<fs::path> files{out / "train.csv", out / "test.csv", out / "verification.csv"};
  save_dataset(g.train, files[0]);
  save_dataset(g.test, files[1]);
  save_verification(g.verification, files[2]);
  return files;
}

inline fs::path member_checkpoint(const fs::path& dir, std::size_t e) {
  return e == 0 ? dir / io::kCheckpointFile : dir / ("checkpoint_" + std::to_string(e) + ".txt");
}

inline std::vector<fs::path> write_pretrain(const PretrainResult& r, const fs::path& out) {
  std::vector<fs::path> files;
  for (std::size_t e = 0; e < r.models.size(); ++e) {
    files.push_back(member_checkpoint(out, e));
    save_checkpoint(r.models[e], files.back());
    files.push_back(e == 0 ? out / "train_log.csv" : out / ("train_log_" + std::to_string(e) + ".csv"));
    io::save_train_log(r.logs[e], files.back());
  }
  return files;
}

struct EvalProvider {
  std::string name;
  std::vector<double> scc;
  std::optional<double> sav_top1;
};

/// Metrics summary plus one reliability table per provider.
inline std::vector<fs::path> write_evaluation(const VerificationSet& vs, const std::vector<EvalProvider>& providers,
                                              int bins, int diagram_bins, const fs::path& out) {
  std::vector<ProviderMetrics> rows;
  std::vector<fs::path> files;
  for (const auto& p : providers) {
    auto rep = evaluate_confidence(vs, p.scc, bins);
    ProviderMetrics m{p.name, rep.mse, rep.ece, rep.oce, p.sav_top1};
    require_finite(m.mse, p.name + " mse");
    require_finite(m.ece, p.name + " ece");
    require_finite(m.oce, p.name + " oce");
    if (m.sav_top1) require_finite(*m.sav_top1, p.name + " sav");
    rows.push_back(m);
    files.push_back(out / ("reliability_" + p.name + ".csv"));
    emit_reliability_csv(evaluate_confidence(vs, p.scc, diagram_bins), files.back());
  }
  files.push_back(out / "metrics_summary.csv");
  csv::write_atomic(files.back(), metrics_summary_csv(rows));
  return files;
}

/// Parses `name=path` provider specs.
inline std::pair<std::string, fs::path> split_provider(const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
    throw std::invalid_argument("provider must be name=path, got '" + spec + "'");
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

struct PipelineFlags {
  DataFlags data;
  TrainFlags pre;
  TrainFlags fine;
  bool gba = true;
  int k = kDefaultGraphK;
  double lambda = kDefaultGraphLambda;
  int bins = kMetricBins;
  int diagram_bins = kDiagramBins;
  bool sweep = false;

  PipelineFlags() { fine.cfg = TrainConfig::finetune_defaults(); }
};

struct PipelineResult {
  double stage1_top1 = 0.0;
  double stage2_top1 = 0.0;
  std::vector<ProviderMetrics> metrics;
  std::vector<fs::path> outputs;
};

/// generate -> pretrain -> extract (-> GBA) -> finetune -> evaluate under `out`.
inline PipelineResult run_pipeline(const PipelineFlags& f, std::uint64_t seed, const fs::path& out) {
  PipelineResult res;
  const fs::path data = out / "data", s1 = out / "stage1", art = out / "artifacts", s2 = out / "stage2",
                 ev = out / "eval";
  for (const auto& d : {data, s1, art, s2, ev}) fs::create_directories(d);

  auto gen = generate_data(f.data, seed);
  auto append = [&](std::vector<fs::path> v) { res.outputs.insert(res.outputs.end(), v.begin(), v.end()); };
  append(write_generated(gen, data));

  auto pcfg = f.pre.resolved(seed);
  auto fcfg = f.fine.cfg;
  // Optimizer settings other than the learning rate and epochs are shared.
  fcfg.batch_size = pcfg.batch_size;
  fcfg.momentum = pcfg.momentum;
  fcfg.weight_decay = pcfg.weight_decay;
  fcfg.class_reweighting = pcfg.class_reweighting;
  fcfg.mixup_alpha = pcfg.mixup_alpha;
  fcfg.seed = seed;
  // Stage-2 inherits the stage-1 regularizer so mixup also mixes the
  // combined targets.
  fcfg.regularizer = pcfg.regularizer == Regularizer::mixup ? Regularizer::mixup : Regularizer::vanilla;
  fcfg.validate();

  TrainOptions opts{&gen.test, {}};
  auto pre = pretrain(gen.train, pcfg, opts);
  append(write_pretrain(pre, s1));
  res.stage1_top1 = accuracy(pre.models.front(), gen.test).top1;

  auto artifacts = extract(gen.train, pre.models, pcfg);
  io::save_artifacts(artifacts, art);
  std::optional<StageOneArtifacts> smoothed;
  if (f.gba) {
    smoothed = smooth_artifacts(artifacts, gen.train, f.k, f.lambda);
    io::save_artifacts(*smoothed, art, io::kGbaSuffix);
  }
  const StageOneArtifacts& used = smoothed ? *smoothed : artifacts;

  auto fin = finetune(gen.train, used, fcfg, opts);
  save_checkpoint(fin.model, s2 / io::kCheckpointFile);
  io::save_train_log(fin.log, s2 / "train_log.csv");
  append({s2 / io::kCheckpointFile, s2 / "train_log.csv"});
  res.stage2_top1 = accuracy(fin.model, gen.test).top1;

  const std::string base = to_string(pcfg.regularizer);
  std::vector<EvalProvider> providers;
  providers.push_back({base, artifacts.scc, sav_harness(gen.train, artifacts, artifacts.scc, fcfg, gen.test)});
  if (smoothed)
    providers.push_back({base + "+gba", smoothed->scc, sav_harness(gen.train, artifacts, smoothed->scc, fcfg, gen.test)});
  append(write_evaluation(gen.verification, providers, f.bins, f.diagram_bins, ev));

  // Constant confidences pair with the unsmoothed self labels, as in the SAV harness.
  if (f.sweep) {
    std::vector<std::pair<double, double>> rows;
    for (double c : sweep_values())
      rows.emplace_back(c, accuracy(finetune_constant(gen.train, artifacts, c, fcfg).model, gen.test).top1);
    csv::write_atomic(s2 / "constant_sweep.csv", sweep_csv(rows));
    append({s2 / "constant_sweep.csv"});
  }

  for (const auto& p : providers) {
    auto rep = evaluate_confidence(gen.verification, p.scc, f.bins);
    res.metrics.push_back({p.name, rep.mse, rep.ece, rep.oce, p.sav_top1});
  }
  return res;
}

// ---- entry point --------------------------------------------------------------

/// Runs the command line; returns the process exit code. Failures print one
/// diagnostic line to `err`.
inline int run(const std::vector<std::string>& raw_args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  const auto started = std::chrono::steady_clock::now();
  CLI::App app{"scc_lab: two-stage learning from noisy web labels with self-contained confidence"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();

  std::string config;
  std::uint64_t seed = 1;
  std::string out_dir;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "flat key = value file; flags override it");
    sub->add_option("--seed", seed, "seed for every random stream");
    sub->add_option("--out", out_dir, "output directory")->required();
  };

  RunManifest manifest;

  // generate
  DataFlags gen_flags;
  auto* gen = app.add_subcommand("generate", "synthesize train/test/verification CSVs");
  common(gen);
  add_data_flags(*gen, gen_flags);

  // pretrain
  TrainFlags pre_flags;
  std::string train_path, test_path;
  auto* pre = app.add_subcommand("pretrain", "stage 1: train on web labels");
  common(pre);
  add_train_flags(*pre, pre_flags);
  pre->add_option("--train", train_path, "training dataset CSV")->required();
  pre->add_option("--test", test_path, "clean test dataset CSV");

  // extract
  TrainFlags ext_flags;
  std::vector<std::string> checkpoints;
  bool ext_gba = false;
  int ext_k = kDefaultGraphK;
  double ext_lambda = kDefaultGraphLambda;
  auto* ext = app.add_subcommand("extract", "self labels, features and SCC from stage-1 checkpoints");
  common(ext);
  ext->add_option("--train", train_path, "training dataset CSV")->required();
  ext->add_option("--checkpoint", checkpoints, "stage-1 checkpoint (repeat for an ensemble)")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ext->add_option("--mc-passes", ext_flags.cfg.mc_passes, "stochastic passes for dropout models");
  ext->add_flag("--gba", ext_gba, "also write graph-smoothed artifacts with a _gba suffix");
  ext->add_option("--k", ext_k, "neighbors per node");
  ext->add_option("--lambda", ext_lambda, "self-loop weight");

  // finetune
  TrainFlags fin_flags;
  fin_flags.cfg = TrainConfig::finetune_defaults();
  std::string artifacts_dir;
  bool fin_gba = false, sweep = false;
  std::optional<double> constant_c;
  auto* fin = app.add_subcommand("finetune", "stage 2: confidence-balanced finetuning");
  common(fin);
  add_train_flags(*fin, fin_flags, false);
  fin->add_option("--train", train_path, "training dataset CSV")->required();
  fin->add_option("--test", test_path, "clean test dataset CSV");
  fin->add_option("--artifacts", artifacts_dir, "stage-1 artifacts directory")->required();
  fin->add_flag("--gba", fin_gba, "use the _gba artifacts");
  fin->add_option("--constant-c", constant_c, "replace every SCC with this constant");
  fin->add_flag("--sweep-c", sweep, "sweep constant c over 0, 0.1, ..., 1 (needs --test)");
  fin->add_flag("--mixup", [&](std::int64_t n) { fin_flags.reg = n > 0 ? "mixup" : "vanilla"; },
                "mix combined targets with mixup");

  // evaluate
  std::string verification_path;
  std::vector<std::string> providers;
  int bins = kMetricBins, diagram_bins = kDiagramBins;
  bool eval_sav = false;
  TrainFlags sav_flags;
  sav_flags.cfg = TrainConfig::finetune_defaults();
  auto* eva = app.add_subcommand("evaluate", "MSE/ECE/OCE and reliability tables per confidence provider");
  common(eva);
  eva->add_option("--verification", verification_path, "verification CSV")->required();
  eva->add_option("--provider", providers, "name=path/to/scc.csv (repeatable)")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  eva->add_option("--bins", bins, "bins for ECE/OCE");
  eva->add_option("--diagram-bins", diagram_bins, "bins in the reliability CSVs");
  eva->add_flag("--sav", eval_sav, "also run the SAV harness (needs --train, --test, --artifacts)");
  eva->add_option("--train", train_path, "training dataset CSV");
  eva->add_option("--test", test_path, "clean test dataset CSV");
  eva->add_option("--artifacts", artifacts_dir, "vanilla stage-1 artifacts for SAV");
  add_train_flags(*eva, sav_flags, false);

  // pipeline
  PipelineFlags pipe_flags;
  auto* pipe = app.add_subcommand("pipeline", "generate, pretrain, extract, finetune and evaluate");
  common(pipe);
  add_data_flags(*pipe, pipe_flags.data);
  add_train_flags(*pipe, pipe_flags.pre, true, "--lr", "--epochs");
  pipe->add_option("--finetune-lr", pipe_flags.fine.cfg.initial_lr, "stage-2 initial learning rate");
  pipe->add_option("--finetune-epochs", pipe_flags.fine.cfg.epochs, "stage-2 epochs");
  pipe->add_option("--finetune-warmup", pipe_flags.fine.cfg.warmup_epochs, "stage-2 warmup epochs");
  pipe->add_option("--gba", pipe_flags.gba, "graph-smooth the stage-1 artifacts");
  pipe->add_option("--k", pipe_flags.k, "neighbors per node");
  pipe->add_option("--lambda", pipe_flags.lambda, "self-loop weight");
  pipe->add_option("--bins", pipe_flags.bins, "bins for ECE/OCE");
  pipe->add_option("--diagram-bins", pipe_flags.diagram_bins, "bins in the reliability CSVs");
  pipe->add_flag("--sweep-c", pipe_flags.sweep, "also run the constant-confidence sweep");

  try {
    auto args = expand_config(raw_args);
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return e.get_exit_code() == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    const fs::path outp = out_dir;
    CLI::App* sub = app.get_subcommands().front();
    manifest.command = sub->get_name();
    manifest.seed = seed;
    manifest.resolved = resolved_options(*sub);

    if (sub == gen) {
      require_dir(outp);
      auto g = generate_data(gen_flags, seed);
      manifest.outputs = write_generated(g, outp);
      out << "generated " << g.train.size() << " train, " << g.test.size() << " test, "
          << g.verification.entries.size() << " verification rows (" << g.train.flipped << " corrupted)\n";
    } else if (sub == pre) {
      require_dir(outp);
      auto cfg = pre_flags.resolved(seed);
      auto train = load_dataset(train_path);
      std::optional<SyntheticDataset> test;
      if (!test_path.empty()) test = load_dataset(test_path);
      auto r = pretrain(train, cfg, TrainOptions{test ? &*test : nullptr, {}});
      for (const auto& m : r.models)
        for (double p : m.params) require_finite(p, "model parameter");
      manifest.inputs = {train_path};
      manifest.outputs = write_pretrain(r, outp);
      out << "pretrained " << r.models.size() << " model(s), final train loss "
          << r.logs.front().back().train_loss << '\n';
    } else if (sub == ext) {
      require_dir(outp);
      auto cfg = ext_flags.cfg;
      cfg.seed = seed;
      auto train = load_dataset(train_path);
      std::vector<MlpModel> models;
      for (const auto& c : checkpoints) models.push_back(load_checkpoint(c));
      auto a = extract(train, models, cfg);
      io::save_artifacts(a, outp);
      manifest.outputs = {io::self_labels_path(outp), io::features_path(outp), io::scc_path(outp),
                          outp / io::kCheckpointFile};
      if (ext_gba) {
        auto s = smooth_artifacts(a, train, ext_k, ext_lambda);
        io::save_artifacts(s, outp, io::kGbaSuffix);
        for (const auto& p : {io::self_labels_path(outp, io::kGbaSuffix), io::features_path(outp, io::kGbaSuffix),
                              io::scc_path(outp, io::kGbaSuffix)})
          manifest.outputs.push_back(p);
      }
      manifest.inputs = {train_path};
      for (const auto& c : checkpoints) manifest.inputs.push_back(c);
      out << "extracted artifacts for " << train.size() << " samples\n";
    } else if (sub == fin) {
      require_dir(outp);
      auto cfg = fin_flags.resolved(seed);
      auto train = load_dataset(train_path);
      auto a = io::load_artifacts(artifacts_dir, fin_gba ? io::kGbaSuffix : "");
      std::optional<SyntheticDataset> test;
      if (!test_path.empty()) test = load_dataset(test_path);
      manifest.inputs = {train_path, artifacts_dir};
      if (sweep) {
        if (!test) throw std::invalid_argument("--sweep-c needs --test");
        std::vector<std::pair<double, double>> rows;
        for (double c : sweep_values()) {
          double acc = accuracy(finetune_constant(train, a, c, cfg).model, *test).top1;
          require_finite(acc, "sweep accuracy");
          rows.emplace_back(c, acc);
          out << "c=" << c << " top1=" << acc << '\n';
        }
        manifest.outputs = {outp / "constant_sweep.csv"};
        csv::write_atomic(manifest.outputs[0], sweep_csv(rows));
      } else {
        TrainOptions opts{test ? &*test : nullptr, {}};
        auto r = constant_c ? finetune_constant(train, a, *constant_c, cfg, opts) : finetune(train, a, cfg, opts);
        for (double p : r.model.params) require_finite(p, "model parameter");
        save_checkpoint(r.model, outp / io::kCheckpointFile);
        io::save_train_log(r.log, outp / "train_log.csv");
        manifest.outputs = {outp / io::kCheckpointFile, outp / "train_log.csv"};
        out << "finetuned; final train loss " << r.log.back().train_loss;
        if (test) out << ", clean top1 " << accuracy(r.model, *test).top1;
        out << '\n';
      }
    } else if (sub == eva) {
      require_dir(outp);
      auto vs = load_verification(verification_path);
      std::vector<EvalProvider> ps;
      std::optional<SyntheticDataset> train, test;
      std::optional<StageOneArtifacts> vanilla;
      if (eval_sav) {
        if (train_path.empty() || test_path.empty() || artifacts_dir.empty())
          throw std::invalid_argument("--sav needs --train, --test and --artifacts");
        train = load_dataset(train_path);
        test = load_dataset(test_path);
        vanilla = io::load_artifacts(artifacts_dir);
      }
      auto cfg = sav_flags.resolved(seed);
      for (const auto& spec : providers) {
        auto [name, path] = split_provider(spec);
        EvalProvider p{name, io::load_scc(path), std::nullopt};
        if (eval_sav) p.sav_top1 = sav_harness(*train, *vanilla, p.scc, cfg, *test);
        manifest.inputs.push_back(path);
        ps.push_back(std::move(p));
      }
      manifest.inputs.push_back(verification_path);
      manifest.outputs = write_evaluation(vs, ps, bins, diagram_bins, outp);
      out << "evaluated " << ps.size() << " provider(s)\n";
    } else if (sub == pipe) {
      fs::create_directories(outp);
      auto r = run_pipeline(pipe_flags, seed, outp);
      manifest.outputs = r.outputs;
      out << "stage1 top1 " << r.stage1_top1 << ", stage2 top1 " << r.stage2_top1 << '\n';
      for (const auto& m : r.metrics) {
        out << m.provider << ": mse " << m.mse << " ece " << m.ece << " oce " << m.oce;
        if (m.sav_top1) out << " sav " << *m.sav_top1;
        out << '\n';
      }
    }
    manifest.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    csv::write_atomic(outp / "manifest.txt", manifest.to_string());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

inline int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv, argv + argc));
}

}  // namespace scc::cli
