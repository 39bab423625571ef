// Command-line front end: dataset construction, training, evaluation, sweeps
// and the norm / checkpoint-gap analyses.
//
// Exit status: 0 ok, 1 run failure, 2 invalid configuration or arguments.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ltlab/ltlab.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailure = 1;
constexpr int kExitConfigInvalid = 2;

void emit(const std::string& bytes, const std::string& out_path) {
  if (out_path.empty())
    std::cout << bytes;
  else
    ltlab::write_file_atomic(out_path, bytes);
}

ltlab::ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  auto cfg = ltlab::load_experiment_config(path);
  if (seed) {
    cfg.seed = *seed;
    cfg.train.seed = *seed;
  }
  return cfg;
}

std::pair<std::size_t, std::size_t> parse_boundaries(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ltlab::ConfigError("--boundaries expects 'h,m'");
  try {
    return {std::stoul(s.substr(0, comma)), std::stoul(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw ltlab::ConfigError("--boundaries expects 'h,m'");
  }
}

/// Reads a sweep file: either one experiment config, or
/// {"configs": [<config object or path>...]}.
std::vector<ltlab::ExperimentConfig> load_sweep(const std::string& path) {
  const auto j = ltlab::read_json_file(path);
  const std::string base = std::filesystem::path(path).parent_path().string();
  if (!j.is_object() || !j.contains("configs")) return {ltlab::experiment_config_from_json(j, base)};
  if (j.size() != 1) throw ltlab::ConfigError(path + ": a sweep file holds only 'configs'");
  std::vector<ltlab::ExperimentConfig> out;
  for (const auto& item : j.at("configs")) {
    if (item.is_string()) {
      const auto p = std::filesystem::path(item.get<std::string>());
      out.push_back(ltlab::load_experiment_config(p.is_absolute() ? p.string() : (std::filesystem::path(base) / p).string()));
    } else {
      out.push_back(ltlab::experiment_config_from_json(item, base));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed classification lab"};
  app.require_subcommand(1);

  std::vector<std::string> config_paths;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  std::size_t parallelism = 1;
  std::string checkpoint_path;
  std::string save_checkpoint_path;
  std::string manifest_path;
  std::string report_path;
  std::string boundaries;
  std::optional<double> posthoc_tau;
  std::int64_t n0 = 0;
  double ratio = 0.0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic long-tailed manifest from a config's dataset.synth");
  synth->add_option("--config", config_paths, "Experiment config (JSON)")->required()->expected(1);
  synth->add_option("--seed", seed, "Override the config seed");
  synth->add_option("--out", out_path, "Output manifest (JSON Lines); stdout when omitted");

  auto* longtail = app.add_subcommand("make-longtail", "Pareto-subsample the train split of a manifest");
  longtail->add_option("--manifest", manifest_path, "Input manifest")->required();
  longtail->add_option("--n0", n0, "Head-class count N0")->required();
  longtail->add_option("--ratio", ratio, "Imbalance ratio r >= 1")->required();
  longtail->add_option("--seed", seed, "Sampling seed (default 0)");
  longtail->add_option("--out", out_path, "Output manifest; stdout when omitted");

  auto* train = app.add_subcommand("train", "Run an experiment: stage 1, optional stage 2, final report");
  train->add_option("--config", config_paths, "Experiment config (JSON)")->required()->expected(1);
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out_path, "Report path (overrides report_path)");
  train->add_option("--checkpoint", save_checkpoint_path, "Write the final model checkpoint here");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  eval->add_option("--manifest", manifest_path, "Manifest to evaluate on")->required();
  eval->add_option("--boundaries", boundaries, "Group boundaries 'h,m' (default: thirds)");
  eval->add_option("--posthoc-tau", posthoc_tau, "Post-hoc logit adjustment strength");
  eval->add_option("--out", out_path, "Report path; stdout when omitted");

  auto* stage2 = app.add_subcommand("stage2", "Apply the config's second stage to a stage-1 checkpoint");
  stage2->add_option("--config", config_paths, "Experiment config (JSON)")->required()->expected(1);
  stage2->add_option("--checkpoint", checkpoint_path, "Stage-1 checkpoint")->required();
  stage2->add_option("--seed", seed, "Override the config seed");
  stage2->add_option("--out", out_path, "Report path; stdout when omitted");
  stage2->add_option("--save", save_checkpoint_path, "Write the stage-2 checkpoint here");

  auto* sweep = app.add_subcommand("sweep", "Run several configs and print a Head/Medium/Tail/Avg CSV");
  sweep->add_option("--config", config_paths, "Config or sweep file (repeatable)")->required();
  sweep->add_option("--seed", seed, "Override every config's seed");
  sweep->add_option("--parallelism", parallelism, "Concurrent runs")->check(CLI::PositiveNumber);
  sweep->add_option("--out", out_path, "CSV path; stdout when omitted");

  auto* norms = app.add_subcommand("norms", "Per-class classifier weight norms of a checkpoint");
  norms->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  norms->add_option("--out", out_path, "JSON path; stdout when omitted");

  auto* gaps = app.add_subcommand("gaps", "Checkpoint-gap statistics of a run report");
  gaps->add_option("--report", report_path, "Run report (JSON)")->required();
  gaps->add_option("--out", out_path, "JSON path; stdout when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfigInvalid;
  }

  try {
    if (synth->parsed()) {
      const auto cfg = load_config(config_paths.front(), seed);
      if (!cfg.dataset.synth) throw ltlab::ConfigError("synth needs config.dataset.synth");
      emit(ltlab::write_manifest_jsonl(ltlab::build_dataset(cfg)), out_path);
    } else if (longtail->parsed()) {
      const auto m = ltlab::read_manifest(manifest_path);
      const auto targets = ltlab::pareto_targets(n0, m.num_classes, ratio);
      emit(ltlab::write_manifest_jsonl(ltlab::subsample_longtail(m, targets, seed.value_or(0))), out_path);
    } else if (train->parsed()) {
      auto cfg = load_config(config_paths.front(), seed);
      if (!out_path.empty()) cfg.report_path = out_path;
      const auto report = ltlab::run_experiment(cfg);
      const std::string bytes = ltlab::run_report_bytes(report);
      // Both files or neither.
      bool wrote_checkpoint = false;
      try {
        if (!save_checkpoint_path.empty()) {
          ltlab::save_checkpoint(report.model, save_checkpoint_path);
          wrote_checkpoint = true;
        }
        emit(bytes, cfg.report_path.value_or(""));
      } catch (...) {
        if (wrote_checkpoint) std::filesystem::remove(save_checkpoint_path);
        throw;
      }
    } else if (eval->parsed()) {
      const auto model = ltlab::load_checkpoint(checkpoint_path);
      const auto manifest = ltlab::read_manifest(manifest_path);
      ltlab::TrainConfig tc;
      if (!boundaries.empty()) tc.group_boundaries = parse_boundaries(boundaries);
      tc.posthoc_tau = posthoc_tau;
      const auto report = ltlab::evaluate_model(model, manifest, tc);
      emit(ltlab::run_report_bytes(report), out_path);
    } else if (stage2->parsed()) {
      const auto cfg = load_config(config_paths.front(), seed);
      const auto stage1 = ltlab::load_checkpoint(checkpoint_path);
      const auto manifest = ltlab::build_dataset(cfg);
      ltlab::Rng rng(cfg.seed);
      const auto model = ltlab::apply_stage2(stage1, manifest, cfg.train, rng);
      auto report = ltlab::evaluate_model(model, manifest, cfg.train);
      report.config_digest = ltlab::config_digest(cfg);
      report.method = cfg.method();
      report.stage1_model = stage1;
      if (!save_checkpoint_path.empty()) ltlab::save_checkpoint(model, save_checkpoint_path);
      emit(ltlab::run_report_bytes(report), out_path);
    } else if (sweep->parsed()) {
      std::vector<ltlab::ExperimentConfig> configs;
      for (const auto& p : config_paths)
        for (auto& c : load_sweep(p)) {
          if (seed) c.seed = c.train.seed = *seed;
          configs.push_back(std::move(c));
        }
      const auto rows = ltlab::run_sweep(configs, parallelism, true);
      emit(ltlab::sweep_csv(rows), out_path);
      bool failed = false;
      for (const auto& r : rows)
        if (!r.report) {
          std::cerr << "sweep: " << r.method << " failed: " << r.error << "\n";
          failed = true;
        }
      return failed ? kExitRunFailure : kExitOk;
    } else if (norms->parsed()) {
      const auto model = ltlab::load_checkpoint(checkpoint_path);
      ltlab::json j = {{"weight_norms", ltlab::weight_norms(model)}};
      emit(ltlab::canonical_dump(j) + "\n", out_path);
    } else if (gaps->parsed()) {
      const auto report = ltlab::read_json_file(report_path);
      emit(ltlab::canonical_dump(ltlab::gaps_to_json(ltlab::gaps_from_report_json(report))) + "\n", out_path);
    }
  } catch (const ltlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRunFailure;
  }
  return kExitOk;
}
