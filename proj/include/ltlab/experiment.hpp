#pragma once

#include <atomic>
#include <cstdio>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ltlab/distribution.hpp"
#include "ltlab/manifest_io.hpp"
#include "ltlab/metrics.hpp"
#include "ltlab/serialization.hpp"
#include "ltlab/trainer.hpp"

namespace ltlab {

/// A failure inside one stage of run_experiment; `stage` names it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunReport {
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string method;
  ClassDistribution train_distribution;
  GroupSplit groups;
  RunHistory history;
  /// Final evaluation after the optional second stage.
  std::optional<GroupReport> final_test;
  std::optional<GroupReport> final_val;
  std::vector<double> final_weight_norms;
  std::optional<CheckpointGaps> gaps;
  ModelState stage1_model;
  ModelState model;
};

inline json run_report_to_json(const RunReport& r) {
  json dist = {{"counts", r.train_distribution.counts},
               {"imbalance_ratio", r.train_distribution.imbalance_ratio()},
               {"rank_order", r.train_distribution.rank_order}};
  json groups = {{"head", r.groups.head}, {"medium", r.groups.medium}, {"tail", r.groups.tail}};
  json final_ = {{"group_report", optional_report(r.final_test)},
                 {"val_group_report", optional_report(r.final_val)},
                 {"weight_norms", r.final_weight_norms},
                 {"gaps", r.gaps ? gaps_to_json(*r.gaps) : json(nullptr)}};
  return {{"config_digest", r.config_digest},
          {"seed", r.seed},
          {"method", r.method},
          {"train_distribution", dist},
          {"groups", groups},
          {"history", history_to_json(r.history)},
          {"final", final_}};
}

inline std::string run_report_bytes(const RunReport& r) { return canonical_dump(run_report_to_json(r)) + "\n"; }

/// Builds or loads the dataset described by the config.
inline Manifest build_dataset(const ExperimentConfig& config) {
  if (config.dataset.synth) {
    SynthSpec spec = *config.dataset.synth;
    spec.seed = config.dataset.synth_seed.value_or(config.seed);
    return synth_gaussian(spec);
  }
  Manifest m = read_manifest(*config.dataset.manifest_path);
  if (config.dataset.pareto) {
    const auto targets = pareto_targets(config.dataset.pareto->first, m.num_classes, config.dataset.pareto->second);
    m = subsample_longtail(m, targets, config.seed);
  }
  return m;
}

namespace detail {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace detail

/// Evaluates `model` on a manifest and packages the result like a run.
inline RunReport evaluate_model(const ModelState& model, const Manifest& manifest, const TrainConfig& config) {
  const Evaluator eval = Evaluator::for_manifest(manifest, config);
  RunReport r;
  r.seed = config.seed;
  r.train_distribution = eval.train_distribution;
  r.groups = eval.groups;
  r.final_val = eval.report(model, manifest, Split::val);
  r.final_test = eval.report(model, manifest, Split::test);
  r.final_weight_norms = weight_norms(model);
  r.stage1_model = model;
  r.model = model;
  return r;
}

/// Dataset -> stage 1 -> optional stage 2 -> final evaluation. Nothing is
/// written to disk here.
inline RunReport run_experiment(const ExperimentConfig& config) {
  config.train.validate();
  RunReport r;
  r.config_digest = config_digest(config);
  r.seed = config.seed;
  r.method = config.method();

  const Manifest manifest = detail::run_stage("dataset", [&] {
    Manifest m = build_dataset(config);
    if (m.is_multi_label() != is_multi_label_loss(config.train.loss.kind))
      throw ConfigError(std::string("loss '") + std::string(to_string(config.train.loss.kind)) +
                        "' does not match the dataset task kind");
    return m;
  });

  Rng rng(config.seed);
  auto stage1 = detail::run_stage("stage1", [&] { return train_stage1(manifest, config.train, rng); });
  r.history = std::move(stage1.history);
  r.stage1_model = stage1.model;
  r.model = detail::run_stage("stage2", [&] { return apply_stage2(stage1.model, manifest, config.train, rng); });

  detail::run_stage("evaluate", [&] {
    const Evaluator eval = Evaluator::for_manifest(manifest, config.train);
    r.train_distribution = eval.train_distribution;
    r.groups = eval.groups;
    r.final_val = eval.report(r.model, manifest, Split::val);
    r.final_test = eval.report(r.model, manifest, Split::test);
    r.final_weight_norms = weight_norms(r.model);
    bool any = false;
    for (const auto& e : r.history.epochs) any = any || (e.val && e.test);
    if (any) r.gaps = checkpoint_gaps(r.history);
    return 0;
  });
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  std::string method;
  std::optional<GroupReport> report;
  std::string error;
};

/// Runs every config (up to `parallelism` at once, each fully isolated) and
/// returns rows in input order. When `write_reports` is set, each config's
/// report_path receives its report.
inline std::vector<SweepRow> run_sweep(const std::vector<ExperimentConfig>& configs, std::size_t parallelism,
                                       bool write_reports = false) {
  if (configs.empty()) throw ConfigError("sweep needs at least one config");
  std::vector<SweepRow> rows(configs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      rows[i].method = configs[i].method();
      try {
        const RunReport rep = run_experiment(configs[i]);
        if (!rep.final_test) throw Error("no test split to report");
        rows[i].report = rep.final_test;
        if (write_reports && configs[i].report_path) write_file_atomic(*configs[i].report_path, run_report_bytes(rep));
      } catch (const std::exception& e) {
        rows[i].error = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(parallelism, configs.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  return rows;
}

/// CSV with the Head/Medium/Tail/Avg layout, percentages to two decimals.
/// Failed rows keep their method name and leave the numbers empty.
inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "method,head,medium,tail,avg\n";
  for (const auto& r : rows) {
    std::string name = r.method;
    if (name.find_first_of(",\"\n") != std::string::npos) {
      std::string q = "\"";
      for (char ch : name) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      name = q + "\"";
    }
    out += name;
    if (r.report) {
      char buf[128];
      std::snprintf(buf, sizeof buf, ",%.2f,%.2f,%.2f,%.2f\n", r.report->head, r.report->medium, r.report->tail,
                    r.report->average);
      out += buf;
    } else {
      out += ",,,,\n";
    }
  }
  return out;
}

}  // namespace ltlab
