#pragma once

#include <filesystem>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ltlab/distribution.hpp"
#include "ltlab/json_util.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/metrics.hpp"
#include "ltlab/model.hpp"
#include "ltlab/trainer.hpp"

namespace ltlab {

// ---------------------------------------------------------------------------
// Strict JSON object reading: every key must be consumed, so typos in a
// config surface as errors instead of silently falling back to defaults.

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where_ + ": missing '" + key + "'");
    return j_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    const json& v = at(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (has(key)) out = get<T>(key);
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (has(key)) out = get<T>(key);
  }

  void mark(std::initializer_list<const char*> keys) {
    for (const char* k : keys) seen_.insert(k);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  /// Throws on any key that was never asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename Enum, std::size_t N>
Enum parse_enum(const std::array<std::pair<Enum, std::string_view>, N>& table, const std::string& name,
                const std::string& where) {
  for (const auto& [v, n] : table)
    if (n == name) return v;
  throw ConfigError(where + ": unknown value '" + name + "'");
}

template <typename Enum, std::size_t N>
std::string enum_name(const std::array<std::pair<Enum, std::string_view>, N>& table, Enum v) {
  for (const auto& [e, n] : table)
    if (e == v) return std::string(n);
  return "?";
}

inline constexpr std::array<std::pair<SamplerKind, std::string_view>, 3> kSamplerNames{{
    {SamplerKind::original, "original"},
    {SamplerKind::class_balanced, "class_balanced"},
    {SamplerKind::difficulty, "difficulty"},
}};

inline constexpr std::array<std::pair<OptimizerKind, std::string_view>, 2> kOptimizerNames{{
    {OptimizerKind::sgd, "sgd"},
    {OptimizerKind::adam, "adam"},
}};

inline constexpr std::array<std::pair<ClassifierKind, std::string_view>, 3> kClassifierNames{{
    {ClassifierKind::linear, "linear"},
    {ClassifierKind::cosine, "cosine"},
    {ClassifierKind::nearest_mean, "nearest_mean"},
}};

// ---------------------------------------------------------------------------
// LossSpec <-> {"kind": str, "hyper": {...}}

namespace detail {

struct HyperField {
  const char* key;
  double LossSpec::*field;
};

inline std::vector<HyperField> hyper_fields(LossKind k) {
  switch (k) {
    case LossKind::focal:
    case LossKind::focal_bce_ml:
      return {{"alpha", &LossSpec::alpha}, {"gamma", &LossSpec::gamma}};
    case LossKind::cb_ce:
      return {{"beta", &LossSpec::beta}};
    case LossKind::cb_focal:
      return {{"alpha", &LossSpec::alpha}, {"beta", &LossSpec::beta}, {"gamma", &LossSpec::gamma}};
    case LossKind::ldam:
      return {{"max_margin", &LossSpec::max_margin}, {"scale", &LossSpec::scale}};
    case LossKind::logit_adjust:
      return {{"tau", &LossSpec::tau}};
    case LossKind::vs:
      return {{"gamma", &LossSpec::vs_gamma}, {"tau", &LossSpec::vs_tau}};
    case LossKind::seql:
      return {{"q", &LossSpec::suppress_prob}, {"threshold", &LossSpec::threshold}};
    case LossKind::gcl:
      return {{"amplitude", &LossSpec::amplitude}};
    case LossKind::label_smooth_lt:
      return {{"eps_head", &LossSpec::eps_head}, {"eps_tail", &LossSpec::eps_tail}};
    default:
      return {};
  }
}

}  // namespace detail

inline json loss_spec_to_json(const LossSpec& s) {
  json hyper = json::object();
  for (const auto& f : detail::hyper_fields(s.kind)) hyper[f.key] = s.*(f.field);
  return {{"kind", std::string(to_string(s.kind))}, {"hyper", hyper}};
}

inline LossSpec loss_spec_from_json(const json& j, const std::string& where = "loss") {
  ObjectReader r(j, where);
  LossSpec s;
  const auto name = r.get<std::string>("kind");
  const auto kind = parse_loss_kind(name);
  if (!kind) throw ConfigError(where + ": unknown loss kind '" + name + "'");
  s.kind = *kind;
  if (r.has("hyper")) {
    ObjectReader h(r.at("hyper"), where + ".hyper");
    for (const auto& f : detail::hyper_fields(s.kind)) h.read(f.key, s.*(f.field));
    h.finish();
  }
  r.mark({"hyper"});
  r.finish();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// TrainConfig

inline json train_config_to_json(const TrainConfig& c) {
  json sampler = {{"kind", enum_name(kSamplerNames, c.sampler.kind)},
                  {"difficulty_floor", c.sampler.difficulty_floor},
                  {"epoch_length", c.sampler.epoch_length ? json(*c.sampler.epoch_length) : json(nullptr)}};
  json optimizer = {{"kind", enum_name(kOptimizerNames, c.optimizer.kind)},
                    {"sam", c.optimizer.sam},
                    {"lr", c.optimizer.learning_rate()},
                    {"momentum", c.optimizer.momentum},
                    {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
                    {"eps", c.optimizer.eps},
                    {"rho", c.optimizer.sam_rho}};
  json j = {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"eval_every", c.eval_every},
            {"loss", loss_spec_to_json(c.loss)},
            {"sampler", sampler},
            {"mixup", {{"enabled", c.mixup.enabled}, {"alpha", c.mixup.alpha}}},
            {"optimizer", optimizer},
            {"model",
             {{"hidden", c.model.hidden},
              {"classifier", enum_name(kClassifierNames, c.model.classifier)},
              {"temperature", c.model.temperature}}},
            {"stage2",
             {{"kind", enum_name(kStage2Names, c.stage2.kind)}, {"epochs", c.stage2.epochs}, {"tau", c.stage2.tau}}},
            {"posthoc_tau", c.posthoc_tau ? json(*c.posthoc_tau) : json(nullptr)}};
  return j;
}

inline TrainConfig train_config_from_json(const json& j, const std::string& where = "train") {
  ObjectReader r(j, where);
  TrainConfig c;
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("eval_every", c.eval_every);
  c.loss = loss_spec_from_json(r.at("loss"), where + ".loss");
  if (r.has("sampler")) {
    ObjectReader s(r.at("sampler"), where + ".sampler");
    if (s.has("kind")) c.sampler.kind = parse_enum(kSamplerNames, s.get<std::string>("kind"), s.path("kind"));
    s.mark({"kind"});
    s.read("difficulty_floor", c.sampler.difficulty_floor);
    s.read("epoch_length", c.sampler.epoch_length);
    s.finish();
    if (c.sampler.epoch_length && *c.sampler.epoch_length == 0) throw ConfigError(where + ".sampler.epoch_length must be >= 1");
  }
  if (r.has("mixup")) {
    ObjectReader m(r.at("mixup"), where + ".mixup");
    m.read("enabled", c.mixup.enabled);
    m.read("alpha", c.mixup.alpha);
    m.finish();
  }
  if (r.has("optimizer")) {
    ObjectReader o(r.at("optimizer"), where + ".optimizer");
    if (o.has("kind")) c.optimizer.kind = parse_enum(kOptimizerNames, o.get<std::string>("kind"), o.path("kind"));
    o.read("sam", c.optimizer.sam);
    o.read("lr", c.optimizer.lr);
    o.read("momentum", c.optimizer.momentum);
    if (o.has("betas")) {
      const auto b = o.get<std::vector<double>>("betas");
      if (b.size() != 2) throw ConfigError(o.path("betas") + ": expected two values");
      c.optimizer.beta1 = b[0];
      c.optimizer.beta2 = b[1];
    }
    o.mark({"kind", "betas"});
    o.read("eps", c.optimizer.eps);
    o.read("rho", c.optimizer.sam_rho);
    o.finish();
  }
  if (r.has("model")) {
    ObjectReader m(r.at("model"), where + ".model");
    m.read("hidden", c.model.hidden);
    if (m.has("classifier"))
      c.model.classifier = parse_enum(kClassifierNames, m.get<std::string>("classifier"), m.path("classifier"));
    m.read("temperature", c.model.temperature);
    m.mark({"classifier"});
    m.finish();
  }
  if (r.has("stage2")) {
    ObjectReader s(r.at("stage2"), where + ".stage2");
    if (s.has("kind")) c.stage2.kind = parse_enum(kStage2Names, s.get<std::string>("kind"), s.path("kind"));
    s.read("epochs", c.stage2.epochs);
    s.read("tau", c.stage2.tau);
    s.mark({"kind"});
    s.finish();
  }
  r.read("posthoc_tau", c.posthoc_tau);
  r.mark({"sampler", "mixup", "optimizer", "model", "stage2"});
  r.finish();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// ExperimentConfig

struct DatasetSpec {
  std::optional<SynthSpec> synth;
  /// Seed of the synthetic generator; the experiment seed when absent.
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::string> manifest_path;
  /// Pareto subsetting of a loaded manifest: (N0, r).
  std::optional<std::pair<std::int64_t, double>> pareto;
  std::optional<std::pair<std::size_t, std::size_t>> group_boundaries;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  TrainConfig train;
  std::optional<std::string> report_path;

  /// Label used in sweep tables.
  std::string method() const {
    if (!name.empty()) return name;
    std::string m(to_string(train.loss.kind));
    if (train.sampler.kind != SamplerKind::original) m += "+" + enum_name(kSamplerNames, train.sampler.kind);
    if (train.stage2.kind != Stage2Kind::none) m += "+" + enum_name(kStage2Names, train.stage2.kind);
    return m;
  }
};

/// Canonical JSON of the configuration. `report_path` is not part of it, so
/// the same experiment written to two places has one digest.
inline json experiment_config_to_json(const ExperimentConfig& c) {
  json ds = json::object();
  if (c.dataset.synth) {
    const auto& s = *c.dataset.synth;
    ds["synth"] = {{"num_classes", s.num_classes},
                   {"feature_dim", s.feature_dim},
                   {"n0", s.n0},
                   {"imbalance_ratio", s.imbalance_ratio},
                   {"class_separation", s.class_separation},
                   {"val_per_class", s.val_per_class},
                   {"test_per_class", s.test_per_class},
                   {"seed", c.dataset.synth_seed ? json(*c.dataset.synth_seed) : json(nullptr)}};
  }
  if (c.dataset.manifest_path) ds["manifest"] = *c.dataset.manifest_path;
  if (c.dataset.pareto) ds["pareto"] = {{"n0", c.dataset.pareto->first}, {"imbalance_ratio", c.dataset.pareto->second}};
  if (c.dataset.group_boundaries)
    ds["group_boundaries"] = {c.dataset.group_boundaries->first, c.dataset.group_boundaries->second};
  return {{"name", c.name}, {"seed", c.seed}, {"dataset", ds}, {"train", train_config_to_json(c.train)}};
}

inline std::string config_digest(const ExperimentConfig& c) {
  return content_digest(canonical_dump(experiment_config_to_json(c), -1));
}

/// Parses an experiment config. Relative manifest/report paths are resolved
/// against `base_dir` when it is non-empty.
inline ExperimentConfig experiment_config_from_json(const json& j, const std::string& base_dir = "") {
  ObjectReader r(j, "config");
  ExperimentConfig c;
  r.read("name", c.name);
  r.read("seed", c.seed);
  const auto resolve = [&](const std::string& p) {
    if (base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (std::filesystem::path(base_dir) / p).lexically_normal().string();
  };
  {
    ObjectReader d(r.at("dataset"), "config.dataset");
    if (d.has("synth")) {
      ObjectReader s(d.at("synth"), "config.dataset.synth");
      SynthSpec spec;
      s.read("num_classes", spec.num_classes);
      s.read("feature_dim", spec.feature_dim);
      s.read("n0", spec.n0);
      s.read("imbalance_ratio", spec.imbalance_ratio);
      s.read("class_separation", spec.class_separation);
      s.read("val_per_class", spec.val_per_class);
      s.read("test_per_class", spec.test_per_class);
      s.read("seed", c.dataset.synth_seed);
      s.finish();
      if (spec.num_classes < 2) throw ConfigError("config.dataset.synth.num_classes must be >= 2");
      if (spec.feature_dim < 2) throw ConfigError("config.dataset.synth.feature_dim must be >= 2");
      if (spec.n0 < 1) throw ConfigError("config.dataset.synth.n0 must be >= 1");
      if (!(spec.imbalance_ratio >= 1.0)) throw ConfigError("config.dataset.synth.imbalance_ratio must be >= 1");
      c.dataset.synth = spec;
    }
    if (d.has("manifest")) c.dataset.manifest_path = resolve(d.get<std::string>("manifest"));
    if (d.has("pareto")) {
      ObjectReader p(d.at("pareto"), "config.dataset.pareto");
      const auto n0 = p.get<std::int64_t>("n0");
      const auto ratio = p.get<double>("imbalance_ratio");
      p.finish();
      if (n0 < 1 || !(ratio >= 1.0)) throw ConfigError("config.dataset.pareto needs n0 >= 1 and imbalance_ratio >= 1");
      c.dataset.pareto = std::make_pair(n0, ratio);
    }
    if (d.has("group_boundaries")) {
      const auto b = d.get<std::vector<std::size_t>>("group_boundaries");
      if (b.size() != 2) throw ConfigError("config.dataset.group_boundaries: expected [h, m]");
      c.dataset.group_boundaries = std::make_pair(b[0], b[1]);
    }
    d.mark({"synth", "manifest", "pareto", "group_boundaries"});
    d.finish();
    if (c.dataset.synth.has_value() == c.dataset.manifest_path.has_value())
      throw ConfigError("config.dataset needs exactly one of 'synth' or 'manifest'");
    if (c.dataset.pareto && c.dataset.synth)
      throw ConfigError("config.dataset.pareto applies to loaded manifests; synth data is already long-tailed");
  }
  c.train = train_config_from_json(r.at("train"));
  c.train.seed = c.seed;
  c.train.group_boundaries = c.dataset.group_boundaries;
  if (r.has("report_path")) c.report_path = resolve(r.get<std::string>("report_path"));
  r.mark({"report_path"});
  r.finish();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file '" + path + "' not found");
  const json j = read_json_file(path);
  return experiment_config_from_json(j, std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows; ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

inline Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.size() != rows) throw Error("checkpoint: '" + what + "' has the wrong number of rows");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (row.size() != cols) throw Error("checkpoint: '" + what + "' row " + std::to_string(r) + " has the wrong length");
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

inline json checkpoint_to_json(const ModelState& m) {
  json j;
  j["format"] = "ltlab-checkpoint";
  j["version"] = kCheckpointVersion;
  j["shape"] = {{"input_dim", m.input_dim},
                {"num_classes", m.num_classes()},
                {"feature_dim", m.feature_dim()},
                {"hidden", m.encoder ? m.encoder->weight.rows : 0}};
  j["classifier"] = to_string(m.classifier);
  if (m.encoder)
    j["encoder"] = {{"weight", matrix_to_json(m.encoder->weight)}, {"bias", m.encoder->bias}};
  else
    j["encoder"] = nullptr;
  j["weight"] = matrix_to_json(m.weight);
  j["bias"] = m.bias;
  j["temperature"] = m.temperature;
  j["logit_scale"] = m.logit_scale;
  j["logit_offset"] = m.logit_offset;
  return j;
}

inline ModelState checkpoint_from_json(const json& j) {
  try {
    if (j.at("format") != "ltlab-checkpoint") throw Error("not an ltlab checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw Error("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    const auto& shape = j.at("shape");
    ModelState m;
    m.input_dim = shape.at("input_dim").get<std::size_t>();
    const auto k = shape.at("num_classes").get<std::size_t>();
    const auto f = shape.at("feature_dim").get<std::size_t>();
    const auto hidden = shape.at("hidden").get<std::size_t>();
    m.classifier = parse_enum(kClassifierNames, j.at("classifier").get<std::string>(), "checkpoint.classifier");
    if (hidden > 0) {
      if (f != hidden) throw Error("checkpoint: feature_dim must equal hidden width");
      Encoder e;
      e.weight = matrix_from_json(j.at("encoder").at("weight"), hidden, m.input_dim, "encoder.weight");
      e.bias = j.at("encoder").at("bias").get<std::vector<double>>();
      if (e.bias.size() != hidden) throw Error("checkpoint: encoder bias has the wrong length");
      m.encoder = std::move(e);
    } else if (f != m.input_dim) {
      throw Error("checkpoint: feature_dim must equal input_dim without an encoder");
    }
    m.weight = matrix_from_json(j.at("weight"), k, f, "weight");
    m.bias = j.at("bias").get<std::vector<double>>();
    m.temperature = j.at("temperature").get<double>();
    m.logit_scale = j.at("logit_scale").get<std::vector<double>>();
    m.logit_offset = j.at("logit_offset").get<std::vector<double>>();
    const bool wants_bias = m.classifier == ClassifierKind::linear;
    if ((wants_bias && m.bias.size() != k) || (!wants_bias && !m.bias.empty()))
      throw Error("checkpoint: bias does not match the classifier kind");
    if (m.logit_scale.size() != k || m.logit_offset.size() != k)
      throw Error("checkpoint: calibration vectors have the wrong length");
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const ModelState& m, const std::string& path) {
  write_file_atomic(path, canonical_dump(checkpoint_to_json(m)) + "\n");
}

inline ModelState load_checkpoint(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return checkpoint_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw Error("checkpoint '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

inline json group_report_to_json(const GroupReport& r) {
  json per = json::array();
  for (const auto& v : r.per_class) per.push_back(v ? json(*v) : json(nullptr));
  json j = {{"per_class", per},
            {"head", r.head},
            {"medium", r.medium},
            {"tail", r.tail},
            {"average", r.average},
            {"excluded_classes", r.excluded_classes}};
  if (r.mean_ap) j["mean_ap"] = *r.mean_ap;
  return j;
}

inline json optional_report(const std::optional<GroupReport>& r) {
  return r ? group_report_to_json(*r) : json(nullptr);
}

inline json history_to_json(const RunHistory& h) {
  json arr = json::array();
  for (const auto& e : h.epochs)
    arr.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val", optional_report(e.val)},
                   {"test", optional_report(e.test)},
                   {"weight_norms", e.weight_norms}});
  return arr;
}

inline json gaps_to_json(const CheckpointGaps& g) {
  return {{"gap_best", g.gap_best},
          {"gap_final", g.gap_final},
          {"epoch_best_val", g.epoch_best_val},
          {"epoch_best_test", g.epoch_best_test}};
}

/// Reads the per-epoch val/test averages back out of a report's history and
/// runs the gap analysis on them.
inline CheckpointGaps gaps_from_report_json(const json& report) {
  try {
    RunHistory h;
    for (const auto& e : report.at("history")) {
      EpochRecord rec;
      rec.epoch = e.at("epoch").get<int>();
      if (!e.at("val").is_null() && !e.at("test").is_null()) {
        rec.val = GroupReport{};
        rec.val->average = e.at("val").at("average").get<double>();
        rec.test = GroupReport{};
        rec.test->average = e.at("test").at("average").get<double>();
      }
      h.epochs.push_back(std::move(rec));
    }
    return checkpoint_gaps(h);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
}

}  // namespace ltlab
