// Acceptance suite. One PASS/FAIL line per criterion; exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ap_oracle.hpp"
#include "grad_check.hpp"
#include "loss_instances.hpp"
#include "ltlab/ltlab.hpp"

using namespace ltlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

LossSpec plain(LossKind kind) {
  LossSpec s;
  s.kind = kind;
  return s;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1);
  double worst = 0.0;
  std::string worst_kind;
  for (auto kind : testing::all_loss_kinds()) {
    const auto spec = testing::exercising_spec(kind);
    for (int i = 0; i < 20; ++i) {
      const auto inst = testing::random_instance(rng, is_multi_label_loss(kind));
      const Loss loss(spec, inst.dist);
      const std::uint64_t seed = rng();
      const auto f = [&](std::span<const double> z) {
        Rng r(seed);
        return loss.value(z, inst.target(), &r, true);
      };
      Rng r(seed);
      const auto analytic = loss.evaluate(inst.logits, inst.target(), &r, true).grad;
      const auto numeric = testing::central_difference(f, inst.logits, 1e-5);
      const double err = testing::relative_error(analytic, numeric);
      if (err > worst) {
        worst = err;
        worst_kind = std::string(to_string(kind));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 5.0,
          fmt("max rel err %.3g", worst) + " (" + worst_kind + ")" + fmt(", %.2f s", secs)};
}

Outcome degenerate_suite() {
  struct Case {
    const char* name;
    LossSpec spec;
    bool uniform;
  };
  std::vector<Case> cases;
  auto s = plain(LossKind::focal);
  s.gamma = 0.0;
  s.alpha = 1.0;
  cases.push_back({"focal", s, false});
  s = plain(LossKind::cb_ce);
  s.beta = 0.0;
  cases.push_back({"cb_ce", s, false});
  s = plain(LossKind::logit_adjust);
  s.tau = 0.0;
  cases.push_back({"logit_adjust", s, false});
  s = plain(LossKind::vs);
  s.vs_gamma = 0.0;
  s.vs_tau = 0.0;
  cases.push_back({"vs", s, false});
  s = plain(LossKind::seql);
  s.suppress_prob = 0.0;
  cases.push_back({"seql", s, false});
  s = plain(LossKind::gcl);
  s.amplitude = 0.0;
  cases.push_back({"gcl", s, false});
  s = plain(LossKind::label_smooth_lt);
  s.eps_head = s.eps_tail = 0.0;
  cases.push_back({"label_smooth_lt", s, false});
  cases.push_back({"balanced_softmax", plain(LossKind::balanced_softmax), true});

  double worst = 0.0;
  const auto track = [&](const LossResult& a, const LossResult& b) {
    worst = std::max(worst, std::abs(a.value - b.value));
    for (std::size_t k = 0; k < a.grad.size(); ++k) worst = std::max(worst, std::abs(a.grad[k] - b.grad[k]));
  };
  for (const auto& c : cases) {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
      const auto inst = testing::random_instance(rng, false, c.uniform);
      Rng r1(i), r2(i);
      track(Loss(c.spec, inst.dist).evaluate(inst.logits, inst.target(), &r1, true),
            Loss(plain(LossKind::ce), inst.dist).evaluate(inst.logits, inst.target(), &r2, true));
    }
  }
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto inst = testing::random_instance(rng, false);
    track(Loss(plain(LossKind::prior_ce), inst.dist).evaluate(inst.logits, inst.target(), nullptr, true),
          Loss(plain(LossKind::balanced_softmax), inst.dist).evaluate(inst.logits, inst.target(), nullptr, true));
  }
  return {worst <= 1e-12, fmt("max abs diff %.3g over value and gradient", worst)};
}

Outcome pareto_suite() {
  if (pareto_targets(1000, 3, 100) != std::vector<std::int64_t>{1000, 100, 10})
    return {false, "pareto_targets(1000, 3, 100) mismatch"};
  Rng rng(3);
  std::uniform_real_distribution<double> ratio(1.0, 500.0);
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t n0 = 1 + static_cast<std::int64_t>(rng() % 5000);
    const std::size_t k = 2 + rng() % 50;
    const auto t = pareto_targets(n0, k, ratio(rng));
    for (std::size_t c = 1; c < t.size(); ++c)
      if (t[c] > t[c - 1]) return {false, "targets increase"};
  }
  for (int i = 0; i < 20; ++i) {
    SynthSpec s;
    s.num_classes = 2 + rng() % 8;
    s.feature_dim = 2;
    s.n0 = 60;
    s.imbalance_ratio = 1.0;
    s.val_per_class = 0;
    s.test_per_class = 0;
    s.seed = rng();
    const auto full = synth_gaussian(s);
    const auto targets = pareto_targets(1 + static_cast<std::int64_t>(rng() % 60), s.num_classes, ratio(rng));
    const auto sub = subsample_longtail(full, targets, rng());
    if (split_distribution(sub, Split::train).counts != targets) return {false, "subsample counts differ"};
  }
  return {true, "exact targets, monotone on 1000 draws, subsample counts exact"};
}

Outcome group_protocol() {
  const double avg = group_average(79.00, 60.67, 38.33);
  return {std::abs(avg - 59.33) <= 0.005, fmt("average %.4f", avg)};
}

Outcome sampler_balance() {
  Manifest m;
  m.num_classes = 2;
  m.feature_dim = 1;
  for (int i = 0; i < 100; ++i) {
    Record r;
    r.id = std::to_string(i);
    r.features = {0.0};
    r.label = i < 99 ? 0 : 1;
    r.split = Split::train;
    m.records.push_back(r);
  }
  SamplerSpec spec;
  spec.kind = SamplerKind::class_balanced;
  Sampler sampler(spec, m);
  Rng rng(5);
  const auto idx = sampler.next_indices(100000, rng);
  double tail = 0.0;
  for (auto i : idx) tail += m.records[i].label;
  const double f1 = tail / static_cast<double>(idx.size());
  return {std::abs(f1 - 0.5) <= 0.01 && std::abs((1.0 - f1) - 0.5) <= 0.01, fmt("frequencies %.4f / %.4f", 1 - f1, f1)};
}

Outcome map_oracle() {
  Rng rng(6);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int c = 0; c < 500; ++c) {
    const std::size_t n = 1 + rng() % 8;
    const std::size_t k = 1 + rng() % 3;
    std::vector<std::vector<double>> cols(k);
    for (auto& col : cols) col = testing::tie_prone_scores(n, rng);
    for (const auto& col : cols) {
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        std::vector<int> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = (mask >> i) & 1u;
        const auto got = average_precision(col, t);
        const auto want = testing::brute_ap(col, t);
        if (got.has_value() != want.has_value()) return {false, "defined/undefined mismatch"};
        if (want) worst = std::max(worst, std::abs(*got - *want));
        ++checked;
      }
    }
    Matrix scores(n, k);
    std::vector<std::vector<int>> truths(n, std::vector<int>(k));
    double sum = 0.0;
    int labels = 0;
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<int> t(n);
      for (std::size_t i = 0; i < n; ++i) {
        scores(i, j) = cols[j][i];
        t[i] = truths[i][j] = static_cast<int>(rng() & 1u);
      }
      if (const auto ap = testing::brute_ap(cols[j], t)) {
        sum += *ap;
        ++labels;
      }
    }
    if (labels > 0) worst = std::max(worst, std::abs(mean_average_precision(scores, truths) - sum / labels));
  }
  return {worst <= 1e-12, fmt("max abs diff %.3g over %.0f assignments", worst, static_cast<double>(checked))};
}

Outcome tau_norm() {
  Rng rng(9);
  double worst = 0.0;
  bool identity = true;
  for (int i = 0; i < 50; ++i) {
    const auto m = init_model(5, 2 + rng() % 9, 0, ClassifierKind::linear, 16.0, rng, 1.0 + (rng() % 10));
    for (double n : weight_norms(tau_normalize(m, 1.0))) worst = std::max(worst, std::abs(n - 1.0));
    identity = identity && tau_normalize(m, 0.0).weight.data == m.weight.data;
  }
  return {worst <= 1e-12 && identity, fmt("max |norm - 1| %.3g", worst) + (identity ? ", tau=0 identity" : ", tau=0 changed weights")};
}

ExperimentConfig desk_config(std::uint64_t seed) {
  ExperimentConfig c;
  SynthSpec s;  // K=10, d=16, N0=1000, r=100, 100/class val and test
  s.num_classes = 10;
  s.feature_dim = 16;
  s.n0 = 1000;
  s.imbalance_ratio = 100.0;
  s.val_per_class = 100;
  s.test_per_class = 100;
  c.dataset.synth = s;
  c.seed = seed;
  c.train.seed = seed;
  c.train.epochs = 30;
  c.train.eval_every = 30;
  c.train.loss.kind = LossKind::ce;
  return c;
}

Outcome desk_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kSeeds = 5;
  int tail_lowest = 0;
  double erm_head = 0.0, erm_tail = 0.0, cb_head = 0.0, cb_tail = 0.0, bs_head = 0.0, bs_tail = 0.0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    auto erm = desk_config(seed);
    auto cb = erm;
    cb.train.sampler.kind = SamplerKind::class_balanced;
    auto bs = erm;
    bs.train.loss.kind = LossKind::balanced_softmax;
    const auto e = *run_experiment(erm).final_test;
    const auto c = *run_experiment(cb).final_test;
    const auto b = *run_experiment(bs).final_test;
    if (e.tail < e.head && e.tail < e.medium) ++tail_lowest;
    erm_head += e.head / kSeeds;
    erm_tail += e.tail / kSeeds;
    cb_head += c.head / kSeeds;
    cb_tail += c.tail / kSeeds;
    bs_head += b.head / kSeeds;
    bs_tail += b.tail / kSeeds;
  }
  const double secs = seconds_since(t0);
  const bool a = tail_lowest >= 4;
  const bool cb_ok = cb_tail - erm_tail >= 10.0 && erm_head - cb_head <= 20.0;
  const bool bs_ok = bs_tail - erm_tail >= 10.0 && erm_head - bs_head <= 20.0;
  std::string detail = fmt("erm tail lowest %.0f/5; tail erm %.2f cb %.2f bs %.2f", tail_lowest, erm_tail, cb_tail,
                           bs_tail) +
                       fmt("; head erm %.2f cb %.2f bs %.2f", erm_head, cb_head, bs_head) + fmt("; %.1f s", secs);
  return {a && (cb_ok || bs_ok) && secs < 120.0, detail};
}

Outcome weight_norm_trend() {
  constexpr int kSeeds = 5;
  double corr = 0.0;
  bool crt_all = true, tau_all = true;
  std::string cvs;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    auto cfg = desk_config(seed);
    cfg.train.stage2.kind = Stage2Kind::crt;
    const auto rep = run_experiment(cfg);
    const auto norms = weight_norms(rep.stage1_model);
    corr += norm_count_correlation(rep.train_distribution, norms) / kSeeds;
    const double cv1 = coefficient_of_variation(norms);
    const double cv_crt = coefficient_of_variation(weight_norms(rep.model));
    const double cv_tau = coefficient_of_variation(weight_norms(tau_normalize(rep.stage1_model, 1.0)));
    crt_all = crt_all && cv_crt < cv1;
    tau_all = tau_all && cv_tau < cv1;
    cvs += fmt(" %.3f>%.3f", cv1, cv_crt);
  }
  return {corr > 0.5 && (crt_all || tau_all),
          fmt("mean pearson %.3f; cv stage1>crt", corr) + cvs + (crt_all ? "" : " (crt not all lower)") +
              (tau_all ? "; tau-norm lower in every seed" : "; tau-norm not lower")};
}

Outcome checkpoint_gap_suite() {
  const std::vector<double> val{60, 70, 65}, test{55, 68, 66};
  const auto g = checkpoint_gaps(val, test);
  if (g.gap_best != 0.0 || g.gap_final != 2.0) return {false, fmt("gap_best %g gap_final %g", g.gap_best, g.gap_final)};
  Rng rng(10);
  std::uniform_real_distribution<double> acc(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng() % 30;
    std::vector<double> v(n), t(n);
    for (std::size_t e = 0; e < n; ++e) {
      v[e] = acc(rng);
      t[e] = acc(rng);
    }
    if (checkpoint_gaps(v, t).gap_best < 0.0) return {false, "negative gap_best"};
  }
  return {true, "hand-built history exact, gap_best >= 0 on 1000 histories"};
}

ExperimentConfig small_config(LossKind loss, std::uint64_t seed) {
  auto c = desk_config(seed);
  c.dataset.synth->num_classes = 6;
  c.dataset.synth->feature_dim = 6;
  c.dataset.synth->n0 = 200;
  c.dataset.synth->val_per_class = 20;
  c.dataset.synth->test_per_class = 20;
  c.train.epochs = 4;
  c.train.eval_every = 1;
  c.train.loss.kind = loss;
  return c;
}

Outcome determinism() {
  std::vector<ExperimentConfig> configs;
  for (auto loss : {LossKind::ce, LossKind::seql, LossKind::gcl, LossKind::ldam, LossKind::label_smooth_lt})
    configs.push_back(small_config(loss, 11));
  configs[1].train.mixup.enabled = true;
  configs[2].train.sampler.kind = SamplerKind::difficulty;
  configs[2].train.optimizer.sam = true;
  configs[3].train.stage2.kind = Stage2Kind::lws;
  configs[4].train.model.hidden = 8;
  configs[4].train.optimizer.kind = OptimizerKind::adam;
  for (const auto& c : configs)
    if (run_report_bytes(run_experiment(c)) != run_report_bytes(run_experiment(c)))
      return {false, "report bytes differ for " + c.method()};
  const auto serial = sweep_csv(run_sweep(configs, 1));
  const auto parallel = sweep_csv(run_sweep(configs, 4));
  if (serial != parallel) return {false, "sweep csv depends on parallelism"};
  return {true, "5 configs byte-identical; sweep csv equal at parallelism 1 and 4"};
}

Outcome sam_collapse() {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    auto base = small_config(LossKind::seql, 12);
    base.train.epochs = 10;
    base.train.optimizer.kind = kind;
    auto sam = base;
    sam.train.optimizer.sam = true;
    sam.train.optimizer.sam_rho = 0.0;
    const auto a = run_experiment(base);
    const auto b = run_experiment(sam);
    if (canonical_dump(checkpoint_to_json(a.model)) != canonical_dump(checkpoint_to_json(b.model)))
      return {false, "final weights differ"};
    if (canonical_dump(history_to_json(a.history)) != canonical_dump(history_to_json(b.history)))
      return {false, "histories differ"};
  }
  return {true, "sgd and adam: weights and 10-epoch history bit-identical"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"degenerate equivalences", degenerate_suite},
      {"pareto construction", pareto_suite},
      {"group average arithmetic", group_protocol},
      {"class-balanced sampler frequencies", sampler_balance},
      {"average precision oracle", map_oracle},
      {"tau normalization", tau_norm},
      {"desk-scale group trend", desk_trend},
      {"weight norm trend", weight_norm_trend},
      {"checkpoint gaps", checkpoint_gap_suite},
      {"determinism", determinism},
      {"sam with zero radius", sam_collapse},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, fn] : criteria) {
    ++n;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%d criteria passed\n", n - failed, n);
  return failed == 0 ? 0 : 1;
}
