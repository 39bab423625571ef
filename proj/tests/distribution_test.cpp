#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "ltlab/distribution.hpp"
#include "ltlab/manifest_io.hpp"

namespace ltlab {
namespace {

Manifest blocks_manifest(const std::vector<int>& per_class, int val_per_class = 2) {
  Manifest m;
  m.num_classes = per_class.size();
  m.feature_dim = 2;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (int i = 0; i < per_class[c]; ++i)
      m.records.push_back({"tr-" + std::to_string(c) + "-" + std::to_string(i), {double(c), double(i)},
                           int(c), {}, Split::train});
    for (int i = 0; i < val_per_class; ++i)
      m.records.push_back({"va-" + std::to_string(c) + "-" + std::to_string(i), {double(c), -1.0}, int(c), {},
                           Split::val});
  }
  return m;
}

TEST(ComputeDistribution, CountsAndFrequencies) {
  const std::vector<int> labels{0, 0, 0, 1};
  const auto d = compute_distribution(labels, 2);
  EXPECT_EQ(d.counts, (std::vector<std::int64_t>{3, 1}));
  EXPECT_EQ(d.total, 4);
  EXPECT_DOUBLE_EQ(d.frequencies[0], 0.75);
  EXPECT_DOUBLE_EQ(d.frequencies[1], 0.25);
  EXPECT_DOUBLE_EQ(d.imbalance_ratio(), 3.0);
}

TEST(ComputeDistribution, BalancedHasRatioOne) {
  const std::vector<int> labels{0, 1};
  const auto d = compute_distribution(labels, 2);
  EXPECT_DOUBLE_EQ(d.frequencies[0], 0.5);
  EXPECT_DOUBLE_EQ(d.imbalance_ratio(), 1.0);
}

TEST(ComputeDistribution, RatioFromCounts) {
  const auto d = ClassDistribution::from_counts({1000, 100, 10});
  EXPECT_DOUBLE_EQ(d.imbalance_ratio(), 100.0);
}

TEST(ComputeDistribution, EmptyIsAnError) {
  EXPECT_THROW(compute_distribution(std::vector<int>{}, 3), Error);
}

TEST(ComputeDistribution, LabelOutOfRange) {
  EXPECT_THROW(compute_distribution(std::vector<int>{0, 3}, 3), Error);
}

TEST(ComputeDistribution, ZeroCountClassIsFlagged) {
  const auto d = compute_distribution(std::vector<int>{0, 0, 2}, 3);
  EXPECT_EQ(d.empty_classes, (std::vector<std::size_t>{1}));
  EXPECT_TRUE(std::isinf(d.imbalance_ratio()));
}

TEST(ComputeDistribution, InvariantsOnRandomLabels) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng() % 12;
    std::vector<int> labels(1 + rng() % 300);
    for (auto& y : labels) y = static_cast<int>(rng() % k);
    const auto d = compute_distribution(labels, k);
    EXPECT_EQ(std::accumulate(d.counts.begin(), d.counts.end(), std::int64_t{0}), d.total);
    EXPECT_NEAR(std::accumulate(d.frequencies.begin(), d.frequencies.end(), 0.0), 1.0, 1e-12);
    std::vector<std::size_t> sorted = d.rank_order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t c = 0; c < k; ++c) ASSERT_EQ(sorted[c], c);
    for (std::size_t i = 1; i < k; ++i) {
      const auto a = d.rank_order[i - 1], b = d.rank_order[i];
      ASSERT_GE(d.counts[a], d.counts[b]);
      if (d.counts[a] == d.counts[b]) {
        ASSERT_LT(a, b);
      }
    }
  }
}

TEST(ParetoTargets, ExactPowersOfTen) {
  EXPECT_EQ(pareto_targets(1000, 3, 100.0), (std::vector<std::int64_t>{1000, 100, 10}));
}

TEST(ParetoTargets, RatioOneIsBalanced) {
  EXPECT_EQ(pareto_targets(500, 2, 1.0), (std::vector<std::int64_t>{500, 500}));
}

TEST(ParetoTargets, EightClassesMatchHighPrecisionFloor) {
  // floor(100 * 100^(-c/7)) evaluated with 40-digit arithmetic.
  EXPECT_EQ(pareto_targets(100, 8, 100.0), (std::vector<std::int64_t>{100, 51, 26, 13, 7, 3, 1, 1}));
}

TEST(ParetoTargets, TenClassesMatchHighPrecisionFloor) {
  EXPECT_EQ(pareto_targets(1000, 10, 100.0),
            (std::vector<std::int64_t>{1000, 599, 359, 215, 129, 77, 46, 27, 16, 10}));
}

TEST(ParetoTargets, RejectsBadParameters) {
  EXPECT_THROW(pareto_targets(100, 1, 10.0), Error);
  EXPECT_THROW(pareto_targets(100, 4, 0.5), Error);
  EXPECT_THROW(pareto_targets(0, 4, 10.0), Error);
}

TEST(ParetoTargets, MonotoneAndRatioExactWhenIntegral) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 2 + rng() % 30;
    const std::int64_t r = 1 + static_cast<std::int64_t>(rng() % 50);
    const std::int64_t n0 = r * (1 + static_cast<std::int64_t>(rng() % 40));
    const auto t = pareto_targets(n0, k, static_cast<double>(r));
    for (std::size_t c = 1; c < k; ++c) ASSERT_LE(t[c], t[c - 1]);
    ASSERT_EQ(t.front(), n0);
    ASSERT_EQ(t.back(), n0 / r) << "n0=" << n0 << " r=" << r << " k=" << k;
  }
}

TEST(SubsampleLongtail, IdentityTargetsKeepEverything) {
  const auto m = blocks_manifest({5, 4, 3});
  const std::vector<std::int64_t> targets{5, 4, 3};
  const auto out = subsample_longtail(m, targets, 3);
  EXPECT_EQ(out.records, m.records);
}

TEST(SubsampleLongtail, DeterministicForSeed) {
  const auto m = blocks_manifest({30, 30, 30});
  const std::vector<std::int64_t> targets{20, 7, 2};
  const auto a = subsample_longtail(m, targets, 99);
  const auto b = subsample_longtail(m, targets, 99);
  EXPECT_EQ(a, b);
  const auto c = subsample_longtail(m, targets, 100);
  EXPECT_NE(a.records, c.records);
}

TEST(SubsampleLongtail, ProducesExactTargetsAndKeepsEvalSplits) {
  const auto m = blocks_manifest({50, 50, 50}, 4);
  const std::vector<std::int64_t> targets{50, 5, 1};
  const auto out = subsample_longtail(m, targets, 1);
  EXPECT_EQ(split_distribution(out, Split::train).counts, targets);
  EXPECT_EQ(out.indices(Split::val).size(), 12u);
}

TEST(SubsampleLongtail, ShortfallNamesClass) {
  const auto m = blocks_manifest({10, 2});
  const std::vector<std::int64_t> targets{5, 4};
  try {
    subsample_longtail(m, targets, 0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("short by 2"), std::string::npos);
  }
}

TEST(SubsampleLongtail, RejectsMultiLabel) {
  Manifest m;
  m.num_classes = 2;
  m.feature_dim = 1;
  m.task = TaskKind::multi_label;
  m.records.push_back({"a", {0.0}, -1, {1, 1}, Split::train});
  const std::vector<std::int64_t> targets{1, 1};
  try {
    subsample_longtail(m, targets, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "Pareto subsetting defined for single-label only");
  }
}

TEST(SubsampleLongtail, ComposedWithDistributionGivesTargets) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> sizes(2 + rng() % 6);
    for (auto& s : sizes) s = 1 + static_cast<int>(rng() % 40);
    const auto m = blocks_manifest(sizes, 1);
    std::vector<std::int64_t> targets(sizes.size());
    for (std::size_t c = 0; c < sizes.size(); ++c) targets[c] = static_cast<std::int64_t>(rng() % (sizes[c] + 1));
    targets[0] = std::max<std::int64_t>(targets[0], 1);
    const auto out = subsample_longtail(m, targets, rng());
    ASSERT_EQ(split_distribution(out, Split::train).counts, targets);
  }
}

TEST(GroupSplit, IsicEightClasses) {
  const auto d = ClassDistribution::from_counts({800, 400, 200, 100, 50, 25, 12, 8});
  const auto g = group_split(d, {2, 5});
  EXPECT_EQ(g.head.size(), 2u);
  EXPECT_EQ(g.medium.size(), 3u);
  EXPECT_EQ(g.tail.size(), 3u);
}

TEST(GroupSplit, OneClassPerGroup) {
  const auto d = ClassDistribution::from_counts({1, 5, 3});
  const auto g = group_split(d, {1, 2});
  EXPECT_EQ(g.head, (std::vector<std::size_t>{1}));
  EXPECT_EQ(g.medium, (std::vector<std::size_t>{2}));
  EXPECT_EQ(g.tail, (std::vector<std::size_t>{0}));
}

TEST(GroupSplit, TiesBrokenByLowerIndex) {
  const auto d = ClassDistribution::from_counts({10, 10, 5, 1});
  const auto g = group_split(d, {1, 2});
  EXPECT_EQ(g.head, (std::vector<std::size_t>{0}));
  EXPECT_EQ(g.medium, (std::vector<std::size_t>{1}));
  const auto g2 = group_split(d, {2, 3});
  EXPECT_EQ((std::set<std::size_t>(g2.head.begin(), g2.head.end())), (std::set<std::size_t>{0, 1}));
}

TEST(GroupSplit, RejectsBadBoundaries) {
  const auto d = ClassDistribution::from_counts({3, 2, 1});
  EXPECT_THROW(group_split(d, {0, 2}), Error);
  EXPECT_THROW(group_split(d, {2, 2}), Error);
  EXPECT_THROW(group_split(d, {1, 4}), Error);
}

TEST(GroupSplit, PartitionsAllClasses) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng() % 40;
    std::vector<std::int64_t> counts(k);
    for (auto& c : counts) c = 1 + static_cast<std::int64_t>(rng() % 100);
    const auto d = ClassDistribution::from_counts(counts);
    const std::size_t h = 1 + rng() % (k - 1);
    const std::size_t m = h + 1 + rng() % (k - h);
    const auto g = group_split(d, {h, m});
    std::vector<int> seen(k, 0);
    for (int grp = 0; grp < 3; ++grp)
      for (auto c : g.group(grp)) ++seen[c];
    for (std::size_t c = 0; c < k; ++c) ASSERT_EQ(seen[c], 1);
  }
}

TEST(LabelCardinality, Examples) {
  Manifest m;
  m.num_classes = 3;
  m.feature_dim = 1;
  m.task = TaskKind::multi_label;
  m.records = {{"a", {0.0}, -1, {1, 0, 1}, Split::train}, {"b", {0.0}, -1, {0, 1, 0}, Split::train}};
  EXPECT_DOUBLE_EQ(label_cardinality(m), 1.5);
  m.records = {{"a", {0.0}, -1, {0, 0, 0}, Split::train}};
  EXPECT_DOUBLE_EQ(label_cardinality(m), 0.0);
  m.records = {{"a", {0.0}, -1, {1, 0, 0}, Split::train},
               {"b", {0.0}, -1, {1, 1, 0}, Split::val},
               {"c", {0.0}, -1, {1, 1, 1}, Split::test}};
  EXPECT_DOUBLE_EQ(label_cardinality(m), 2.0);
}

TEST(LabelCardinality, SingleLabelRejected) {
  EXPECT_THROW(label_cardinality(blocks_manifest({2, 2})), Error);
}

TEST(SynthGaussian, BalancedTwoBlobs) {
  SynthSpec s;
  s.num_classes = 2;
  s.feature_dim = 2;
  s.n0 = 50;
  s.imbalance_ratio = 1.0;
  s.val_per_class = 10;
  s.test_per_class = 20;
  const auto m = synth_gaussian(s);
  EXPECT_EQ(split_distribution(m, Split::train).counts, (std::vector<std::int64_t>{50, 50}));
  EXPECT_EQ(split_distribution(m, Split::val).counts, (std::vector<std::int64_t>{10, 10}));
  EXPECT_EQ(split_distribution(m, Split::test).counts, (std::vector<std::int64_t>{20, 20}));
  EXPECT_NO_THROW(m.validate());
}

TEST(SynthGaussian, DeterministicBytes) {
  SynthSpec s;
  s.num_classes = 4;
  s.n0 = 40;
  s.imbalance_ratio = 10;
  s.seed = 17;
  EXPECT_EQ(write_manifest_jsonl(synth_gaussian(s)), write_manifest_jsonl(synth_gaussian(s)));
  auto s2 = s;
  s2.seed = 18;
  EXPECT_NE(write_manifest_jsonl(synth_gaussian(s)), write_manifest_jsonl(synth_gaussian(s2)));
}

TEST(SynthGaussian, TrainCountsFollowPareto) {
  SynthSpec s;
  s.num_classes = 10;
  s.n0 = 1000;
  s.imbalance_ratio = 100;
  const auto m = synth_gaussian(s);
  const auto d = split_distribution(m, Split::train);
  EXPECT_EQ(d.counts, pareto_targets(1000, 10, 100.0));
  EXPECT_NEAR(static_cast<double>(d.counts.front()) / static_cast<double>(d.counts.back()), 100.0, 10.0);
}

TEST(SynthGaussian, SampleMeansNearGenerator) {
  SynthSpec s;
  s.num_classes = 3;
  s.feature_dim = 4;
  s.n0 = 2000;
  s.imbalance_ratio = 1;
  s.class_separation = 5;
  const auto m = synth_gaussian(s);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> mean(4, 0.0);
    int n = 0;
    for (const auto& r : m.records)
      if (r.split == Split::train && r.label == int(c)) {
        for (int j = 0; j < 4; ++j) mean[j] += r.features[j];
        ++n;
      }
    const auto mu = synth_class_mean(s, c);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(mean[j] / n, mu[j], 0.1);
    EXPECT_NEAR(l2_norm(mu), 5.0, 1e-12);
  }
}

TEST(SynthGaussian, ParameterValidation) {
  SynthSpec s;
  s.num_classes = 1;
  EXPECT_THROW(synth_gaussian(s), Error);
  s.num_classes = 3;
  s.feature_dim = 1;
  EXPECT_THROW(synth_gaussian(s), Error);
}

TEST(ManifestJsonl, RoundTripSingleAndMulti) {
  SynthSpec s;
  s.num_classes = 3;
  s.n0 = 8;
  s.imbalance_ratio = 4;
  s.val_per_class = 2;
  s.test_per_class = 2;
  const auto m = synth_gaussian(s);
  std::istringstream in(write_manifest_jsonl(m));
  EXPECT_EQ(parse_manifest_jsonl(in), m);

  Manifest ml;
  ml.num_classes = 2;
  ml.feature_dim = 2;
  ml.task = TaskKind::multi_label;
  ml.records = {{"x", {0.1, 0.2}, -1, {1, 0}, Split::train}, {"y", {1e-300, -3.5}, -1, {1, 1}, Split::test}};
  std::istringstream in2(write_manifest_jsonl(ml));
  EXPECT_EQ(parse_manifest_jsonl(in2), ml);
}

TEST(ManifestJsonl, RejectsRecordsViolatingHeader) {
  const std::string header = R"({"num_classes":2,"feature_dim":2,"task":"single"})";
  const auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_manifest_jsonl(in);
  };
  EXPECT_THROW(parse(header + "\n" + R"({"id":"a","features":[1],"label":0,"split":"train"})"), Error);
  EXPECT_THROW(parse(header + "\n" + R"({"id":"a","features":[1,2],"label":2,"split":"train"})"), Error);
  EXPECT_THROW(parse(header + "\n" + R"({"id":"a","features":[1,2],"label":0,"split":"dev"})"), Error);
  EXPECT_THROW(parse(header + "\n" + R"({"id":"a","features":[1,2],"labels":[0,1],"split":"train"})"), Error);
  EXPECT_THROW(parse(R"({"id":"a","features":[1,2],"label":0,"split":"train"})"), Error);
  const std::string multi = R"({"num_classes":2,"feature_dim":1,"task":"multi"})";
  EXPECT_THROW(parse(multi + "\n" + R"({"id":"a","features":[1],"labels":[0,2],"split":"train"})"), Error);
  EXPECT_THROW(parse(multi + "\n" + R"({"id":"a","features":[1],"labels":[0],"split":"train"})"), Error);
  EXPECT_NO_THROW(parse(multi + "\n" + R"({"id":"a","features":[1],"labels":[0,1],"split":"train"})"));
}

}  // namespace
}  // namespace ltlab
