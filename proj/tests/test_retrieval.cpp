#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "gem/retrieval.hpp"
#include "test_support.hpp"

using namespace gem;

namespace {

DescriptorVector unit(std::vector<double> v) { return l2_normalize(DescriptorVector(std::move(v))); }

DescriptorIndex random_index(Rng& rng, std::size_t n, std::size_t dim) {
  DescriptorIndex index(dim);
  for (ImageId i = 0; i < n; ++i) index.add(i, tu::random_unit(rng, dim));
  return index;
}

RankedList ranking_of(const std::vector<bool>& pattern) {
  RankedList r;
  for (std::size_t i = 0; i < pattern.size(); ++i) r.push_back({i, 1.0 - 0.001 * static_cast<double>(i)});
  return r;
}

double oracle_ap(const std::vector<bool>& pattern) {
  double total = 0.0;
  std::size_t relevant = 0;
  for (bool b : pattern) relevant += b;
  for (std::size_t r = 0; r < pattern.size(); ++r) {
    if (!pattern[r]) continue;
    std::size_t hits = 0;
    for (std::size_t i = 0; i <= r; ++i) hits += pattern[i];
    total += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return total / static_cast<double>(relevant);
}

}  // namespace

TEST(Search, Examples) {
  DescriptorIndex index(2);
  index.add(7, unit({0.1, std::sqrt(1 - 0.01)}));
  index.add(3, unit({0.9, std::sqrt(1 - 0.81)}));
  index.add(5, unit({0.5, std::sqrt(1 - 0.25)}));
  const RankedList r = search(index, unit({1, 0}));
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, 3u);
  EXPECT_EQ(r[1].id, 5u);
  EXPECT_EQ(r[2].id, 7u);
  EXPECT_NEAR(r[0].score, 0.9, 1e-12);

  DescriptorIndex orth(3);
  orth.add(9, unit({1, 0, 0}));
  orth.add(2, unit({0, 1, 0}));
  const RankedList o = search(orth, unit({0, 0, 1}));
  EXPECT_EQ(o[0].id, 2u);
  EXPECT_EQ(o[1].id, 9u);
  EXPECT_EQ(o[0].score, 0.0);

  const RankedList self = search(orth, unit({1, 0, 0}));
  EXPECT_EQ(self[0].id, 9u);
  EXPECT_DOUBLE_EQ(self[0].score, 1.0);
  EXPECT_THROW(search(orth, unit({1, 0})), DimensionMismatch);
}

TEST(Search, ExhaustiveAndSorted) {
  Rng rng(70);
  const DescriptorIndex index = random_index(rng, 200, 8);
  for (int t = 0; t < 20; ++t) {
    const RankedList r = search(index, tu::random_unit(rng, 8));
    ASSERT_EQ(r.size(), 200u);
    std::set<ImageId> seen;
    for (std::size_t i = 0; i < r.size(); ++i) {
      seen.insert(r[i].id);
      if (i > 0) EXPECT_GE(r[i - 1].score, r[i].score);
    }
    EXPECT_EQ(seen.size(), 200u);
  }
}

TEST(Index, AddErrorsAndFile) {
  DescriptorIndex index(2);
  index.add(1, unit({1, 1}));
  EXPECT_THROW(index.add(1, unit({1, 0})), InvalidArgument);
  EXPECT_THROW(index.add(2, unit({1, 0, 0})), DimensionMismatch);
  EXPECT_THROW(index.descriptor(4), InvalidArgument);
  index.add(1ull << 40, unit({0.6, 0.8}));

  tu::TempDir dir("index");
  index.save(dir / "i.bin");
  const DescriptorIndex back = DescriptorIndex::load(dir / "i.bin");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.dim(), 2u);
  EXPECT_EQ(back.entries()[1].id, 1ull << 40);
  EXPECT_NEAR(back.descriptor(1ull << 40)[1], 0.8, 1e-7);
  std::filesystem::resize_file(dir / "i.bin", 30);
  EXPECT_THROW(DescriptorIndex::load(dir / "i.bin"), FormatError);
}

TEST(QueryExpansion, AverageExamples) {
  Rng rng(71);
  const DescriptorIndex index = random_index(rng, 30, 4);
  const DescriptorVector q = tu::random_unit(rng, 4);
  const RankedList initial = search(index, q);
  const RankedList zero = average_qe(index, q, initial, {0, 3.0});
  for (std::size_t i = 0; i < initial.size(); ++i) {
    EXPECT_EQ(zero[i].id, initial[i].id);
    EXPECT_NEAR(zero[i].score, initial[i].score, 1e-12);
  }

  DescriptorIndex copies(2);
  const DescriptorVector c = unit({0.6, 0.8});
  copies.add(0, c);
  copies.add(1, c);
  copies.add(2, unit({1, 0}));
  const RankedList r = average_qe(copies, c, search(copies, c), {2, 3.0});
  EXPECT_EQ(r[0].id, 0u);
  EXPECT_NEAR(r[0].score, 1.0, 1e-12);
  EXPECT_EQ(r[2].id, 2u);

  EXPECT_THROW(average_qe(DescriptorIndex(2), c, {}, {}), InvalidArgument);
}

TEST(QueryExpansion, HandComputedFixture) {
  // q = e1; a has similarity 0.9, b 0.1 with q.
  DescriptorIndex index(2);
  const DescriptorVector a = unit({0.9, std::sqrt(1 - 0.81)});
  const DescriptorVector b = unit({0.1, -std::sqrt(1 - 0.01)});
  const DescriptorVector c = unit({0.0, 1.0});
  index.add(1, a);
  index.add(2, b);
  index.add(3, c);
  const DescriptorVector q = unit({1, 0});
  const RankedList initial = search(index, q);
  ASSERT_EQ(initial[0].id, 1u);
  ASSERT_EQ(initial[1].id, 2u);

  const RankedList r = alpha_qe(index, q, initial, {2, 3.0});
  const double w1 = std::pow(0.9, 3), w2 = std::pow(0.1, 3);
  EXPECT_NEAR(w1, 0.729, 1e-12);
  DescriptorVector e({1 + w1 * a[0] + w2 * b[0], w1 * a[1] + w2 * b[1]});
  e = l2_normalize(e);
  std::vector<std::pair<double, ImageId>> expect{
      {-inner_product(e, a), 1}, {-inner_product(e, b), 2}, {-inner_product(e, c), 3}};
  std::sort(expect.begin(), expect.end());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r[i].id, expect[i].second);
    EXPECT_NEAR(r[i].score, -expect[i].first, 1e-12);
  }

  const RankedList avg = average_qe(index, q, initial, {2, 0.0});
  const DescriptorVector ea = l2_normalize(DescriptorVector({1 + a[0] + b[0], a[1] + b[1]}));
  EXPECT_NEAR(avg[0].score, std::max({inner_product(ea, a), inner_product(ea, b), inner_product(ea, c)}), 1e-12);
}

TEST(QueryExpansion, AlphaZeroEqualsAverage) {
  Rng rng(72);
  for (int t = 0; t < 50; ++t) {
    const DescriptorIndex index = random_index(rng, 40, 6);
    const DescriptorVector q = tu::random_unit(rng, 6);
    const RankedList initial = search(index, q);
    const QEConfig cfg{1 + uniform_index(rng, 10), 0.0};
    const RankedList a = alpha_qe(index, q, initial, cfg);
    const RankedList b = average_qe(index, q, initial, cfg);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].id, b[i].id);
      EXPECT_NEAR(a[i].score, b[i].score, 1e-9);
    }
  }
}

TEST(QueryExpansion, EqualSimilaritiesMatchAverage) {
  // Two top items symmetric around q share the same similarity.
  DescriptorIndex index(3);
  index.add(0, unit({1, 1, 0}));
  index.add(1, unit({1, -1, 0}));
  index.add(2, unit({0, 0.3, 1}));
  const DescriptorVector q = unit({1, 0, 0});
  const RankedList initial = search(index, q);
  for (double alpha : {0.5, 3.0, 7.0}) {
    const RankedList a = alpha_qe(index, q, initial, {2, alpha});
    const RankedList b = average_qe(index, q, initial, {2, alpha});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].id, b[i].id);
  }
  EXPECT_THROW(alpha_qe(index, q, initial, {2, -1.0}), InvalidArgument);
}

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(average_precision(ranking_of({true, true, false}), {0, 1}), 1.0);
  EXPECT_NEAR(average_precision(ranking_of({true, false, true}), {0, 2}), 0.8333333333333333, 1e-15);
  EXPECT_DOUBLE_EQ(average_precision(ranking_of({false, false, false, true}), {3}), 0.25);
  EXPECT_THROW(average_precision(ranking_of({true}), {}), InvalidArgument);
}

TEST(AveragePrecision, MatchesOracle) {
  Rng rng(73);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    std::vector<bool> pattern(n);
    std::set<ImageId> relevant;
    for (std::size_t i = 0; i < n; ++i) {
      pattern[i] = uniform_index(rng, 4) == 0;
      if (pattern[i]) relevant.insert(i);
    }
    if (relevant.empty()) continue;
    EXPECT_NEAR(average_precision(ranking_of(pattern), relevant), oracle_ap(pattern), 1e-12);
  }
}

TEST(MeanAveragePrecision, Examples) {
  // Query 0 finds its relevant item first; query 1 finds it second.
  DescriptorIndex index(2);
  index.add(0, unit({1, 0}));
  index.add(1, unit({0.9, 0.1}));
  index.add(2, unit({0, 1}));
  index.add(3, unit({0.1, 0.9}));
  const std::vector<QueryDescriptor> queries{{0, unit({1, 0})}, {2, unit({0.7, 0.72})}};
  const GroundTruth gt{{0, {1}}, {2, {1}}};
  const MapReport rep = evaluate_queries(index, queries, gt, std::nullopt);
  ASSERT_EQ(rep.per_query.size(), 2u);
  EXPECT_DOUBLE_EQ(rep.per_query[0].second, 1.0);
  EXPECT_DOUBLE_EQ(rep.per_query[1].second, 0.5);
  EXPECT_DOUBLE_EQ(rep.map, 0.75);
  for (const auto& [q, ranking] : rep.rankings)
    for (const RankedItem& it : ranking) EXPECT_NE(it.id, q);

  EXPECT_DOUBLE_EQ(mean_average_precision(index, {queries[1]}, gt, std::nullopt), 0.5);
  EXPECT_THROW(mean_average_precision(index, {{5, unit({1, 0})}}, gt, std::nullopt), InvalidArgument);
}

TEST(MeanAveragePrecision, IdenticalDescriptorsAreDeterministic) {
  DescriptorIndex index(2);
  for (ImageId i = 0; i < 6; ++i) index.add(i, unit({1, 1}));
  const std::vector<QueryDescriptor> queries{{0, unit({1, 1})}, {3, unit({1, 1})}};
  const GroundTruth gt{{0, {4, 5}}, {3, {1, 2}}};
  // Query 0 ranks 1..5, query 3 ranks 0,1,2,4,5.
  const double expect = 0.5 * ((1.0 / 4 + 2.0 / 5) / 2 + (1.0 / 2 + 2.0 / 3) / 2);
  for (int t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(mean_average_precision(index, queries, gt, std::nullopt), expect);
}

TEST(RankedList, TextFormat) {
  std::ostringstream out;
  write_ranked_list(out, 4, {{9, 0.5}, {2, 0.25}});
  EXPECT_EQ(out.str(), "4 9 1 0.500000\n4 2 2 0.250000\n");
}

TEST(CombineScales, Examples) {
  const PoolingConfig gem3 = PoolingConfig::gem(3.0);
  const DescriptorVector a = unit({0.2, 0.5, 0.1}), b = unit({0.4, 0.1, 0.3});
  const DescriptorVector same = combine_scales({a, a, a}, gem3);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(same[k], a[k], 1e-12);

  const DescriptorVector avg = combine_scales({a, b}, PoolingConfig::gem(1.0));
  const DescriptorVector expect = unit({a[0] + b[0], a[1] + b[1], a[2] + b[2]});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(avg[k], expect[k], 1e-12);

  const DescriptorVector g = combine_scales({a, b}, gem3);
  const DescriptorVector gexp = unit({std::cbrt((std::pow(a[0], 3) + std::pow(b[0], 3)) / 2),
                                      std::cbrt((std::pow(a[1], 3) + std::pow(b[1], 3)) / 2),
                                      std::cbrt((std::pow(a[2], 3) + std::pow(b[2], 3)) / 2)});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(g[k], gexp[k], 1e-12);
}

TEST(Multiscale, Consistency) {
  Rng rng(74);
  const auto shapes = TinyFCN::default_shapes(1, 8);
  const TinyFCN net = TinyFCN::create(shapes, 5);
  const PoolingConfig cfg = PoolingConfig::gem(3.0);
  for (int t = 0; t < 5; ++t) {
    const Image img = tu::random_image(rng, 30 + uniform_index(rng, 20), 30 + uniform_index(rng, 20));
    const DescriptorVector single = extract_descriptor(net, cfg, img);
    const DescriptorVector one = multiscale_descriptor(net, cfg, img, {1.0});
    EXPECT_EQ(one.values, single.values);
    const DescriptorVector half = multiscale_descriptor(net, cfg, img, {0.5});
    const DescriptorVector twice = multiscale_descriptor(net, cfg, img, {0.5, 0.5});
    for (std::size_t k = 0; k < half.dim(); ++k) EXPECT_NEAR(twice[k], half[k], 1e-9);
  }
  const Image small = tu::random_image(rng, 12, 12);
  try {
    multiscale_descriptor(net, cfg, small, {1.0, 0.25});
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("0.25"), std::string::npos);
  }
  EXPECT_THROW(multiscale_descriptor(net, cfg, small, {}), InvalidArgument);
  EXPECT_THROW(multiscale_descriptor(net, cfg, small, {1.5}), InvalidArgument);
}
