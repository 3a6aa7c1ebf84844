#include <gtest/gtest.h>

#include <cmath>

#include "gem/whitening.hpp"
#include "test_support.hpp"

using namespace gem;

namespace {

DescriptorVector vec(std::vector<double> v) { return DescriptorVector(std::move(v)); }

// Matching differences (sqrt 8, 0) and (0, sqrt 2): C_S = diag(4, 1).
// One non-matching difference (0, -3): C_D = diag(0, 9).
LabeledPairSet fixture() {
  LabeledPairSet s;
  s.descriptors.emplace(0, vec({1, 1}));
  s.descriptors.emplace(1, vec({1 + std::sqrt(8.0), 1}));
  s.descriptors.emplace(2, vec({1, 1 + std::sqrt(2.0)}));
  s.descriptors.emplace(3, vec({1, 4}));
  s.pairs = {{1, 0, PairLabel::kMatching}, {2, 0, PairLabel::kMatching}, {0, 3, PairLabel::kNonMatching}};
  return s;
}

LabeledPairSet random_pairs(Rng& rng, std::size_t dim, std::size_t images, std::size_t pairs) {
  LabeledPairSet s;
  for (ImageId i = 0; i < images; ++i) s.descriptors.emplace(i, tu::random_unit(rng, dim));
  for (std::size_t k = 0; k < pairs; ++k) {
    const ImageId a = uniform_index(rng, images);
    ImageId b = uniform_index(rng, images - 1);
    if (b >= a) ++b;
    s.pairs.push_back({a, b, k % 2 == 0 ? PairLabel::kMatching : PairLabel::kNonMatching});
  }
  return s;
}

DenseMatrix congruence(const DenseMatrix& p, const DenseMatrix& c) { return p.transpose() * c * p; }

}  // namespace

TEST(Covariance, Examples) {
  LabeledPairSet s;
  s.descriptors.emplace(0, vec({1, 0}));
  s.descriptors.emplace(1, vec({0, 0}));
  s.descriptors.emplace(2, vec({0, 2}));
  s.pairs = {{0, 1, PairLabel::kMatching}, {2, 1, PairLabel::kNonMatching}};
  EXPECT_EQ(max_abs_diff(intraclass_cov(s), DenseMatrix(2, 2, {1, 0, 0, 0})), 0.0);
  EXPECT_EQ(max_abs_diff(interclass_cov(s), DenseMatrix(2, 2, {0, 0, 0, 4})), 0.0);

  s.pairs = {{0, 0, PairLabel::kMatching}};
  EXPECT_EQ(intraclass_cov(s).max_abs(), 0.0);
  EXPECT_THROW(interclass_cov(s), InvalidArgument);
  s.pairs = {{2, 1, PairLabel::kNonMatching}};
  EXPECT_THROW(intraclass_cov(s), InvalidArgument);
}

TEST(Covariance, SymmetricPsd) {
  Rng rng(60);
  const LabeledPairSet s = random_pairs(rng, 5, 20, 40);
  for (const DenseMatrix& c : {intraclass_cov(s), interclass_cov(s)}) {
    EXPECT_EQ(max_abs_diff(c, c.transpose()), 0.0);
    for (double e : sym_eig(c).eigenvalues) EXPECT_GT(e, -1e-12);
  }
}

TEST(LearnLw, ClosedForm2x2) {
  const LabeledPairSet s = fixture();
  const WhiteningTransform t = learn_lw(s, 2);
  ASSERT_EQ(t.input_dim(), 2u);
  ASSERT_EQ(t.output_dim(), 2u);
  // P = [[0, 1/2], [1, 0]] up to column signs.
  EXPECT_NEAR(std::abs(t.projection(0, 0)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(t.projection(1, 0)), 1.0, 1e-12);
  EXPECT_NEAR(std::abs(t.projection(0, 1)), 0.5, 1e-12);
  EXPECT_NEAR(std::abs(t.projection(1, 1)), 0.0, 1e-12);
  EXPECT_NEAR(t.mean[0], 1 + std::sqrt(8.0) / 4, 1e-15);
  EXPECT_NEAR(t.mean[1], 1 + (std::sqrt(2.0) + 3) / 4, 1e-15);
  EXPECT_LT(max_abs_diff(congruence(t.projection, intraclass_cov(s)), DenseMatrix::identity(2)), 1e-12);

  // (3, 2) - mu projects to (dy, dx / 2) before normalization.
  const double dx = 3 - t.mean[0], dy = 2 - t.mean[1];
  const double n = std::hypot(dy, dx / 2);
  const DescriptorVector w = apply_whitening(t, vec({3, 2}));
  EXPECT_NEAR(std::abs(w[0]), std::abs(dy) / n, 1e-12);
  EXPECT_NEAR(std::abs(w[1]), std::abs(dx / 2) / n, 1e-12);

  const WhiteningTransform one = learn_lw(s, 1);
  EXPECT_NEAR(std::abs(one.projection(1, 0)), 1.0, 1e-12);
}

TEST(LearnLw, IdentityIntraclassGivesInterclassEigenvectors) {
  // Matching differences along the basis axes with equal weight.
  LabeledPairSet s;
  const double r = std::sqrt(3.0);
  s.descriptors.emplace(0, vec({0, 0, 0}));
  s.descriptors.emplace(1, vec({r, 0, 0}));
  s.descriptors.emplace(2, vec({0, r, 0}));
  s.descriptors.emplace(3, vec({0, 0, r}));
  s.descriptors.emplace(4, vec({1, 2, 0.5}));
  s.pairs = {{1, 0, PairLabel::kMatching}, {2, 0, PairLabel::kMatching}, {3, 0, PairLabel::kMatching},
             {4, 0, PairLabel::kNonMatching}, {4, 1, PairLabel::kNonMatching}};
  ASSERT_LT(max_abs_diff(intraclass_cov(s), DenseMatrix::identity(3)), 1e-12);
  const WhiteningTransform t = learn_lw(s, 2);
  const EigenDecomposition e = sym_eig(interclass_cov(s));
  for (std::size_t c = 0; c < 2; ++c) {
    double dot = 0.0;
    for (std::size_t k = 0; k < 3; ++k) dot += t.projection(k, c) * e.eigenvectors(k, c);
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-9);
  }
}

TEST(LearnLw, WhitensAndDiagonalizesRandomSets) {
  Rng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = 2 + uniform_index(rng, 7);
    const LabeledPairSet s = random_pairs(rng, dim, 4 * dim, 12 * dim);
    const WhiteningTransform t = learn_lw(s, dim);
    EXPECT_LT(max_abs_diff(congruence(t.projection, intraclass_cov(s)), DenseMatrix::identity(dim)), 1e-6);
    const DenseMatrix d = congruence(t.projection, interclass_cov(s));
    double off = 0.0;
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t c = 0; c < dim; ++c)
        if (r != c) off = std::max(off, std::abs(d(r, c)));
    EXPECT_LT(off, 1e-6);
    for (std::size_t c = 1; c < dim; ++c) EXPECT_GE(d(c - 1, c - 1), d(c, c) - 1e-9);
  }
}

TEST(LearnLw, RejectsBadDims) {
  const LabeledPairSet s = fixture();
  EXPECT_THROW(learn_lw(s, 0), InvalidArgument);
  EXPECT_THROW(learn_lw(s, 3), InvalidArgument);
  EXPECT_THROW(learn_lw(LabeledPairSet{}, 1), InvalidArgument);
}

TEST(LearnPcaw, AnisotropicCloud) {
  Rng rng(62);
  DescriptorTable t;
  for (ImageId i = 0; i < 4000; ++i) t.emplace(i, vec({3 * standard_normal(rng), standard_normal(rng)}));
  const WhiteningTransform w = learn_pcaw(t, 2);
  // Projected sample covariance is the identity by construction.
  DenseMatrix cov(2, 2);
  for (const auto& [id, v] : t) {
    const std::vector<double> c{v[0] - w.mean[0], v[1] - w.mean[1]};
    const std::vector<double> y = w.projection.apply_transposed(c);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t s = 0; s < 2; ++s) cov(r, s) += y[r] * y[s] / 4000.0;
  }
  EXPECT_LT(max_abs_diff(cov, DenseMatrix::identity(2)), 1e-9);
  const WhiteningTransform one = learn_pcaw(t, 1);
  EXPECT_GT(std::abs(one.projection(0, 0)), 10 * std::abs(one.projection(1, 0)));
  EXPECT_NEAR(std::abs(one.projection(0, 0)), 1.0 / 3.0, 0.02);

  DescriptorTable single;
  single.emplace(0, vec({1, 2}));
  EXPECT_THROW(learn_pcaw(single, 1), InvalidArgument);
}

TEST(ApplyWhitening, Examples) {
  WhiteningTransform id;
  id.mean = vec({0, 0, 0});
  id.projection = DenseMatrix::identity(3);
  const DescriptorVector v = l2_normalize(vec({1, 2, 2}));
  const DescriptorVector w = apply_whitening(id, v);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(w[k], v[k]);

  id.mean = vec({0.5, 0.25, 1});
  const DescriptorVector z = apply_whitening(id, vec({0.5, 0.25, 1}));
  for (double x : z.values) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(apply_whitening(id, vec({1, 2})), DimensionMismatch);
}

TEST(ApplyWhitening, OutputUnitOrZero) {
  Rng rng(63);
  const LabeledPairSet s = random_pairs(rng, 6, 30, 80);
  const WhiteningTransform t = learn_lw(s, 4);
  for (const auto& [id, v] : s.descriptors) {
    const DescriptorVector w = apply_whitening(t, v);
    ASSERT_EQ(w.dim(), 4u);
    const double n = norm(w.values);
    EXPECT_TRUE(std::abs(n - 1.0) < 1e-12 || n == 0.0);
  }
}

TEST(ApplyWhitening, GlobalScalingKeepsRanking) {
  Rng rng(64);
  LabeledPairSet s = random_pairs(rng, 5, 30, 80);
  LabeledPairSet scaled = s;
  for (auto& [id, v] : scaled.descriptors)
    for (double& x : v.values) x *= 2.5;
  const WhiteningTransform a = learn_lw(s, 5), b = learn_lw(scaled, 5);
  const DescriptorVector qa = apply_whitening(a, lookup(s.descriptors, 0));
  const DescriptorVector qb = apply_whitening(b, lookup(scaled.descriptors, 0));
  for (ImageId i = 1; i < 30; ++i) {
    const double sa = inner_product(qa, apply_whitening(a, lookup(s.descriptors, i)));
    const double sb = inner_product(qb, apply_whitening(b, lookup(scaled.descriptors, i)));
    EXPECT_NEAR(sa, sb, 1e-9);
  }
}

TEST(WhiteningFile, RoundTripAndErrors) {
  tu::TempDir dir("whitening");
  const WhiteningTransform t = learn_lw(fixture(), 2);
  save_whitening(dir.path() / "w.bin", t);
  const WhiteningTransform back = load_whitening(dir.path() / "w.bin");
  EXPECT_EQ(back.input_dim(), 2u);
  EXPECT_EQ(back.output_dim(), 2u);
  EXPECT_LT(max_abs_diff(back.projection, t.projection), 1e-6);
  EXPECT_NEAR(back.mean[0], t.mean[0], 1e-6);

  std::filesystem::resize_file(dir.path() / "w.bin", 20);
  EXPECT_THROW(load_whitening(dir.path() / "w.bin"), FormatError);
  EXPECT_THROW(load_whitening(dir.path() / "missing.bin"), FormatError);
}
