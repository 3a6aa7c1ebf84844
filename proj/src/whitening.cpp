#include "gem/whitening.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gem/binary_io.hpp"

namespace gem {

namespace {

// Eigenvalues of covariance matrices are floored at this fraction of the mean
// eigenvalue before inversion.
constexpr double kRelativeFloor = 1e-6;

double relative_floor(const DenseMatrix& c) {
  return kRelativeFloor * c.trace() / static_cast<double>(c.rows());
}

DenseMatrix pair_covariance(const LabeledPairSet& set, PairLabel label, const char* what) {
  const std::size_t dim = set.dim();
  DenseMatrix c(dim, dim);
  std::size_t count = 0;
  std::vector<double> d(dim);
  for (const LabeledPair& p : set.pairs) {
    if (p.label != label) continue;
    const DescriptorVector& a = lookup(set.descriptors, p.i);
    const DescriptorVector& b = lookup(set.descriptors, p.j);
    if (a.dim() != dim || b.dim() != dim) {
      throw DimensionMismatch(std::string(what) + ": descriptor dims differ within the pair set");
    }
    for (std::size_t k = 0; k < dim; ++k) d[k] = a.values[k] - b.values[k];
    for (std::size_t r = 0; r < dim; ++r) {
      if (d[r] == 0.0) continue;
      for (std::size_t s = 0; s < dim; ++s) c(r, s) += d[r] * d[s];
    }
    ++count;
  }
  if (count == 0) {
    throw InvalidArgument(std::string(what) + ": no " +
                          (label == PairLabel::kMatching ? "matching" : "non-matching") +
                          " pairs");
  }
  return (1.0 / static_cast<double>(count)) * c;
}

std::vector<ImageId> sorted_ids(const DescriptorTable& table) {
  std::vector<ImageId> ids;
  ids.reserve(table.size());
  for (const auto& [id, v] : table) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

DescriptorVector mean_of(const DescriptorTable& table, const std::vector<ImageId>& ids,
                         std::size_t dim) {
  DescriptorVector mu(std::vector<double>(dim, 0.0));
  for (ImageId id : ids) {
    const DescriptorVector& v = lookup(table, id);
    for (std::size_t k = 0; k < dim; ++k) mu.values[k] += v.values[k];
  }
  for (double& x : mu.values) x /= static_cast<double>(ids.size());
  return mu;
}

}  // namespace

std::size_t LabeledPairSet::dim() const {
  if (pairs.empty()) throw InvalidArgument("labeled pair set is empty");
  return lookup(descriptors, pairs.front().i).dim();
}

DenseMatrix intraclass_cov(const LabeledPairSet& pairs) {
  return pair_covariance(pairs, PairLabel::kMatching, "intraclass_cov");
}

DenseMatrix interclass_cov(const LabeledPairSet& pairs) {
  return pair_covariance(pairs, PairLabel::kNonMatching, "interclass_cov");
}

WhiteningTransform learn_lw(const LabeledPairSet& pairs, std::size_t out_dim) {
  const std::size_t dim = pairs.dim();
  if (out_dim < 1 || out_dim > dim) {
    throw InvalidArgument("learn_lw: target dim " + std::to_string(out_dim) + " outside [1, " +
                          std::to_string(dim) + "]");
  }
  const DenseMatrix cs = intraclass_cov(pairs);
  const DenseMatrix cd = interclass_cov(pairs);
  const double floor = relative_floor(cs);
  const DenseMatrix whiten = inv_sqrt_psd(cs, floor > 0.0 ? floor : 1e-300);
  const EigenDecomposition rot = sym_eig(whiten * cd * whiten);
  DenseMatrix top(dim, out_dim);
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = 0; c < out_dim; ++c) top(r, c) = rot.eigenvectors(r, c);

  std::set<ImageId> distinct;
  for (const LabeledPair& p : pairs.pairs) {
    distinct.insert(p.i);
    distinct.insert(p.j);
  }
  WhiteningTransform t;
  t.mean = mean_of(pairs.descriptors, {distinct.begin(), distinct.end()}, dim);
  t.projection = whiten * top;
  return t;
}

WhiteningTransform learn_pcaw(const DescriptorTable& descriptors, std::size_t out_dim) {
  if (descriptors.size() < 2) throw InvalidArgument("learn_pcaw: at least two descriptors required");
  const std::vector<ImageId> ids = sorted_ids(descriptors);
  const std::size_t dim = lookup(descriptors, ids.front()).dim();
  if (out_dim < 1 || out_dim > dim) {
    throw InvalidArgument("learn_pcaw: target dim " + std::to_string(out_dim) + " outside [1, " +
                          std::to_string(dim) + "]");
  }
  const DescriptorVector mu = mean_of(descriptors, ids, dim);
  DenseMatrix cov(dim, dim);
  std::vector<double> d(dim);
  for (ImageId id : ids) {
    const DescriptorVector& v = lookup(descriptors, id);
    if (v.dim() != dim) throw DimensionMismatch("learn_pcaw: descriptor dims differ");
    for (std::size_t k = 0; k < dim; ++k) d[k] = v.values[k] - mu.values[k];
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t s = 0; s < dim; ++s) cov(r, s) += d[r] * d[s];
  }
  cov = (1.0 / static_cast<double>(ids.size())) * cov;
  const EigenDecomposition eig = sym_eig(cov);
  const double floor = std::max(relative_floor(cov), 1e-300);
  WhiteningTransform t;
  t.mean = mu;
  t.projection = DenseMatrix(dim, out_dim);
  for (std::size_t c = 0; c < out_dim; ++c) {
    const double scale = 1.0 / std::sqrt(std::max(eig.eigenvalues[c], floor));
    for (std::size_t r = 0; r < dim; ++r) t.projection(r, c) = eig.eigenvectors(r, c) * scale;
  }
  return t;
}

DescriptorVector apply_whitening(const WhiteningTransform& t, const DescriptorVector& v) {
  if (v.dim() != t.mean.dim() || v.dim() != t.input_dim()) {
    throw DimensionMismatch("apply_whitening: descriptor dim " + std::to_string(v.dim()) +
                            " does not match transform input dim " +
                            std::to_string(t.input_dim()));
  }
  std::vector<double> centered(v.dim());
  for (std::size_t k = 0; k < v.dim(); ++k) centered[k] = v.values[k] - t.mean.values[k];
  return l2_normalize(DescriptorVector(t.projection.apply_transposed(centered)));
}

void save_whitening(const std::filesystem::path& path, const WhiteningTransform& t) {
  binary::Writer w;
  w.magic("GEMW");
  w.u32(static_cast<std::uint32_t>(t.input_dim()));
  w.u32(static_cast<std::uint32_t>(t.output_dim()));
  for (double v : t.mean.values) w.f32(v);
  for (double v : t.projection.data()) w.f32(v);
  w.write_file(path);
}

WhiteningTransform load_whitening(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("GEMW");
  const std::size_t k = r.u32();
  const std::size_t d = r.u32();
  if (k == 0 || d == 0 || d > k) r.fail("invalid dimensions K=" + std::to_string(k) + " D=" + std::to_string(d));
  if (r.remaining() != (k + k * d) * 4) r.fail("payload length does not match K and D");
  WhiteningTransform t;
  t.mean = DescriptorVector(std::vector<double>(k));
  for (double& v : t.mean.values) v = r.f32();
  t.projection = DenseMatrix(k, d);
  for (double& v : t.projection.data()) v = r.f32();
  return t;
}

}  // namespace gem
