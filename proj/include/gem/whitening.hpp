#pragma once

#include <filesystem>
#include <vector>

#include "gem/loss.hpp"
#include "gem/mining.hpp"
#include "gem/numerics.hpp"

namespace gem {

struct LabeledPair {
  ImageId i;
  ImageId j;
  PairLabel label;
};

struct LabeledPairSet {
  std::vector<LabeledPair> pairs;
  DescriptorTable descriptors;

  std::size_t dim() const;
};

// Applied as P^T (x - mean), then l2-normalized.
struct WhiteningTransform {
  DescriptorVector mean;
  DenseMatrix projection;  // input_dim rows, output_dim columns

  std::size_t input_dim() const { return projection.rows(); }
  std::size_t output_dim() const { return projection.cols(); }
};

// Mean outer product of descriptor differences over matching pairs.
DenseMatrix intraclass_cov(const LabeledPairSet& pairs);
// Same over non-matching pairs.
DenseMatrix interclass_cov(const LabeledPairSet& pairs);

// Learned discriminative whitening: the inverse square root of the matching
// covariance followed by the top-`out_dim` eigenvectors of the non-matching
// covariance in the whitened space.
WhiteningTransform learn_lw(const LabeledPairSet& pairs, std::size_t out_dim);

// PCA whitening of the plain descriptor covariance.
WhiteningTransform learn_pcaw(const DescriptorTable& descriptors, std::size_t out_dim);

DescriptorVector apply_whitening(const WhiteningTransform& t, const DescriptorVector& v);

// "GEMW" files.
void save_whitening(const std::filesystem::path& path, const WhiteningTransform& t);
WhiteningTransform load_whitening(const std::filesystem::path& path);

}  // namespace gem
