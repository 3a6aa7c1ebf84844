#pragma once

#include <utility>

#include "gem/numerics.hpp"

namespace gem {

enum class PairLabel : int { kNonMatching = 0, kMatching = 1 };

struct LossConfig {
  double margin = 0.75;          // contrastive margin tau
  double triplet_margin = 0.1;

  void validate() const;
};

// Loss terms operate on l2-normalized descriptors.
double contrastive_loss(const DescriptorVector& fi, const DescriptorVector& fj, PairLabel y,
                        const LossConfig& cfg);

// Gradients with respect to fi and fj.
std::pair<DescriptorVector, DescriptorVector> contrastive_grad(const DescriptorVector& fi,
                                                               const DescriptorVector& fj,
                                                               PairLabel y,
                                                               const LossConfig& cfg);

double triplet_loss(const DescriptorVector& fq, const DescriptorVector& fpos,
                    const DescriptorVector& fneg, const LossConfig& cfg);

struct TripletGradients {
  DescriptorVector query;
  DescriptorVector positive;
  DescriptorVector negative;
};

TripletGradients triplet_grad(const DescriptorVector& fq, const DescriptorVector& fpos,
                              const DescriptorVector& fneg, const LossConfig& cfg);

}  // namespace gem
