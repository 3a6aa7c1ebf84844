#include "gem/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gem {

void LossConfig::validate() const {
  if (!(margin > 0.0)) throw InvalidArgument("contrastive margin must be positive");
  if (!(triplet_margin > 0.0)) throw InvalidArgument("triplet margin must be positive");
}

namespace {

void check_dims(const DescriptorVector& a, const DescriptorVector& b, const char* op) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch(std::string(op) + ": descriptor dims " + std::to_string(a.dim()) +
                            " and " + std::to_string(b.dim()));
  }
}

DescriptorVector zeros(std::size_t n) { return DescriptorVector(std::vector<double>(n, 0.0)); }

}  // namespace

double contrastive_loss(const DescriptorVector& fi, const DescriptorVector& fj, PairLabel y,
                        const LossConfig& cfg) {
  check_dims(fi, fj, "contrastive_loss");
  const double d2 = squared_distance(fi, fj);
  if (y == PairLabel::kMatching) return 0.5 * d2;
  const double hinge = std::max(0.0, cfg.margin - std::sqrt(d2));
  return 0.5 * hinge * hinge;
}

std::pair<DescriptorVector, DescriptorVector> contrastive_grad(const DescriptorVector& fi,
                                                               const DescriptorVector& fj,
                                                               PairLabel y,
                                                               const LossConfig& cfg) {
  check_dims(fi, fj, "contrastive_grad");
  const std::size_t n = fi.dim();
  DescriptorVector gi = zeros(n);
  DescriptorVector gj = zeros(n);
  if (y == PairLabel::kMatching) {
    for (std::size_t k = 0; k < n; ++k) {
      gi.values[k] = fi.values[k] - fj.values[k];
      gj.values[k] = -gi.values[k];
    }
    return {gi, gj};
  }
  const double dist = std::sqrt(squared_distance(fi, fj));
  // Hinge inactive, or the coincident singularity where the subgradient is 0.
  if (dist >= cfg.margin || dist == 0.0) return {gi, gj};
  const double scale = (cfg.margin - dist) / dist;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = fi.values[k] - fj.values[k];
    gi.values[k] = -scale * d;
    gj.values[k] = scale * d;
  }
  return {gi, gj};
}

double triplet_loss(const DescriptorVector& fq, const DescriptorVector& fpos,
                    const DescriptorVector& fneg, const LossConfig& cfg) {
  check_dims(fq, fpos, "triplet_loss");
  check_dims(fq, fneg, "triplet_loss");
  return std::max(0.0, squared_distance(fq, fpos) - squared_distance(fq, fneg) +
                           cfg.triplet_margin);
}

TripletGradients triplet_grad(const DescriptorVector& fq, const DescriptorVector& fpos,
                              const DescriptorVector& fneg, const LossConfig& cfg) {
  const std::size_t n = fq.dim();
  TripletGradients g{zeros(n), zeros(n), zeros(n)};
  if (triplet_loss(fq, fpos, fneg, cfg) <= 0.0) return g;
  for (std::size_t k = 0; k < n; ++k) {
    // d/dq (|q-p|^2 - |q-n|^2) = 2(n - p)
    g.query.values[k] = 2.0 * (fneg.values[k] - fpos.values[k]);
    g.positive.values[k] = -2.0 * (fq.values[k] - fpos.values[k]);
    g.negative.values[k] = 2.0 * (fq.values[k] - fneg.values[k]);
  }
  return g;
}

}  // namespace gem
