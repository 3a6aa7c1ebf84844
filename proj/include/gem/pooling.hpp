#pragma once

#include <string>
#include <vector>

#include "gem/backbone.hpp"
#include "gem/numerics.hpp"

namespace gem {

enum class PoolingMode { kMax, kAverage, kGem };
enum class ExponentSharing { kShared, kPerMap };

std::string to_string(PoolingMode m);
PoolingMode parse_pooling_mode(const std::string& s);

// Activations are clamped to this before x^p and log x.
inline constexpr double kActivationClamp = 1e-6;
inline constexpr double kDefaultGemExponent = 3.0;

struct PoolingConfig {
  PoolingMode mode = PoolingMode::kGem;
  ExponentSharing sharing = ExponentSharing::kShared;
  std::vector<double> exponents{kDefaultGemExponent};
  bool trainable = true;

  static PoolingConfig max();
  static PoolingConfig average();
  static PoolingConfig gem(double p, bool trainable = true);
  static PoolingConfig gem_per_map(std::vector<double> p, bool trainable = true);

  // Exponent applied to map k.
  double exponent(std::size_t k) const;
  // Throws InvalidArgument when the exponent list or any value is out of range.
  void validate(std::size_t maps) const;
  // Raises every exponent to at least 1.
  void project_exponents();
};

DescriptorVector mac_pool(const ActivationTensor& x);
DescriptorVector spoc_pool(const ActivationTensor& x);
DescriptorVector gem_pool(const ActivationTensor& x, const PoolingConfig& cfg);

// Dispatches on cfg.mode. The result is not normalized.
DescriptorVector pool(const ActivationTensor& x, const PoolingConfig& cfg);

// Gradient of a scalar objective with respect to the activations, given its
// gradient grad_f with respect to the pooled vector f = gem_pool(x, cfg).
ActivationTensor gem_backward_x(const ActivationTensor& x, const PoolingConfig& cfg,
                                const DescriptorVector& f, const DescriptorVector& grad_f);

// Gradient with respect to the exponents: one entry for a shared exponent
// (sum of the per-map terms), otherwise one per map.
std::vector<double> gem_backward_p(const ActivationTensor& x, const PoolingConfig& cfg,
                                   const DescriptorVector& f, const DescriptorVector& grad_f);

// Activation gradient for any pooling mode. MAC routes to the first maximal
// element of each map.
ActivationTensor pool_backward_x(const ActivationTensor& x, const PoolingConfig& cfg,
                                 const DescriptorVector& f, const DescriptorVector& grad_f);

DescriptorVector extract_descriptor(const TinyFCN& net, const PoolingConfig& cfg,
                                    const Image& img);

}  // namespace gem
