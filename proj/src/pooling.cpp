#include "gem/pooling.hpp"

#include <algorithm>
#include <cmath>

namespace gem {

std::string to_string(PoolingMode m) {
  switch (m) {
    case PoolingMode::kMax: return "max";
    case PoolingMode::kAverage: return "average";
    case PoolingMode::kGem: return "gem";
  }
  return "?";
}

PoolingMode parse_pooling_mode(const std::string& s) {
  if (s == "max" || s == "mac") return PoolingMode::kMax;
  if (s == "average" || s == "spoc") return PoolingMode::kAverage;
  if (s == "gem") return PoolingMode::kGem;
  throw InvalidArgument("unknown pooling mode \"" + s + "\" (expected max, average or gem)");
}

PoolingConfig PoolingConfig::max() {
  return {PoolingMode::kMax, ExponentSharing::kShared, {}, false};
}

PoolingConfig PoolingConfig::average() {
  return {PoolingMode::kAverage, ExponentSharing::kShared, {}, false};
}

PoolingConfig PoolingConfig::gem(double p, bool trainable) {
  return {PoolingMode::kGem, ExponentSharing::kShared, {p}, trainable};
}

PoolingConfig PoolingConfig::gem_per_map(std::vector<double> p, bool trainable) {
  return {PoolingMode::kGem, ExponentSharing::kPerMap, std::move(p), trainable};
}

double PoolingConfig::exponent(std::size_t k) const {
  return sharing == ExponentSharing::kShared ? exponents.at(0) : exponents.at(k);
}

void PoolingConfig::validate(std::size_t maps) const {
  if (mode != PoolingMode::kGem) {
    if (!exponents.empty()) {
      throw InvalidArgument("pooling mode " + to_string(mode) + " carries no exponents");
    }
    return;
  }
  const std::size_t expected = sharing == ExponentSharing::kShared ? 1 : maps;
  if (exponents.size() != expected) {
    throw InvalidArgument("GeM pooling expects " + std::to_string(expected) +
                          " exponent(s), got " + std::to_string(exponents.size()));
  }
  for (double p : exponents) {
    if (!(p >= 1.0) || !std::isfinite(p)) {
      throw InvalidArgument("GeM exponent " + std::to_string(p) + " is below 1");
    }
  }
}

void PoolingConfig::project_exponents() {
  for (double& p : exponents) p = std::max(p, 1.0);
}

DescriptorVector mac_pool(const ActivationTensor& x) {
  DescriptorVector f(std::vector<double>(x.maps, 0.0));
  const std::size_t n = x.spatial();
  for (std::size_t k = 0; k < x.maps; ++k) {
    double m = n > 0 ? x.values[k] : 0.0;
    for (std::size_t s = 1; s < n; ++s) m = std::max(m, x.values[s * x.maps + k]);
    f.values[k] = m;
  }
  return f;
}

DescriptorVector spoc_pool(const ActivationTensor& x) {
  DescriptorVector f(std::vector<double>(x.maps, 0.0));
  const std::size_t n = x.spatial();
  if (n == 0) return f;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < x.maps; ++k) f.values[k] += x.values[s * x.maps + k];
  for (double& v : f.values) v /= static_cast<double>(n);
  return f;
}

namespace {

double clamped(double v) { return std::max(v, kActivationClamp); }

// Per-map sums needed by the GeM value and its exponent derivative, in the
// overflow-safe form scaled by the map maximum m:
//   scaled_sum = sum (x/m)^p,  weighted_log = sum (x/m)^p log x.
struct MapMoments {
  double max = 0.0;
  double scaled_sum = 0.0;
  double weighted_log = 0.0;
};

MapMoments moments(const ActivationTensor& x, std::size_t k, double p, bool with_log) {
  MapMoments m;
  const std::size_t n = x.spatial();
  m.max = kActivationClamp;
  for (std::size_t s = 0; s < n; ++s) m.max = std::max(m.max, clamped(x.values[s * x.maps + k]));
  for (std::size_t s = 0; s < n; ++s) {
    const double v = clamped(x.values[s * x.maps + k]);
    const double w = std::pow(v / m.max, p);
    m.scaled_sum += w;
    if (with_log) m.weighted_log += w * std::log(v);
  }
  return m;
}

void check_gem_inputs(const ActivationTensor& x, const PoolingConfig& cfg,
                      const DescriptorVector& f, const DescriptorVector& grad_f) {
  if (cfg.mode != PoolingMode::kGem) throw InvalidArgument("GeM backward on a non-GeM config");
  cfg.validate(x.maps);
  if (f.dim() != x.maps || grad_f.dim() != x.maps) {
    throw DimensionMismatch("GeM backward: descriptor dim does not match the tensor's " +
                            std::to_string(x.maps) + " maps");
  }
}

}  // namespace

DescriptorVector gem_pool(const ActivationTensor& x, const PoolingConfig& cfg) {
  if (cfg.mode != PoolingMode::kGem) throw InvalidArgument("gem_pool: config mode is not gem");
  cfg.validate(x.maps);
  DescriptorVector f(std::vector<double>(x.maps, 0.0));
  const auto n = static_cast<double>(x.spatial());
  if (x.spatial() == 0) return f;
  for (std::size_t k = 0; k < x.maps; ++k) {
    const double p = cfg.exponent(k);
    const MapMoments m = moments(x, k, p, false);
    f.values[k] = m.max * std::pow(m.scaled_sum / n, 1.0 / p);
  }
  return f;
}

DescriptorVector pool(const ActivationTensor& x, const PoolingConfig& cfg) {
  switch (cfg.mode) {
    case PoolingMode::kMax: return mac_pool(x);
    case PoolingMode::kAverage: return spoc_pool(x);
    case PoolingMode::kGem: return gem_pool(x, cfg);
  }
  throw InvalidArgument("pool: unknown mode");
}

ActivationTensor gem_backward_x(const ActivationTensor& x, const PoolingConfig& cfg,
                                const DescriptorVector& f, const DescriptorVector& grad_f) {
  check_gem_inputs(x, cfg, f, grad_f);
  ActivationTensor g(x.width, x.height, x.maps);
  const std::size_t n = x.spatial();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < x.maps; ++k) {
    if (grad_f.values[k] == 0.0) continue;
    const double p = cfg.exponent(k);
    // (1/N) f^{1-p} x^{p-1} = (1/N) (x/f)^{p-1}
    const double fk = f.values[k];
    for (std::size_t s = 0; s < n; ++s) {
      const double v = clamped(x.values[s * x.maps + k]);
      g.values[s * x.maps + k] = grad_f.values[k] * inv_n * std::pow(v / fk, p - 1.0);
    }
  }
  return g;
}

std::vector<double> gem_backward_p(const ActivationTensor& x, const PoolingConfig& cfg,
                                   const DescriptorVector& f, const DescriptorVector& grad_f) {
  check_gem_inputs(x, cfg, f, grad_f);
  const bool shared = cfg.sharing == ExponentSharing::kShared;
  std::vector<double> grad(shared ? 1 : x.maps, 0.0);
  const auto n = static_cast<double>(x.spatial());
  for (std::size_t k = 0; k < x.maps; ++k) {
    if (grad_f.values[k] == 0.0) continue;
    const double p = cfg.exponent(k);
    const MapMoments m = moments(x, k, p, true);
    // log(N / sum x^p) with sum x^p = m^p * scaled_sum.
    const double log_ratio = std::log(n) - p * std::log(m.max) - std::log(m.scaled_sum);
    const double df_dp =
        f.values[k] / (p * p) * (log_ratio + p * m.weighted_log / m.scaled_sum);
    grad[shared ? 0 : k] += grad_f.values[k] * df_dp;
  }
  return grad;
}

ActivationTensor pool_backward_x(const ActivationTensor& x, const PoolingConfig& cfg,
                                 const DescriptorVector& f, const DescriptorVector& grad_f) {
  if (grad_f.dim() != x.maps) {
    throw DimensionMismatch("pool_backward_x: gradient dim does not match tensor maps");
  }
  const std::size_t n = x.spatial();
  switch (cfg.mode) {
    case PoolingMode::kGem: return gem_backward_x(x, cfg, f, grad_f);
    case PoolingMode::kAverage: {
      ActivationTensor g(x.width, x.height, x.maps);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t k = 0; k < x.maps; ++k)
          g.values[s * x.maps + k] = grad_f.values[k] / static_cast<double>(n);
      return g;
    }
    case PoolingMode::kMax: {
      ActivationTensor g(x.width, x.height, x.maps);
      for (std::size_t k = 0; k < x.maps; ++k) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < n; ++s)
          if (x.values[s * x.maps + k] > x.values[best * x.maps + k]) best = s;
        g.values[best * x.maps + k] = grad_f.values[k];
      }
      return g;
    }
  }
  throw InvalidArgument("pool_backward_x: unknown mode");
}

DescriptorVector extract_descriptor(const TinyFCN& net, const PoolingConfig& cfg,
                                    const Image& img) {
  return l2_normalize(pool(forward_output(net, img), cfg));
}

}  // namespace gem
