#include "gem/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "gem/backbone.hpp"
#include "gem/loss.hpp"
#include "gem/pooling.hpp"
#include "gem/random.hpp"
#include "gem/trainer.hpp"

namespace gem {

namespace {

// Instances whose hinge or ReLU kinks lie closer than this to the evaluation
// point are redrawn, since central differences straddling a kink are not
// gradients.
constexpr double kKinkMargin = 1e-3;

struct Sample {
  std::vector<double> point;
  ScalarFunction objective;
  std::vector<double> analytic;
};

// Draws one instance; returns nullopt to request a redraw.
using Sampler = std::function<std::optional<Sample>(Rng&)>;

std::vector<double> uniform_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform_real(rng, lo, hi);
  return v;
}

std::vector<double> normal_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = standard_normal(rng);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

ActivationTensor random_positive_tensor(Rng& rng) {
  ActivationTensor x(2 + uniform_index(rng, 3), 2 + uniform_index(rng, 3), 1 + uniform_index(rng, 5));
  for (double& v : x.values) v = uniform_real(rng, 0.05, 2.0);
  return x;
}

PoolingConfig random_gem(Rng& rng, std::size_t maps) {
  if (uniform_index(rng, 2) == 0) return PoolingConfig::gem(uniform_real(rng, 1.0, 6.0));
  return PoolingConfig::gem_per_map(uniform_vector(rng, maps, 1.0, 6.0));
}

std::optional<Sample> pooling_x(Rng& rng) {
  const ActivationTensor x0 = random_positive_tensor(rng);
  const PoolingConfig cfg = random_gem(rng, x0.maps);
  const std::vector<double> r = normal_vector(rng, x0.maps);
  const DescriptorVector f = gem_pool(x0, cfg);
  Sample s;
  s.point = x0.values;
  s.analytic = gem_backward_x(x0, cfg, f, DescriptorVector(r)).values;
  s.objective = [x0, cfg, r](std::span<const double> v) {
    ActivationTensor x = x0;
    x.values.assign(v.begin(), v.end());
    return dot(r, gem_pool(x, cfg).values);
  };
  return s;
}

std::optional<Sample> pooling_p(Rng& rng) {
  const ActivationTensor x = random_positive_tensor(rng);
  const PoolingConfig cfg0 = random_gem(rng, x.maps);
  const std::vector<double> r = normal_vector(rng, x.maps);
  Sample s;
  s.point = cfg0.exponents;
  s.analytic = gem_backward_p(x, cfg0, gem_pool(x, cfg0), DescriptorVector(r));
  s.objective = [x, cfg0, r](std::span<const double> p) {
    PoolingConfig cfg = cfg0;
    cfg.exponents.assign(p.begin(), p.end());
    return dot(r, gem_pool(x, cfg).values);
  };
  return s;
}

std::optional<Sample> contrastive(Rng& rng) {
  const std::size_t dim = 2 + uniform_index(rng, 7);
  const DescriptorVector fi = l2_normalize(DescriptorVector(normal_vector(rng, dim)));
  // Offset length spread across both sides of the margin.
  std::vector<double> offset = l2_normalize(DescriptorVector(normal_vector(rng, dim))).values;
  const double len = uniform_real(rng, 0.05, 1.2);
  DescriptorVector fj = fi;
  for (std::size_t k = 0; k < dim; ++k) fj.values[k] += len * offset[k];
  const LossConfig cfg;
  const PairLabel y = uniform_index(rng, 2) == 0 ? PairLabel::kMatching : PairLabel::kNonMatching;
  if (y == PairLabel::kNonMatching && std::abs(len - cfg.margin) < kKinkMargin) return std::nullopt;
  auto [gi, gj] = contrastive_grad(fi, fj, y, cfg);
  Sample s;
  s.point = fi.values;
  s.point.insert(s.point.end(), fj.values.begin(), fj.values.end());
  s.analytic = gi.values;
  s.analytic.insert(s.analytic.end(), gj.values.begin(), gj.values.end());
  s.objective = [dim, y, cfg](std::span<const double> v) {
    const DescriptorVector a(std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(dim)));
    const DescriptorVector b(std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(dim), v.end()));
    return contrastive_loss(a, b, y, cfg);
  };
  return s;
}

std::optional<Sample> triplet(Rng& rng) {
  const std::size_t dim = 2 + uniform_index(rng, 7);
  const DescriptorVector q = l2_normalize(DescriptorVector(normal_vector(rng, dim)));
  const DescriptorVector p = l2_normalize(DescriptorVector(normal_vector(rng, dim)));
  const DescriptorVector n = l2_normalize(DescriptorVector(normal_vector(rng, dim)));
  const LossConfig cfg;
  const double inner = squared_distance(q, p) - squared_distance(q, n) + cfg.triplet_margin;
  if (std::abs(inner) < kKinkMargin) return std::nullopt;
  const TripletGradients g = triplet_grad(q, p, n, cfg);
  Sample s;
  for (const auto* v : {&q, &p, &n}) s.point.insert(s.point.end(), v->values.begin(), v->values.end());
  for (const auto* v : {&g.query, &g.positive, &g.negative}) {
    s.analytic.insert(s.analytic.end(), v->values.begin(), v->values.end());
  }
  s.objective = [dim, cfg](std::span<const double> v) {
    auto part = [&](std::size_t i) {
      return DescriptorVector(std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                                  v.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim)));
    };
    return triplet_loss(part(0), part(1), part(2), cfg);
  };
  return s;
}

std::optional<Sample> normalization(Rng& rng) {
  const std::size_t dim = 1 + uniform_index(rng, 8);
  std::vector<double> f = normal_vector(rng, dim);
  const double scale = uniform_real(rng, 0.2, 5.0);
  for (double& v : f) v *= scale;
  if (norm(f) < 0.1) return std::nullopt;
  const std::vector<double> r = normal_vector(rng, dim);
  Sample s;
  s.point = f;
  s.analytic = normalize_backward(DescriptorVector(f), DescriptorVector(r)).values;
  s.objective = [r](std::span<const double> v) {
    return dot(r, l2_normalize(DescriptorVector(std::vector<double>(v.begin(), v.end()))).values);
  };
  return s;
}

Image random_image(Rng& rng, std::size_t w, std::size_t h, std::size_t channels) {
  Image img(w, h, channels);
  for (double& v : img.pixels) v = uniform01(rng);
  return img;
}

TinyFCN random_net(Rng& rng, std::size_t layers, std::size_t channels) {
  std::vector<LayerShape> shapes;
  std::size_t in = channels;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t out = 1 + uniform_index(rng, 4);
    shapes.push_back({1 + 2 * uniform_index(rng, 2), in, out, 1});
    in = out;
  }
  TinyFCN net = TinyFCN::create(shapes, rng());
  // Non-zero biases so both ReLU branches are exercised.
  for (auto& l : net.layers())
    for (double& b : l.bias) b = uniform_real(rng, -0.2, 0.4);
  return net;
}

bool near_relu_kink(const ForwardCache& cache) {
  for (const auto& pre : cache.pre_activations)
    for (double v : pre.values)
      if (std::abs(v) < kKinkMargin) return true;
  return false;
}

std::vector<double> net_parameters(const TinyFCN& net) {
  std::vector<double> flat;
  for (const auto& l : net.layers()) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

TinyFCN with_parameters(TinyFCN net, std::span<const double> flat) {
  std::size_t pos = 0;
  for (auto& l : net.layers()) {
    for (double& w : l.weights) w = flat[pos++];
    for (double& b : l.bias) b = flat[pos++];
  }
  return net;
}

std::optional<Sample> backbone(Rng& rng) {
  const std::size_t channels = uniform_index(rng, 2) == 0 ? 1 : 3;
  const TinyFCN net = random_net(rng, 1 + uniform_index(rng, 3), channels);
  const Image img = random_image(rng, 7 + uniform_index(rng, 3), 7 + uniform_index(rng, 3), channels);
  const ForwardResult fwd = forward(net, img);
  if (near_relu_kink(fwd.cache)) return std::nullopt;
  const std::vector<double> r = normal_vector(rng, fwd.output.size());
  ActivationTensor grad_out = fwd.output;
  grad_out.values = r;
  const BackboneGradients g = backward(net, fwd.cache, grad_out);
  Sample s;
  s.point = net_parameters(net);
  for (const auto& l : g.layers) {
    s.analytic.insert(s.analytic.end(), l.weights.begin(), l.weights.end());
    s.analytic.insert(s.analytic.end(), l.bias.begin(), l.bias.end());
  }
  s.objective = [net, img, r](std::span<const double> v) {
    return dot(r, forward_output(with_parameters(net, v), img).values);
  };
  return s;
}

std::optional<Sample> end_to_end(Rng& rng) {
  Model m;
  m.net = random_net(rng, 1, 1);
  m.pooling = PoolingConfig::gem(uniform_real(rng, 1.5, 4.0));
  ImageStore images;
  TrainingTuple t{0, 1, {2, 3}, false};
  for (ImageId id = 0; id < 4; ++id) {
    images.emplace(id, random_image(rng, 6, 6, 1));
    if (near_relu_kink(forward(m.net, images.at(id)).cache)) return std::nullopt;
  }
  TrainConfig cfg;
  cfg.loss_config.margin = uniform_real(rng, 0.05, 0.5);
  const DescriptorVector q = extract_descriptor(m.net, m.pooling, images.at(0));
  for (ImageId n : t.negatives) {
    const double d = std::sqrt(squared_distance(q, extract_descriptor(m.net, m.pooling, images.at(n))));
    if (std::abs(d - cfg.loss_config.margin) < kKinkMargin) return std::nullopt;
  }
  const std::vector<TrainingTuple> batch{t};
  Sample s;
  s.point = flatten_parameters(m);
  s.analytic = batch_gradients(m, cfg, batch, images).flat;
  s.objective = [m, cfg, batch, images](std::span<const double> v) {
    Model probe = m;
    assign_parameters(probe, v);
    return batch_loss(probe, cfg, batch, images);
  };
  return s;
}

struct SuiteSpec {
  const char* name;
  Sampler sampler;
  bool composed;
};

const std::vector<SuiteSpec>& suite_specs() {
  static const std::vector<SuiteSpec> specs{
      {"pooling_x", pooling_x, false},     {"pooling_p", pooling_p, false},
      {"contrastive", contrastive, false}, {"triplet", triplet, false},
      {"normalization", normalization, false}, {"backbone", backbone, false},
      {"end_to_end", end_to_end, true},
  };
  return specs;
}

SuiteResult run_suite(const SuiteSpec& spec, std::size_t index, const GradcheckConfig& cfg) {
  SuiteResult result;
  result.name = spec.name;
  result.tolerance = spec.composed ? cfg.composed_tolerance : cfg.component_tolerance;
  const bool corrupt = cfg.corrupt_suite && *cfg.corrupt_suite == spec.name;
  Rng rng(derive_seed(cfg.seed, 0x6772616463686bULL, index));
  std::size_t redraws = 0;
  while (result.instances < cfg.instances) {
    std::optional<Sample> s = spec.sampler(rng);
    if (!s) {
      if (++redraws > 100 * cfg.instances) throw ConvergenceError("gradcheck: too many redraws in " + result.name, 0.0);
      continue;
    }
    if (corrupt) {
      for (double& a : s->analytic) a += 1e-2 * (std::abs(a) + 1e-3);
    }
    const std::vector<double> numeric = finite_diff_grad(s->objective, s->point, cfg.step);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      result.max_relative_error =
          std::max(result.max_relative_error, relative_error(s->analytic[i], numeric[i]));
    }
    result.components += numeric.size();
    ++result.instances;
  }
  return result;
}

}  // namespace

const std::vector<std::string>& gradcheck_suites() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& s : suite_specs()) out.emplace_back(s.name);
    return out;
  }();
  return names;
}

bool GradcheckReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed(); });
}

std::string GradcheckReport::to_text() const {
  std::string out;
  char line[160];
  for (const SuiteResult& s : suites) {
    std::snprintf(line, sizeof(line), "%-14s %s  instances=%zu  components=%zu  max_rel_err=%.3e  tol=%.0e\n",
                  s.name.c_str(), s.passed() ? "PASS" : "FAIL", s.instances, s.components,
                  s.max_relative_error, s.tolerance);
    out += line;
  }
  out += passed() ? "gradcheck: all suites passed\n" : "gradcheck: FAILED\n";
  return out;
}

GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  if (cfg.instances == 0) throw InvalidArgument("gradcheck: instances must be positive");
  if (cfg.corrupt_suite) {
    const auto& names = gradcheck_suites();
    if (std::find(names.begin(), names.end(), *cfg.corrupt_suite) == names.end()) {
      throw InvalidArgument("gradcheck: unknown suite \"" + *cfg.corrupt_suite + "\"");
    }
  }
  GradcheckReport report;
  const auto& specs = suite_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) report.suites.push_back(run_suite(specs[i], i, cfg));
  return report;
}

}  // namespace gem
