#include "gem/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "gem/binary_io.hpp"
#include "gem/parallel.hpp"
#include "gem/random.hpp"

namespace gem {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

std::string to_string(LossKind k) { return k == LossKind::kContrastive ? "contrastive" : "triplet"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw InvalidArgument("unknown optimizer \"" + s + "\" (expected sgd or adam)");
}

LossKind parse_loss(const std::string& s) {
  if (s == "contrastive") return LossKind::kContrastive;
  if (s == "triplet") return LossKind::kTriplet;
  throw InvalidArgument("unknown loss \"" + s + "\" (expected contrastive or triplet)");
}

double TrainConfig::base_lr() const {
  if (initial_lr) return *initial_lr;
  return optimizer == OptimizerKind::kSgd ? 1e-3 : 1e-6;
}

void TrainConfig::validate() const {
  if (!(base_lr() > 0.0)) throw InvalidArgument("train: initial learning rate must be positive");
  if (batch_tuples == 0) throw InvalidArgument("train: batch_tuples must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw InvalidArgument("train: validation_fraction must lie in [0, 1)");
  }
  loss_config.validate();
  mining.validate();
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.base_lr() * std::exp(-0.1 * static_cast<double>(epoch));
}

std::vector<ImagePair> tuple_to_pairs(const TrainingTuple& t) {
  std::vector<ImagePair> pairs;
  pairs.reserve(1 + t.negatives.size());
  pairs.push_back({t.query, t.positive, PairLabel::kMatching});
  for (ImageId n : t.negatives) pairs.push_back({t.query, n, PairLabel::kNonMatching});
  return pairs;
}

DescriptorVector normalize_backward(const DescriptorVector& f, const DescriptorVector& grad_fbar) {
  if (f.dim() != grad_fbar.dim()) throw DimensionMismatch("normalize_backward: dims differ");
  const double n = norm(f.values);
  if (n <= 1e-12) throw InvalidArgument("normalize_backward: descriptor norm is ~0");
  double dot = 0.0;
  for (std::size_t k = 0; k < f.dim(); ++k) dot += f.values[k] / n * grad_fbar.values[k];
  DescriptorVector out(std::vector<double>(f.dim()));
  for (std::size_t k = 0; k < f.dim(); ++k) {
    out.values[k] = (grad_fbar.values[k] - dot * f.values[k] / n) / n;
  }
  return out;
}

bool exponents_trainable(const Model& m) {
  return m.pooling.mode == PoolingMode::kGem && m.pooling.trainable;
}

std::vector<double> flatten_parameters(const Model& m) {
  std::vector<double> flat;
  flat.reserve(m.net.parameter_count() + m.pooling.exponents.size());
  for (const auto& l : m.net.layers()) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  if (exponents_trainable(m)) {
    flat.insert(flat.end(), m.pooling.exponents.begin(), m.pooling.exponents.end());
  }
  return flat;
}

void assign_parameters(Model& m, std::span<const double> flat) {
  const std::size_t expected =
      m.net.parameter_count() + (exponents_trainable(m) ? m.pooling.exponents.size() : 0);
  if (flat.size() != expected) {
    throw DimensionMismatch("assign_parameters: expected " + std::to_string(expected) +
                            " values, got " + std::to_string(flat.size()));
  }
  std::size_t pos = 0;
  for (auto& l : m.net.layers()) {
    for (double& w : l.weights) w = flat[pos++];
    for (double& b : l.bias) b = flat[pos++];
  }
  if (exponents_trainable(m)) {
    for (double& p : m.pooling.exponents) p = flat[pos++];
  }
}

std::vector<double> weight_decay_mask(const Model& m) {
  std::vector<double> mask;
  for (const auto& l : m.net.layers()) {
    mask.insert(mask.end(), l.weights.size(), 1.0);
    mask.insert(mask.end(), l.bias.size(), 0.0);
  }
  if (exponents_trainable(m)) mask.insert(mask.end(), m.pooling.exponents.size(), 0.0);
  return mask;
}

const Image& lookup(const ImageStore& images, ImageId id) {
  auto it = images.find(id);
  if (it == images.end()) throw InvalidArgument("no image loaded for id " + std::to_string(id));
  return it->second;
}

namespace {

// Images of a tuple in order: query, positive, negatives...
std::vector<ImageId> tuple_images(const TrainingTuple& t) {
  std::vector<ImageId> ids{t.query, t.positive};
  ids.insert(ids.end(), t.negatives.begin(), t.negatives.end());
  return ids;
}

void add_to(DescriptorVector& acc, const DescriptorVector& g) {
  for (std::size_t k = 0; k < acc.dim(); ++k) acc.values[k] += g.values[k];
}

// Loss of one tuple over its normalized descriptors (same order as
// tuple_images) and, when grads is non-null, the gradient per descriptor.
double tuple_objective(const TrainConfig& cfg, const std::vector<DescriptorVector>& fbar,
                       std::vector<DescriptorVector>* grads) {
  double loss = 0.0;
  const DescriptorVector& q = fbar[0];
  const DescriptorVector& pos = fbar[1];
  if (cfg.loss == LossKind::kContrastive) {
    loss += contrastive_loss(q, pos, PairLabel::kMatching, cfg.loss_config);
    if (grads) {
      auto [gq, gp] = contrastive_grad(q, pos, PairLabel::kMatching, cfg.loss_config);
      add_to((*grads)[0], gq);
      add_to((*grads)[1], gp);
    }
    for (std::size_t n = 2; n < fbar.size(); ++n) {
      loss += contrastive_loss(q, fbar[n], PairLabel::kNonMatching, cfg.loss_config);
      if (grads) {
        auto [gq, gn] = contrastive_grad(q, fbar[n], PairLabel::kNonMatching, cfg.loss_config);
        add_to((*grads)[0], gq);
        add_to((*grads)[n], gn);
      }
    }
  } else {
    for (std::size_t n = 2; n < fbar.size(); ++n) {
      loss += triplet_loss(q, pos, fbar[n], cfg.loss_config);
      if (grads) {
        const TripletGradients g = triplet_grad(q, pos, fbar[n], cfg.loss_config);
        add_to((*grads)[0], g.query);
        add_to((*grads)[1], g.positive);
        add_to((*grads)[n], g.negative);
      }
    }
  }
  return loss;
}

struct TupleGradient {
  double loss = 0.0;
  BackboneGradients backbone;
  std::vector<double> exponents;
};

TupleGradient tuple_gradient(const Model& m, const TrainConfig& cfg, const TrainingTuple& t,
                             const ImageStore& images) {
  const std::vector<ImageId> ids = tuple_images(t);
  std::vector<ForwardResult> fwd;
  std::vector<DescriptorVector> pooled;
  std::vector<DescriptorVector> fbar;
  fwd.reserve(ids.size());
  for (ImageId id : ids) {
    fwd.push_back(forward(m.net, lookup(images, id)));
    pooled.push_back(pool(fwd.back().output, m.pooling));
    fbar.push_back(l2_normalize(pooled.back()));
  }
  const std::size_t dim = pooled.front().dim();
  std::vector<DescriptorVector> grad_fbar(ids.size(),
                                          DescriptorVector(std::vector<double>(dim, 0.0)));
  TupleGradient out;
  out.loss = tuple_objective(cfg, fbar, &grad_fbar);
  out.backbone = BackboneGradients::zeros_like(m.net);
  const bool train_p = exponents_trainable(m);
  if (train_p) out.exponents.assign(m.pooling.exponents.size(), 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const bool nonzero = std::any_of(grad_fbar[i].values.begin(), grad_fbar[i].values.end(),
                                     [](double v) { return v != 0.0; });
    // A zero descriptor has no usable direction; its gradient is dropped.
    if (!nonzero || norm(pooled[i].values) <= 1e-12) continue;
    const DescriptorVector grad_f = normalize_backward(pooled[i], grad_fbar[i]);
    const ActivationTensor grad_x = pool_backward_x(fwd[i].output, m.pooling, pooled[i], grad_f);
    out.backbone += backward(m.net, fwd[i].cache, grad_x);
    if (train_p) {
      const std::vector<double> gp = gem_backward_p(fwd[i].output, m.pooling, pooled[i], grad_f);
      for (std::size_t k = 0; k < gp.size(); ++k) out.exponents[k] += gp[k];
    }
  }
  return out;
}

}  // namespace

double batch_loss(const Model& m, const TrainConfig& cfg, const std::vector<TrainingTuple>& batch,
                  const ImageStore& images) {
  double loss = 0.0;
  for (const TrainingTuple& t : batch) {
    std::vector<DescriptorVector> fbar;
    for (ImageId id : tuple_images(t)) {
      fbar.push_back(extract_descriptor(m.net, m.pooling, lookup(images, id)));
    }
    loss += tuple_objective(cfg, fbar, nullptr);
  }
  return loss;
}

BatchGradients batch_gradients(const Model& m, const TrainConfig& cfg,
                               const std::vector<TrainingTuple>& batch, const ImageStore& images) {
  std::vector<TupleGradient> per_tuple(batch.size());
  parallel_for(batch.size(),
               [&](std::size_t i) { per_tuple[i] = tuple_gradient(m, cfg, batch[i], images); });
  // Reduced in tuple order so the sum is independent of scheduling.
  BackboneGradients backbone = BackboneGradients::zeros_like(m.net);
  std::vector<double> exponents(exponents_trainable(m) ? m.pooling.exponents.size() : 0, 0.0);
  BatchGradients out;
  for (const TupleGradient& g : per_tuple) {
    out.loss += g.loss;
    backbone += g.backbone;
    for (std::size_t k = 0; k < g.exponents.size(); ++k) exponents[k] += g.exponents[k];
  }
  for (const auto& l : backbone.layers) {
    out.flat.insert(out.flat.end(), l.weights.begin(), l.weights.end());
    out.flat.insert(out.flat.end(), l.bias.begin(), l.bias.end());
  }
  out.flat.insert(out.flat.end(), exponents.begin(), exponents.end());
  return out;
}

double train_step(Model& m, const TrainConfig& cfg, const std::vector<TrainingTuple>& batch,
                  const ImageStore& images, OptimizerState& state, double lr) {
  BatchGradients g = batch_gradients(m, cfg, batch, images);
  std::vector<double> params = flatten_parameters(m);
  const std::vector<double> mask = weight_decay_mask(m);
  for (std::size_t i = 0; i < params.size(); ++i) {
    g.flat[i] += cfg.weight_decay * mask[i] * params[i];
  }
  if (state.first.size() != params.size()) {
    state.first.assign(params.size(), 0.0);
    state.second.assign(params.size(), 0.0);
    state.steps = 0;
  }
  ++state.steps;
  if (cfg.optimizer == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first[i] = cfg.momentum * state.first[i] - lr * g.flat[i];
      params[i] += state.first[i];
    }
  } else {
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first[i] = b1 * state.first[i] + (1.0 - b1) * g.flat[i];
      state.second[i] = b2 * state.second[i] + (1.0 - b2) * g.flat[i] * g.flat[i];
      const double mhat = state.first[i] / c1;
      const double vhat = state.second[i] / c2;
      params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
  }
  assign_parameters(m, params);
  m.pooling.project_exponents();
  return g.loss;
}

double validate(const Model& m, const std::vector<TrainingTuple>& tuples, const ImageStore& images) {
  if (tuples.empty()) throw InvalidArgument("validate: no validation tuples");
  std::vector<double> rr(tuples.size());
  parallel_for(tuples.size(), [&](std::size_t i) {
    const TrainingTuple& t = tuples[i];
    const DescriptorVector q = extract_descriptor(m.net, m.pooling, lookup(images, t.query));
    const double pos_score =
        inner_product(q, extract_descriptor(m.net, m.pooling, lookup(images, t.positive)));
    // Rank of the positive; ties go to the lower id as in search().
    std::size_t rank = 1;
    for (ImageId n : t.negatives) {
      const double s = inner_product(q, extract_descriptor(m.net, m.pooling, lookup(images, n)));
      if (s > pos_score || (s == pos_score && n < t.positive)) ++rank;
    }
    rr[i] = 1.0 / static_cast<double>(rank);
  });
  double sum = 0.0;
  for (double v : rr) sum += v;
  return sum / static_cast<double>(tuples.size());
}

DescriptorTable compute_descriptors(const Model& m, const ImageStore& images,
                                    const std::vector<ImageId>& ids) {
  std::vector<DescriptorVector> out(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    out[i] = extract_descriptor(m.net, m.pooling, lookup(images, ids[i]));
  });
  DescriptorTable table;
  for (std::size_t i = 0; i < ids.size(); ++i) table.emplace(ids[i], std::move(out[i]));
  return table;
}

std::string TrainReport::to_json() const {
  using nlohmann::json;
  json doc;
  doc["train_clusters"] = train_clusters;
  doc["validation_clusters"] = validation_clusters;
  doc["validation_tuples"] = validation_tuples;
  doc["selected_epoch"] = selected_epoch;
  doc["epochs"] = json::array();
  for (const EpochRecord& e : epochs) {
    json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss ? json(*e.train_loss) : json(nullptr);
    j["validation_score"] = e.validation_score;
    j["exponents"] = e.exponents;
    j["remine_batches"] = e.remine_batches;
    j["tuples"] = e.tuples;
    j["skipped_queries"] = e.skipped_queries;
    doc["epochs"].push_back(std::move(j));
  }
  return doc.dump(2);
}

ClusterSplit split_clusters(const VisibilityGraph& g, double validation_fraction,
                            std::uint64_t seed) {
  std::vector<ClusterId> all = g.clusters();
  Rng rng(derive_seed(seed, 0x73706c));
  shuffle(all, rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::ceil(validation_fraction * static_cast<double>(all.size())));
  if (validation_fraction > 0.0 && all.size() > 1) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, all.size() > 0 ? all.size() - 1 : 0);
  ClusterSplit split;
  split.validation.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  split.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

std::vector<TrainingTuple> build_validation_tuples(const VisibilityGraph& g, const Model& m,
                                                   const TrainConfig& cfg,
                                                   const std::vector<ClusterId>& clusters,
                                                   const ImageStore& images) {
  if (clusters.empty()) return {};
  std::vector<ImageId> all_ids;
  for (const auto& im : g.images()) all_ids.push_back(im.id);
  std::sort(all_ids.begin(), all_ids.end());
  const DescriptorTable descriptors = compute_descriptors(m, images, all_ids);
  const PositiveAssignment positives = assign_positives(g, cfg.mining, clusters, descriptors);
  std::vector<TrainingTuple> tuples;
  std::vector<ClusterId> sorted = clusters;
  std::sort(sorted.begin(), sorted.end());
  for (ClusterId c : sorted) {
    for (ImageId q : g.cluster_members(c)) {
      auto it = positives.positive.find(q);
      if (it == positives.positive.end()) continue;
      TrainingTuple t;
      t.query = q;
      t.positive = it->second;
      t.negatives = mine_negatives(g, q, all_ids, descriptors, cfg.mining);
      tuples.push_back(std::move(t));
    }
  }
  return tuples;
}

TrainReport fit(Model& m, const VisibilityGraph& g, const ImageStore& images,
                const TrainConfig& cfg) {
  cfg.validate();
  m.pooling.validate(m.net.output_maps());
  TrainReport report;
  const ClusterSplit split = split_clusters(g, cfg.validation_fraction, cfg.seed);
  report.train_clusters = split.train;
  report.validation_clusters = split.validation;
  if (split.train.empty()) throw InvalidArgument("fit: no training clusters");

  std::vector<ImageId> train_ids;
  for (ClusterId c : split.train) {
    const auto members = g.cluster_members(c);
    train_ids.insert(train_ids.end(), members.begin(), members.end());
  }
  std::sort(train_ids.begin(), train_ids.end());
  const PositiveAssignment positives =
      assign_positives(g, cfg.mining, split.train, compute_descriptors(m, images, train_ids));
  if (positives.positive.empty()) throw InvalidArgument("fit: no training query has a positive");

  const std::vector<TrainingTuple> val_tuples =
      build_validation_tuples(g, m, cfg, split.validation, images);
  report.validation_tuples = val_tuples.size();
  auto score = [&](const Model& model) {
    return val_tuples.empty() ? 0.0 : validate(model, val_tuples, images);
  };

  EpochRecord initial;
  initial.validation_score = score(m);
  initial.exponents = m.pooling.exponents;
  report.epochs.push_back(initial);
  Model best = m;
  double best_score = initial.validation_score;

  OptimizerState state;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    EpochTuples tuples = sample_epoch(g, positives, cfg.mining, split.train, epoch, cfg.query_budget);
    Rng rng(derive_seed(cfg.seed, 0x657063, epoch));
    shuffle(tuples.tuples, rng);

    const std::size_t n_batches = (tuples.tuples.size() + cfg.batch_tuples - 1) / cfg.batch_tuples;
    std::set<std::size_t> remine_at;
    const std::size_t rounds = std::max<std::size_t>(cfg.remine_per_epoch, 1);
    for (std::size_t r = 0; r < rounds; ++r) remine_at.insert(r * n_batches / rounds);

    std::vector<ImageId> mining_ids = tuples.negative_candidates;
    for (const auto& t : tuples.tuples) mining_ids.push_back(t.query);
    std::sort(mining_ids.begin(), mining_ids.end());
    mining_ids.erase(std::unique(mining_ids.begin(), mining_ids.end()), mining_ids.end());

    EpochRecord record;
    record.epoch = epoch + 1;
    record.tuples = tuples.tuples.size();
    record.skipped_queries = tuples.skipped_queries;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      if (remine_at.count(b)) {
        remine_negatives(g, tuples, compute_descriptors(m, images, mining_ids), cfg.mining);
        record.remine_batches.push_back(b);
      }
      const std::size_t begin = b * cfg.batch_tuples;
      const std::size_t end = std::min(begin + cfg.batch_tuples, tuples.tuples.size());
      const std::vector<TrainingTuple> batch(tuples.tuples.begin() + static_cast<std::ptrdiff_t>(begin),
                                             tuples.tuples.begin() + static_cast<std::ptrdiff_t>(end));
      loss_sum += train_step(m, cfg, batch, images, state, lr);
    }
    if (n_batches > 0) record.train_loss = loss_sum / static_cast<double>(n_batches);
    record.validation_score = score(m);
    record.exponents = m.pooling.exponents;
    if (record.validation_score > best_score) {
      best_score = record.validation_score;
      best = m;
      report.selected_epoch = report.epochs.size();
    }
    report.epochs.push_back(std::move(record));
  }
  m = std::move(best);
  return report;
}

void save_checkpoint(const std::filesystem::path& path, const Model& m) {
  binary::Writer w;
  w.magic("GEMM");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(m.net.layers().size()));
  for (const ConvLayer& l : m.net.layers()) {
    w.u32(static_cast<std::uint32_t>(l.kernel));
    w.u32(static_cast<std::uint32_t>(l.in_maps));
    w.u32(static_cast<std::uint32_t>(l.out_maps));
    w.u32(static_cast<std::uint32_t>(l.stride));
    for (double v : l.weights) w.f32(v);
    for (double v : l.bias) w.f32(v);
  }
  w.u32(static_cast<std::uint32_t>(m.pooling.mode));
  w.u32(static_cast<std::uint32_t>(m.pooling.sharing));
  w.u32(m.pooling.trainable ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(m.pooling.exponents.size()));
  for (double p : m.pooling.exponents) w.f32(p);
  w.write_file(path);
}

Model load_checkpoint(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("GEMM");
  const std::uint32_t version = r.u32();
  if (version != 1) r.fail("unsupported checkpoint version " + std::to_string(version));
  const std::size_t n_layers = r.u32();
  if (n_layers == 0 || n_layers > 64) r.fail("implausible layer count " + std::to_string(n_layers));
  std::vector<ConvLayer> layers;
  for (std::size_t i = 0; i < n_layers; ++i) {
    ConvLayer l;
    l.kernel = r.u32();
    l.in_maps = r.u32();
    l.out_maps = r.u32();
    l.stride = r.u32();
    const std::size_t nw = l.kernel * l.kernel * l.in_maps * l.out_maps;
    if (nw == 0 || l.stride == 0 || r.remaining() < (nw + l.out_maps) * 4) {
      r.fail("layer " + std::to_string(i) + " shape is invalid or truncated");
    }
    l.weights.resize(nw);
    for (double& v : l.weights) v = r.f32();
    l.bias.resize(l.out_maps);
    for (double& v : l.bias) v = r.f32();
    layers.push_back(std::move(l));
  }
  Model m;
  try {
    m.net = TinyFCN(std::move(layers));
  } catch (const Error& e) {
    r.fail(e.what());
  }
  const std::uint32_t mode = r.u32();
  const std::uint32_t sharing = r.u32();
  const std::uint32_t trainable = r.u32();
  const std::size_t n_exp = r.u32();
  if (mode > 2 || sharing > 1 || trainable > 1) r.fail("invalid pooling configuration");
  m.pooling.mode = static_cast<PoolingMode>(mode);
  m.pooling.sharing = static_cast<ExponentSharing>(sharing);
  m.pooling.trainable = trainable == 1;
  m.pooling.exponents.resize(n_exp);
  for (double& p : m.pooling.exponents) p = r.f32();
  r.expect_end();
  try {
    m.pooling.validate(m.net.output_maps());
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return m;
}

}  // namespace gem
