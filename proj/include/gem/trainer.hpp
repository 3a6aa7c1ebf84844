#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "gem/backbone.hpp"
#include "gem/loss.hpp"
#include "gem/mining.hpp"
#include "gem/pooling.hpp"

namespace gem {

enum class OptimizerKind { kSgd, kAdam };
enum class LossKind { kContrastive, kTriplet };

std::string to_string(OptimizerKind k);
std::string to_string(LossKind k);
OptimizerKind parse_optimizer(const std::string& s);
LossKind parse_loss(const std::string& s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  // Unset means 1e-3 for SGD and 1e-6 for Adam.
  std::optional<double> initial_lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Adam moments; not tied to any published retrieval setup.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_tuples = 5;
  std::size_t epochs = 30;
  std::size_t remine_per_epoch = 3;
  LossKind loss = LossKind::kContrastive;
  LossConfig loss_config;
  PoolingConfig pooling;
  MiningConfig mining;
  // Training queries per cluster; unset uses the 10% / 30 rule.
  std::optional<std::size_t> query_budget;
  // Share of clusters held out for validation (162 of 713 models).
  double validation_fraction = 162.0 / 713.0;
  std::uint64_t seed = 0;

  double base_lr() const;
  void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct ImagePair {
  ImageId i;
  ImageId j;
  PairLabel label;
};

// (query, positive) matching, then one non-matching pair per negative.
std::vector<ImagePair> tuple_to_pairs(const TrainingTuple& t);

// Jacobian-transpose product of x -> x/|x| at f.
DescriptorVector normalize_backward(const DescriptorVector& f, const DescriptorVector& grad_fbar);

// Everything the optimizer updates.
struct Model {
  TinyFCN net;
  PoolingConfig pooling;
};

// Flat parameter layout: every layer's weights then bias, then the pooling
// exponents when they are trainable.
std::vector<double> flatten_parameters(const Model& m);
void assign_parameters(Model& m, std::span<const double> flat);
// 1 where weight decay applies (conv weights), 0 elsewhere.
std::vector<double> weight_decay_mask(const Model& m);
bool exponents_trainable(const Model& m);

using ImageStore = std::unordered_map<ImageId, Image>;

const Image& lookup(const ImageStore& images, ImageId id);

struct BatchGradients {
  double loss = 0.0;
  std::vector<double> flat;  // same layout as flatten_parameters
};

// Summed loss of every pair (or triplet) in the batch.
double batch_loss(const Model& m, const TrainConfig& cfg, const std::vector<TrainingTuple>& batch,
                  const ImageStore& images);

// Loss and its exact gradient. Each tuple image is forwarded once and its
// descriptor shared by all pairs of the tuple.
BatchGradients batch_gradients(const Model& m, const TrainConfig& cfg,
                               const std::vector<TrainingTuple>& batch, const ImageStore& images);

struct OptimizerState {
  std::vector<double> first;   // momentum / Adam first moment
  std::vector<double> second;  // Adam second moment
  std::size_t steps = 0;
};

// One optimizer step on the batch; returns the batch loss before the update.
double train_step(Model& m, const TrainConfig& cfg, const std::vector<TrainingTuple>& batch,
                  const ImageStore& images, OptimizerState& state, double lr);

// Mean reciprocal rank of the positive among {positive} + negatives.
double validate(const Model& m, const std::vector<TrainingTuple>& tuples, const ImageStore& images);

// Single-scale descriptors of `ids` under the model.
DescriptorTable compute_descriptors(const Model& m, const ImageStore& images,
                                    const std::vector<ImageId>& ids);

struct EpochRecord {
  std::size_t epoch = 0;             // 0 is the untrained model
  std::optional<double> train_loss;  // mean batch loss
  double validation_score = 0.0;
  std::vector<double> exponents;
  std::vector<std::size_t> remine_batches;
  std::size_t tuples = 0;
  std::size_t skipped_queries = 0;
};

struct TrainReport {
  std::vector<ClusterId> train_clusters;
  std::vector<ClusterId> validation_clusters;
  std::size_t validation_tuples = 0;
  std::vector<EpochRecord> epochs;
  std::size_t selected_epoch = 0;

  std::string to_json() const;
};

struct ClusterSplit {
  std::vector<ClusterId> train;
  std::vector<ClusterId> validation;
};

ClusterSplit split_clusters(const VisibilityGraph& g, double validation_fraction, std::uint64_t seed);

// Validation tuples over the held-out clusters: positives from the configured
// strategy, hard negatives from every other cluster under the given model.
std::vector<TrainingTuple> build_validation_tuples(const VisibilityGraph& g, const Model& m,
                                                   const TrainConfig& cfg,
                                                   const std::vector<ClusterId>& clusters,
                                                   const ImageStore& images);

// Fine-tunes `m` in place and leaves it at the best validation epoch.
TrainReport fit(Model& m, const VisibilityGraph& g, const ImageStore& images,
                const TrainConfig& cfg);

// "GEMM" checkpoint files.
void save_checkpoint(const std::filesystem::path& path, const Model& m);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace gem
