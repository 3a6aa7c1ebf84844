#pragma once

#include <filesystem>
#include <optional>
#include <ostream>

#include "gem/config.hpp"
#include "gem/dataset.hpp"
#include "gem/retrieval.hpp"
#include "gem/trainer.hpp"
#include "gem/whitening.hpp"

namespace gem {

// Freshly initialized network plus pooling for images with `channels` channels.
Model make_model(const RunConfig& cfg, std::size_t channels);

// Matching pairs are m3-eligible same-cluster pairs; non-matching pairs are
// every cross-cluster pair.
LabeledPairSet mine_whitening_pairs(const VisibilityGraph& g, const DescriptorTable& descriptors,
                                    const MiningConfig& cfg);

// Multi-scale descriptors of every graph image.
DescriptorTable graph_descriptors(const Model& m, const ImageStore& images, const VisibilityGraph& g,
                                  const RunConfig& cfg);

void cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

TrainReport cmd_train(const RunConfig& cfg, const std::filesystem::path& graph_path,
                      const std::filesystem::path& checkpoint_path,
                      const std::filesystem::path& report_path, std::ostream& log);

WhiteningTransform cmd_whiten(const RunConfig& cfg, const std::filesystem::path& checkpoint_path,
                              const std::filesystem::path& graph_path, std::size_t out_dim,
                              const std::filesystem::path& out_path, std::ostream& log);

DescriptorIndex cmd_index(const RunConfig& cfg, const std::filesystem::path& checkpoint_path,
                          const std::optional<std::filesystem::path>& whitening_path,
                          const std::filesystem::path& manifest_path,
                          const std::filesystem::path& out_path, std::ostream& log);

// Prints per-query AP and the mAP; writes every ranking to ranked_path.
MapReport cmd_eval(const std::filesystem::path& index_path, const std::filesystem::path& manifest_path,
                   const std::optional<QueryExpansion>& qe, const std::filesystem::path& ranked_path,
                   std::ostream& out);

// Returns true when every suite passes.
bool cmd_gradcheck(const RunConfig& cfg, const std::optional<std::string>& corrupt_suite,
                   std::ostream& out);

}  // namespace gem
