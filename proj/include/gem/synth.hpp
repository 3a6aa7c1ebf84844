#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gem/backbone.hpp"
#include "gem/dataset.hpp"
#include "gem/mining.hpp"
#include "gem/trainer.hpp"

namespace gem {

// Planar textured scenes viewed through square crops. Scene coordinates are
// in texture units; a view of crop side s rendered at image_size pixels has
// its camera at depth s above the crop center.
struct SynthConfig {
  std::size_t clusters = 8;
  std::size_t images_min = 12;
  std::size_t images_max = 12;
  std::size_t points_per_cluster = 300;
  double camera_jitter = 0.3;  // view-center shift, fraction of crop side
  std::uint64_t texture_seed = 0;
  std::size_t image_size = 40;
  std::size_t channels = 1;
  double scene_size = 96.0;
  double view_side = 40.0;  // crop side at zoom 1
  double zoom_min = 0.8;
  double zoom_max = 1.25;
  // Scales the per-image photometric nuisance (brightness, contrast,
  // illumination gradient, sensor noise).
  double nuisance = 1.0;

  void validate() const;
};

struct SynthDataset {
  VisibilityGraph graph;
  ImageStore images;  // keyed by graph image id, quantized to 8 bits
  DatasetManifest manifest;
};

SynthDataset generate_synthetic(const SynthConfig& cfg);

// Writes graph.json, manifest.json and images/<id>.pgm|ppm under dir.
void write_synthetic(const SynthDataset& ds, const std::filesystem::path& dir);

// Loads every graph image; files resolve against the graph file's directory.
ImageStore load_graph_images(const VisibilityGraph& g, const std::filesystem::path& graph_path);

}  // namespace gem
