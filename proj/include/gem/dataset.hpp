#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gem/backbone.hpp"
#include "gem/retrieval.hpp"

namespace gem {

struct ManifestEntry {
  ImageId id = 0;
  std::string file;                               // relative to the root
  std::optional<std::array<std::size_t, 4>> crop;  // x, y, w, h in pixels
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::vector<ImageId> queries;
  GroundTruth ground_truth;

  // Relative roots resolve against the manifest's directory.
  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text, const std::string& origin);

  // Throws on duplicate ids, queries without an entry or ground truth.
  void validate() const;
  std::filesystem::path resolve(const ManifestEntry& e) const;
  // Loads the entry's image and applies its crop.
  Image load_image(const ManifestEntry& e) const;
};

}  // namespace gem
