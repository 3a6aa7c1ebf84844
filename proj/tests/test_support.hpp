#pragma once

#include <filesystem>
#include <string>

#include "gem/backbone.hpp"
#include "gem/mining.hpp"
#include "gem/random.hpp"

namespace gem::tu {

inline ActivationTensor random_tensor(Rng& rng, std::size_t w, std::size_t h, std::size_t k,
                                      double lo = 0.0, double hi = 5.0) {
  ActivationTensor x(w, h, k);
  for (double& v : x.values) v = uniform_real(rng, lo, hi);
  return x;
}

inline DescriptorVector random_vector(Rng& rng, std::size_t n) {
  DescriptorVector v{std::vector<double>(n)};
  for (double& x : v.values) x = standard_normal(rng);
  return v;
}

inline DescriptorVector random_unit(Rng& rng, std::size_t n) { return l2_normalize(random_vector(rng, n)); }

inline Image random_image(Rng& rng, std::size_t w, std::size_t h, std::size_t c = 1) {
  Image img(w, h, c);
  for (double& v : img.pixels) v = uniform01(rng);
  return img;
}

// Clustered graph with at most max_images images and max_points points.
// Cameras hover at random heights over their cluster's patch of the z = 0
// plane; each image sees each cluster point with probability 1/2.
inline VisibilityGraph random_graph(Rng& rng, std::size_t clusters, std::size_t max_images = 50,
                                    std::size_t max_points = 200) {
  std::vector<GraphImage> images;
  std::vector<GraphPoint> points;
  std::vector<Edge> edges;
  const std::size_t per_cluster_images = max_images / clusters;
  const std::size_t per_cluster_points = max_points / clusters;
  ImageId next_image = 0;
  PointId next_point = 0;
  for (std::size_t c = 0; c < clusters; ++c) {
    const double ox = 100.0 * static_cast<double>(c);
    std::vector<PointId> local;
    for (std::size_t p = 0; p < per_cluster_points; ++p) {
      points.push_back({next_point, {ox + uniform_real(rng, 0, 2), uniform_real(rng, 0, 2), 0.0}});
      local.push_back(next_point++);
    }
    const std::size_t n = 2 + uniform_index(rng, per_cluster_images - 1);
    for (std::size_t i = 0; i < n; ++i) {
      GraphImage gi;
      gi.id = next_image++;
      gi.cluster = c;
      gi.camera = {ox + uniform_real(rng, 0, 2), uniform_real(rng, 0, 2), uniform_real(rng, 1, 4)};
      gi.file = "img" + std::to_string(gi.id) + ".pgm";
      for (PointId p : local)
        if (uniform_index(rng, 2) == 0) edges.push_back({gi.id, p});
      images.push_back(gi);
    }
  }
  return VisibilityGraph(std::move(images), std::move(points), std::move(edges));
}

inline DescriptorTable random_descriptors(Rng& rng, const VisibilityGraph& g, std::size_t dim) {
  DescriptorTable t;
  for (const GraphImage& gi : g.images()) t.emplace(gi.id, random_unit(rng, dim));
  return t;
}

// Fresh directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("gem_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace gem::tu
