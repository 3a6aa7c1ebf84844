#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gem/numerics.hpp"
#include "gem/random.hpp"

namespace gem {

using ImageId = std::uint64_t;
using PointId = std::uint64_t;
using ClusterId = std::uint64_t;

using DescriptorTable = std::unordered_map<ImageId, DescriptorVector>;

const DescriptorVector& lookup(const DescriptorTable& table, ImageId id);

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

double distance(const Vec3& a, const Vec3& b);

struct GraphImage {
  ImageId id = 0;
  ClusterId cluster = 0;
  Vec3 camera;
  std::string file;
};

struct GraphPoint {
  PointId id = 0;
  Vec3 position;
};

struct Edge {
  ImageId image;
  PointId point;
};

// Bipartite image/point visibility graph of a set of 3D reconstructions.
// Each reconstruction is one cluster; clusters never share images.
class VisibilityGraph {
 public:
  VisibilityGraph() = default;
  VisibilityGraph(std::vector<GraphImage> images, std::vector<GraphPoint> points,
                  std::vector<Edge> edges);

  static VisibilityGraph load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json() const;
  static VisibilityGraph from_json(const std::string& text, const std::string& origin);

  const std::vector<GraphImage>& images() const { return images_; }
  const std::vector<GraphPoint>& points() const { return points_; }
  const std::vector<Edge>& edges() const { return edges_; }

  bool has_image(ImageId id) const { return image_index_.count(id) != 0; }
  const GraphImage& image(ImageId id) const;
  const GraphPoint& point(PointId id) const;
  ClusterId cluster_of(ImageId id) const { return image(id).cluster; }

  // Sorted point ids observed by an image.
  const std::vector<PointId>& observed(ImageId id) const;

  // Sorted, unique.
  std::vector<ClusterId> clusters() const;
  // Sorted by image id.
  std::vector<ImageId> cluster_members(ClusterId c) const;

 private:
  std::vector<GraphImage> images_;
  std::vector<GraphPoint> points_;
  std::vector<Edge> edges_;
  std::unordered_map<ImageId, std::size_t> image_index_;
  std::unordered_map<PointId, std::size_t> point_index_;
  std::vector<std::vector<PointId>> observed_;
};

enum class PositiveStrategy { kM1, kM2, kM3 };
enum class NegativeStrategy { kN1, kN2 };

std::string to_string(PositiveStrategy s);
std::string to_string(NegativeStrategy s);
PositiveStrategy parse_positive_strategy(const std::string& s);
NegativeStrategy parse_negative_strategy(const std::string& s);

struct MiningConfig {
  std::size_t pool_size = 100;
  double inlier_overlap = 0.2;
  double scale_threshold = 1.5;
  std::size_t negatives_per_tuple = 5;
  NegativeStrategy negative_strategy = NegativeStrategy::kN2;
  PositiveStrategy positive_strategy = PositiveStrategy::kM3;
  std::size_t extra_negative_candidates_per_model = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingTuple {
  ImageId query = 0;
  ImageId positive = 0;
  std::vector<ImageId> negatives;
  // Set when m2 picked a positive sharing no points with the query.
  bool degenerate_positive = false;
};

std::vector<PointId> observed_points(const VisibilityGraph& g, ImageId i);

// |P(a) n P(b)|
std::size_t co_observed_count(const VisibilityGraph& g, ImageId a, ImageId b);

// Up to k same-cluster images nearest to the query camera, query excluded.
std::vector<ImageId> positive_pool(const VisibilityGraph& g, ImageId q, std::size_t k);

// Ratio (>= 1) of mean camera-to-co-observed-point distances of the two images.
double scale_change(const VisibilityGraph& g, ImageId i, ImageId q);

ImageId select_positive_m1(const VisibilityGraph& g, ImageId q, const std::vector<ImageId>& pool,
                           const DescriptorTable& descriptors);
ImageId select_positive_m2(const VisibilityGraph& g, ImageId q, const std::vector<ImageId>& pool);
// Pool members passing both the inlier-overlap and scale-change thresholds.
std::vector<ImageId> m3_eligible(const VisibilityGraph& g, ImageId q,
                                 const std::vector<ImageId>& pool, const MiningConfig& cfg);
ImageId select_positive_m3(const VisibilityGraph& g, ImageId q, const std::vector<ImageId>& pool,
                           const MiningConfig& cfg, Rng& rng);

std::vector<ImageId> mine_negatives(const VisibilityGraph& g, ImageId q,
                                    const std::vector<ImageId>& candidates,
                                    const DescriptorTable& descriptors, const MiningConfig& cfg);

// Positives are chosen once per training run and reused by every epoch.
struct PositiveAssignment {
  std::unordered_map<ImageId, ImageId> positive;
  std::unordered_map<ImageId, bool> degenerate;
  std::vector<ImageId> without_positive;  // sorted
};

// Assigns a positive to every image of `clusters` (all clusters when empty).
// m1 reads `initial_descriptors`; other strategies ignore it.
PositiveAssignment assign_positives(const VisibilityGraph& g, const MiningConfig& cfg,
                                    const std::vector<ClusterId>& clusters,
                                    const DescriptorTable& initial_descriptors);

struct EpochTuples {
  std::vector<TrainingTuple> tuples;
  std::vector<ImageId> negative_candidates;  // sorted
  std::size_t skipped_queries = 0;
};

// Queries sampled per cluster: min(ceil(0.1 * size), 30), or
// min(query_budget, size) when a budget is given.
std::size_t queries_for_cluster(std::size_t cluster_size, std::optional<std::size_t> query_budget);

// Samples this epoch's queries and candidate negatives; negatives are left
// empty until remine_negatives().
EpochTuples sample_epoch(const VisibilityGraph& g, const PositiveAssignment& positives,
                         const MiningConfig& cfg, const std::vector<ClusterId>& clusters,
                         std::size_t epoch, std::optional<std::size_t> query_budget);

void remine_negatives(const VisibilityGraph& g, EpochTuples& epoch,
                      const DescriptorTable& descriptors, const MiningConfig& cfg);

EpochTuples build_epoch_tuples(const VisibilityGraph& g, const PositiveAssignment& positives,
                               const DescriptorTable& descriptors, const MiningConfig& cfg,
                               const std::vector<ClusterId>& clusters, std::size_t epoch,
                               std::optional<std::size_t> query_budget);

// Throws InvalidArgument describing the first violated tuple invariant.
void check_tuple(const VisibilityGraph& g, const TrainingTuple& t, std::size_t negatives);

}  // namespace gem
