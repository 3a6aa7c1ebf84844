#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <unordered_map>
#include <vector>

#include "gem/backbone.hpp"
#include "gem/mining.hpp"
#include "gem/pooling.hpp"

namespace gem {

struct IndexEntry {
  ImageId id;
  DescriptorVector descriptor;
};

// Flat database of l2-normalized descriptors searched exhaustively.
class DescriptorIndex {
 public:
  explicit DescriptorIndex(std::size_t dim = 0) : dim_(dim) {}

  // Ids must be unique.
  void add(ImageId id, DescriptorVector descriptor);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  const DescriptorVector& descriptor(ImageId id) const;

  // "GEMI" files.
  void save(const std::filesystem::path& path) const;
  static DescriptorIndex load(const std::filesystem::path& path);

 private:
  std::size_t dim_;
  std::vector<IndexEntry> entries_;
  std::unordered_map<ImageId, std::size_t> positions_;
};

struct RankedItem {
  ImageId id;
  double score;
};

using RankedList = std::vector<RankedItem>;

// Every entry scored by inner product, descending, ties by ascending id.
RankedList search(const DescriptorIndex& index, const DescriptorVector& q);

struct QEConfig {
  std::size_t top = 50;  // nQE
  double alpha = 3.0;

  void validate() const;
};

enum class QEMethod { kAverage, kAlphaWeighted };

struct QueryExpansion {
  QEMethod method = QEMethod::kAlphaWeighted;
  QEConfig config;
};

// Re-search with l2(q + sum of the top descriptors of `initial`).
RankedList average_qe(const DescriptorIndex& index, const DescriptorVector& q,
                      const RankedList& initial, const QEConfig& cfg);

// As average_qe with each top descriptor weighted by max(0, q.f)^alpha.
RankedList alpha_qe(const DescriptorIndex& index, const DescriptorVector& q,
                    const RankedList& initial, const QEConfig& cfg);

using GroundTruth = std::map<ImageId, std::set<ImageId>>;

// Mean of precision-at-rank over the ranks holding relevant items.
double average_precision(const RankedList& ranked, const std::set<ImageId>& relevant);

struct QueryDescriptor {
  ImageId id;
  DescriptorVector descriptor;
};

struct MapReport {
  double map = 0.0;
  std::vector<std::pair<ImageId, double>> per_query;
  std::vector<std::pair<ImageId, RankedList>> rankings;
};

// Each query's own id is removed from its ranking (before expansion too).
MapReport evaluate_queries(const DescriptorIndex& index, const std::vector<QueryDescriptor>& queries,
                           const GroundTruth& gt, const std::optional<QueryExpansion>& qe);

double mean_average_precision(const DescriptorIndex& index,
                              const std::vector<QueryDescriptor>& queries, const GroundTruth& gt,
                              const std::optional<QueryExpansion>& qe);

// "query_id image_id rank score" lines, rank from 1, score with 6 decimals.
void write_ranked_list(std::ostream& out, ImageId query, const RankedList& ranked);

inline const std::vector<double> kDefaultScales{1.0, 0.7071067811865476, 0.5};
inline constexpr std::size_t kDefaultMaxSide = 362;

// Single-scale descriptors at each scale combined by a component-wise
// generalized mean with the pooling exponent, then re-normalized.
DescriptorVector multiscale_descriptor(const TinyFCN& net, const PoolingConfig& cfg,
                                       const Image& img, const std::vector<double>& scales,
                                       std::size_t max_side = kDefaultMaxSide);

// Generalized mean of l2-normalized descriptors, re-normalized.
DescriptorVector combine_scales(const std::vector<DescriptorVector>& per_scale,
                                const PoolingConfig& cfg);

}  // namespace gem
