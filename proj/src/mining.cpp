#include "gem/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gem {

using nlohmann::json;

const DescriptorVector& lookup(const DescriptorTable& table, ImageId id) {
  auto it = table.find(id);
  if (it == table.end()) {
    throw InvalidArgument("no descriptor for image " + std::to_string(id));
  }
  return it->second;
}

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

VisibilityGraph::VisibilityGraph(std::vector<GraphImage> images, std::vector<GraphPoint> points,
                                 std::vector<Edge> edges)
    : images_(std::move(images)), points_(std::move(points)), edges_(std::move(edges)) {
  for (std::size_t i = 0; i < images_.size(); ++i) {
    if (!image_index_.emplace(images_[i].id, i).second) {
      throw InvalidArgument("visibility graph: duplicate image id " +
                            std::to_string(images_[i].id));
    }
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!point_index_.emplace(points_[i].id, i).second) {
      throw InvalidArgument("visibility graph: duplicate point id " +
                            std::to_string(points_[i].id));
    }
  }
  observed_.assign(images_.size(), {});
  for (const Edge& e : edges_) {
    auto it = image_index_.find(e.image);
    if (it == image_index_.end()) {
      throw InvalidArgument("visibility graph: edge references unknown image " +
                            std::to_string(e.image));
    }
    if (point_index_.count(e.point) == 0) {
      throw InvalidArgument("visibility graph: edge references unknown point " +
                            std::to_string(e.point));
    }
    observed_[it->second].push_back(e.point);
  }
  for (auto& pts : observed_) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  }
}

const GraphImage& VisibilityGraph::image(ImageId id) const {
  auto it = image_index_.find(id);
  if (it == image_index_.end()) throw InvalidArgument("unknown image id " + std::to_string(id));
  return images_[it->second];
}

const GraphPoint& VisibilityGraph::point(PointId id) const {
  auto it = point_index_.find(id);
  if (it == point_index_.end()) throw InvalidArgument("unknown point id " + std::to_string(id));
  return points_[it->second];
}

const std::vector<PointId>& VisibilityGraph::observed(ImageId id) const {
  auto it = image_index_.find(id);
  if (it == image_index_.end()) throw InvalidArgument("unknown image id " + std::to_string(id));
  return observed_[it->second];
}

std::vector<ClusterId> VisibilityGraph::clusters() const {
  std::set<ClusterId> s;
  for (const auto& im : images_) s.insert(im.cluster);
  return {s.begin(), s.end()};
}

std::vector<ImageId> VisibilityGraph::cluster_members(ClusterId c) const {
  std::vector<ImageId> out;
  for (const auto& im : images_)
    if (im.cluster == c) out.push_back(im.id);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw FormatError(what + ": expected [x,y,z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::string VisibilityGraph::to_json() const {
  json doc;
  doc["images"] = json::array();
  for (const auto& im : images_) {
    doc["images"].push_back(
        {{"id", im.id}, {"cluster", im.cluster}, {"camera", vec3_json(im.camera)}, {"file", im.file}});
  }
  doc["points"] = json::array();
  for (const auto& p : points_) doc["points"].push_back({{"id", p.id}, {"xyz", vec3_json(p.position)}});
  doc["edges"] = json::array();
  for (const auto& e : edges_) doc["edges"].push_back(json::array({e.image, e.point}));
  return doc.dump(1);
}

VisibilityGraph VisibilityGraph::from_json(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(origin + ": " + e.what());
  }
  try {
    std::vector<GraphImage> images;
    for (const auto& j : doc.at("images")) {
      GraphImage im;
      im.id = j.at("id").get<ImageId>();
      im.cluster = j.at("cluster").get<ClusterId>();
      im.camera = vec3_from(j.at("camera"), origin + ": image " + std::to_string(im.id));
      if (j.contains("file")) im.file = j.at("file").get<std::string>();
      images.push_back(std::move(im));
    }
    std::vector<GraphPoint> points;
    for (const auto& j : doc.at("points")) {
      GraphPoint p;
      p.id = j.at("id").get<PointId>();
      p.position = vec3_from(j.at("xyz"), origin + ": point " + std::to_string(p.id));
      points.push_back(p);
    }
    std::vector<Edge> edges;
    for (const auto& j : doc.at("edges")) {
      if (!j.is_array() || j.size() != 2) throw FormatError(origin + ": edge must be [image, point]");
      edges.push_back({j[0].get<ImageId>(), j[1].get<PointId>()});
    }
    return VisibilityGraph(std::move(images), std::move(points), std::move(edges));
  } catch (const json::exception& e) {
    throw FormatError(origin + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(origin + ": " + e.what());
  }
}

VisibilityGraph VisibilityGraph::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open visibility graph");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), path.string());
}

void VisibilityGraph::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out << to_json() << '\n';
}

std::string to_string(PositiveStrategy s) {
  switch (s) {
    case PositiveStrategy::kM1: return "m1";
    case PositiveStrategy::kM2: return "m2";
    case PositiveStrategy::kM3: return "m3";
  }
  return "?";
}

std::string to_string(NegativeStrategy s) {
  return s == NegativeStrategy::kN1 ? "N1" : "N2";
}

PositiveStrategy parse_positive_strategy(const std::string& s) {
  if (s == "m1") return PositiveStrategy::kM1;
  if (s == "m2") return PositiveStrategy::kM2;
  if (s == "m3") return PositiveStrategy::kM3;
  throw InvalidArgument("unknown positive strategy \"" + s + "\" (expected m1, m2 or m3)");
}

NegativeStrategy parse_negative_strategy(const std::string& s) {
  if (s == "N1" || s == "n1") return NegativeStrategy::kN1;
  if (s == "N2" || s == "n2") return NegativeStrategy::kN2;
  throw InvalidArgument("unknown negative strategy \"" + s + "\" (expected N1 or N2)");
}

void MiningConfig::validate() const {
  if (pool_size == 0) throw InvalidArgument("mining: pool_size must be positive");
  if (!(inlier_overlap > 0.0 && inlier_overlap <= 1.0)) {
    throw InvalidArgument("mining: inlier_overlap must lie in (0, 1]");
  }
  if (!(scale_threshold >= 1.0)) throw InvalidArgument("mining: scale_threshold must be >= 1");
  if (negatives_per_tuple == 0) throw InvalidArgument("mining: negatives_per_tuple must be positive");
}

std::vector<PointId> observed_points(const VisibilityGraph& g, ImageId i) {
  return g.observed(i);
}

namespace {

std::vector<PointId> shared_points(const VisibilityGraph& g, ImageId a, ImageId b) {
  const auto& pa = g.observed(a);
  const auto& pb = g.observed(b);
  std::vector<PointId> out;
  std::set_intersection(pa.begin(), pa.end(), pb.begin(), pb.end(), std::back_inserter(out));
  return out;
}

}  // namespace

std::size_t co_observed_count(const VisibilityGraph& g, ImageId a, ImageId b) {
  return shared_points(g, a, b).size();
}

std::vector<ImageId> positive_pool(const VisibilityGraph& g, ImageId q, std::size_t k) {
  const GraphImage& query = g.image(q);
  std::vector<std::pair<double, ImageId>> ranked;
  for (ImageId id : g.cluster_members(query.cluster)) {
    if (id == q) continue;
    ranked.emplace_back(distance(query.camera, g.image(id).camera), id);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<ImageId> pool;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) pool.push_back(ranked[i].second);
  return pool;
}

double scale_change(const VisibilityGraph& g, ImageId i, ImageId q) {
  const std::vector<PointId> common = shared_points(g, i, q);
  if (common.empty()) {
    throw InvalidArgument("scale_change: images " + std::to_string(i) + " and " +
                          std::to_string(q) + " share no points");
  }
  auto mean_depth = [&](ImageId id) {
    const Vec3& c = g.image(id).camera;
    double s = 0.0;
    for (PointId p : common) s += distance(c, g.point(p).position);
    return s / static_cast<double>(common.size());
  };
  const double di = mean_depth(i);
  const double dq = mean_depth(q);
  if (di == dq) return 1.0;
  if (di <= 0.0 || dq <= 0.0) return std::numeric_limits<double>::infinity();
  return std::max(di / dq, dq / di);
}

ImageId select_positive_m1(const VisibilityGraph& g, ImageId q, const std::vector<ImageId>& pool,
                           const DescriptorTable& descriptors) {
  if (pool.empty()) throw NoValidPositive("m1: empty positive pool for query " + std::to_string(q));
  (void)g;
  const DescriptorVector& fq = lookup(descriptors, q);
  ImageId best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (ImageId id : pool) {
    const double d = squared_distance(fq, lookup(descriptors, id));
    if (d < best_d || (d == best_d && id < best)) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

ImageId select_positive_m2(const VisibilityGraph& g, ImageId q, const std::vector<ImageId>& pool) {
  if (pool.empty()) throw NoValidPositive("m2: empty positive pool for query " + std::to_string(q));
  ImageId best = 0;
  std::size_t best_count = 0;
  bool first = true;
  for (ImageId id : pool) {
    const std::size_t n = co_observed_count(g, q, id);
    if (first || n > best_count || (n == best_count && id < best)) {
      best = id;
      best_count = n;
      first = false;
    }
  }
  return best;
}

std::vector<ImageId> m3_eligible(const VisibilityGraph& g, ImageId q,
                                 const std::vector<ImageId>& pool, const MiningConfig& cfg) {
  const std::size_t nq = g.observed(q).size();
  std::vector<ImageId> out;
  if (nq == 0) return out;
  for (ImageId id : pool) {
    const std::size_t common = co_observed_count(g, q, id);
    if (common == 0) continue;
    const double overlap = static_cast<double>(common) / static_cast<double>(nq);
    if (overlap >= cfg.inlier_overlap && scale_change(g, id, q) <= cfg.scale_threshold) {
      out.push_back(id);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

ImageId select_positive_m3(const VisibilityGraph& g, ImageId q, const std::vector<ImageId>& pool,
                           const MiningConfig& cfg, Rng& rng) {
  if (pool.empty()) throw NoValidPositive("m3: empty positive pool for query " + std::to_string(q));
  const std::vector<ImageId> eligible = m3_eligible(g, q, pool, cfg);
  if (eligible.empty()) {
    throw NoValidPositive("m3: no pool member of query " + std::to_string(q) +
                          " passes the overlap and scale thresholds");
  }
  return eligible[uniform_index(rng, eligible.size())];
}

std::vector<ImageId> mine_negatives(const VisibilityGraph& g, ImageId q,
                                    const std::vector<ImageId>& candidates,
                                    const DescriptorTable& descriptors, const MiningConfig& cfg) {
  const ClusterId qc = g.cluster_of(q);
  const DescriptorVector& fq = lookup(descriptors, q);
  std::vector<std::pair<double, ImageId>> ranked;
  for (ImageId id : candidates) {
    if (g.cluster_of(id) == qc) continue;
    ranked.emplace_back(inner_product(fq, lookup(descriptors, id)), id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<ImageId> out;
  std::set<ClusterId> used;
  for (const auto& [score, id] : ranked) {
    if (out.size() == cfg.negatives_per_tuple) break;
    if (cfg.negative_strategy == NegativeStrategy::kN2 && !used.insert(g.cluster_of(id)).second) {
      continue;
    }
    out.push_back(id);
  }
  if (out.size() < cfg.negatives_per_tuple) {
    const std::size_t missing = cfg.negatives_per_tuple - out.size();
    throw InsufficientCandidates("mine_negatives: query " + std::to_string(q) + " has only " +
                                     std::to_string(out.size()) + " eligible negatives, " +
                                     std::to_string(missing) + " short of " +
                                     std::to_string(cfg.negatives_per_tuple),
                                 missing);
  }
  return out;
}

namespace {

std::vector<ClusterId> resolve_clusters(const VisibilityGraph& g,
                                        const std::vector<ClusterId>& clusters) {
  if (clusters.empty()) return g.clusters();
  std::vector<ClusterId> out = clusters;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

constexpr std::uint64_t kPositiveStream = 0x706f73;
constexpr std::uint64_t kQueryStream = 0x717279;
constexpr std::uint64_t kExtraStream = 0x657874;

}  // namespace

PositiveAssignment assign_positives(const VisibilityGraph& g, const MiningConfig& cfg,
                                    const std::vector<ClusterId>& clusters,
                                    const DescriptorTable& initial_descriptors) {
  cfg.validate();
  PositiveAssignment out;
  for (ClusterId c : resolve_clusters(g, clusters)) {
    for (ImageId q : g.cluster_members(c)) {
      const std::vector<ImageId> pool = positive_pool(g, q, cfg.pool_size);
      try {
        ImageId pos = 0;
        bool degenerate = false;
        switch (cfg.positive_strategy) {
          case PositiveStrategy::kM1:
            pos = select_positive_m1(g, q, pool, initial_descriptors);
            break;
          case PositiveStrategy::kM2:
            pos = select_positive_m2(g, q, pool);
            degenerate = co_observed_count(g, q, pos) == 0;
            break;
          case PositiveStrategy::kM3: {
            Rng rng(derive_seed(cfg.seed, kPositiveStream, q));
            pos = select_positive_m3(g, q, pool, cfg, rng);
            break;
          }
        }
        out.positive.emplace(q, pos);
        out.degenerate.emplace(q, degenerate);
      } catch (const NoValidPositive&) {
        out.without_positive.push_back(q);
      }
    }
  }
  std::sort(out.without_positive.begin(), out.without_positive.end());
  return out;
}

std::size_t queries_for_cluster(std::size_t cluster_size,
                                std::optional<std::size_t> query_budget) {
  if (query_budget) return std::min(*query_budget, cluster_size);
  const auto tenth = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(cluster_size)));
  return std::min<std::size_t>(tenth, 30);
}

EpochTuples sample_epoch(const VisibilityGraph& g, const PositiveAssignment& positives,
                         const MiningConfig& cfg, const std::vector<ClusterId>& clusters,
                         std::size_t epoch, std::optional<std::size_t> query_budget) {
  cfg.validate();
  EpochTuples out;
  std::set<ImageId> candidates;
  for (ClusterId c : resolve_clusters(g, clusters)) {
    std::vector<ImageId> members = g.cluster_members(c);
    Rng rng(derive_seed(cfg.seed, kQueryStream ^ epoch, c));
    std::vector<ImageId> order = members;
    shuffle(order, rng);
    const std::size_t n = queries_for_cluster(members.size(), query_budget);
    std::vector<ImageId> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(chosen.begin(), chosen.end());
    for (ImageId q : chosen) {
      auto it = positives.positive.find(q);
      if (it == positives.positive.end()) {
        ++out.skipped_queries;
        continue;
      }
      TrainingTuple t;
      t.query = q;
      t.positive = it->second;
      auto deg = positives.degenerate.find(q);
      t.degenerate_positive = deg != positives.degenerate.end() && deg->second;
      out.tuples.push_back(t);
      candidates.insert(q);
      candidates.insert(t.positive);
    }
    Rng extra_rng(derive_seed(cfg.seed, kExtraStream ^ epoch, c));
    std::vector<ImageId> extra = members;
    shuffle(extra, extra_rng);
    const std::size_t n_extra = std::min(cfg.extra_negative_candidates_per_model, extra.size());
    candidates.insert(extra.begin(), extra.begin() + static_cast<std::ptrdiff_t>(n_extra));
  }
  out.negative_candidates.assign(candidates.begin(), candidates.end());
  return out;
}

void remine_negatives(const VisibilityGraph& g, EpochTuples& epoch,
                      const DescriptorTable& descriptors, const MiningConfig& cfg) {
  for (TrainingTuple& t : epoch.tuples) {
    t.negatives = mine_negatives(g, t.query, epoch.negative_candidates, descriptors, cfg);
  }
}

EpochTuples build_epoch_tuples(const VisibilityGraph& g, const PositiveAssignment& positives,
                               const DescriptorTable& descriptors, const MiningConfig& cfg,
                               const std::vector<ClusterId>& clusters, std::size_t epoch,
                               std::optional<std::size_t> query_budget) {
  EpochTuples out = sample_epoch(g, positives, cfg, clusters, epoch, query_budget);
  remine_negatives(g, out, descriptors, cfg);
  return out;
}

void check_tuple(const VisibilityGraph& g, const TrainingTuple& t, std::size_t negatives) {
  const std::string where = "tuple with query " + std::to_string(t.query);
  const ClusterId qc = g.cluster_of(t.query);
  if (t.positive == t.query) throw InvalidArgument(where + ": positive equals query");
  if (g.cluster_of(t.positive) != qc) throw InvalidArgument(where + ": positive in another cluster");
  if (t.negatives.size() != negatives) {
    throw InvalidArgument(where + ": " + std::to_string(t.negatives.size()) + " negatives, expected " +
                          std::to_string(negatives));
  }
  for (ImageId n : t.negatives) {
    if (g.cluster_of(n) == qc) {
      throw InvalidArgument(where + ": negative " + std::to_string(n) + " shares the query cluster");
    }
  }
}

}  // namespace gem
