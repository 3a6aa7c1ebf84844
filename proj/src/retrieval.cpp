#include "gem/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "gem/binary_io.hpp"

namespace gem {

void DescriptorIndex::add(ImageId id, DescriptorVector descriptor) {
  if (entries_.empty() && dim_ == 0) dim_ = descriptor.dim();
  if (descriptor.dim() != dim_) {
    throw DimensionMismatch("index: descriptor for image " + std::to_string(id) + " has dim " +
                            std::to_string(descriptor.dim()) + ", index dim is " +
                            std::to_string(dim_));
  }
  if (!positions_.emplace(id, entries_.size()).second) {
    throw InvalidArgument("index: duplicate image id " + std::to_string(id));
  }
  descriptor.normalized = true;
  entries_.push_back({id, std::move(descriptor)});
}

const DescriptorVector& DescriptorIndex::descriptor(ImageId id) const {
  auto it = positions_.find(id);
  if (it != positions_.end()) return entries_[it->second].descriptor;
  throw InvalidArgument("index has no image " + std::to_string(id));
}

void DescriptorIndex::save(const std::filesystem::path& path) const {
  binary::Writer w;
  w.magic("GEMI");
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.u64(e.id);
    for (double v : e.descriptor.values) w.f32(v);
  }
  w.write_file(path);
}

DescriptorIndex DescriptorIndex::load(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("GEMI");
  const std::size_t dim = r.u32();
  const std::size_t count = r.u32();
  if (r.remaining() != count * (8 + dim * 4)) r.fail("payload length does not match header");
  DescriptorIndex index(dim);
  for (std::size_t i = 0; i < count; ++i) {
    const ImageId id = r.u64();
    DescriptorVector v(std::vector<double>(dim), true);
    for (double& x : v.values) x = r.f32();
    try {
      index.add(id, std::move(v));
    } catch (const InvalidArgument& e) {
      r.fail(e.what());
    }
  }
  return index;
}

RankedList search(const DescriptorIndex& index, const DescriptorVector& q) {
  if (!index.empty() && q.dim() != index.dim()) {
    throw DimensionMismatch("search: query dim " + std::to_string(q.dim()) +
                            " does not match index dim " + std::to_string(index.dim()));
  }
  RankedList out;
  out.reserve(index.size());
  for (const auto& e : index.entries()) out.push_back({e.id, inner_product(q, e.descriptor)});
  std::sort(out.begin(), out.end(), [](const RankedItem& a, const RankedItem& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  return out;
}

void QEConfig::validate() const {
  if (!(alpha >= 0.0)) throw InvalidArgument("query expansion: alpha must be non-negative");
}

namespace {

template <typename Weight>
RankedList expand_and_search(const DescriptorIndex& index, const DescriptorVector& q,
                             const RankedList& initial, const QEConfig& cfg, Weight weight) {
  if (index.empty()) throw InvalidArgument("query expansion on an empty index");
  cfg.validate();
  DescriptorVector expanded = q;
  const std::size_t n = std::min(cfg.top, initial.size());
  for (std::size_t r = 0; r < n; ++r) {
    const DescriptorVector& f = index.descriptor(initial[r].id);
    const double w = weight(f);
    for (std::size_t k = 0; k < expanded.dim(); ++k) expanded.values[k] += w * f.values[k];
  }
  return search(index, l2_normalize(expanded));
}

}  // namespace

RankedList average_qe(const DescriptorIndex& index, const DescriptorVector& q,
                      const RankedList& initial, const QEConfig& cfg) {
  return expand_and_search(index, q, initial, cfg, [](const DescriptorVector&) { return 1.0; });
}

RankedList alpha_qe(const DescriptorIndex& index, const DescriptorVector& q,
                    const RankedList& initial, const QEConfig& cfg) {
  return expand_and_search(index, q, initial, cfg, [&](const DescriptorVector& f) {
    return std::pow(std::max(0.0, inner_product(q, f)), cfg.alpha);
  });
}

double average_precision(const RankedList& ranked, const std::set<ImageId>& relevant) {
  if (relevant.empty()) throw InvalidArgument("average_precision: empty relevant set");
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (relevant.count(ranked[r].id) == 0) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(relevant.size());
}

namespace {

RankedList without(RankedList list, ImageId id) {
  list.erase(std::remove_if(list.begin(), list.end(), [&](const RankedItem& r) { return r.id == id; }),
             list.end());
  return list;
}

}  // namespace

MapReport evaluate_queries(const DescriptorIndex& index, const std::vector<QueryDescriptor>& queries,
                           const GroundTruth& gt, const std::optional<QueryExpansion>& qe) {
  if (queries.empty()) throw InvalidArgument("evaluation needs at least one query");
  MapReport report;
  double total = 0.0;
  for (const QueryDescriptor& q : queries) {
    auto it = gt.find(q.id);
    if (it == gt.end()) {
      throw InvalidArgument("no ground truth for query " + std::to_string(q.id));
    }
    RankedList ranked = without(search(index, q.descriptor), q.id);
    if (qe) {
      ranked = qe->method == QEMethod::kAverage ? average_qe(index, q.descriptor, ranked, qe->config)
                                                : alpha_qe(index, q.descriptor, ranked, qe->config);
      ranked = without(std::move(ranked), q.id);
    }
    const double ap = average_precision(ranked, it->second);
    total += ap;
    report.per_query.emplace_back(q.id, ap);
    report.rankings.emplace_back(q.id, std::move(ranked));
  }
  report.map = total / static_cast<double>(queries.size());
  return report;
}

double mean_average_precision(const DescriptorIndex& index,
                              const std::vector<QueryDescriptor>& queries, const GroundTruth& gt,
                              const std::optional<QueryExpansion>& qe) {
  return evaluate_queries(index, queries, gt, qe).map;
}

void write_ranked_list(std::ostream& out, ImageId query, const RankedList& ranked) {
  char buf[96];
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    std::snprintf(buf, sizeof(buf), "%llu %llu %zu %.6f\n", static_cast<unsigned long long>(query),
                  static_cast<unsigned long long>(ranked[r].id), r + 1, ranked[r].score);
    out << buf;
  }
}

DescriptorVector combine_scales(const std::vector<DescriptorVector>& per_scale,
                                const PoolingConfig& cfg) {
  if (per_scale.empty()) throw InvalidArgument("combine_scales: no descriptors");
  const std::size_t dim = per_scale.front().dim();
  DescriptorVector out(std::vector<double>(dim, 0.0));
  const auto n = static_cast<double>(per_scale.size());
  for (std::size_t k = 0; k < dim; ++k) {
    const double p = cfg.mode == PoolingMode::kGem ? cfg.exponent(k) : 1.0;
    double m = 0.0;
    for (const auto& d : per_scale) {
      if (d.dim() != dim) throw DimensionMismatch("combine_scales: descriptor dims differ");
      m = std::max(m, d.values[k]);
    }
    if (m <= 0.0) continue;
    if (p == 1.0) {
      double s = 0.0;
      for (const auto& d : per_scale) s += d.values[k];
      out.values[k] = s / n;
      continue;
    }
    double s = 0.0;
    for (const auto& d : per_scale) s += std::pow(std::max(d.values[k], 0.0) / m, p);
    out.values[k] = m * std::pow(s / n, 1.0 / p);
  }
  return l2_normalize(out);
}

DescriptorVector multiscale_descriptor(const TinyFCN& net, const PoolingConfig& cfg,
                                       const Image& img, const std::vector<double>& scales,
                                       std::size_t max_side) {
  if (scales.empty()) throw InvalidArgument("multiscale_descriptor: no scales given");
  const Image base = resize_max_side(img, max_side);
  std::vector<DescriptorVector> per_scale;
  per_scale.reserve(scales.size());
  for (double s : scales) {
    if (!(s > 0.0 && s <= 1.0)) {
      throw InvalidArgument("multiscale_descriptor: scale " + std::to_string(s) +
                            " outside (0, 1]");
    }
    const Image scaled = resize_by_factor(base, s);
    if (std::min(scaled.width, scaled.height) < net.min_input_side()) {
      throw InvalidArgument("multiscale_descriptor: image is " + std::to_string(scaled.width) +
                            "x" + std::to_string(scaled.height) + " at scale " +
                            std::to_string(s) + ", below the receptive field (" +
                            std::to_string(net.min_input_side()) + ")");
    }
    per_scale.push_back(extract_descriptor(net, cfg, scaled));
  }
  if (per_scale.size() == 1) return per_scale.front();
  return combine_scales(per_scale, cfg);
}

}  // namespace gem
