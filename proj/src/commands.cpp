#include "gem/commands.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "gem/parallel.hpp"
#include "gem/random.hpp"
#include "gem/synth.hpp"

namespace gem {

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void require_file(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::is_regular_file(p)) throw FormatError(p.string() + ": " + what + " not found");
}

}  // namespace

Model make_model(const RunConfig& cfg, std::size_t channels) {
  if (cfg.net_maps.empty()) throw InvalidArgument("net_maps must list at least one layer");
  std::vector<LayerShape> shapes;
  std::size_t in = channels;
  for (std::size_t maps : cfg.net_maps) {
    if (maps == 0) throw InvalidArgument("net_maps entries must be positive");
    shapes.push_back({cfg.net_kernel, in, maps, 1});
    in = maps;
  }
  Model m;
  m.net = TinyFCN::create(shapes, derive_seed(cfg.seed, 0x696e6974ULL));
  m.pooling = cfg.pooling();
  m.pooling.validate(m.net.output_maps());
  return m;
}

LabeledPairSet mine_whitening_pairs(const VisibilityGraph& g, const DescriptorTable& descriptors,
                                    const MiningConfig& cfg) {
  LabeledPairSet set;
  std::set<std::pair<ImageId, ImageId>> matching;
  for (const GraphImage& q : g.images()) {
    const auto pool = positive_pool(g, q.id, cfg.pool_size);
    for (ImageId p : m3_eligible(g, q.id, pool, cfg)) {
      matching.insert({std::min(q.id, p), std::max(q.id, p)});
    }
  }
  for (const auto& [a, b] : matching) set.pairs.push_back({a, b, PairLabel::kMatching});
  std::vector<ImageId> ids;
  for (const GraphImage& gi : g.images()) ids.push_back(gi.id);
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j)
      if (g.cluster_of(ids[i]) != g.cluster_of(ids[j])) {
        set.pairs.push_back({ids[i], ids[j], PairLabel::kNonMatching});
      }
  for (ImageId id : ids) set.descriptors.emplace(id, lookup(descriptors, id));
  return set;
}

DescriptorTable graph_descriptors(const Model& m, const ImageStore& images, const VisibilityGraph& g,
                                  const RunConfig& cfg) {
  const auto& list = g.images();
  std::vector<DescriptorVector> out(list.size());
  parallel_for(list.size(), [&](std::size_t i) {
    out[i] = multiscale_descriptor(m.net, m.pooling, lookup(images, list[i].id), cfg.scales, cfg.max_side);
  });
  DescriptorTable table;
  for (std::size_t i = 0; i < list.size(); ++i) table.emplace(list[i].id, std::move(out[i]));
  return table;
}

void cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log) {
  const SynthDataset ds = generate_synthetic(cfg.synth);
  write_synthetic(ds, out_dir);
  log << "synth: " << ds.graph.images().size() << " images in " << ds.graph.clusters().size()
      << " clusters, " << ds.graph.points().size() << " points, " << ds.graph.edges().size()
      << " edges -> " << out_dir.string() << "\n";
}

TrainReport cmd_train(const RunConfig& cfg, const std::filesystem::path& graph_path,
                      const std::filesystem::path& checkpoint_path,
                      const std::filesystem::path& report_path, std::ostream& log) {
  require_file(graph_path, "graph file");
  const VisibilityGraph g = VisibilityGraph::load(graph_path);
  if (g.images().empty()) throw InvalidArgument(graph_path.string() + ": graph has no images");
  ImageStore images = load_graph_images(g, graph_path);
  for (auto& [id, img] : images) img = resize_max_side(img, cfg.max_side);
  Model m = make_model(cfg, lookup(images, g.images().front().id).channels);
  const TrainReport report = fit(m, g, images, cfg.train);
  save_checkpoint(checkpoint_path, m);
  std::ofstream out(report_path);
  if (!out) throw FormatError(report_path.string() + ": cannot open for writing");
  out << report.to_json() << "\n";
  for (const EpochRecord& e : report.epochs) {
    log << "epoch " << e.epoch << "  loss "
        << (e.train_loss ? fixed(*e.train_loss) : std::string("-")) << "  val "
        << fixed(e.validation_score, 4) << "\n";
  }
  log << "train: selected epoch " << report.selected_epoch << " -> " << checkpoint_path.string()
      << "\n";
  return report;
}

WhiteningTransform cmd_whiten(const RunConfig& cfg, const std::filesystem::path& checkpoint_path,
                              const std::filesystem::path& graph_path, std::size_t out_dim,
                              const std::filesystem::path& out_path, std::ostream& log) {
  require_file(checkpoint_path, "checkpoint");
  require_file(graph_path, "graph file");
  const Model m = load_checkpoint(checkpoint_path);
  const VisibilityGraph g = VisibilityGraph::load(graph_path);
  if (g.clusters().size() < 2) {
    throw InvalidArgument(graph_path.string() + ": whitening needs at least two clusters for non-matching pairs");
  }
  const ImageStore images = load_graph_images(g, graph_path);
  const LabeledPairSet pairs = mine_whitening_pairs(g, graph_descriptors(m, images, g, cfg), cfg.train.mining);
  const WhiteningTransform t = learn_lw(pairs, out_dim);
  save_whitening(out_path, t);
  log << "whiten: " << pairs.pairs.size() << " pairs, " << t.input_dim() << " -> " << t.output_dim()
      << " dims -> " << out_path.string() << "\n";
  return t;
}

DescriptorIndex cmd_index(const RunConfig& cfg, const std::filesystem::path& checkpoint_path,
                          const std::optional<std::filesystem::path>& whitening_path,
                          const std::filesystem::path& manifest_path,
                          const std::filesystem::path& out_path, std::ostream& log) {
  require_file(checkpoint_path, "checkpoint");
  const Model m = load_checkpoint(checkpoint_path);
  std::optional<WhiteningTransform> whitening;
  if (whitening_path) {
    whitening = load_whitening(*whitening_path);
    if (whitening->input_dim() != m.net.output_maps()) {
      throw DimensionMismatch(whitening_path->string() + ": whitening expects " +
                              std::to_string(whitening->input_dim()) + "-d descriptors, model gives " +
                              std::to_string(m.net.output_maps()));
    }
  }
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  const auto& entries = manifest.entries;
  std::vector<DescriptorVector> out(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    try {
      DescriptorVector d =
          multiscale_descriptor(m.net, m.pooling, manifest.load_image(entries[i]), cfg.scales, cfg.max_side);
      out[i] = whitening ? apply_whitening(*whitening, d) : d;
    } catch (const Error& e) {
      throw FormatError("manifest entry " + std::to_string(entries[i].id) + ": " + e.what());
    }
  });
  DescriptorIndex index(whitening ? whitening->output_dim() : m.net.output_maps());
  for (std::size_t i = 0; i < entries.size(); ++i) index.add(entries[i].id, std::move(out[i]));
  index.save(out_path);
  log << "index: " << index.size() << " descriptors of dim " << index.dim() << " -> "
      << out_path.string() << "\n";
  return index;
}

MapReport cmd_eval(const std::filesystem::path& index_path, const std::filesystem::path& manifest_path,
                   const std::optional<QueryExpansion>& qe, const std::filesystem::path& ranked_path,
                   std::ostream& out) {
  const DescriptorIndex index = DescriptorIndex::load(index_path);
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  if (manifest.queries.empty()) throw InvalidArgument(manifest_path.string() + ": no queries");
  std::vector<QueryDescriptor> queries;
  for (ImageId q : manifest.queries) {
    try {
      queries.push_back({q, index.descriptor(q)});
    } catch (const InvalidArgument&) {
      throw InvalidArgument(index_path.string() + ": query " + std::to_string(q) + " is not indexed");
    }
  }
  const MapReport report = evaluate_queries(index, queries, manifest.ground_truth, qe);
  std::ofstream ranked(ranked_path);
  if (!ranked) throw FormatError(ranked_path.string() + ": cannot open for writing");
  for (const auto& [q, list] : report.rankings) write_ranked_list(ranked, q, list);
  for (const auto& [q, ap] : report.per_query) out << "query " << q << "  ap " << fixed(ap) << "\n";
  std::string mode = "plain";
  if (qe) {
    mode = qe->method == QEMethod::kAverage
               ? "aqe nqe=" + std::to_string(qe->config.top)
               : "alpha-qe alpha=" + fixed(qe->config.alpha, 3) + " nqe=" + std::to_string(qe->config.top);
  }
  out << "mAP " << fixed(report.map) << "  (" << queries.size() << " queries, " << mode << ")\n";
  return report;
}

bool cmd_gradcheck(const RunConfig& cfg, const std::optional<std::string>& corrupt_suite,
                   std::ostream& out) {
  GradcheckConfig gc = cfg.gradcheck;
  gc.corrupt_suite = corrupt_suite;
  const GradcheckReport report = run_gradcheck(gc);
  out << report.to_text();
  return report.passed();
}

}  // namespace gem
