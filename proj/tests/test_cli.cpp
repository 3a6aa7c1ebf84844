#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gem/commands.hpp"
#include "gem/image_io.hpp"
#include "gem/synth.hpp"
#include "test_support.hpp"

using namespace gem;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.synth.clusters = 6;
  cfg.synth.images_min = cfg.synth.images_max = 4;
  cfg.synth.image_size = 14;
  cfg.synth.points_per_cluster = 80;
  cfg.net_maps = {4, 6};
  cfg.scales = {1.0};
  cfg.train.initial_lr = 1e-3;
  cfg.train.epochs = 1;
  cfg.train.batch_tuples = 2;
  cfg.train.query_budget = 4;
  cfg.train.validation_fraction = 0.2;
  cfg.train.mining.negatives_per_tuple = 2;
  cfg.train.mining.positive_strategy = PositiveStrategy::kM2;
  cfg.train.mining.extra_negative_candidates_per_model = 3;
  cfg.apply_seed(11);
  return cfg;
}

// Images connected through shared points, counted with union-find.
std::size_t co_observation_components(const VisibilityGraph& g) {
  std::map<ImageId, ImageId> parent;
  for (const auto& im : g.images()) parent[im.id] = im.id;
  std::function<ImageId(ImageId)> find = [&](ImageId x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  std::map<PointId, ImageId> first;
  for (const Edge& e : g.edges()) {
    auto [it, fresh] = first.emplace(e.point, e.image);
    if (!fresh) parent[find(e.image)] = find(it->second);
  }
  std::set<ImageId> roots;
  for (const auto& im : g.images()) roots.insert(find(im.id));
  return roots.size();
}

int run_cli(const std::string& args, const std::filesystem::path& err) {
  const std::string cmd = std::string(GEM_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, KeyValues) {
  const auto kv = parse_key_values("# header\nepochs = 3\n\n  loss=triplet  # trailing\n", "x.cfg");
  EXPECT_EQ(kv.at("epochs").value, "3");
  EXPECT_EQ(kv.at("epochs").line, 2u);
  EXPECT_EQ(kv.at("loss").value, "triplet");

  const RunConfig cfg = parse_run_config(
      "seed = 5\nnet_maps = 4, 8\nscales = 1, 0.5\noptimizer = sgd\nnegative_strategy = N1\n", "r.cfg");
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(cfg.train.seed, 5u);
  EXPECT_EQ(cfg.synth.texture_seed, 5u);
  EXPECT_EQ(cfg.net_maps, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(cfg.scales, (std::vector<double>{1.0, 0.5}));
  EXPECT_EQ(cfg.train.optimizer, OptimizerKind::kSgd);
  EXPECT_EQ(cfg.train.mining.negative_strategy, NegativeStrategy::kN1);
}

TEST(Config, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(text, "exp.cfg");
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("epochs = 2\nepoch = 3\n").find("exp.cfg:2"), std::string::npos);
  EXPECT_NE(message("epochs = 2\nepoch = 3\n").find("epoch"), std::string::npos);
  EXPECT_NE(message("epochs 2\n").find("exp.cfg:1"), std::string::npos);
  EXPECT_NE(message("epochs = 2\nepochs = 3\n").find("exp.cfg:2"), std::string::npos);
  EXPECT_NE(message("\n\nepochs = many\n").find("exp.cfg:3"), std::string::npos);
  EXPECT_NE(message("loss =\n").find("exp.cfg:1"), std::string::npos);
  const auto keys = run_config_keys();
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_TRUE(std::binary_search(keys.begin(), keys.end(), "alpha") == false);
}

TEST(Pnm, RoundTripAndErrors) {
  tu::TempDir dir("pnm");
  Rng rng(90);
  for (std::size_t c : {1u, 3u}) {
    const Image img = quantize8(tu::random_image(rng, 7, 5, c));
    const auto path = dir / (c == 1 ? "a.pgm" : "a.ppm");
    write_pnm(path, img);
    const Image back = read_pnm(path);
    EXPECT_EQ(back.width, 7u);
    EXPECT_EQ(back.height, 5u);
    EXPECT_EQ(back.channels, c);
    EXPECT_EQ(back.pixels, img.pixels);
    write_pnm(dir / "b.pnm", back);
    EXPECT_EQ(slurp(path), slurp(dir / "b.pnm"));
  }
  spit(dir / "comment.pgm", std::string("P5\n# made by hand\n2 1\n255\n") + '\x00' + '\xff');
  const Image c = read_pnm(dir / "comment.pgm");
  EXPECT_EQ(c.pixels, (std::vector<double>{0.0, 1.0}));

  spit(dir / "short.pgm", "P5\n2 2\n255\nab");
  try {
    read_pnm(dir / "short.pgm");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("short.pgm"), std::string::npos);
  }
  spit(dir / "ascii.pgm", "P2\n1 1\n255\n7\n");
  EXPECT_THROW(read_pnm(dir / "ascii.pgm"), FormatError);
  EXPECT_THROW(read_pnm(dir / "missing.pgm"), FormatError);
}

TEST(Manifest, RoundTripCropAndValidation) {
  tu::TempDir dir("manifest");
  Image img(6, 4, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i) / 255.0;
  std::filesystem::create_directories(dir / "imgs");
  write_pnm(dir / "imgs" / "x.pgm", img);

  DatasetManifest m;
  m.root = "imgs";
  m.entries = {{1, "x.pgm", std::nullopt}, {2, "x.pgm", std::array<std::size_t, 4>{1, 1, 3, 2}}};
  m.queries = {2};
  m.ground_truth = {{2, {1}}};
  m.save(dir / "m.json");
  const DatasetManifest back = DatasetManifest::load(dir / "m.json");
  EXPECT_EQ(back.to_json(), DatasetManifest::from_json(back.to_json(), "again").to_json());
  const Image cropped = back.load_image(back.entries[1]);
  EXPECT_EQ(cropped.width, 3u);
  EXPECT_EQ(cropped.height, 2u);
  EXPECT_DOUBLE_EQ(cropped.at(0, 0, 0), img.at(1, 1, 0));

  DatasetManifest bad = m;
  bad.entries.push_back({1, "y.pgm", std::nullopt});
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = m;
  bad.queries = {3};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = m;
  bad.ground_truth.clear();
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = m;
  bad.root = dir.path() / "imgs";
  bad.entries[1].crop = std::array<std::size_t, 4>{4, 0, 3, 2};
  EXPECT_THROW(bad.load_image(bad.entries[1]), Error);
}

TEST(Synth, SmallDatasetStructure) {
  SynthConfig s;
  s.clusters = 2;
  s.images_min = s.images_max = 3;
  s.image_size = 16;
  const SynthDataset ds = generate_synthetic(s);
  EXPECT_EQ(ds.graph.images().size(), 6u);
  EXPECT_EQ(ds.images.size(), 6u);
  EXPECT_EQ(co_observation_components(ds.graph), 2u);
  EXPECT_EQ(ds.manifest.queries.size(), 6u);
  for (const auto& [q, rel] : ds.manifest.ground_truth) {
    EXPECT_EQ(rel.size(), 2u);
    EXPECT_EQ(rel.count(q), 0u);
    for (ImageId r : rel) EXPECT_EQ(ds.graph.cluster_of(r), ds.graph.cluster_of(q));
  }
  for (const auto& [id, img] : ds.images) {
    EXPECT_EQ(img.width, 16u);
    for (double v : img.pixels) EXPECT_EQ(v * 255.0, std::round(v * 255.0));
  }
}

TEST(Synth, ByteIdenticalUnderSeed) {
  tu::TempDir dir("synth");
  RunConfig cfg = tiny_run();
  std::ostringstream log;
  cmd_synth(cfg, dir / "a", log);
  cmd_synth(cfg, dir / "b", log);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), dir / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 24u + 2u);
  cfg.apply_seed(12);
  cmd_synth(cfg, dir / "c", log);
  EXPECT_NE(slurp(dir / "a" / "images" / "00000.pgm"), slurp(dir / "c" / "images" / "00000.pgm"));
}

TEST(Commands, TrainReplayAndZeroEpochs) {
  tu::TempDir dir("train");
  RunConfig cfg = tiny_run();
  std::ostringstream log;
  cmd_synth(cfg, dir / "data", log);
  const auto graph = dir / "data" / "graph.json";

  cmd_train(cfg, graph, dir / "a.gemm", dir / "a.json", log);
  cmd_train(cfg, graph, dir / "b.gemm", dir / "b.json", log);
  EXPECT_EQ(slurp(dir / "a.gemm"), slurp(dir / "b.gemm"));
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));

  cfg.train.epochs = 0;
  cmd_train(cfg, graph, dir / "zero.gemm", dir / "zero.json", log);
  save_checkpoint(dir / "init.gemm", make_model(cfg, 1));
  EXPECT_EQ(slurp(dir / "zero.gemm"), slurp(dir / "init.gemm"));

  try {
    cmd_train(cfg, dir / "nope.json", dir / "x.gemm", dir / "x.json", log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("nope.json"), std::string::npos);
  }
}

TEST(Commands, WhitenIndexEval) {
  tu::TempDir dir("pipeline");
  RunConfig cfg = tiny_run();
  std::ostringstream log;
  cmd_synth(cfg, dir / "data", log);
  const auto graph = dir / "data" / "graph.json";
  const auto manifest = dir / "data" / "manifest.json";
  cfg.train.epochs = 0;
  cmd_train(cfg, graph, dir / "m.gemm", dir / "m.json", log);

  const WhiteningTransform full = cmd_whiten(cfg, dir / "m.gemm", graph, 6, dir / "w6.gemw", log);
  const WhiteningTransform loaded = load_whitening(dir / "w6.gemw");
  EXPECT_EQ(loaded.input_dim(), 6u);
  EXPECT_EQ(loaded.output_dim(), 6u);
  EXPECT_EQ(full.output_dim(), 6u);
  cmd_whiten(cfg, dir / "m.gemm", graph, 3, dir / "w3.gemw", log);

  const DescriptorIndex plain = cmd_index(cfg, dir / "m.gemm", std::nullopt, manifest, dir / "p.gemi", log);
  EXPECT_EQ(plain.size(), 24u);
  EXPECT_EQ(plain.dim(), 6u);
  const DescriptorIndex back = DescriptorIndex::load(dir / "p.gemi");
  for (std::size_t i = 0; i < back.size(); ++i)
    for (std::size_t k = 0; k < 6; ++k)
      EXPECT_NEAR(back.entries()[i].descriptor[k], plain.entries()[i].descriptor[k], 1e-7);
  const DescriptorIndex white = cmd_index(cfg, dir / "m.gemm", dir / "w3.gemw", manifest, dir / "w.gemi", log);
  EXPECT_EQ(white.dim(), 3u);

  std::ostringstream out;
  const MapReport none = cmd_eval(dir / "p.gemi", manifest, std::nullopt, dir / "r.txt", out);
  EXPECT_EQ(none.per_query.size(), 24u);
  EXPECT_NE(out.str().find("mAP"), std::string::npos);
  std::ifstream ranked(dir / "r.txt");
  std::size_t lines = 0;
  for (std::string l; std::getline(ranked, l);) ++lines;
  EXPECT_EQ(lines, 24u * 23u);

  std::ostringstream a, b;
  const MapReport aqe = cmd_eval(dir / "p.gemi", manifest, QueryExpansion{QEMethod::kAverage, {5, 0.0}},
                                 dir / "ra.txt", a);
  const MapReport alpha = cmd_eval(dir / "p.gemi", manifest,
                                   QueryExpansion{QEMethod::kAlphaWeighted, {5, 0.0}}, dir / "rb.txt", b);
  EXPECT_EQ(aqe.per_query, alpha.per_query);
  EXPECT_EQ(aqe.map, alpha.map);
  EXPECT_EQ(slurp(dir / "ra.txt"), slurp(dir / "rb.txt"));
}

TEST(Commands, WhitenNeedsTwoClusters) {
  tu::TempDir dir("onecluster");
  RunConfig cfg = tiny_run();
  cfg.synth.clusters = 1;
  std::ostringstream log;
  cmd_synth(cfg, dir / "data", log);
  save_checkpoint(dir / "m.gemm", make_model(cfg, 1));
  EXPECT_THROW(cmd_whiten(cfg, dir / "m.gemm", dir / "data" / "graph.json", 2, dir / "w.gemw", log),
               InvalidArgument);
}

TEST(Commands, IndexEdgeCases) {
  tu::TempDir dir("indexcases");
  RunConfig cfg = tiny_run();
  std::ostringstream log;
  save_checkpoint(dir / "m.gemm", make_model(cfg, 1));
  Rng rng(91);
  write_pnm(dir / "a.pgm", quantize8(tu::random_image(rng, 20, 20)));

  DatasetManifest empty;
  empty.root = ".";
  empty.save(dir / "empty.json");
  EXPECT_EQ(cmd_index(cfg, dir / "m.gemm", std::nullopt, dir / "empty.json", dir / "e.gemi", log).size(), 0u);
  EXPECT_EQ(DescriptorIndex::load(dir / "e.gemi").size(), 0u);

  DatasetManifest twice;
  twice.root = ".";
  twice.entries = {{4, "a.pgm", std::nullopt}, {9, "a.pgm", std::nullopt}};
  twice.save(dir / "twice.json");
  const DescriptorIndex idx = cmd_index(cfg, dir / "m.gemm", std::nullopt, dir / "twice.json", dir / "t.gemi", log);
  ASSERT_EQ(idx.size(), 2u);
  EXPECT_EQ(idx.descriptor(4).values, idx.descriptor(9).values);

  twice.entries.push_back({5, "gone.pgm", std::nullopt});
  twice.save(dir / "broken.json");
  try {
    cmd_index(cfg, dir / "m.gemm", std::nullopt, dir / "broken.json", dir / "b.gemi", log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("entry 5"), std::string::npos);
  }
}

TEST(Commands, SeparableOracleScoresPerfectly) {
  tu::TempDir dir("oracle");
  // Descriptors equal to the one-hot cluster indicator.
  DescriptorIndex index(3);
  DatasetManifest m;
  m.root = ".";
  for (ImageId i = 0; i < 12; ++i) {
    std::vector<double> v(3, 0.0);
    v[i % 3] = 1.0;
    index.add(i, DescriptorVector(v, true));
    m.entries.push_back({i, "unused.pgm", std::nullopt});
    m.queries.push_back(i);
  }
  for (ImageId i = 0; i < 12; ++i)
    for (ImageId j = 0; j < 12; ++j)
      if (i % 3 == j % 3 && i != j) m.ground_truth[i].insert(j);
  index.save(dir / "i.gemi");
  m.save(dir / "m.json");
  std::ostringstream out;
  EXPECT_DOUBLE_EQ(cmd_eval(dir / "i.gemi", dir / "m.json", std::nullopt, dir / "r.txt", out).map, 1.0);
}

TEST(Commands, GradcheckReport) {
  RunConfig cfg;
  cfg.gradcheck.instances = 5;
  std::ostringstream a, b, c;
  EXPECT_TRUE(cmd_gradcheck(cfg, std::nullopt, a));
  EXPECT_TRUE(cmd_gradcheck(cfg, std::nullopt, b));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_FALSE(cmd_gradcheck(cfg, std::string("pooling_p"), c));
}

TEST(Cli, ExitCodesAndMessages) {
  tu::TempDir dir("cli");
  EXPECT_EQ(run_cli("train " + (dir / "missing.json").string() + " " + (dir / "m.gemm").string(), dir / "err"), 1);
  EXPECT_NE(slurp(dir / "err").find("missing.json"), std::string::npos);

  spit(dir / "bad.cfg", "epochs = 1\nepoch = 2\n");
  EXPECT_EQ(run_cli("synth " + (dir / "out").string() + " --config " + (dir / "bad.cfg").string(), dir / "err"), 1);
  EXPECT_NE(slurp(dir / "err").find("bad.cfg:2"), std::string::npos);

  spit(dir / "ok.cfg", "clusters = 2\nimages_min = 3\nimages_max = 3\nimage_size = 12\n");
  EXPECT_EQ(run_cli("synth " + (dir / "out").string() + " --config " + (dir / "ok.cfg").string() + " --seed 4",
                    dir / "err"),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "graph.json"));
  EXPECT_EQ(run_cli("frobnicate", dir / "err"), 1);
  EXPECT_EQ(run_cli("--help", dir / "err"), 0);

  spit(dir / "quick.cfg", "gradcheck_instances = 3\n");
  EXPECT_EQ(run_cli("gradcheck --config " + (dir / "quick.cfg").string(), dir / "err"), 0);
  EXPECT_EQ(run_cli("gradcheck --corrupt triplet --config " + (dir / "quick.cfg").string(), dir / "err"), 1);
}
