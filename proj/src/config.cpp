#include "gem/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

namespace gem {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InvalidArgument("expected a non-negative integer, got \"" + v + "\"");
  }
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

double to_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw InvalidArgument("expected a number, got \"" + v + "\"");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument("expected true or false, got \"" + v + "\"");
}

template <typename T, typename Fn>
std::vector<T> to_list(const std::string& v, Fn parse) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse(trim(item)));
  if (out.empty()) throw InvalidArgument("expected a comma-separated list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      // synthetic data
      {"clusters", [](RunConfig& c, const std::string& v) { c.synth.clusters = to_size(v); }},
      {"images_min", [](RunConfig& c, const std::string& v) { c.synth.images_min = to_size(v); }},
      {"images_max", [](RunConfig& c, const std::string& v) { c.synth.images_max = to_size(v); }},
      {"points_per_cluster", [](RunConfig& c, const std::string& v) { c.synth.points_per_cluster = to_size(v); }},
      {"camera_jitter", [](RunConfig& c, const std::string& v) { c.synth.camera_jitter = to_double(v); }},
      {"image_size", [](RunConfig& c, const std::string& v) { c.synth.image_size = to_size(v); }},
      {"channels", [](RunConfig& c, const std::string& v) { c.synth.channels = to_size(v); }},
      {"scene_size", [](RunConfig& c, const std::string& v) { c.synth.scene_size = to_double(v); }},
      {"view_side", [](RunConfig& c, const std::string& v) { c.synth.view_side = to_double(v); }},
      {"zoom_min", [](RunConfig& c, const std::string& v) { c.synth.zoom_min = to_double(v); }},
      {"zoom_max", [](RunConfig& c, const std::string& v) { c.synth.zoom_max = to_double(v); }},
      {"nuisance", [](RunConfig& c, const std::string& v) { c.synth.nuisance = to_double(v); }},
      // network and pooling
      {"net_maps", [](RunConfig& c, const std::string& v) { c.net_maps = to_list<std::size_t>(v, to_size); }},
      {"net_kernel", [](RunConfig& c, const std::string& v) { c.net_kernel = to_size(v); }},
      {"pooling", [](RunConfig& c, const std::string& v) { c.pooling_mode = parse_pooling_mode(v); }},
      {"gem_p", [](RunConfig& c, const std::string& v) { c.gem_p = to_double(v); }},
      {"p_sharing",
       [](RunConfig& c, const std::string& v) {
         if (v == "shared") c.p_sharing = ExponentSharing::kShared;
         else if (v == "per_map") c.p_sharing = ExponentSharing::kPerMap;
         else throw InvalidArgument("expected shared or per_map, got \"" + v + "\"");
       }},
      {"train_p", [](RunConfig& c, const std::string& v) { c.train_p = to_bool(v); }},
      // optimization
      {"optimizer", [](RunConfig& c, const std::string& v) { c.train.optimizer = parse_optimizer(v); }},
      {"initial_lr", [](RunConfig& c, const std::string& v) { c.train.initial_lr = to_double(v); }},
      {"momentum", [](RunConfig& c, const std::string& v) { c.train.momentum = to_double(v); }},
      {"weight_decay", [](RunConfig& c, const std::string& v) { c.train.weight_decay = to_double(v); }},
      {"adam_beta1", [](RunConfig& c, const std::string& v) { c.train.adam_beta1 = to_double(v); }},
      {"adam_beta2", [](RunConfig& c, const std::string& v) { c.train.adam_beta2 = to_double(v); }},
      {"adam_epsilon", [](RunConfig& c, const std::string& v) { c.train.adam_epsilon = to_double(v); }},
      {"batch_tuples", [](RunConfig& c, const std::string& v) { c.train.batch_tuples = to_size(v); }},
      {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_size(v); }},
      {"remine_per_epoch", [](RunConfig& c, const std::string& v) { c.train.remine_per_epoch = to_size(v); }},
      {"loss", [](RunConfig& c, const std::string& v) { c.train.loss = parse_loss(v); }},
      {"margin", [](RunConfig& c, const std::string& v) { c.train.loss_config.margin = to_double(v); }},
      {"triplet_margin", [](RunConfig& c, const std::string& v) { c.train.loss_config.triplet_margin = to_double(v); }},
      {"query_budget", [](RunConfig& c, const std::string& v) { c.train.query_budget = to_size(v); }},
      {"validation_fraction", [](RunConfig& c, const std::string& v) { c.train.validation_fraction = to_double(v); }},
      // mining
      {"positive_strategy",
       [](RunConfig& c, const std::string& v) { c.train.mining.positive_strategy = parse_positive_strategy(v); }},
      {"negative_strategy",
       [](RunConfig& c, const std::string& v) { c.train.mining.negative_strategy = parse_negative_strategy(v); }},
      {"pool_size", [](RunConfig& c, const std::string& v) { c.train.mining.pool_size = to_size(v); }},
      {"inlier_overlap", [](RunConfig& c, const std::string& v) { c.train.mining.inlier_overlap = to_double(v); }},
      {"scale_threshold", [](RunConfig& c, const std::string& v) { c.train.mining.scale_threshold = to_double(v); }},
      {"negatives_per_tuple",
       [](RunConfig& c, const std::string& v) { c.train.mining.negatives_per_tuple = to_size(v); }},
      {"extra_negatives",
       [](RunConfig& c, const std::string& v) { c.train.mining.extra_negative_candidates_per_model = to_size(v); }},
      // descriptor extraction
      {"scales", [](RunConfig& c, const std::string& v) { c.scales = to_list<double>(v, to_double); }},
      {"max_side", [](RunConfig& c, const std::string& v) { c.max_side = to_size(v); }},
      // gradient checking
      {"gradcheck_instances", [](RunConfig& c, const std::string& v) { c.gradcheck.instances = to_size(v); }},
      {"gradcheck_step", [](RunConfig& c, const std::string& v) { c.gradcheck.step = to_double(v); }},
  };
  return table;
}

}  // namespace

std::map<std::string, ConfigLine> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, ConfigLine> out;
  std::stringstream in(text);
  std::string raw;
  std::size_t n = 0;
  while (std::getline(in, raw)) {
    ++n;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(n);
    if (eq == std::string::npos) throw FormatError(where + ": expected \"key = value\"");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw FormatError(where + ": missing key");
    if (value.empty()) throw FormatError(where + ": missing value for \"" + key + "\"");
    auto [it, fresh] = out.emplace(key, ConfigLine{value, n});
    if (!fresh) {
      throw FormatError(where + ": \"" + key + "\" already set on line " + std::to_string(it->second.line));
    }
  }
  return out;
}

PoolingConfig RunConfig::pooling() const {
  switch (pooling_mode) {
    case PoolingMode::kMax: return PoolingConfig::max();
    case PoolingMode::kAverage: return PoolingConfig::average();
    case PoolingMode::kGem: break;
  }
  if (p_sharing == ExponentSharing::kShared) return PoolingConfig::gem(gem_p, train_p);
  return PoolingConfig::gem_per_map(std::vector<double>(net_maps.empty() ? 0 : net_maps.back(), gem_p),
                                    train_p);
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  synth.texture_seed = s;
  train.seed = s;
  train.mining.seed = s;
  gradcheck.seed = s;
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [key, entry] : parse_key_values(text, origin)) {
    const std::string where = origin + ":" + std::to_string(entry.line);
    auto it = table.find(key);
    if (it == table.end()) throw FormatError(where + ": unknown key \"" + key + "\"");
    try {
      it->second(cfg, entry.value);
    } catch (const InvalidArgument& e) {
      throw FormatError(where + ": " + key + ": " + e.what());
    }
  }
  cfg.apply_seed(cfg.seed);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open config file");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, path.string());
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace gem
