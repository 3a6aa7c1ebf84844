#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gem/gradcheck.hpp"
#include "gem/synth.hpp"
#include "gem/trainer.hpp"

namespace gem {

struct ConfigLine {
  std::string value;
  std::size_t line = 0;
};

// Flat "key = value" text. '#' starts a comment; blank lines are ignored.
// Malformed and repeated keys throw FormatError naming origin:line.
std::map<std::string, ConfigLine> parse_key_values(const std::string& text, const std::string& origin);

// Every setting a command may read. One file serves all subcommands.
struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  std::vector<std::size_t> net_maps{8, 16, 32};
  std::size_t net_kernel = 3;
  PoolingMode pooling_mode = PoolingMode::kGem;
  ExponentSharing p_sharing = ExponentSharing::kShared;
  double gem_p = kDefaultGemExponent;
  bool train_p = true;
  TrainConfig train;
  std::vector<double> scales = kDefaultScales;
  std::size_t max_side = kDefaultMaxSide;
  GradcheckConfig gradcheck;

  PoolingConfig pooling() const;
  // Pushes `seed` into every component that draws random numbers.
  void apply_seed(std::uint64_t s);
};

// Unknown keys and unparsable values throw FormatError naming origin:line.
RunConfig parse_run_config(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::filesystem::path& path);

// Accepted keys, sorted.
std::vector<std::string> run_config_keys();

}  // namespace gem
