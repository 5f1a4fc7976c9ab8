#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathe/model.hpp"
#include "pathe/paths.hpp"
#include "pathe/training.hpp"

namespace pathe {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything a run needs. Defaults describe link prediction on FB15k-237.
struct RunConfig {
  std::filesystem::path train_path, valid_path, test_path;
  std::filesystem::path corpus_path;
  std::filesystem::path output_dir = "run";
  std::size_t workers = 1;
  std::size_t num_paths = 16;  // mined per entity
  ModelConfig model;
  TrainConfig train;

  MiningParams mining() const { return {num_paths, model.max_len, train.seed}; }
  ModelConfig effective_model() const { return apply_ablations(model, train); }
};

// Every recognised key, in echo order.
const std::vector<std::string>& config_keys();

// Sets one key; throws ConfigError for unknown keys or malformed values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

// Applies `key = value` lines ('#' starts a comment) on top of `config`.
// `source` names the input in error messages.
void parse_config(std::istream& in, RunConfig& config, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

// One `key = value` line per key; parse_config of the output round-trips.
void write_config(std::ostream& os, const RunConfig& config);

}  // namespace pathe
