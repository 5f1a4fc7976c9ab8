#include "pathe/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pathe {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename Int>
Int parse_uint(const std::string& key, const std::string& value) {
  Int out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || value.starts_with('-')) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, value));
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, value));
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, value));
}

template <typename E>
E parse_enum(const std::string& key, const std::string& value,
             std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [name, e] : names) {
    if (value == name) return e;
  }
  std::string options;
  for (const auto& [name, e] : names) options += (options.empty() ? "" : "|") + std::string(name);
  throw ConfigError(fmt::format("{}: expected {}, got '{}'", key, options, value));
}

template <typename E>
std::string enum_name(E value, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [name, e] : names) {
    if (value == e) return name;
  }
  return "?";
}

const std::initializer_list<std::pair<const char*, Task>> kTasks = {
    {"lp", Task::LinkPrediction}, {"rp", Task::RelationPrediction}};
const std::initializer_list<std::pair<const char*, LossKind>> kLosses = {
    {"ce", LossKind::CrossEntropy}, {"bce", LossKind::BinaryCrossEntropy}};
const std::initializer_list<std::pair<const char*, AggregatorKind>> kAggregators = {
    {"transformer", AggregatorKind::Transformer}, {"average", AggregatorKind::Average}};
const std::initializer_list<std::pair<const char*, PositionalKind>> kPositionals = {
    {"entity_focused", PositionalKind::EntityFocused}, {"standard", PositionalKind::Standard}};
const std::initializer_list<std::pair<const char*, ContextTransform>> kTransforms = {
    {"raw", ContextTransform::Raw}, {"log1p", ContextTransform::Log1p}};

std::string fmt_double(double v) { return fmt::format("{}", v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PATHE_PATH_KEY(NAME, FIELD)                                                   \
  Key{NAME, [](RunConfig& c, const std::string& v) { c.FIELD = v; },                  \
      [](const RunConfig& c) { return c.FIELD.string(); }}
#define PATHE_SIZE_KEY(NAME, FIELD)                                                   \
  Key{NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_uint<std::size_t>(NAME, v); }, \
      [](const RunConfig& c) { return std::to_string(c.FIELD); }}
#define PATHE_DOUBLE_KEY(NAME, FIELD)                                                 \
  Key{NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }, \
      [](const RunConfig& c) { return fmt_double(c.FIELD); }}
#define PATHE_BOOL_KEY(NAME, FIELD)                                                   \
  Key{NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); }, \
      [](const RunConfig& c) { return fmt_bool(c.FIELD); }}
#define PATHE_ENUM_KEY(NAME, FIELD, TABLE)                                            \
  Key{NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_enum(NAME, v, TABLE); }, \
      [](const RunConfig& c) { return enum_name(c.FIELD, TABLE); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      PATHE_PATH_KEY("train", train_path),
      PATHE_PATH_KEY("valid", valid_path),
      PATHE_PATH_KEY("test", test_path),
      PATHE_PATH_KEY("corpus", corpus_path),
      PATHE_PATH_KEY("output_dir", output_dir),
      Key{"seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_uint<std::uint64_t>("seed", v); },
          [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      PATHE_SIZE_KEY("workers", workers),
      PATHE_SIZE_KEY("num_paths", num_paths),
      PATHE_SIZE_KEY("max_len", model.max_len),
      PATHE_ENUM_KEY("task", train.task, kTasks),
      PATHE_SIZE_KEY("dim", model.dim),
      PATHE_SIZE_KEY("paths_per_entity", model.paths_per_entity),
      PATHE_SIZE_KEY("encoder_layers", model.encoder_layers),
      PATHE_SIZE_KEY("encoder_heads", model.encoder_heads),
      PATHE_SIZE_KEY("encoder_ff", model.encoder_ff),
      PATHE_DOUBLE_KEY("dropout", model.dropout),
      PATHE_ENUM_KEY("aggregator", model.aggregator, kAggregators),
      PATHE_SIZE_KEY("aggregator_layers", model.aggregator_layers),
      PATHE_ENUM_KEY("positional", model.positional, kPositionals),
      PATHE_SIZE_KEY("projector_hidden", model.projector_hidden),
      PATHE_ENUM_KEY("context_transform", model.context_transform, kTransforms),
      PATHE_ENUM_KEY("loss", train.loss, kLosses),
      PATHE_DOUBLE_KEY("label_smoothing", train.label_smoothing),
      PATHE_SIZE_KEY("negatives", train.negatives),
      PATHE_DOUBLE_KEY("learning_rate", train.learning_rate),
      PATHE_SIZE_KEY("batch_size", train.batch_size),
      PATHE_SIZE_KEY("accumulate", train.accumulate),
      PATHE_SIZE_KEY("micro_batch", train.micro_batch),
      PATHE_SIZE_KEY("max_epochs", train.max_epochs),
      PATHE_SIZE_KEY("patience", train.patience),
      PATHE_DOUBLE_KEY("min_delta", train.min_delta),
      PATHE_SIZE_KEY("valid_negatives", train.valid_negatives),
      PATHE_SIZE_KEY("valid_limit", train.valid_limit),
      PATHE_BOOL_KEY("no_aggregator", train.no_aggregator),
      PATHE_BOOL_KEY("single_path", train.single_path),
      PATHE_BOOL_KEY("standard_positionals", train.standard_positionals),
  };
  return table;
}

const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> table = {
      {"no_multiple_paths", "single_path"},
      {"lr", "learning_rate"},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : keys()) out.push_back(k.name);
    return out;
  }();
  return names;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  std::string name = key;
  if (auto it = aliases().find(name); it != aliases().end()) name = it->second;
  for (const auto& k : keys()) {
    if (k.name == name) {
      k.set(config, value);
      return;
    }
  }
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

void parse_config(std::istream& in, RunConfig& config, const std::string& source) {
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", source, line_no));
    }
    try {
      set_config_value(config, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", source, line_no, e.what()));
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  RunConfig config;
  parse_config(in, config, path.string());
  return config;
}

void write_config(std::ostream& os, const RunConfig& config) {
  for (const auto& k : keys()) os << k.name << " = " << k.get(config) << '\n';
}

}  // namespace pathe
