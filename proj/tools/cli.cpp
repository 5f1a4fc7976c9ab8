#include "cli.hpp"

#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "pathe/checkpoint.hpp"
#include "pathe/config.hpp"
#include "pathe/evaluation.hpp"
#include "pathe/kg.hpp"
#include "pathe/model.hpp"
#include "pathe/optim.hpp"
#include "pathe/paths.hpp"
#include "pathe/training.hpp"

namespace pathe::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " path is not set");
  if (!fs::is_regular_file(path)) throw DataError(fmt::format("{} file not found: {}", what, path.string()));
}

KnowledgeGraph load_graph(const fs::path& train, const fs::path& valid, const fs::path& test,
                          const Vocabulary* relations = nullptr) {
  require_file(train, "train");
  require_file(valid, "valid");
  require_file(test, "test");
  return load_tsv(train, valid, test, relations);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// Loads the configured corpus, or mines one when no corpus path is set.
PathCorpus corpus_for(const RunConfig& config, const KnowledgeGraph& graph) {
  if (config.corpus_path.empty()) {
    std::cerr << "no corpus configured; mining paths in memory\n";
    return mine_all(graph, config.mining(), config.workers);
  }
  require_file(config.corpus_path, "corpus");
  PathCorpus corpus = load_corpus(config.corpus_path);
  if (corpus.num_entities() > graph.num_entities()) {
    throw DataError(fmt::format("corpus {} covers {} entities but the graph has {}",
                                config.corpus_path.string(), corpus.num_entities(),
                                graph.num_entities()));
  }
  return corpus;
}

void write_relations(const fs::path& path, const Vocabulary& relations) {
  auto out = open_out(path);
  for (const auto& name : relations.names()) out << name << '\n';
}

Vocabulary read_relations(const fs::path& path) {
  require_file(path, "relations");
  std::ifstream in(path);
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) vocab.add(line);
  }
  return vocab;
}

std::vector<std::size_t> non_isolated(const KnowledgeGraph& graph) {
  std::vector<std::size_t> out;
  for (EntityId e = 0; e < graph.num_entities(); ++e) {
    if (!graph.out_edges(e).empty() || !graph.in_edges(e).empty()) out.push_back(e);
  }
  return out;
}

struct StatsArgs {
  fs::path train, valid, test, csv;
};

int cmd_stats(const StatsArgs& a) {
  KnowledgeGraph graph = load_graph(a.train, a.valid, a.test);
  StructuralReport report = structural_report(graph);
  write_report_text(std::cout, report, graph);
  if (!a.csv.empty()) {
    auto out = open_out(a.csv);
    write_report_csv(out, report);
  }
  return kOk;
}

struct MineArgs {
  fs::path config, train, valid, test, out;
  std::optional<std::size_t> num_paths, max_len, workers;
  std::optional<std::uint64_t> seed;
};

int cmd_mine(const MineArgs& a) {
  RunConfig config = a.config.empty() ? RunConfig{} : load_config(a.config);
  if (!a.train.empty()) config.train_path = a.train;
  if (!a.valid.empty()) config.valid_path = a.valid;
  if (!a.test.empty()) config.test_path = a.test;
  if (!a.out.empty()) config.corpus_path = a.out;
  if (a.num_paths) config.num_paths = *a.num_paths;
  if (a.max_len) config.model.max_len = *a.max_len;
  if (a.seed) config.train.seed = *a.seed;
  if (a.workers) config.workers = *a.workers;
  if (config.num_paths == 0) throw UsageError("--num-paths must be >= 1");
  if (config.model.max_len == 0) throw UsageError("--max-len must be >= 1");
  if (config.corpus_path.empty()) throw UsageError("no output path: pass --out or set corpus in the config");

  KnowledgeGraph graph = load_graph(config.train_path, config.valid_path, config.test_path);
  PathCorpus corpus = mine_all(graph, config.mining(), config.workers);
  if (config.corpus_path.has_parent_path()) ensure_dir(config.corpus_path.parent_path());
  save_corpus(corpus, config.corpus_path);
  auto nodes = non_isolated(graph);
  std::vector<EntityId> ids(nodes.begin(), nodes.end());
  std::cout << fmt::format("paths {}\nentities {}\nnon_isolated {}\ncoverage {:.4f}\n",
                           corpus.total_paths(), graph.num_entities(), ids.size(),
                           corpus.coverage(ids));
  return kOk;
}

struct TrainArgs {
  fs::path config, out;
  std::string task;
  std::vector<std::string> overrides;
};

RunConfig resolve_train_config(const TrainArgs& a) {
  RunConfig config = load_config(a.config);
  for (const auto& kv : a.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.task.empty()) set_config_value(config, "task", a.task);
  if (!a.out.empty()) config.output_dir = a.out;
  config.train.validate();
  config.effective_model().validate();
  return config;
}

int cmd_train(const TrainArgs& a) {
  RunConfig config = resolve_train_config(a);
  KnowledgeGraph graph = load_graph(config.train_path, config.valid_path, config.test_path);
  PathCorpus corpus = corpus_for(config, graph);

  ensure_dir(config.output_dir);
  {
    auto out = open_out(config.output_dir / "config.cfg");
    write_config(out, config);
  }
  write_config(std::cerr, config);
  write_relations(config.output_dir / "relations.tsv", graph.relations());

  PathE<float> model(config.effective_model(), graph.num_relations(), config.train.task,
                     config.train.seed);
  std::cerr << fmt::format("parameters {}\n", model.parameter_count());
  TrainOutputs outputs;
  outputs.checkpoint = config.output_dir / "model.ckpt";
  outputs.log_csv = config.output_dir / "train_log.csv";
  outputs.progress = &std::cerr;
  TrainResult result = train(model, graph, corpus, config.train, outputs);
  ad::save_checkpoint(*outputs.checkpoint, model.parameters());
  std::cout << fmt::format("epochs {}\nbest_epoch {}\nbest_metric {:.6f}\nparameters {}\ncheckpoint {}\n",
                           result.history.size(), result.best_epoch, result.best_metric,
                           model.parameter_count(), outputs.checkpoint->string());
  return kOk;
}

struct EvalArgs {
  fs::path ckpt, config, inference_dir, out;
  std::string mode = "transductive";
  std::string negatives;
  std::string split = "test";
  std::string task;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;
};

fs::path first_existing(const fs::path& dir, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    if (fs::is_regular_file(dir / n)) return dir / n;
  }
  return dir / *names.begin();
}

int cmd_eval(const EvalArgs& a) {
  const bool inductive = a.mode == "inductive";
  if (inductive && a.inference_dir.empty()) throw UsageError("--mode inductive requires --inference-dir");
  require_file(a.ckpt, "checkpoint");
  const fs::path run_dir = a.ckpt.parent_path();
  RunConfig config = load_config(a.config.empty() ? run_dir / "config.cfg" : a.config);
  if (!a.task.empty()) {
    RunConfig probe;
    set_config_value(probe, "task", a.task);
    if (probe.train.task != config.train.task) {
      throw UsageError(fmt::format("--task {} does not match the checkpoint's task", a.task));
    }
  }
  std::size_t negatives = inductive ? 50 : 0;
  if (!a.negatives.empty() && a.negatives != "full") {
    try {
      std::size_t used = 0;
      negatives = std::stoul(a.negatives, &used);
      if (used != a.negatives.size() || negatives == 0) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw UsageError("--negatives expects 'full' or a positive integer");
    }
  } else if (a.negatives == "full") {
    negatives = 0;
  }

  Vocabulary relations = read_relations(run_dir / "relations.tsv");
  std::optional<KnowledgeGraph> graph;
  std::optional<PathCorpus> corpus;
  if (inductive) {
    graph.emplace(load_graph(first_existing(a.inference_dir, {"inference.txt", "train.txt"}),
                             a.inference_dir / "valid.txt", a.inference_dir / "test.txt", &relations));
    corpus.emplace(mine_all(*graph, config.mining(), a.workers));
  } else {
    graph.emplace(load_graph(config.train_path, config.valid_path, config.test_path, &relations));
    corpus.emplace(corpus_for(config, *graph));
  }

  PathE<float> model(config.effective_model(), relations.size(), config.train.task, config.train.seed);
  ad::load_checkpoint(a.ckpt, model.parameters());
  const std::uint64_t seed = a.seed.value_or(config.train.seed);
  ModelScorer scorer(model, *graph, *corpus, seed, a.workers);
  auto triples = a.split == "valid" ? graph->valid() : graph->test();

  EvalReport report;
  if (config.train.task == Task::RelationPrediction) {
    report = evaluate_rp(scorer, triples, a.workers);
    report.mode = inductive ? EvalMode::Inductive : EvalMode::Transductive;
  } else {
    LpEvalOptions options;
    options.mode = inductive ? EvalMode::Inductive : EvalMode::Transductive;
    options.negatives = negatives;
    options.seed = seed;
    options.workers = a.workers;
    report = evaluate_lp(scorer, triples, options);
  }
  write_report_text(std::cout, report);
  const fs::path out_dir = a.out.empty() ? run_dir : a.out;
  const std::string stem = fmt::format("eval_{}_{}", a.mode, a.split);
  {
    auto out = open_out(out_dir / (stem + ".txt"));
    write_report_text(out, report);
  }
  {
    auto out = open_out(out_dir / (stem + ".json"));
    out << report_json(report) << '\n';
  }
  return kOk;
}

struct PositionalArgs {
  fs::path ckpt, out;
};

int cmd_positionals(const PositionalArgs& a) {
  require_file(a.ckpt, "checkpoint");
  auto tensors = ad::read_checkpoint(a.ckpt);
  const ad::NamedTensor* table = nullptr;
  for (const auto& t : tensors) {
    if (t.name == "positional_embeddings") table = &t;
  }
  if (!table) throw DataError(a.ckpt.string() + " has no positional_embeddings tensor");
  PcaResult pca = positional_pca(table->value);
  if (pca.degenerate) std::cerr << "warning: positional table has fewer than two distinct rows\n";
  auto out = open_out(a.out);
  out << "position,component_value\n";
  for (std::size_t i = 0; i < pca.projections.size(); ++i) {
    out << fmt::format("{},{:.9g}\n", i + 1, pca.projections[i]);
  }
  std::cout << fmt::format("positions {}\neigenvalue {:.6g}\n", pca.projections.size(), pca.eigenvalue);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Entity-agnostic path-based knowledge graph embeddings"};
  app.require_subcommand(1);

  StatsArgs stats;
  auto* s = app.add_subcommand("stats", "Structural report of a dataset");
  s->add_option("--train", stats.train)->required();
  s->add_option("--valid", stats.valid)->required();
  s->add_option("--test", stats.test)->required();
  s->add_option("--csv", stats.csv, "Write the relation frequency table as CSV");

  MineArgs mine;
  auto* m = app.add_subcommand("mine", "Mine a path corpus");
  m->add_option("--config", mine.config);
  m->add_option("--train", mine.train);
  m->add_option("--valid", mine.valid);
  m->add_option("--test", mine.test);
  m->add_option("--num-paths", mine.num_paths, "Paths per entity");
  m->add_option("--max-len", mine.max_len, "Maximum relations per path");
  m->add_option("--seed", mine.seed);
  m->add_option("--out", mine.out, "Corpus output file");
  m->add_option("--workers", mine.workers);

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "Train a model and keep the best checkpoint");
  t->add_option("--config", train_args.config)->required();
  t->add_option("--task", train_args.task)->check(CLI::IsMember({"lp", "rp"}));
  t->add_option("--set", train_args.overrides, "Override a config key (key=value)");
  t->add_option("--out", train_args.out, "Run directory");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--ckpt", eval.ckpt)->required();
  e->add_option("--config", eval.config, "Defaults to config.cfg next to the checkpoint");
  e->add_option("--mode", eval.mode)->check(CLI::IsMember({"transductive", "inductive"}));
  e->add_option("--inference-dir", eval.inference_dir);
  e->add_option("--negatives", eval.negatives, "'full' or the number sampled per side");
  e->add_option("--split", eval.split)->check(CLI::IsMember({"test", "valid"}));
  e->add_option("--task", eval.task)->check(CLI::IsMember({"lp", "rp"}));
  e->add_option("--workers", eval.workers)->check(CLI::PositiveNumber);
  e->add_option("--seed", eval.seed);
  e->add_option("--out", eval.out, "Report directory (defaults to the checkpoint's)");

  PositionalArgs pos;
  auto* p = app.add_subcommand("positionals", "1-D PCA of the positional embeddings");
  p->add_option("--ckpt", pos.ckpt)->required();
  p->add_option("--out", pos.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s) return cmd_stats(stats);
    if (*m) return cmd_mine(mine);
    if (*t) return cmd_train(train_args);
    if (*e) return cmd_eval(eval);
    if (*p) return cmd_positionals(pos);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const ad::NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << '\n';
    return kNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace pathe::cli
