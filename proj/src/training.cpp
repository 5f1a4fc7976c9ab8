#include "pathe/training.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

#include "pathe/checkpoint.hpp"
#include "pathe/evaluation.hpp"

namespace pathe {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (patience < 1) fail("patience must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (accumulate < 1) fail("accumulate must be >= 1");
  if (task == Task::LinkPrediction && negatives < 1) fail("negatives must be >= 1 for link prediction");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) fail("label_smoothing must lie in [0, 1)");
  if (min_delta < 0.0) fail("min_delta must be >= 0");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
}

ModelConfig apply_ablations(ModelConfig config, const TrainConfig& train) {
  if (train.no_aggregator) config.aggregator = AggregatorKind::Average;
  if (train.single_path) config.paths_per_entity = 1;
  if (train.standard_positionals) config.positional = PositionalKind::Standard;
  return config;
}

NegativeSet sample_negatives(const Triple& triple, std::size_t n, const KnowledgeGraph& graph,
                             Rng& rng) {
  NegativeSet set;
  set.heads = filtered_corruptions(graph, triple, true, n, rng);
  set.tails = filtered_corruptions(graph, triple, false, n, rng);
  set.head_shortfall = n - set.heads.size();
  set.tail_shortfall = n - set.tails.size();
  return set;
}

template <typename T>
Var<T> lp_loss(const Var<T>& logits, LossKind kind, T label_smoothing) {
  if (logits.shape().size() != 2 || logits.shape()[1] < 3 || logits.shape()[1] % 2 == 0) {
    throw ad::ShapeError("lp_loss: expected Z x (2N+1) logits, got " + ad::shape_str(logits.shape()));
  }
  const std::size_t Z = logits.shape()[0], width = logits.shape()[1];
  if (kind == LossKind::CrossEntropy) {
    std::vector<std::size_t> targets(Z, 0);
    return ad::cross_entropy(logits, std::span<const std::size_t>(targets), label_smoothing);
  }
  const T two_n = static_cast<T>(width - 1);
  const T pos_target = T{1} - label_smoothing / T{2};
  const T neg_target = label_smoothing / T{2};
  std::vector<T> targets(Z * width), weights(Z * width);
  for (std::size_t z = 0; z < Z; ++z) {
    for (std::size_t c = 0; c < width; ++c) {
      targets[z * width + c] = c == 0 ? pos_target : neg_target;
      weights[z * width + c] = (c == 0 ? T{1} : T{1} / two_n) / static_cast<T>(Z);
    }
  }
  return ad::bce_with_logits(logits, std::span<const T>(targets), std::span<const T>(weights));
}

template <typename T>
Var<T> rp_loss(const Var<T>& scores, std::span<const RelationId> relations, T label_smoothing) {
  std::vector<std::size_t> targets(relations.begin(), relations.end());
  return ad::cross_entropy(scores, std::span<const std::size_t>(targets), label_smoothing);
}

namespace {

// Path sets of a batch, stored as consecutive groups of ppe paths.
struct PathSets {
  std::vector<Path> paths;
  std::size_t count = 0;

  std::size_t add(std::vector<Path> set) {
    for (auto& p : set) paths.push_back(std::move(p));
    return count++;
  }
};

}  // namespace

template <typename T>
Var<T> batch_loss(Tape<T>& tape, const PathE<T>& model, const KnowledgeGraph& graph,
                  const PathCorpus& corpus, std::span<const Triple> batch, const TrainConfig& config,
                  bool train, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const std::size_t ppe = model.config().paths_per_entity;
  const T smoothing = static_cast<T>(config.label_smoothing);
  PathSets sets;
  std::vector<std::size_t> head_sets, tail_sets;

  if (model.task() == Task::RelationPrediction) {
    std::vector<RelationId> relations;
    for (const Triple& t : batch) {
      head_sets.push_back(sets.add(sample_entity_paths(corpus, t.head, ppe, rng)));
      tail_sets.push_back(sets.add(sample_entity_paths(corpus, t.tail, ppe, rng)));
      relations.push_back(t.rel);
    }
    PathBatch paths = build_path_batch(sets.paths, model.num_relations(), model.config());
    Var<T> anchors = model.encode_paths(tape, graph, paths, train, rng);
    auto emb = model.aggregate(tape, anchors, head_sets, tail_sets, train, rng);
    return rp_loss(model.rp_scores(tape, emb), relations, smoothing);
  }

  const std::size_t N = config.negatives;
  std::vector<RelationId> relations;
  std::size_t groups = 0;
  for (const Triple& t : batch) {
    NegativeSet neg = sample_negatives(t, N, graph, rng);
    if (neg.heads.empty() && neg.tails.empty()) continue;
    // Shortfalls are filled by cycling; an empty side borrows the other's.
    std::vector<Triple> negatives;
    for (std::size_t i = 0; i < N; ++i) {
      if (!neg.heads.empty()) {
        negatives.push_back({neg.heads[i % neg.heads.size()], t.rel, t.tail});
      } else {
        negatives.push_back({t.head, t.rel, neg.tails[(N + i) % neg.tails.size()]});
      }
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (!neg.tails.empty()) {
        negatives.push_back({t.head, t.rel, neg.tails[i % neg.tails.size()]});
      } else {
        negatives.push_back({neg.heads[(N + i) % neg.heads.size()], t.rel, t.tail});
      }
    }
    const std::size_t h_set = sets.add(sample_entity_paths(corpus, t.head, ppe, rng));
    const std::size_t t_set = sets.add(sample_entity_paths(corpus, t.tail, ppe, rng));
    std::map<EntityId, std::size_t> corrupted_sets;
    auto set_of = [&](EntityId e) {
      auto it = corrupted_sets.find(e);
      if (it != corrupted_sets.end()) return it->second;
      const std::size_t s = sets.add(sample_entity_paths(corpus, e, ppe, rng));
      corrupted_sets.emplace(e, s);
      return s;
    };
    head_sets.push_back(h_set);
    tail_sets.push_back(t_set);
    relations.push_back(t.rel);
    for (const Triple& c : negatives) {
      head_sets.push_back(c.head == t.head ? h_set : set_of(c.head));
      tail_sets.push_back(c.tail == t.tail ? t_set : set_of(c.tail));
      relations.push_back(t.rel);
    }
    ++groups;
  }
  if (groups == 0) throw std::runtime_error("batch_loss: no positive in the batch has a valid negative");
  PathBatch paths = build_path_batch(sets.paths, model.num_relations(), model.config());
  Var<T> anchors = model.encode_paths(tape, graph, paths, train, rng);
  auto emb = model.aggregate(tape, anchors, head_sets, tail_sets, train, rng);
  Var<T> logits = model.lp_logits(tape, emb, relations);
  return lp_loss(ad::reshape(logits, Shape{groups, 2 * N + 1}), config.loss, smoothing);
}

EarlyStopper::EarlyStopper(std::size_t patience, double min_delta)
    : patience_(patience), min_delta_(min_delta), best_(-std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw std::invalid_argument("EarlyStopper: patience must be >= 1");
}

bool EarlyStopper::update(double metric) {
  ++epochs_;
  if (metric > best_ + min_delta_) {
    best_ = metric;
    best_epoch_ = epochs_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

void write_log_csv(std::ostream& os, std::span<const EpochLog> history) {
  os << "epoch,train_loss,valid_mrr,valid_hits10,elapsed_s\n";
  for (const auto& e : history) {
    os << fmt::format("{},{:.8g},{},{},{:.3f}\n", e.epoch, e.train_loss,
                      e.valid_mrr ? fmt::format("{:.6f}", *e.valid_mrr) : "",
                      e.valid_hits10 ? fmt::format("{:.6f}", *e.valid_hits10) : "", e.elapsed_s);
  }
}

namespace {

constexpr std::uint64_t kValidationStream = 0x56414C4944ULL;

RankMetrics validate_model(const PathE<float>& model, const KnowledgeGraph& graph,
                           const PathCorpus& corpus, const TrainConfig& config) {
  auto triples = graph.valid();
  if (config.valid_limit && triples.size() > config.valid_limit) {
    triples = triples.first(config.valid_limit);
  }
  const std::uint64_t seed = splitmix64(config.seed ^ kValidationStream);
  ModelScorer scorer(model, graph, corpus, seed);
  if (model.task() == Task::RelationPrediction) {
    return metrics_from_ranks(rp_ranks(scorer, triples));
  }
  LpEvalOptions options;
  options.negatives = config.valid_negatives;
  options.seed = seed;
  return metrics_from_ranks(lp_ranks(scorer, triples, options));
}

}  // namespace

TrainResult train(PathE<float>& model, const KnowledgeGraph& graph, const PathCorpus& corpus,
                  const TrainConfig& config, const TrainOutputs& outputs) {
  config.validate();
  if (config.task != model.task()) throw std::invalid_argument("train: config task differs from model task");
  if (graph.train().empty()) throw std::invalid_argument("train: empty train split");
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  TrainResult result;
  result.train_loss_stopping = graph.valid().empty();
  if (result.train_loss_stopping && outputs.progress) {
    *outputs.progress << "valid split is empty; early stopping on train loss\n";
  }
  ad::Adam<float> optimizer({.lr = config.learning_rate});
  EarlyStopper stopper(config.patience, config.min_delta);
  std::vector<ad::NamedTensor> best = ad::snapshot(model.parameters());
  auto& params = model.parameters();
  params.zero_grad();

  std::vector<std::size_t> order(graph.train().size());
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng = stream_rng(config.seed, epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }

    double loss_sum = 0.0;
    std::size_t pending = 0, batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t size = std::min(config.batch_size, order.size() - begin);
      const std::size_t micro = config.micro_batch ? std::min(config.micro_batch, size) : size;
      for (std::size_t m = 0; m < size; m += micro) {
        const std::size_t count = std::min(micro, size - m);
        std::vector<Triple> chunk(count);
        for (std::size_t i = 0; i < count; ++i) chunk[i] = graph.train()[order[begin + m + i]];
        Tape<float> tape;
        Var<float> loss = batch_loss(tape, model, graph, corpus, chunk, config, true, rng);
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
          throw ad::NumericError(fmt::format("non-finite loss {} at epoch {} batch {}", value, epoch,
                                             batch_index));
        }
        loss_sum += value * static_cast<double>(count);
        const float factor = static_cast<float>(static_cast<double>(count) /
                                                static_cast<double>(size * config.accumulate));
        tape.backward(ad::scale(loss, factor));
      }
      if (++pending == config.accumulate) {
        optimizer.step(params);
        params.zero_grad();
        pending = 0;
      }
    }
    if (pending) {
      optimizer.step(params);
      params.zero_grad();
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    double metric = -log.train_loss;
    if (!result.train_loss_stopping) {
      RankMetrics m = validate_model(model, graph, corpus, config);
      log.valid_mrr = m.mrr;
      log.valid_hits10 = m.hits10;
      metric = m.mrr;
    }
    log.elapsed_s = std::chrono::duration<double>(Clock::now() - start).count();
    result.history.push_back(log);
    if (stopper.update(metric)) {
      best = ad::snapshot(params);
      if (outputs.checkpoint) ad::write_checkpoint(*outputs.checkpoint, best);
    }
    if (outputs.progress) {
      *outputs.progress << fmt::format("epoch {} loss {:.6f}", epoch, log.train_loss);
      if (log.valid_mrr) *outputs.progress << fmt::format(" valid_mrr {:.4f} hits@10 {:.4f}", *log.valid_mrr, *log.valid_hits10);
      *outputs.progress << fmt::format(" ({:.1f}s)\n", log.elapsed_s);
    }
    if (outputs.log_csv) {
      std::ofstream csv(*outputs.log_csv);
      if (!csv) throw std::runtime_error("cannot write training log " + outputs.log_csv->string());
      write_log_csv(csv, result.history);
    }
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }
  ad::restore(params, best);
  result.best_epoch = stopper.best_epoch();
  result.best_metric = stopper.best();
  result.optimizer_steps = optimizer.steps();
  return result;
}

template Var<float> lp_loss(const Var<float>&, LossKind, float);
template Var<double> lp_loss(const Var<double>&, LossKind, double);
template Var<float> rp_loss(const Var<float>&, std::span<const RelationId>, float);
template Var<double> rp_loss(const Var<double>&, std::span<const RelationId>, double);
template Var<float> batch_loss(Tape<float>&, const PathE<float>&, const KnowledgeGraph&,
                               const PathCorpus&, std::span<const Triple>, const TrainConfig&, bool,
                               Rng&);
template Var<double> batch_loss(Tape<double>&, const PathE<double>&, const KnowledgeGraph&,
                                const PathCorpus&, std::span<const Triple>, const TrainConfig&, bool,
                                Rng&);

}  // namespace pathe
