#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "pathe/kg.hpp"
#include "pathe/model.hpp"
#include "pathe/optim.hpp"
#include "pathe/paths.hpp"

namespace pathe {

enum class LossKind : std::uint8_t { CrossEntropy, BinaryCrossEntropy };

struct TrainConfig {
  Task task = Task::LinkPrediction;
  LossKind loss = LossKind::CrossEntropy;
  double label_smoothing = 0.01;
  std::size_t negatives = 99;        // per side, link prediction only
  double learning_rate = 1e-3;
  std::size_t batch_size = 4096;
  std::size_t accumulate = 8;        // batches per optimizer step
  std::size_t micro_batch = 0;       // split batches for memory; 0 = whole batch
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double min_delta = 0.0;
  std::size_t valid_negatives = 99;  // per side, link prediction validation
  std::size_t valid_limit = 0;       // validate on the first k triples; 0 = all
  std::uint64_t seed = 0;
  bool no_aggregator = false;
  bool single_path = false;
  bool standard_positionals = false;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

// Model configuration with the ablation flags applied.
ModelConfig apply_ablations(ModelConfig config, const TrainConfig& train);

// Filtered head and tail corruptions of one positive triple.
struct NegativeSet {
  std::vector<EntityId> heads;
  std::vector<EntityId> tails;
  std::size_t head_shortfall = 0;
  std::size_t tail_shortfall = 0;
};

// Up to n distinct filtered corruptions per side, uniform over entities.
// Fewer are returned (and the shortfall recorded) when fewer exist.
NegativeSet sample_negatives(const Triple& triple, std::size_t n, const KnowledgeGraph& graph,
                             Rng& rng);

// Link prediction loss over Z groups of logits (Z x (2N+1)), column 0
// holding the positive. BCE: bce(pos) + sum bce(neg) / 2N, averaged over Z.
// CE: a (2N+1)-way softmax per group with the positive as the target.
template <typename T>
ad::Var<T> lp_loss(const ad::Var<T>& logits, LossKind kind, T label_smoothing = T{0});

// Relation prediction loss: mean cross entropy of Z x |R| scores.
template <typename T>
ad::Var<T> rp_loss(const ad::Var<T>& scores, std::span<const RelationId> relations,
                   T label_smoothing = T{0});

// Loss of one batch of positives for the model's task. Paths are drawn from
// `rng`, and for link prediction negatives as well; negative triples reuse
// the uncorrupted entity's path set. Throws when no positive has negatives.
template <typename T>
ad::Var<T> batch_loss(ad::Tape<T>& tape, const PathE<T>& model, const KnowledgeGraph& graph,
                      const PathCorpus& corpus, std::span<const Triple> batch,
                      const TrainConfig& config, bool train, Rng& rng);

// Improvement means metric > best + min_delta; stop after `patience`
// consecutive epochs without one.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, double min_delta);
  // Returns true when the value is a new best.
  bool update(double metric);
  bool should_stop() const noexcept { return stale_ >= patience_; }
  double best() const noexcept { return best_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  std::size_t epochs() const noexcept { return epochs_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_;
  std::size_t best_epoch_ = 0;
  std::size_t epochs_ = 0;
  std::size_t stale_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> valid_mrr;
  std::optional<double> valid_hits10;
  double elapsed_s = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  bool stopped_early = false;
  bool train_loss_stopping = false;  // valid split was empty
  std::uint64_t optimizer_steps = 0;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint;  // best parameters
  std::optional<std::filesystem::path> log_csv;
  std::ostream* progress = nullptr;
};

// Trains `model` in place and leaves it holding the best parameters.
// Single-threaded and fully determined by config.seed.
TrainResult train(PathE<float>& model, const KnowledgeGraph& graph, const PathCorpus& corpus,
                  const TrainConfig& config, const TrainOutputs& outputs = {});

void write_log_csv(std::ostream& os, std::span<const EpochLog> history);

}  // namespace pathe
