#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pathe/kg.hpp"
#include "pathe/model.hpp"
#include "pathe/paths.hpp"

namespace pathe {

enum class EvalMode : std::uint8_t { Transductive, Inductive };

// Realistic rank: 1 + #{s > true} + #{s == true} / 2.
double rank_of(double true_score, std::span<const double> corruption_scores);

struct RankMetrics {
  double mrr = 0.0;
  double hits1 = 0.0, hits3 = 0.0, hits5 = 0.0, hits10 = 0.0;
  std::size_t count = 0;
};

// Metrics over pooled ranks; summation runs in index order.
RankMetrics metrics_from_ranks(std::span<const double> ranks);

// mrr / param_millions; throws std::invalid_argument unless param_millions > 0.
double effi(double mrr, double param_millions);

struct EvalReport {
  Task task = Task::LinkPrediction;
  EvalMode mode = EvalMode::Transductive;
  std::size_t negatives = 0;  // 0 = full entity set
  RankMetrics metrics;
  double param_millions = 0.0;
  double effi = 0.0;
};

void write_report_text(std::ostream& os, const EvalReport& report);
std::string report_json(const EvalReport& report);

// Fixed-path scoring front end. Each entity's path set is sampled once from
// its own RNG stream and encoded in inference mode, so the score of a triple
// does not depend on which other triples are scored with it.
class ModelScorer {
 public:
  ModelScorer(const PathE<float>& model, const KnowledgeGraph& graph, const PathCorpus& corpus,
              std::uint64_t seed, std::size_t workers = 1);

  const PathE<float>& model() const noexcept { return model_; }
  const KnowledgeGraph& graph() const noexcept { return graph_; }

  // Paths used for `entity` (paths_per_entity of them).
  std::span<const Path> entity_paths(EntityId entity) const;

  // One logit per triple (link prediction models).
  std::vector<float> lp_scores(std::span<const Triple> triples) const;
  // Z x |R| relation scores, row-major (relation prediction models).
  std::vector<float> rp_scores(std::span<const Triple> triples) const;

 private:
  ad::Tensor<float> anchors_for(std::span<const EntityId> entities) const;

  const PathE<float>& model_;
  const KnowledgeGraph& graph_;
  std::vector<std::vector<Path>> paths_;
  ad::Tensor<float> anchors_;  // (|E| * ppe) x d
};

struct LpEvalOptions {
  EvalMode mode = EvalMode::Transductive;
  std::size_t negatives = 0;  // 0 = every filtered entity, else k sampled per side
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t chunk = 512;  // triples scored per forward pass
};

// Head- and tail-side filtered ranks of every triple in `triples`, pooled.
// Returns ranks in order [head_0, tail_0, head_1, tail_1, ...].
std::vector<double> lp_ranks(const ModelScorer& scorer, std::span<const Triple> triples,
                             const LpEvalOptions& options);
EvalReport evaluate_lp(const ModelScorer& scorer, std::span<const Triple> triples,
                       const LpEvalOptions& options);

// Filtered rank of the true relation among all |R| scores.
std::vector<double> rp_ranks(const ModelScorer& scorer, std::span<const Triple> triples,
                             std::size_t workers = 1);
EvalReport evaluate_rp(const ModelScorer& scorer, std::span<const Triple> triples,
                       std::size_t workers = 1);

// Filtered corruption candidates for one side of `triple` (heads when
// `head_side`). `k == 0` returns all; otherwise up to k uniform samples
// without replacement, drawn from `rng`.
std::vector<EntityId> filtered_corruptions(const KnowledgeGraph& graph, const Triple& triple,
                                           bool head_side, std::size_t k, Rng& rng);

struct PcaResult {
  std::vector<double> component;    // unit vector, largest-|x| entry positive
  std::vector<double> projections;  // one per input row
  double eigenvalue = 0.0;
  std::size_t iterations = 0;
  bool degenerate = false;  // fewer than two distinct rows
};

// Top principal component by power iteration on the covariance of the
// centred rows (tolerance 1e-9, at most 1e4 iterations).
PcaResult top_principal_component(const std::vector<std::vector<double>>& rows);

// PCA over positional rows 1..max_position (row 0 is padding).
PcaResult positional_pca(const ad::Tensor<float>& positional_table);

}  // namespace pathe
