#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pathe/autodiff.hpp"
#include "pathe/kg.hpp"
#include "pathe/ops.hpp"
#include "pathe/paths.hpp"
#include "pathe/rng.hpp"

namespace pathe {

enum class Task : std::uint8_t { RelationPrediction, LinkPrediction };
enum class AggregatorKind : std::uint8_t { Average, Transformer };
enum class PositionalKind : std::uint8_t { EntityFocused, Standard };
enum class ContextTransform : std::uint8_t { Raw, Log1p };

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t paths_per_entity = 4;
  std::size_t max_len = 20;
  std::size_t encoder_layers = 1;
  std::size_t encoder_heads = 2;
  std::size_t encoder_ff = 256;
  double dropout = 0.1;
  AggregatorKind aggregator = AggregatorKind::Transformer;
  std::size_t aggregator_layers = 1;
  PositionalKind positional = PositionalKind::EntityFocused;
  // Hidden width of the projector MLPs; 0 selects 2*dim.
  std::size_t projector_hidden = 0;
  ContextTransform context_transform = ContextTransform::Raw;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  std::size_t projector_width() const { return projector_hidden ? projector_hidden : 2 * dim; }
  // Largest positional id; slots further from the anchor clamp to it.
  std::size_t max_position() const { return 2 * max_len + 1; }
};

// Position id of every slot: |slot - anchor_slot| + 1 for entity-focused
// encodings, slot + 1 for standard ones.
std::vector<std::size_t> positional_indices(std::size_t num_slots, std::size_t anchor_slot,
                                            PositionalKind kind = PositionalKind::EntityFocused);

enum class SlotKind : std::uint8_t { Entity, Relation, Pad };

// Padded grid of interleaved entity/relation slots, one row per path.
// Token ids index the concatenation [projected unique entities | relation
// table], whose last row is the relation padding row.
struct PathBatch {
  std::size_t num_paths = 0;
  std::size_t num_slots = 0;
  std::vector<std::size_t> token_ids;
  std::vector<SlotKind> kinds;
  std::vector<std::size_t> positions;  // 0 on padding slots
  std::vector<std::uint8_t> key_mask;
  std::vector<std::size_t> anchor_slots;
  std::vector<EntityId> unique_entities;
};

// `min_slots` widens the grid beyond the longest path (extra padding).
PathBatch build_path_batch(std::span<const Path> paths, std::size_t num_relations,
                           const ModelConfig& config, std::size_t min_slots = 0);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ad::ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  ad::Var<T> operator()(ad::Tape<T>& tape, const ad::Var<T>& x) const;

 private:
  ad::Parameter<T>* weight_ = nullptr;
  ad::Parameter<T>* bias_ = nullptr;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ad::ParameterSet<T>& params, const std::string& name, std::size_t dim);
  ad::Var<T> operator()(ad::Tape<T>& tape, const ad::Var<T>& x) const;

 private:
  ad::Parameter<T>* gain_ = nullptr;
  ad::Parameter<T>* bias_ = nullptr;
};

// Pre-norm transformer block: x + drop(attn(ln(x))), then x + drop(ff(ln(x))).
template <typename T>
class EncoderLayer {
 public:
  EncoderLayer(ad::ParameterSet<T>& params, const std::string& name, std::size_t dim,
               std::size_t heads, std::size_t ff, double dropout, Rng& rng);
  ad::Var<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, std::span<const std::uint8_t> key_mask,
                     std::size_t seq_len, bool train, Rng& rng) const;

 private:
  LayerNorm<T> norm_attn_, norm_ff_;
  Linear<T> query_, key_, value_, out_, ff_in_, ff_out_;
  std::size_t heads_;
  double dropout_;
};

template <typename T>
class Encoder {
 public:
  Encoder(ad::ParameterSet<T>& params, const std::string& name, std::size_t layers, std::size_t dim,
          std::size_t heads, std::size_t ff, double dropout, Rng& rng);
  ad::Var<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, std::span<const std::uint8_t> key_mask,
                     std::size_t seq_len, bool train, Rng& rng) const;

 private:
  std::vector<EncoderLayer<T>> layers_;
  LayerNorm<T> final_norm_;
};

template <typename T>
struct TripleEmbeddings {
  ad::Var<T> head;  // Z x d
  ad::Var<T> tail;  // Z x d
};

// Entity-agnostic path encoder. Holds no per-entity parameter: entities are
// embedded from their relational contexts and the paths they occur in.
template <typename T>
class PathE {
 public:
  PathE(const ModelConfig& config, std::size_t num_relations, Task task, std::uint64_t seed);
  PathE(const PathE&) = delete;
  PathE& operator=(const PathE&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  Task task() const noexcept { return task_; }
  std::size_t num_relations() const noexcept { return num_relations_; }
  ad::ParameterSet<T>& parameters() noexcept { return params_; }
  const ad::ParameterSet<T>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  // Node projector over the relational contexts of `entities` (U x d).
  ad::Var<T> project_entities(ad::Tape<T>& tape, const KnowledgeGraph& graph,
                              std::span<const EntityId> entities) const;

  // Encoder output for every slot of the batch, (num_paths*num_slots x d).
  ad::Var<T> encode_grid(ad::Tape<T>& tape, const KnowledgeGraph& graph, const PathBatch& batch,
                         bool train, Rng& rng) const;

  // Contextualised anchor vector of each path, (num_paths x d).
  ad::Var<T> encode_paths(ad::Tape<T>& tape, const KnowledgeGraph& graph, const PathBatch& batch,
                          bool train, Rng& rng) const;

  // `anchors` holds consecutive groups of paths_per_entity rows, one group
  // per entity path set. Triple z uses groups head_sets[z] and tail_sets[z].
  TripleEmbeddings<T> aggregate(ad::Tape<T>& tape, const ad::Var<T>& anchors,
                                std::span<const std::size_t> head_sets,
                                std::span<const std::size_t> tail_sets, bool train, Rng& rng) const;

  // Relation scores S = [e_h | e_t] W + b, (Z x |R|).
  ad::Var<T> rp_scores(ad::Tape<T>& tape, const TripleEmbeddings<T>& emb) const;

  // One logit per triple from [e_h | r | e_t], (Z x 1).
  ad::Var<T> lp_logits(ad::Tape<T>& tape, const TripleEmbeddings<T>& emb,
                       std::span<const RelationId> relations) const;

 private:
  ad::Var<T> project_(ad::Tape<T>& tape, const Linear<T>& first, const Linear<T>& second,
                      const ad::Var<T>& x) const;

  ModelConfig config_;
  std::size_t num_relations_;
  Task task_;
  ad::ParameterSet<T> params_;
  ad::Parameter<T>* relation_embeddings_ = nullptr;
  ad::Parameter<T>* positional_embeddings_ = nullptr;
  Linear<T> in_hidden_, in_out_, out_hidden_, out_out_, fuse_hidden_, fuse_out_;
  std::unique_ptr<Encoder<T>> path_encoder_;
  ad::Parameter<T>* aggregation_tokens_ = nullptr;
  ad::Parameter<T>* head_role_ = nullptr;
  ad::Parameter<T>* tail_role_ = nullptr;
  std::unique_ptr<Encoder<T>> aggregator_;
  Linear<T> head_;
};

}  // namespace pathe
