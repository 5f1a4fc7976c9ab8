#include "pathe/model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace pathe {

using ad::Parameter;
using ad::ParameterSet;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (dim == 0) fail("dim must be positive");
  if (paths_per_entity == 0) fail("paths_per_entity must be >= 1");
  if (max_len == 0) fail("max_len must be >= 1");
  if (encoder_layers == 0) fail("encoder_layers must be >= 1");
  if (encoder_heads == 0 || dim % encoder_heads != 0) {
    fail(fmt::format("dim {} is not divisible by encoder_heads {}", dim, encoder_heads));
  }
  if (encoder_ff == 0) fail("encoder_ff must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (aggregator == AggregatorKind::Transformer && aggregator_layers == 0) {
    fail("aggregator_layers must be >= 1 for the transformer aggregator");
  }
}

std::vector<std::size_t> positional_indices(std::size_t num_slots, std::size_t anchor_slot,
                                            PositionalKind kind) {
  std::vector<std::size_t> pos(num_slots);
  for (std::size_t s = 0; s < num_slots; ++s) {
    if (kind == PositionalKind::Standard) {
      pos[s] = s + 1;
    } else {
      pos[s] = (s > anchor_slot ? s - anchor_slot : anchor_slot - s) + 1;
    }
  }
  return pos;
}

PathBatch build_path_batch(std::span<const Path> paths, std::size_t num_relations,
                           const ModelConfig& config, std::size_t min_slots) {
  PathBatch batch;
  batch.num_paths = paths.size();
  std::size_t slots = min_slots;
  for (const Path& p : paths) slots = std::max(slots, p.num_slots());
  batch.num_slots = slots;

  std::unordered_map<EntityId, std::size_t> unique_index;
  for (const Path& p : paths) {
    for (EntityId e : p.entities) {
      if (unique_index.try_emplace(e, batch.unique_entities.size()).second) {
        batch.unique_entities.push_back(e);
      }
    }
  }
  const std::size_t n_unique = batch.unique_entities.size();
  const std::size_t pad_token = n_unique + num_relations;
  const std::size_t max_pos = config.max_position();

  const std::size_t total = paths.size() * slots;
  batch.token_ids.assign(total, pad_token);
  batch.kinds.assign(total, SlotKind::Pad);
  batch.positions.assign(total, 0);
  batch.key_mask.assign(total, 0);
  batch.anchor_slots.resize(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const Path& p = paths[i];
    if (p.entities.size() != p.relations.size() + 1) {
      throw std::invalid_argument("build_path_batch: path entity/relation counts are inconsistent");
    }
    const std::size_t n = p.num_slots();
    const std::size_t anchor_slot = 2 * p.anchor_pos;
    batch.anchor_slots[i] = anchor_slot;
    const auto pos = positional_indices(n, anchor_slot, config.positional);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t idx = i * slots + s;
      if (s % 2 == 0) {
        batch.kinds[idx] = SlotKind::Entity;
        batch.token_ids[idx] = unique_index.at(p.entities[s / 2]);
      } else {
        const RelationId r = p.relations[s / 2];
        if (r >= num_relations) {
          throw std::invalid_argument(fmt::format("build_path_batch: relation {} out of range", r));
        }
        batch.kinds[idx] = SlotKind::Relation;
        batch.token_ids[idx] = n_unique + r;
      }
      batch.positions[idx] = std::min(pos[s], max_pos);
      batch.key_mask[idx] = 1;
    }
  }
  return batch;
}

namespace {

template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<T>(dist(rng));
  return t;
}

}  // namespace

template <typename T>
Linear<T>::Linear(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                  Rng& rng) {
  weight_ = &params.add(name + ".weight", uniform_init<T>({in, out}, 1.0 / std::sqrt(double(in)), rng));
  bias_ = &params.add(name + ".bias", Tensor<T>(Shape{out}));
}

template <typename T>
Var<T> Linear<T>::operator()(Tape<T>& tape, const Var<T>& x) const {
  return ad::add(ad::matmul(x, tape.watch(*weight_)), tape.watch(*bias_));
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterSet<T>& params, const std::string& name, std::size_t dim) {
  gain_ = &params.add(name + ".gain", Tensor<T>(Shape{dim}, T{1}));
  bias_ = &params.add(name + ".bias", Tensor<T>(Shape{dim}));
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Tape<T>& tape, const Var<T>& x) const {
  return ad::layer_norm(x, tape.watch(*gain_), tape.watch(*bias_));
}

template <typename T>
EncoderLayer<T>::EncoderLayer(ParameterSet<T>& params, const std::string& name, std::size_t dim,
                              std::size_t heads, std::size_t ff, double dropout, Rng& rng)
    : norm_attn_(params, name + ".norm_attn", dim),
      norm_ff_(params, name + ".norm_ff", dim),
      query_(params, name + ".query", dim, dim, rng),
      key_(params, name + ".key", dim, dim, rng),
      value_(params, name + ".value", dim, dim, rng),
      out_(params, name + ".attn_out", dim, dim, rng),
      ff_in_(params, name + ".ff_in", dim, ff, rng),
      ff_out_(params, name + ".ff_out", ff, dim, rng),
      heads_(heads),
      dropout_(dropout) {}

template <typename T>
Var<T> EncoderLayer<T>::forward(Tape<T>& tape, const Var<T>& x, std::span<const std::uint8_t> key_mask,
                                std::size_t seq_len, bool train, Rng& rng) const {
  const T p = static_cast<T>(dropout_);
  Var<T> h = norm_attn_(tape, x);
  Var<T> attn = ad::multi_head_attention(query_(tape, h), key_(tape, h), value_(tape, h), key_mask,
                                         seq_len, heads_);
  Var<T> y = ad::add(x, ad::dropout(out_(tape, attn), p, train, rng));
  Var<T> f = ff_out_(tape, ad::relu(ff_in_(tape, norm_ff_(tape, y))));
  return ad::add(y, ad::dropout(f, p, train, rng));
}

template <typename T>
Encoder<T>::Encoder(ParameterSet<T>& params, const std::string& name, std::size_t layers,
                    std::size_t dim, std::size_t heads, std::size_t ff, double dropout, Rng& rng) {
  for (std::size_t i = 0; i < layers; ++i) {
    layers_.emplace_back(params, fmt::format("{}.layer{}", name, i), dim, heads, ff, dropout, rng);
  }
  final_norm_ = LayerNorm<T>(params, name + ".final_norm", dim);
}

template <typename T>
Var<T> Encoder<T>::forward(Tape<T>& tape, const Var<T>& x, std::span<const std::uint8_t> key_mask,
                           std::size_t seq_len, bool train, Rng& rng) const {
  Var<T> h = x;
  for (const auto& layer : layers_) h = layer.forward(tape, h, key_mask, seq_len, train, rng);
  return final_norm_(tape, h);
}

template <typename T>
PathE<T>::PathE(const ModelConfig& config, std::size_t num_relations, Task task, std::uint64_t seed)
    : config_(config), num_relations_(num_relations), task_(task) {
  config_.validate();
  if (num_relations == 0) throw std::invalid_argument("PathE: the graph has no relations");
  Rng rng = stream_rng(seed, 0x5041544845ULL);
  const std::size_t d = config_.dim;
  const std::size_t hidden = config_.projector_width();
  const double emb_bound = 1.0 / std::sqrt(double(d));

  Tensor<T> relations = uniform_init<T>({num_relations + 1, d}, emb_bound, rng);
  for (std::size_t c = 0; c < d; ++c) relations.at(num_relations, c) = T{0};  // padding row
  relation_embeddings_ = &params_.add("relation_embeddings", std::move(relations));
  Tensor<T> positions = uniform_init<T>({config_.max_position() + 1, d}, emb_bound, rng);
  for (std::size_t c = 0; c < d; ++c) positions.at(0, c) = T{0};  // padding position
  positional_embeddings_ = &params_.add("positional_embeddings", std::move(positions));

  in_hidden_ = Linear<T>(params_, "projector.in.hidden", num_relations, hidden, rng);
  in_out_ = Linear<T>(params_, "projector.in.out", hidden, d, rng);
  out_hidden_ = Linear<T>(params_, "projector.out.hidden", num_relations, hidden, rng);
  out_out_ = Linear<T>(params_, "projector.out.out", hidden, d, rng);
  fuse_hidden_ = Linear<T>(params_, "projector.fuse.hidden", 2 * d, hidden, rng);
  fuse_out_ = Linear<T>(params_, "projector.fuse.out", hidden, d, rng);

  path_encoder_ = std::make_unique<Encoder<T>>(params_, "path_encoder", config_.encoder_layers, d,
                                               config_.encoder_heads, config_.encoder_ff,
                                               config_.dropout, rng);
  if (config_.aggregator == AggregatorKind::Transformer) {
    aggregation_tokens_ = &params_.add("aggregator.tokens", uniform_init<T>({2, d}, emb_bound, rng));
    head_role_ = &params_.add("aggregator.head_role", uniform_init<T>({d}, emb_bound, rng));
    tail_role_ = &params_.add("aggregator.tail_role", uniform_init<T>({d}, emb_bound, rng));
    aggregator_ = std::make_unique<Encoder<T>>(params_, "aggregator", config_.aggregator_layers, d,
                                               config_.encoder_heads, config_.encoder_ff,
                                               config_.dropout, rng);
  }
  if (task_ == Task::RelationPrediction) {
    head_ = Linear<T>(params_, "rp_head", 2 * d, num_relations, rng);
  } else {
    head_ = Linear<T>(params_, "lp_head", 3 * d, 1, rng);
  }
}

template <typename T>
Var<T> PathE<T>::project_(Tape<T>& tape, const Linear<T>& first, const Linear<T>& second,
                          const Var<T>& x) const {
  return second(tape, ad::relu(first(tape, x)));
}

template <typename T>
Var<T> PathE<T>::project_entities(Tape<T>& tape, const KnowledgeGraph& graph,
                                  std::span<const EntityId> entities) const {
  if (graph.num_relations() != num_relations_) {
    throw std::invalid_argument(fmt::format("PathE: graph has {} relations, model expects {}",
                                            graph.num_relations(), num_relations_));
  }
  const std::size_t n = entities.size(), R = num_relations_;
  Tensor<T> in_ctx(Shape{n, R}), out_ctx(Shape{n, R});
  auto transform = [this](std::uint32_t c) {
    return config_.context_transform == ContextTransform::Log1p ? static_cast<T>(std::log1p(double(c)))
                                                                : static_cast<T>(c);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const RelationalContext& ctx = graph.context(entities[i]);
    for (auto [r, c] : ctx.in_counts) in_ctx.at(i, r) = transform(c);
    for (auto [r, c] : ctx.out_counts) out_ctx.at(i, r) = transform(c);
  }
  Var<T> p_in = project_(tape, in_hidden_, in_out_, tape.constant(std::move(in_ctx)));
  Var<T> p_out = project_(tape, out_hidden_, out_out_, tape.constant(std::move(out_ctx)));
  return project_(tape, fuse_hidden_, fuse_out_, ad::concat<T>({p_in, p_out}, 1));
}

template <typename T>
Var<T> PathE<T>::encode_grid(Tape<T>& tape, const KnowledgeGraph& graph, const PathBatch& batch,
                             bool train, Rng& rng) const {
  if (batch.num_paths == 0) throw std::invalid_argument("PathE: empty path batch");
  Var<T> projected = project_entities(tape, graph, batch.unique_entities);
  Var<T> table = ad::concat<T>({projected, tape.watch(*relation_embeddings_)}, 0);
  Var<T> x = ad::embedding_lookup(table, std::span<const std::size_t>(batch.token_ids));
  x = ad::add(x, ad::embedding_lookup(tape.watch(*positional_embeddings_),
                                      std::span<const std::size_t>(batch.positions)));
  return path_encoder_->forward(tape, x, batch.key_mask, batch.num_slots, train, rng);
}

template <typename T>
Var<T> PathE<T>::encode_paths(Tape<T>& tape, const KnowledgeGraph& graph, const PathBatch& batch,
                              bool train, Rng& rng) const {
  Var<T> grid = encode_grid(tape, graph, batch, train, rng);
  std::vector<std::size_t> rows(batch.num_paths);
  for (std::size_t p = 0; p < batch.num_paths; ++p) rows[p] = p * batch.num_slots + batch.anchor_slots[p];
  return ad::embedding_lookup(grid, std::span<const std::size_t>(rows));
}

template <typename T>
TripleEmbeddings<T> PathE<T>::aggregate(Tape<T>& tape, const Var<T>& anchors,
                                        std::span<const std::size_t> head_sets,
                                        std::span<const std::size_t> tail_sets, bool train,
                                        Rng& rng) const {
  if (head_sets.size() != tail_sets.size() || head_sets.empty()) {
    throw std::invalid_argument("PathE::aggregate: head/tail set lists must be non-empty and equal length");
  }
  const std::size_t Z = head_sets.size(), ppe = config_.paths_per_entity, d = config_.dim;
  const std::size_t n_sets = anchors.shape().at(0) / ppe;
  std::vector<std::size_t> head_rows(Z * ppe), tail_rows(Z * ppe);
  for (std::size_t z = 0; z < Z; ++z) {
    if (head_sets[z] >= n_sets || tail_sets[z] >= n_sets) {
      throw std::invalid_argument("PathE::aggregate: path set index out of range");
    }
    for (std::size_t j = 0; j < ppe; ++j) {
      head_rows[z * ppe + j] = head_sets[z] * ppe + j;
      tail_rows[z * ppe + j] = tail_sets[z] * ppe + j;
    }
  }
  Var<T> heads = ad::embedding_lookup(anchors, std::span<const std::size_t>(head_rows));
  Var<T> tails = ad::embedding_lookup(anchors, std::span<const std::size_t>(tail_rows));

  if (config_.aggregator == AggregatorKind::Average) {
    return {ad::mean(ad::reshape(heads, Shape{Z, ppe, d}), 1),
            ad::mean(ad::reshape(tails, Shape{Z, ppe, d}), 1)};
  }

  // Sequence per triple: [token_head, token_tail, head paths..., tail paths...].
  heads = ad::add(heads, tape.watch(*head_role_));
  tails = ad::add(tails, tape.watch(*tail_role_));
  Var<T> table = ad::concat<T>({tape.watch(*aggregation_tokens_), heads, tails}, 0);
  const std::size_t L = 2 * ppe + 2;
  std::vector<std::size_t> seq(Z * L);
  for (std::size_t z = 0; z < Z; ++z) {
    seq[z * L] = 0;
    seq[z * L + 1] = 1;
    for (std::size_t j = 0; j < ppe; ++j) {
      seq[z * L + 2 + j] = 2 + z * ppe + j;
      seq[z * L + 2 + ppe + j] = 2 + Z * ppe + z * ppe + j;
    }
  }
  Var<T> x = ad::embedding_lookup(table, std::span<const std::size_t>(seq));
  Var<T> out = aggregator_->forward(tape, x, {}, L, train, rng);
  std::vector<std::size_t> h_idx(Z), t_idx(Z);
  for (std::size_t z = 0; z < Z; ++z) {
    h_idx[z] = z * L;
    t_idx[z] = z * L + 1;
  }
  return {ad::embedding_lookup(out, std::span<const std::size_t>(h_idx)),
          ad::embedding_lookup(out, std::span<const std::size_t>(t_idx))};
}

template <typename T>
Var<T> PathE<T>::rp_scores(Tape<T>& tape, const TripleEmbeddings<T>& emb) const {
  if (task_ != Task::RelationPrediction) throw std::logic_error("PathE: model has no relation-prediction head");
  return head_(tape, ad::concat<T>({emb.head, emb.tail}, 1));
}

template <typename T>
Var<T> PathE<T>::lp_logits(Tape<T>& tape, const TripleEmbeddings<T>& emb,
                           std::span<const RelationId> relations) const {
  if (task_ != Task::LinkPrediction) throw std::logic_error("PathE: model has no link-prediction head");
  std::vector<std::size_t> ids(relations.begin(), relations.end());
  for (std::size_t id : ids) {
    if (id >= num_relations_) throw std::invalid_argument(fmt::format("PathE: relation {} out of range", id));
  }
  Var<T> rel = ad::embedding_lookup(tape.watch(*relation_embeddings_), std::span<const std::size_t>(ids));
  return head_(tape, ad::concat<T>({emb.head, rel, emb.tail}, 1));
}

template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class EncoderLayer<float>;
template class EncoderLayer<double>;
template class Encoder<float>;
template class Encoder<double>;
template class PathE<float>;
template class PathE<double>;

}  // namespace pathe
