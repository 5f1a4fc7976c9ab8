#include <gtest/gtest.h>

#include "pathe/checkpoint.hpp"
#include "pathe/model.hpp"
#include "support.hpp"

namespace pathe {
namespace {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using testing::make_graph;

// Hand-written count of every weight the architecture owns.
std::size_t expected_parameters(const ModelConfig& c, std::size_t R, Task task) {
  const std::size_t d = c.dim, h = c.projector_width(), ff = c.encoder_ff;
  const std::size_t relation_table = (R + 1) * d;
  const std::size_t positional_table = (2 * c.max_len + 2) * d;
  const std::size_t projector = 2 * (R * h + h + h * d + d) + (2 * d * h + h + h * d + d);
  const std::size_t layer = 2 * 2 * d + 4 * (d * d + d) + (d * ff + ff) + (ff * d + d);
  const std::size_t encoder = c.encoder_layers * layer + 2 * d;
  std::size_t aggregator = 0;
  if (c.aggregator == AggregatorKind::Transformer) {
    aggregator = 2 * d + 2 * d + c.aggregator_layers * layer + 2 * d;
  }
  const std::size_t head = task == Task::RelationPrediction ? 2 * d * R + R : 3 * d + 1;
  return relation_table + positional_table + projector + encoder + aggregator + head;
}

ModelConfig small_config() {
  ModelConfig c;
  c.dim = 8;
  c.paths_per_entity = 2;
  c.max_len = 4;
  c.encoder_heads = 2;
  c.encoder_ff = 16;
  c.dropout = 0.0;
  return c;
}

Path make_path(Direction dir, std::vector<EntityId> ents, std::vector<RelationId> rels) {
  Path p;
  p.direction = dir;
  p.entities = std::move(ents);
  p.relations = std::move(rels);
  p.anchor_pos = dir == Direction::Outgoing ? 0 : p.entities.size() - 1;
  return p;
}

TEST(PositionalIndices, EntityFocusedExample) {
  EXPECT_EQ(positional_indices(10, 4),
            (std::vector<std::size_t>{5, 4, 3, 2, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(positional_indices(3, 0), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(positional_indices(3, 2), (std::vector<std::size_t>{3, 2, 1}));
  EXPECT_EQ(positional_indices(4, 2, PositionalKind::Standard),
            (std::vector<std::size_t>{1, 2, 3, 4}));
}

TEST(PositionalIndices, AnchorIsOneAndDistancesGrow) {
  for (std::size_t n = 1; n < 12; ++n) {
    for (std::size_t a = 0; a < n; ++a) {
      auto pos = positional_indices(n, a);
      EXPECT_EQ(pos[a], 1u);
      for (std::size_t s = 0; s < n; ++s) {
        EXPECT_EQ(pos[s], (s > a ? s - a : a - s) + 1);
      }
    }
  }
}

TEST(PathBatch, LaysOutTokensPositionsAndPadding) {
  auto cfg = small_config();
  std::vector<Path> paths{make_path(Direction::Outgoing, {7, 3}, {1}),
                          make_path(Direction::Incoming, {5, 3, 9}, {0, 2})};
  auto b = build_path_batch(paths, 3, cfg);
  EXPECT_EQ(b.num_slots, 5u);
  EXPECT_EQ(b.unique_entities, (std::vector<EntityId>{7, 3, 5, 9}));
  const std::size_t pad = 4 + 3;
  EXPECT_EQ(b.token_ids, (std::vector<std::size_t>{0, 4 + 1, 1, pad, pad, 2, 4 + 0, 1, 4 + 2, 3}));
  EXPECT_EQ(b.positions, (std::vector<std::size_t>{1, 2, 3, 0, 0, 5, 4, 3, 2, 1}));
  EXPECT_EQ(b.key_mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 1, 1, 1, 1, 1}));
  EXPECT_EQ(b.anchor_slots, (std::vector<std::size_t>{0, 4}));
  EXPECT_EQ(b.kinds[1], SlotKind::Relation);
  EXPECT_EQ(b.kinds[3], SlotKind::Pad);
  auto wide = build_path_batch(paths, 3, cfg, 8);
  EXPECT_EQ(wide.num_slots, 8u);
}

TEST(PathBatch, PositionsClampToTheTable) {
  auto cfg = small_config();
  cfg.max_len = 1;  // max_position 3
  std::vector<Path> paths{make_path(Direction::Outgoing, {0, 1, 2}, {0, 0})};
  auto b = build_path_batch(paths, 1, cfg);
  EXPECT_EQ(b.positions, (std::vector<std::size_t>{1, 2, 3, 3, 3}));
}

TEST(ModelConfig, Validation) {
  auto c = small_config();
  c.encoder_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.paths_per_entity = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(PathE<float>(c, 3, Task::LinkPrediction, 0), std::invalid_argument);
  EXPECT_EQ(small_config().projector_width(), 16u);
}

TEST(PathE, ParameterCountMatchesClosedForm) {
  for (Task task : {Task::RelationPrediction, Task::LinkPrediction}) {
    for (auto agg : {AggregatorKind::Transformer, AggregatorKind::Average}) {
      auto c = small_config();
      c.aggregator = agg;
      c.aggregator_layers = 2;
      PathE<float> model(c, 5, task, 1);
      EXPECT_EQ(model.parameter_count(), expected_parameters(c, 5, task));
    }
  }
  ModelConfig fb;  // defaults: the FB15k-237 link prediction setting
  EXPECT_EQ(PathE<float>(fb, 237, Task::LinkPrediction, 0).parameter_count(),
            expected_parameters(fb, 237, Task::LinkPrediction));
}

TEST(PathE, SameSeedSameWeights) {
  PathE<float> a(small_config(), 4, Task::RelationPrediction, 5);
  PathE<float> b(small_config(), 4, Task::RelationPrediction, 5);
  PathE<float> c(small_config(), 4, Task::RelationPrediction, 6);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value(), b.parameters()[i].value());
  }
  EXPECT_FALSE(a.parameters()[0].value() == c.parameters()[0].value());
  const auto& rel = a.parameters().find("relation_embeddings")->value();
  for (std::size_t col = 0; col < 8; ++col) EXPECT_EQ(rel.at(4, col), 0.0f);
}

class PathEForward : public ::testing::Test {
 protected:
  KnowledgeGraph graph = make_graph(
      6, 3, {{0, 0, 1}, {1, 1, 2}, {2, 2, 3}, {3, 0, 4}, {4, 1, 5}, {5, 2, 0}, {0, 1, 3}});
  std::vector<Path> paths{make_path(Direction::Outgoing, {0, 1, 2}, {0, 1}),
                          make_path(Direction::Incoming, {4, 5}, {1}),
                          make_path(Direction::Outgoing, {3, 4, 5, 0}, {0, 1, 2}),
                          make_path(Direction::Outgoing, {2}, {})};
  PathE<float> model{small_config(), 3, Task::RelationPrediction, 3};

  Tensor<float> anchors(const std::vector<Path>& ps, std::size_t min_slots = 0) {
    Tape<float> tape;
    Rng rng(0);
    auto batch = build_path_batch(ps, 3, model.config(), min_slots);
    return model.encode_paths(tape, graph, batch, false, rng).value();
  }
};

std::vector<float> row(const Tensor<float>& t, std::size_t r) {
  return std::vector<float>(t.data().begin() + r * t.dim(1), t.data().begin() + (r + 1) * t.dim(1));
}

TEST_F(PathEForward, PaddingDoesNotChangeAnchors) {
  auto tight = anchors(paths);
  auto padded = anchors(paths, 12);
  EXPECT_EQ(tight, padded);
}

TEST_F(PathEForward, EachPathIsEncodedIndependently) {
  auto together = anchors(paths);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    auto alone = anchors({paths[i]});
    EXPECT_EQ(row(alone, 0), row(together, i)) << "path " << i;
  }
  auto reordered = anchors({paths[3], paths[1], paths[0]});
  EXPECT_EQ(row(reordered, 0), row(together, 3));
  EXPECT_EQ(row(reordered, 2), row(together, 0));
}

TEST_F(PathEForward, WorksOnGraphsOfAnySizeWithTheSameRelations) {
  auto bigger = make_graph(50, 3, {{0, 0, 1}, {1, 1, 2}, {40, 2, 49}});
  Tape<float> tape;
  Rng rng(0);
  std::vector<Path> ps{make_path(Direction::Outgoing, {40, 49}, {2})};
  auto batch = build_path_batch(ps, 3, model.config());
  EXPECT_EQ(model.encode_paths(tape, bigger, batch, false, rng).shape(), (Shape{1, 8}));
  auto wrong = make_graph(3, 2, {{0, 0, 1}});
  EXPECT_THROW(model.encode_paths(tape, wrong, batch, false, rng), std::invalid_argument);
}

TEST_F(PathEForward, AggregatorIgnoresPathOrderWithinARole) {
  auto a = anchors(paths);
  Tape<float> tape;
  Rng rng(0);
  auto table = tape.constant(a);
  // Groups: {0,1} and {2,3}; swap rows within group 0 by a second table.
  Tensor<float> swapped = a;
  for (std::size_t c = 0; c < 8; ++c) std::swap(swapped.at(0, c), swapped.at(1, c));
  std::vector<std::size_t> h{0}, t{1};
  auto e1 = model.aggregate(tape, table, h, t, false, rng);
  auto e2 = model.aggregate(tape, tape.constant(swapped), h, t, false, rng);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_NEAR(e1.head.value()[c], e2.head.value()[c], 1e-5);
    EXPECT_NEAR(e1.tail.value()[c], e2.tail.value()[c], 1e-5);
  }
  // Swapping head and tail sets is not a symmetry.
  auto e3 = model.aggregate(tape, table, t, h, false, rng);
  EXPECT_FALSE(e3.head.value() == e1.tail.value());
}

TEST_F(PathEForward, AverageAggregatorIsTheMean) {
  auto cfg = small_config();
  cfg.aggregator = AggregatorKind::Average;
  PathE<float> avg(cfg, 3, Task::RelationPrediction, 3);
  Tape<float> tape;
  Rng rng(0);
  Tensor<float> a(Shape{4, 8});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(i);
  std::vector<std::size_t> h{1}, t{0};
  auto e = avg.aggregate(tape, tape.constant(a), h, t, false, rng);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_FLOAT_EQ(e.head.value()[c], (a.at(2, c) + a.at(3, c)) / 2);
    EXPECT_FLOAT_EQ(e.tail.value()[c], (a.at(0, c) + a.at(1, c)) / 2);
  }
}

TEST_F(PathEForward, HeadsHaveTheRightShapes) {
  Tape<float> tape;
  Rng rng(0);
  auto table = tape.constant(anchors(paths));
  std::vector<std::size_t> h{0, 1}, t{1, 0};
  auto emb = model.aggregate(tape, table, h, t, false, rng);
  EXPECT_EQ(model.rp_scores(tape, emb).shape(), (Shape{2, 3}));
  std::vector<RelationId> rels{0, 2};
  EXPECT_THROW(model.lp_logits(tape, emb, rels), std::logic_error);
  PathE<float> lp(small_config(), 3, Task::LinkPrediction, 3);
  auto emb2 = lp.aggregate(tape, table, h, t, false, rng);
  EXPECT_EQ(lp.lp_logits(tape, emb2, rels).shape(), (Shape{2, 1}));
  std::vector<RelationId> bad{0, 3};
  EXPECT_THROW(lp.lp_logits(tape, emb2, bad), std::invalid_argument);
}

TEST_F(PathEForward, StandardPositionalsChangeTheEncoding) {
  auto cfg = small_config();
  cfg.positional = PositionalKind::Standard;
  PathE<float> standard(cfg, 3, Task::RelationPrediction, 3);
  Tape<float> tape;
  Rng rng(0);
  // Same weights; only the position ids differ, and only on incoming paths.
  ad::restore(standard.parameters(), ad::snapshot(model.parameters()));
  std::vector<Path> ps{paths[1]};
  auto b1 = build_path_batch(ps, 3, model.config());
  auto b2 = build_path_batch(ps, 3, cfg);
  EXPECT_NE(b1.positions, b2.positions);
  auto x1 = model.encode_paths(tape, graph, b1, false, rng).value();
  auto x2 = standard.encode_paths(tape, graph, b2, false, rng).value();
  EXPECT_FALSE(x1 == x2);
}

}  // namespace
}  // namespace pathe
