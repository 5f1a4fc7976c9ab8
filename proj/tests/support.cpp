#include "support.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "pathe/rng.hpp"

namespace pathe::testing {

KnowledgeGraph make_graph(std::size_t num_entities, std::size_t num_relations,
                          std::vector<Triple> train, std::vector<Triple> valid,
                          std::vector<Triple> test) {
  Vocabulary entities, relations;
  for (std::size_t i = 0; i < num_entities; ++i) entities.add("e" + std::to_string(i));
  for (std::size_t i = 0; i < num_relations; ++i) relations.add("r" + std::to_string(i));
  return KnowledgeGraph(std::move(entities), std::move(relations), std::move(train),
                        std::move(valid), std::move(test));
}

KnowledgeGraph random_graph(std::size_t num_entities, std::size_t num_relations,
                            std::size_t num_triples, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<EntityId> ent(0, static_cast<EntityId>(num_entities - 1));
  std::uniform_int_distribution<RelationId> rel(0, static_cast<RelationId>(num_relations - 1));
  std::set<Triple> seen;
  std::vector<Triple> train;
  while (train.size() < num_triples) {
    Triple t{ent(rng), rel(rng), ent(rng)};
    if (t.head == t.tail || !seen.insert(t).second) continue;
    train.push_back(t);
  }
  return make_graph(num_entities, num_relations, std::move(train));
}

KnowledgeGraph class_graph(std::size_t num_entities, std::size_t classes,
                           std::size_t num_relations, std::size_t num_triples,
                           std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<EntityId> ent(0, static_cast<EntityId>(num_entities - 1));
  std::set<std::pair<EntityId, EntityId>> seen;
  std::vector<Triple> all;
  while (all.size() < num_triples) {
    const EntityId h = ent(rng), t = ent(rng);
    if (h == t || !seen.insert({h, t}).second) continue;
    const auto rel = static_cast<RelationId>((2 * (h % classes) + t % classes) % num_relations);
    all.push_back({h, rel, t});
  }
  const std::size_t n_train = num_triples * 8 / 10;
  const std::size_t n_valid = num_triples / 10;
  std::vector<Triple> train(all.begin(), all.begin() + n_train);
  std::vector<Triple> valid(all.begin() + n_train, all.begin() + n_train + n_valid);
  std::vector<Triple> test(all.begin() + n_train + n_valid, all.end());
  return make_graph(num_entities, num_relations, std::move(train), std::move(valid),
                    std::move(test));
}

void write_tsv(const std::filesystem::path& path, const KnowledgeGraph& graph,
               std::span<const Triple> triples) {
  std::ofstream out(path);
  for (const Triple& t : triples) {
    out << graph.entities().name(t.head) << '\t' << graph.relations().name(t.rel) << '\t'
        << graph.entities().name(t.tail) << '\n';
  }
}

void write_splits(const std::filesystem::path& dir, const KnowledgeGraph& graph) {
  std::filesystem::create_directories(dir);
  write_tsv(dir / "train.txt", graph, graph.train());
  write_tsv(dir / "valid.txt", graph, graph.valid());
  write_tsv(dir / "test.txt", graph, graph.test());
}

namespace {

void walk_dfs(const KnowledgeGraph& graph, Direction direction, std::size_t max_len,
              std::vector<EntityId>& walk, std::vector<RelationId>& rels, std::set<Path>& out) {
  const EntityId current = walk.back();
  auto edges = direction == Direction::Outgoing ? graph.out_edges(current) : graph.in_edges(current);
  bool extended = false;
  if (rels.size() < max_len) {
    for (const Edge& e : edges) {
      if (std::find(walk.begin(), walk.end(), e.other) != walk.end()) continue;
      extended = true;
      walk.push_back(e.other);
      rels.push_back(e.rel);
      walk_dfs(graph, direction, max_len, walk, rels, out);
      walk.pop_back();
      rels.pop_back();
    }
  }
  if (!extended) {
    Path p;
    p.direction = direction;
    p.entities = walk;
    p.relations = rels;
    if (direction == Direction::Incoming) {
      std::reverse(p.entities.begin(), p.entities.end());
      std::reverse(p.relations.begin(), p.relations.end());
      p.anchor_pos = p.entities.size() - 1;
    }
    out.insert(std::move(p));
  }
}

}  // namespace

std::set<Path> enumerate_walks(const KnowledgeGraph& graph, EntityId entity, Direction direction,
                               std::size_t max_len) {
  std::set<Path> out;
  std::vector<EntityId> walk{entity};
  std::vector<RelationId> rels;
  walk_dfs(graph, direction, max_len, walk, rels, out);
  return out;
}

std::string path_defect(const KnowledgeGraph& graph, const Path& path, EntityId anchor,
                        std::size_t max_len) {
  if (path.entities.size() != path.relations.size() + 1) return "entity/relation count mismatch";
  if (path.relations.empty() || path.relations.size() > max_len) return "bad length";
  if (path.anchor() != anchor) return "wrong anchor";
  const std::size_t expected_pos = path.direction == Direction::Outgoing ? 0 : path.entities.size() - 1;
  if (path.anchor_pos != expected_pos) return "anchor at the wrong end";
  std::set<EntityId> distinct(path.entities.begin(), path.entities.end());
  if (distinct.size() != path.entities.size()) return "repeated entity";
  for (std::size_t i = 0; i < path.relations.size(); ++i) {
    if (!graph.contains({path.entities[i], path.relations[i], path.entities[i + 1]})) {
      return "edge not in graph";
    }
  }
  return {};
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pathe_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double sorted_rank(double truth, std::vector<double> others) {
  others.push_back(truth);
  std::sort(others.begin(), others.end(), std::greater<>());
  std::size_t first = 0;
  while (others[first] != truth) ++first;
  std::size_t last = first;
  while (last + 1 < others.size() && others[last + 1] == truth) ++last;
  return (static_cast<double>(first + 1) + static_cast<double>(last + 1)) / 2.0;
}

namespace {

TripleEmbeddings<float> embed_one(ad::Tape<float>& tape, const ModelScorer& scorer,
                                  const Triple& t) {
  const auto& model = scorer.model();
  std::vector<Path> paths;
  for (EntityId e : {t.head, t.tail}) {
    auto ps = scorer.entity_paths(e);
    paths.insert(paths.end(), ps.begin(), ps.end());
  }
  Rng rng(0);
  auto batch = build_path_batch(paths, model.num_relations(), model.config());
  auto anchors = model.encode_paths(tape, scorer.graph(), batch, false, rng);
  std::vector<std::size_t> h{0}, tl{1};
  return model.aggregate(tape, anchors, h, tl, false, rng);
}

}  // namespace

float oracle_lp_score(const ModelScorer& scorer, const Triple& triple) {
  ad::Tape<float> tape;
  auto emb = embed_one(tape, scorer, triple);
  std::vector<RelationId> r{triple.rel};
  return scorer.model().lp_logits(tape, emb, r).value()[0];
}

std::vector<float> oracle_rp_scores(const ModelScorer& scorer, const Triple& triple) {
  ad::Tape<float> tape;
  auto emb = embed_one(tape, scorer, triple);
  auto s = scorer.model().rp_scores(tape, emb).value();
  return std::vector<float>(s.data().begin(), s.data().end());
}

std::vector<double> oracle_lp_ranks(const ModelScorer& scorer, std::span<const Triple> triples) {
  const auto& graph = scorer.graph();
  std::vector<double> ranks;
  for (const Triple& t : triples) {
    const double truth = oracle_lp_score(scorer, t);
    for (bool head_side : {true, false}) {
      std::vector<double> others;
      for (EntityId e = 0; e < graph.num_entities(); ++e) {
        Triple c = t;
        (head_side ? c.head : c.tail) = e;
        if (c == t || graph.contains(c)) continue;
        others.push_back(oracle_lp_score(scorer, c));
      }
      ranks.push_back(sorted_rank(truth, others));
    }
  }
  return ranks;
}

std::vector<double> oracle_rp_ranks(const ModelScorer& scorer, std::span<const Triple> triples) {
  const auto& graph = scorer.graph();
  std::vector<double> ranks;
  for (const Triple& t : triples) {
    auto scores = oracle_rp_scores(scorer, t);
    std::vector<double> others;
    for (RelationId r = 0; r < graph.num_relations(); ++r) {
      if (r != t.rel && !graph.contains({t.head, r, t.tail})) others.push_back(scores[r]);
    }
    ranks.push_back(sorted_rank(scores[t.rel], others));
  }
  return ranks;
}

}  // namespace pathe::testing
