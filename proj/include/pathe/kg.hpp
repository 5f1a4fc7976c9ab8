#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace pathe {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId rel = 0;
  EntityId tail = 0;

  auto operator<=>(const Triple&) const = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t h = (std::uint64_t{t.head} << 32) ^ t.tail;
    h ^= std::uint64_t{t.rel} * 0x9E3779B97F4A7C15ULL;
    h ^= h >> 29;
    h *= 0xBF58476D1CE4E5B9ULL;
    return static_cast<std::size_t>(h ^ (h >> 32));
  }
};

// Input files that cannot be interpreted. Carries the offending line when known.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Dense string <-> id bijection; ids are assigned in insertion order.
class Vocabulary {
 public:
  std::uint32_t add(const std::string& name);
  std::optional<std::uint32_t> find(const std::string& name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

// Incoming and outgoing relation counts of one entity, stored sparsely and
// sorted by relation id.
struct RelationalContext {
  std::vector<std::pair<RelationId, std::uint32_t>> in_counts;
  std::vector<std::pair<RelationId, std::uint32_t>> out_counts;

  std::vector<std::uint32_t> dense_in(std::size_t num_relations) const;
  std::vector<std::uint32_t> dense_out(std::size_t num_relations) const;
  std::uint64_t in_degree() const;
  std::uint64_t out_degree() const;

  bool operator==(const RelationalContext&) const = default;
};

// One adjacency entry: the relation and the entity at the other end.
struct Edge {
  RelationId rel;
  EntityId other;
};

// Immutable after construction. Adjacency and relational contexts are built
// from the train split only; the membership index covers every split.
class KnowledgeGraph {
 public:
  KnowledgeGraph(Vocabulary entities, Vocabulary relations,
                 std::vector<Triple> train, std::vector<Triple> valid,
                 std::vector<Triple> test);

  const Vocabulary& entities() const noexcept { return entities_; }
  const Vocabulary& relations() const noexcept { return relations_; }
  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }

  std::span<const Triple> train() const noexcept { return train_; }
  std::span<const Triple> valid() const noexcept { return valid_; }
  std::span<const Triple> test() const noexcept { return test_; }

  // Outgoing train edges (rel, tail) of `entity`.
  std::span<const Edge> out_edges(EntityId entity) const;
  // Incoming train edges (rel, head) of `entity`.
  std::span<const Edge> in_edges(EntityId entity) const;

  const RelationalContext& context(EntityId entity) const {
    return contexts_.at(entity);
  }

  // True-set membership over all loaded splits.
  bool contains(const Triple& t) const { return true_set_.contains(t); }

 private:
  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> train_, valid_, test_;
  std::vector<std::size_t> out_offsets_, in_offsets_;
  std::vector<Edge> out_edges_, in_edges_;
  std::vector<RelationalContext> contexts_;
  std::unordered_set<Triple, TripleHash> true_set_;
};

// Reads three TSV split files. Vocabularies follow first appearance over
// train, then valid, then test. When `fixed_relations` is given, relation ids
// are taken from it and any relation missing from it is a DataError.
KnowledgeGraph load_tsv(const std::filesystem::path& train_path,
                        const std::filesystem::path& valid_path,
                        const std::filesystem::path& test_path,
                        const Vocabulary* fixed_relations = nullptr);

RelationalContext relational_context(const KnowledgeGraph& kg, EntityId entity);

// Distinct (in_counts, out_counts) pairs divided by |E|.
double unique_context_ratio(const KnowledgeGraph& kg);

struct RelationFrequency {
  RelationId rel;
  std::uint64_t count;
  double percent;
};

struct StructuralReport {
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::size_t num_train = 0, num_valid = 0, num_test = 0;
  std::vector<RelationFrequency> relation_frequencies;  // descending count
  double average_degree = 0.0;
  double unique_context_ratio = 0.0;
};

StructuralReport structural_report(const KnowledgeGraph& kg);
void write_report_text(std::ostream& os, const StructuralReport& report,
                       const KnowledgeGraph& kg);
// CSV with header `relation_id,count,percent`.
void write_report_csv(std::ostream& os, const StructuralReport& report);

}  // namespace pathe
