#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pathe/kg.hpp"
#include "pathe/rng.hpp"

namespace pathe {

enum class Direction : std::uint8_t { Outgoing, Incoming };

// Loop-free entity/relation walk stored head-to-tail. Outgoing paths start at
// their anchor, incoming paths end at it. A path with no relations is the
// singleton used for entities without any mined path.
struct Path {
  Direction direction = Direction::Outgoing;
  std::vector<EntityId> entities;
  std::vector<RelationId> relations;
  std::size_t anchor_pos = 0;

  EntityId anchor() const { return entities.at(anchor_pos); }
  std::size_t num_relations() const noexcept { return relations.size(); }
  // Number of interleaved entity/relation slots (2k+1).
  std::size_t num_slots() const noexcept { return entities.size() + relations.size(); }

  bool operator==(const Path&) const = default;
  auto operator<=>(const Path&) const = default;
};

Path singleton_path(EntityId entity);

struct MiningParams {
  std::size_t num_paths = 16;
  std::size_t max_len = 20;
  std::uint64_t seed = 0;

  bool operator==(const MiningParams&) const = default;
};

class PathCorpus {
 public:
  PathCorpus() = default;
  PathCorpus(MiningParams params, std::vector<std::vector<Path>> per_entity)
      : params_(params), per_entity_(std::move(per_entity)) {}

  const MiningParams& params() const noexcept { return params_; }
  // Entities beyond the stored range have no paths.
  std::span<const Path> paths_of(EntityId entity) const {
    if (entity >= per_entity_.size()) return {};
    return per_entity_[entity];
  }
  std::size_t num_entities() const noexcept { return per_entity_.size(); }
  std::size_t total_paths() const;
  // Fraction of the given entities that own at least one path.
  double coverage(std::span<const EntityId> entities) const;

  // Equal parameters and equal path lists, treating missing entries as empty.
  bool operator==(const PathCorpus& other) const;

 private:
  MiningParams params_;
  std::vector<std::vector<Path>> per_entity_;
};

// Samples one random walk from `entity` in the given direction. The result
// may be the singleton path when no admissible edge exists.
Path random_walk(const KnowledgeGraph& kg, EntityId entity, Direction direction,
                 std::size_t max_len, Rng& rng);

// Up to `n` unique loop-free paths anchored at `entity`; direction is drawn
// per walk with probability 1/2. Gives up after 10*n attempts.
std::vector<Path> mine_entity(const KnowledgeGraph& kg, EntityId entity, std::size_t n,
                              std::size_t max_len, Rng& rng);

// Mines every entity with its own RNG stream, so output does not depend on
// `workers`.
PathCorpus mine_all(const KnowledgeGraph& kg, const MiningParams& params,
                    std::size_t workers = 1);

// `ppe` paths for one entity: without replacement when enough exist, with
// replacement when fewer do, singleton copies when none do.
std::vector<Path> sample_entity_paths(const PathCorpus& corpus, EntityId entity,
                                      std::size_t ppe, Rng& rng);

std::pair<std::vector<Path>, std::vector<Path>> sample_for_triple(const PathCorpus& corpus,
                                                                  const Triple& triple,
                                                                  std::size_t ppe, Rng& rng);

class CorpusFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_corpus(const PathCorpus& corpus, const std::filesystem::path& path);
PathCorpus load_corpus(const std::filesystem::path& path);

}  // namespace pathe
