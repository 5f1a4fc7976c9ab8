#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "pathe/evaluation.hpp"
#include "pathe/kg.hpp"
#include "pathe/paths.hpp"

namespace pathe::testing {

// Graph over entities e0..e{n-1} and relations r0..r{m-1}.
KnowledgeGraph make_graph(std::size_t num_entities, std::size_t num_relations,
                          std::vector<Triple> train, std::vector<Triple> valid = {},
                          std::vector<Triple> test = {});

// Uniform random graph with `num_triples` distinct train triples and no
// self loops.
KnowledgeGraph random_graph(std::size_t num_entities, std::size_t num_relations,
                            std::size_t num_triples, std::uint64_t seed);

// Entities fall into `classes` classes (entity e has class e % classes);
// the relation of (h, t) is (2 * class(h) + class(t)) % num_relations.
// Triples are split 80/10/10.
KnowledgeGraph class_graph(std::size_t num_entities, std::size_t classes,
                           std::size_t num_relations, std::size_t num_triples,
                           std::uint64_t seed);

void write_tsv(const std::filesystem::path& path, const KnowledgeGraph& graph,
               std::span<const Triple> triples);

// Writes train/valid/test files for `graph` into `dir`.
void write_splits(const std::filesystem::path& dir, const KnowledgeGraph& graph);

// Every path a random walk from `entity` in `direction` can return:
// loop-free, at most max_len relations, and either of full length or ending
// where no unvisited neighbour remains. Enumerated by depth-first search.
std::set<Path> enumerate_walks(const KnowledgeGraph& graph, EntityId entity, Direction direction,
                               std::size_t max_len);

// Structural checks on one mined path; returns an empty string when sound.
std::string path_defect(const KnowledgeGraph& graph, const Path& path, EntityId anchor,
                        std::size_t max_len);

// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& name);

std::string read_file(const std::filesystem::path& path);

// Rank of `truth` found by sorting all scores in descending order and
// averaging the positions of the tied block it sits in.
double sorted_rank(double truth, std::vector<double> others);

// Scores computed one triple at a time with a fresh forward pass over the
// scorer's path sets, with no batching shared between triples.
float oracle_lp_score(const ModelScorer& scorer, const Triple& triple);
std::vector<float> oracle_rp_scores(const ModelScorer& scorer, const Triple& triple);

// Filtered ranks from the oracle scores above, by brute force over every
// candidate, in the order lp_ranks / rp_ranks return them.
std::vector<double> oracle_lp_ranks(const ModelScorer& scorer, std::span<const Triple> triples);
std::vector<double> oracle_rp_ranks(const ModelScorer& scorer, std::span<const Triple> triples);

}  // namespace pathe::testing
