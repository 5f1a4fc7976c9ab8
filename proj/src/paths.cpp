#include "pathe/paths.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace pathe {

Path singleton_path(EntityId entity) {
  Path p;
  p.direction = Direction::Outgoing;
  p.entities = {entity};
  p.anchor_pos = 0;
  return p;
}

std::size_t PathCorpus::total_paths() const {
  std::size_t total = 0;
  for (const auto& paths : per_entity_) total += paths.size();
  return total;
}

double PathCorpus::coverage(std::span<const EntityId> entities) const {
  if (entities.empty()) return 1.0;
  std::size_t covered = 0;
  for (EntityId e : entities) covered += paths_of(e).empty() ? 0 : 1;
  return static_cast<double>(covered) / static_cast<double>(entities.size());
}

bool PathCorpus::operator==(const PathCorpus& other) const {
  if (params_ != other.params_) return false;
  const std::size_t n = std::max(num_entities(), other.num_entities());
  for (EntityId e = 0; e < n; ++e) {
    auto a = paths_of(e);
    auto b = other.paths_of(e);
    if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) return false;
  }
  return true;
}

Path random_walk(const KnowledgeGraph& kg, EntityId entity, Direction direction,
                 std::size_t max_len, Rng& rng) {
  std::vector<EntityId> walk{entity};
  std::vector<RelationId> rels;
  std::unordered_set<EntityId> visited{entity};
  std::vector<Edge> admissible;
  EntityId current = entity;
  while (rels.size() < max_len) {
    auto edges =
        direction == Direction::Outgoing ? kg.out_edges(current) : kg.in_edges(current);
    admissible.clear();
    for (const Edge& e : edges) {
      if (!visited.contains(e.other)) admissible.push_back(e);
    }
    if (admissible.empty()) break;
    std::uniform_int_distribution<std::size_t> pick(0, admissible.size() - 1);
    const Edge& next = admissible[pick(rng)];
    rels.push_back(next.rel);
    walk.push_back(next.other);
    visited.insert(next.other);
    current = next.other;
  }

  Path p;
  p.direction = direction;
  if (direction == Direction::Incoming) {
    // Walked against edge direction; store head-to-tail with the anchor last.
    std::reverse(walk.begin(), walk.end());
    std::reverse(rels.begin(), rels.end());
    p.anchor_pos = walk.size() - 1;
  }
  p.entities = std::move(walk);
  p.relations = std::move(rels);
  return p;
}

std::vector<Path> mine_entity(const KnowledgeGraph& kg, EntityId entity, std::size_t n,
                              std::size_t max_len, Rng& rng) {
  std::vector<Path> paths;
  if (n == 0 || max_len == 0) return paths;
  if (kg.out_edges(entity).empty() && kg.in_edges(entity).empty()) return paths;
  std::set<Path> seen;
  const std::size_t budget = 10 * n;
  for (std::size_t attempt = 0; attempt < budget && paths.size() < n; ++attempt) {
    const Direction dir = (rng() >> 63) == 0 ? Direction::Outgoing : Direction::Incoming;
    Path p = random_walk(kg, entity, dir, max_len, rng);
    if (p.relations.empty()) continue;
    if (seen.insert(p).second) paths.push_back(std::move(p));
  }
  return paths;
}

PathCorpus mine_all(const KnowledgeGraph& kg, const MiningParams& params,
                    std::size_t workers) {
  const std::size_t n_entities = kg.num_entities();
  std::vector<std::vector<Path>> per_entity(n_entities);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t e = next++; e < n_entities; e = next++) {
      Rng rng = stream_rng(params.seed, e);
      per_entity[e] = mine_entity(kg, static_cast<EntityId>(e), params.num_paths,
                                  params.max_len, rng);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n_entities));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
  }
  return PathCorpus(params, std::move(per_entity));
}

std::vector<Path> sample_entity_paths(const PathCorpus& corpus, EntityId entity,
                                      std::size_t ppe, Rng& rng) {
  auto available = corpus.paths_of(entity);
  std::vector<Path> out;
  out.reserve(ppe);
  if (available.empty()) {
    out.assign(ppe, singleton_path(entity));
  } else if (available.size() >= ppe) {
    std::vector<std::size_t> idx(available.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < ppe; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(available[idx[i]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, available.size() - 1);
    for (std::size_t i = 0; i < ppe; ++i) out.push_back(available[pick(rng)]);
  }
  return out;
}

std::pair<std::vector<Path>, std::vector<Path>> sample_for_triple(const PathCorpus& corpus,
                                                                  const Triple& triple,
                                                                  std::size_t ppe, Rng& rng) {
  auto head = sample_entity_paths(corpus, triple.head, ppe, rng);
  auto tail = sample_entity_paths(corpus, triple.tail, ppe, rng);
  return {std::move(head), std::move(tail)};
}

namespace {

constexpr const char* kCorpusMagic = "pathe-corpus";
constexpr const char* kCorpusVersion = "v1";

template <typename Int>
Int parse_int(std::string_view token, std::size_t line_no) {
  Int value{};
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw CorpusFormatError(
        fmt::format("corpus line {}: invalid integer '{}'", line_no, token));
  }
  return value;
}

std::uint64_t parse_header_field(const std::string& token, std::string_view key) {
  if (token.rfind(key, 0) != 0 || token.size() <= key.size() || token[key.size()] != '=') {
    throw CorpusFormatError(fmt::format("corpus header: expected {}=<value>, got '{}'", key,
                                        token));
  }
  return parse_int<std::uint64_t>(std::string_view(token).substr(key.size() + 1), 1);
}

}  // namespace

void save_corpus(const PathCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  const auto& p = corpus.params();
  out << fmt::format("{} {} n={} max_len={} seed={}\n", kCorpusMagic, kCorpusVersion,
                     p.num_paths, p.max_len, p.seed);
  std::string line;
  for (EntityId e = 0; e < corpus.num_entities(); ++e) {
    for (const Path& path : corpus.paths_of(e)) {
      line.clear();
      fmt::format_to(std::back_inserter(line), "{} {}", e,
                     path.direction == Direction::Outgoing ? 'O' : 'I');
      for (std::size_t i = 0; i < path.entities.size(); ++i) {
        fmt::format_to(std::back_inserter(line), " {}", path.entities[i]);
        if (i < path.relations.size()) {
          fmt::format_to(std::back_inserter(line), " {}", path.relations[i]);
        }
      }
      line.push_back('\n');
      out << line;
    }
  }
  if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

PathCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusFormatError(fmt::format("cannot open corpus {}", path.string()));
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (content.empty() || content.back() != '\n') {
    throw CorpusFormatError(fmt::format("corpus {} is truncated", path.string()));
  }

  std::istringstream lines(content);
  std::string header;
  std::getline(lines, header);
  std::istringstream hs(header);
  std::string magic, version, n_tok, len_tok, seed_tok, extra;
  hs >> magic >> version >> n_tok >> len_tok >> seed_tok;
  if (magic != kCorpusMagic) {
    throw CorpusFormatError(fmt::format("{} is not a path corpus", path.string()));
  }
  if (version != kCorpusVersion) {
    throw CorpusFormatError(
        fmt::format("corpus version mismatch: expected {}, found '{}'", kCorpusVersion, version));
  }
  if (hs >> extra) throw CorpusFormatError("corpus header: unexpected trailing fields");
  MiningParams params;
  params.num_paths = parse_header_field(n_tok, "n");
  params.max_len = parse_header_field(len_tok, "max_len");
  params.seed = parse_header_field(seed_tok, "seed");

  std::vector<std::vector<Path>> per_entity;
  std::string line;
  std::size_t line_no = 1;
  std::vector<std::string_view> tokens;
  while (std::getline(lines, line)) {
    ++line_no;
    tokens.clear();
    std::string_view rest(line);
    while (!rest.empty()) {
      auto space = rest.find(' ');
      auto tok = rest.substr(0, space);
      if (!tok.empty()) tokens.push_back(tok);
      if (space == std::string_view::npos) break;
      rest.remove_prefix(space + 1);
    }
    if (tokens.size() < 3 || (tokens.size() - 2) % 2 == 0) {
      throw CorpusFormatError(fmt::format("corpus line {}: malformed path record", line_no));
    }
    const auto anchor = parse_int<EntityId>(tokens[0], line_no);
    Path p;
    if (tokens[1] == "O") {
      p.direction = Direction::Outgoing;
    } else if (tokens[1] == "I") {
      p.direction = Direction::Incoming;
    } else {
      throw CorpusFormatError(
          fmt::format("corpus line {}: direction must be O or I, got '{}'", line_no, tokens[1]));
    }
    for (std::size_t i = 2; i < tokens.size(); ++i) {
      if ((i - 2) % 2 == 0) {
        p.entities.push_back(parse_int<EntityId>(tokens[i], line_no));
      } else {
        p.relations.push_back(parse_int<RelationId>(tokens[i], line_no));
      }
    }
    p.anchor_pos = p.direction == Direction::Outgoing ? 0 : p.entities.size() - 1;
    if (p.entities[p.anchor_pos] != anchor) {
      throw CorpusFormatError(
          fmt::format("corpus line {}: anchor {} is not at the path's anchor position",
                      line_no, anchor));
    }
    if (anchor >= per_entity.size()) per_entity.resize(anchor + 1);
    per_entity[anchor].push_back(std::move(p));
  }
  return PathCorpus(params, std::move(per_entity));
}

}  // namespace pathe
