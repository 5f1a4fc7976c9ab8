#include "pathe/kg.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

namespace pathe {

std::uint32_t Vocabulary::add(const std::string& name) {
  auto [it, inserted] =
      ids_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

std::optional<std::uint32_t> Vocabulary::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::vector<std::uint32_t> densify(
    const std::vector<std::pair<RelationId, std::uint32_t>>& sparse,
    std::size_t num_relations) {
  std::vector<std::uint32_t> dense(num_relations, 0);
  for (auto [rel, count] : sparse) dense.at(rel) = count;
  return dense;
}

std::uint64_t total(const std::vector<std::pair<RelationId, std::uint32_t>>& sparse) {
  std::uint64_t sum = 0;
  for (const auto& entry : sparse) sum += entry.second;
  return sum;
}

}  // namespace

std::vector<std::uint32_t> RelationalContext::dense_in(std::size_t num_relations) const {
  return densify(in_counts, num_relations);
}

std::vector<std::uint32_t> RelationalContext::dense_out(std::size_t num_relations) const {
  return densify(out_counts, num_relations);
}

std::uint64_t RelationalContext::in_degree() const { return total(in_counts); }
std::uint64_t RelationalContext::out_degree() const { return total(out_counts); }

KnowledgeGraph::KnowledgeGraph(Vocabulary entities, Vocabulary relations,
                               std::vector<Triple> train, std::vector<Triple> valid,
                               std::vector<Triple> test)
    : entities_(std::move(entities)),
      relations_(std::move(relations)),
      train_(std::move(train)),
      valid_(std::move(valid)),
      test_(std::move(test)) {
  const std::size_t n = entities_.size();
  for (const auto* split : {&train_, &valid_, &test_}) {
    for (const Triple& t : *split) {
      if (t.head >= n || t.tail >= n || t.rel >= relations_.size()) {
        throw DataError(fmt::format("triple ({}, {}, {}) out of vocabulary range", t.head,
                                    t.rel, t.tail));
      }
      true_set_.insert(t);
    }
  }

  // CSR adjacency over the train split; edges keep file order per entity.
  out_offsets_.assign(n + 1, 0);
  in_offsets_.assign(n + 1, 0);
  for (const Triple& t : train_) {
    ++out_offsets_[t.head + 1];
    ++in_offsets_[t.tail + 1];
  }
  std::partial_sum(out_offsets_.begin(), out_offsets_.end(), out_offsets_.begin());
  std::partial_sum(in_offsets_.begin(), in_offsets_.end(), in_offsets_.begin());
  out_edges_.resize(train_.size());
  in_edges_.resize(train_.size());
  std::vector<std::size_t> out_fill(out_offsets_.begin(), out_offsets_.end() - 1);
  std::vector<std::size_t> in_fill(in_offsets_.begin(), in_offsets_.end() - 1);
  for (const Triple& t : train_) {
    out_edges_[out_fill[t.head]++] = Edge{t.rel, t.tail};
    in_edges_[in_fill[t.tail]++] = Edge{t.rel, t.head};
  }

  contexts_.resize(n);
  std::map<RelationId, std::uint32_t> counts;
  for (EntityId e = 0; e < n; ++e) {
    counts.clear();
    for (const Edge& edge : out_edges(e)) ++counts[edge.rel];
    contexts_[e].out_counts.assign(counts.begin(), counts.end());
    counts.clear();
    for (const Edge& edge : in_edges(e)) ++counts[edge.rel];
    contexts_[e].in_counts.assign(counts.begin(), counts.end());
  }
}

std::span<const Edge> KnowledgeGraph::out_edges(EntityId entity) const {
  return {out_edges_.data() + out_offsets_.at(entity),
          out_edges_.data() + out_offsets_.at(entity + 1)};
}

std::span<const Edge> KnowledgeGraph::in_edges(EntityId entity) const {
  return {in_edges_.data() + in_offsets_.at(entity),
          in_edges_.data() + in_offsets_.at(entity + 1)};
}

namespace {

struct RawTriple {
  std::string head, rel, tail;
};

std::vector<RawTriple> read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::vector<RawTriple> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw DataError(fmt::format("{}:{}: expected 3 tab-separated fields, found {}",
                                  path.string(), line_no, fields.size()),
                      line_no);
    }
    rows.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  return rows;
}

}  // namespace

KnowledgeGraph load_tsv(const std::filesystem::path& train_path,
                        const std::filesystem::path& valid_path,
                        const std::filesystem::path& test_path,
                        const Vocabulary* fixed_relations) {
  auto train_raw = read_split(train_path);
  if (train_raw.empty()) {
    throw DataError(fmt::format("{}: train split is empty", train_path.string()));
  }
  auto valid_raw = read_split(valid_path);
  auto test_raw = read_split(test_path);

  Vocabulary entities;
  Vocabulary relations = fixed_relations ? *fixed_relations : Vocabulary{};
  auto convert = [&](const std::vector<RawTriple>& raw, const std::filesystem::path& path) {
    std::vector<Triple> out;
    out.reserve(raw.size());
    for (const RawTriple& r : raw) {
      Triple t;
      t.head = entities.add(r.head);
      if (fixed_relations) {
        auto id = relations.find(r.rel);
        if (!id) {
          throw DataError(fmt::format("{}: relation '{}' is not in the training vocabulary",
                                      path.string(), r.rel));
        }
        t.rel = *id;
      } else {
        t.rel = relations.add(r.rel);
      }
      t.tail = entities.add(r.tail);
      out.push_back(t);
    }
    return out;
  };
  auto train = convert(train_raw, train_path);
  auto valid = convert(valid_raw, valid_path);
  auto test = convert(test_raw, test_path);
  return KnowledgeGraph(std::move(entities), std::move(relations), std::move(train),
                        std::move(valid), std::move(test));
}

RelationalContext relational_context(const KnowledgeGraph& kg, EntityId entity) {
  return kg.context(entity);
}

double unique_context_ratio(const KnowledgeGraph& kg) {
  if (kg.num_entities() == 0) return 0.0;
  std::set<std::pair<std::vector<std::pair<RelationId, std::uint32_t>>,
                     std::vector<std::pair<RelationId, std::uint32_t>>>>
      distinct;
  for (EntityId e = 0; e < kg.num_entities(); ++e) {
    const auto& ctx = kg.context(e);
    distinct.emplace(ctx.in_counts, ctx.out_counts);
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(kg.num_entities());
}

StructuralReport structural_report(const KnowledgeGraph& kg) {
  StructuralReport report;
  report.num_entities = kg.num_entities();
  report.num_relations = kg.num_relations();
  report.num_train = kg.train().size();
  report.num_valid = kg.valid().size();
  report.num_test = kg.test().size();

  std::vector<std::uint64_t> counts(kg.num_relations(), 0);
  for (const Triple& t : kg.train()) ++counts[t.rel];
  const double n_train = static_cast<double>(report.num_train);
  for (RelationId r = 0; r < counts.size(); ++r) {
    report.relation_frequencies.push_back(
        {r, counts[r], n_train > 0 ? 100.0 * static_cast<double>(counts[r]) / n_train : 0.0});
  }
  std::stable_sort(report.relation_frequencies.begin(), report.relation_frequencies.end(),
                   [](const RelationFrequency& a, const RelationFrequency& b) {
                     return a.count > b.count;
                   });
  report.average_degree =
      report.num_entities > 0 ? 2.0 * n_train / static_cast<double>(report.num_entities) : 0.0;
  report.unique_context_ratio = unique_context_ratio(kg);
  return report;
}

void write_report_text(std::ostream& os, const StructuralReport& report,
                       const KnowledgeGraph& kg) {
  os << fmt::format("#Ent {}\n#Rel {}\n#Train {}\n#Valid {}\n#Test {}\n", report.num_entities,
                    report.num_relations, report.num_train, report.num_valid, report.num_test);
  os << fmt::format("average degree {:.2f}\n", report.average_degree);
  os << fmt::format("unique relational contexts {:.4f}\n", report.unique_context_ratio);
  os << fmt::format("{:>8}  {:>10}  {:>7}  {}\n", "rel_id", "count", "percent", "relation");
  for (const auto& f : report.relation_frequencies) {
    os << fmt::format("{:>8}  {:>10}  {:>7.2f}  {}\n", f.rel, f.count, f.percent,
                      kg.relations().name(f.rel));
  }
}

void write_report_csv(std::ostream& os, const StructuralReport& report) {
  os << "relation_id,count,percent\n";
  for (const auto& f : report.relation_frequencies) {
    os << fmt::format("{},{},{:.4f}\n", f.rel, f.count, f.percent);
  }
}

}  // namespace pathe
