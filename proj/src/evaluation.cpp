#include "pathe/evaluation.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include "json.hpp"

namespace pathe {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

double rank_of(double true_score, std::span<const double> corruption_scores) {
  std::size_t greater = 0, equal = 0;
  for (double s : corruption_scores) {
    if (s > true_score) {
      ++greater;
    } else if (s == true_score) {
      ++equal;
    }
  }
  return 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
}

RankMetrics metrics_from_ranks(std::span<const double> ranks) {
  RankMetrics m;
  m.count = ranks.size();
  if (ranks.empty()) return m;
  for (double r : ranks) {
    m.mrr += 1.0 / r;
    m.hits1 += r <= 1.0;
    m.hits3 += r <= 3.0;
    m.hits5 += r <= 5.0;
    m.hits10 += r <= 10.0;
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits5 /= n;
  m.hits10 /= n;
  return m;
}

double effi(double mrr, double param_millions) {
  if (!(param_millions > 0.0)) throw std::invalid_argument("effi: parameter count must be positive");
  return mrr / param_millions;
}

namespace {

std::string negatives_label(std::size_t negatives) {
  return negatives == 0 ? std::string("full") : fmt::format("sampled({})", negatives);
}

const char* task_label(Task task) { return task == Task::LinkPrediction ? "lp" : "rp"; }
const char* mode_label(EvalMode mode) {
  return mode == EvalMode::Transductive ? "transductive" : "inductive";
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        try {
          for (std::size_t i = next++; i < n; i = next++) fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

void write_report_text(std::ostream& os, const EvalReport& report) {
  const auto& m = report.metrics;
  os << fmt::format("{:<12}{}\n", "task", task_label(report.task));
  os << fmt::format("{:<12}{}\n", "mode", mode_label(report.mode));
  os << fmt::format("{:<12}{}\n", "negatives", negatives_label(report.negatives));
  os << fmt::format("{:<12}{}\n", "evaluated", m.count);
  os << fmt::format("{:<12}{:.4f}\n", "MRR", m.mrr);
  os << fmt::format("{:<12}{:.4f}\n", "Hits@1", m.hits1);
  os << fmt::format("{:<12}{:.4f}\n", "Hits@3", m.hits3);
  os << fmt::format("{:<12}{:.4f}\n", "Hits@5", m.hits5);
  os << fmt::format("{:<12}{:.4f}\n", "Hits@10", m.hits10);
  os << fmt::format("{:<12}{:.4f}\n", "Params(M)", report.param_millions);
  os << fmt::format("{:<12}{:.4f}\n", "Effi", report.effi);
}

std::string report_json(const EvalReport& report) {
  const auto& m = report.metrics;
  nlohmann::ordered_json j;
  j["task"] = task_label(report.task);
  j["mode"] = mode_label(report.mode);
  j["negatives"] = negatives_label(report.negatives);
  j["n_evaluated"] = m.count;
  j["mrr"] = m.mrr;
  j["hits@1"] = m.hits1;
  j["hits@3"] = m.hits3;
  j["hits@5"] = m.hits5;
  j["hits@10"] = m.hits10;
  j["parameter_count_millions"] = report.param_millions;
  j["effi"] = report.effi;
  return j.dump(2);
}

ModelScorer::ModelScorer(const PathE<float>& model, const KnowledgeGraph& graph,
                         const PathCorpus& corpus, std::uint64_t seed, std::size_t workers)
    : model_(model), graph_(graph) {
  if (graph.num_relations() != model.num_relations()) {
    throw std::invalid_argument(fmt::format("scorer: graph has {} relations, model expects {}",
                                            graph.num_relations(), model.num_relations()));
  }
  const std::size_t n = graph.num_entities();
  const std::size_t ppe = model.config().paths_per_entity;
  const std::size_t d = model.config().dim;
  paths_.resize(n);
  for (EntityId e = 0; e < n; ++e) {
    Rng rng = stream_rng(seed, e);
    paths_[e] = sample_entity_paths(corpus, e, ppe, rng);
  }
  anchors_ = Tensor<float>(Shape{n * ppe, d});
  constexpr std::size_t kEntitiesPerPass = 128;
  const std::size_t passes = (n + kEntitiesPerPass - 1) / kEntitiesPerPass;
  parallel_for(passes, workers, [&](std::size_t pass) {
    const std::size_t begin = pass * kEntitiesPerPass;
    const std::size_t end = std::min(n, begin + kEntitiesPerPass);
    std::vector<EntityId> ids(end - begin);
    std::iota(ids.begin(), ids.end(), static_cast<EntityId>(begin));
    Tensor<float> out = anchors_for(ids);
    std::copy(out.data().begin(), out.data().end(), anchors_.data().begin() + begin * ppe * d);
  });
}

std::span<const Path> ModelScorer::entity_paths(EntityId entity) const {
  return paths_.at(entity);
}

Tensor<float> ModelScorer::anchors_for(std::span<const EntityId> entities) const {
  std::vector<Path> paths;
  for (EntityId e : entities) paths.insert(paths.end(), paths_[e].begin(), paths_[e].end());
  PathBatch batch = build_path_batch(paths, model_.num_relations(), model_.config());
  Tape<float> tape;
  Rng unused(0);
  return model_.encode_paths(tape, graph_, batch, false, unused).value();
}

namespace {

// Anchor rows of (head, tail) for each triple, laid out as groups 2z and 2z+1.
Tensor<float> gather_pairs(const Tensor<float>& anchors, std::span<const Triple> triples,
                           std::size_t ppe, std::size_t d) {
  Tensor<float> out(Shape{triples.size() * 2 * ppe, d});
  auto src = anchors.data();
  auto dst = out.data();
  const std::size_t group = ppe * d;
  for (std::size_t z = 0; z < triples.size(); ++z) {
    std::copy_n(src.begin() + triples[z].head * group, group, dst.begin() + (2 * z) * group);
    std::copy_n(src.begin() + triples[z].tail * group, group, dst.begin() + (2 * z + 1) * group);
  }
  return out;
}

}  // namespace

std::vector<float> ModelScorer::lp_scores(std::span<const Triple> triples) const {
  if (triples.empty()) return {};
  const auto& cfg = model_.config();
  Tape<float> tape;
  Rng unused(0);
  Var<float> anchors = tape.constant(gather_pairs(anchors_, triples, cfg.paths_per_entity, cfg.dim));
  std::vector<std::size_t> heads(triples.size()), tails(triples.size());
  std::vector<RelationId> rels(triples.size());
  for (std::size_t z = 0; z < triples.size(); ++z) {
    heads[z] = 2 * z;
    tails[z] = 2 * z + 1;
    rels[z] = triples[z].rel;
  }
  auto emb = model_.aggregate(tape, anchors, heads, tails, false, unused);
  auto logits = model_.lp_logits(tape, emb, rels).value();
  return std::vector<float>(logits.data().begin(), logits.data().end());
}

std::vector<float> ModelScorer::rp_scores(std::span<const Triple> triples) const {
  if (triples.empty()) return {};
  const auto& cfg = model_.config();
  Tape<float> tape;
  Rng unused(0);
  Var<float> anchors = tape.constant(gather_pairs(anchors_, triples, cfg.paths_per_entity, cfg.dim));
  std::vector<std::size_t> heads(triples.size()), tails(triples.size());
  for (std::size_t z = 0; z < triples.size(); ++z) {
    heads[z] = 2 * z;
    tails[z] = 2 * z + 1;
  }
  auto emb = model_.aggregate(tape, anchors, heads, tails, false, unused);
  auto scores = model_.rp_scores(tape, emb).value();
  return std::vector<float>(scores.data().begin(), scores.data().end());
}

std::vector<EntityId> filtered_corruptions(const KnowledgeGraph& graph, const Triple& triple,
                                           bool head_side, std::size_t k, Rng& rng) {
  const std::size_t n = graph.num_entities();
  const EntityId original = head_side ? triple.head : triple.tail;
  auto valid = [&](EntityId e) {
    if (e == original) return false;
    Triple c = triple;
    (head_side ? c.head : c.tail) = e;
    return !graph.contains(c);
  };
  std::vector<EntityId> out;
  if (k == 0) {
    for (EntityId e = 0; e < n; ++e) {
      if (valid(e)) out.push_back(e);
    }
    return out;
  }
  // Rejection sampling while it is cheap, then exact completion from the
  // enumerated remainder, so the result is a uniform subset either way.
  std::unordered_set<EntityId> chosen;
  std::uniform_int_distribution<EntityId> pick(0, static_cast<EntityId>(n - 1));
  const std::size_t budget = 4 * k + 64;
  for (std::size_t attempt = 0; attempt < budget && out.size() < k; ++attempt) {
    EntityId e = pick(rng);
    if (valid(e) && chosen.insert(e).second) out.push_back(e);
  }
  if (out.size() < k) {
    std::vector<EntityId> rest;
    for (EntityId e = 0; e < n; ++e) {
      if (valid(e) && !chosen.contains(e)) rest.push_back(e);
    }
    const std::size_t need = std::min(k - out.size(), rest.size());
    for (std::size_t i = 0; i < need; ++i) {
      std::uniform_int_distribution<std::size_t> j(i, rest.size() - 1);
      std::swap(rest[i], rest[j(rng)]);
      out.push_back(rest[i]);
    }
  }
  return out;
}

std::vector<double> lp_ranks(const ModelScorer& scorer, std::span<const Triple> triples,
                             const LpEvalOptions& options) {
  if (scorer.model().task() != Task::LinkPrediction) {
    throw std::invalid_argument("link-prediction evaluation needs a link-prediction checkpoint");
  }
  const auto& graph = scorer.graph();
  for (const Triple& t : triples) {
    if (t.head >= graph.num_entities() || t.tail >= graph.num_entities() ||
        t.rel >= graph.num_relations()) {
      throw std::invalid_argument("lp_ranks: triple outside the graph vocabulary");
    }
  }
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  std::vector<double> ranks(2 * triples.size());
  parallel_for(2 * triples.size(), options.workers, [&](std::size_t job) {
    const Triple& t = triples[job / 2];
    const bool head_side = job % 2 == 0;
    Rng rng = stream_rng(options.seed, job);
    std::vector<EntityId> cands = filtered_corruptions(graph, t, head_side, options.negatives, rng);
    std::vector<Triple> batch;
    batch.reserve(cands.size() + 1);
    batch.push_back(t);
    for (EntityId e : cands) {
      Triple c = t;
      (head_side ? c.head : c.tail) = e;
      batch.push_back(c);
    }
    std::vector<double> scores;
    scores.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); b += chunk) {
      auto part = std::span<const Triple>(batch).subspan(b, std::min(chunk, batch.size() - b));
      for (float s : scorer.lp_scores(part)) scores.push_back(s);
    }
    for (double s : scores) {
      if (!std::isfinite(s)) throw std::runtime_error("lp_ranks: non-finite score");
    }
    ranks[job] = rank_of(scores[0], std::span<const double>(scores).subspan(1));
  });
  return ranks;
}

namespace {

EvalReport make_report(Task task, EvalMode mode, std::size_t negatives, std::span<const double> ranks,
                       std::size_t param_count) {
  EvalReport report;
  report.task = task;
  report.mode = mode;
  report.negatives = negatives;
  report.metrics = metrics_from_ranks(ranks);
  report.param_millions = static_cast<double>(param_count) / 1e6;
  report.effi = effi(report.metrics.mrr, report.param_millions);
  return report;
}

}  // namespace

EvalReport evaluate_lp(const ModelScorer& scorer, std::span<const Triple> triples,
                       const LpEvalOptions& options) {
  auto ranks = lp_ranks(scorer, triples, options);
  return make_report(Task::LinkPrediction, options.mode, options.negatives, ranks,
                     scorer.model().parameter_count());
}

std::vector<double> rp_ranks(const ModelScorer& scorer, std::span<const Triple> triples,
                             std::size_t workers) {
  if (scorer.model().task() != Task::RelationPrediction) {
    throw std::invalid_argument("relation-prediction evaluation needs a relation-prediction checkpoint");
  }
  const auto& graph = scorer.graph();
  const std::size_t R = graph.num_relations();
  constexpr std::size_t kChunk = 512;
  std::vector<double> ranks(triples.size());
  const std::size_t jobs = (triples.size() + kChunk - 1) / kChunk;
  parallel_for(jobs, workers, [&](std::size_t job) {
    const std::size_t begin = job * kChunk;
    auto part = triples.subspan(begin, std::min(kChunk, triples.size() - begin));
    std::vector<float> scores = scorer.rp_scores(part);
    std::vector<double> others;
    for (std::size_t z = 0; z < part.size(); ++z) {
      const Triple& t = part[z];
      others.clear();
      for (RelationId r = 0; r < R; ++r) {
        if (r == t.rel || graph.contains({t.head, r, t.tail})) continue;
        others.push_back(scores[z * R + r]);
      }
      ranks[begin + z] = rank_of(scores[z * R + t.rel], others);
    }
  });
  return ranks;
}

EvalReport evaluate_rp(const ModelScorer& scorer, std::span<const Triple> triples,
                       std::size_t workers) {
  auto ranks = rp_ranks(scorer, triples, workers);
  return make_report(Task::RelationPrediction, EvalMode::Transductive, 0, ranks,
                     scorer.model().parameter_count());
}

PcaResult top_principal_component(const std::vector<std::vector<double>>& rows) {
  PcaResult result;
  const std::size_t n = rows.size();
  const std::size_t d = n ? rows[0].size() : 0;
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("top_principal_component: ragged rows");
  }
  result.component.assign(d, 0.0);
  result.projections.assign(n, 0.0);
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < n && distinct < 2; ++i) {
    if (i == 0 || rows[i] != rows[0]) ++distinct;
  }
  if (distinct < 2 || d == 0) {
    result.degenerate = true;
    return result;
  }

  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += r[c];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> centred(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) centred[i * d + c] = rows[i][c] - mean[c];
  }
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      const double xa = centred[i * d + a];
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += xa * centred[i * d + b];
    }
  }
  for (double& c : cov) c /= static_cast<double>(n);

  auto normalise = [](std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : v) x /= norm;
    }
    return norm;
  };
  Rng rng(0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> gauss;
  std::vector<double> v(d), next(d);
  for (double& x : v) x = gauss(rng);
  normalise(v);
  constexpr double kTolerance = 1e-9;
  constexpr std::size_t kMaxIterations = 10000;
  double lambda = 0.0;
  for (std::size_t it = 1; it <= kMaxIterations; ++it) {
    for (std::size_t a = 0; a < d; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < d; ++b) s += cov[a * d + b] * v[b];
      next[a] = s;
    }
    lambda = normalise(next);
    result.iterations = it;
    if (lambda == 0.0) break;
    double delta = 0.0;
    for (std::size_t a = 0; a < d; ++a) delta = std::max(delta, std::abs(next[a] - v[a]));
    v.swap(next);
    if (delta < kTolerance) break;
  }
  if (lambda == 0.0) {
    result.degenerate = true;
    return result;
  }
  std::size_t largest = 0;
  for (std::size_t a = 1; a < d; ++a) {
    if (std::abs(v[a]) > std::abs(v[largest])) largest = a;
  }
  if (v[largest] < 0) {
    for (double& x : v) x = -x;
  }
  result.component = v;
  result.eigenvalue = lambda;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += centred[i * d + c] * v[c];
    result.projections[i] = s;
  }
  return result;
}

PcaResult positional_pca(const Tensor<float>& positional_table) {
  if (positional_table.rank() != 2 || positional_table.dim(0) < 2) {
    throw std::invalid_argument("positional_pca: expected a table with a padding row and positions");
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t p = 1; p < positional_table.dim(0); ++p) {
    std::vector<double> row(positional_table.dim(1));
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = positional_table.at(p, c);
    rows.push_back(std::move(row));
  }
  return top_principal_component(rows);
}

}  // namespace pathe
