#include "irra/metrics.hpp"

#include "irra/errors.hpp"

#include <algorithm>
#include <numeric>

namespace irra {

double RetrievalReport::rank(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return rank_k[i];
  }
  throw IndexError("rank-" + std::to_string(k) + " was not computed");
}

std::vector<std::size_t> rank_gallery(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

RetrievalReport evaluate(const RowMatrix& sim, std::span<const std::size_t> query_ids,
                         std::span<const std::size_t> gallery_ids,
                         std::span<const std::size_t> ks) {
  const auto q_count = static_cast<std::size_t>(sim.rows());
  const auto g_count = static_cast<std::size_t>(sim.cols());
  if (query_ids.size() != q_count || gallery_ids.size() != g_count) {
    throw ShapeError("evaluate: similarity is " + std::to_string(q_count) + "x" +
                     std::to_string(g_count) + " but got " + std::to_string(query_ids.size()) +
                     " query ids and " + std::to_string(gallery_ids.size()) + " gallery ids");
  }
  if (q_count == 0) throw ContractError("evaluate: no queries");

  RetrievalReport report;
  report.ks.assign(ks.begin(), ks.end());
  std::vector<std::size_t> hits_at_k(ks.size(), 0);
  report.per_query.reserve(q_count);
  std::vector<double> row(g_count);

  for (std::size_t q = 0; q < q_count; ++q) {
    for (std::size_t g = 0; g < g_count; ++g) row[g] = sim(static_cast<Eigen::Index>(q),
                                                           static_cast<Eigen::Index>(g));
    QueryResult r;
    r.query = q;
    r.ranking = rank_gallery(row);
    r.relevant.resize(g_count);
    std::size_t first_hit = g_count, last_hit = 0, hits = 0;
    double precision_sum = 0.0;
    for (std::size_t pos = 0; pos < g_count; ++pos) {
      const bool rel = gallery_ids[r.ranking[pos]] == query_ids[q];
      r.relevant[pos] = rel;
      if (!rel) continue;
      ++hits;
      first_hit = std::min(first_hit, pos);
      last_hit = pos;
      precision_sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
    }
    if (hits == 0) {
      throw ContractError("evaluate: query " + std::to_string(q) + " (identity " +
                          std::to_string(query_ids[q]) + ") has no relevant gallery item");
    }
    r.average_precision = precision_sum / static_cast<double>(hits);
    r.inverse_negative_penalty = static_cast<double>(hits) / static_cast<double>(last_hit + 1);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (first_hit < ks[i]) ++hits_at_k[i];
    }
    report.per_query.push_back(std::move(r));
  }

  for (auto h : hits_at_k) {
    report.rank_k.push_back(static_cast<double>(h) / static_cast<double>(q_count));
  }
  double ap = 0.0, inp = 0.0;
  for (const auto& r : report.per_query) {
    ap += r.average_precision;
    inp += r.inverse_negative_penalty;
  }
  report.mean_ap = ap / static_cast<double>(q_count);
  report.mean_inp = inp / static_cast<double>(q_count);
  return report;
}

}  // namespace irra

namespace irra {

RetrievalReport evaluate_reference(const RowMatrix& sim, std::span<const std::size_t> query_ids,
                                   std::span<const std::size_t> gallery_ids,
                                   std::span<const std::size_t> ks) {
  const auto q_count = static_cast<std::size_t>(sim.rows());
  const auto g_count = static_cast<std::size_t>(sim.cols());
  if (query_ids.size() != q_count || gallery_ids.size() != g_count) {
    throw ShapeError("evaluate_reference: id counts do not match the similarity matrix");
  }
  if (q_count == 0) throw ContractError("evaluate_reference: no queries");
  RetrievalReport report;
  report.ks.assign(ks.begin(), ks.end());
  report.rank_k.assign(ks.size(), 0.0);
  std::vector<double> ap(q_count), inp(q_count);
  for (std::size_t q = 0; q < q_count; ++q) {
    const auto s = [&](std::size_t g) {
      return sim(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g));
    };
    // Rank of g: one plus the items placed before it (higher score, or equal
    // score and lower index).
    std::vector<std::size_t> rank(g_count);
    for (std::size_t g = 0; g < g_count; ++g) {
      rank[g] = 1;
      for (std::size_t h = 0; h < g_count; ++h) {
        if (s(h) > s(g) || (s(h) == s(g) && h < g)) ++rank[g];
      }
    }
    std::vector<std::size_t> relevant_ranks;
    for (std::size_t g = 0; g < g_count; ++g) {
      if (gallery_ids[g] == query_ids[q]) relevant_ranks.push_back(rank[g]);
    }
    if (relevant_ranks.empty()) {
      throw ContractError("evaluate_reference: query " + std::to_string(q) +
                          " has no relevant gallery item");
    }
    std::sort(relevant_ranks.begin(), relevant_ranks.end());
    double precision_sum = 0.0;
    for (std::size_t i = 0; i < relevant_ranks.size(); ++i) {
      std::size_t within = 0;
      for (auto r : relevant_ranks) within += r <= relevant_ranks[i] ? 1 : 0;
      precision_sum += static_cast<double>(within) / static_cast<double>(relevant_ranks[i]);
    }
    const auto n_rel = static_cast<double>(relevant_ranks.size());
    ap[q] = precision_sum / n_rel;
    inp[q] = n_rel / static_cast<double>(relevant_ranks.back());
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (relevant_ranks.front() <= ks[i]) report.rank_k[i] += 1.0;
    }
  }
  for (auto& r : report.rank_k) r /= static_cast<double>(q_count);
  double ap_sum = 0.0, inp_sum = 0.0;
  for (std::size_t q = 0; q < q_count; ++q) {
    ap_sum += ap[q];
    inp_sum += inp[q];
  }
  report.mean_ap = ap_sum / static_cast<double>(q_count);
  report.mean_inp = inp_sum / static_cast<double>(q_count);
  return report;
}

}  // namespace irra
