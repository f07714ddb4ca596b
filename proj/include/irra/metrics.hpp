#pragma once

#include "irra/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <span>
#include <vector>

namespace irra {

inline constexpr std::size_t kDefaultKsData[] = {1, 5, 10};
inline constexpr std::span<const std::size_t> kDefaultKs{kDefaultKsData};

struct QueryResult {
  std::size_t query = 0;
  std::vector<std::size_t> ranking;  // gallery indices, best first
  std::vector<bool> relevant;        // relevance flag per ranking position
  double average_precision = 0.0;
  double inverse_negative_penalty = 0.0;
};

struct RetrievalReport {
  std::vector<std::size_t> ks;
  /// Fraction of queries with a relevant item in the top k, one per ks entry.
  std::vector<double> rank_k;
  double mean_ap = 0.0;
  double mean_inp = 0.0;
  std::vector<QueryResult> per_query;

  /// Rank-k for a k listed in `ks`; throws IndexError otherwise.
  double rank(std::size_t k) const;
};

/// Gallery indices by descending score; equal scores keep ascending index.
std::vector<std::size_t> rank_gallery(std::span<const double> scores);

/// Text-to-image retrieval metrics for a [Q x G] similarity matrix.
///
/// AP averages hits/rank over the ranks of relevant items; INP is the
/// relevant count divided by the rank of the last relevant item. Throws
/// ContractError naming the first query without any relevant gallery item.
RetrievalReport evaluate(const RowMatrix& sim, std::span<const std::size_t> query_ids,
                         std::span<const std::size_t> gallery_ids,
                         std::span<const std::size_t> ks = kDefaultKs);

/// Brute-force evaluation straight from the metric definitions, quadratic in
/// the gallery size per query. Used to cross-check evaluate().
RetrievalReport evaluate_reference(const RowMatrix& sim, std::span<const std::size_t> query_ids,
                                   std::span<const std::size_t> gallery_ids,
                                   std::span<const std::size_t> ks = kDefaultKs);

/// Similarity matrix with the identity of every row and column.
struct SimilarityTable {
  RowMatrix scores;
  std::vector<std::size_t> query_ids;
  std::vector<std::size_t> gallery_ids;
};

/// CSV with header "query_id,<gallery id>..." and one row per query:
/// its identity, then its scores. Values round-trip exactly.
std::string similarity_to_csv(const SimilarityTable& table);
SimilarityTable similarity_from_csv(const std::string& text);
void save_similarity_csv(const std::filesystem::path& path, const SimilarityTable& table);
/// Throws IoError when unreadable and ParseError naming the line otherwise.
SimilarityTable load_similarity_csv(const std::filesystem::path& path);

/// Embedding rows with the identity of each row.
struct EmbeddingSet {
  RowMatrix embeddings;
  std::vector<std::size_t> ids;
};

/// Stored in the array container as "embeddings" [n x d] and "ids" [n].
void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

/// Cosine similarity of every query row against every gallery row. Throws
/// ShapeError on a width mismatch and DegenerateInputError on a zero row.
SimilarityTable similarity_from_embeddings(const EmbeddingSet& queries, const EmbeddingSet& gallery);

}  // namespace irra
