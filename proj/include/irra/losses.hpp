#pragma once

#include "irra/nn.hpp"
#include "irra/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace irra {

/// N aligned image/text embeddings with their identity labels.
struct PairBatch {
  Tensor image_embeds;  // [N x D]
  Tensor text_embeds;   // [N x D]
  std::vector<std::size_t> identity_labels;

  std::size_t size() const { return identity_labels.size(); }
  void validate() const;
};

/// Identity agreement y (symmetric, unit diagonal) and its row-normalised q.
struct MatchMatrix {
  RowMatrix y;
  RowMatrix q;
};

MatchMatrix build_match_matrix(std::span<const std::size_t> identity_labels);

enum class KlDirection {
  /// KL(p || q): sum p log(p / (q + eps)).
  PredictedFirst,
  /// KL(q || p): sum q log(q / (p + eps)).
  LabelFirst,
};

struct SdmConfig {
  double temperature = 0.02;
  double epsilon = 1e-8;
  KlDirection direction = KlDirection::PredictedFirst;

  void validate() const;
};

/// [N x N] cosine similarities, entry (i, j) = image i vs text j.
/// Throws DegenerateInputError on a zero-norm embedding.
Tensor cosine_similarity_matrix(const Tensor& image_embeds, const Tensor& text_embeds);
inline Tensor cosine_similarity_matrix(const PairBatch& batch) {
  return cosine_similarity_matrix(batch.image_embeds, batch.text_embeds);
}

/// One direction of similarity distribution matching, for row-wise
/// similarities `sim` (rows are anchors) against match matrix `q`.
Tensor sdm_direction(const Tensor& sim, const RowMatrix& q, const SdmConfig& config);

/// Bidirectional similarity distribution matching: image-to-text plus
/// text-to-image.
Tensor sdm_loss(const PairBatch& batch, const SdmConfig& config = {});

/// Mean of the image-branch and text-branch identity cross-entropies through
/// one shared linear classifier.
Tensor id_loss(const PairBatch& batch, const Linear& classifier);

/// Symmetric InfoNCE over sim / temperature with diagonal targets.
Tensor infonce_loss(const PairBatch& batch, double temperature = 0.02);

struct LossToggles {
  bool sdm = true;
  bool id = true;
  bool irr = true;
  /// Contrastive baseline term; used by the ablation grid rows without SDM.
  bool infonce = false;

  bool any() const { return sdm || id || irr || infonce; }
};

struct LossComponents {
  Tensor irr, sdm, id, infonce;
};

/// Unweighted sum of the enabled components. Throws ConfigError when every
/// toggle is off or an enabled component is missing.
Tensor total_loss(const LossComponents& components, const LossToggles& toggles);

}  // namespace irra
