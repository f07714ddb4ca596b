#include "irra/losses.hpp"

#include "irra/errors.hpp"
#include "irra/ops.hpp"

#include <cmath>
#include <numeric>

namespace irra {

void PairBatch::validate() const {
  const auto n = identity_labels.size();
  if (n == 0) throw ShapeError("pair batch is empty");
  if (image_embeds.rank() != 2 || text_embeds.rank() != 2 || image_embeds.dim(0) != n ||
      text_embeds.dim(0) != n || image_embeds.dim(1) != text_embeds.dim(1)) {
    throw ShapeError("pair batch: images " + shape_str(image_embeds.shape()) + ", texts " +
                     shape_str(text_embeds.shape()) + ", " + std::to_string(n) + " labels");
  }
}

MatchMatrix build_match_matrix(std::span<const std::size_t> labels) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  MatchMatrix m{RowMatrix::Zero(n, n), RowMatrix::Zero(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m.y(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
    m.q.row(i) = m.y.row(i) / m.y.row(i).sum();
  }
  return m;
}

void SdmConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("SDM temperature must be positive");
  if (!(epsilon >= 0.0)) throw ConfigError("SDM epsilon must be non-negative");
}

Tensor cosine_similarity_matrix(const Tensor& image_embeds, const Tensor& text_embeds) {
  return matmul(l2_normalize_rows(image_embeds), transpose(l2_normalize_rows(text_embeds)));
}

Tensor sdm_direction(const Tensor& sim, const RowMatrix& q, const SdmConfig& config) {
  const auto n = sim.dim(0);
  const Tensor log_p = log_softmax(scale(sim, 1.0 / config.temperature), 1);
  std::vector<double> flat(n * n);
  if (config.direction == KlDirection::PredictedFirst) {
    // sum_j p (log p - log(q + eps))
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) flat[i * n + j] = std::log(q(i, j) + config.epsilon);
    }
    const Tensor log_q = Tensor::from_values({n, n}, std::move(flat));
    return scale(sum(mul(exp(log_p), sub(log_p, log_q))), 1.0 / static_cast<double>(n));
  }
  // sum_j q (log q - log(p + eps)); zero-probability labels contribute nothing.
  double entropy_term = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      flat[i * n + j] = q(i, j);
      if (q(i, j) > 0.0) entropy_term += q(i, j) * std::log(q(i, j));
    }
  }
  const Tensor qt = Tensor::from_values({n, n}, std::move(flat));
  const Tensor cross = sum(mul(log(add_scalar(exp(log_p), config.epsilon)), qt));
  return scale(add_scalar(scale(cross, -1.0), entropy_term), 1.0 / static_cast<double>(n));
}

Tensor sdm_loss(const PairBatch& batch, const SdmConfig& config) {
  batch.validate();
  config.validate();
  const MatchMatrix match = build_match_matrix(batch.identity_labels);
  const Tensor sim = cosine_similarity_matrix(batch);
  // y is symmetric, so the text-to-image direction reuses q.
  return add(sdm_direction(sim, match.q, config), sdm_direction(transpose(sim), match.q, config));
}

Tensor id_loss(const PairBatch& batch, const Linear& classifier) {
  batch.validate();
  const auto classes = classifier.weight.dim(1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.identity_labels[i] >= classes) {
      throw IndexError("id_loss: label " + std::to_string(batch.identity_labels[i]) +
                       " at row " + std::to_string(i) + " but classifier has " +
                       std::to_string(classes) + " identities");
    }
  }
  const Tensor img = cross_entropy(classifier(batch.image_embeds), batch.identity_labels);
  const Tensor txt = cross_entropy(classifier(batch.text_embeds), batch.identity_labels);
  return scale(add(img, txt), 0.5);
}

Tensor infonce_loss(const PairBatch& batch, double temperature) {
  batch.validate();
  if (!(temperature > 0.0)) throw ConfigError("InfoNCE temperature must be positive");
  const Tensor logits = scale(cosine_similarity_matrix(batch), 1.0 / temperature);
  std::vector<std::size_t> diag(batch.size());
  std::iota(diag.begin(), diag.end(), 0);
  return scale(add(cross_entropy(logits, diag), cross_entropy(transpose(logits), diag)), 0.5);
}

Tensor total_loss(const LossComponents& c, const LossToggles& toggles) {
  if (!toggles.any()) throw ConfigError("total_loss: every loss component is disabled");
  Tensor total;
  auto accumulate = [&](bool on, const Tensor& part, const char* name) {
    if (!on) return;
    if (!part.defined()) {
      throw ConfigError(std::string("total_loss: component '") + name + "' enabled but missing");
    }
    total = total.defined() ? add(total, part) : part;
  };
  accumulate(toggles.irr, c.irr, "irr");
  accumulate(toggles.sdm, c.sdm, "sdm");
  accumulate(toggles.id, c.id, "id");
  accumulate(toggles.infonce, c.infonce, "infonce");
  return total;
}

}  // namespace irra
