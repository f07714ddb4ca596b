#include "irra/fusion.hpp"

#include "irra/errors.hpp"
#include "irra/ops.hpp"

#include <atomic>

namespace irra {

namespace {

std::atomic<std::uint64_t> g_fusion_forwards{0};

}  // namespace

std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::Ours: return "ours";
    case FusionVariant::CoAttention: return "co_attention";
    case FusionVariant::MergedAttention: return "merged_attention";
  }
  return "unknown";
}

FusionVariant parse_fusion_variant(const std::string& name) {
  if (name == "ours") return FusionVariant::Ours;
  if (name == "co_attention") return FusionVariant::CoAttention;
  if (name == "merged_attention") return FusionVariant::MergedAttention;
  throw ConfigError("unknown fusion variant '" + name + "'");
}

FusionConfig FusionConfig::production(FusionVariant variant) {
  return {variant, 512, 8, 4, 512, 768};
}

void FusionConfig::validate() const {
  if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0) {
    throw ConfigError("fusion hidden_dim " + std::to_string(hidden_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (num_blocks == 0) throw ConfigError("fusion needs at least one block");
  if (text_dim == 0 || image_dim == 0) throw ConfigError("fusion input widths must be positive");
}

Tensor mca(const Tensor& q, const Tensor& k, const Tensor& v, const MultiHeadAttention& params) {
  return params(q, k, v, false);
}

CoAttentionLayer CoAttentionLayer::create(ParamFactory f, std::size_t dim, std::size_t heads) {
  CoAttentionLayer l;
  l.ln_self = LayerNorm::create(f.scoped("ln_self"), dim);
  l.ln_cross_query = LayerNorm::create(f.scoped("ln_cross_query"), dim);
  l.ln_cross_context = LayerNorm::create(f.scoped("ln_cross_context"), dim);
  l.ln_mlp = LayerNorm::create(f.scoped("ln_mlp"), dim);
  l.self_attn = MultiHeadAttention::create(f.scoped("self_attn"), dim, heads);
  l.cross_attn = MultiHeadAttention::create(f.scoped("cross_attn"), dim, heads);
  l.mlp = Mlp::create(f.scoped("mlp"), dim);
  return l;
}

Tensor CoAttentionLayer::operator()(const Tensor& x, const Tensor& other) const {
  const Tensor h = ln_self(x);
  Tensor y = x + self_attn(h, h, h);
  const Tensor ctx = ln_cross_context(other);
  y = y + cross_attn(ln_cross_query(y), ctx, ctx);
  return y + mlp(ln_mlp(y));
}

FusionEncoder::FusionEncoder(ParamFactory f, const FusionConfig& config) : config_(config) {
  config_.validate();
  const auto d = config_.hidden_dim;
  if (config_.text_dim != d) text_in_ = Linear::create(f.scoped("text_in"), config_.text_dim, d);
  if (config_.image_dim != d) {
    image_in_ = Linear::create(f.scoped("image_in"), config_.image_dim, d);
  }
  switch (config_.variant) {
    case FusionVariant::Ours:
      ln_query_ = LayerNorm::create(f.scoped("ln_query"), d);
      ln_context_ = LayerNorm::create(f.scoped("ln_context"), d);
      cross_ = MultiHeadAttention::create(f.scoped("cross_attn"), d, config_.num_heads);
      [[fallthrough]];
    case FusionVariant::MergedAttention:
      for (std::size_t i = 0; i < config_.num_blocks; ++i) {
        blocks_.push_back(
            TransformerBlock::create(f.scoped("block" + std::to_string(i)), d, config_.num_heads));
      }
      break;
    case FusionVariant::CoAttention:
      for (std::size_t i = 0; i < config_.num_blocks; ++i) {
        const auto idx = std::to_string(i);
        text_layers_.push_back(CoAttentionLayer::create(f.scoped("text" + idx), d, config_.num_heads));
        image_layers_.push_back(
            CoAttentionLayer::create(f.scoped("image" + idx), d, config_.num_heads));
      }
      break;
  }
  ln_post_ = LayerNorm::create(f.scoped("ln_post"), d);
}

std::uint64_t FusionEncoder::forward_count() { return g_fusion_forwards.load(); }

void FusionEncoder::check_inputs(const Tensor& t, const Tensor& v, FusionVariant expected) const {
  if (config_.variant != expected) {
    throw ConfigError("fusion encoder built as '" + to_string(config_.variant) +
                      "' cannot run '" + to_string(expected) + "'");
  }
  if (t.rank() != 3 || v.rank() != 3 || t.dim(0) != v.dim(0) ||
      t.dim(2) != config_.text_dim || v.dim(2) != config_.image_dim) {
    throw ShapeError("fusion: text " + shape_str(t.shape()) + " and image " +
                     shape_str(v.shape()) + " incompatible with widths " +
                     std::to_string(config_.text_dim) + "/" + std::to_string(config_.image_dim));
  }
  ++g_fusion_forwards;
}

Tensor FusionEncoder::project_text(const Tensor& t) const { return text_in_ ? (*text_in_)(t) : t; }

Tensor FusionEncoder::project_image(const Tensor& v) const {
  return image_in_ ? (*image_in_)(v) : v;
}

FusedStates FusionEncoder::fuse(const Tensor& text_states, const Tensor& image_states) const {
  switch (config_.variant) {
    case FusionVariant::Ours: return fuse_ours(text_states, image_states);
    case FusionVariant::CoAttention: return fuse_co_attention(text_states, image_states);
    case FusionVariant::MergedAttention: return fuse_merged_attention(text_states, image_states);
  }
  throw ConfigError("unknown fusion variant");
}

FusedStates FusionEncoder::fuse_ours(const Tensor& text_states, const Tensor& image_states) const {
  check_inputs(text_states, image_states, FusionVariant::Ours);
  const Tensor context = ln_context_(project_image(image_states));
  Tensor x = mca(ln_query_(project_text(text_states)), context, context, cross_);
  for (const auto& block : blocks_) x = block(x);
  return {ln_post_(x)};
}

FusedStates FusionEncoder::fuse_co_attention(const Tensor& text_states,
                                             const Tensor& image_states) const {
  check_inputs(text_states, image_states, FusionVariant::CoAttention);
  Tensor t = project_text(text_states);
  Tensor v = project_image(image_states);
  for (std::size_t i = 0; i < text_layers_.size(); ++i) {
    Tensor next_t = text_layers_[i](t, v);
    // The image stream after the last layer never reaches the text output.
    if (i + 1 < image_layers_.size()) v = image_layers_[i](v, t);
    t = std::move(next_t);
  }
  return {ln_post_(t)};
}

FusedStates FusionEncoder::fuse_merged_attention(const Tensor& text_states,
                                                 const Tensor& image_states) const {
  check_inputs(text_states, image_states, FusionVariant::MergedAttention);
  const auto len = text_states.dim(1);
  Tensor x = concat(project_text(text_states), project_image(image_states), 1);
  for (const auto& block : blocks_) x = block(x);
  return {ln_post_(slice(x, 1, 0, len))};
}

std::size_t fusion_parameter_count(const FusionConfig& config) {
  ParamStore store;
  Rng rng(0);
  FusionEncoder enc(ParamFactory(store, rng, "fusion", ParamGroup::NewModule), config);
  return store.scalar_count();
}

MlmHead MlmHead::create(ParamFactory f, std::size_t dim, std::size_t vocab_size) {
  return {Linear::create(f.scoped("dense"), dim, dim), LayerNorm::create(f.scoped("ln"), dim),
          Linear::create(f.scoped("fc"), dim, vocab_size)};
}

Tensor MlmHead::operator()(const Tensor& x) const { return fc(ln(gelu(dense(x)))); }

Tensor irr_loss(const FusedStates& fused, std::span<const MaskedPositions> masked,
                const MlmHead& head, bool literal_vocab_scaling) {
  const Tensor& h = fused.states;
  if (h.rank() != 3 || masked.size() != h.dim(0)) {
    throw ShapeError("irr_loss: " + std::to_string(masked.size()) + " mask sets for states " +
                     shape_str(h.shape()));
  }
  const auto len = h.dim(1);
  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
  for (std::size_t b = 0; b < masked.size(); ++b) {
    const auto& m = masked[b];
    if (m.positions.size() != m.original_ids.size()) {
      throw ContractError("irr_loss: positions and original ids differ in length");
    }
    for (std::size_t k = 0; k < m.positions.size(); ++k) {
      if (m.positions[k] >= len) {
        throw IndexError("irr_loss: masked position " + std::to_string(m.positions[k]) +
                         " outside sequence of length " + std::to_string(len));
      }
      rows.push_back(b * len + m.positions[k]);
      targets.push_back(m.original_ids[k]);
    }
  }
  if (rows.empty()) return Tensor::scalar(0.0);
  const Tensor logits = head(select_rows(h, rows));
  Tensor loss = cross_entropy(logits, targets);
  if (literal_vocab_scaling) loss = scale(loss, 1.0 / static_cast<double>(logits.dim(1)));
  return loss;
}

}  // namespace irra
