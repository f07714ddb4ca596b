#pragma once

#include "irra/nn.hpp"
#include "irra/tensor.hpp"
#include "irra/tokens.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace irra {

enum class FusionVariant { Ours, CoAttention, MergedAttention };

std::string to_string(FusionVariant v);
/// Accepts "ours", "co_attention" and "merged_attention".
FusionVariant parse_fusion_variant(const std::string& name);

struct FusionConfig {
  FusionVariant variant = FusionVariant::Ours;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 2;
  /// Widths of the incoming text and image token states.
  std::size_t text_dim = 64;
  std::size_t image_dim = 64;

  /// 512 hidden, 8 heads, 4 blocks.
  static FusionConfig production(FusionVariant variant = FusionVariant::Ours);
  void validate() const;
};

/// Fused masked-text states, [B x L x hidden_dim].
struct FusedStates {
  Tensor states;
};

/// Masked token indices of one caption and the ids they replaced.
struct MaskedPositions {
  std::vector<std::size_t> positions;
  std::vector<TokenId> original_ids;

  bool empty() const { return positions.empty(); }
};

/// Multi-head cross attention: queries from q, keys and values from k and v.
Tensor mca(const Tensor& q, const Tensor& k, const Tensor& v, const MultiHeadAttention& params);

/// One co-attention layer for a single stream.
struct CoAttentionLayer {
  LayerNorm ln_self, ln_cross_query, ln_cross_context, ln_mlp;
  MultiHeadAttention self_attn, cross_attn;
  Mlp mlp;

  static CoAttentionLayer create(ParamFactory f, std::size_t dim, std::size_t heads);
  Tensor operator()(const Tensor& x, const Tensor& other) const;
};

/// Multimodal interaction encoder. Text states act as queries; image states
/// supply keys and values (or are mixed in, depending on the variant).
class FusionEncoder {
 public:
  FusionEncoder(ParamFactory factory, const FusionConfig& config);

  const FusionConfig& config() const { return config_; }

  /// Runs the configured variant. text_states is [B x L x text_dim] and
  /// image_states is [B x N x image_dim]; the result is [B x L x hidden_dim].
  FusedStates fuse(const Tensor& text_states, const Tensor& image_states) const;

  /// LN per stream, one cross-attention layer, then transformer blocks.
  FusedStates fuse_ours(const Tensor& text_states, const Tensor& image_states) const;
  /// Parallel text and image streams of self-attn + cross-attn + MLP layers.
  FusedStates fuse_co_attention(const Tensor& text_states, const Tensor& image_states) const;
  /// Concatenated sequence through shared blocks; first L rows returned.
  FusedStates fuse_merged_attention(const Tensor& text_states, const Tensor& image_states) const;

  /// Number of fusion forward passes executed in this process.
  static std::uint64_t forward_count();

 private:
  void check_inputs(const Tensor& text_states, const Tensor& image_states,
                    FusionVariant expected) const;
  Tensor project_text(const Tensor& t) const;
  Tensor project_image(const Tensor& v) const;

  FusionConfig config_;
  std::optional<Linear> text_in_, image_in_;
  // ours
  LayerNorm ln_query_, ln_context_;
  MultiHeadAttention cross_;
  // ours and merged
  std::vector<TransformerBlock> blocks_;
  // co-attention
  std::vector<CoAttentionLayer> text_layers_, image_layers_;
  LayerNorm ln_post_;
};

/// Scalars in a freshly built fusion encoder for `config`.
std::size_t fusion_parameter_count(const FusionConfig& config);

/// Vocabulary classifier: dense, GELU, layer norm, then projection to |V|.
struct MlmHead {
  Linear dense;
  LayerNorm ln;
  Linear fc;

  static MlmHead create(ParamFactory f, std::size_t dim, std::size_t vocab_size);
  Tensor operator()(const Tensor& x) const;
};

/// Masked-token prediction loss over one batch.
///
/// `masked[b]` lists the masked positions of caption b. The result is the
/// mean cross-entropy over all masked positions; with
/// `literal_vocab_scaling` it is further divided by |V|. A batch without any
/// masked position yields a constant zero.
Tensor irr_loss(const FusedStates& fused, std::span<const MaskedPositions> masked,
                const MlmHead& head, bool literal_vocab_scaling = false);

}  // namespace irra
