#pragma once

#include "irra/image.hpp"
#include "irra/nn.hpp"
#include "irra/tensor.hpp"
#include "irra/tokens.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace irra {

struct ImageEncoderConfig {
  std::size_t height = 32;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t joint_dim = 64;

  /// 384x128 input with ViT-B/16 geometry.
  static ImageEncoderConfig production();
  std::size_t num_patches() const { return (height / patch_size) * (width / patch_size); }
  void validate() const;
};

struct TextEncoderConfig {
  std::size_t vocab_size = 64;
  std::size_t max_len = 16;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t joint_dim = 64;

  /// 77-token CLIP text transformer geometry.
  static TextEncoderConfig production();
  void validate() const;
};

/// Batched image encoding: global_embed is [B x joint_dim]; token_states is
/// [B x N x embed_dim], the final-layer patch states without the class token.
struct EncodedImage {
  Tensor global_embed;
  Tensor token_states;
};

/// Batched text encoding: global_embed is [B x joint_dim], projected from the
/// first [EOS] state; token_states is [B x L x embed_dim].
struct EncodedText {
  Tensor global_embed;
  Tensor token_states;
};

/// Patch-based vision transformer with a class token.
class ImageEncoder {
 public:
  ImageEncoder(ParamFactory factory, const ImageEncoderConfig& config);

  const ImageEncoderConfig& config() const { return config_; }
  EncodedImage encode(std::span<const Image> images) const;

  Linear& projection() { return proj_; }
  Tensor& positional_embedding() { return pos_; }

 private:
  ImageEncoderConfig config_;
  Linear patch_embed_;
  Tensor cls_;
  Tensor pos_;
  LayerNorm ln_pre_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_post_;
  Linear proj_;
};

/// Token transformer; attention is causal unless disabled per call.
class TextEncoder {
 public:
  TextEncoder(ParamFactory factory, const TextEncoderConfig& config);

  const TextEncoderConfig& config() const { return config_; }
  /// Every sequence must have length max_len, start with [SOS] and contain
  /// an [EOS]; violations throw ContractError.
  EncodedText encode(std::span<const std::vector<TokenId>> token_ids, bool causal = true) const;

  Tensor& token_embedding() { return token_embed_; }

 private:
  TextEncoderConfig config_;
  Tensor token_embed_;
  Tensor pos_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_final_;
  Linear proj_;
};

/// Index of the first [EOS] in `ids`; throws ContractError when absent.
std::size_t eos_position(std::span<const TokenId> ids);

}  // namespace irra
