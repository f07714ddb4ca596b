#include "irra/encoders.hpp"

#include "irra/errors.hpp"
#include "irra/ops.hpp"

#include <algorithm>

namespace irra {

namespace {

constexpr double kEmbeddingInitStd = 0.02;

void check_heads(std::size_t dim, std::size_t heads, const char* what) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError(std::string(what) + ": embed_dim " + std::to_string(dim) +
                      " not divisible by num_heads " + std::to_string(heads));
  }
}

}  // namespace

ImageEncoderConfig ImageEncoderConfig::production() {
  return {384, 128, 3, 16, 768, 12, 12, 512};
}

void ImageEncoderConfig::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ConfigError("image dims must be positive");
  if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not tile " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  if (num_layers == 0 || joint_dim == 0) throw ConfigError("image encoder needs layers and joint_dim");
  check_heads(embed_dim, num_heads, "image encoder");
}

TextEncoderConfig TextEncoderConfig::production() { return {49408, 77, 512, 12, 8, 512}; }

void TextEncoderConfig::validate() const {
  if (max_len < 3) throw ConfigError("max_len must be at least 3");
  if (vocab_size <= kNumSpecialTokens) throw ConfigError("vocabulary must exceed reserved ids");
  if (num_layers == 0 || joint_dim == 0) throw ConfigError("text encoder needs layers and joint_dim");
  check_heads(embed_dim, num_heads, "text encoder");
}

ImageEncoder::ImageEncoder(ParamFactory f, const ImageEncoderConfig& config) : config_(config) {
  config_.validate();
  const auto e = config_.embed_dim;
  const auto patch_dim = config_.patch_size * config_.patch_size * config_.channels;
  patch_embed_ = Linear::create(f.scoped("patch_embed"), patch_dim, e, false);
  cls_ = f.truncated_normal("cls", {e}, kEmbeddingInitStd);
  pos_ = f.truncated_normal("pos", {config_.num_patches() + 1, e}, kEmbeddingInitStd);
  ln_pre_ = LayerNorm::create(f.scoped("ln_pre"), e);
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    blocks_.push_back(
        TransformerBlock::create(f.scoped("block" + std::to_string(i)), e, config_.num_heads));
  }
  ln_post_ = LayerNorm::create(f.scoped("ln_post"), e);
  proj_ = Linear::create(f.scoped("proj"), e, config_.joint_dim, false);
}

EncodedImage ImageEncoder::encode(std::span<const Image> images) const {
  if (images.empty()) throw ShapeError("encode_image: empty batch");
  const auto& c = config_;
  const auto n = c.num_patches();
  const auto patch_dim = c.patch_size * c.patch_size * c.channels;
  const auto batch = images.size();
  std::vector<double> flat;
  flat.reserve(batch * n * patch_dim);
  for (const auto& img : images) {
    if (img.height != c.height || img.width != c.width || img.channels != c.channels) {
      throw ShapeError("encode_image: got " + std::to_string(img.height) + "x" +
                       std::to_string(img.width) + "x" + std::to_string(img.channels) +
                       ", expected " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                       "x" + std::to_string(c.channels));
    }
    const RowMatrix p = patchify(img, c.patch_size);
    flat.insert(flat.end(), p.data(), p.data() + p.size());
  }
  const Tensor patches = Tensor::from_values({batch, n, patch_dim}, std::move(flat));
  Tensor x = patch_embed_(patches);
  x = concat(expand(cls_, {batch, 1, c.embed_dim}), x, 1);
  x = ln_pre_(x + pos_);
  for (const auto& block : blocks_) x = block(x, false);
  x = ln_post_(x);

  std::vector<std::size_t> cls_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) cls_rows[b] = b * (n + 1);
  return {proj_(select_rows(x, cls_rows)), slice(x, 1, 1, n + 1)};
}

std::size_t eos_position(std::span<const TokenId> ids) {
  auto it = std::find(ids.begin(), ids.end(), kEosId);
  if (it == ids.end()) throw ContractError("token sequence has no [EOS]");
  return static_cast<std::size_t>(it - ids.begin());
}

TextEncoder::TextEncoder(ParamFactory f, const TextEncoderConfig& config) : config_(config) {
  config_.validate();
  const auto e = config_.embed_dim;
  token_embed_ = f.truncated_normal("token_embed", {config_.vocab_size, e}, kEmbeddingInitStd);
  pos_ = f.truncated_normal("pos", {config_.max_len, e}, kEmbeddingInitStd);
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    blocks_.push_back(
        TransformerBlock::create(f.scoped("block" + std::to_string(i)), e, config_.num_heads));
  }
  ln_final_ = LayerNorm::create(f.scoped("ln_final"), e);
  proj_ = Linear::create(f.scoped("proj"), e, config_.joint_dim, false);
}

EncodedText TextEncoder::encode(std::span<const std::vector<TokenId>> token_ids,
                                bool causal) const {
  if (token_ids.empty()) throw ShapeError("encode_text: empty batch");
  const auto len = config_.max_len;
  const auto batch = token_ids.size();
  std::vector<std::size_t> flat;
  flat.reserve(batch * len);
  std::vector<std::size_t> eos_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& ids = token_ids[b];
    if (ids.size() != len) {
      throw ShapeError("encode_text: sequence " + std::to_string(b) + " has length " +
                       std::to_string(ids.size()) + ", expected " + std::to_string(len));
    }
    if (ids.front() != kSosId) {
      throw ContractError("encode_text: sequence " + std::to_string(b) + " does not start with [SOS]");
    }
    for (auto id : ids) {
      if (id >= config_.vocab_size) {
        throw IndexError("encode_text: token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(config_.vocab_size));
      }
    }
    eos_rows[b] = b * len + eos_position(ids);
    flat.insert(flat.end(), ids.begin(), ids.end());
  }
  Tensor x = reshape(select_rows(token_embed_, flat), {batch, len, config_.embed_dim});
  x = x + pos_;
  for (const auto& block : blocks_) x = block(x, causal);
  x = ln_final_(x);
  return {proj_(select_rows(x, eos_rows)), x};
}

}  // namespace irra
