#pragma once

#include "irra/fusion.hpp"
#include "irra/image.hpp"
#include "irra/nn.hpp"
#include "irra/tokens.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace irra {

// ---------------------------------------------------------------------------
// Vocabulary and tokenizer

/// Lower-cases and splits on whitespace; punctuation characters become
/// tokens of their own.
std::vector<std::string> split_words(std::string_view text);

/// Token <-> id bijection with five reserved ids (see tokens.hpp).
class Vocab {
 public:
  Vocab();
  /// Specials followed by the sorted distinct words of `texts`.
  static Vocab build(std::span<const std::string> texts);
  /// Specials followed by `words` in the given order.
  static Vocab from_words(std::span<const std::string> words);

  std::size_t size() const { return tokens_.size(); }
  /// Id of `word`, or [UNK].
  TokenId id(const std::string& word) const;
  const std::string& token(TokenId id) const;
  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  /// Non-reserved words in id order.
  std::vector<std::string> words() const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> index_;
};

/// [SOS] words... [EOS] [PAD]..., exactly `max_len` ids. Content beyond
/// max_len - 2 words is dropped so that [EOS] stays the last content token.
/// Throws ContractError on empty text or max_len < 3.
std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len);

// ---------------------------------------------------------------------------
// Masked language modelling

struct MaskingConfig {
  double mask_prob = 0.15;
  /// Of the selected tokens: replaced by [MASK], replaced by a random word;
  /// the remainder is left unchanged.
  double replace_with_mask = 0.8;
  double replace_with_random = 0.1;
};

struct MaskedCaption {
  std::vector<TokenId> input_ids;
  MaskedPositions masked;
};

/// True for ids that may be selected for masking.
inline bool is_maskable(TokenId id) {
  return id != kPadId && id != kSosId && id != kEosId && id != kMaskId;
}

/// BERT-style corruption of one caption. Every selected position is
/// recorded with its original id, including those left unchanged.
MaskedCaption mask_tokens(std::span<const TokenId> ids, std::size_t vocab_size, Rng& rng,
                          const MaskingConfig& config = {});

// ---------------------------------------------------------------------------
// Image augmentation

struct AugmentConfig {
  double flip_prob = 0.5;
  double crop_prob = 1.0;
  std::size_t crop_padding = 2;
  double erase_prob = 0.5;
  double erase_min_area = 0.02;
  double erase_max_area = 0.2;
  double erase_min_aspect = 0.3;

  static AugmentConfig disabled() { return {0.0, 0.0, 0, 0.0, 0.02, 0.2, 0.3}; }
};

Image flip_horizontal(const Image& image);

/// Horizontal flip, zero-pad + random crop back to size, then random
/// erasing with uniform [0, 1) fill, in that order.
Image augment_image(const Image& image, Rng& rng, const AugmentConfig& config = {});

// ---------------------------------------------------------------------------
// Annotations

struct PersonAttributes {
  std::size_t upper_color = 0;
  std::size_t lower_color = 0;
  std::size_t garment = 0;
  std::size_t accessory = 0;

  bool operator==(const PersonAttributes&) const = default;
};

struct SyntheticImageRef {
  std::string image_key;
  PersonAttributes attributes;

  bool operator==(const SyntheticImageRef&) const = default;
};

/// One image with its identity and captions. Exactly one of img_path and
/// synthetic is set.
struct AnnotationRecord {
  std::size_t identity_id = 0;
  std::string img_path;
  std::optional<SyntheticImageRef> synthetic;
  std::vector<std::string> captions;
  std::string split = "train";

  bool operator==(const AnnotationRecord&) const = default;
};

/// Parses a JSON array of {"id", "img_path" | "synthetic", "captions",
/// "split"}. Throws IoError when unreadable and ParseError naming the record
/// index on malformed content.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
std::vector<AnnotationRecord> parse_annotations(std::string_view json_text);
void save_annotations(const std::filesystem::path& path, std::span<const AnnotationRecord> records);
std::string dump_annotations(std::span<const AnnotationRecord> records);

std::map<std::string, std::vector<AnnotationRecord>> partition_by_split(
    std::span<const AnnotationRecord> records);

/// Throws ContractError on the first record violating the record invariants.
void validate_records(std::span<const AnnotationRecord> records);

// ---------------------------------------------------------------------------
// Synthetic identities

inline constexpr std::size_t kNumColors = 8;
inline constexpr std::size_t kNumGarments = 4;
inline constexpr std::size_t kNumAccessories = 4;

const std::string& color_name(std::size_t c);
const std::string& garment_name(std::size_t g);
const std::string& accessory_name(std::size_t a);
/// Inverses of the name functions; throw ParseError on unknown names.
std::size_t parse_color(const std::string& name);
std::size_t parse_garment(const std::string& name);
std::size_t parse_accessory(const std::string& name);

struct SyntheticConfig {
  std::size_t num_identities = 32;
  std::size_t images_per_id = 4;
  std::size_t captions_per_image = 2;
  /// Images per identity placed in the "val" split (clamped so that every
  /// identity keeps at least one training image).
  std::size_t val_images_per_id = 1;
  std::size_t height = 32;
  std::size_t width = 16;
  std::size_t channels = 3;
  double noise_std = 0.1;
};

/// Records plus the pixel arrays they reference by key.
struct Dataset {
  std::vector<AnnotationRecord> records;
  std::map<std::string, Image> images;

  const Image& image_for(const AnnotationRecord& record) const;
};

/// Renders the attributes of one person into an image (without noise).
Image render_person(const PersonAttributes& attrs, std::size_t height, std::size_t width,
                    std::size_t channels);
/// Caption number `template_index` describing `attrs`.
std::string describe_person(const PersonAttributes& attrs, std::size_t template_index);

Dataset generate_synthetic(const SyntheticConfig& config, Rng& rng);

/// Checks record invariants and that captions, identities and pixels all
/// agree with each record's attributes. Throws ContractError on violation.
void validate_synthetic(const Dataset& dataset);

/// Writes `<dir>/annotations.json` and `<dir>/images.bin`.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
/// Loads annotations; synthetic images come from `images.bin` next to the
/// annotation file and img_path entries are read as PNG relative to it.
Dataset load_dataset(const std::filesystem::path& annotation_path);

// ---------------------------------------------------------------------------
// PNG

Image load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& image);

}  // namespace irra
