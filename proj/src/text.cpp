#include "irra/data.hpp"
#include "irra/errors.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace irra {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      words.emplace_back(1, raw);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

Vocab::Vocab() : tokens_{"[PAD]", "[SOS]", "[EOS]", "[MASK]", "[UNK]"} {
  for (TokenId i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = i;
}

Vocab Vocab::build(std::span<const std::string> texts) {
  std::set<std::string> distinct;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) distinct.insert(std::move(w));
  }
  const std::vector<std::string> words(distinct.begin(), distinct.end());
  return from_words(words);
}

Vocab Vocab::from_words(std::span<const std::string> words) {
  Vocab v;
  for (const auto& w : words) {
    if (v.index_.count(w)) throw ConfigError("duplicate vocabulary entry '" + w + "'");
    v.index_[w] = v.tokens_.size();
    v.tokens_.push_back(w);
  }
  return v;
}

TokenId Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw IndexError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::string> Vocab::words() const {
  return {tokens_.begin() + kNumSpecialTokens, tokens_.end()};
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) throw ContractError("tokenize: max_len must be at least 3");
  const auto words = split_words(text);
  if (words.empty()) throw ContractError("tokenize: empty text");
  std::vector<TokenId> ids;
  ids.reserve(max_len);
  ids.push_back(kSosId);
  const auto content = std::min(words.size(), max_len - 2);
  for (std::size_t i = 0; i < content; ++i) ids.push_back(vocab.id(words[i]));
  ids.push_back(kEosId);
  ids.resize(max_len, kPadId);
  return ids;
}

MaskedCaption mask_tokens(std::span<const TokenId> ids, std::size_t vocab_size, Rng& rng,
                          const MaskingConfig& config) {
  MaskedCaption out;
  out.input_ids.assign(ids.begin(), ids.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool can_randomize = vocab_size > kNumSpecialTokens;
  std::uniform_int_distribution<TokenId> random_word(kNumSpecialTokens,
                                                     can_randomize ? vocab_size - 1
                                                                   : kNumSpecialTokens);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!is_maskable(ids[i])) continue;
    if (!(unit(rng) < config.mask_prob)) continue;
    out.masked.positions.push_back(i);
    out.masked.original_ids.push_back(ids[i]);
    const double r = unit(rng);
    if (r < config.replace_with_mask) {
      out.input_ids[i] = kMaskId;
    } else if (r < config.replace_with_mask + config.replace_with_random) {
      out.input_ids[i] = can_randomize ? random_word(rng) : kMaskId;
    }
  }
  return out;
}

}  // namespace irra
