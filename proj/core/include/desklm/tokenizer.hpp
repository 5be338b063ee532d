#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace desklm {

using TokenId = std::int32_t;

/// Reserved low ids. Byte b maps to kFirstByte + b; learned merges follow.
enum SpecialToken : TokenId {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kMask = 3,
  kUnk = 4,
};

inline constexpr TokenId kNumSpecial = 5;
inline constexpr TokenId kFirstByte = kNumSpecial;
inline constexpr TokenId kAlphabetSize = 256;
inline constexpr TokenId kFirstMerge = kFirstByte + kAlphabetSize;

/// Byte-level BPE vocabulary: specials, the 256-byte alphabet, and an ordered
/// merge list. Merges are symbol-string based, so two merges that spell the
/// same bytes share one token id.
class BpeVocab {
 public:
  using Merge = std::pair<TokenId, TokenId>;

  BpeVocab();

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<Merge>& merges() const noexcept { return merges_; }
  const std::string& token_bytes(TokenId id) const;
  bool is_special(TokenId id) const noexcept { return id >= 0 && id < kNumSpecial; }
  /// Id of the token spelling exactly `bytes`, or -1.
  TokenId find(std::string_view bytes) const;

  /// Appends a merge; returns the id of the (possibly pre-existing) token
  /// spelling the concatenation.
  TokenId add_merge(TokenId left, TokenId right);

  std::vector<TokenId> encode(std::string_view text) const;
  /// Concatenates token bytes; special tokens contribute nothing. Throws
  /// std::out_of_range for ids outside the vocabulary.
  std::string decode(std::span<const TokenId> ids) const;

  /// Line-oriented text form; parse(serialize()) round-trips bit-exactly.
  std::string serialize() const;
  static BpeVocab parse(std::string_view text);

  void save(const std::string& path) const;
  static BpeVocab load(const std::string& path);

  /// SHA-256 (hex) of the serialized form.
  std::string fingerprint() const;

  friend bool operator==(const BpeVocab& a, const BpeVocab& b) {
    return a.merges_ == b.merges_;
  }

 private:
  void encode_segment(std::string_view segment, std::vector<TokenId>& out) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<Merge> merges_;
  std::map<Merge, std::size_t> rank_;
};

/// Splits text into maximal runs of ASCII whitespace and non-whitespace.
/// Merges never cross these boundaries.
std::vector<std::string_view> pre_segment(std::string_view text);

/// Greedy BPE training: repeatedly merges the most frequent adjacent pair
/// (ties broken by the lexicographically smallest (left, right) byte strings)
/// until the vocabulary reaches `target_vocab_size` or no pair occurs at least
/// twice. Throws std::invalid_argument for an empty corpus or a target that
/// leaves no room for merges.
BpeVocab train_bpe(std::string_view corpus, std::size_t target_vocab_size);

}  // namespace desklm
