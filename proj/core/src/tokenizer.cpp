#include "desklm/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <stdexcept>

#include "desklm/error.hpp"
#include "desklm/hash.hpp"
#include "desklm/io.hpp"

namespace desklm {

namespace {

constexpr std::string_view kMagic = "desklm-bpe v1";
constexpr std::string_view kSpecialNames[kNumSpecial] = {"<pad>", "<bos>", "<eos>",
                                                         "<mask>", "<unk>"};

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

std::string to_hex(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

std::string from_hex(std::string_view hex, std::size_t line) {
  if (hex.empty() || hex.size() % 2 != 0) {
    throw FormatError("vocab line " + std::to_string(line) + ": bad hex token '" +
                      std::string(hex) + "'");
  }
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(hex.data() + i, hex.data() + i + 2, value, 16);
    if (ec != std::errc() || ptr != hex.data() + i + 2 ||
        (hex[i] >= 'A' && hex[i] <= 'F') || (hex[i + 1] >= 'A' && hex[i + 1] <= 'F')) {
      throw FormatError("vocab line " + std::to_string(line) + ": bad hex token '" +
                        std::string(hex) + "'");
    }
    out.push_back(static_cast<char>(value));
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

}  // namespace

std::vector<std::string_view> pre_segment(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const bool ws = is_space(static_cast<unsigned char>(text[i]));
    std::size_t j = i + 1;
    while (j < text.size() && is_space(static_cast<unsigned char>(text[j])) == ws) ++j;
    out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

BpeVocab::BpeVocab() {
  tokens_.reserve(kFirstMerge);
  for (auto name : kSpecialNames) tokens_.emplace_back(name);
  for (int b = 0; b < kAlphabetSize; ++b) {
    tokens_.emplace_back(1, static_cast<char>(b));
    ids_.emplace(tokens_.back(), static_cast<TokenId>(tokens_.size() - 1));
  }
}

const std::string& BpeVocab::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) +
                            " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

TokenId BpeVocab::find(std::string_view bytes) const {
  auto it = ids_.find(std::string(bytes));
  return it == ids_.end() ? -1 : it->second;
}

TokenId BpeVocab::add_merge(TokenId left, TokenId right) {
  if (is_special(left) || is_special(right)) {
    throw std::invalid_argument("special tokens never participate in merges");
  }
  const Merge m{left, right};
  if (rank_.contains(m)) throw std::invalid_argument("duplicate merge");
  std::string joined = token_bytes(left) + token_bytes(right);
  rank_.emplace(m, merges_.size());
  merges_.push_back(m);
  auto [it, inserted] =
      ids_.emplace(joined, static_cast<TokenId>(tokens_.size()));
  if (inserted) tokens_.push_back(std::move(joined));
  return it->second;
}

void BpeVocab::encode_segment(std::string_view segment,
                              std::vector<TokenId>& out) const {
  std::vector<TokenId> symbols;
  symbols.reserve(segment.size());
  for (unsigned char c : segment) symbols.push_back(kFirstByte + c);
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find({symbols[i], symbols[i + 1]});
      if (it != rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const Merge m = merges_[best_rank];
    const TokenId merged = ids_.at(tokens_[m.first] + tokens_[m.second]);
    std::vector<TokenId> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == m.first && symbols[i + 1] == m.second) {
        next.push_back(merged);
        i += 2;
      } else {
        next.push_back(symbols[i++]);
      }
    }
    symbols.swap(next);
  }
  out.insert(out.end(), symbols.begin(), symbols.end());
}

std::vector<TokenId> BpeVocab::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for (auto seg : pre_segment(text)) encode_segment(seg, out);
  return out;
}

std::string BpeVocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    const auto& bytes = token_bytes(id);
    if (!is_special(id)) out += bytes;
  }
  return out;
}

std::string BpeVocab::serialize() const {
  std::string out(kMagic);
  out += "\nspecials";
  for (auto name : kSpecialNames) {
    out += ' ';
    out += name;
  }
  out += "\nalphabet bytes " + std::to_string(kAlphabetSize);
  out += "\nmerges " + std::to_string(merges_.size()) + "\n";
  for (const auto& [l, r] : merges_) {
    out += to_hex(tokens_[l]);
    out += ' ';
    out += to_hex(tokens_[r]);
    out += '\n';
  }
  return out;
}

BpeVocab BpeVocab::parse(std::string_view text) {
  const auto lines = split_lines(text);
  auto expect = [&](std::size_t i, std::string_view want) {
    if (i >= lines.size() || lines[i] != want) {
      throw FormatError("vocab line " + std::to_string(i + 1) + ": expected '" +
                        std::string(want) + "'");
    }
  };
  expect(0, kMagic);
  expect(1, "specials <pad> <bos> <eos> <mask> <unk>");
  expect(2, "alphabet bytes 256");
  if (lines.size() < 4 || !lines[3].starts_with("merges ")) {
    throw FormatError("vocab line 4: expected 'merges N'");
  }
  std::size_t count = 0;
  {
    auto num = lines[3].substr(7);
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), count);
    if (ec != std::errc() || ptr != num.data() + num.size()) {
      throw FormatError("vocab line 4: bad merge count");
    }
  }
  if (lines.size() != 4 + count) {
    throw FormatError("vocab: header declares " + std::to_string(count) +
                      " merges, file has " + std::to_string(lines.size() - 4));
  }
  BpeVocab vocab;
  for (std::size_t i = 0; i < count; ++i) {
    const auto line = lines[4 + i];
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos) {
      throw FormatError("vocab line " + std::to_string(5 + i) + ": expected two tokens");
    }
    const auto left = from_hex(line.substr(0, sp), 5 + i);
    const auto right = from_hex(line.substr(sp + 1), 5 + i);
    const TokenId l = vocab.find(left), r = vocab.find(right);
    if (l < 0 || r < 0) {
      throw FormatError("vocab line " + std::to_string(5 + i) +
                        ": merge references an unknown token");
    }
    vocab.add_merge(l, r);
  }
  return vocab;
}

void BpeVocab::save(const std::string& path) const { write_file_atomic(path, serialize()); }

BpeVocab BpeVocab::load(const std::string& path) { return parse(read_file(path)); }

std::string BpeVocab::fingerprint() const { return sha256_hex(serialize()); }

BpeVocab train_bpe(std::string_view corpus, std::size_t target_vocab_size) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: empty corpus");
  if (target_vocab_size <= static_cast<std::size_t>(kFirstMerge)) {
    throw std::invalid_argument("train_bpe: target vocabulary size must exceed " +
                                std::to_string(kFirstMerge));
  }

  // Unique segments with their frequencies, in a stable (sorted) order.
  std::map<std::string_view, std::size_t> freq;
  for (auto seg : pre_segment(corpus)) ++freq[seg];
  struct Word {
    std::vector<TokenId> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  words.reserve(freq.size());
  for (const auto& [seg, count] : freq) {
    Word w{{}, count};
    for (unsigned char c : seg) w.symbols.push_back(kFirstByte + c);
    words.push_back(std::move(w));
  }

  BpeVocab vocab;
  while (vocab.size() < target_vocab_size) {
    std::map<BpeVocab::Merge, std::size_t> pairs;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i)
        pairs[{w.symbols[i], w.symbols[i + 1]}] += w.count;

    const BpeVocab::Merge* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pairs) {
      if (count < 2) continue;
      if (!best || count > best_count) {
        best = &pair;
        best_count = count;
        continue;
      }
      if (count == best_count) {
        const auto key = [&](const BpeVocab::Merge& m) {
          return std::pair<const std::string&, const std::string&>(
              vocab.token_bytes(m.first), vocab.token_bytes(m.second));
        };
        if (key(pair) < key(*best)) best = &pair;
      }
    }
    if (!best) break;

    const BpeVocab::Merge m = *best;
    const TokenId merged = vocab.add_merge(m.first, m.second);
    for (auto& w : words) {
      auto& s = w.symbols;
      std::size_t out = 0;
      for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == m.first && s[i + 1] == m.second) {
          s[out++] = merged;
          i += 2;
        } else {
          s[out++] = s[i++];
        }
      }
      s.resize(out);
    }
  }
  return vocab;
}

}  // namespace desklm
