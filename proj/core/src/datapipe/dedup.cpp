#include <algorithm>
#include <limits>
#include <unordered_map>

#include "desklm/datapipe.hpp"
#include "desklm/error.hpp"
#include "desklm/hash.hpp"
#include "desklm/io.hpp"
#include "desklm/rng.hpp"

namespace desklm::data {

void DedupConfig::validate() const {
  if (shingle_size < 1) throw ConfigError("shingle_size", "must be >= 1");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("threshold", "must be in (0, 1]");
  if (permutations < 1) throw ConfigError("permutations", "must be >= 1");
  if (bands < 1 || permutations % bands != 0) {
    throw ConfigError("bands", "must divide permutations");
  }
}

std::vector<std::string> shingles(std::string_view text, std::size_t n) {
  const auto chars = utf8_chars(text);
  std::vector<std::string> out;
  if (chars.empty()) return out;
  if (chars.size() < n) {
    out.emplace_back(text);
    return out;
  }
  out.reserve(chars.size() - n + 1);
  for (std::size_t i = 0; i + n <= chars.size(); ++i) {
    const char* begin = chars[i].data();
    const char* end = chars[i + n - 1].data() + chars[i + n - 1].size();
    out.emplace_back(begin, end);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint64_t> minhash(const std::vector<std::string>& shingle_set,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<std::uint64_t> sig(seeds.size(), std::numeric_limits<std::uint64_t>::max());
  for (const auto& s : shingle_set) {
    const std::uint64_t h = fnv1a(s);
    for (std::size_t p = 0; p < seeds.size(); ++p) sig[p] = std::min(sig[p], splitmix64(h ^ seeds[p]));
  }
  return sig;
}

}  // namespace

DedupResult dedup(const std::vector<RawDocument>& docs, const DedupConfig& config) {
  config.validate();
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(config.permutations));
  for (std::size_t p = 0; p < seeds.size(); ++p) seeds[p] = splitmix64(config.seed + p);
  const auto rows = static_cast<std::size_t>(config.permutations / config.bands);

  DedupResult result;
  std::unordered_map<std::string, std::size_t> by_hash;  // content hash -> kept index
  std::vector<std::vector<std::string>> kept_shingles;
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> buckets(
      static_cast<std::size_t>(config.bands));

  for (const auto& doc : docs) {
    const auto digest = sha256_hex(doc.text);
    if (auto it = by_hash.find(digest); it != by_hash.end()) {
      result.removed.push_back({doc.id, result.kept[it->second].id, "exact-duplicate", 1.0});
      continue;
    }
    auto sh = shingles(doc.text, config.shingle_size);
    const auto sig = minhash(sh, seeds);
    std::vector<std::uint64_t> keys(buckets.size());
    std::vector<std::size_t> candidates;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      std::uint64_t key = 0x9e3779b97f4a7c15ULL ^ b;
      for (std::size_t r = 0; r < rows; ++r) key = splitmix64(key ^ sig[b * rows + r]);
      keys[b] = key;
      if (auto it = buckets[b].find(key); it != buckets[b].end()) {
        candidates.insert(candidates.end(), it->second.begin(), it->second.end());
      }
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    bool removed = false;
    for (std::size_t c : candidates) {
      const double j = jaccard(sh, kept_shingles[c]);
      if (j >= config.threshold) {
        result.removed.push_back({doc.id, result.kept[c].id, "near-duplicate", j});
        removed = true;
        break;
      }
    }
    if (removed) continue;
    const std::size_t index = result.kept.size();
    by_hash.emplace(digest, index);
    for (std::size_t b = 0; b < buckets.size(); ++b) buckets[b][keys[b]].push_back(index);
    kept_shingles.push_back(std::move(sh));
    result.kept.push_back(doc);
  }
  return result;
}

}  // namespace desklm::data
