#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace desklm::eval {

/// All scores are on the 0-100 scale.

using Tuple = std::vector<std::string>;
/// Tuples of one document; duplicates count once.
using TupleSet = std::vector<Tuple>;

struct PrfCounts {
  std::size_t true_positive = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  double precision() const;
  double recall() const;
  /// 2PR / (P + R), or 0 when P + R == 0. Scaled to 0-100.
  double f1() const;
};

/// Exact-match counts pooled over documents; gold[i] and pred[i] belong to
/// the same document. Throws DimensionError when the lengths differ.
PrfCounts tuple_counts(const std::vector<TupleSet>& gold, const std::vector<TupleSet>& pred);
double micro_f1(const std::vector<TupleSet>& gold, const std::vector<TupleSet>& pred);

/// Mean over `labels` of the micro-F1 restricted to tuples whose element
/// `label_index` equals the label. A label absent from both sides scores 0;
/// a tuple carrying an undeclared label throws std::invalid_argument.
double tuple_macro_f1(const std::vector<TupleSet>& gold, const std::vector<TupleSet>& pred,
                      std::size_t label_index, const std::vector<std::string>& labels);

struct SpanEntity {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string category;
};

struct SpoTriple {
  std::string subject;
  std::string predicate;
  std::string object;
};

/// Strict span F1: (start, end, category) must match exactly.
double micro_f1_strict(const std::vector<std::vector<SpanEntity>>& gold,
                       const std::vector<std::vector<SpanEntity>>& pred);
double triple_f1(const std::vector<std::vector<SpoTriple>>& gold,
                 const std::vector<std::vector<SpoTriple>>& pred);

/// Per-label F1 averaged over `labels`; absent labels count as 0. Labels
/// outside the set, on either side, throw std::invalid_argument.
double macro_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                const std::vector<std::string>& labels);
double accuracy(const std::vector<std::string>& gold, const std::vector<std::string>& pred);

/// Mean of 1/rank of the relevant id within the first 10 entries (0 when
/// absent). A ranking that repeats an id throws std::invalid_argument.
double mrr_at_10(const std::vector<std::vector<std::string>>& rankings,
                 const std::vector<std::string>& relevant);

enum class TokenMode {
  kChar,  // code points, whitespace dropped
  kWord,  // whitespace-separated
  kAuto,  // kChar when the text has any non-ASCII byte, else kWord
};

std::vector<std::string> tokenize(std::string_view text, TokenMode mode);

/// ROUGE-L F (beta = 1) of one pair. Throws std::invalid_argument for an
/// empty reference.
double rouge_l(std::string_view candidate, std::string_view reference,
               TokenMode mode = TokenMode::kAuto);
double rouge_score(const std::vector<std::string>& candidates,
                   const std::vector<std::string>& references, TokenMode mode = TokenMode::kAuto);

/// Sentence BLEU-4: brevity penalty times the geometric mean of
/// (matches_n + 1) / (total_n + 1) for n = 1..4.
double sentence_bleu(std::string_view candidate, std::string_view reference,
                     TokenMode mode = TokenMode::kAuto);

/// Micro-F1 of lexicon entries found (by substring) in candidates versus
/// references.
double entity_f1(const std::vector<std::string>& candidates,
                 const std::vector<std::string>& references,
                 const std::vector<std::string>& lexicon);

struct BleuEntity {
  double bleu = 0.0;
  double entity_f1 = 0.0;
};

BleuEntity bleu_entity(const std::vector<std::string>& candidates,
                       const std::vector<std::string>& references,
                       const std::vector<std::string>& lexicon, TokenMode mode = TokenMode::kAuto);

/// Exact-match accuracy over options A-D; anything else throws
/// std::invalid_argument.
double mcq_accuracy(const std::vector<std::string>& answers,
                    const std::vector<std::string>& predictions);

/// Optional text normalization: full-width ASCII forms and U+3000 to their
/// ASCII counterparts, then ASCII lower-casing.
std::string normalize_text(std::string_view text);

}  // namespace desklm::eval
