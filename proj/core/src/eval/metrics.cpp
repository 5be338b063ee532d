#include "desklm/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "desklm/error.hpp"
#include "desklm/io.hpp"

namespace desklm::eval {

double PrfCounts::precision() const {
  return predicted == 0 ? 0.0 : 100.0 * static_cast<double>(true_positive) / predicted;
}

double PrfCounts::recall() const {
  return gold == 0 ? 0.0 : 100.0 * static_cast<double>(true_positive) / gold;
}

double PrfCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

namespace {

std::set<Tuple> as_set(const TupleSet& s) { return {s.begin(), s.end()}; }

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": " + std::to_string(a) + " gold vs " +
                         std::to_string(b) + " predicted items");
  }
}

}  // namespace

PrfCounts tuple_counts(const std::vector<TupleSet>& gold, const std::vector<TupleSet>& pred) {
  check_aligned(gold.size(), pred.size(), "tuple F1");
  PrfCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = as_set(gold[i]);
    const auto p = as_set(pred[i]);
    c.gold += g.size();
    c.predicted += p.size();
    for (const auto& t : p) c.true_positive += g.count(t);
  }
  return c;
}

double micro_f1(const std::vector<TupleSet>& gold, const std::vector<TupleSet>& pred) {
  return tuple_counts(gold, pred).f1();
}

double tuple_macro_f1(const std::vector<TupleSet>& gold, const std::vector<TupleSet>& pred,
                      std::size_t label_index, const std::vector<std::string>& labels) {
  check_aligned(gold.size(), pred.size(), "tuple macro-F1");
  if (labels.empty()) throw std::invalid_argument("tuple macro-F1: empty label set");
  std::map<std::string, PrfCounts> per;
  for (const auto& l : labels) per[l];
  auto label_of = [&](const Tuple& t) -> PrfCounts& {
    if (label_index >= t.size()) throw DimensionError("tuple macro-F1: tuple too short");
    auto it = per.find(t[label_index]);
    if (it == per.end()) {
      throw std::invalid_argument("tuple macro-F1: undeclared label '" + t[label_index] + "'");
    }
    return it->second;
  };
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = as_set(gold[i]);
    const auto p = as_set(pred[i]);
    for (const auto& t : g) ++label_of(t).gold;
    for (const auto& t : p) {
      auto& c = label_of(t);
      ++c.predicted;
      c.true_positive += g.count(t);
    }
  }
  double sum = 0.0;
  for (const auto& l : labels) sum += per.at(l).f1();
  return sum / static_cast<double>(labels.size());
}

double micro_f1_strict(const std::vector<std::vector<SpanEntity>>& gold,
                       const std::vector<std::vector<SpanEntity>>& pred) {
  auto convert = [](const std::vector<std::vector<SpanEntity>>& docs) {
    std::vector<TupleSet> out;
    for (const auto& d : docs) {
      TupleSet s;
      for (const auto& e : d) {
        if (e.start >= e.end || e.category.empty()) {
          throw std::invalid_argument("span entity needs start < end and a category");
        }
        s.push_back({std::to_string(e.start), std::to_string(e.end), e.category});
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  return micro_f1(convert(gold), convert(pred));
}

double triple_f1(const std::vector<std::vector<SpoTriple>>& gold,
                 const std::vector<std::vector<SpoTriple>>& pred) {
  auto convert = [](const std::vector<std::vector<SpoTriple>>& docs) {
    std::vector<TupleSet> out;
    for (const auto& d : docs) {
      TupleSet s;
      for (const auto& t : d) s.push_back({t.subject, t.predicate, t.object});
      out.push_back(std::move(s));
    }
    return out;
  };
  return micro_f1(convert(gold), convert(pred));
}

double macro_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                const std::vector<std::string>& labels) {
  check_aligned(gold.size(), pred.size(), "macro-F1");
  if (labels.empty()) throw std::invalid_argument("macro-F1: empty label set");
  std::map<std::string, PrfCounts> per;
  for (const auto& l : labels) per[l];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto g = per.find(gold[i]);
    auto p = per.find(pred[i]);
    if (g == per.end()) throw std::invalid_argument("macro-F1: gold label '" + gold[i] + "' not declared");
    if (p == per.end()) throw std::invalid_argument("macro-F1: predicted label '" + pred[i] + "' not declared");
    ++g->second.gold;
    ++p->second.predicted;
    if (gold[i] == pred[i]) ++p->second.true_positive;
  }
  double sum = 0.0;
  for (const auto& l : labels) sum += per.at(l).f1();
  return sum / static_cast<double>(labels.size());
}

double accuracy(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
  check_aligned(gold.size(), pred.size(), "accuracy");
  if (gold.empty()) throw DegenerateBatchError("accuracy: no items");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += gold[i] == pred[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gold.size());
}

double mrr_at_10(const std::vector<std::vector<std::string>>& rankings,
                 const std::vector<std::string>& relevant) {
  check_aligned(relevant.size(), rankings.size(), "MRR@10");
  if (relevant.empty()) throw DegenerateBatchError("MRR@10: no queries");
  double sum = 0.0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& r = rankings[q];
    if (std::set<std::string>(r.begin(), r.end()).size() != r.size()) {
      throw std::invalid_argument("MRR@10: ranking " + std::to_string(q) + " repeats an id");
    }
    for (std::size_t i = 0; i < r.size() && i < 10; ++i) {
      if (r[i] == relevant[q]) {
        sum += 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
  }
  return 100.0 * sum / static_cast<double>(relevant.size());
}

std::vector<std::string> tokenize(std::string_view text, TokenMode mode) {
  if (mode == TokenMode::kAuto) {
    const bool ascii = std::all_of(text.begin(), text.end(),
                                   [](char c) { return static_cast<unsigned char>(c) < 0x80; });
    mode = ascii ? TokenMode::kWord : TokenMode::kChar;
  }
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  std::vector<std::string> out;
  if (mode == TokenMode::kChar) {
    for (auto ch : utf8_chars(text))
      if (!(ch.size() == 1 && space(ch[0]))) out.emplace_back(ch);
    return out;
  }
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

namespace {

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(std::string_view candidate, std::string_view reference, TokenMode mode) {
  const auto ref = tokenize(reference, mode);
  if (ref.empty()) throw std::invalid_argument("ROUGE-L: empty reference");
  const auto cand = tokenize(candidate, mode);
  if (cand.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  return 100.0 * 2.0 * p * r / (p + r);
}

double rouge_score(const std::vector<std::string>& candidates,
                   const std::vector<std::string>& references, TokenMode mode) {
  check_aligned(references.size(), candidates.size(), "ROUGE-L");
  if (references.empty()) throw DegenerateBatchError("ROUGE-L: no pairs");
  double sum = 0.0;
  for (std::size_t i = 0; i < references.size(); ++i) sum += rouge_l(candidates[i], references[i], mode);
  return sum / static_cast<double>(references.size());
}

double sentence_bleu(std::string_view candidate, std::string_view reference, TokenMode mode) {
  const auto cand = tokenize(candidate, mode);
  const auto ref = tokenize(reference, mode);
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i)
      ++ref_counts[std::vector<std::string>(ref.begin() + static_cast<std::ptrdiff_t>(i),
                                            ref.begin() + static_cast<std::ptrdiff_t>(i + n))];
    std::map<std::vector<std::string>, std::size_t> cand_counts;
    std::size_t total = 0;
    for (std::size_t i = 0; i + n <= cand.size(); ++i, ++total)
      ++cand_counts[std::vector<std::string>(cand.begin() + static_cast<std::ptrdiff_t>(i),
                                             cand.begin() + static_cast<std::ptrdiff_t>(i + n))];
    std::size_t matches = 0;
    for (const auto& [gram, count] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(count, it->second);
    }
    log_sum += std::log((static_cast<double>(matches) + 1.0) / (static_cast<double>(total) + 1.0));
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double entity_f1(const std::vector<std::string>& candidates,
                 const std::vector<std::string>& references,
                 const std::vector<std::string>& lexicon) {
  check_aligned(references.size(), candidates.size(), "entity F1");
  if (lexicon.empty()) throw std::invalid_argument("entity F1: empty lexicon");
  std::vector<TupleSet> gold, pred;
  for (std::size_t i = 0; i < references.size(); ++i) {
    TupleSet g, p;
    for (const auto& e : lexicon) {
      if (e.empty()) continue;
      if (references[i].find(e) != std::string::npos) g.push_back({e});
      if (candidates[i].find(e) != std::string::npos) p.push_back({e});
    }
    gold.push_back(std::move(g));
    pred.push_back(std::move(p));
  }
  return micro_f1(gold, pred);
}

BleuEntity bleu_entity(const std::vector<std::string>& candidates,
                       const std::vector<std::string>& references,
                       const std::vector<std::string>& lexicon, TokenMode mode) {
  check_aligned(references.size(), candidates.size(), "BLEU");
  if (references.empty()) throw DegenerateBatchError("BLEU: no pairs");
  BleuEntity out;
  for (std::size_t i = 0; i < references.size(); ++i)
    out.bleu += sentence_bleu(candidates[i], references[i], mode);
  out.bleu /= static_cast<double>(references.size());
  out.entity_f1 = entity_f1(candidates, references, lexicon);
  return out;
}

double mcq_accuracy(const std::vector<std::string>& answers,
                    const std::vector<std::string>& predictions) {
  auto check = [](const std::string& o) {
    if (o != "A" && o != "B" && o != "C" && o != "D") {
      throw std::invalid_argument("MCQ option '" + o + "' outside {A, B, C, D}");
    }
  };
  for (const auto& a : answers) check(a);
  for (const auto& p : predictions) check(p);
  return accuracy(answers, predictions);
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (auto ch : utf8_chars(text)) {
    if (ch.size() == 3) {
      const auto b0 = static_cast<unsigned char>(ch[0]);
      const auto b1 = static_cast<unsigned char>(ch[1]);
      const auto b2 = static_cast<unsigned char>(ch[2]);
      const unsigned cp = ((b0 & 0x0fu) << 12) | ((b1 & 0x3fu) << 6) | (b2 & 0x3fu);
      if (cp >= 0xff01 && cp <= 0xff5e) {
        out.push_back(static_cast<char>(cp - 0xff01 + 0x21));
        continue;
      }
      if (cp == 0x3000) {
        out.push_back(' ');
        continue;
      }
    }
    out.append(ch);
  }
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

}  // namespace desklm::eval
