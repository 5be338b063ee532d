#include "desklm/dpo.hpp"

#include <cmath>
#include <stdexcept>

#include "desklm/error.hpp"
#include "desklm/io.hpp"
#include "train_loop.hpp"

namespace desklm {

void DpoTriple::validate() const {
  if (prompt.empty() || chosen.empty() || rejected.empty()) {
    throw std::invalid_argument("DPO triple fields must be non-empty");
  }
  if (chosen == rejected) throw std::invalid_argument("DPO triple has chosen == rejected");
}

std::vector<DpoTriple> parse_dpo_jsonl(std::string_view text, const std::string& source) {
  std::vector<DpoTriple> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw FormatError(where + ": expected a JSON object");
    for (const char* key : {"prompt", "chosen", "rejected"}) {
      if (!j.contains(key)) throw FormatError(where + ": missing key \"" + key + "\"");
      if (!j.at(key).is_string()) throw FormatError(where + ": key \"" + key + "\" must be a string");
    }
    if (j.size() != 3) {
      for (const auto& [k, _] : j.items()) {
        if (k != "prompt" && k != "chosen" && k != "rejected") {
          throw FormatError(where + ": unexpected key \"" + k + "\"");
        }
      }
    }
    DpoTriple t{j["prompt"].get<std::string>(), j["chosen"].get<std::string>(),
                j["rejected"].get<std::string>()};
    try {
      t.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError(where + ": " + e.what());
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<DpoTriple> load_dpo_jsonl(const std::string& path) {
  return parse_dpo_jsonl(read_file(path), path);
}

std::string dpo_to_jsonl(const std::vector<DpoTriple>& triples) {
  std::vector<nlohmann::json> rows;
  rows.reserve(triples.size());
  for (const auto& t : triples) {
    nlohmann::json j;
    j["prompt"] = t.prompt;
    j["chosen"] = t.chosen;
    j["rejected"] = t.rejected;
    rows.push_back(std::move(j));
  }
  return to_jsonl(rows);
}

double implicit_reward_margin(double policy_chosen, double policy_rejected, double ref_chosen,
                              double ref_rejected, double beta) {
  return beta * ((policy_chosen - ref_chosen) - (policy_rejected - ref_rejected));
}

double dpo_loss(double policy_chosen, double policy_rejected, double ref_chosen,
                double ref_rejected, double beta) {
  const double z =
      implicit_reward_margin(policy_chosen, policy_rejected, ref_chosen, ref_rejected, beta);
  // -log sigmoid(z) = log(1 + exp(-z))
  return z >= 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

template <class T>
Tensor<T> dpo_loss(Graph<T>& g, const Tensor<T>& policy_chosen, const Tensor<T>& policy_rejected,
                   T ref_chosen, T ref_rejected, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("dpo_loss: beta must be positive");
  const auto b = static_cast<T>(beta);
  auto z = g.add_scalar(g.scale(g.sub(policy_chosen, policy_rejected), b),
                        b * (ref_rejected - ref_chosen));
  return g.scale(g.log_sigmoid(z), T(-1));
}

void DpoConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta", "must be positive");
  train.validate();
}

DpoExample encode_triple(const BpeVocab& vocab, const DpoTriple& triple, int max_seq_len) {
  if (max_seq_len < 2) throw std::invalid_argument("encode_triple: max_seq_len must be >= 2");
  DpoExample ex;
  ex.prompt.push_back(kBos);
  for (TokenId t : vocab.encode(triple.prompt)) ex.prompt.push_back(t);
  ex.chosen = vocab.encode(triple.chosen);
  ex.chosen.push_back(kEos);
  ex.rejected = vocab.encode(triple.rejected);
  ex.rejected.push_back(kEos);
  // Same policy as encode_pair, applied so that both responses share one prompt.
  const auto limit = static_cast<std::size_t>(max_seq_len);
  const std::size_t room = limit > ex.prompt.size() ? limit - ex.prompt.size() : 1;
  for (auto* r : {&ex.chosen, &ex.rejected})
    if (r->size() > room) r->resize(room);
  const std::size_t longest = std::max(ex.chosen.size(), ex.rejected.size());
  if (ex.prompt.size() + longest > limit) {
    const std::size_t keep = limit - longest;
    ex.prompt.erase(ex.prompt.begin() + 1,
                    ex.prompt.begin() + static_cast<std::ptrdiff_t>(ex.prompt.size() - keep + 1));
  }
  return ex;
}

template <class T>
DpoResult train_dpo(AdaptedModel<T>& policy, const LanguageModel<T>& reference,
                    const std::vector<DpoExample>& examples, const DpoConfig& config, Rng& rng,
                    const StepCallback& on_step) {
  config.validate();
  if (examples.empty()) throw DegenerateBatchError("train_dpo: empty dataset");
  if (!(policy.base().config() == reference.config())) {
    throw DimensionError("train_dpo: policy and reference configurations differ");
  }
  DpoResult result;
  for (const auto& ex : examples) {
    result.ref_chosen.push_back(static_cast<double>(reference.sequence_logprob(ex.prompt, ex.chosen)));
    result.ref_rejected.push_back(
        static_cast<double>(reference.sequence_logprob(ex.prompt, ex.rejected)));
  }
  result.train = detail::run_loop<T>(
      policy.trainable_parameters(), examples.size(), config.train, rng, on_step,
      [&](Graph<T>& g, std::size_t i, Rng& drop) {
        const auto& ex = examples[i];
        const auto opts = policy.options(true, &drop);
        auto pc = policy.base().sequence_logprob(g, ex.prompt, ex.chosen, opts);
        auto pr = policy.base().sequence_logprob(g, ex.prompt, ex.rejected, opts);
        auto loss = dpo_loss(g, pc, pr, static_cast<T>(result.ref_chosen[i]),
                             static_cast<T>(result.ref_rejected[i]), config.beta);
        return std::pair{loss, 2 * ex.prompt.size() + ex.chosen.size() + ex.rejected.size()};
      });
  return result;
}

template <class T>
std::vector<double> reward_margins(const AdaptedModel<T>& policy, const DpoResult& result,
                                   const std::vector<DpoExample>& examples, double beta) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const double pc = policy.base().sequence_logprob(ex.prompt, ex.chosen, &policy);
    const double pr = policy.base().sequence_logprob(ex.prompt, ex.rejected, &policy);
    out.push_back(
        implicit_reward_margin(pc, pr, result.ref_chosen.at(i), result.ref_rejected.at(i), beta));
  }
  return out;
}

#define DESKLM_INSTANTIATE(T)                                                                   \
  template Tensor<T> dpo_loss<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, T, T, double); \
  template DpoResult train_dpo<T>(AdaptedModel<T>&, const LanguageModel<T>&,                   \
                                  const std::vector<DpoExample>&, const DpoConfig&, Rng&,      \
                                  const StepCallback&);                                        \
  template std::vector<double> reward_margins<T>(const AdaptedModel<T>&, const DpoResult&,     \
                                                 const std::vector<DpoExample>&, double);

DESKLM_INSTANTIATE(float)
DESKLM_INSTANTIATE(double)
#undef DESKLM_INSTANTIATE

}  // namespace desklm
