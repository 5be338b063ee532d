#include "desklm/training.hpp"

#include <stdexcept>

#include "desklm/error.hpp"
#include "train_loop.hpp"

namespace desklm {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps", "must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (accumulation_steps < 1) throw ConfigError("accumulation_steps", "must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("warmup_ratio", "must be in [0, 1)");
  }
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) throw ConfigError("mask_prob", "must be in (0, 1]");
}

long TrainConfig::total_steps(std::size_t examples) const {
  if (max_steps > 0) return max_steps;
  const auto b = static_cast<std::size_t>(batch_size);
  const auto k = static_cast<std::size_t>(accumulation_steps);
  const std::size_t micro = (examples + b - 1) / b;
  return static_cast<long>((micro + k - 1) / k) * epochs;
}

std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

PairIds encode_pair(const BpeVocab& vocab, std::string_view prompt, std::string_view response,
                    int max_seq_len) {
  if (max_seq_len < 2) throw std::invalid_argument("encode_pair: max_seq_len must be >= 2");
  PairIds out;
  out.prompt.push_back(kBos);
  for (TokenId t : vocab.encode(prompt)) out.prompt.push_back(t);
  out.response = vocab.encode(response);
  out.response.push_back(kEos);
  const auto limit = static_cast<std::size_t>(max_seq_len);
  if (out.prompt.size() + out.response.size() > limit) {
    const std::size_t room = limit > out.prompt.size() ? limit - out.prompt.size() : 1;
    if (out.response.size() > room) out.response.resize(std::max<std::size_t>(room, 1));
  }
  if (out.prompt.size() + out.response.size() > limit) {
    const std::size_t keep = limit - out.response.size();  // >= 1 since response is 1 token
    out.prompt.erase(out.prompt.begin() + 1,
                     out.prompt.begin() + static_cast<std::ptrdiff_t>(out.prompt.size() - keep + 1));
  }
  return out;
}

std::vector<std::vector<TokenId>> chunk_corpus(const BpeVocab& vocab,
                                               const std::vector<std::string>& lines,
                                               std::size_t window) {
  if (window < 2) throw std::invalid_argument("chunk_corpus: window must be >= 2");
  std::vector<TokenId> stream;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    for (TokenId t : vocab.encode(line)) stream.push_back(t);
    stream.push_back(kEos);
  }
  std::vector<std::vector<TokenId>> out;
  for (std::size_t i = 0; i < stream.size(); i += window) {
    const std::size_t end = std::min(stream.size(), i + window);
    if (end - i < 2) break;
    out.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(i),
                     stream.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}


template <class T>
TrainResult pretrain(LanguageModel<T>& model, const std::vector<std::vector<TokenId>>& sequences,
                     Objective objective, const TrainConfig& config, Rng& rng,
                     const StepCallback& on_step) {
  for (const auto& s : sequences) {
    if (s.size() < 2) throw DimensionError("pretrain: every sequence needs at least 2 tokens");
  }
  model.params().set_requires_grad(true);
  Rng masking = rng.fork("mask");
  auto params = model.params().entries();
  return detail::run_loop<T>(params, sequences.size(), config, rng, on_step,
                     [&](Graph<T>& g, std::size_t i, Rng& drop) {
                       ForwardOptions<T> opts{true, &drop, nullptr};
                       const auto& ids = sequences[i];
                       if (objective == Objective::kMlm) {
                         auto batch = make_mlm_batch(ids, config.mask_prob, masking);
                         return std::pair{model.mlm_loss(g, batch, opts), ids.size()};
                       }
                       return std::pair{model.causal_lm_loss(g, ids, opts), ids.size()};
                     });
}

template <class T>
TrainResult train_sft(AdaptedModel<T>& model, const std::vector<PairIds>& examples,
                      const TrainConfig& config, Rng& rng, const StepCallback& on_step) {
  return detail::run_loop<T>(model.trainable_parameters(), examples.size(), config, rng, on_step,
                     [&](Graph<T>& g, std::size_t i, Rng& drop) {
                       const auto& ex = examples[i];
                       auto loss = model.base().response_nll(g, ex.prompt, ex.response,
                                                             model.options(true, &drop),
                                                             Reduction::kMean);
                       return std::pair{loss, ex.prompt.size() + ex.response.size()};
                     });
}

template <class T>
double mean_causal_loss(const LanguageModel<T>& model,
                        const std::vector<std::vector<TokenId>>& sequences,
                        const ProjectionHook<T>* hook) {
  double sum = 0.0;
  std::size_t count = 0;
  ForwardOptions<T> opts;
  opts.hook = hook;
  for (const auto& s : sequences) {
    if (s.size() < 2) continue;
    Graph<T> g(GradMode::kDisabled);
    sum += static_cast<double>(model.causal_lm_loss(g, s, opts).item());
    ++count;
  }
  if (count == 0) throw DegenerateBatchError("mean_causal_loss: no sequence has 2 tokens");
  return sum / static_cast<double>(count);
}

#define DESKLM_INSTANTIATE(T)                                                                  \
  template TrainResult pretrain<T>(LanguageModel<T>&, const std::vector<std::vector<TokenId>>&, \
                                   Objective, const TrainConfig&, Rng&, const StepCallback&);  \
  template TrainResult train_sft<T>(AdaptedModel<T>&, const std::vector<PairIds>&,             \
                                    const TrainConfig&, Rng&, const StepCallback&);            \
  template double mean_causal_loss<T>(const LanguageModel<T>&,                                 \
                                      const std::vector<std::vector<TokenId>>&,                \
                                      const ProjectionHook<T>*);

DESKLM_INSTANTIATE(float)
DESKLM_INSTANTIATE(double)
#undef DESKLM_INSTANTIATE

}  // namespace desklm
