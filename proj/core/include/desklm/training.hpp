#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "desklm/lora.hpp"
#include "desklm/model.hpp"
#include "desklm/optim.hpp"
#include "desklm/rng.hpp"
#include "desklm/tokenizer.hpp"

namespace desklm {

enum class Objective {
  kCausal,
  kMlm,
};

struct TrainConfig {
  int epochs = 1;
  /// Caps the number of optimizer steps; 0 derives it from the epochs.
  long max_steps = 0;
  int batch_size = 1;
  int accumulation_steps = 1;
  double lr = 1e-3;
  double warmup_ratio = 0.01;
  ScheduleKind schedule = ScheduleKind::kCosine;
  AdamWConfig adamw;
  /// Selection probability for the masked-LM objective.
  double mask_prob = 0.15;

  void validate() const;
  /// Optimizer steps implied by `examples` training examples.
  long total_steps(std::size_t examples) const;
};

/// Called once per optimizer step; returning false stops training early.
using StepCallback = std::function<bool(const StepEvent&)>;

struct TrainResult {
  long steps = 0;
  double final_loss = 0.0;
  bool stopped_early = false;
};

/// Prompt and response token ids, already fitted to a context window.
struct PairIds {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
};

/// [BOS] + encode(prompt) and encode(response) + [EOS], trimmed so that the
/// pair fits `max_seq_len`: the response is shortened first (keeping at least
/// one token), then the prompt loses its oldest tokens after BOS.
PairIds encode_pair(const BpeVocab& vocab, std::string_view prompt, std::string_view response,
                    int max_seq_len);

/// Tokenizes each line, joins them with EOS separators, and cuts the stream
/// into consecutive windows of `window` tokens (a shorter tail is kept when it
/// has at least two tokens).
std::vector<std::vector<TokenId>> chunk_corpus(const BpeVocab& vocab,
                                               const std::vector<std::string>& lines,
                                               std::size_t window);

/// Full-parameter language-model training over fixed sequences. Examples are
/// visited in a freshly shuffled order every epoch.
template <class T>
TrainResult pretrain(LanguageModel<T>& model, const std::vector<std::vector<TokenId>>& sequences,
                     Objective objective, const TrainConfig& config, Rng& rng,
                     const StepCallback& on_step = {});

/// Supervised fine-tuning of the adapter matrices only; the loss is the mean
/// NLL over response tokens.
template <class T>
TrainResult train_sft(AdaptedModel<T>& model, const std::vector<PairIds>& examples,
                      const TrainConfig& config, Rng& rng, const StepCallback& on_step = {});

/// Mean causal loss over `sequences` without recording gradients.
template <class T>
double mean_causal_loss(const LanguageModel<T>& model,
                        const std::vector<std::vector<TokenId>>& sequences,
                        const ProjectionHook<T>* hook = nullptr);

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng);

}  // namespace desklm
