#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "desklm/lora.hpp"
#include "desklm/model.hpp"
#include "desklm/optim.hpp"
#include "desklm/training.hpp"

namespace desklm {

struct DpoTriple {
  std::string prompt;
  std::string chosen;
  std::string rejected;

  /// All three non-empty and chosen != rejected; throws std::invalid_argument.
  void validate() const;
  friend bool operator==(const DpoTriple&, const DpoTriple&) = default;
};

/// JSON lines with exactly the keys "prompt", "chosen", "rejected". Missing,
/// extra, or non-string keys throw FormatError with the line number.
std::vector<DpoTriple> parse_dpo_jsonl(std::string_view text,
                                       const std::string& source = "<memory>");
std::vector<DpoTriple> load_dpo_jsonl(const std::string& path);
std::string dpo_to_jsonl(const std::vector<DpoTriple>& triples);

/// beta * ((pc - rc) - (pr - rr)) for policy/reference log-probs of the
/// chosen (c) and rejected (r) responses.
double implicit_reward_margin(double policy_chosen, double policy_rejected, double ref_chosen,
                              double ref_rejected, double beta);

/// -log sigmoid(margin), evaluated without overflow.
double dpo_loss(double policy_chosen, double policy_rejected, double ref_chosen,
                double ref_rejected, double beta);

/// Graph form; gradients flow into the policy log-probs only.
template <class T>
Tensor<T> dpo_loss(Graph<T>& g, const Tensor<T>& policy_chosen, const Tensor<T>& policy_rejected,
                   T ref_chosen, T ref_rejected, double beta);

struct DpoConfig {
  double beta = 0.1;
  TrainConfig train;

  DpoConfig() {
    train.epochs = 1;
    train.lr = 5e-4;
    train.warmup_ratio = 0.01;
    train.accumulation_steps = 1;
  }
  void validate() const;
};

struct DpoExample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> chosen;
  std::vector<TokenId> rejected;
};

DpoExample encode_triple(const BpeVocab& vocab, const DpoTriple& triple, int max_seq_len);

struct DpoResult {
  TrainResult train;
  /// Cached reference log-probs, in example order.
  std::vector<double> ref_chosen;
  std::vector<double> ref_rejected;
};

/// Optimizes the policy's adapters on the preference loss. The reference is
/// scored once up front and never updated. Throws DegenerateBatchError for an
/// empty dataset.
template <class T>
DpoResult train_dpo(AdaptedModel<T>& policy, const LanguageModel<T>& reference,
                    const std::vector<DpoExample>& examples, const DpoConfig& config, Rng& rng,
                    const StepCallback& on_step = {});

/// Implicit-reward margin of every example under the current policy.
template <class T>
std::vector<double> reward_margins(const AdaptedModel<T>& policy, const DpoResult& result,
                                   const std::vector<DpoExample>& examples, double beta);

}  // namespace desklm
