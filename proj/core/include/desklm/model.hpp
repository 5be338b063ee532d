#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "desklm/graph.hpp"
#include "desklm/rng.hpp"
#include "desklm/tensor.hpp"
#include "desklm/tokenizer.hpp"

namespace desklm {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 64;
  double dropout_rate = 0.0;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Ordered, uniquely named parameter set. Paths are stable across runs and
/// are what LoRA targeting and checkpoints refer to.
template <class T>
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string path, Tensor<T> value);
  bool contains(std::string_view path) const;
  const Tensor<T>& at(std::string_view path) const;
  Tensor<T>& at(std::string_view path);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  /// Total scalar count.
  std::size_t count() const;

  /// Deep copy with fresh storage.
  ModelParams clone() const;
  void set_requires_grad(bool flag);
  void clear_grads();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

enum class AttentionMode {
  kCausal,
  kBidirectional,
};

/// Extension point for adapters: contributes an additive term to the output
/// of a named projection y = x W^T.
template <class T>
class ProjectionHook {
 public:
  virtual ~ProjectionHook() = default;
  /// Returns the term to add to x W^T for `path`, or an undefined Tensor when
  /// the projection is not adapted.
  virtual Tensor<T> delta(Graph<T>& g, std::string_view path, const Tensor<T>& x,
                          bool training, Rng* rng) const = 0;
};

template <class T>
struct ForwardOptions {
  bool training = false;  // enables dropout; requires rng when any rate > 0
  Rng* rng = nullptr;
  const ProjectionHook<T>* hook = nullptr;
};

/// Masked-LM example: input with the selected positions replaced by kMask,
/// the original ids, and the selection M.
struct MlmBatch {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  std::vector<std::uint8_t> mask;

  /// Throws DegenerateBatchError for an empty selection, DimensionError on
  /// length mismatch.
  void validate() const;
};

/// Selects each position with probability `mask_prob` (at least one) and
/// replaces it by kMask.
MlmBatch make_mlm_batch(std::span<const TokenId> ids, double mask_prob, Rng& rng);

/// Small pre-LN decoder-only transformer with learned absolute positions.
///
/// Parameter paths:
///   tok_emb, pos_emb,
///   layers.<i>.ln1.{gain,bias}, layers.<i>.attn.{wq,wk,wv,wo},
///   layers.<i>.ln2.{gain,bias}, layers.<i>.ffn.{w1,b1,w2,b2},
///   ln_f.{gain,bias}, head.w, head.b
/// Projection weights are stored [out x in], so a projection computes x W^T.
template <class T>
class LanguageModel {
 public:
  LanguageModel(ModelConfig config, ModelParams<T> params);

  /// Weights ~ normal(0, init_std); layer-norm gains 1; biases 0. The output
  /// head is zero so the initial next-token distribution is uniform.
  static LanguageModel init(const ModelConfig& config, Rng& rng, double init_std = 0.02);

  const ModelConfig& config() const noexcept { return config_; }
  const ModelParams<T>& params() const noexcept { return params_; }
  ModelParams<T>& params() noexcept { return params_; }
  LanguageModel clone() const { return LanguageModel(config_, params_.clone()); }

  /// True for [out x in] weights that are applied as projections.
  static bool is_projection(std::string_view path);

  /// Logits [len(ids) x vocab_size].
  Tensor<T> forward(Graph<T>& g, std::span<const TokenId> ids, AttentionMode mode,
                    const ForwardOptions<T>& opts = {}) const;

  /// Cross-entropy over exactly the positions of M; bidirectional attention
  /// unless told otherwise.
  Tensor<T> mlm_loss(Graph<T>& g, const MlmBatch& batch,
                     const ForwardOptions<T>& opts = {},
                     Reduction reduction = Reduction::kMean,
                     AttentionMode mode = AttentionMode::kBidirectional) const;

  /// Mean next-token NLL over positions 1..n-1.
  Tensor<T> causal_lm_loss(Graph<T>& g, std::span<const TokenId> ids,
                           const ForwardOptions<T>& opts = {}) const;

  /// NLL of `response` given `prompt`; only response tokens are scored.
  Tensor<T> response_nll(Graph<T>& g, std::span<const TokenId> prompt,
                         std::span<const TokenId> response,
                         const ForwardOptions<T>& opts = {},
                         Reduction reduction = Reduction::kSum) const;

  /// sum_t log P(response_t | prompt, response_<t).
  Tensor<T> sequence_logprob(Graph<T>& g, std::span<const TokenId> prompt,
                             std::span<const TokenId> response,
                             const ForwardOptions<T>& opts = {}) const;
  T sequence_logprob(std::span<const TokenId> prompt, std::span<const TokenId> response,
                     const ProjectionHook<T>* hook = nullptr) const;

  /// Greedy decoding. Appends argmax tokens (lowest id on ties) until
  /// kEos is emitted, `max_new` tokens are added, or the context is full.
  std::vector<TokenId> generate(std::span<const TokenId> prompt, std::size_t max_new,
                                const ProjectionHook<T>* hook = nullptr) const;

 private:
  Tensor<T> project(Graph<T>& g, const Tensor<T>& x, const std::string& path,
                    const ForwardOptions<T>& opts) const;
  void check_ids(std::span<const TokenId> ids) const;

  ModelConfig config_;
  ModelParams<T> params_;
};

extern template class ModelParams<float>;
extern template class ModelParams<double>;
extern template class LanguageModel<float>;
extern template class LanguageModel<double>;

}  // namespace desklm
