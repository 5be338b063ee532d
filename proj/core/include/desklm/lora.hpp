#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "desklm/graph.hpp"
#include "desklm/model.hpp"
#include "desklm/rng.hpp"
#include "desklm/tensor.hpp"

namespace desklm {

struct LoraConfig {
  int rank = 16;
  double alpha = 8.0;
  double dropout = 0.05;
  /// When true the low-rank update is scaled by alpha / rank, otherwise by 1.
  bool scale_by_rank = true;
  /// Parameter paths to adapt; empty selects every attention projection.
  std::vector<std::string> targets;

  double scale() const { return scale_by_rank ? alpha / rank : 1.0; }
};

/// Default target set: layers.<i>.attn.{wq,wk,wv,wo} for every layer.
std::vector<std::string> attention_projection_paths(int n_layers);

/// Low-rank update for one weight W [d x k]: delta W = scale * B A with
/// B [d x r] (zero at attach time) and A [r x k].
template <class T>
struct LoraAdapter {
  std::string target;
  Tensor<T> b;
  Tensor<T> a;
  int rank = 0;
  double alpha = 0.0;
  double dropout = 0.0;
  double scale = 1.0;

  std::size_t d() const { return b.rows(); }
  std::size_t k() const { return a.cols(); }
  /// r * (d + k)
  std::size_t trainable_count() const { return static_cast<std::size_t>(rank) * (d() + k()); }
};

/// y = x W^T + scale * (dropout(x) A^T) B^T for row inputs x [n x k], i.e.
/// Wx + scale * B(Ax) per row. Dropout only applies when `training`.
template <class T>
Tensor<T> adapted_forward(Graph<T>& g, const Tensor<T>& w, const LoraAdapter<T>& adapter,
                          const Tensor<T>& x, bool training = false, Rng* rng = nullptr);

/// W + scale * B A, as a detached tensor.
template <class T>
Tensor<T> merge(const Tensor<T>& w, const LoraAdapter<T>& adapter);
/// W' - scale * B A; inverse of merge().
template <class T>
Tensor<T> unmerge(const Tensor<T>& merged, const LoraAdapter<T>& adapter);

/// A frozen copy of a base model plus LoRA adapters on selected projections.
template <class T>
class AdaptedModel final : public ProjectionHook<T> {
 public:
  /// Copies and freezes `base`, then attaches zero-initialized adapters.
  /// Throws std::invalid_argument for an unknown or non-projection path,
  /// DimensionError for a non-matrix target, and std::invalid_argument for a
  /// rank outside [1, min(d, k)].
  static AdaptedModel attach(const LanguageModel<T>& base, const LoraConfig& config, Rng& rng);

  const LanguageModel<T>& base() const noexcept { return base_; }
  const std::map<std::string, LoraAdapter<T>, std::less<>>& adapters() const noexcept {
    return adapters_;
  }

  /// Adapter matrices only, named "<target>.lora_B" / "<target>.lora_A".
  std::vector<std::pair<std::string, Tensor<T>>> trainable_parameters() const;
  std::size_t trainable_count() const;

  ForwardOptions<T> options(bool training = false, Rng* rng = nullptr) const {
    return ForwardOptions<T>{training, rng, this};
  }

  Tensor<T> forward(Graph<T>& g, std::span<const TokenId> ids, AttentionMode mode,
                    bool training = false, Rng* rng = nullptr) const {
    return base_.forward(g, ids, mode, options(training, rng));
  }

  /// Base model with every adapter folded into its weight.
  LanguageModel<T> merged() const;

  Tensor<T> delta(Graph<T>& g, std::string_view path, const Tensor<T>& x, bool training,
                  Rng* rng) const override;

  void save(const std::string& path, const std::string& vocab_fingerprint) const;
  /// Loads adapters onto a copy of `base`. Shape disagreement is a
  /// DimensionError naming the offending path.
  static AdaptedModel load(const std::string& path, const LanguageModel<T>& base);

 private:
  explicit AdaptedModel(LanguageModel<T> base) : base_(std::move(base)) {}
  void add_adapter(LoraAdapter<T> adapter);

  LanguageModel<T> base_;
  std::map<std::string, LoraAdapter<T>, std::less<>> adapters_;
};

extern template class AdaptedModel<float>;
extern template class AdaptedModel<double>;

}  // namespace desklm
