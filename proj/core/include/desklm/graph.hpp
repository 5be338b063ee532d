#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "desklm/rng.hpp"
#include "desklm/tensor.hpp"

namespace desklm {

enum class Reduction {
  kMean,  // divide by the number of selected positions
  kSum,
};

enum class GradMode {
  kRecord,
  kDisabled,  // forward only; nothing is recorded
};

/// Reverse-mode autodiff tape.
///
/// Every op that consumes a requires_grad tensor appends a record; backward()
/// replays the records in exact reverse order. A Graph is single-use: once
/// backward() has run, the records are released and further backward() calls
/// throw GraphError. Leaf gradients accumulate across graphs, which is what
/// gradient accumulation relies on.
template <class T>
class Graph {
 public:
  explicit Graph(GradMode mode = GradMode::kRecord);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  // --- linear algebra -----------------------------------------------------
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
  /// a[m x k] times b[n x k] transposed: the y = x W^T form of a linear layer.
  Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> transpose(const Tensor<T>& a);

  // --- elementwise ---------------------------------------------------------
  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
  /// x[m x n] + bias[n] broadcast over rows.
  Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias);
  Tensor<T> scale(const Tensor<T>& x, T factor);
  Tensor<T> add_scalar(const Tensor<T>& x, T offset);
  Tensor<T> gelu(const Tensor<T>& x);
  Tensor<T> log_sigmoid(const Tensor<T>& x);
  /// Inverted dropout; identity when p == 0.
  Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng);

  // --- reductions and normalization ---------------------------------------
  Tensor<T> sum(const Tensor<T>& x);
  Tensor<T> mean(const Tensor<T>& x);
  /// Max-subtracted softmax along `axis` of an n-D tensor.
  Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
  /// Sets entries above the diagonal of a square score matrix to -inf.
  Tensor<T> causal_mask(const Tensor<T>& scores);
  /// Row-wise normalization over the last axis of a 2-D tensor.
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                       const Tensor<T>& bias, T eps);

  // --- indexing -------------------------------------------------------------
  /// Row gather: out[i] = table[ids[i]].
  Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);
  Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);
  Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

  // --- losses ---------------------------------------------------------------
  /// Negative log-likelihood of `targets` under row-wise softmax(logits),
  /// restricted to rows where `mask` is set (all rows when absent).
  ///
  /// With Reduction::kSum this is exactly -sum_{i in M} log p_i(target_i);
  /// kMean divides by |M|. An empty selection throws DegenerateBatchError.
  Tensor<T> cross_entropy(const Tensor<T>& logits,
                          std::span<const std::int32_t> targets,
                          std::optional<std::span<const std::uint8_t>> mask = std::nullopt,
                          Reduction reduction = Reduction::kMean);

  /// Runs reverse-mode accumulation from a scalar loss produced by this graph.
  /// A non-scalar loss is a DimensionError; a second call or a loss from
  /// another graph is a GraphError.
  void backward(const Tensor<T>& loss);

 private:
  struct Node {
    std::shared_ptr<detail::TensorStorage<T>> out;
    std::function<void()> backward;
  };

  using Storage = detail::TensorStorage<T>;
  using StoragePtr = std::shared_ptr<Storage>;

  static const StoragePtr& storage(const Tensor<T>& t) { return t.impl_; }
  Tensor<T> make_output(Shape shape, std::vector<T> data, bool requires_grad);
  bool recording(std::initializer_list<const Tensor<T>*> inputs) const;
  void record(const Tensor<T>& out, std::function<void()> fn);

  GradMode mode_;
  std::uint64_t id_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace desklm
