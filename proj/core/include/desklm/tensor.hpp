#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace desklm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <class T>
class Graph;

namespace detail {

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  // Id of the graph that produced this value; 0 for leaves.
  std::uint64_t producer = 0;
};

}  // namespace detail

/// Dense row-major array with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage, which is how
/// parameters are referenced from the model, the optimizer, and the graph
/// at once. Use clone() for an independent value.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  // Extents of a 2-D tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::size_t i) const { return impl_->data.at(i); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated as zeros on first access.
  std::span<T> mutable_grad();
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  /// Detached deep copy: same shape, data, and requires_grad; no gradient.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const noexcept {
    return impl_ == other.impl_;
  }

 private:
  friend class Graph<T>;
  explicit Tensor(std::shared_ptr<detail::TensorStorage<T>> impl)
      : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorStorage<T>> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace desklm
