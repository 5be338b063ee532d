#include "desklm/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>

#include "desklm/error.hpp"

namespace desklm {

namespace {

std::atomic<std::uint64_t> next_graph_id{1};

template <class T>
std::span<T> grad_slot(detail::TensorStorage<T>& s) {
  if (!s.requires_grad) return {};
  if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
  return s.grad;
}

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

void require_2d(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_to_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

template <class T>
T gelu_value(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T u = c * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
T gelu_derivative(T x) {
  constexpr T c = T(0.7978845608028654);
  const T u = c * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
T log_sigmoid_value(T x) {
  return x < T(0) ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x));
}

template <class T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <class T>
Graph<T>::Graph(GradMode mode) : mode_(mode), id_(next_graph_id++) {}

template <class T>
Tensor<T> Graph<T>::make_output(Shape shape, std::vector<T> data,
                                bool requires_grad) {
  auto impl = std::make_shared<Storage>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->producer = id_;
  return Tensor<T>(std::move(impl));
}

template <class T>
bool Graph<T>::recording(std::initializer_list<const Tensor<T>*> inputs) const {
  if (mode_ == GradMode::kDisabled) return false;
  if (consumed_) throw GraphError("graph already consumed by backward()");
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <class T>
void Graph<T>::record(const Tensor<T>& out, std::function<void()> fn) {
  nodes_.push_back(Node{storage(out), std::move(fn)});
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> Graph<T>::matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a.shape(), "matmul");
  require_2d(b.shape(), "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  const bool rec = recording({&a, &b});
  auto y = make_output({m, n}, std::move(out), rec);
  if (rec) {
    auto sa = storage(a), sb = storage(b), sy = storage(y);
    record(y, [sa, sb, sy, m, k, n] {
      const T* dy = sy->grad.data();
      if (auto ga = grad_slot(*sa); !ga.empty()) {
        // dA = dY * B^T
        const auto bt = transposed(sb->data.data(), k, n);
        gemm_nn(m, n, k, dy, bt.data(), ga.data());
      }
      if (auto gb = grad_slot(*sb); !gb.empty()) {
        // dB = A^T * dY
        gemm_tn(m, k, n, sa->data.data(), dy, gb.data());
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a.shape(), "matmul_nt");
  require_2d(b.shape(), "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree: " +
                         shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()) + "^T");
  }
  std::vector<T> out(m * n, T(0));
  {
    const auto bt = transposed(b.data().data(), n, k);
    gemm_nn(m, k, n, a.data().data(), bt.data(), out.data());
  }
  const bool rec = recording({&a, &b});
  auto y = make_output({m, n}, std::move(out), rec);
  if (rec) {
    auto sa = storage(a), sb = storage(b), sy = storage(y);
    record(y, [sa, sb, sy, m, k, n] {
      const T* dy = sy->grad.data();
      if (auto ga = grad_slot(*sa); !ga.empty()) {
        // dA = dY * B
        gemm_nn(m, n, k, dy, sb->data.data(), ga.data());
      }
      if (auto gb = grad_slot(*sb); !gb.empty()) {
        // dB = dY^T * A
        gemm_tn(m, n, k, dy, sa->data.data(), gb.data());
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::transpose(const Tensor<T>& a) {
  require_2d(a.shape(), "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  const bool rec = recording({&a});
  auto y = make_output({c, r}, transposed(a.data().data(), r, c), rec);
  if (rec) {
    auto sa = storage(a), sy = storage(y);
    record(y, [sa, sy, r, c] {
      auto ga = grad_slot(*sa);
      if (ga.empty()) return;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += sy->grad[j * r + i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> Graph<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  const bool rec = recording({&a, &b});
  auto y = make_output(a.shape(), std::move(out), rec);
  if (rec) {
    auto sa = storage(a), sb = storage(b), sy = storage(y);
    record(y, [sa, sb, sy] {
      for (auto* s : {sa.get(), sb.get()}) {
        auto g = grad_slot(*s);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += sy->grad[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  const bool rec = recording({&a, &b});
  auto y = make_output(a.shape(), std::move(out), rec);
  if (rec) {
    auto sa = storage(a), sb = storage(b), sy = storage(y);
    record(y, [sa, sb, sy] {
      auto ga = grad_slot(*sa);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += sy->grad[i];
      auto gb = grad_slot(*sb);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= sy->grad[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  const bool rec = recording({&a, &b});
  auto y = make_output(a.shape(), std::move(out), rec);
  if (rec) {
    auto sa = storage(a), sb = storage(b), sy = storage(y);
    record(y, [sa, sb, sy] {
      // Read both operands before writing: a and b may alias.
      auto ga = grad_slot(*sa);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += sy->grad[i] * sb->data[i];
      auto gb = grad_slot(*sb);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += sy->grad[i] * sa->data[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::add_row(const Tensor<T>& x, const Tensor<T>& bias) {
  require_2d(x.shape(), "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_to_string(bias.shape()) +
                         " does not match columns of " +
                         shape_to_string(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  const bool rec = recording({&x, &bias});
  auto y = make_output(x.shape(), std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sb = storage(bias), sy = storage(y);
    record(y, [sx, sb, sy, m, n] {
      if (auto gx = grad_slot(*sx); !gx.empty())
        for (std::size_t i = 0; i < m * n; ++i) gx[i] += sy->grad[i];
      if (auto gb = grad_slot(*sb); !gb.empty())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += sy->grad[i * n + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  const bool rec = recording({&x});
  auto y = make_output(x.shape(), std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sy = storage(y);
    record(y, [sx, sy, factor] {
      auto g = grad_slot(*sx);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sy->grad[i] * factor;
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::add_scalar(const Tensor<T>& x, T offset) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + offset;
  const bool rec = recording({&x});
  auto y = make_output(x.shape(), std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sy = storage(y);
    record(y, [sx, sy] {
      auto g = grad_slot(*sx);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sy->grad[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x.data()[i]);
  const bool rec = recording({&x});
  auto y = make_output(x.shape(), std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sy = storage(y);
    record(y, [sx, sy] {
      auto g = grad_slot(*sx);
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += sy->grad[i] * gelu_derivative(sx->data[i]);
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::log_sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_sigmoid_value(x.data()[i]);
  const bool rec = recording({&x});
  auto y = make_output(x.shape(), std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sy = storage(y);
    record(y, [sx, sy] {
      auto g = grad_slot(*sx);
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += sy->grad[i] * sigmoid_value(-sx->data[i]);
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout probability must be in [0, 1)");
  }
  if (p == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> keep(x.numel());
  for (auto& k : keep) k = rng.bernoulli(p) ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * keep[i];
  const bool rec = recording({&x});
  auto y = make_output(x.shape(), std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sy = storage(y);
    record(y, [sx, sy, keep = std::move(keep)] {
      auto g = grad_slot(*sx);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sy->grad[i] * keep[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> Graph<T>::sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  const bool rec = recording({&x});
  auto y = make_output({1}, {total}, rec);
  if (rec) {
    auto sx = storage(x), sy = storage(y);
    record(y, [sx, sy] {
      auto g = grad_slot(*sx);
      const T d = sy->grad[0];
      for (auto& v : g) v += d;
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> Graph<T>::softmax(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + shape_to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t len = s[axis];
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, in[base + l * inner]);
      T z = T(0);
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::isinf(mx) && mx < 0 ? T(1) : std::exp(in[base + l * inner] - mx);
        out[base + l * inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
    }
  }
  const bool rec = recording({&x});
  auto y = make_output(s, std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sy = storage(y);
    record(y, [sx, sy, outer, inner, len] {
      auto g = grad_slot(*sx);
      const auto& p = sy->data;
      const auto& dy = sy->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * len * inner + i;
          T dot = T(0);
          for (std::size_t l = 0; l < len; ++l)
            dot += dy[base + l * inner] * p[base + l * inner];
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            g[idx] += p[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::causal_mask(const Tensor<T>& scores) {
  require_2d(scores.shape(), "causal_mask");
  const std::size_t n = scores.rows();
  if (scores.cols() != n) {
    throw DimensionError("causal_mask: expected a square matrix, got " +
                         shape_to_string(scores.shape()));
  }
  std::vector<T> out(scores.data().begin(), scores.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      out[i * n + j] = -std::numeric_limits<T>::infinity();
  const bool rec = recording({&scores});
  auto y = make_output(scores.shape(), std::move(out), rec);
  if (rec) {
    auto sx = storage(scores), sy = storage(y);
    record(y, [sx, sy, n] {
      auto g = grad_slot(*sx);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) g[i * n + j] += sy->grad[i * n + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                               const Tensor<T>& bias, T eps) {
  require_2d(x.shape(), "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias extent must equal " +
                         std::to_string(n));
  }
  std::vector<T> xhat(m * n), rstd(m), out(m * n);
  const auto in = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += in[i * n + j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T d = in[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (in[i * n + j] - mu) * rstd[i];
      out[i * n + j] = xhat[i * n + j] * gain.data()[j] + bias.data()[j];
    }
  }
  const bool rec = recording({&x, &gain, &bias});
  auto y = make_output(x.shape(), std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sg = storage(gain), sb = storage(bias), sy = storage(y);
    record(y, [sx, sg, sb, sy, m, n, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const auto& dy = sy->grad;
      if (auto gg = grad_slot(*sg); !gg.empty())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * xhat[i * n + j];
      if (auto gb = grad_slot(*sb); !gb.empty())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
      auto gx = grad_slot(*sx);
      if (gx.empty()) return;
      const T inv_n = T(1) / static_cast<T>(n);
      for (std::size_t i = 0; i < m; ++i) {
        T mean_d = T(0), mean_dx = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          const T d = dy[i * n + j] * sg->data[j];
          mean_d += d;
          mean_dx += d * xhat[i * n + j];
        }
        mean_d *= inv_n;
        mean_dx *= inv_n;
        for (std::size_t j = 0; j < n; ++j) {
          const T d = dy[i * n + j] * sg->data[j];
          gx[i * n + j] += rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> Graph<T>::embedding(const Tensor<T>& table,
                              std::span<const std::int32_t> ids) {
  require_2d(table.shape(), "embedding");
  const std::size_t v = table.rows(), d = table.cols();
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) +
                           " out of range for table of " + std::to_string(v) +
                           " rows");
    }
    std::copy_n(table.data().begin() + ids[i] * d, d, out.begin() + i * d);
  }
  const bool rec = recording({&table});
  auto y = make_output({ids.size(), d}, std::move(out), rec);
  if (rec) {
    auto st = storage(table), sy = storage(y);
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    record(y, [st, sy, d, idv = std::move(idv)] {
      auto g = grad_slot(*st);
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) g[idv[i] * d + j] += sy->grad[i * d + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::slice_cols(const Tensor<T>& x, std::size_t begin,
                               std::size_t count) {
  require_2d(x.shape(), "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " +
                         shape_to_string(x.shape()));
  }
  std::vector<T> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data().begin() + i * n + begin, count, out.begin() + i * count);
  const bool rec = recording({&x});
  auto y = make_output({m, count}, std::move(out), rec);
  if (rec) {
    auto sx = storage(x), sy = storage(y);
    record(y, [sx, sy, m, n, begin, count] {
      auto g = grad_slot(*sx);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          g[i * n + begin + j] += sy->grad[i * count + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> Graph<T>::concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool rec = false;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " +
                           shape_to_string(parts[0].shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    n += p.cols();
    rec = rec || recording({&p});
  }
  std::vector<T> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.data().begin() + i * c, c, out.begin() + i * n + offset);
    offset += c;
  }
  auto y = make_output({m, n}, std::move(out), rec);
  if (rec) {
    std::vector<StoragePtr> sp;
    for (const auto& p : parts) sp.push_back(storage(p));
    auto sy = storage(y);
    record(y, [sp = std::move(sp), sy, m, n] {
      std::size_t off = 0;
      for (const auto& s : sp) {
        const std::size_t c = s->shape[1];
        auto g = grad_slot(*s);
        if (!g.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += sy->grad[i * n + off + j];
        off += c;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> Graph<T>::cross_entropy(const Tensor<T>& logits,
                                  std::span<const std::int32_t> targets,
                                  std::optional<std::span<const std::uint8_t>> mask,
                                  Reduction reduction) {
  require_2d(logits.shape(), "cross_entropy");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  if (mask && mask->size() != n) {
    throw DimensionError("cross_entropy: mask length " +
                         std::to_string(mask->size()) + " for " +
                         std::to_string(n) + " rows");
  }
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && !(*mask)[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) +
                           " out of range for vocabulary of " + std::to_string(v));
    }
    selected.push_back(i);
  }
  if (selected.empty()) {
    throw DegenerateBatchError("cross_entropy: no positions selected (|M| = 0)");
  }
  const auto in = logits.data();
  std::vector<T> lse(selected.size());
  T total = T(0);
  for (std::size_t s = 0; s < selected.size(); ++s) {
    const T* row = in.data() + selected[s] * v;
    const T mx = *std::max_element(row, row + v);
    T z = T(0);
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    lse[s] = mx + std::log(z);
    total += lse[s] - row[targets[selected[s]]];
  }
  const T norm = reduction == Reduction::kMean
                     ? T(1) / static_cast<T>(selected.size())
                     : T(1);
  const bool rec = recording({&logits});
  auto y = make_output({1}, {total * norm}, rec);
  if (rec) {
    auto sl = storage(logits), sy = storage(y);
    std::vector<std::int32_t> tv(targets.begin(), targets.end());
    record(y, [sl, sy, v, norm, selected = std::move(selected),
               lse = std::move(lse), tv = std::move(tv)] {
      auto g = grad_slot(*sl);
      const T d = sy->grad[0] * norm;
      for (std::size_t s = 0; s < selected.size(); ++s) {
        const std::size_t r = selected[s];
        const T* row = sl->data.data() + r * v;
        T* grow = g.data() + r * v;
        for (std::size_t j = 0; j < v; ++j) grow[j] += d * std::exp(row[j] - lse[s]);
        grow[tv[r]] -= d;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

template <class T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (consumed_) {
    throw GraphError("backward() called twice on the same graph; re-record the forward pass");
  }
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar tensor");
  }
  auto sl = storage(loss);
  if (sl->producer != id_) {
    throw GraphError("backward: loss was not produced by this graph");
  }
  consumed_ = true;
  if (!sl->requires_grad) {
    nodes_.clear();
    return;
  }
  sl->grad.assign(1, T(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // not reachable from the loss
    it->backward();
  }
  nodes_.clear();
}

template class Graph<float>;
template class Graph<double>;

}  // namespace desklm
