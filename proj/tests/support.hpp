#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "desklm/graph.hpp"
#include "desklm/model.hpp"
#include "desklm/rng.hpp"
#include "desklm/tensor.hpp"

namespace desklm::testing {

inline ModelConfig tiny_config(int vocab = 12, int d_model = 8, int layers = 1, int heads = 2,
                               int d_ff = 16, int max_len = 8) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d_model;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_ff = d_ff;
  c.max_seq_len = max_len;
  return c;
}

/// Fills every parameter (head included) with normal(0, std) values so that
/// no gradient is trivially zero.
template <class T>
LanguageModel<T> random_model(const ModelConfig& config, std::uint64_t seed, double std = 0.5) {
  Rng rng(seed);
  auto model = LanguageModel<T>::init(config, rng, std);
  Rng fill = rng.fork("fill");
  for (auto& [path, t] : model.params().entries()) {
    for (auto& x : t.mutable_data()) x = static_cast<T>(fill.normal() * std);
  }
  return model;
}

inline std::vector<TokenId> random_ids(std::size_t n, int vocab, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  std::vector<TokenId> ids(n);
  for (auto& x : ids) x = pick(gen);
  return ids;
}

struct GradReport {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Compares analytic gradients of `loss` against a five-point central
/// difference for every element of every tensor in `params`. The error of one
/// element is |analytic - numeric| / (|numeric| + 1e-8).
inline GradReport gradient_check(const std::vector<std::pair<std::string, Tensor<double>>>& params,
                                 const std::function<Tensor<double>(Graph<double>&)>& loss,
                                 double h = 1e-3) {
  for (auto [name, t] : params) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  {
    Graph<double> g;
    g.backward(loss(g));
  }
  auto value = [&] {
    Graph<double> g(GradMode::kDisabled);
    return loss(g).item();
  };
  GradReport report;
  for (auto [name, t] : params) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double x0 = data[i];
      auto at = [&](double dx) {
        data[i] = x0 + dx;
        return value();
      };
      const double numeric =
          (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      data[i] = x0;
      const double rel = std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8);
      ++report.checked;
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("desklm-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = {}) const {
    return child.empty() ? path_.string() : (path_ / child).string();
  }

 private:
  std::filesystem::path path_;
};

}  // namespace desklm::testing
