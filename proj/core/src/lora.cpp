#include "desklm/lora.hpp"

#include <cmath>

#include "desklm/checkpoint.hpp"
#include "desklm/error.hpp"

namespace desklm {

std::vector<std::string> attention_projection_paths(int n_layers) {
  std::vector<std::string> out;
  for (int i = 0; i < n_layers; ++i)
    for (const char* w : {"wq", "wk", "wv", "wo"})
      out.push_back("layers." + std::to_string(i) + ".attn." + w);
  return out;
}

template <class T>
Tensor<T> adapted_forward(Graph<T>& g, const Tensor<T>& w, const LoraAdapter<T>& adapter,
                          const Tensor<T>& x, bool training, Rng* rng) {
  if (w.dim() != 2 || w.rows() != adapter.d() || w.cols() != adapter.k()) {
    throw DimensionError("adapted_forward: weight " + shape_to_string(w.shape()) +
                         " does not match adapter B " + shape_to_string(adapter.b.shape()) +
                         " / A " + shape_to_string(adapter.a.shape()));
  }
  auto base = g.matmul_nt(x, w);
  auto in = x;
  if (training && adapter.dropout > 0.0) {
    if (!rng) throw std::invalid_argument("adapted_forward: dropout requires an Rng");
    in = g.dropout(x, adapter.dropout, *rng);
  }
  auto low = g.matmul_nt(g.matmul_nt(in, adapter.a), adapter.b);
  return g.add(base, g.scale(low, static_cast<T>(adapter.scale)));
}

template <class T>
Tensor<T> merge(const Tensor<T>& w, const LoraAdapter<T>& adapter) {
  Graph<T> g(GradMode::kDisabled);
  auto delta = g.scale(g.matmul(adapter.b, adapter.a), static_cast<T>(adapter.scale));
  if (delta.shape() != w.shape()) {
    throw DimensionError("merge: weight " + shape_to_string(w.shape()) + " vs update " +
                         shape_to_string(delta.shape()));
  }
  auto out = w.clone();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += delta.data()[i];
  return out;
}

template <class T>
Tensor<T> unmerge(const Tensor<T>& merged, const LoraAdapter<T>& adapter) {
  Graph<T> g(GradMode::kDisabled);
  auto delta = g.scale(g.matmul(adapter.b, adapter.a), static_cast<T>(adapter.scale));
  if (delta.shape() != merged.shape()) {
    throw DimensionError("unmerge: weight " + shape_to_string(merged.shape()) +
                         " vs update " + shape_to_string(delta.shape()));
  }
  auto out = merged.clone();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= delta.data()[i];
  return out;
}

// --- AdaptedModel ----------------------------------------------------------------

namespace {

template <class T>
void check_target(const LanguageModel<T>& base, const std::string& path) {
  if (!base.params().contains(path)) {
    throw std::invalid_argument("LoRA target '" + path + "' is not a parameter path");
  }
  const auto& w = base.params().at(path);
  if (w.dim() != 2) {
    throw DimensionError("LoRA target '" + path + "' is not a matrix: " +
                         shape_to_string(w.shape()));
  }
  if (!LanguageModel<T>::is_projection(path)) {
    throw std::invalid_argument("LoRA target '" + path + "' is not a projection weight");
  }
}

}  // namespace

template <class T>
void AdaptedModel<T>::add_adapter(LoraAdapter<T> adapter) {
  const std::string key = adapter.target;
  if (!adapters_.emplace(key, std::move(adapter)).second) {
    throw std::invalid_argument("duplicate LoRA target '" + key + "'");
  }
}

template <class T>
AdaptedModel<T> AdaptedModel<T>::attach(const LanguageModel<T>& base, const LoraConfig& config,
                                        Rng& rng) {
  AdaptedModel out(base.clone());
  out.base_.params().set_requires_grad(false);
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) {
    throw std::invalid_argument("LoRA dropout must be in [0, 1)");
  }
  const auto targets = config.targets.empty()
                           ? attention_projection_paths(base.config().n_layers)
                           : config.targets;
  Rng init = rng.fork("lora-init");
  for (const auto& path : targets) {
    check_target(base, path);
    const auto& w = base.params().at(path);
    const std::size_t d = w.rows(), k = w.cols();
    if (config.rank < 1 || static_cast<std::size_t>(config.rank) > std::min(d, k)) {
      throw std::invalid_argument("LoRA rank " + std::to_string(config.rank) +
                                  " outside [1, min(d, k)] for '" + path + "' " +
                                  shape_to_string(w.shape()));
    }
    const auto r = static_cast<std::size_t>(config.rank);
    std::vector<T> a(r * k);
    const double std_a = 1.0 / std::sqrt(static_cast<double>(k));
    for (auto& v : a) v = static_cast<T>(init.normal() * std_a);
    LoraAdapter<T> adapter;
    adapter.target = path;
    adapter.b = Tensor<T>::zeros({d, r}, true);
    adapter.a = Tensor<T>::from({r, k}, std::move(a), true);
    adapter.rank = config.rank;
    adapter.alpha = config.alpha;
    adapter.dropout = config.dropout;
    adapter.scale = config.scale();
    out.add_adapter(std::move(adapter));
  }
  return out;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> AdaptedModel<T>::trainable_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (const auto& [path, ad] : adapters_) {
    out.emplace_back(path + ".lora_B", ad.b);
    out.emplace_back(path + ".lora_A", ad.a);
  }
  return out;
}

template <class T>
std::size_t AdaptedModel<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : trainable_parameters()) n += t.numel();
  return n;
}

template <class T>
Tensor<T> AdaptedModel<T>::delta(Graph<T>& g, std::string_view path, const Tensor<T>& x,
                                 bool training, Rng* rng) const {
  auto it = adapters_.find(path);
  if (it == adapters_.end()) return {};
  const auto& ad = it->second;
  auto in = x;
  if (training && ad.dropout > 0.0) {
    if (!rng) throw std::invalid_argument("LoRA dropout requires an Rng in training mode");
    in = g.dropout(x, ad.dropout, *rng);
  }
  auto low = g.matmul_nt(g.matmul_nt(in, ad.a), ad.b);
  return g.scale(low, static_cast<T>(ad.scale));
}

template <class T>
LanguageModel<T> AdaptedModel<T>::merged() const {
  auto out = base_.clone();
  for (const auto& [path, ad] : adapters_) {
    auto& w = out.params().at(path);
    const auto folded = merge(w, ad);
    std::copy(folded.data().begin(), folded.data().end(), w.mutable_data().begin());
  }
  out.params().set_requires_grad(true);
  return out;
}

template <class T>
void AdaptedModel<T>::save(const std::string& path, const std::string& vocab_fingerprint) const {
  TensorArchive<T> archive;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [target, ad] : adapters_) {
    list.push_back({{"target", target},
                    {"rank", ad.rank},
                    {"alpha", ad.alpha},
                    {"dropout", ad.dropout},
                    {"scale", ad.scale}});
    archive.tensors.emplace_back(target + ".lora_B", ad.b);
    archive.tensors.emplace_back(target + ".lora_A", ad.a);
  }
  archive.meta = {{"kind", "lora"}, {"vocab_sha256", vocab_fingerprint}, {"adapters", list}};
  save_archive(path, archive);
}

template <class T>
AdaptedModel<T> AdaptedModel<T>::load(const std::string& path, const LanguageModel<T>& base) {
  auto archive = load_archive<T>(path);
  if (archive.meta.value("kind", "") != "lora") {
    throw FormatError("'" + path + "' is not a LoRA adapter file");
  }
  std::map<std::string, Tensor<T>> tensors(archive.tensors.begin(), archive.tensors.end());
  AdaptedModel out(base.clone());
  out.base_.params().set_requires_grad(false);
  for (const auto& entry : archive.meta.at("adapters")) {
    LoraAdapter<T> ad;
    ad.target = entry.at("target").template get<std::string>();
    ad.rank = entry.at("rank").template get<int>();
    ad.alpha = entry.at("alpha").template get<double>();
    ad.dropout = entry.at("dropout").template get<double>();
    ad.scale = entry.at("scale").template get<double>();
    check_target(base, ad.target);
    auto bi = tensors.find(ad.target + ".lora_B");
    auto ai = tensors.find(ad.target + ".lora_A");
    if (bi == tensors.end() || ai == tensors.end()) {
      throw FormatError("adapter file lacks matrices for '" + ad.target + "'");
    }
    const auto& w = base.params().at(ad.target);
    const auto r = static_cast<std::size_t>(ad.rank);
    if (bi->second.shape() != Shape{w.rows(), r} || ai->second.shape() != Shape{r, w.cols()}) {
      throw DimensionError("adapter for '" + ad.target + "' has B " +
                           shape_to_string(bi->second.shape()) + " / A " +
                           shape_to_string(ai->second.shape()) + ", incompatible with weight " +
                           shape_to_string(w.shape()));
    }
    ad.b = bi->second;
    ad.a = ai->second;
    ad.b.set_requires_grad(true);
    ad.a.set_requires_grad(true);
    out.add_adapter(std::move(ad));
  }
  return out;
}

#define DESKLM_INSTANTIATE(T)                                                                 \
  template Tensor<T> adapted_forward<T>(Graph<T>&, const Tensor<T>&, const LoraAdapter<T>&, \
                                        const Tensor<T>&, bool, Rng*);                      \
  template Tensor<T> merge<T>(const Tensor<T>&, const LoraAdapter<T>&);                     \
  template Tensor<T> unmerge<T>(const Tensor<T>&, const LoraAdapter<T>&);                   \
  template class AdaptedModel<T>;

DESKLM_INSTANTIATE(float)
DESKLM_INSTANTIATE(double)
#undef DESKLM_INSTANTIATE

}  // namespace desklm
