#include "desklm/model.hpp"

#include <algorithm>
#include <cmath>

#include "desklm/error.hpp"

namespace desklm {

// --- ModelConfig -------------------------------------------------------------

void ModelConfig::validate() const {
  if (vocab_size <= kMask) throw ConfigError("vocab_size", "must include the reserved mask id");
  if (d_model <= 0) throw ConfigError("d_model", "must be positive");
  if (n_layers <= 0) throw ConfigError("n_layers", "must be positive");
  if (n_heads <= 0) throw ConfigError("n_heads", "must be positive");
  if (d_model % n_heads != 0) throw ConfigError("n_heads", "must divide d_model");
  if (d_ff <= 0) throw ConfigError("d_ff", "must be positive");
  if (max_seq_len < 2) throw ConfigError("max_seq_len", "must be at least 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate", "must be in [0, 1)");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},
          {"n_layers", n_layers},     {"n_heads", n_heads},
          {"d_ff", d_ff},             {"max_seq_len", max_seq_len},
          {"dropout_rate", dropout_rate}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.validate();
  return c;
}

// --- ModelParams -------------------------------------------------------------

template <class T>
void ModelParams<T>::add(std::string path, Tensor<T> value) {
  if (index_.contains(path)) {
    throw std::invalid_argument("duplicate parameter path '" + path + "'");
  }
  index_.emplace(path, entries_.size());
  entries_.emplace_back(std::move(path), std::move(value));
}

template <class T>
bool ModelParams<T>::contains(std::string_view path) const {
  return index_.find(path) != index_.end();
}

template <class T>
const Tensor<T>& ModelParams<T>::at(std::string_view path) const {
  auto it = index_.find(path);
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter path '" + std::string(path) + "'");
  }
  return entries_[it->second].second;
}

template <class T>
Tensor<T>& ModelParams<T>::at(std::string_view path) {
  return const_cast<Tensor<T>&>(std::as_const(*this).at(path));
}

template <class T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

template <class T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams out;
  for (const auto& [name, t] : entries_) out.add(name, t.clone());
  return out;
}

template <class T>
void ModelParams<T>::set_requires_grad(bool flag) {
  for (auto& [_, t] : entries_) t.set_requires_grad(flag);
}

template <class T>
void ModelParams<T>::clear_grads() {
  for (auto& [_, t] : entries_) t.clear_grad();
}

// --- MLM batches ---------------------------------------------------------------

void MlmBatch::validate() const {
  if (input_ids.size() != target_ids.size() || input_ids.size() != mask.size()) {
    throw DimensionError("MlmBatch: input, target, and mask lengths differ");
  }
  if (std::none_of(mask.begin(), mask.end(), [](auto m) { return m != 0; })) {
    throw DegenerateBatchError("MlmBatch: mask set M is empty");
  }
}

MlmBatch make_mlm_batch(std::span<const TokenId> ids, double mask_prob, Rng& rng) {
  if (ids.empty()) throw DegenerateBatchError("make_mlm_batch: empty sequence");
  MlmBatch b;
  b.target_ids.assign(ids.begin(), ids.end());
  b.input_ids = b.target_ids;
  b.mask.assign(ids.size(), 0);
  bool any = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (rng.bernoulli(mask_prob)) {
      b.mask[i] = 1;
      any = true;
    }
  }
  if (!any) b.mask[rng.below(ids.size())] = 1;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (b.mask[i]) b.input_ids[i] = kMask;
  return b;
}

// --- LanguageModel -------------------------------------------------------------

namespace {

std::string layer_path(int layer, const char* suffix) {
  return "layers." + std::to_string(layer) + "." + suffix;
}

}  // namespace

template <class T>
LanguageModel<T>::LanguageModel(ModelConfig config, ModelParams<T> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto f = static_cast<std::size_t>(config_.d_ff);
  const auto l = static_cast<std::size_t>(config_.max_seq_len);
  auto expect = [&](const std::string& path, const Shape& shape) {
    if (!params_.contains(path)) {
      throw std::invalid_argument("model parameters lack '" + path + "'");
    }
    if (params_.at(path).shape() != shape) {
      throw DimensionError("parameter '" + path + "' has shape " +
                           shape_to_string(params_.at(path).shape()) + ", expected " +
                           shape_to_string(shape));
    }
  };
  expect("tok_emb", {v, d});
  expect("pos_emb", {l, d});
  for (int i = 0; i < config_.n_layers; ++i) {
    expect(layer_path(i, "ln1.gain"), {d});
    expect(layer_path(i, "ln1.bias"), {d});
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      expect(layer_path(i, w), {d, d});
    expect(layer_path(i, "ln2.gain"), {d});
    expect(layer_path(i, "ln2.bias"), {d});
    expect(layer_path(i, "ffn.w1"), {f, d});
    expect(layer_path(i, "ffn.b1"), {f});
    expect(layer_path(i, "ffn.w2"), {d, f});
    expect(layer_path(i, "ffn.b2"), {d});
  }
  expect("ln_f.gain", {d});
  expect("ln_f.bias", {d});
  expect("head.w", {v, d});
  expect("head.b", {v});
  const std::size_t expected_count = 6 + 12 * static_cast<std::size_t>(config_.n_layers);
  if (params_.size() != expected_count) {
    throw std::invalid_argument("model parameters contain unexpected entries");
  }
}

template <class T>
LanguageModel<T> LanguageModel<T>::init(const ModelConfig& config, Rng& rng,
                                        double init_std) {
  config.validate();
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.d_ff);
  const auto l = static_cast<std::size_t>(config.max_seq_len);
  Rng init_rng = rng.fork("init");
  auto normal = [&](Shape shape) {
    std::vector<T> values(shape_numel(shape));
    for (auto& x : values) x = static_cast<T>(init_rng.normal() * init_std);
    return Tensor<T>::from(std::move(shape), std::move(values), true);
  };
  auto constant = [](Shape shape, T value) { return Tensor<T>::full(std::move(shape), value, true); };

  ModelParams<T> p;
  p.add("tok_emb", normal({v, d}));
  p.add("pos_emb", normal({l, d}));
  for (int i = 0; i < config.n_layers; ++i) {
    p.add(layer_path(i, "ln1.gain"), constant({d}, T(1)));
    p.add(layer_path(i, "ln1.bias"), constant({d}, T(0)));
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      p.add(layer_path(i, w), normal({d, d}));
    p.add(layer_path(i, "ln2.gain"), constant({d}, T(1)));
    p.add(layer_path(i, "ln2.bias"), constant({d}, T(0)));
    p.add(layer_path(i, "ffn.w1"), normal({f, d}));
    p.add(layer_path(i, "ffn.b1"), constant({f}, T(0)));
    p.add(layer_path(i, "ffn.w2"), normal({d, f}));
    p.add(layer_path(i, "ffn.b2"), constant({d}, T(0)));
  }
  p.add("ln_f.gain", constant({d}, T(1)));
  p.add("ln_f.bias", constant({d}, T(0)));
  p.add("head.w", constant({v, d}, T(0)));
  p.add("head.b", constant({v}, T(0)));
  return LanguageModel(config, std::move(p));
}

template <class T>
bool LanguageModel<T>::is_projection(std::string_view path) {
  if (path == "head.w") return true;
  if (!path.starts_with("layers.")) return false;
  for (std::string_view suffix : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo",
                                  ".ffn.w1", ".ffn.w2"}) {
    if (path.ends_with(suffix)) return true;
  }
  return false;
}

template <class T>
void LanguageModel<T>::check_ids(std::span<const TokenId> ids) const {
  if (ids.empty()) throw DimensionError("forward: empty input sequence");
  if (ids.size() > static_cast<std::size_t>(config_.max_seq_len)) {
    throw DimensionError("forward: sequence length " + std::to_string(ids.size()) +
                         " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (TokenId id : ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw DimensionError("forward: token id " + std::to_string(id) +
                           " out of range for vocab_size " +
                           std::to_string(config_.vocab_size));
    }
  }
}

template <class T>
Tensor<T> LanguageModel<T>::project(Graph<T>& g, const Tensor<T>& x,
                                    const std::string& path,
                                    const ForwardOptions<T>& opts) const {
  auto y = g.matmul_nt(x, params_.at(path));
  if (opts.hook) {
    auto extra = opts.hook->delta(g, path, x, opts.training, opts.rng);
    if (extra.defined()) y = g.add(y, extra);
  }
  return y;
}

template <class T>
Tensor<T> LanguageModel<T>::forward(Graph<T>& g, std::span<const TokenId> ids,
                                    AttentionMode mode,
                                    const ForwardOptions<T>& opts) const {
  check_ids(ids);
  const std::size_t n = ids.size();
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t heads = static_cast<std::size_t>(config_.n_heads);
  const std::size_t dh = d / heads;
  const double p_drop = opts.training ? config_.dropout_rate : 0.0;
  if (p_drop > 0.0 && !opts.rng) {
    throw std::invalid_argument("forward: training with dropout requires an Rng");
  }
  auto drop = [&](const Tensor<T>& t) { return p_drop > 0.0 ? g.dropout(t, p_drop, *opts.rng) : t; };

  std::vector<TokenId> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<TokenId>(i);
  auto x = g.add(g.embedding(params_.at("tok_emb"), ids),
                 g.embedding(params_.at("pos_emb"), positions));
  x = drop(x);

  const T attn_scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T ln_eps = T(1e-5);
  for (int layer = 0; layer < config_.n_layers; ++layer) {
    auto h = g.layer_norm(x, params_.at(layer_path(layer, "ln1.gain")),
                          params_.at(layer_path(layer, "ln1.bias")), ln_eps);
    auto q = project(g, h, layer_path(layer, "attn.wq"), opts);
    auto k = project(g, h, layer_path(layer, "attn.wk"), opts);
    auto v = project(g, h, layer_path(layer, "attn.wv"), opts);
    std::vector<Tensor<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      auto qh = g.slice_cols(q, hd * dh, dh);
      auto kh = g.slice_cols(k, hd * dh, dh);
      auto vh = g.slice_cols(v, hd * dh, dh);
      auto scores = g.scale(g.matmul_nt(qh, kh), attn_scale);
      if (mode == AttentionMode::kCausal) scores = g.causal_mask(scores);
      auto probs = drop(g.softmax(scores, 1));
      head_out.push_back(g.matmul(probs, vh));
    }
    auto attn = heads == 1 ? head_out[0] : g.concat_cols(head_out);
    attn = project(g, attn, layer_path(layer, "attn.wo"), opts);
    x = g.add(x, drop(attn));

    auto h2 = g.layer_norm(x, params_.at(layer_path(layer, "ln2.gain")),
                           params_.at(layer_path(layer, "ln2.bias")), ln_eps);
    auto ff = g.add_row(project(g, h2, layer_path(layer, "ffn.w1"), opts),
                        params_.at(layer_path(layer, "ffn.b1")));
    ff = g.gelu(ff);
    ff = g.add_row(project(g, ff, layer_path(layer, "ffn.w2"), opts),
                   params_.at(layer_path(layer, "ffn.b2")));
    x = g.add(x, drop(ff));
  }
  auto xf = g.layer_norm(x, params_.at("ln_f.gain"), params_.at("ln_f.bias"), ln_eps);
  return g.add_row(project(g, xf, "head.w", opts), params_.at("head.b"));
}

template <class T>
Tensor<T> LanguageModel<T>::mlm_loss(Graph<T>& g, const MlmBatch& batch,
                                     const ForwardOptions<T>& opts,
                                     Reduction reduction, AttentionMode mode) const {
  batch.validate();
  auto logits = forward(g, batch.input_ids, mode, opts);
  return g.cross_entropy(logits, batch.target_ids,
                         std::span<const std::uint8_t>(batch.mask), reduction);
}

template <class T>
Tensor<T> LanguageModel<T>::causal_lm_loss(Graph<T>& g, std::span<const TokenId> ids,
                                           const ForwardOptions<T>& opts) const {
  if (ids.size() < 2) {
    throw DimensionError("causal_lm_loss: sequence must have at least 2 tokens");
  }
  // Causal rows 0..n-2 do not depend on the final token, so it is not fed.
  auto logits = forward(g, ids.first(ids.size() - 1), AttentionMode::kCausal, opts);
  return g.cross_entropy(logits, ids.subspan(1), std::nullopt, Reduction::kMean);
}

template <class T>
Tensor<T> LanguageModel<T>::response_nll(Graph<T>& g, std::span<const TokenId> prompt,
                                         std::span<const TokenId> response,
                                         const ForwardOptions<T>& opts,
                                         Reduction reduction) const {
  if (prompt.empty()) throw DimensionError("response_nll: empty prompt");
  if (response.empty()) throw DimensionError("response_nll: empty response");
  std::vector<TokenId> ids(prompt.begin(), prompt.end());
  ids.insert(ids.end(), response.begin(), response.end());
  const std::size_t n = ids.size();
  auto logits = forward(g, std::span<const TokenId>(ids).first(n - 1),
                        AttentionMode::kCausal, opts);
  std::vector<std::uint8_t> mask(n - 1, 0);
  for (std::size_t i = prompt.size() - 1; i < n - 1; ++i) mask[i] = 1;
  return g.cross_entropy(logits, std::span<const TokenId>(ids).subspan(1),
                         std::span<const std::uint8_t>(mask), reduction);
}

template <class T>
Tensor<T> LanguageModel<T>::sequence_logprob(Graph<T>& g, std::span<const TokenId> prompt,
                                             std::span<const TokenId> response,
                                             const ForwardOptions<T>& opts) const {
  return g.scale(response_nll(g, prompt, response, opts, Reduction::kSum), T(-1));
}

template <class T>
T LanguageModel<T>::sequence_logprob(std::span<const TokenId> prompt,
                                     std::span<const TokenId> response,
                                     const ProjectionHook<T>* hook) const {
  Graph<T> g(GradMode::kDisabled);
  ForwardOptions<T> opts;
  opts.hook = hook;
  return sequence_logprob(g, prompt, response, opts).item();
}

template <class T>
std::vector<TokenId> LanguageModel<T>::generate(std::span<const TokenId> prompt,
                                                std::size_t max_new,
                                                const ProjectionHook<T>* hook) const {
  if (prompt.empty()) throw DimensionError("generate: empty prompt");
  std::vector<TokenId> ids(prompt.begin(), prompt.end());
  ForwardOptions<T> opts;
  opts.hook = hook;
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  for (std::size_t step = 0; step < max_new; ++step) {
    if (ids.size() >= static_cast<std::size_t>(config_.max_seq_len)) break;
    Graph<T> g(GradMode::kDisabled);
    auto logits = forward(g, ids, AttentionMode::kCausal, opts);
    const auto row = logits.data().subspan((ids.size() - 1) * v, v);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    ids.push_back(best);
    if (best == kEos) break;
  }
  return ids;
}

template class ModelParams<float>;
template class ModelParams<double>;
template class LanguageModel<float>;
template class LanguageModel<double>;

}  // namespace desklm
