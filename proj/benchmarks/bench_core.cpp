#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "desklm/datapipe.hpp"
#include "desklm/graph.hpp"
#include "desklm/metrics.hpp"
#include "desklm/model.hpp"
#include "desklm/tokenizer.hpp"

namespace {

using namespace desklm;

Tensor<float> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen) {
  std::normal_distribution<float> n;
  std::vector<float> v(r * c);
  for (auto& x : v) x = n(gen);
  return Tensor<float>::from({r, c}, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 gen(1);
  const auto a = random_matrix(n, n, gen);
  const auto b = random_matrix(n, n, gen);
  for (auto _ : state) {
    Graph<float> g(GradMode::kDisabled);
    benchmark::DoNotOptimize(g.matmul(a, b).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

LanguageModel<float> bench_model(int layers, int d) {
  ModelConfig c;
  c.vocab_size = 512;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = 4;
  c.d_ff = 4 * d;
  c.max_seq_len = 64;
  Rng rng(3);
  return LanguageModel<float>::init(c, rng);
}

std::vector<TokenId> bench_ids(std::size_t n) {
  std::vector<TokenId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<TokenId>(5 + (i * 37) % 500);
  return ids;
}

void BM_Forward(benchmark::State& state) {
  const auto model = bench_model(4, static_cast<int>(state.range(0)));
  const auto ids = bench_ids(64);
  for (auto _ : state) {
    Graph<float> g(GradMode::kDisabled);
    benchmark::DoNotOptimize(model.forward(g, ids, AttentionMode::kCausal).data().data());
  }
  state.SetItemsProcessed(state.iterations() * ids.size());
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  auto model = bench_model(4, static_cast<int>(state.range(0)));
  model.params().set_requires_grad(true);
  const auto ids = bench_ids(64);
  for (auto _ : state) {
    Graph<float> g;
    g.backward(model.causal_lm_loss(g, ids));
    model.params().clear_grads();
  }
  state.SetItemsProcessed(state.iterations() * ids.size());
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

std::string bench_corpus() {
  const std::vector<std::string> sentences = {
      "高血压患者应低盐饮食并规律服药。", "糖尿病患者需要定期监测血糖。",
      "阿莫西林常用于治疗呼吸道感染。", "the patient reported mild headache and fever",
      "dosage should be adjusted for renal function"};
  std::string text;
  for (int i = 0; i < 200; ++i) text += sentences[i % sentences.size()] + "\n";
  return text;
}

void BM_BpeTrain(benchmark::State& state) {
  const auto text = bench_corpus();
  for (auto _ : state) benchmark::DoNotOptimize(train_bpe(text, 400).size());
  state.SetBytesProcessed(state.iterations() * text.size());
}
BENCHMARK(BM_BpeTrain)->Unit(benchmark::kMillisecond);

void BM_BpeEncode(benchmark::State& state) {
  const auto text = bench_corpus();
  const auto vocab = train_bpe(text, 400);
  for (auto _ : state) benchmark::DoNotOptimize(vocab.encode(text).size());
  state.SetBytesProcessed(state.iterations() * text.size());
}
BENCHMARK(BM_BpeEncode);

void BM_Dedup(benchmark::State& state) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> ch('a', 'z');
  std::vector<data::RawDocument> docs;
  for (int i = 0; i < state.range(0); ++i) {
    std::string s(200, ' ');
    for (auto& c : s) c = static_cast<char>(ch(gen));
    docs.push_back({"d" + std::to_string(i), "textbook", s});
  }
  for (auto _ : state) benchmark::DoNotOptimize(data::dedup(docs).kept.size());
  state.SetItemsProcessed(state.iterations() * docs.size());
}
BENCHMARK(BM_Dedup)->Arg(250)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_RougeL(benchmark::State& state) {
  const std::string cand = "主诉：头痛三天，伴发热。诊断：上呼吸道感染。建议：多饮水，休息。";
  const std::string ref = "主诉：头痛发热三天。诊断：急性上呼吸道感染。建议：休息，对症治疗。";
  for (auto _ : state) benchmark::DoNotOptimize(eval::rouge_l(cand, ref));
}
BENCHMARK(BM_RougeL);

void BM_SentenceBleu(benchmark::State& state) {
  const std::string cand = "建议 多 饮水 注意 休息 必要 时 服用 退热 药";
  const std::string ref = "建议 注意 休息 多 饮水 体温 超过 三十八度 可 服用 退热 药";
  for (auto _ : state) benchmark::DoNotOptimize(eval::sentence_bleu(cand, ref, eval::TokenMode::kWord));
}
BENCHMARK(BM_SentenceBleu);

}  // namespace

BENCHMARK_MAIN();
