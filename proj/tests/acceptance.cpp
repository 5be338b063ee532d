// Acceptance suite: one line per criterion, nonzero exit when any fails.
// Usage: desklm_acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "desklm/datapipe.hpp"
#include "desklm/dpo.hpp"
#include "desklm/eval.hpp"
#include "desklm/io.hpp"
#include "desklm/lora.hpp"
#include "desklm/metrics.hpp"
#include "desklm/optim.hpp"
#include "desklm/run_config.hpp"
#include "desklm/runner.hpp"
#include "desklm/tokenizer.hpp"
#include "desklm/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace desklm;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Random small architecture plus a random LoRA target set that fits it.
struct ToySetup {
  ModelConfig model;
  LoraConfig lora;
};

ToySetup random_setup(std::mt19937_64& gen) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); };
  ToySetup s;
  const int heads = pick(1, 3);
  s.model = testing::tiny_config(pick(8, 24), heads * pick(2, 4), pick(1, 2), heads,
                                 pick(4, 16), 8);
  std::vector<std::string> candidates;
  for (int l = 0; l < s.model.n_layers; ++l) {
    for (const char* p : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.w1", "ffn.w2"}) {
      candidates.push_back("layers." + std::to_string(l) + "." + p);
    }
  }
  candidates.push_back("head.w");
  for (const auto& c : candidates)
    if (pick(0, 1)) s.lora.targets.push_back(c);
  if (s.lora.targets.empty()) s.lora.targets.push_back(candidates[pick(0, candidates.size() - 1)]);
  const int max_rank = std::min({s.model.d_model, s.model.d_ff, s.model.vocab_size});
  s.lora.rank = pick(1, max_rank);
  s.lora.alpha = pick(1, 32);
  s.lora.dropout = 0.0;
  return s;
}

void randomize_adapters(AdaptedModel<float>& m, std::mt19937_64& gen, double std) {
  std::normal_distribution<double> n(0.0, std);
  for (auto& [name, t] : m.trainable_parameters())
    for (auto& x : t.mutable_data()) x = static_cast<float>(n(gen));
}

// --- 1 ---------------------------------------------------------------------------
Outcome lora_attach_identity() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(101);
  std::size_t compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_setup(gen);
    const auto base = testing::random_model<float>(s.model, 1000 + trial, 0.5);
    Rng rng(trial);
    const auto adapted = AdaptedModel<float>::attach(base, s.lora, rng);
    const auto ids = testing::random_ids(2 + trial % 7, s.model.vocab_size, gen);
    for (auto mode : {AttentionMode::kCausal, AttentionMode::kBidirectional}) {
      Graph<float> g(GradMode::kDisabled);
      const auto a = base.forward(g, ids, mode);
      const auto b = adapted.forward(g, ids, mode);
      for (std::size_t i = 0; i < a.numel(); ++i) {
        if (a.at(i) != b.at(i)) {
          return {false, fmt("trial %d element %zu: %.9g vs %.9g", trial, i, a.at(i), b.at(i))};
        }
      }
      compared += a.numel();
    }
  }
  const double secs = seconds_since(t0);
  return {secs < 60.0, fmt("100 models, %zu logits bit-identical, %.2fs", compared, secs)};
}

// --- 2 ---------------------------------------------------------------------------
Outcome lora_merge_equivalence() {
  std::mt19937_64 gen(202);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_setup(gen);
    const auto base = testing::random_model<float>(s.model, 2000 + trial, 0.5);
    Rng rng(trial);
    auto adapted = AdaptedModel<float>::attach(base, s.lora, rng);
    randomize_adapters(adapted, gen, 0.3);
    const auto merged = adapted.merged();
    const auto ids = testing::random_ids(2 + trial % 7, s.model.vocab_size, gen);
    Graph<float> g(GradMode::kDisabled);
    const auto a = adapted.forward(g, ids, AttentionMode::kCausal);
    const auto b = merged.forward(g, ids, AttentionMode::kCausal);
    for (std::size_t i = 0; i < a.numel(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(a.at(i) - b.at(i))));
  }
  return {worst < 1e-5, fmt("max |adapter - merged| = %.3g over 100 fp32 trials", worst)};
}

// --- 3 ---------------------------------------------------------------------------
Outcome lora_count_law() {
  std::mt19937_64 gen(303);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_setup(gen);
    const auto base = testing::random_model<float>(s.model, 3000 + trial, 0.1);
    Rng rng(trial);
    const auto adapted = AdaptedModel<float>::attach(base, s.lora, rng);
    std::size_t expect = 0;
    for (const auto& path : s.lora.targets) {
      const auto& w = base.params().at(path);
      expect += static_cast<std::size_t>(s.lora.rank) * (w.rows() + w.cols());
    }
    std::size_t stored = 0;
    for (const auto& [n, t] : adapted.trainable_parameters()) stored += t.numel();
    if (adapted.trainable_count() != expect || stored != expect) {
      return {false, fmt("trial %d: reported %zu, stored %zu, r(d+k) sum %zu", trial,
                         adapted.trainable_count(), stored, expect)};
    }
  }
  return {true, "200 random target sets: reported == stored == sum r*(d+k)"};
}

// --- 4 ---------------------------------------------------------------------------
Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = testing::tiny_config(12, 8, 2, 2, 16, 8);
  const auto model = testing::random_model<double>(cfg, 404, 0.5);
  const auto n_params = model.params().count();
  if (n_params > 10000) return {false, fmt("toy model has %zu parameters", n_params)};
  std::vector<std::pair<std::string, Tensor<double>>> all(model.params().entries().begin(),
                                                           model.params().entries().end());
  Rng mask_rng(4);
  const std::vector<TokenId> ids = {1, 7, 9, 5, 11, 6, 8, 2};
  const auto batch = make_mlm_batch(ids, 0.4, mask_rng);
  const auto mlm = testing::gradient_check(all, [&](Graph<double>& g) { return model.mlm_loss(g, batch); });
  const auto causal =
      testing::gradient_check(all, [&](Graph<double>& g) { return model.causal_lm_loss(g, ids); });

  LoraConfig lc;
  lc.rank = 2;
  lc.dropout = 0.0;
  lc.targets = attention_projection_paths(cfg.n_layers);
  lc.targets.push_back("layers.0.ffn.w1");
  lc.targets.push_back("head.w");
  Rng rng(4);
  auto policy = AdaptedModel<double>::attach(model, lc, rng);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& [n, t] : policy.trainable_parameters())
    for (auto& x : t.mutable_data()) x = nd(gen);
  const std::vector<TokenId> prompt = {1, 6, 7}, chosen = {8, 9, 2}, rejected = {10, 5, 11, 2};
  const double rc = model.sequence_logprob(prompt, chosen);
  const double rr = model.sequence_logprob(prompt, rejected);
  const auto dpo = testing::gradient_check(policy.trainable_parameters(), [&](Graph<double>& g) {
    auto c = policy.base().sequence_logprob(g, prompt, chosen, policy.options());
    auto r = policy.base().sequence_logprob(g, prompt, rejected, policy.options());
    return dpo_loss<double>(g, c, r, rc, rr, 0.1);
  });
  const double secs = seconds_since(t0);
  const bool ok = mlm.max_rel < 1e-4 && causal.max_rel < 1e-4 && dpo.max_rel < 1e-4 && secs < 300;
  return {ok, fmt("%zu params; max rel err mlm %.2g (%s), causal %.2g (%s), dpo %.2g over %zu "
                  "adapter params (%s); %.1fs",
                  n_params, mlm.max_rel, mlm.worst.c_str(), causal.max_rel, causal.worst.c_str(),
                  dpo.max_rel, dpo.checked, dpo.worst.c_str(), secs)};
}

// --- 5 ---------------------------------------------------------------------------
Outcome uniform_mlm_fixture() {
  std::string detail;
  bool ok = true;
  for (int v : {4, 16, 256}) {
    Rng rng(v);
    const auto model = LanguageModel<double>::init(testing::tiny_config(v), rng);
    std::vector<TokenId> ids(8);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i % v);
    Rng mask_rng(5);
    const auto batch = make_mlm_batch(ids, 0.5, mask_rng);
    Graph<double> g(GradMode::kDisabled);
    const double loss = model.mlm_loss(g, batch).item();
    const double err = std::abs(loss - std::log(static_cast<double>(v)));
    ok = ok && err <= 1e-6;
    detail += fmt("V=%d |L-lnV|=%.1e ", v, err);
  }
  return {ok, detail};
}

// --- 6 ---------------------------------------------------------------------------
Outcome dpo_fixtures() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = testing::tiny_config(32, 16, 2, 2, 32, 16);
  const auto reference = testing::random_model<float>(cfg, 606, 0.3);
  LoraConfig lc;
  lc.rank = 4;
  lc.alpha = 8;
  lc.dropout = 0.0;
  for (int l = 0; l < cfg.n_layers; ++l)
    for (const char* p : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.w1", "ffn.w2"})
      lc.targets.push_back("layers." + std::to_string(l) + "." + p);
  lc.targets.push_back("head.w");
  Rng rng(606);
  auto policy = AdaptedModel<float>::attach(reference, lc, rng);

  std::mt19937_64 gen(606);
  auto seq = [&](std::size_t n) {
    std::vector<TokenId> s(n);
    for (auto& x : s) x = std::uniform_int_distribution<TokenId>(kFirstByte, cfg.vocab_size - 1)(gen);
    return s;
  };
  std::vector<DpoExample> triples;
  for (int i = 0; i < 32; ++i) {
    auto prompt = seq(3);
    prompt.insert(prompt.begin(), kBos);
    auto chosen = seq(3), rejected = seq(3);
    chosen.push_back(kEos);
    rejected.push_back(kEos);
    triples.push_back({prompt, chosen, rejected});
  }

  // At attach time the policy is the reference.
  double worst_ln2 = 0;
  for (const auto& t : triples) {
    Graph<float> g(GradMode::kDisabled);
    auto c = policy.base().sequence_logprob(g, t.prompt, t.chosen, policy.options());
    auto r = policy.base().sequence_logprob(g, t.prompt, t.rejected, policy.options());
    const float rc = reference.sequence_logprob(t.prompt, t.chosen);
    const float rr = reference.sequence_logprob(t.prompt, t.rejected);
    const double loss = dpo_loss<float>(g, c, r, rc, rr, 0.1).item();
    worst_ln2 = std::max(worst_ln2, std::abs(loss - std::numbers::ln2));
  }

  DpoConfig dc;
  dc.train.max_steps = 200;
  dc.train.lr = 1e-2;
  dc.train.warmup_ratio = 0.05;
  const auto result = train_dpo(policy, reference, triples, dc, rng);
  const auto margins = reward_margins(policy, result, triples, dc.beta);
  const auto positive = std::count_if(margins.begin(), margins.end(), [](double m) { return m > 0; });
  const double frac = static_cast<double>(positive) / margins.size();
  const double secs = seconds_since(t0);
  const bool ok = worst_ln2 <= 1e-6 && result.train.steps == 200 && frac >= 0.9 && secs < 300;
  return {ok, fmt("|loss - ln2| <= %.1e at attach; %ld steps, %ld/32 margins positive; %.1fs",
                  worst_ln2, result.train.steps, static_cast<long>(positive), secs)};
}

// --- 7 ---------------------------------------------------------------------------
Outcome end_to_end_overfit(const fs::path& data_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto text = read_file((data_dir / "corpus.txt").string());
  std::vector<std::string> lines;
  {
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);)
      if (!l.empty()) lines.push_back(l);
  }
  const auto vocab = train_bpe(text, 512);
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.d_model = 128;
  mc.n_layers = 4;
  mc.n_heads = 4;
  mc.d_ff = 512;
  mc.max_seq_len = 64;
  const auto chunks = chunk_corpus(vocab, lines, 64);
  Rng rng(7);
  auto model = LanguageModel<float>::init(mc, rng, 0.02);

  TrainConfig tc;
  tc.max_steps = 2000;
  tc.lr = 5e-4;
  tc.warmup_ratio = 0.02;
  long first_below = -1;
  double last = 0;
  const auto result = pretrain(model, chunks, Objective::kCausal, tc, rng, [&](const StepEvent& e) {
    if (e.step % 25 != 0) return true;
    last = mean_causal_loss(model, chunks);
    if (last < 0.5 && first_below < 0) first_below = e.step;
    return last >= 0.1;
  });
  if (first_below < 0) {
    return {false, fmt("%zu sentences, %zu windows; causal loss %.3f after %ld steps", lines.size(),
                       chunks.size(), last, result.steps)};
  }

  // Greedy continuation of every window from its first 16 tokens.
  std::size_t reproduced = 0;
  for (const auto& c : chunks) {
    if (c.size() < 24) continue;
    const std::vector<TokenId> prefix(c.begin(), c.begin() + 16);
    const auto out = model.generate(prefix, 8);
    if (out.size() == 24 && std::equal(out.begin(), out.end(), c.begin())) ++reproduced;
  }
  const double secs = seconds_since(t0);
  return {reproduced > 0 && secs < 600,
          fmt("%zu sentences, %zu windows; loss < 0.5 at step %ld (final %.3f at %ld); greedy "
              "reproduced 8-token continuation in %zu/%zu windows; %.0fs",
              lines.size(), chunks.size(), first_below, last, result.steps, reproduced,
              chunks.size(), secs)};
}

// --- 8 ---------------------------------------------------------------------------
Outcome hyperparameter_echo(const fs::path& data_dir) {
  testing::TempDir dir("echo");
  write_file_atomic(dir.str("sft.jsonl"),
                    "{\"prompt\":\"高血压患者应注意什么？\",\"response\":\"低盐饮食，规律服药。\","
                    "\"origin\":\"public\",\"source\":\"t:1\"}\n");
  write_file_atomic(dir.str("run.ini"),
                    "[tokenize]\ncorpus = " + (data_dir / "corpus.txt").string() +
                        "\nvocab_size = 300\n[model]\nd_model = 16\nn_layers = 1\nn_heads = 2\n"
                        "d_ff = 32\nmax_seq_len = 32\n[pretrain]\nmax_steps = 2\n"
                        "[sft]\ndata = sft.jsonl\n");
  const auto config = RunConfig::load(dir.str("run.ini"));
  run_pipeline(config, {"tokenize", "pretrain", "sft"});
  const auto manifest = json::parse(read_file((config.out_dir / "sft.manifest.json").string()));
  const auto& s = manifest.at("config").at("sft");
  const std::vector<std::pair<std::string, json>> expect = {
      {"rank", 16},        {"alpha", 8.0},       {"dropout", 0.05},
      {"epochs", 2},       {"batch_size", 1},    {"lr", 2e-5},
      {"schedule", "cosine"}, {"warmup_ratio", 0.01}, {"accumulation", 4}};
  std::string mismatch;
  for (const auto& [k, v] : expect)
    if (!s.contains(k) || s.at(k) != v) mismatch += " " + k + "=" + (s.contains(k) ? s.at(k).dump() : "?");
  if (!mismatch.empty()) return {false, "manifest differs:" + mismatch};
  return {true, "sft manifest: rank 16, alpha 8, dropout 0.05, epochs 2, batch 1, lr 2e-5, cosine, "
                "warmup 0.01, accumulation 4"};
}

// --- 9 ---------------------------------------------------------------------------
Outcome schedule_fixture() {
  bool ok = true;
  std::string detail;
  for (long total : {100L, 1000L, 12345L}) {
    ScheduleConfig c;  // peak 2e-5, warmup ratio 0.01, cosine
    c.total_steps = total;
    const long w = c.warmup_steps();
    const double at_w = lr_at(w, c);
    const double ramp_step = w > 0 ? c.peak_lr / w : 0.0;
    const bool endpoints = lr_at(0, c) == 0.0 && std::abs(at_w - 2e-5) <= 1e-12 &&
                           std::abs(lr_at(total, c)) <= 1e-12;
    // Both one-sided limits meet the peak: the ramp reaches it exactly at w and
    // the cosine leaves it with zero slope.
    const bool continuous = std::abs(lr_at(w - 1, c) + ramp_step - at_w) <= 1e-15 &&
                            std::abs(lr_at(w + 1, c) - at_w) <= ramp_step * 1e-3 + 1e-15;
    ok = ok && endpoints && continuous;
    detail += fmt("T=%ld w=%ld %s; ", total, w, endpoints && continuous ? "ok" : "FAIL");
  }
  return {ok, detail};
}

// --- 10 --------------------------------------------------------------------------
Outcome metric_oracles() {
  std::mt19937_64 gen(1010);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); };
  const std::vector<std::string> alphabet = {"头", "痛", "发", "热", "咳", "嗽"};
  const std::vector<std::string> words = {"fever", "cough", "pain", "rest", "water", "dose"};
  double worst = 0.0;
  std::map<std::string, int> instances;
  auto check = [&](const std::string& name, double got, double want) {
    worst = std::max(worst, std::abs(got - want));
    ++instances[name];
    return std::abs(got - want) <= 1e-9;
  };
  bool ok = true;

  // Tuple metrics, through both the direct API and the task JSON path.
  auto random_docs = [&](std::size_t arity, int ndocs, std::vector<std::string> vals) {
    std::vector<oracle::Doc> docs(ndocs);
    for (auto& d : docs) {
      const int n = pick(0, 4);
      for (int i = 0; i < n; ++i) {
        oracle::Tuple t;
        for (std::size_t k = 0; k < arity; ++k) t.push_back(vals[pick(0, vals.size() - 1)]);
        d.push_back(t);
      }
    }
    return docs;
  };
  auto perturb = [&](std::vector<oracle::Doc> docs, std::vector<std::string> vals) {
    for (auto& d : docs) {
      for (auto& t : d)
        if (pick(0, 2) == 0) t[pick(0, t.size() - 1)] = vals[pick(0, vals.size() - 1)];
      if (pick(0, 3) == 0 && !d.empty()) d.pop_back();
      if (pick(0, 3) == 0 && !d.empty()) d.push_back(d.front());
    }
    return docs;
  };
  auto to_sets = [](const std::vector<oracle::Doc>& d) {
    return std::vector<eval::TupleSet>(d.begin(), d.end());
  };
  auto as_task = [](const std::string& id, const char* key, const std::vector<const char*>& fields,
                    const std::vector<oracle::Doc>& gold, const std::vector<oracle::Doc>& pred) {
    eval::EvalTask t;
    t.task_id = id;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      json g = {{"id", i}, {key, json::array()}}, p = {{"id", i}, {key, json::array()}};
      for (const auto& tup : gold[i]) {
        json o;
        for (std::size_t k = 0; k < fields.size(); ++k) o[fields[k]] = tup[k];
        g[key].push_back(o);
      }
      for (const auto& tup : pred[i]) {
        json o;
        for (std::size_t k = 0; k < fields.size(); ++k) o[fields[k]] = tup[k];
        p[key].push_back(o);
      }
      t.gold.push_back(g);
      t.pred.push_back(p);
    }
    return t;
  };

  const std::vector<std::string> vals = {"a", "b", "c"};
  for (int trial = 0; trial < 60; ++trial) {
    const int ndocs = pick(1, 5);
    // strict span F1
    {
      std::vector<std::vector<eval::SpanEntity>> g(ndocs), p(ndocs);
      std::vector<oracle::Doc> og(ndocs), op(ndocs);
      for (int d = 0; d < ndocs; ++d) {
        for (int side = 0; side < 2; ++side) {
          const int n = pick(0, 4);
          for (int i = 0; i < n; ++i) {
            const std::size_t s = pick(0, 5), e = s + pick(1, 3);
            const std::string cat = pick(0, 1) ? "dis" : "sym";
            (side ? p : g)[d].push_back({s, e, cat});
            (side ? op : og)[d].push_back({std::to_string(s), std::to_string(e), cat});
          }
        }
      }
      ok &= check("strict span F1", eval::micro_f1_strict(g, p), oracle::micro_f1(og, op));
      auto task = as_task("CMeEE", "entities", {"start", "end", "type"}, og, op);
      ok &= check("strict span F1", eval::score_task(task)[0].score, oracle::micro_f1(og, op));
    }
    // triple / quadruple / pair F1
    {
      const auto g = random_docs(3, ndocs, vals);
      const auto p = perturb(g, vals);
      std::vector<std::vector<eval::SpoTriple>> sg, sp;
      for (const auto& d : g) {
        sg.emplace_back();
        for (const auto& t : d) sg.back().push_back({t[0], t[1], t[2]});
      }
      for (const auto& d : p) {
        sp.emplace_back();
        for (const auto& t : d) sp.back().push_back({t[0], t[1], t[2]});
      }
      ok &= check("triple F1", eval::triple_f1(sg, sp), oracle::micro_f1(g, p));
      ok &= check("triple F1",
                  eval::score_task(as_task("CMeIE", "spo", {"subject", "predicate", "object"}, g, p))[0].score,
                  oracle::micro_f1(g, p));
      auto macro = as_task("CMedCausal", "spo", {"subject", "predicate", "object"}, g, p);
      macro.labels = vals;
      ok &= check("triple macro-F1", eval::score_task(macro)[0].score, oracle::tuple_macro_f1(g, p, 1, vals));
      ok &= check("triple macro-F1", eval::tuple_macro_f1(to_sets(g), to_sets(p), 1, vals),
                  oracle::tuple_macro_f1(g, p, 1, vals));
    }
    {
      const auto g = random_docs(4, ndocs, vals);
      const auto p = perturb(g, vals);
      ok &= check("quadruple F1", eval::micro_f1(to_sets(g), to_sets(p)), oracle::micro_f1(g, p));
      ok &= check("quadruple F1",
                  eval::score_task(as_task("CHIP-CDEE", "events",
                                           {"subject", "site", "descriptor", "state"}, g, p))[0].score,
                  oracle::micro_f1(g, p));
    }
    {
      const auto g = random_docs(2, ndocs, vals);
      const auto p = perturb(g, vals);
      ok &= check("pair F1", eval::micro_f1(to_sets(g), to_sets(p)), oracle::micro_f1(g, p));
      ok &= check("pair F1",
                  eval::score_task(as_task("CHIP-CDN", "pairs", {"term", "standard"}, g, p))[0].score,
                  oracle::micro_f1(g, p));
    }
    // labels
    {
      const std::vector<std::string> labels = {"x", "y", "z", "w"};
      const int n = pick(1, 12);
      std::vector<std::string> g(n), p(n);
      for (int i = 0; i < n; ++i) {
        g[i] = labels[pick(0, 3)];
        p[i] = pick(0, 1) ? g[i] : labels[pick(0, 3)];
      }
      ok &= check("macro-F1", eval::macro_f1(g, p, labels), oracle::macro_f1(g, p, labels));
      ok &= check("accuracy", eval::accuracy(g, p), oracle::accuracy(g, p));
      std::vector<std::string> ga(n), pa(n);
      for (int i = 0; i < n; ++i) {
        ga[i] = std::string(1, static_cast<char>('A' + pick(0, 3)));
        pa[i] = pick(0, 1) ? ga[i] : std::string(1, static_cast<char>('A' + pick(0, 3)));
      }
      ok &= check("MCQ accuracy", eval::mcq_accuracy(ga, pa), oracle::accuracy(ga, pa));
    }
    // MRR@10
    {
      const int q = pick(1, 6);
      std::vector<std::vector<std::string>> rankings(q);
      std::vector<std::string> relevant(q);
      for (int i = 0; i < q; ++i) {
        std::vector<std::string> pool;
        for (int d = 0; d < 15; ++d) pool.push_back("doc" + std::to_string(d));
        std::shuffle(pool.begin(), pool.end(), gen);
        pool.resize(pick(0, 14));
        rankings[i] = pool;
        relevant[i] = "doc" + std::to_string(pick(0, 14));
      }
      ok &= check("MRR@10", eval::mrr_at_10(rankings, relevant), oracle::mrr_at_10(rankings, relevant));
    }
    // generation metrics on character and word tokens
    for (int mode = 0; mode < 2; ++mode) {
      const auto& alpha = mode ? words : alphabet;
      auto sentence = [&](int lo, int hi) {
        std::vector<std::string> toks(pick(lo, hi));
        for (auto& t : toks) t = alpha[pick(0, alpha.size() - 1)];
        return toks;
      };
      auto join = [&](const std::vector<std::string>& toks) {
        std::string s;
        for (const auto& t : toks) s += (mode && !s.empty() ? " " : "") + t;
        return s;
      };
      const auto c = sentence(0, 12), r = sentence(1, 12);
      const auto m = mode ? eval::TokenMode::kWord : eval::TokenMode::kChar;
      ok &= check("ROUGE-L", eval::rouge_l(join(c), join(r), m), oracle::rouge_l(c, r));
      ok &= check("smoothed BLEU", eval::sentence_bleu(join(c), join(r), m), oracle::bleu(c, r));
    }
    // entity F1
    {
      const std::vector<std::string> lexicon = {"头痛", "发热", "咳嗽", "热咳"};
      const int n = pick(1, 5);
      std::vector<std::string> cands(n), refs(n);
      for (int i = 0; i < n; ++i) {
        for (int k = pick(0, 6); k > 0; --k) cands[i] += alphabet[pick(0, alphabet.size() - 1)];
        for (int k = pick(0, 6); k > 0; --k) refs[i] += alphabet[pick(0, alphabet.size() - 1)];
      }
      ok &= check("entity F1", eval::entity_f1(cands, refs, lexicon), oracle::entity_f1(cands, refs, lexicon));
    }
  }
  std::string counts;
  int fewest = 1 << 30;
  for (const auto& [name, n] : instances) fewest = std::min(fewest, n);
  ok = ok && fewest >= 50;
  return {ok, fmt("%zu metrics, >= %d instances each, max |diff| %.2g", instances.size(), fewest, worst)};
}

// --- 11 --------------------------------------------------------------------------
Outcome aggregation_fixture() {
  // Published per-task column, in hundredths so the check sum is exact.
  const std::vector<std::pair<std::string, long>> table = {
      {"CMeEE", 7717},        {"CMeIE", 5700},        {"CMedCausal", 4388},
      {"CHIP-CDEE", 7102},    {"CHIP-CDN", 7403},     {"CHIP-CTC", 7138},
      {"KUAKE-QIC", 8716},    {"CHIP-STS", 8686},     {"KUAKE-QTR", 6602},
      {"KUAKE-QQR", 8684},    {"KUAKE-IR", 1823},     {"CHIP-MDCFNPC", 7880},
      {"IMCS-V2-NER", 8872},  {"IMCS-V2-DAC", 8363},  {"IMCS-V2-SR-Utterance-Level", 7183},
      {"IMCS-V2-SR-Dialog-Level", 7440}, {"IMCS-V2-MRG", 5716}, {"MedDG", 2168}};
  long hundredths = 0;
  std::vector<eval::TaskResult> results;
  for (const auto& [id, h] : table) {
    hundredths += h;
    results.push_back({id, "fixture", static_cast<double>(h) / 100.0});
  }
  // 121581 / 18 = 6754.5 hundredths exactly.
  const bool sum_ok = hundredths == 121581 && hundredths * 2 == 6754.5 * 2 * 18;
  const double got = eval::aggregate_macro(results);
  const auto report = eval::MetricReport::build(results);
  const bool ok = sum_ok && results.size() == 18 && std::abs(got - 67.545) <= 0.005 &&
                  report.cblue_overall && std::abs(*report.cblue_overall - got) < 1e-12;
  return {ok, fmt("18 scores, integer check sum %ld/18 = %.4f; aggregate_macro = %.6f", hundredths,
                  hundredths / 1800.0, got)};
}

// --- 12 --------------------------------------------------------------------------
Outcome dedup_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(1212);
  // A 400-character CJK range keeps unrelated 5-shingles from colliding.
  auto cjk = [&] {
    const unsigned cp = 0x4e00 + std::uniform_int_distribution<unsigned>(0, 399)(gen);
    std::string s;
    s += static_cast<char>(0xe0 | (cp >> 12));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    s += static_cast<char>(0x80 | (cp & 0x3f));
    return s;
  };
  auto text = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += cjk();
    return s;
  };
  std::vector<data::RawDocument> docs;
  for (int i = 0; i < 850; ++i) docs.push_back({fmt("base-%03d", i), "textbook", text(200)});
  std::vector<int> sources(850);
  std::iota(sources.begin(), sources.end(), 0);
  std::shuffle(sources.begin(), sources.end(), gen);
  std::set<std::string> planted;
  std::vector<data::RawDocument> extra;
  for (int i = 0; i < 100; ++i) {
    extra.push_back({fmt("exact-%03d", i), "textbook", docs[sources[i]].text});
    planted.insert(extra.back().id);
  }
  for (int i = 0; i < 50; ++i) {
    auto chars = utf8_chars(docs[sources[100 + i]].text);
    std::vector<std::string> edited(chars.begin(), chars.end());
    const std::size_t at = std::uniform_int_distribution<std::size_t>(10, 189)(gen);
    std::string replacement;
    do replacement = cjk(); while (replacement == edited[at]);
    edited[at] = replacement;
    std::string t;
    for (const auto& c : edited) t += c;
    extra.push_back({fmt("near-%03d", i), "textbook", t});
    planted.insert(extra.back().id);
  }
  std::shuffle(extra.begin(), extra.end(), gen);
  docs.insert(docs.end(), extra.begin(), extra.end());

  const auto result = data::dedup(docs);
  std::set<std::string> removed;
  for (const auto& r : result.removed) removed.insert(r.id);

  // Brute force: every document against every earlier survivor.
  std::vector<std::vector<std::string>> sh;
  for (const auto& d : docs) sh.push_back(data::shingles(d.text, 5));
  std::set<std::string> brute;
  std::vector<std::size_t> survivors;
  double min_planted_j = 1.0, max_other_j = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    double best = 0.0;
    bool exact = false;
    for (std::size_t s : survivors) {
      exact = exact || docs[s].text == docs[i].text;
      best = std::max(best, data::jaccard(sh[i], sh[s]));
    }
    if (exact || best >= 0.9) {
      brute.insert(docs[i].id);
      if (planted.count(docs[i].id)) min_planted_j = std::min(min_planted_j, best);
    } else {
      survivors.push_back(i);
      max_other_j = std::max(max_other_j, best);
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = docs.size() == 1000 && removed == planted && brute == planted && secs < 120;
  std::size_t false_removals = 0;
  for (const auto& id : removed) false_removals += !planted.count(id);
  return {ok, fmt("1000 docs; removed %zu (planted 150, non-planted %zu); brute force agrees: %s; "
                  "planted J >= %.3f, max other J %.3f; %.1fs",
                  removed.size(), false_removals, brute == removed ? "yes" : "no", min_planted_j,
                  max_other_j, secs)};
}

// --- 13 --------------------------------------------------------------------------
Outcome determinism(const fs::path& data_dir) {
  testing::TempDir dir("determinism");
  const auto ini = (data_dir / "config.ini").string();
  auto run = [&](const std::string& out) {
    const auto config = RunConfig::load(ini, {std::nullopt, dir.str(out)});
    return run_pipeline(config, config.stages);
  };
  auto manifest_bytes = [&](const std::string& out) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::directory_iterator(dir.path() / out))
      if (e.path().string().ends_with(".manifest.json")) m[e.path().filename().string()] = read_file(e.path().string());
    return m;
  };
  const auto a = run("a");
  const auto a_bytes = manifest_bytes("a");
  fs::remove_all(dir.path() / "a");
  run("a");
  const auto a_again = manifest_bytes("a");
  const auto b = run("b");

  std::size_t files = 0;
  bool outputs_equal = a.size() == b.size();
  for (std::size_t i = 0; outputs_equal && i < a.size(); ++i) {
    outputs_equal = a[i].at("outputs") == b[i].at("outputs") && a[i].at("inputs") == b[i].at("inputs");
    files += a[i].at("outputs").size();
  }
  const bool ok = outputs_equal && a_bytes == a_again && !a.empty();
  return {ok, fmt("%zu stages, %zu output files hash-identical across 3 runs; rerun manifests %s",
                  a.size(), files, a_bytes == a_again ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path data_dir = DESKLM_DATA_DIR;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"LoRA attach identity", lora_attach_identity},
      {"LoRA merge equivalence", lora_merge_equivalence},
      {"LoRA trainable count law", lora_count_law},
      {"gradient fidelity (fp64 finite differences)", gradient_fidelity},
      {"uniform-output MLM loss equals ln V", uniform_mlm_fixture},
      {"DPO fixtures", dpo_fixtures},
      {"end-to-end overfit and memorized generation", [&] { return end_to_end_overfit(data_dir); }},
      {"SFT hyperparameter echo", [&] { return hyperparameter_echo(data_dir); }},
      {"warmup-cosine schedule fixture", schedule_fixture},
      {"metric oracle equivalence", metric_oracles},
      {"CBLUE macro aggregation fixture", aggregation_fixture},
      {"dedup correctness", dedup_correctness},
      {"pipeline determinism", [&] { return determinism(data_dir); }},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] AC-%02d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
