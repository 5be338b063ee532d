#include "stages.hpp"

#include <filesystem>
#include <set>
#include <sstream>

#include "desklm/checkpoint.hpp"
#include "desklm/datapipe.hpp"
#include "desklm/dpo.hpp"
#include "desklm/error.hpp"
#include "desklm/io.hpp"
#include "desklm/lora.hpp"
#include "desklm/tokenizer.hpp"
#include "desklm/training.hpp"

namespace desklm::stages {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> nonempty_lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  }
  return out;
}

StepCallback step_logger(const LogSink& log) {
  return [log](const StepEvent& e) {
    log(e.log_line());
    return true;
  };
}

LoadedModel<float> load_checked(const std::string& path, const BpeVocab& vocab) {
  auto loaded = load_model<float>(path);
  if (loaded.vocab_fingerprint != vocab.fingerprint()) {
    throw FormatError(path + ": checkpoint was trained with a different vocabulary");
  }
  return loaded;
}

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

eval::TokenMode parse_token_mode(const std::string& s, const std::string& where) {
  if (s == "char") return eval::TokenMode::kChar;
  if (s == "word") return eval::TokenMode::kWord;
  if (s == "auto") return eval::TokenMode::kAuto;
  throw FormatError(where + ": token_mode must be char, word, or auto");
}

std::vector<std::string> string_list(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw FormatError(where + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& x : j) {
    if (!x.is_string()) throw FormatError(where + ": expected an array of strings");
    out.push_back(x.get<std::string>());
  }
  return out;
}

}  // namespace

std::vector<EvalEntry> load_eval_entries(const std::string& path) {
  static const std::set<std::string> kKeys = {"task",    "gold",       "pred",      "predict",
                                              "template", "labels",    "lexicon",   "token_mode",
                                              "normalize", "reference"};
  const auto dir = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) { return p.empty() ? p : (dir / p).string(); };
  std::vector<EvalEntry> out;
  std::set<std::string> seen;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    const auto where = path + ": entry " + std::to_string(line);
    if (!j.is_object()) throw FormatError(where + ": expected an object");
    for (const auto& [k, v] : j.items()) {
      if (!kKeys.count(k)) throw FormatError(where + ": unknown key \"" + k + "\"");
    }
    EvalEntry e;
    try {
      e.task = j.at("task").get<std::string>();
      e.gold = resolve(j.at("gold").get<std::string>());
      e.pred = resolve(j.value("pred", std::string{}));
      e.predict = j.value("predict", false);
      e.prompt_template = resolve(j.value("template", std::string{}));
      e.normalize = j.value("normalize", false);
      e.reference = resolve(j.value("reference", std::string{}));
      e.token_mode = parse_token_mode(j.value("token_mode", std::string("auto")), where);
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(where + ": " + ex.what());
    }
    if (j.contains("labels")) e.labels = string_list(j.at("labels"), where);
    if (j.contains("lexicon")) e.lexicon = string_list(j.at("lexicon"), where);
    try {
      const auto& spec = eval::find_task(e.task);
      if (e.predict && !eval::supports_model_prediction(spec.kind)) {
        throw FormatError(where + ": task " + e.task + " cannot be predicted by the model");
      }
    } catch (const std::invalid_argument& ex) {
      throw FormatError(where + ": " + ex.what());
    }
    if (e.predict == !e.pred.empty()) {
      throw FormatError(where + ": give exactly one of \"pred\" or \"predict\": true");
    }
    if (e.predict && e.prompt_template.empty()) {
      throw FormatError(where + ": \"predict\" needs a \"template\"");
    }
    if (!seen.insert(e.task).second) throw FormatError(where + ": task " + e.task + " listed twice");
    out.push_back(std::move(e));
  }
  return out;
}

std::string prediction_path(const RunConfig& config, const std::string& task) {
  return (config.out_dir / "eval" / (task + ".pred.jsonl")).string();
}

void tokenize(const RunConfig& config, const LogSink& log) {
  const auto corpus = read_file(config.tokenize.corpus);
  const auto vocab = train_bpe(corpus, config.tokenize.vocab_size);
  vocab.save(config.vocab_path());
  log("vocab size=" + std::to_string(vocab.size()) +
      " merges=" + std::to_string(vocab.merges().size()));
}

void pretrain(const RunConfig& config, const LogSink& log) {
  const auto vocab = BpeVocab::load(config.vocab_path());
  const auto lines = nonempty_lines(read_file(config.pretrain.corpus));
  ModelConfig mc = config.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  Rng rng(config.seed);
  auto model = LanguageModel<float>::init(mc, rng, config.pretrain.init_std);
  const auto chunks = chunk_corpus(vocab, lines, static_cast<std::size_t>(mc.max_seq_len));
  log("sequences=" + std::to_string(chunks.size()) +
      " parameters=" + std::to_string(model.params().count()));
  const auto result =
      desklm::pretrain(model, chunks, config.pretrain.objective, config.pretrain.train, rng,
                       step_logger(log));
  save_model(config.pretrain_checkpoint(), model, vocab.fingerprint());
  log("steps=" + std::to_string(result.steps) + " final_loss=" + fmt_double(result.final_loss));
}

void sft(const RunConfig& config, const LogSink& log) {
  const auto vocab = BpeVocab::load(config.vocab_path());
  auto loaded = load_checked(config.sft.base, vocab);
  const auto records = data::parse_sft_jsonl(read_file(config.sft.data), config.sft.data);
  std::vector<PairIds> pairs;
  pairs.reserve(records.size());
  for (const auto& r : records) {
    pairs.push_back(encode_pair(vocab, r.prompt, r.response, loaded.model.config().max_seq_len));
  }
  Rng rng(config.seed);
  auto adapted = AdaptedModel<float>::attach(loaded.model, config.sft.lora, rng);
  log("examples=" + std::to_string(pairs.size()) +
      " trainable=" + std::to_string(adapted.trainable_count()));
  const auto result = train_sft(adapted, pairs, config.sft.train, rng, step_logger(log));
  adapted.save(config.sft_adapter(), vocab.fingerprint());
  save_model(config.sft_checkpoint(), adapted.merged(), vocab.fingerprint());
  log("steps=" + std::to_string(result.steps) + " final_loss=" + fmt_double(result.final_loss));
}

void dpo(const RunConfig& config, const LogSink& log) {
  const auto vocab = BpeVocab::load(config.vocab_path());
  auto loaded = load_checked(config.dpo.base, vocab);
  const auto triples = load_dpo_jsonl(config.dpo.data);
  std::vector<DpoExample> examples;
  examples.reserve(triples.size());
  for (const auto& t : triples) {
    examples.push_back(encode_triple(vocab, t, loaded.model.config().max_seq_len));
  }
  Rng rng(config.seed);
  auto policy = AdaptedModel<float>::attach(loaded.model, config.dpo.lora, rng);
  log("triples=" + std::to_string(examples.size()) +
      " trainable=" + std::to_string(policy.trainable_count()));
  const auto result =
      train_dpo(policy, loaded.model, examples, config.dpo.dpo, rng, step_logger(log));
  const auto margins = reward_margins(policy, result, examples, config.dpo.dpo.beta);
  std::size_t positive = 0;
  for (double m : margins) positive += m > 0.0 ? 1 : 0;
  policy.save(config.dpo_adapter(), vocab.fingerprint());
  save_model(config.dpo_checkpoint(), policy.merged(), vocab.fingerprint());
  log("steps=" + std::to_string(result.train.steps) +
      " final_loss=" + fmt_double(result.train.final_loss) +
      " positive_margins=" + std::to_string(positive) + "/" + std::to_string(margins.size()));
}

namespace {

std::vector<data::SftRecord> plain_sft(const std::string& path, const std::string& origin) {
  std::vector<data::SftRecord> out;
  const auto text = read_file(path);
  const auto name = fs::path(path).filename().string();
  std::stringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path + ":" + std::to_string(n);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("prompt") || !j.contains("response") ||
        !j.at("prompt").is_string() || !j.at("response").is_string()) {
      throw FormatError(where + ": expected {\"prompt\", \"response\"} strings");
    }
    data::SftRecord r{j.at("prompt").get<std::string>(), j.at("response").get<std::string>(),
                      origin, name + ":" + std::to_string(n)};
    try {
      r.validate();
    } catch (const std::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

void data(const RunConfig& config, const LogSink& log) {
  const auto& s = config.data;
  data::Report report;

  data::CleanConfig clean_config;
  if (!s.boilerplate.empty()) {
    for (const auto& line : nonempty_lines(read_file(s.boilerplate))) {
      if (line.front() != '#') clean_config.boilerplate_patterns.push_back(line);
    }
  }
  const data::Cleaner cleaner(clean_config);
  const auto raw = data::load_corpus(s.manifest);
  std::vector<data::RawDocument> cleaned;
  for (const auto& doc : raw) {
    if (auto c = cleaner.clean(doc)) {
      cleaned.push_back(std::move(*c));
    } else {
      report.add("clean", "empty-after-clean", doc.id);
    }
  }

  auto deduped = data::dedup(cleaned, s.dedup);
  for (const auto& r : deduped.removed) {
    report.add("dedup", r.reason, r.id, {{"duplicate_of", r.duplicate_of}, {"jaccard", r.jaccard}});
  }

  const data::PiiScrubber scrubber(s.pii.empty()
                                       ? data::PiiConfig::defaults()
                                       : data::PiiConfig::from_json(
                                             nlohmann::json::parse(read_file(s.pii))));
  std::string corpus;
  std::vector<nlohmann::json> documents;
  for (auto& doc : deduped.kept) {
    doc.text = scrubber.scrub(doc.text);
    corpus += doc.text;
    corpus += '\n';
    documents.push_back({{"id", doc.id}, {"category", doc.category}, {"text", doc.text}});
  }

  std::vector<data::SftRecord> sft;
  for (const auto& p : s.public_sft) {
    for (auto& r : plain_sft(p, "public")) sft.push_back(std::move(r));
  }
  if (!s.drugs.empty()) {
    for (const auto& rec : data::parse_drug_records(read_file(s.drugs), s.drugs)) {
      for (auto& r : data::synthesize_drug_qa(rec)) sft.push_back(std::move(r));
    }
  }
  if (!s.generator_outputs.empty()) {
    if (s.generator_template.empty() || s.review.empty()) {
      throw ConfigError("data.generator_outputs",
                        "generator_template and review are required with generator_outputs");
    }
    std::vector<data::RawDocument> sources;
    for (const auto& doc : deduped.kept) {
      for (const auto& c : s.generator_categories) {
        if (doc.category == c) {
          sources.push_back(doc);
          break;
        }
      }
    }
    auto client = data::CannedGeneratorClient::load(s.generator_outputs);
    const auto candidates = data::synthesize_with_generator(
        sources, client, read_file(s.generator_template), s.generator_origin, report);
    const auto review = data::parse_review(read_file(s.review), s.review);
    for (auto& r : data::apply_review(candidates, review, report)) sft.push_back(std::move(r));
  }
  for (const auto& p : s.safety_sft) {
    for (auto& r : plain_sft(p, "safety")) sft.push_back(std::move(r));
  }
  for (auto& r : sft) {
    r.prompt = scrubber.scrub(r.prompt);
    r.response = scrubber.scrub(r.response);
  }

  std::vector<DpoTriple> triples;
  if (!s.feedback.empty()) {
    triples = data::build_dpo_dataset(data::parse_feedback(read_file(s.feedback), s.feedback),
                                      report);
    for (auto& t : triples) {
      t.prompt = scrubber.scrub(t.prompt);
      t.chosen = scrubber.scrub(t.chosen);
      t.rejected = scrubber.scrub(t.rejected);
    }
  }

  const fs::path dir = config.data_dir();
  fs::create_directories(dir);
  write_file_atomic((dir / "corpus.txt").string(), corpus);
  write_file_atomic((dir / "documents.jsonl").string(), to_jsonl(documents));
  write_file_atomic((dir / "sft.jsonl").string(), data::sft_to_jsonl(sft));
  write_file_atomic((dir / "dpo.jsonl").string(), dpo_to_jsonl(triples));
  write_file_atomic((dir / "report.jsonl").string(), report.to_jsonl());
  log("documents raw=" + std::to_string(raw.size()) + " kept=" +
      std::to_string(deduped.kept.size()) + " sft=" + std::to_string(sft.size()) +
      " dpo=" + std::to_string(triples.size()) +
      " skipped=" + std::to_string(report.events().size()));
}

void evaluate(const RunConfig& config, const LogSink& log) {
  const auto entries = load_eval_entries(config.eval.tasks);
  bool needs_model = false;
  for (const auto& e : entries) needs_model = needs_model || e.predict;
  std::optional<BpeVocab> vocab;
  std::optional<LoadedModel<float>> loaded;
  if (needs_model) {
    vocab = BpeVocab::load(config.vocab_path());
    loaded = load_checked(config.eval.model, *vocab);
  }
  const auto eval_dir = config.out_dir / "eval";
  fs::create_directories(eval_dir);

  std::vector<eval::TaskResult> results;
  for (const auto& e : entries) {
    eval::EvalTask task;
    task.task_id = e.task;
    task.gold = read_jsonl(e.gold);
    task.labels = e.labels;
    task.lexicon = e.lexicon;
    task.token_mode = e.token_mode;
    task.normalize = e.normalize;
    if (e.predict) {
      eval::predict_with_model(task, loaded->model, *vocab, read_file(e.prompt_template),
                               config.eval.max_new_tokens);
      write_file_atomic(prediction_path(config, e.task), to_jsonl(task.pred));
    } else {
      task.pred = read_jsonl(e.pred);
    }
    auto scored = eval::score_task(task);
    if (!e.reference.empty()) {
      const auto rows = read_jsonl(e.reference);
      for (const auto& row : rows) {
        if (!row.is_object() || !row.contains("system") || !row.contains("score") ||
            !row.at("system").is_string() || !row.at("score").is_number()) {
          throw FormatError(e.reference + ": expected {\"system\", \"score\"} rows");
        }
      }
      for (auto& r : scored) r.detail["reference"] = rows;
    }
    for (auto& r : scored) {
      log("task " + r.task_id + " " + r.metric + " " + fmt_double(r.score));
      results.push_back(std::move(r));
    }
  }
  const auto report = eval::MetricReport::build(std::move(results));
  write_file_atomic((eval_dir / "report.json").string(), report.to_json().dump(2) + "\n");
  write_file_atomic((eval_dir / "report.txt").string(), report.table());
  if (report.cblue_overall) log("overall " + fmt_double(*report.cblue_overall));
}

}  // namespace desklm::stages
