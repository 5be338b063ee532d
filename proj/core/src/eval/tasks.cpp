#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "desklm/error.hpp"
#include "desklm/eval.hpp"
#include "desklm/graph.hpp"
#include "desklm/io.hpp"

namespace desklm::eval {

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::kSpanMicroF1: return "span-micro-f1";
    case MetricKind::kTripleMicroF1: return "triple-micro-f1";
    case MetricKind::kTripleMacroF1: return "triple-macro-f1";
    case MetricKind::kQuadrupleMicroF1: return "quadruple-micro-f1";
    case MetricKind::kPairMicroF1: return "pair-micro-f1";
    case MetricKind::kFindingMacroF1: return "finding-macro-f1";
    case MetricKind::kLabelMacroF1: return "macro-f1";
    case MetricKind::kAccuracy: return "accuracy";
    case MetricKind::kMrrAt10: return "mrr@10";
    case MetricKind::kSymptomF1: return "symptom-f1";
    case MetricKind::kRougeL: return "rouge-l";
    case MetricKind::kBleuEntity: return "bleu+entity-f1";
    case MetricKind::kMcqAccuracy: return "mcq-accuracy";
  }
  return "unknown";
}

const std::vector<TaskSpec>& task_registry() {
  static const std::vector<TaskSpec> kTasks = [] {
    std::vector<TaskSpec> t = {
        {"CMeEE", MetricKind::kSpanMicroF1, {}, true},
        {"CMeIE", MetricKind::kTripleMicroF1, {}, true},
        {"CMedCausal", MetricKind::kTripleMacroF1, {}, true},
        {"CHIP-CDEE", MetricKind::kQuadrupleMicroF1, {}, true},
        {"CHIP-CDN", MetricKind::kPairMicroF1, {}, true},
        {"CHIP-CTC", MetricKind::kLabelMacroF1, {}, true},
        {"KUAKE-QIC", MetricKind::kAccuracy, {}, true},
        {"CHIP-STS", MetricKind::kLabelMacroF1, {}, true},
        {"KUAKE-QTR", MetricKind::kAccuracy, {}, true},
        {"KUAKE-QQR", MetricKind::kAccuracy, {}, true},
        {"KUAKE-IR", MetricKind::kMrrAt10, {}, true},
        {"CHIP-MDCFNPC", MetricKind::kFindingMacroF1, {}, true},
        {"IMCS-V2-NER", MetricKind::kSpanMicroF1, {}, true},
        {"IMCS-V2-DAC", MetricKind::kAccuracy, {}, true},
        {"IMCS-V2-SR", MetricKind::kSymptomF1,
         {"IMCS-V2-SR-Utterance-Level", "IMCS-V2-SR-Dialog-Level"}, true},
        {"IMCS-V2-MRG", MetricKind::kRougeL, {}, true},
        {"MedDG", MetricKind::kBleuEntity, {}, true},
        {"ClinicalQA", MetricKind::kMcqAccuracy, {}, false},
    };
    for (auto& s : t)
      if (s.result_ids.empty()) s.result_ids = {s.id};
    return t;
  }();
  return kTasks;
}

const TaskSpec& find_task(const std::string& id) {
  for (const auto& t : task_registry())
    if (t.id == id) return t;
  throw std::invalid_argument("unknown evaluation task '" + id + "'");
}

double aggregate_macro(const std::vector<TaskResult>& results) {
  if (results.empty()) throw std::invalid_argument("aggregate_macro: no results");
  std::set<std::string> seen;
  double sum = 0.0;
  for (const auto& r : results) {
    if (!seen.insert(r.task_id).second) {
      throw std::invalid_argument("aggregate_macro: duplicate task id '" + r.task_id + "'");
    }
    sum += r.score;
  }
  return sum / static_cast<double>(results.size());
}

namespace {

struct Aligned {
  std::vector<const nlohmann::json*> gold;
  std::vector<const nlohmann::json*> pred;
};

std::string record_id(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("id")) throw FormatError(where + ": record lacks \"id\"");
  const auto& id = j.at("id");
  if (id.is_string()) return id.get<std::string>();
  if (id.is_number_integer()) return std::to_string(id.get<long long>());
  throw FormatError(where + ": \"id\" must be a string or integer");
}

Aligned align(const EvalTask& task) {
  std::map<std::string, const nlohmann::json*> preds;
  for (const auto& p : task.pred) {
    const auto id = record_id(p, task.task_id + " prediction");
    if (!preds.emplace(id, &p).second) {
      throw FormatError(task.task_id + ": prediction id '" + id + "' repeated");
    }
  }
  Aligned out;
  std::set<std::string> gold_ids;
  for (const auto& g : task.gold) {
    const auto id = record_id(g, task.task_id + " gold");
    if (!gold_ids.insert(id).second) {
      throw FormatError(task.task_id + ": gold id '" + id + "' repeated");
    }
    auto it = preds.find(id);
    if (it == preds.end()) throw FormatError(task.task_id + ": no prediction for id '" + id + "'");
    out.gold.push_back(&g);
    out.pred.push_back(it->second);
  }
  for (const auto& [id, _] : preds) {
    if (!gold_ids.count(id)) {
      throw FormatError(task.task_id + ": prediction id '" + id + "' has no gold record");
    }
  }
  if (out.gold.empty()) throw DegenerateBatchError(task.task_id + ": no gold records");
  return out;
}

std::string text_of(const nlohmann::json& j, const char* key, const EvalTask& task) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw FormatError(task.task_id + ": record lacks string \"" + key + "\"");
  }
  auto s = j.at(key).get<std::string>();
  return task.normalize ? normalize_text(s) : s;
}

std::string scalar_of(const nlohmann::json& j, const char* key, const EvalTask& task) {
  if (!j.contains(key)) throw FormatError(task.task_id + ": record lacks \"" + key + "\"");
  const auto& v = j.at(key);
  if (v.is_string()) return task.normalize ? normalize_text(v.get<std::string>()) : v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw FormatError(task.task_id + ": \"" + key + "\" must be a string or integer");
}

TupleSet tuples_of(const nlohmann::json& j, const char* list_key,
                   const std::vector<const char*>& fields, const EvalTask& task) {
  TupleSet out;
  if (!j.contains(list_key)) return out;
  const auto& list = j.at(list_key);
  if (!list.is_array()) throw FormatError(task.task_id + ": \"" + list_key + "\" must be a list");
  for (const auto& item : list) {
    Tuple t;
    for (const char* f : fields) t.push_back(scalar_of(item, f, task));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::string> normalized(const EvalTask& task, std::vector<std::string> v) {
  if (task.normalize)
    for (auto& s : v) s = normalize_text(s);
  return v;
}

}  // namespace

std::vector<TaskResult> score_task(const EvalTask& task) {
  const auto& spec = find_task(task.task_id);
  const auto a = align(task);
  const auto metric = to_string(spec.kind);
  auto tuple_columns = [&](const char* key, const std::vector<const char*>& fields) {
    std::pair<std::vector<TupleSet>, std::vector<TupleSet>> gp;
    for (std::size_t i = 0; i < a.gold.size(); ++i) {
      gp.first.push_back(tuples_of(*a.gold[i], key, fields, task));
      gp.second.push_back(tuples_of(*a.pred[i], key, fields, task));
    }
    return gp;
  };
  auto column = [&](const std::vector<const nlohmann::json*>& rows, const char* key) {
    std::vector<std::string> out;
    for (const auto* r : rows) out.push_back(text_of(*r, key, task));
    return out;
  };
  auto single = [&](double score, nlohmann::json detail = nlohmann::json::object()) {
    return std::vector<TaskResult>{{spec.result_ids.front(), metric, score, std::move(detail)}};
  };
  auto prf_detail = [](const PrfCounts& c) {
    return nlohmann::json{{"precision", c.precision()}, {"recall", c.recall()},
                          {"tp", c.true_positive}, {"predicted", c.predicted}, {"gold", c.gold}};
  };
  auto need_labels = [&] {
    if (task.labels.empty()) throw ConfigError(task.task_id + ".labels", "label set required");
    return normalized(task, task.labels);
  };

  switch (spec.kind) {
    case MetricKind::kSpanMicroF1: {
      auto [g, p] = tuple_columns("entities", {"start", "end", "type"});
      const auto c = tuple_counts(g, p);
      return single(c.f1(), prf_detail(c));
    }
    case MetricKind::kTripleMicroF1: {
      auto [g, p] = tuple_columns("spo", {"subject", "predicate", "object"});
      const auto c = tuple_counts(g, p);
      return single(c.f1(), prf_detail(c));
    }
    case MetricKind::kTripleMacroF1: {
      auto [g, p] = tuple_columns("spo", {"subject", "predicate", "object"});
      return single(tuple_macro_f1(g, p, 1, need_labels()));
    }
    case MetricKind::kQuadrupleMicroF1: {
      auto [g, p] = tuple_columns("events", {"subject", "site", "descriptor", "state"});
      const auto c = tuple_counts(g, p);
      return single(c.f1(), prf_detail(c));
    }
    case MetricKind::kPairMicroF1: {
      auto [g, p] = tuple_columns("pairs", {"term", "standard"});
      const auto c = tuple_counts(g, p);
      return single(c.f1(), prf_detail(c));
    }
    case MetricKind::kFindingMacroF1: {
      auto [g, p] = tuple_columns("findings", {"term", "status"});
      return single(tuple_macro_f1(g, p, 1, need_labels()));
    }
    case MetricKind::kLabelMacroF1:
      return single(macro_f1(column(a.gold, "label"), column(a.pred, "label"), need_labels()));
    case MetricKind::kAccuracy:
      return single(accuracy(column(a.gold, "label"), column(a.pred, "label")));
    case MetricKind::kMrrAt10: {
      std::vector<std::vector<std::string>> rankings;
      for (const auto* p : a.pred) {
        if (!p->contains("ranking") || !p->at("ranking").is_array()) {
          throw FormatError(task.task_id + ": prediction lacks a \"ranking\" list");
        }
        std::vector<std::string> r;
        for (const auto& d : p->at("ranking")) {
          r.push_back(d.is_string() ? d.get<std::string>() : d.dump());
        }
        rankings.push_back(std::move(r));
      }
      return single(mrr_at_10(rankings, column(a.gold, "relevant")));
    }
    case MetricKind::kSymptomF1: {
      auto [g, p] = tuple_columns("symptoms", {"term", "status"});
      const auto utterance = tuple_counts(g, p);
      std::vector<std::string> order;
      std::map<std::string, std::pair<TupleSet, TupleSet>> dialogs;
      for (std::size_t i = 0; i < a.gold.size(); ++i) {
        const auto d = scalar_of(*a.gold[i], "dialog", task);
        auto [it, inserted] = dialogs.try_emplace(d);
        if (inserted) order.push_back(d);
        it->second.first.insert(it->second.first.end(), g[i].begin(), g[i].end());
        it->second.second.insert(it->second.second.end(), p[i].begin(), p[i].end());
      }
      std::vector<TupleSet> dg, dp;
      for (const auto& d : order) {
        dg.push_back(dialogs.at(d).first);
        dp.push_back(dialogs.at(d).second);
      }
      const auto dialog = tuple_counts(dg, dp);
      return {{spec.result_ids[0], metric, utterance.f1(), prf_detail(utterance)},
              {spec.result_ids[1], metric, dialog.f1(), prf_detail(dialog)}};
    }
    case MetricKind::kRougeL:
      return single(rouge_score(column(a.pred, "text"), column(a.gold, "text"), task.token_mode));
    case MetricKind::kBleuEntity: {
      if (task.lexicon.empty()) throw ConfigError(task.task_id + ".lexicon", "entity lexicon required");
      const auto be = bleu_entity(column(a.pred, "text"), column(a.gold, "text"),
                                  normalized(task, task.lexicon), task.token_mode);
      return single((be.bleu + be.entity_f1) / 2.0, {{"bleu", be.bleu}, {"entity_f1", be.entity_f1}});
    }
    case MetricKind::kMcqAccuracy: {
      std::vector<std::string> gold, pred;
      for (std::size_t i = 0; i < a.gold.size(); ++i) {
        gold.push_back(a.gold[i]->at("answer").get<std::string>());
        pred.push_back(a.pred[i]->at("answer").get<std::string>());
      }
      return single(mcq_accuracy(gold, pred));
    }
  }
  throw std::logic_error("unhandled metric kind");
}

MetricReport MetricReport::build(std::vector<TaskResult> results) {
  MetricReport r;
  std::vector<TaskResult> cblue;
  for (const auto& t : results) {
    bool counted = true;
    for (const auto& spec : task_registry()) {
      if (std::find(spec.result_ids.begin(), spec.result_ids.end(), t.task_id) !=
          spec.result_ids.end()) {
        counted = spec.cblue;
      }
    }
    if (counted) cblue.push_back(t);
  }
  if (!cblue.empty()) r.cblue_overall = aggregate_macro(cblue);
  r.results = std::move(results);
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& t : results) {
    per[t.task_id] = {{"task_id", t.task_id}, {"metric", t.metric}, {"score", t.score},
                      {"detail", t.detail}};
  }
  nlohmann::json j;
  j["per_task"] = per;
  j["overall"] = cblue_overall ? nlohmann::json(*cblue_overall) : nlohmann::json(nullptr);
  return j;
}

std::string MetricReport::table() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-28s %-20s %8s\n", "task", "metric", "score");
  out += line;
  for (const auto& t : results) {
    std::snprintf(line, sizeof(line), "%-28s %-20s %8.2f\n", t.task_id.c_str(), t.metric.c_str(),
                  t.score);
    out += line;
    if (!t.detail.contains("reference")) continue;
    for (const auto& row : t.detail.at("reference")) {
      const auto name = "  " + row.at("system").get<std::string>();
      std::snprintf(line, sizeof(line), "%-28s %-20s %8.2f\n", name.c_str(), "reference",
                    row.at("score").get<double>());
      out += line;
    }
  }
  if (cblue_overall) {
    std::snprintf(line, sizeof(line), "%-28s %-20s %8.2f\n", "CBLUE overall", "macro-average",
                  *cblue_overall);
    out += line;
  }
  return out;
}

bool supports_model_prediction(MetricKind kind) {
  switch (kind) {
    case MetricKind::kLabelMacroF1:
    case MetricKind::kAccuracy:
    case MetricKind::kRougeL:
    case MetricKind::kBleuEntity:
    case MetricKind::kMcqAccuracy:
      return true;
    default:
      return false;
  }
}

namespace {

std::string fill(std::string tmpl, const std::string& key, const std::string& value) {
  const std::string slot = "{" + key + "}";
  for (std::size_t pos = tmpl.find(slot); pos != std::string::npos;
       pos = tmpl.find(slot, pos + value.size())) {
    tmpl.replace(pos, slot.size(), value);
  }
  return tmpl;
}

std::vector<TokenId> prompt_ids(const BpeVocab& vocab, const std::string& text, std::size_t limit) {
  std::vector<TokenId> ids{kBos};
  auto body = vocab.encode(text);
  if (body.size() + 1 > limit) body.erase(body.begin(), body.end() - static_cast<std::ptrdiff_t>(limit - 1));
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

// Generated byte sequences can end mid code point; such bytes become U+FFFD.
std::string valid_utf8(std::string_view text) {
  std::string out;
  for (auto ch : utf8_chars(text)) {
    const auto lead = static_cast<unsigned char>(ch.front());
    if (ch.size() == 1 && lead >= 0x80) {
      out += "\xEF\xBF\xBD";
    } else {
      out += ch;
    }
  }
  return out;
}

template <class T>
std::string best_candidate(const LanguageModel<T>& model, const BpeVocab& vocab,
                           const std::string& prompt, const std::vector<std::string>& options) {
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  std::string best;
  double best_lp = 0.0;
  for (const auto& opt : options) {
    auto response = vocab.encode(opt);
    response.push_back(kEos);
    if (response.size() + 1 > max_len) response.resize(max_len - 1);
    const auto ids = prompt_ids(vocab, prompt, max_len - response.size());
    const double lp = static_cast<double>(model.sequence_logprob(ids, response));
    if (best.empty() || lp > best_lp) {
      best = opt;
      best_lp = lp;
    }
  }
  return best;
}

}  // namespace

template <class T>
void predict_with_model(EvalTask& task, const LanguageModel<T>& model, const BpeVocab& vocab,
                        const std::string& prompt_template, std::size_t max_new_tokens) {
  const auto& spec = find_task(task.task_id);
  if (!supports_model_prediction(spec.kind)) {
    throw std::invalid_argument(task.task_id + ": model-in-the-loop prediction is not supported");
  }
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  task.pred.clear();
  for (const auto& g : task.gold) {
    nlohmann::json p;
    p["id"] = g.at("id");
    if (spec.kind == MetricKind::kMcqAccuracy) {
      std::string prompt = fill(prompt_template, "question", g.at("question").get<std::string>());
      for (const char* o : {"A", "B", "C", "D"}) prompt = fill(prompt, o, g.at("options").at(o).get<std::string>());
      p["answer"] = best_candidate(model, vocab, prompt, {"A", "B", "C", "D"});
    } else {
      const std::string prompt = fill(prompt_template, "input", g.at("input").get<std::string>());
      if (spec.kind == MetricKind::kRougeL || spec.kind == MetricKind::kBleuEntity) {
        const std::size_t room = std::min(max_new_tokens, max_len - 1);
        const auto ids = prompt_ids(vocab, prompt, max_len - room);
        auto out = model.generate(ids, room);
        std::vector<TokenId> continuation(out.begin() + static_cast<std::ptrdiff_t>(ids.size()), out.end());
        p["text"] = valid_utf8(vocab.decode(continuation));
      } else {
        if (task.labels.empty()) throw ConfigError(task.task_id + ".labels", "label set required");
        p["label"] = best_candidate(model, vocab, prompt, task.labels);
      }
    }
    task.pred.push_back(std::move(p));
  }
}

template void predict_with_model<float>(EvalTask&, const LanguageModel<float>&, const BpeVocab&,
                                        const std::string&, std::size_t);
template void predict_with_model<double>(EvalTask&, const LanguageModel<double>&, const BpeVocab&,
                                         const std::string&, std::size_t);

}  // namespace desklm::eval
