#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "desklm/metrics.hpp"
#include "desklm/model.hpp"
#include "desklm/tokenizer.hpp"

namespace desklm::eval {

enum class MetricKind {
  kSpanMicroF1,        // {"entities": [{"start", "end", "type"}]}
  kTripleMicroF1,      // {"spo": [{"subject", "predicate", "object"}]}
  kTripleMacroF1,      // same payload, averaged over declared predicates
  kQuadrupleMicroF1,   // {"events": [{"subject", "site", "descriptor", "state"}]}
  kPairMicroF1,        // {"pairs": [{"term", "standard"}]}
  kFindingMacroF1,     // {"findings": [{"term", "status"}]}, averaged over statuses
  kLabelMacroF1,       // {"label"}
  kAccuracy,           // {"label"}
  kMrrAt10,            // gold {"relevant"}, prediction {"ranking": [...]}
  kSymptomF1,          // {"dialog", "symptoms": [{"term", "status"}]}; two results
  kRougeL,             // {"text"}
  kBleuEntity,         // {"text"}; score is the mean of BLEU and entity F1
  kMcqAccuracy,        // gold {"answer", "question", "options"}, prediction {"answer"}
};

std::string to_string(MetricKind kind);

struct TaskSpec {
  std::string id;
  MetricKind kind;
  /// Ids of the TaskResults this task produces (two for IMCS-V2-SR).
  std::vector<std::string> result_ids;
  /// Whether it takes part in the CBLUE overall score.
  bool cblue = true;
};

/// The 17 CBLUE task ids (IMCS-V2-SR yielding two results) plus ClinicalQA.
const std::vector<TaskSpec>& task_registry();
const TaskSpec& find_task(const std::string& id);

struct TaskResult {
  std::string task_id;
  std::string metric;
  double score = 0.0;
  nlohmann::json detail = nlohmann::json::object();
};

/// Unweighted mean of the scores. Throws std::invalid_argument for an empty
/// list or a repeated task id.
double aggregate_macro(const std::vector<TaskResult>& results);

/// One task's evaluation inputs.
struct EvalTask {
  std::string task_id;
  std::vector<nlohmann::json> gold;
  std::vector<nlohmann::json> pred;
  std::vector<std::string> labels;   // label, predicate, or status set
  std::vector<std::string> lexicon;  // entity lexicon for BLEU/entity F1
  TokenMode token_mode = TokenMode::kAuto;
  bool normalize = false;
};

/// Aligns predictions to gold by "id" (every gold id needs exactly one
/// prediction; unknown or repeated ids throw FormatError) and scores them.
std::vector<TaskResult> score_task(const EvalTask& task);

struct MetricReport {
  std::vector<TaskResult> results;
  /// Macro average over the CBLUE results; absent when none were scored.
  std::optional<double> cblue_overall;

  static MetricReport build(std::vector<TaskResult> results);
  nlohmann::json to_json() const;
  std::string table() const;
};

/// Fills `task.pred` by running the model on each gold record. Label tasks
/// and multiple-choice items pick the candidate with the highest sequence
/// log-probability; text tasks decode greedily. `prompt_template` uses
/// "{input}" (and "{question}", "{A}".."{D}" for multiple choice).
template <class T>
void predict_with_model(EvalTask& task, const LanguageModel<T>& model, const BpeVocab& vocab,
                        const std::string& prompt_template, std::size_t max_new_tokens = 48);

bool supports_model_prediction(MetricKind kind);

}  // namespace desklm::eval
