#pragma once

#include <string>
#include <vector>

#include "desklm/eval.hpp"
#include "desklm/run_config.hpp"
#include "desklm/runner.hpp"

namespace desklm::stages {

/// One line of the evaluation task list (JSON lines, paths relative to the
/// list's directory):
///   {"task", "gold", "pred"?, "predict"?, "template"?, "labels"?, "lexicon"?,
///    "token_mode"?, "normalize"?, "reference"?}
struct EvalEntry {
  std::string task;
  std::string gold;
  std::string pred;
  bool predict = false;
  std::string prompt_template;
  std::vector<std::string> labels;
  std::vector<std::string> lexicon;
  eval::TokenMode token_mode = eval::TokenMode::kAuto;
  bool normalize = false;
  std::string reference;
};

std::vector<EvalEntry> load_eval_entries(const std::string& path);
/// Where model-produced predictions for `task` are written.
std::string prediction_path(const RunConfig& config, const std::string& task);

void tokenize(const RunConfig& config, const LogSink& log);
void pretrain(const RunConfig& config, const LogSink& log);
void sft(const RunConfig& config, const LogSink& log);
void dpo(const RunConfig& config, const LogSink& log);
void data(const RunConfig& config, const LogSink& log);
void evaluate(const RunConfig& config, const LogSink& log);

}  // namespace desklm::stages
