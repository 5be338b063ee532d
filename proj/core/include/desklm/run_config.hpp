#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "desklm/datapipe.hpp"
#include "desklm/dpo.hpp"
#include "desklm/lora.hpp"
#include "desklm/model.hpp"
#include "desklm/training.hpp"

namespace desklm {

/// Closed set of stage names.
const std::vector<std::string>& stage_names();

struct TokenizeSettings {
  std::string corpus;
  std::size_t vocab_size = 512;
};

struct PretrainSettings {
  std::string corpus;
  Objective objective = Objective::kCausal;
  TrainConfig train;
  double init_std = 0.02;
};

struct SftSettings {
  std::string data;
  std::string base;
  LoraConfig lora;
  TrainConfig train;
};

struct DpoSettings {
  std::string data;
  std::string base;
  LoraConfig lora;
  DpoConfig dpo;
};

struct DataSettings {
  std::string manifest;
  std::string drugs;
  std::vector<std::string> public_sft;
  std::vector<std::string> safety_sft;
  std::string feedback;
  std::string generator_outputs;
  std::string generator_template;
  std::string generator_origin = "synthesized-guideline";
  std::vector<std::string> generator_categories = {"guideline"};
  std::string review;
  std::string boilerplate;
  std::string pii;
  data::DedupConfig dedup;
};

struct EvalSettings {
  std::string tasks;
  std::string model;
  std::size_t max_new_tokens = 48;
};

/// Declarative run description read from an INI-style file:
///
///   [run]       stage | stages, seed, out_dir
///   [tokenize]  corpus, vocab_size
///   [model]     d_model, n_layers, n_heads, d_ff, max_seq_len, dropout
///   [pretrain]  corpus, objective, epochs, max_steps, batch_size, accumulation,
///               lr, schedule, warmup_ratio, weight_decay, clip_grad_norm, mask_prob
///   [sft]       data, base, rank, alpha, dropout, scale_by_rank, targets, + training keys
///   [dpo]       data, base, beta, + LoRA and training keys
///   [data]      manifest, drugs, public_sft, safety_sft, feedback, generator_outputs,
///               generator_template, generator_origin, generator_categories,
///               review, boilerplate, pii,
///               shingle_size, threshold, permutations, bands
///   [eval]      tasks, model, max_new_tokens
///
/// Relative paths resolve against the config file's directory. Unknown
/// sections or keys are rejected.
struct RunConfig {
  std::filesystem::path base_dir;
  std::filesystem::path out_dir;
  std::vector<std::string> stages;
  std::uint64_t seed = 1234;

  TokenizeSettings tokenize;
  ModelConfig model;
  PretrainSettings pretrain;
  SftSettings sft;
  DpoSettings dpo;
  DataSettings data;
  EvalSettings eval;

  struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
  };

  /// Throws ConfigError naming the offending field.
  static RunConfig load(const std::string& path, const Overrides& overrides = {});
  static RunConfig parse(const std::string& text, const std::filesystem::path& base_dir,
                         const Overrides& overrides = {});

  // Default output locations inside out_dir.
  std::string vocab_path() const;
  std::string pretrain_checkpoint() const;
  std::string sft_adapter() const;
  std::string sft_checkpoint() const;
  std::string dpo_adapter() const;
  std::string dpo_checkpoint() const;
  std::string data_dir() const;

  /// Every effective setting of `stage`, defaults included, with paths
  /// shown relative to the config directory.
  nlohmann::json effective(const std::string& stage) const;
  /// Input files of `stage` paired with the config field that names them.
  std::vector<std::pair<std::string, std::string>> stage_inputs(const std::string& stage) const;
  std::vector<std::string> stage_outputs(const std::string& stage) const;
};

}  // namespace desklm
