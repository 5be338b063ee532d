#include "desklm/runner.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "desklm/error.hpp"
#include "desklm/hash.hpp"
#include "desklm/io.hpp"
#include "stages.hpp"

namespace desklm {

namespace fs = std::filesystem;

namespace {

void check_stage(const std::string& stage) {
  const auto& names = stage_names();
  if (std::find(names.begin(), names.end(), stage) == names.end()) {
    throw ConfigError("run.stage", "unknown stage '" + stage + "'");
  }
}

std::vector<stages::EvalEntry> eval_entries_if_present(const RunConfig& c) {
  if (c.eval.tasks.empty() || !fs::exists(c.eval.tasks)) return {};
  return stages::load_eval_entries(c.eval.tasks);
}

std::string normal(const std::string& p) { return fs::path(p).lexically_normal().string(); }

}  // namespace

std::vector<std::pair<std::string, std::string>> RunConfig::stage_inputs(
    const std::string& stage) const {
  check_stage(stage);
  std::vector<std::pair<std::string, std::string>> in;
  auto add = [&](const std::string& field, const std::string& path) {
    if (path.empty()) throw ConfigError(field, "path not set");
    in.emplace_back(field, path);
  };
  auto add_optional = [&](const std::string& field, const std::string& path) {
    if (!path.empty()) in.emplace_back(field, path);
  };
  if (stage == "tokenize") {
    add("tokenize.corpus", tokenize.corpus);
  } else if (stage == "pretrain") {
    add("pretrain.corpus", pretrain.corpus);
    add("pretrain.vocab", vocab_path());
  } else if (stage == "sft") {
    add("sft.data", sft.data);
    add("sft.base", sft.base);
    add("sft.vocab", vocab_path());
  } else if (stage == "dpo") {
    add("dpo.data", dpo.data);
    add("dpo.base", dpo.base);
    add("dpo.vocab", vocab_path());
  } else if (stage == "data") {
    add("data.manifest", data.manifest);
    if (fs::exists(data.manifest)) {
      const auto dir = fs::path(data.manifest).parent_path();
      for (const auto& row : read_jsonl(data.manifest)) {
        if (row.is_object() && row.contains("path") && row.at("path").is_string()) {
          add("data.manifest", (dir / row.at("path").get<std::string>()).string());
        }
      }
    }
    add_optional("data.drugs", data.drugs);
    for (const auto& p : data.public_sft) add("data.public_sft", p);
    for (const auto& p : data.safety_sft) add("data.safety_sft", p);
    add_optional("data.feedback", data.feedback);
    add_optional("data.generator_outputs", data.generator_outputs);
    add_optional("data.generator_template", data.generator_template);
    add_optional("data.review", data.review);
    add_optional("data.boilerplate", data.boilerplate);
    add_optional("data.pii", data.pii);
  } else if (stage == "eval") {
    add("eval.tasks", eval.tasks);
    bool needs_model = false;
    for (const auto& e : eval_entries_if_present(*this)) {
      add("eval.tasks[" + e.task + "].gold", e.gold);
      add_optional("eval.tasks[" + e.task + "].pred", e.pred);
      add_optional("eval.tasks[" + e.task + "].template", e.prompt_template);
      add_optional("eval.tasks[" + e.task + "].reference", e.reference);
      needs_model = needs_model || e.predict;
    }
    if (needs_model) {
      add("eval.model", eval.model);
      add("eval.vocab", vocab_path());
    }
  }
  return in;
}

std::vector<std::string> RunConfig::stage_outputs(const std::string& stage) const {
  check_stage(stage);
  if (stage == "tokenize") return {vocab_path()};
  if (stage == "pretrain") return {pretrain_checkpoint()};
  if (stage == "sft") return {sft_adapter(), sft_checkpoint()};
  if (stage == "dpo") return {dpo_adapter(), dpo_checkpoint()};
  if (stage == "data") {
    std::vector<std::string> out;
    for (const char* name : {"corpus.txt", "documents.jsonl", "sft.jsonl", "dpo.jsonl", "report.jsonl"}) {
      out.push_back((fs::path(data_dir()) / name).string());
    }
    return out;
  }
  std::vector<std::string> out = {(out_dir / "eval" / "report.json").string(),
                                  (out_dir / "eval" / "report.txt").string()};
  for (const auto& e : eval_entries_if_present(*this)) {
    if (e.predict) out.push_back(stages::prediction_path(*this, e.task));
  }
  return out;
}

void preflight(const RunConfig& config, const std::vector<std::string>& stages) {
  std::set<std::string> produced;
  for (const auto& stage : stages) {
    for (const auto& [field, path] : config.stage_inputs(stage)) {
      if (produced.count(normal(path))) continue;
      if (!fs::is_regular_file(path)) {
        throw ConfigError(field, "input '" + path + "' does not exist and no earlier stage produces it");
      }
    }
    for (const auto& p : config.stage_outputs(stage)) produced.insert(normal(p));
  }
}

namespace {

std::string display_path(const RunConfig& c, const std::string& p) {
  const auto abs = fs::absolute(p).lexically_normal();
  const auto out = fs::absolute(c.out_dir).lexically_normal();
  const auto rel = abs.lexically_relative(out);
  if (!rel.empty() && *rel.begin() != "..") return "$out/" + rel.generic_string();
  return abs.lexically_relative(fs::absolute(c.base_dir).lexically_normal()).generic_string();
}

nlohmann::json hash_inputs(const RunConfig& c,
                           const std::vector<std::pair<std::string, std::string>>& inputs) {
  auto arr = nlohmann::json::array();
  for (const auto& [field, path] : inputs) {
    arr.push_back({{"field", field}, {"path", display_path(c, path)}, {"sha256", sha256_file(path)}});
  }
  return arr;
}

void remove_outputs(const std::vector<std::string>& outputs) {
  std::error_code ec;
  for (const auto& p : outputs) {
    fs::remove(p, ec);
    fs::remove(p + ".tmp", ec);
  }
}

}  // namespace

nlohmann::json run_stage(const RunConfig& config, const std::string& stage, const LogSink& log) {
  check_stage(stage);
  preflight(config, {stage});
  fs::create_directories(config.out_dir);

  const auto manifest_path = (config.out_dir / (stage + ".manifest.json")).string();
  std::error_code ec;
  fs::remove(manifest_path, ec);

  const auto effective = config.effective(stage);
  const auto inputs = config.stage_inputs(stage);
  const auto outputs = config.stage_outputs(stage);
  const auto before = hash_inputs(config, inputs);

  std::ofstream log_file(config.out_dir / (stage + ".log"), std::ios::trunc);
  LogSink sink = [&](const std::string& line) {
    log_file << line << '\n';
    if (log) log(line);
  };
  sink("stage " + stage);
  sink("config " + effective.dump());

  try {
    if (stage == "tokenize") stages::tokenize(config, sink);
    else if (stage == "pretrain") stages::pretrain(config, sink);
    else if (stage == "sft") stages::sft(config, sink);
    else if (stage == "dpo") stages::dpo(config, sink);
    else if (stage == "data") stages::data(config, sink);
    else stages::evaluate(config, sink);
  } catch (const ConfigError&) {
    remove_outputs(outputs);
    throw;
  } catch (const std::exception& e) {
    remove_outputs(outputs);
    sink(std::string("error ") + e.what());
    throw StageError(stage, e.what());
  }

  if (hash_inputs(config, inputs) != before) {
    remove_outputs(outputs);
    throw StageError(stage, "an input file changed while the stage ran");
  }

  nlohmann::json produced = nlohmann::json::object();
  for (const auto& p : outputs) {
    if (!fs::is_regular_file(p)) {
      remove_outputs(outputs);
      throw StageError(stage, "expected output '" + p + "' was not written");
    }
    produced[display_path(config, p)] = sha256_file(p);
  }

  nlohmann::json manifest;
  manifest["stage"] = stage;
  manifest["seed"] = config.seed;
  manifest["config_hash"] = sha256_hex(effective.dump());
  manifest["config"] = effective;
  manifest["inputs"] = before;
  manifest["outputs"] = produced;
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  sink("manifest " + display_path(config, manifest_path));
  return manifest;
}

std::vector<nlohmann::json> run_pipeline(const RunConfig& config,
                                         const std::vector<std::string>& stages,
                                         const LogSink& log) {
  if (stages.empty()) return {};
  preflight(config, stages);
  std::vector<nlohmann::json> manifests;
  for (const auto& stage : stages) manifests.push_back(run_stage(config, stage, log));
  return manifests;
}

}  // namespace desklm
