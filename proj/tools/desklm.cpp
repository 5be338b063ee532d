#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "desklm/error.hpp"
#include "desklm/run_config.hpp"
#include "desklm/runner.hpp"

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

int run(const std::string& config_path, const desklm::RunConfig::Overrides& overrides,
        const std::optional<std::string>& stage) {
  auto log = spdlog::stderr_color_mt("desklm");
  spdlog::set_default_logger(log);
  try {
    const auto config = desklm::RunConfig::load(config_path, overrides);
    const auto sink = [](const std::string& line) { spdlog::info("{}", line); };
    if (stage) {
      desklm::run_stage(config, *stage, sink);
    } else {
      if (config.stages.empty()) spdlog::info("no stages listed; nothing to do");
      desklm::run_pipeline(config, config.stages, sink);
    }
    return 0;
  } catch (const desklm::ConfigError& e) {
    spdlog::error("config error in {}: {}", e.field(), e.what());
    return kConfigExit;
  } catch (const desklm::StageError& e) {
    spdlog::error("{}", e.what());
    return kRuntimeExit;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeExit;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desklm: tokenizer, training, alignment, data, and evaluation stages"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::string level = "info";
  app.add_option("--config", config_path, "Run configuration file")->required();
  app.add_option("--seed", seed, "Override [run] seed");
  app.add_option("--out-dir", out_dir, "Override [run] out_dir");
  app.add_option("--log-level", level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  std::optional<std::string> stage;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"tokenize", "Train the byte-level BPE vocabulary"},
      {"pretrain", "Pre-train the base model"},
      {"sft", "Supervised fine-tuning with LoRA adapters"},
      {"dpo", "Preference alignment with LoRA adapters"},
      {"data", "Build corpus and SFT/DPO datasets from raw sources"},
      {"eval", "Score predictions and write the metric report"},
  };
  for (const auto& [name, help] : commands) {
    app.add_subcommand(name, help)->fallthrough()->callback([&stage, n = name] { stage = n; });
  }
  app.add_subcommand("pipeline", "Run the stages listed in [run] stages, in order")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  spdlog::set_level(spdlog::level::from_str(level));
  return run(config_path, {seed, out_dir}, stage);
}
