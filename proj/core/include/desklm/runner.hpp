#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "desklm/run_config.hpp"

namespace desklm {

/// A stage raised during execution; carries the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error("stage '" + stage + "' failed: " + message), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Receives progress lines (effective settings, per-step training events).
using LogSink = std::function<void(const std::string&)>;

/// Checks that every input of every listed stage either exists or is
/// produced by an earlier stage in the list. Throws ConfigError naming the
/// field of the first unsatisfied input.
void preflight(const RunConfig& config, const std::vector<std::string>& stages);

/// Runs one stage: validates inputs, executes it, verifies its inputs were not
/// modified, and writes "<out_dir>/<stage>.manifest.json" holding the config
/// hash, seed, effective settings, and input/output SHA-256 digests. On
/// failure every output of the stage is removed and StageError is thrown.
/// Returns the manifest.
nlohmann::json run_stage(const RunConfig& config, const std::string& stage,
                         const LogSink& log = {});

/// preflight() then run_stage() for each stage in order; stops at the first
/// failure. An empty list is a successful no-op.
std::vector<nlohmann::json> run_pipeline(const RunConfig& config,
                                         const std::vector<std::string>& stages,
                                         const LogSink& log = {});

}  // namespace desklm
