#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "qser/experiment.hpp"
#include "qser/rhemo.hpp"

/// Harness configuration: a JSON document (comments allowed) merged over
/// the defaults, then `key.path=value` overrides.
namespace qser::config {

/// Every recognised key with its default value.
nlohmann::json defaults();

/// Defaults merged with the file's keys. Throws ConfigError on a parse
/// error or an unknown key.
nlohmann::json load(const std::filesystem::path& file);

/// "experiment.lr=1e-4". The key must exist; the value is read as JSON when
/// it parses and the existing value is not a string, otherwise as a string.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

/// Throws ConfigError on unknown keys or mismatched value types.
void check(const nlohmann::json& cfg);

/// $QSER_RUN_ROOT, or ./runs.
std::filesystem::path run_root();
/// run_root()/<run>, where run is cfg["run"].
std::filesystem::path run_dir(const nlohmann::json& cfg);
/// cfg["corpus"]["dir"] if set, else run_dir/corpus.
std::filesystem::path corpus_dir(const nlohmann::json& cfg);

rhemo::RhEmoConfig rhemo_config(const nlohmann::json& cfg);
rhemo::TrainConfig train_config(const nlohmann::json& cfg);
exp::ExperimentConfig experiment_config(const nlohmann::json& cfg);

}  // namespace qser::config
