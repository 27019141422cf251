#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "npdiff/experiments.hpp"

namespace npdiff {

inline constexpr const char *kVersion = "0.1.0";

// Everything a CLI invocation needs, read from one JSON document.
struct RunConfig {
    TaskSpec task;
    std::string data_path;  // CSV dataset; empty means generate from task.data
    std::string out_dir = "out";
    std::string checkpoint = "model.ckpt";
    int jobs = 1;
    std::vector<double> lambdas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<int> components{1, 2, 3, 5, 8, kFullSpectrum};
    std::vector<double> noise_levels{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<double> robustness_lambdas{0.0, 0.5};
    int convergence_epochs = 5;

    // Validates every section; the first problem is reported by field name.
    void validate() const;
};

nlohmann::json to_json(const SyntheticConfig &cfg);
nlohmann::json to_json(const DynamicsConfig &cfg);
nlohmann::json to_json(const DenoiserDims &dims);
nlohmann::json to_json(const TrainConfig &cfg);
nlohmann::json to_json(const TaskSpec &spec);
nlohmann::json to_json(const RunConfig &cfg);

// Strict readers: unknown keys and wrongly typed values throw ConfigError
// naming the dotted field path. Missing keys keep their defaults.
SyntheticConfig synthetic_from_json(const nlohmann::json &j, const std::string &prefix = "data");
TaskSpec task_from_json(const nlohmann::json &j, const std::string &prefix = "task");
RunConfig run_config_from_json(const nlohmann::json &j);

RunConfig load_run_config(const std::filesystem::path &path);

// Sets a dotted key ("task.train.max_epochs") to a value given as text.
// The text is parsed as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json &doc, const std::string &key, const std::string &value);

std::string canonical_dump(const nlohmann::json &j);
std::string config_hash(const nlohmann::json &j);  // 16 hex digits of FNV-1a over the canonical dump
// Ignores out_dir, checkpoint and jobs.
std::string config_hash(const RunConfig &cfg);

} // namespace npdiff
