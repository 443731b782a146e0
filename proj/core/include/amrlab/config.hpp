#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "amrlab/data.hpp"
#include "amrlab/harness.hpp"
#include "amrlab/model.hpp"

namespace amrlab {

// Exactly one of `synthetic` or the file pair is set after parsing.
struct DataSource {
  std::optional<SyntheticConfig> synthetic;
  std::filesystem::path train_file;
  std::filesystem::path val_file;
  std::size_t num_classes = 0;  // CSV inputs only; 0 infers from labels
};

struct OutputConfig {
  std::filesystem::path directory = "out";
  bool json = true;
  bool csv = true;
};

struct MatrixConfig {
  std::vector<std::string> methods{"naive"};
  std::vector<bool> amr{false, true};
  std::size_t seeds = 1;
};

// Everything one CLI invocation needs. Model dims and class count are
// filled from the data source, so the model section only shapes layers.
struct ExperimentConfig {
  DataSource data;
  ModelConfig model;
  TrainConfig train;
  OutputConfig output;
  MatrixConfig matrix;
  std::string text;  // raw file contents, hashed into manifests

  // Cross-section checks; throws ConfigError naming the key path.
  void validate() const;
};

// INI-style parse. Unknown sections and keys are rejected so typos do not
// silently fall back to defaults. Throws ConfigError naming the key path
// (or the line, for syntax errors).
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// "naive", "unimodal1", "ogm_simplified", ... back to a strategy.
StrategyConfig parse_method(const std::string& name);

// Generates or loads the configured splits.
DatasetSplits load_data(const DataSource& source);

}  // namespace amrlab
