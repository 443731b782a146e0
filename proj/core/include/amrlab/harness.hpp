#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "amrlab/amr.hpp"
#include "amrlab/baselines.hpp"
#include "amrlab/data.hpp"
#include "amrlab/metrics.hpp"
#include "amrlab/model.hpp"
#include "amrlab/optim.hpp"

namespace amrlab {

struct TrainConfig {
  StrategyConfig strategy;
  AmrConfig amr;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  SgdConfig optimizer;
  // Evaluate on the validation split every this many steps; 0 evaluates
  // only at the end.
  std::size_t eval_every = 0;
  std::uint64_t seed = 0;

  // Throws ConfigError; checks strategy/regulariser compatibility too.
  void validate(std::size_t num_modalities) const;
};

struct TrainResult {
  MultimodalModel model;
  std::vector<MetricsReport> history;  // last entry is the final report
};

// Runs the configured strategy (plus regulariser steps when enabled) for
// the configured epochs. For the unimodal strategy the model and data are
// first reduced to the selected modality. Deterministic given the configs.
TrainResult train(const MultimodalModel& initial, const DatasetSplits& data,
                  const TrainConfig& config);

// One cell of a method x regulariser comparison.
struct RunSpec {
  std::string method;
  bool amr_enabled = false;
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  std::shared_ptr<const DatasetSplits> data;
};

struct RunOutcome {
  std::string method;
  bool amr_enabled = false;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport final;
  std::vector<MetricsReport> history;
};

// Runs every spec, up to `jobs` at a time. A failing run is recorded in its
// outcome and the rest continue. Outcomes keep the input order.
std::vector<RunOutcome> run_matrix(const std::vector<RunSpec>& runs,
                                   std::size_t jobs = 1);

// One row of the results CSV.
struct ResultRow {
  std::string method;
  bool amr_enabled = false;
  double map = 0.0;
  double accuracy = 0.0;
  std::string dominance;
  std::string seed;  // run seed, or "aggregate"
  double map_std = 0.0;
  double accuracy_std = 0.0;
  std::string status;  // "ok" or "failed"
  std::string error;
};

// Per-run rows, then (when a method/AMR pair has more than one successful
// run) an aggregate row holding the seed mean and standard deviation.
std::vector<ResultRow> results_table(const std::vector<RunOutcome>& outcomes);

// Columns: method,amr_enabled,mAP,accuracy,dominance,seed,mAP_std,
// accuracy_std,status,error.
void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(std::istream& in);

// JSON mirror of a MetricsReport / a run's history.
std::string metrics_json(const MetricsReport& report);
void write_run_json(const std::filesystem::path& path, const RunOutcome& outcome);

}  // namespace amrlab
