#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "amrlab/attribution.hpp"
#include "amrlab/config.hpp"
#include "amrlab/errors.hpp"
#include "amrlab/harness.hpp"
#include "amrlab/metrics.hpp"
#include "amrlab/model.hpp"

namespace amrlab::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool dry_run = false;
  std::optional<std::size_t> seeds;
  std::string checkpoint;
  std::string data;
};

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw InternalError("SHA-256 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return sha256_hex(bytes.str());
}

ExperimentConfig require_config(const Options& opts) {
  if (opts.config.empty()) throw UsageError("--config is required");
  ExperimentConfig config = load_experiment_config(opts.config);
  if (opts.seed) {
    config.train.seed = *opts.seed;
    config.model.init_seed = *opts.seed;
  }
  return config;
}

fs::path output_dir(const Options& opts, const ExperimentConfig* config) {
  fs::path dir = !opts.out.empty() ? fs::path(opts.out)
                 : config          ? config->output.directory
                                   : fs::path("out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

// Model dims and class count always come from the data actually loaded.
ModelConfig bind_model(ModelConfig model, const Dataset& data) {
  model.modality_dims = data.dims;
  model.num_classes = data.num_classes;
  model.validate();
  return model;
}

std::size_t resolve_jobs(const Options& opts) {
  std::size_t jobs = opts.jobs.value_or(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* cap = std::getenv("AMRLAB_THREADS"); cap && *cap) {
    char* end = nullptr;
    const unsigned long long value = std::strtoull(cap, &end, 10);
    if (*end != '\0' || value == 0) {
      throw ConfigError("AMRLAB_THREADS must be a positive integer, got '" +
                        std::string(cap) + "'");
    }
    jobs = std::min<std::size_t>(jobs, value);
  }
  return std::max<std::size_t>(jobs, 1);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

void write_history_csv(const fs::path& path, const std::vector<MetricsReport>& history) {
  std::ostringstream out;
  out << std::setprecision(17);
  const std::size_t modalities = history.empty() ? 0 : history.front().attribution.size();
  out << "step,accuracy,mAP,dominance";
  for (std::size_t m = 0; m < modalities; ++m) out << ",attribution_" << m;
  out << ",task_loss,amr_loss,degenerate_count\n";
  for (const MetricsReport& r : history) {
    out << r.step << ',' << r.accuracy << ',' << r.mean_average_precision << ','
        << r.dominance;
    for (double a : r.attribution) out << ',' << a;
    out << ',' << r.task_loss << ',' << r.amr_loss << ',' << r.degenerate_count << '\n';
  }
  write_text(path, out.str());
}

std::string report_line(const MetricsReport& r) {
  std::ostringstream line;
  line << std::fixed << std::setprecision(4) << "step=" << r.step
       << " accuracy=" << r.accuracy << " mAP=" << r.mean_average_precision
       << " dominance=" << r.dominance << " task_loss=" << r.task_loss
       << " amr_loss=" << r.amr_loss << " degenerate=" << r.degenerate_count;
  return line.str();
}

int cmd_generate(const Options& opts, std::ostream& out) {
  ExperimentConfig config = require_config(opts);
  if (!config.data.synthetic) {
    throw ConfigError("generate needs data.source = synthetic");
  }
  SyntheticConfig synth = *config.data.synthetic;
  if (opts.seed) synth.seed = *opts.seed;
  if (opts.dry_run) {
    out << "config ok\n";
    return 0;
  }
  const fs::path dir = output_dir(opts, &config);
  const DatasetSplits splits = generate_synthetic(synth);
  save_feature_file(splits.train, dir / "train.amrdata");
  save_feature_file(splits.val, dir / "val.amrdata");

  Json manifest;
  manifest["config_sha256"] = sha256_hex(config.text);
  manifest["data_seed"] = synth.seed;
  manifest["num_classes"] = synth.num_classes;
  manifest["modality_dims"] = synth.modality_dims;
  manifest["signal"] = synth.signal;
  manifest["noise"] = synth.noise;
  manifest["label_noise"] = synth.label_noise;
  for (const auto& [name, data] : {std::pair<std::string, const Dataset*>{"train", &splits.train},
                                   {"val", &splits.val}}) {
    const fs::path file = dir / (name + ".amrdata");
    manifest["files"][name] = {{"path", file.filename().string()},
                               {"samples", data->size()},
                               {"sha256", file_sha256(file)}};
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << splits.train.size() << " train and " << splits.val.size()
      << " val samples to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Options& opts, std::ostream& out) {
  const ExperimentConfig config = require_config(opts);
  const DatasetSplits data = load_data(config.data);
  const ModelConfig model_config = bind_model(config.model, data.train);
  config.train.validate(model_config.num_modalities());
  if (opts.dry_run) {
    out << "config ok\n";
    return 0;
  }
  const fs::path dir = output_dir(opts, &config);
  const TrainResult result = train(MultimodalModel(model_config), data, config.train);

  save_checkpoint(result.model, dir / "model.ckpt");
  RunOutcome outcome;
  outcome.method = config.train.strategy.label();
  outcome.amr_enabled = config.train.amr.enabled;
  outcome.seed = config.train.seed;
  outcome.ok = true;
  outcome.final = result.history.back();
  outcome.history = result.history;
  if (config.output.json) write_run_json(dir / "metrics.json", outcome);
  if (config.output.csv) write_history_csv(dir / "history.csv", result.history);
  out << "final " << report_line(outcome.final) << "\n";
  return 0;
}

int cmd_matrix(const Options& opts, std::ostream& out) {
  const ExperimentConfig config = require_config(opts);
  const std::size_t seeds = opts.seeds.value_or(config.matrix.seeds);
  if (seeds == 0) throw ConfigError("--seeds must be >= 1");
  auto data = std::make_shared<const DatasetSplits>(load_data(config.data));
  const ModelConfig model_config = bind_model(config.model, data->train);
  const std::size_t modalities = model_config.num_modalities();

  std::vector<RunSpec> runs;
  for (const std::string& method : config.matrix.methods) {
    const StrategyConfig parsed = parse_method(method);
    for (bool amr : config.matrix.amr) {
      // The regulariser needs two modalities; unimodal rows stay plain.
      if (amr && parsed.kind == StrategyKind::kUnimodal) continue;
      for (std::size_t s = 0; s < seeds; ++s) {
        RunSpec spec;
        spec.train = config.train;
        spec.train.strategy.kind = parsed.kind;
        spec.train.strategy.modality = parsed.modality;
        spec.train.amr.enabled = amr;
        spec.train.seed = config.train.seed + s;
        spec.train.validate(modalities);
        spec.model = model_config;
        spec.model.init_seed = config.model.init_seed + s;
        spec.method = spec.train.strategy.label();
        spec.amr_enabled = amr;
        spec.seed = spec.train.seed;
        spec.data = data;
        runs.push_back(std::move(spec));
      }
    }
  }
  if (opts.dry_run) {
    out << "config ok: " << runs.size() << " runs\n";
    return 0;
  }
  const fs::path dir = output_dir(opts, &config);
  const std::vector<RunOutcome> outcomes = run_matrix(runs, resolve_jobs(opts));

  std::ostringstream csv;
  const std::vector<ResultRow> rows = results_table(outcomes);
  write_results_csv(csv, rows);
  write_text(dir / "results.csv", csv.str());
  if (config.output.json) {
    fs::create_directories(dir / "runs");
    for (const RunOutcome& o : outcomes) {
      const std::string name = o.method + (o.amr_enabled ? "_amr" : "") + "_seed" +
                               std::to_string(o.seed) + ".json";
      write_run_json(dir / "runs" / name, o);
    }
  }
  bool failed = false;
  for (const ResultRow& r : rows) {
    out << std::left << std::setw(18) << r.method << (r.amr_enabled ? " +AMR " : "      ")
        << std::setw(10) << r.seed;
    if (r.status == "ok") {
      out << std::fixed << std::setprecision(4) << " mAP=" << r.map
          << " accuracy=" << r.accuracy << " dominance=" << r.dominance << "\n";
    } else {
      failed = true;
      out << " FAILED: " << r.error << "\n";
    }
  }
  return failed ? static_cast<int>(ExitCode::kNumeric) : 0;
}

int cmd_attribution(const Options& opts, std::ostream& out) {
  if (opts.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const MultimodalModel model = load_checkpoint(opts.checkpoint);
  std::optional<ExperimentConfig> config;
  Dataset data;
  if (!opts.data.empty()) {
    const fs::path path = opts.data;
    data = path.extension() == ".csv"
               ? load_feature_csv(path, model.config().num_classes, Split::kVal)
               : load_feature_file(path, Split::kVal);
  } else if (!opts.config.empty()) {
    config = require_config(opts);
    data = load_data(config->data).val;
  } else {
    throw UsageError("attribution needs --data or --config");
  }
  if (data.dims != model.config().modality_dims ||
      data.num_classes != model.config().num_classes) {
    throw DataError("checkpoint and data disagree on modality dims or class count");
  }
  if (data.size() == 0) throw DataError("attribution data is empty");
  if (opts.dry_run) {
    out << "inputs ok\n";
    return 0;
  }
  const fs::path dir = output_dir(opts, config ? &*config : nullptr);

  // Same chunking as evaluate(), so the summary matches it exactly.
  constexpr std::size_t kChunk = 512;
  std::ostringstream csv;
  csv << std::setprecision(17);
  std::vector<double> total(model.num_modalities(), 0.0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    idx.resize(std::min(data.size(), start + kChunk) - start);
    std::iota(idx.begin(), idx.end(), start);
    const MultimodalBatch batch = make_batch(data, idx);
    const AttributionReport report = attribute(model, batch.inputs);
    write_attribution_csv(csv, report.raw_pooled, report.per_sample, start, start == 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t m = 0; m < total.size(); ++m) total[m] += report.per_sample.at(i, m);
    }
  }
  for (double& t : total) t /= static_cast<double>(data.size());
  write_text(dir / "attribution.csv", csv.str());
  out << "dominance " << dominance_string(total) << " over " << data.size() << " samples\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribution-regularised multimodal training toolkit", "amrlab"};
  app.require_subcommand(1);
  Options opts;
  app.add_option("--config", opts.config, "Experiment config file (INI)");
  app.add_option("--out", opts.out, "Output directory (overrides output.directory)");
  app.add_option("--seed", opts.seed, "Override the run seed");
  app.add_option("--jobs", opts.jobs, "Parallel runs for matrix")->check(CLI::PositiveNumber);
  app.add_flag("--dry-run", opts.dry_run, "Validate inputs without running");

  auto* generate = app.add_subcommand("generate", "Write synthetic train/val feature files");
  auto* train_cmd = app.add_subcommand("train", "Train one configuration");
  auto* matrix = app.add_subcommand("matrix", "Run the method x regulariser table");
  matrix->add_option("--seeds", opts.seeds, "Seeds per cell")->check(CLI::PositiveNumber);
  auto* attribution = app.add_subcommand("attribution", "Dump per-sample attributions");
  attribution->add_option("--checkpoint", opts.checkpoint, "Model checkpoint");
  attribution->add_option("--data", opts.data, "Feature file (AMRDATA or CSV)");
  for (auto* sub : {generate, train_cmd, matrix, attribution}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*generate) return cmd_generate(opts, out);
    if (*train_cmd) return cmd_train(opts, out);
    if (*matrix) return cmd_matrix(opts, out);
    return cmd_attribution(opts, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(exit_code_for(e));
  }
}

}  // namespace amrlab::cli
