#include "amrlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "amrlab/errors.hpp"

namespace amrlab {

void TrainConfig::validate(std::size_t num_modalities) const {
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  optimizer.validate();
  strategy.validate(num_modalities);
  const std::size_t trained_modalities =
      strategy.kind == StrategyKind::kUnimodal ? 1 : num_modalities;
  amr.validate(trained_modalities);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct LossAccumulator {
  double task = 0.0;
  double amr = 0.0;
  std::size_t task_count = 0;
  std::size_t amr_count = 0;

  void fill(MetricsReport& report) {
    report.task_loss = task_count ? task / static_cast<double>(task_count) : 0.0;
    report.amr_loss = amr_count ? amr / static_cast<double>(amr_count) : 0.0;
    *this = {};
  }
};

}  // namespace

TrainResult train(const MultimodalModel& initial, const DatasetSplits& data,
                  const TrainConfig& config) {
  config.validate(initial.num_modalities());
  if (data.train.num_modalities() != initial.num_modalities() ||
      data.val.num_modalities() != initial.num_modalities()) {
    throw ConfigError("data has " + std::to_string(data.train.num_modalities()) +
                      " modalities but the model expects " +
                      std::to_string(initial.num_modalities()));
  }

  const bool unimodal = config.strategy.kind == StrategyKind::kUnimodal;
  const std::size_t m = config.strategy.modality;
  DatasetSplits reduced;
  if (unimodal) {
    reduced.train = data.train.select_modality(m);
    reduced.val = data.val.select_modality(m);
  }
  const DatasetSplits& splits = unimodal ? reduced : data;
  TrainResult result{unimodal ? unimodal_view(initial, m) : initial, {}};
  MultimodalModel& model = result.model;

  FitConfig fit;
  fit.epochs = config.epochs;
  fit.batch_size = config.batch_size;
  fit.optimizer = config.optimizer;
  fit.seed = mix_seed(config.seed, 1);
  StrategyConfig strategy_config = config.strategy;
  strategy_config.seed = mix_seed(config.seed, 2);
  std::unique_ptr<Strategy> strategy =
      make_strategy(strategy_config, model, splits, fit);
  SgdMomentum optimizer(config.optimizer);

  const std::optional<AttributionTarget> target =
      config.amr.enabled ? std::optional(config.amr.target) : std::nullopt;
  LossAccumulator losses;
  std::size_t step = 0;
  auto record = [&] {
    MetricsReport report = evaluate(model, splits.val, target);
    report.step = step;
    losses.fill(report);
    result.history.push_back(std::move(report));
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t shuffle = mix_seed(config.seed, 1000 + epoch);
    for (const MultimodalBatch& batch :
         batches(splits.train, config.batch_size, shuffle)) {
      losses.task += strategy->step(model, batch, optimizer).task_loss;
      ++losses.task_count;
      if (config.amr.enabled && step % config.amr.every_k_steps == 0) {
        losses.amr += amr_step(model, batch, config.amr).loss;
        ++losses.amr_count;
      }
      ++step;
      if (config.eval_every != 0 && step % config.eval_every == 0) record();
    }
  }
  if (result.history.empty() || result.history.back().step != step) record();
  return result;
}

std::vector<RunOutcome> run_matrix(const std::vector<RunSpec>& runs,
                                   std::size_t jobs) {
  std::vector<RunOutcome> outcomes(runs.size());
  auto run_one = [&](std::size_t i) {
    const RunSpec& spec = runs[i];
    RunOutcome& out = outcomes[i];
    out.method = spec.method;
    out.amr_enabled = spec.amr_enabled;
    out.seed = spec.seed;
    try {
      if (!spec.data) throw ConfigError("run has no data");
      TrainResult trained = train(MultimodalModel(spec.model), *spec.data, spec.train);
      out.history = std::move(trained.history);
      out.final = out.history.back();
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
  };

  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(runs.size(), 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < runs.size(); ++i) run_one(i);
    return outcomes;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < runs.size(); i = next++) run_one(i);
    });
  }
  for (auto& t : workers) t.join();
  return outcomes;
}

std::vector<ResultRow> results_table(const std::vector<RunOutcome>& outcomes) {
  std::vector<ResultRow> rows;
  // Group key -> successful outcomes, in first-seen order.
  std::vector<std::pair<std::string, bool>> order;
  std::map<std::pair<std::string, bool>, std::vector<const RunOutcome*>> groups;
  for (const RunOutcome& o : outcomes) {
    ResultRow row;
    row.method = o.method;
    row.amr_enabled = o.amr_enabled;
    row.seed = std::to_string(o.seed);
    row.status = o.ok ? "ok" : "failed";
    if (o.ok) {
      row.map = o.final.mean_average_precision;
      row.accuracy = o.final.accuracy;
      row.dominance = o.final.dominance;
    } else {
      row.error = o.error;
    }
    rows.push_back(row);
    const auto key = std::make_pair(o.method, o.amr_enabled);
    if (!groups.contains(key)) order.push_back(key);
    if (o.ok) groups[key].push_back(&o);
  }
  for (const auto& key : order) {
    const auto& members = groups[key];
    if (members.size() < 2) continue;
    const double n = static_cast<double>(members.size());
    double map_mean = 0.0;
    double acc_mean = 0.0;
    std::vector<double> attribution(members.front()->final.attribution.size(), 0.0);
    for (const RunOutcome* o : members) {
      map_mean += o->final.mean_average_precision / n;
      acc_mean += o->final.accuracy / n;
      for (std::size_t k = 0; k < attribution.size(); ++k) {
        attribution[k] += o->final.attribution[k] / n;
      }
    }
    double map_var = 0.0;
    double acc_var = 0.0;
    for (const RunOutcome* o : members) {
      map_var += std::pow(o->final.mean_average_precision - map_mean, 2);
      acc_var += std::pow(o->final.accuracy - acc_mean, 2);
    }
    ResultRow row;
    row.method = key.first;
    row.amr_enabled = key.second;
    row.map = map_mean;
    row.accuracy = acc_mean;
    row.dominance = dominance_string(attribution);
    row.seed = "aggregate";
    row.map_std = std::sqrt(map_var / (n - 1.0));
    row.accuracy_std = std::sqrt(acc_var / (n - 1.0));
    row.status = "ok";
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  return cells;
}

constexpr const char* kResultsHeader =
    "method,amr_enabled,mAP,accuracy,dominance,seed,mAP_std,accuracy_std,status,error";

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultsHeader << '\n';
  out << std::setprecision(17);
  for (const ResultRow& r : rows) {
    out << csv_field(r.method) << ',' << (r.amr_enabled ? "true" : "false") << ','
        << r.map << ',' << r.accuracy << ',' << csv_field(r.dominance) << ','
        << csv_field(r.seed) << ',' << r.map_std << ',' << r.accuracy_std << ','
        << r.status << ',' << csv_field(r.error) << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    throw FormatError("results CSV header mismatch");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 10) throw FormatError("results CSV row has wrong arity");
    ResultRow r;
    r.method = cells[0];
    r.amr_enabled = cells[1] == "true";
    r.map = std::stod(cells[2]);
    r.accuracy = std::stod(cells[3]);
    r.dominance = cells[4];
    r.seed = cells[5];
    r.map_std = std::stod(cells[6]);
    r.accuracy_std = std::stod(cells[7]);
    r.status = cells[8];
    r.error = cells[9];
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["accuracy"] = r.accuracy;
  j["mAP"] = r.mean_average_precision;
  j["attribution"] = r.attribution;
  j["dominance"] = r.dominance;
  j["dominance_split"] = "val";
  j["task_loss"] = r.task_loss;
  j["amr_loss"] = r.amr_loss;
  j["degenerate_count"] = r.degenerate_count;
  return j;
}

}  // namespace

std::string metrics_json(const MetricsReport& report) {
  return report_to_json(report).dump(2);
}

void write_run_json(const std::filesystem::path& path, const RunOutcome& outcome) {
  nlohmann::ordered_json j;
  j["method"] = outcome.method;
  j["amr_enabled"] = outcome.amr_enabled;
  j["seed"] = outcome.seed;
  j["status"] = outcome.ok ? "ok" : "failed";
  if (!outcome.ok) j["error"] = outcome.error;
  if (outcome.ok) j["final"] = report_to_json(outcome.final);
  j["history"] = nlohmann::ordered_json::array();
  for (const MetricsReport& r : outcome.history) {
    j["history"].push_back(report_to_json(r));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace amrlab
