// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "amrlab/amr.hpp"
#include "amrlab/attribution.hpp"
#include "amrlab/baselines.hpp"
#include "amrlab/harness.hpp"
#include "amrlab/metrics.hpp"
#include "cli.hpp"
#include "op_catalog.hpp"

namespace {

using namespace amrlab;
namespace fs = std::filesystem;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool condition, const std::string& what) {
    if (!condition) {
      pass = false;
      detail << "; failed: " << what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ModelConfig random_model_config(std::mt19937_64& rng) {
  ModelConfig config;
  config.modality_dims = {2 + rng() % 5, 2 + rng() % 5};
  config.encoding_dim = 2 + rng() % 4;
  config.encoder_hidden = {3 + rng() % 5};
  config.classifier_hidden = {3 + rng() % 5};
  config.num_classes = 2 + rng() % 3;
  config.init_seed = rng();
  return config;
}

std::vector<Tensor> random_inputs(const ModelConfig& config, std::size_t batch,
                                  std::mt19937_64& rng) {
  std::vector<Tensor> inputs;
  for (std::size_t d : config.modality_dims) {
    inputs.push_back(testing::random_tensor({batch, d}, rng, -2.0, 2.0));
  }
  return inputs;
}

MultimodalBatch random_batch(const ModelConfig& config, std::size_t size,
                             std::mt19937_64& rng) {
  MultimodalBatch batch;
  batch.inputs = random_inputs(config, size, rng);
  for (std::size_t i = 0; i < size; ++i) {
    batch.labels.push_back(rng() % config.num_classes);
    batch.indices.push_back(i);
  }
  return batch;
}

void zero_fusion_rows(MultimodalModel& model, std::size_t modality) {
  const auto [lo, hi] = model.fusion_rows(modality);
  Tensor& w = model.mutable_parameters()[model.fusion_weight_index()];
  auto data = w.mutable_data();
  std::fill(data.begin() + static_cast<std::ptrdiff_t>(lo * w.dim(1)),
            data.begin() + static_cast<std::ptrdiff_t>(hi * w.dim(1)), 0.0);
}

void autodiff_correctness(Verdict& v) {
  const auto start = Clock::now();
  double worst_first = 0.0;
  double worst_second = 0.0;
  std::string worst_op;
  for (std::size_t i = 0; i < testing::op_catalog().size(); ++i) {
    const auto& op = testing::op_catalog()[i];
    std::mt19937_64 rng(5000 + i);
    for (int point = 0; point < 50; ++point) {
      const auto check = testing::check_gradients(op, testing::sample_inputs(op, rng), rng);
      if (check.first_order > worst_first) worst_op = op.name;
      worst_first = std::max(worst_first, check.first_order);
      worst_second = std::max(worst_second, check.second_order);
    }
  }
  const double elapsed = seconds_since(start);
  v.detail << testing::op_catalog().size() << " ops x 50 points, worst first-order "
           << worst_first << " (" << worst_op << "), worst second-order " << worst_second;
  v.require(worst_first < 1e-4, "first-order error " + std::to_string(worst_first));
  v.require(worst_second < 1e-3, "second-order error " + std::to_string(worst_second));
  v.require(elapsed < 10.0, "took " + std::to_string(elapsed) + " s");
}

void attribution_invariants(Verdict& v) {
  const auto start = Clock::now();
  std::mt19937_64 rng(2);
  double worst_sum = 0.0;
  bool in_range = true;
  bool zero_exact = true;
  std::size_t degenerate_rows = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const ModelConfig config = random_model_config(rng);
    MultimodalModel model = init_model(config);
    const bool silence = trial % 2 == 1;
    if (silence) zero_fusion_rows(model, 1);
    const AttributionReport report = attribute(model, random_inputs(config, 16, rng));
    for (std::size_t i = 0; i < report.per_sample.dim(0); ++i) {
      double sum = 0.0;
      for (std::size_t m = 0; m < 2; ++m) {
        const double a = report.per_sample.at(i, m);
        sum += a;
        in_range = in_range && a >= 0.0 && a <= 1.0;
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      if (!silence) continue;
      // A row with no attribution at all takes the uniform fallback, so the
      // silenced modality is checked on the pooled score there.
      const bool degenerate =
          report.raw_pooled.at(i, 0) + report.raw_pooled.at(i, 1) < kDegenerateRowSum;
      degenerate_rows += degenerate ? 1 : 0;
      zero_exact = zero_exact && report.raw_pooled.at(i, 1) == 0.0 &&
                   (degenerate || report.per_sample.at(i, 1) == 0.0);
    }
  }
  const double elapsed = seconds_since(start);
  v.detail << "100 models, worst |row sum - 1| " << worst_sum << ", " << degenerate_rows
           << " all-zero rows on uniform fallback";
  v.require(worst_sum <= 1e-9, "row sums off by " + std::to_string(worst_sum));
  v.require(in_range, "entry outside [0, 1]");
  v.require(zero_exact, "zero-weight modality scored nonzero");
  v.require(elapsed < 5.0, "took " + std::to_string(elapsed) + " s");
}

void regulariser_oracle(Verdict& v) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  double max_loss = 0.0;
  bool zero_iff = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng() % 3;
    std::vector<double> a(m);
    std::vector<double> r(m);
    for (auto& x : a) x = unit(rng) + 1e-3;
    for (auto& x : r) x = unit(rng) + 1e-3;
    const bool matched = trial % 4 == 0;
    if (matched) {
      const double scale = 0.5 + unit(rng);
      for (std::size_t k = 0; k < m; ++k) r[k] = scale * a[k];
    }
    double sa = 0.0;
    double sr = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      sa += a[k];
      sr += r[k];
    }
    double expected = 0.0;
    double gap = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      expected += std::abs(a[k] / sa - r[k] / sr);
      gap = std::max(gap, std::abs(a[k] / sa - r[k] / sr));
    }
    const double loss = amr_loss(Tensor::vector(a), r).item();
    worst = std::max(worst, std::abs(loss - expected));
    max_loss = std::max(max_loss, loss);
    if (matched) zero_iff = zero_iff && loss < 1e-12;
    else if (gap > 1e-9) zero_iff = zero_iff && loss > 0.0;
  }
  // Nearly disjoint supports approach the upper bound.
  const double extreme =
      amr_loss(Tensor::vector({1.0, 0.0}), std::vector<double>{1e-12, 1.0}).item();
  v.detail << "1000 pairs, worst abs diff " << worst << ", max loss " << max_loss
           << ", near-disjoint supports " << extreme;
  v.require(worst < 1e-12, "hand evaluation differs by " + std::to_string(worst));
  v.require(zero_iff, "zero iff matched normalisation broken");
  v.require(max_loss <= 2.0 && extreme <= 2.0, "loss exceeds 2");
}

void encoder_isolation(Verdict& v) {
  std::mt19937_64 rng(4);
  std::size_t changed_encoders = 0;
  std::size_t moved_head = 0;
  AmrConfig amr;
  amr.enabled = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const ModelConfig config = random_model_config(rng);
    MultimodalModel model = init_model(config);
    const MultimodalModel before = model;
    amr.target.ratios = {0.5 + (rng() % 100) / 100.0, 0.5 + (rng() % 100) / 100.0};
    amr_step(model, random_batch(config, 8, rng), amr);
    for (std::size_t i : model.param_groups().encoder) {
      changed_encoders += model.parameters()[i].identical(before.parameters()[i]) ? 0 : 1;
    }
    bool moved = false;
    for (std::size_t i : model.param_groups().fusion_classifier) {
      moved = moved || !model.parameters()[i].identical(before.parameters()[i]);
    }
    moved_head += moved ? 1 : 0;
  }

  SyntheticConfig data_config;
  data_config.num_classes = 4;
  data_config.train_samples = 600;
  data_config.val_samples = 200;
  data_config.modality_dims = {8, 8};
  data_config.seed = 1;
  const DatasetSplits data = generate_synthetic(data_config);
  ModelConfig model_config;
  model_config.modality_dims = {8, 8};
  model_config.num_classes = 4;
  model_config.encoding_dim = 8;
  model_config.encoder_hidden = {16};
  model_config.classifier_hidden = {16};
  TrainConfig plain;
  plain.epochs = 3;
  plain.eval_every = 10;
  TrainConfig zero = plain;
  zero.amr.enabled = true;
  zero.amr.target.lambda = 0.0;
  const TrainResult a = train(init_model(model_config), data, plain);
  const TrainResult b = train(init_model(model_config), data, zero);
  bool same_history = a.history.size() == b.history.size();
  for (std::size_t i = 0; same_history && i < a.history.size(); ++i) {
    same_history = a.history[i].accuracy == b.history[i].accuracy &&
                   a.history[i].attribution == b.history[i].attribution &&
                   a.history[i].task_loss == b.history[i].task_loss;
  }
  v.detail << "1000 steps, " << changed_encoders << " encoder tensors changed, head moved in "
           << moved_head << "; lambda=0 trajectory "
           << (a.model.identical(b.model) && same_history ? "identical" : "differs");
  v.require(changed_encoders == 0, "encoder tensors changed");
  v.require(moved_head > 0, "regulariser never updated the head");
  v.require(a.model.identical(b.model) && same_history, "lambda=0 run diverged from naive");
}

// Full-size synthetic task shared by the dominance and unimodal criteria.
struct TableSetup {
  std::vector<std::shared_ptr<const DatasetSplits>> data;
  std::vector<ModelConfig> models;
  TrainConfig train;

  static TableSetup make() {
    TableSetup s;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      SyntheticConfig config;
      config.num_classes = 6;
      config.train_samples = 3000;
      config.val_samples = 600;
      config.modality_dims = {16, 16};
      config.signal = {4.0, 1.0};
      config.noise = {1.0, 1.0};
      config.seed = seed;
      s.data.push_back(std::make_shared<const DatasetSplits>(generate_synthetic(config)));
      ModelConfig model;
      model.modality_dims = {16, 16};
      model.num_classes = 6;
      model.encoding_dim = 16;
      model.encoder_hidden = {32};
      model.classifier_hidden = {32};
      model.init_seed = seed;
      s.models.push_back(model);
    }
    s.train.epochs = 20;
    s.train.batch_size = 64;
    s.train.optimizer.lr = 0.05;
    s.train.optimizer.momentum = 0.9;
    s.train.amr.target.ratios = {1.0, 1.0};
    s.train.amr.target.lambda = 1.0;
    return s;
  }

  std::vector<RunSpec> runs(const StrategyConfig& strategy, bool amr) const {
    std::vector<RunSpec> out;
    for (std::size_t s = 0; s < data.size(); ++s) {
      RunSpec spec;
      spec.method = strategy.label();
      spec.amr_enabled = amr;
      spec.seed = s;
      spec.model = models[s];
      spec.train = train;
      spec.train.strategy = strategy;
      spec.train.amr.enabled = amr;
      spec.train.seed = s;
      spec.data = data[s];
      out.push_back(spec);
    }
    return out;
  }
};

struct SeedMean {
  double accuracy = 0.0;
  std::vector<double> attribution;
  bool ok = true;
};

SeedMean seed_mean(const std::vector<RunOutcome>& outcomes, std::size_t begin, std::size_t end) {
  SeedMean mean;
  const double n = static_cast<double>(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    mean.ok = mean.ok && outcomes[i].ok;
    if (!outcomes[i].ok) continue;
    mean.accuracy += outcomes[i].final.accuracy / n;
    mean.attribution.resize(outcomes[i].final.attribution.size(), 0.0);
    for (std::size_t m = 0; m < mean.attribution.size(); ++m) {
      mean.attribution[m] += outcomes[i].final.attribution[m] / n;
    }
  }
  return mean;
}

std::size_t hardware_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

void dominance_correction(Verdict& v, const TableSetup& setup) {
  const auto start = Clock::now();
  std::vector<RunSpec> runs = setup.runs(StrategyConfig{}, false);
  const auto with_amr = setup.runs(StrategyConfig{}, true);
  runs.insert(runs.end(), with_amr.begin(), with_amr.end());
  const auto outcomes = run_matrix(runs, hardware_jobs());
  const double elapsed = seconds_since(start);
  const SeedMean naive = seed_mean(outcomes, 0, 3);
  const SeedMean amr = seed_mean(outcomes, 3, 6);
  if (!naive.ok || !amr.ok) {
    v.require(false, "a run failed");
    return;
  }
  v.detail << std::fixed << std::setprecision(2) << "naive " << dominance_string(naive.attribution)
           << " acc " << 100 * naive.accuracy << "%, with AMR "
           << dominance_string(amr.attribution) << " acc " << 100 * amr.accuracy << "%, "
           << elapsed << " s";
  v.require(naive.attribution[0] >= 0.70, "naive fusion not dominated (" +
                                              dominance_string(naive.attribution) + ")");
  v.require(std::abs(amr.attribution[0] - 0.5) <= 0.05,
            "AMR split outside 50+-5 (" + dominance_string(amr.attribution) + ")");
  v.require(std::abs(amr.accuracy - naive.accuracy) <= 0.03, "accuracy moved by more than 3 points");
  v.require(elapsed < 60.0, "took " + std::to_string(elapsed) + " s");
}

void unimodal_ordering(Verdict& v, const TableSetup& setup) {
  StrategyConfig strong;
  strong.kind = StrategyKind::kUnimodal;
  strong.modality = 0;
  StrategyConfig weak = strong;
  weak.modality = 1;
  std::vector<RunSpec> runs = setup.runs(strong, false);
  for (auto spec : setup.runs(weak, false)) runs.push_back(spec);
  for (auto spec : setup.runs(StrategyConfig{}, false)) runs.push_back(spec);
  const auto outcomes = run_matrix(runs, hardware_jobs());
  const SeedMean a = seed_mean(outcomes, 0, 3);
  const SeedMean b = seed_mean(outcomes, 3, 6);
  const SeedMean fused = seed_mean(outcomes, 6, 9);
  if (!a.ok || !b.ok || !fused.ok) {
    v.require(false, "a run failed");
    return;
  }
  v.detail << std::fixed << std::setprecision(2) << "seed-mean accuracy: modality 0 "
           << 100 * a.accuracy << "%, modality 1 " << 100 * b.accuracy << "%, naive fusion "
           << 100 * fused.accuracy << "%";
  v.require(a.accuracy - b.accuracy >= 0.15, "strong modality leads by less than 15 points");
  v.require(fused.accuracy > a.accuracy && fused.accuracy > b.accuracy,
            "fusion does not beat both unimodal models");
}

double brute_force_ap(const std::vector<double>& scores, const std::vector<bool>& positive) {
  double sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    ++positives;
    std::size_t rank = 1;
    std::size_t hits = 1;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (j == i) continue;
      if (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) {
        ++rank;
        hits += positive[j] ? 1 : 0;
      }
    }
    sum += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return sum / static_cast<double>(positives);
}

void map_oracle(Verdict& v) {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng() % 7;
    const std::size_t c = 1 + rng() % 3;
    const Tensor scores = testing::random_tensor({n, c}, rng, 0.0, 1.0);
    std::vector<std::size_t> labels(n);
    for (auto& y : labels) y = rng() % c;
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < c; ++k) {
      std::vector<double> column;
      std::vector<bool> positive;
      for (std::size_t i = 0; i < n; ++i) {
        column.push_back(scores.at(i, k));
        positive.push_back(labels[i] == k);
      }
      if (std::find(positive.begin(), positive.end(), true) == positive.end()) continue;
      total += brute_force_ap(column, positive);
      ++counted;
    }
    worst = std::max(worst, std::abs(mean_average_precision(scores, labels) - total / counted));
  }
  // Class 0 holds positives at ranks 1 and 3; class 1's only positive ranks first.
  const double hand_ap0 = brute_force_ap({0.9, 0.5, 0.1}, {true, false, true});
  const double hand = mean_average_precision(
      Tensor::matrix({{0.9, 0.1}, {0.5, 0.9}, {0.1, 0.2}}), std::vector<std::size_t>{0, 1, 0});
  v.detail << "10 instances, worst abs diff " << worst << ", hand AP " << std::setprecision(4)
           << hand_ap0;
  v.require(worst < 1e-12, "brute force differs by " + std::to_string(worst));
  v.require(hand_ap0 == (1.0 + 2.0 / 3.0) / 2.0 && std::abs(hand_ap0 - 0.8333) < 5e-5,
            "hand AP is not 0.8333");
  v.require(hand == (hand_ap0 + 1.0) / 2.0, "hand example not reproduced");
}

void baseline_behaviour(Verdict& v) {
  std::mt19937_64 rng(8);
  double worst_rate = 0.0;
  for (double p : {0.2, 0.5}) {
    std::size_t dropped = 0;
    const std::size_t draws = 100000;
    for (std::size_t i = 0; i < draws; ++i) dropped += modality_dropout_select(2, p, rng)[0] ? 0 : 1;
    worst_rate = std::max(worst_rate, std::abs(static_cast<double>(dropped) / draws - p));
  }

  const Tensor logits = Tensor::matrix({{0.3, -1.0, 2.0}, {1.5, 0.2, -0.7}});
  const double matched_kl = distillation_term(logits, logits, 2.0).item();

  ModelConfig config;
  config.modality_dims = {3, 4};
  config.encoding_dim = 3;
  config.encoder_hidden = {4};
  config.classifier_hidden = {5};
  config.num_classes = 3;
  const MultimodalModel student = init_model(config);
  const MultimodalModel teacher = unimodal_view(init_model(config), 0);
  const MultimodalBatch batch = random_batch(config, 6, rng);
  Graph graph;
  const auto student_params = bind_parameters(graph, student);
  const auto teacher_params = bind_parameters(graph, teacher);
  const AuxHeads heads = init_aux_heads(student, 1);
  const auto fwd = forward(student, student_params, batch.inputs);
  const std::vector<Tensor> aux{aux_logits(fwd.encodings[0], heads.params[0], heads.params[1])};
  const std::vector<Tensor> teachers{teacher_logits(teacher, teacher_params, batch.inputs[0])};
  bool teacher_zero = true;
  for (const Tensor& g : backward(umt_loss(fwd.logits, batch.labels, aux, teachers, 2.0, 1.0),
                                  teacher_params)) {
    for (double x : g.data()) teacher_zero = teacher_zero && x == 0.0;
  }

  const double k = ogm_coefficients(std::vector<double>{0.74, 0.26}, 1.0)[0];
  const double ogm_error = std::abs(k - (1.0 - std::tanh(0.48)));

  v.detail << "drop rate off by " << worst_rate << ", matched KL " << matched_kl
           << ", OGM error " << ogm_error;
  v.require(worst_rate <= 0.01, "modality dropout rate off by " + std::to_string(worst_rate));
  v.require(std::abs(matched_kl) < 1e-15, "KL of matched logits is not 0");
  v.require(teacher_zero, "teacher received gradient");
  v.require(ogm_error < 1e-12, "OGM coefficient off the closed form");
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void determinism(Verdict& v) {
  const fs::path dir = fs::temp_directory_path() / ("amrlab_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::ofstream(dir / "run.ini") << "[data]\nsource = synthetic\nseed = 4\nnum_classes = 4\n"
                                    "train_samples = 400\nval_samples = 200\n"
                                    "modality_dims = 8, 8\nsignal = 4, 1\nnoise = 1, 1\n"
                                    "[model]\nencoder_hidden = 16\nclassifier_hidden = 16\n"
                                    "[train]\nstrategy = umt\nepochs = 3\neval_every = 5\n"
                                    "[amr]\nenabled = true\n"
                                    "[matrix]\nmethods = naive, dropout, ogm_simplified\n";
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args, const std::string& out) {
    args.insert(args.begin(), "amrlab");
    args.push_back("--config");
    args.push_back((dir / "run.ini").string());
    args.push_back("--out");
    args.push_back((dir / out).string());
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data(), sink, sink);
  };
  std::size_t compared = 0;
  std::vector<std::string> differing;
  bool ran = true;
  for (const std::string& cmd : {"generate", "train", "matrix"}) {
    ran = ran && run({cmd}, cmd + "_a") == 0 && run({cmd}, cmd + "_b") == 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir / (cmd + "_a"))) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), dir / (cmd + "_a"));
      ++compared;
      if (slurp(entry.path()) != slurp(dir / (cmd + "_b") / rel)) differing.push_back(rel.string());
    }
  }
  fs::remove_all(dir);
  v.detail << compared << " output files compared across reruns of generate, train, matrix";
  v.require(ran, "a command failed");
  v.require(compared > 0, "no outputs written");
  v.require(differing.empty(), "files differ: " + (differing.empty() ? "" : differing.front()));
}

}  // namespace

int main() {
  const TableSetup setup = TableSetup::make();
  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria{
      {"autodiff gradients match finite differences", autodiff_correctness},
      {"attribution rows are distributions", attribution_invariants},
      {"regulariser matches hand evaluation", regulariser_oracle},
      {"regulariser never touches encoders", encoder_isolation},
      {"regulariser corrects dominance", [&](Verdict& v) { dominance_correction(v, setup); }},
      {"unimodal ordering and fusion gain", [&](Verdict& v) { unimodal_ordering(v, setup); }},
      {"mAP matches brute force", map_oracle},
      {"baseline strategies behave as specified", baseline_behaviour},
      {"reruns are byte-identical", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict verdict;
    const auto start = Clock::now();
    try {
      criteria[i].second(verdict);
    } catch (const std::exception& e) {
      verdict.require(false, std::string("threw: ") + e.what());
    }
    failures += verdict.pass ? 0 : 1;
    std::cout << (verdict.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": "
              << criteria[i].first << " [" << verdict.detail.str() << "] (" << std::fixed
              << std::setprecision(2) << seconds_since(start) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
