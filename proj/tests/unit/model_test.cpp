#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <unistd.h>

#include "amrlab/errors.hpp"
#include "amrlab/model.hpp"
#include "op_catalog.hpp"

namespace amrlab {
namespace {

ModelConfig small_config(std::uint64_t seed = 7) {
  ModelConfig config;
  config.modality_dims = {8, 8};
  config.encoding_dim = 4;
  config.encoder_hidden = {5};
  config.classifier_hidden = {6};
  config.num_classes = 3;
  config.init_seed = seed;
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

// Plain-loop linear layer: rows of x times W [in x out] plus b.
std::vector<std::vector<double>> linear(const std::vector<std::vector<double>>& x,
                                        const Tensor& w, const Tensor& b, bool relu) {
  std::vector<std::vector<double>> out(x.size(), std::vector<double>(w.dim(1)));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t j = 0; j < w.dim(1); ++j) {
      double acc = b[j];
      for (std::size_t i = 0; i < w.dim(0); ++i) acc += x[r][i] * w.at(i, j);
      out[r][j] = relu ? std::max(acc, 0.0) : acc;
    }
  }
  return out;
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> rows(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    for (std::size_t c = 0; c < t.dim(1); ++c) rows[r][c] = t.at(r, c);
  }
  return rows;
}

// Straight-line recomputation of the whole network without the graph.
std::vector<std::vector<double>> reference_logits(const MultimodalModel& model,
                                                  const std::vector<Tensor>& inputs) {
  const auto params = model.parameters();
  const ModelConfig& config = model.config();
  std::vector<std::vector<double>> fused_in(inputs[0].dim(0));
  for (std::size_t m = 0; m < model.num_modalities(); ++m) {
    auto h = rows_of(inputs[m]);
    for (std::size_t l = 0; l < model.encoder_layer_count(); ++l) {
      const std::size_t w = model.encoder_weight_index(m, l);
      h = linear(h, params[w], params[w + 1], true);
    }
    for (std::size_t r = 0; r < h.size(); ++r) {
      fused_in[r].insert(fused_in[r].end(), h[r].begin(), h[r].end());
    }
  }
  const std::size_t f = model.fusion_weight_index();
  const bool head = !config.classifier_hidden.empty();
  auto h = linear(fused_in, params[f], params[f + 1], head);
  const std::size_t layers = config.classifier_hidden.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t w = model.classifier_weight_index(l);
    h = linear(h, params[w], params[w + 1], l + 1 < layers);
  }
  return h;
}

TEST(ModelConfig, RejectsDegenerateShapes) {
  ModelConfig config = small_config();
  config.num_classes = 1;
  EXPECT_THROW(config.validate(), ConfigError);
  config = small_config();
  config.modality_dims.clear();
  EXPECT_THROW(config.validate(), ConfigError);
  config = small_config();
  config.modality_dims = {8, 0};
  EXPECT_THROW(config.validate(), ConfigError);
  config = small_config();
  config.encoding_dim = 0;
  EXPECT_THROW(config.validate(), ConfigError);
}

TEST(InitModel, SameSeedIsBitIdentical) {
  EXPECT_TRUE(init_model(small_config(3)).identical(init_model(small_config(3))));
}

TEST(InitModel, DifferentSeedsDiffer) {
  EXPECT_FALSE(init_model(small_config(3)).identical(init_model(small_config(4))));
}

TEST(InitModel, WeightsWithinScaledUniformRangeAndBiasesZero) {
  const MultimodalModel model = init_model(small_config());
  for (const Tensor& p : model.parameters()) {
    if (p.rank() == 1) {
      for (double v : p.data()) EXPECT_EQ(v, 0.0);
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(p.dim(0) + p.dim(1)));
    for (double v : p.data()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(Forward, LogitsShape) {
  ModelConfig config = small_config();
  config.encoder_hidden.clear();
  config.classifier_hidden.clear();
  const MultimodalModel model = init_model(config);
  std::mt19937_64 rng(1);
  const auto result = forward(model, random_inputs(config, 5, rng));
  EXPECT_EQ(result.logits.shape(), (Shape{5, 3}));
  ASSERT_EQ(result.encodings.size(), 2u);
  EXPECT_EQ(result.encodings[0].shape(), (Shape{5, 4}));
}

TEST(Forward, ZeroWeightsGiveUniformProbabilities) {
  MultimodalModel model = init_model(small_config());
  for (Tensor& p : model.mutable_parameters()) p = Tensor::zeros(p.shape());
  std::mt19937_64 rng(2);
  const auto result = forward(model, random_inputs(model.config(), 4, rng));
  for (double v : result.logits.data()) EXPECT_EQ(v, 0.0);
  for (double v : result.probabilities.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Forward, RowDoesNotDependOnBatchmates) {
  const MultimodalModel model = init_model(small_config());
  std::mt19937_64 rng(3);
  const auto batch = random_inputs(model.config(), 5, rng);
  std::vector<Tensor> single;
  for (const Tensor& x : batch) single.push_back(slice_cols(transpose(x), 2, 3));
  for (Tensor& x : single) x = transpose(x);
  const Tensor full = forward(model, batch).logits;
  const Tensor one = forward(model, single).logits;
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(one.at(0, c), full.at(2, c));
}

TEST(Forward, HandLinearModel) {
  ModelConfig config;
  config.modality_dims = {2};
  config.encoding_dim = 2;
  config.num_classes = 2;
  MultimodalModel model(config);
  auto& params = model.mutable_parameters();
  params[model.encoder_weight_index(0, 0)] = Tensor::matrix({{1, 0}, {0, 1}});
  // Stored [in x out]: the transpose of the column-vector form [[1,2],[-1,0]].
  params[model.fusion_weight_index()] = Tensor::matrix({{1, -1}, {2, 0}});
  const std::vector<Tensor> inputs{Tensor::matrix({{3, 1}})};
  const Tensor logits = forward(model, inputs).logits;
  EXPECT_EQ(logits.at(0, 0), 5.0);
  EXPECT_EQ(logits.at(0, 1), -3.0);
}

TEST(Forward, MatchesStraightLineRecomputation) {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelConfig config = small_config(seed);
    if (seed % 2) config.classifier_hidden.clear();
    if (seed % 3 == 0) config.encoder_hidden = {3, 4};
    const MultimodalModel model = init_model(config);
    const auto inputs = random_inputs(config, 6, rng);
    const Tensor logits = forward(model, inputs).logits;
    const auto expected = reference_logits(model, inputs);
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < config.num_classes; ++c) {
        EXPECT_NEAR(logits.at(r, c), expected[r][c], 1e-12);
      }
    }
  }
}

TEST(Forward, ProbabilityRowsSumToOne) {
  const MultimodalModel model = init_model(small_config());
  std::mt19937_64 rng(5);
  const Tensor p = forward(model, random_inputs(model.config(), 7, rng)).probabilities;
  for (std::size_t r = 0; r < 7; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) total += p.at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Forward, WrongInputsThrow) {
  const MultimodalModel model = init_model(small_config());
  std::mt19937_64 rng(6);
  auto inputs = random_inputs(model.config(), 2, rng);
  const std::vector<Tensor> one{inputs[0]};
  EXPECT_THROW(forward(model, one), InputError);
  inputs[1] = Tensor::zeros({2, 5});
  EXPECT_THROW(forward(model, inputs), InputError);
}

TEST(ParamGroups, EncoderHoldsEveryEncoderTensor) {
  ModelConfig config = small_config();
  config.encoder_hidden = {5};  // two layers per encoder
  const MultimodalModel model = init_model(config);
  const ParamGroups groups = model.param_groups();
  EXPECT_EQ(groups.encoder.size(), 8u);
  for (std::size_t i : groups.encoder) {
    EXPECT_EQ(model.parameter_info()[i].group, ParamGroup::kEncoder);
    EXPECT_TRUE(model.parameter_info()[i].modality.has_value());
  }
}

TEST(ParamGroups, PartitionIsDisjointAndExhaustive) {
  const MultimodalModel model = init_model(small_config());
  const ParamGroups groups = model.param_groups();
  std::set<std::size_t> seen(groups.encoder.begin(), groups.encoder.end());
  for (std::size_t i : groups.fusion_classifier) EXPECT_TRUE(seen.insert(i).second);
  EXPECT_EQ(seen.size(), model.parameters().size());
}

TEST(ParamGroups, FusionAndClassifierLiveInSecondGroup) {
  const MultimodalModel model = init_model(small_config());
  const auto fc = model.param_groups().fusion_classifier;
  const std::size_t f = model.fusion_weight_index();
  for (std::size_t i : {f, f + 1, model.classifier_weight_index(0),
                        model.classifier_weight_index(0) + 1}) {
    EXPECT_NE(std::find(fc.begin(), fc.end(), i), fc.end()) << i;
  }
}

TEST(Gradients, TaskLossMatchesFiniteDifferencesForEveryParameter) {
  const MultimodalModel model = init_model(small_config(11));
  std::mt19937_64 rng(7);
  const auto inputs = random_inputs(model.config(), 4, rng);
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  Graph graph;
  const auto params = bind_parameters(graph, model);
  const auto grads = backward(
      softmax_cross_entropy(forward(model, params, inputs).logits, labels), params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& value) {
          std::vector<Tensor> p(model.parameters().begin(), model.parameters().end());
          p[k] = value;
          return softmax_cross_entropy(forward(model, p, inputs).logits, labels).item();
        },
        model.parameters()[k], 1e-5);
    EXPECT_LT(testing::relative_error(grads[k], fd), 1e-4)
        << model.parameter_info()[k].name;
  }
}

TEST(UnimodalView, AcceptsOnlyItsModality) {
  const MultimodalModel model = init_model(small_config());
  const MultimodalModel view = unimodal_view(model, 0);
  EXPECT_EQ(view.num_modalities(), 1u);
  EXPECT_EQ(view.config().modality_dims, (std::vector<std::size_t>{8}));
  EXPECT_EQ(view.config().num_classes, 3u);
  EXPECT_EQ(view.config().encoder_hidden, model.config().encoder_hidden);
  std::mt19937_64 rng(8);
  const std::vector<Tensor> inputs{testing::random_tensor({5, 8}, rng)};
  EXPECT_EQ(forward(view, inputs).logits.shape(), (Shape{5, 3}));
}

TEST(ParamGroups, ClassifierIndexBeyondHeadThrows) {
  const MultimodalModel model = init_model(small_config());
  EXPECT_THROW(model.classifier_weight_index(1), InputError);
}

TEST(UnimodalView, OutOfRangeThrows) {
  EXPECT_THROW(unimodal_view(init_model(small_config()), 2), InputError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("amrlab_ckpt_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsExact) {
  const MultimodalModel model = init_model(small_config(9));
  save_checkpoint(model, dir_ / "m.ckpt");
  const MultimodalModel loaded = load_checkpoint(dir_ / "m.ckpt");
  EXPECT_EQ(loaded.config(), model.config());
  EXPECT_TRUE(loaded.identical(model));
}

TEST_F(CheckpointTest, TruncatedFileIsFormatError) {
  save_checkpoint(init_model(small_config()), dir_ / "m.ckpt");
  const auto size = std::filesystem::file_size(dir_ / "m.ckpt");
  std::filesystem::resize_file(dir_ / "m.ckpt", size - 3);
  EXPECT_THROW(load_checkpoint(dir_ / "m.ckpt"), FormatError);
}

TEST_F(CheckpointTest, BadMagicIsFormatError) {
  std::ofstream(dir_ / "bad.ckpt") << "NOTACKPT and some more bytes";
  EXPECT_THROW(load_checkpoint(dir_ / "bad.ckpt"), FormatError);
}

TEST_F(CheckpointTest, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint(dir_ / "absent.ckpt"), IoError);
}

}  // namespace
}  // namespace amrlab
