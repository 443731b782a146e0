#include <gtest/gtest.h>

#include <string>

#include "amrlab/config.hpp"
#include "amrlab/errors.hpp"

namespace amrlab {
namespace {

const std::string kMinimal =
    "[data]\n"
    "source = synthetic\n"
    "seed = 5\n"
    "num_classes = 3\n"
    "modality_dims = 4, 6\n"
    "signal = 2, 1\n"
    "noise = 1, 1\n";

std::string with(const std::string& extra) { return kMinimal + extra; }

std::string error_of(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(ExperimentConfig, DefaultsAndDerivedModelShape) {
  const ExperimentConfig config = parse_experiment_config(kMinimal);
  ASSERT_TRUE(config.data.synthetic.has_value());
  EXPECT_EQ(config.data.synthetic->seed, 5u);
  EXPECT_EQ(config.model.modality_dims, (std::vector<std::size_t>{4, 6}));
  EXPECT_EQ(config.model.num_classes, 3u);
  EXPECT_EQ(config.train.strategy.kind, StrategyKind::kNaive);
  EXPECT_FALSE(config.train.amr.enabled);
  EXPECT_EQ(config.train.optimizer.momentum, 0.9);
  EXPECT_EQ(config.matrix.amr, (std::vector<bool>{false, true}));
  EXPECT_EQ(config.text, kMinimal);
}

TEST(ExperimentConfig, ReadsEverySection) {
  const ExperimentConfig config = parse_experiment_config(with(
      "[model]\nencoding_dim = 5\nencoder_hidden = 7, 8\nclassifier_hidden =\n"
      "init_seed = 9\nfusion = concat_linear\n"
      "[train]\nstrategy = unimodal1\nepochs = 3\nbatch_size = 16\nlr = 0.2\n"
      "momentum = 0.5\neval_every = 4\nseed = 11\n"
      "[amr]\nenabled = off\nratios = 2, 1\nlambda = 0.5\nlr = 0.01\n"
      "every_k_steps = 2\nuse_per_sample = yes\nclass = true_label\n"
      "[umt]\ntau = 3\nbeta = 0.25\n"
      "[output]\ndirectory = results\nformats = csv\n"
      "[matrix]\nmethods = naive, umt, unimodal0\namr = on\nseeds = 2\n"));
  EXPECT_EQ(config.model.encoding_dim, 5u);
  EXPECT_EQ(config.model.encoder_hidden, (std::vector<std::size_t>{7, 8}));
  EXPECT_TRUE(config.model.classifier_hidden.empty());
  EXPECT_EQ(config.model.init_seed, 9u);
  EXPECT_EQ(config.train.strategy.kind, StrategyKind::kUnimodal);
  EXPECT_EQ(config.train.strategy.modality, 1u);
  EXPECT_EQ(config.train.epochs, 3u);
  EXPECT_EQ(config.train.batch_size, 16u);
  EXPECT_EQ(config.train.optimizer.lr, 0.2);
  EXPECT_EQ(config.train.eval_every, 4u);
  EXPECT_EQ(config.train.seed, 11u);
  EXPECT_EQ(config.train.amr.target.ratios, (std::vector<double>{2, 1}));
  EXPECT_EQ(config.train.amr.target.lambda, 0.5);
  EXPECT_EQ(config.train.amr.every_k_steps, 2u);
  EXPECT_TRUE(config.train.amr.use_per_sample);
  EXPECT_EQ(config.train.amr.attribution_class, AttributionClass::kTrueLabel);
  EXPECT_EQ(config.train.strategy.umt_tau, 3.0);
  EXPECT_EQ(config.output.directory, "results");
  EXPECT_FALSE(config.output.json);
  EXPECT_TRUE(config.output.csv);
  EXPECT_EQ(config.matrix.methods.size(), 3u);
  EXPECT_EQ(config.matrix.amr, (std::vector<bool>{true}));
  EXPECT_EQ(config.matrix.seeds, 2u);
}

TEST(ExperimentConfig, ErrorsNameTheKey) {
  EXPECT_NE(error_of("[data]\nsource = synthetic\nnum_classes = 3\n").find("data.seed"),
            std::string::npos);
  EXPECT_NE(error_of(with("[train]\nepochz = 3\n")).find("train.epochz"), std::string::npos);
  EXPECT_NE(error_of(with("[train]\nepochs = three\n")).find("train.epochs"),
            std::string::npos);
  EXPECT_NE(error_of(with("[amr]\nenabled = maybe\n")).find("amr.enabled"), std::string::npos);
  EXPECT_NE(error_of(with("[model]\nfusion = attention\n")).find("model.fusion"),
            std::string::npos);
  EXPECT_NE(error_of(with("[output]\nformats = xml\n")).find("output.formats"),
            std::string::npos);
}

TEST(ExperimentConfig, SyntaxErrorReportsLine) {
  EXPECT_NE(error_of("[data]\nsource = synthetic\n[broken\n").find("line 3"),
            std::string::npos);
}

TEST(ExperimentConfig, CrossSectionChecks) {
  EXPECT_THROW(parse_experiment_config(with("[train]\nepochs = 0\n")), ConfigError);
  EXPECT_THROW(parse_experiment_config(with("[train]\nstrategy = unimodal2\n")), ConfigError);
  EXPECT_THROW(parse_experiment_config(with("[amr]\nenabled = true\nratios = 1, 1, 1\n")),
               ConfigError);
  EXPECT_THROW(parse_experiment_config(with("[matrix]\nmethods = naive, boosting\n")),
               ConfigError);
  EXPECT_THROW(parse_experiment_config(with("[matrix]\nseeds = 0\n")), ConfigError);
  EXPECT_THROW(parse_experiment_config(
                   "[data]\nsource = files\ntrain_file = /nonexistent/a\nval_file = /nonexistent/b\n"),
               ConfigError);
  EXPECT_THROW(parse_experiment_config(with("train_file = x.amrdata\n")), ConfigError);
}

TEST(ExperimentConfig, SingleModalityRejectsRegulariser) {
  EXPECT_THROW(parse_experiment_config(
                   "[data]\nsource = synthetic\nseed = 1\nmodality_dims = 4\nsignal = 1\n"
                   "noise = 1\n[amr]\nenabled = true\nratios = 1\n"),
               ConfigError);
}

TEST(ExperimentConfig, MissingFileIsConfigError) {
  EXPECT_THROW(load_experiment_config("/nonexistent/amrlab.ini"), ConfigError);
}

TEST(ParseMethod, Names) {
  EXPECT_EQ(parse_method("naive").kind, StrategyKind::kNaive);
  EXPECT_EQ(parse_method("modality_dropout").kind, StrategyKind::kModalityDropout);
  const StrategyConfig uni = parse_method("unimodal1");
  EXPECT_EQ(uni.kind, StrategyKind::kUnimodal);
  EXPECT_EQ(uni.modality, 1u);
  EXPECT_THROW(parse_method("unimodalx"), ConfigError);
  EXPECT_THROW(parse_method("stacking"), ConfigError);
}

}  // namespace
}  // namespace amrlab
