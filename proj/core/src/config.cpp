#include "amrlab/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "amrlab/errors.hpp"

namespace amrlab {

namespace {

namespace pt = boost::property_tree;

// Typed access to an INI tree that remembers which keys were read, so
// leftovers can be reported as unknown.
class KeyReader {
 public:
  explicit KeyReader(const pt::ptree& tree) : tree_(tree) {}

  bool has(const std::string& path) const {
    return static_cast<bool>(tree_.get_child_optional(pt::ptree::path_type(path, '.')));
  }

  std::optional<std::string> raw(const std::string& path) {
    const auto node = tree_.get_optional<std::string>(pt::ptree::path_type(path, '.'));
    if (!node) return std::nullopt;
    used_.insert(path);
    return boost::algorithm::trim_copy(*node);
  }

  std::string require(const std::string& path) {
    auto value = raw(path);
    if (!value) throw ConfigError("missing required key '" + path + "'");
    return *value;
  }

  template <typename T>
  void read(const std::string& path, T& out) {
    if (auto value = raw(path)) out = convert<T>(path, *value);
  }

  template <typename T>
  void read_list(const std::string& path, std::vector<T>& out) {
    auto value = raw(path);
    if (!value) return;
    out.clear();
    if (value->empty()) return;
    std::stringstream ss(*value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      out.push_back(convert<T>(path, boost::algorithm::trim_copy(item)));
    }
  }

  template <typename T>
  static T convert(const std::string& path, const std::string& text) {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "on" || text == "yes" || text == "1") return true;
      if (text == "false" || text == "off" || text == "no" || text == "0") return false;
      throw ConfigError("key '" + path + "': expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      std::istringstream in(text);
      T value{};
      if constexpr (std::is_unsigned_v<T>) {
        if (!text.empty() && text.front() == '-') {
          throw ConfigError("key '" + path + "': expected a non-negative integer, got '" +
                            text + "'");
        }
      }
      in >> value;
      if (text.empty() || in.fail() || !in.eof()) {
        throw ConfigError("key '" + path + "': cannot parse '" + text + "'");
      }
      return value;
    }
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) {
        throw ConfigError("key '" + section + "' must live inside a section");
      }
      for (const auto& [key, unused] : body) {
        const std::string path = section + "." + key;
        if (!used_.contains(path)) throw ConfigError("unknown key '" + path + "'");
      }
    }
  }

 private:
  const pt::ptree& tree_;
  std::set<std::string> used_;
};

AttributionClass parse_attribution_class(const std::string& text) {
  if (text == "predicted") return AttributionClass::kPredicted;
  if (text == "true_label") return AttributionClass::kTrueLabel;
  throw ConfigError("key 'amr.class': expected predicted or true_label, got '" + text +
                    "'");
}

void read_data(KeyReader& in, DataSource& data) {
  const std::string source = in.raw("data.source").value_or("synthetic");
  static const char* const kSyntheticKeys[] = {
      "data.seed",   "data.num_classes", "data.train_samples", "data.val_samples",
      "data.modality_dims", "data.signal", "data.noise",      "data.label_noise"};
  static const char* const kFileKeys[] = {"data.train_file", "data.val_file"};
  if (source == "synthetic") {
    for (const char* key : kFileKeys) {
      if (in.has(key)) {
        throw ConfigError("key '" + std::string(key) +
                          "' conflicts with data.source = synthetic; specify exactly "
                          "one data source");
      }
    }
    SyntheticConfig synth;
    synth.seed = KeyReader::convert<std::uint64_t>("data.seed", in.require("data.seed"));
    in.read("data.num_classes", synth.num_classes);
    in.read("data.train_samples", synth.train_samples);
    in.read("data.val_samples", synth.val_samples);
    in.read_list("data.modality_dims", synth.modality_dims);
    in.read_list("data.signal", synth.signal);
    in.read_list("data.noise", synth.noise);
    in.read("data.label_noise", synth.label_noise);
    data.synthetic = synth;
  } else if (source == "files") {
    for (const char* key : kSyntheticKeys) {
      if (in.has(key)) {
        throw ConfigError("key '" + std::string(key) +
                          "' conflicts with data.source = files; specify exactly one "
                          "data source");
      }
    }
    data.train_file = in.require("data.train_file");
    data.val_file = in.require("data.val_file");
    in.read("data.csv_num_classes", data.num_classes);
  } else {
    throw ConfigError("key 'data.source': expected synthetic or files, got '" + source +
                      "'");
  }
}

void read_strategy(KeyReader& in, StrategyConfig& strategy) {
  if (auto method = in.raw("train.strategy")) {
    const StrategyConfig parsed = parse_method(*method);
    strategy.kind = parsed.kind;
    strategy.modality = parsed.modality;
  }
  in.read("train.modality", strategy.modality);
  in.read("dropout.p", strategy.dropout_p);
  in.read("mdrop.p", strategy.mdrop_p);
  in.read("umt.tau", strategy.umt_tau);
  in.read("umt.beta", strategy.umt_beta);
  in.read("ogm.alpha", strategy.ogm_alpha);
}

}  // namespace

StrategyConfig parse_method(const std::string& name) {
  StrategyConfig config;
  const std::string prefix = "unimodal";
  if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size()) {
    config.kind = StrategyKind::kUnimodal;
    config.modality =
        KeyReader::convert<std::size_t>("method", name.substr(prefix.size()));
    return config;
  }
  config.kind = parse_strategy_kind(name);
  return config;
}

void ExperimentConfig::validate() const {
  std::size_t modalities = 0;
  if (data.synthetic) {
    data.synthetic->validate();
    modalities = data.synthetic->modality_dims.size();
  } else {
    for (const auto& [key, path] :
         {std::pair{"data.train_file", data.train_file}, {"data.val_file", data.val_file}}) {
      if (!std::filesystem::exists(path)) {
        throw ConfigError("key '" + std::string(key) + "': file '" + path.string() +
                          "' does not exist");
      }
    }
  }
  if (model.encoding_dim == 0) throw ConfigError("key 'model.encoding_dim' must be >= 1");
  for (std::size_t h : model.encoder_hidden) {
    if (h == 0) throw ConfigError("key 'model.encoder_hidden' entries must be >= 1");
  }
  for (std::size_t h : model.classifier_hidden) {
    if (h == 0) throw ConfigError("key 'model.classifier_hidden' entries must be >= 1");
  }
  if (matrix.seeds == 0) throw ConfigError("key 'matrix.seeds' must be >= 1");
  if (matrix.methods.empty()) throw ConfigError("key 'matrix.methods' is empty");
  if (matrix.amr.empty()) throw ConfigError("key 'matrix.amr' is empty");
  // File sources reveal M only once loaded; train() re-validates then.
  if (modalities != 0) {
    train.validate(modalities);
    for (const std::string& method : matrix.methods) {
      StrategyConfig strategy = train.strategy;
      const StrategyConfig parsed = parse_method(method);
      strategy.kind = parsed.kind;
      strategy.modality = parsed.modality;
      strategy.validate(modalities);
    }
  }
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream stream(text);
    pt::ini_parser::read_ini(stream, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " +
                      e.message());
  }
  KeyReader in(tree);
  ExperimentConfig config;
  config.text = text;

  read_data(in, config.data);

  in.read("model.encoding_dim", config.model.encoding_dim);
  in.read_list("model.encoder_hidden", config.model.encoder_hidden);
  in.read_list("model.classifier_hidden", config.model.classifier_hidden);
  in.read("model.init_seed", config.model.init_seed);
  if (auto fusion = in.raw("model.fusion"); fusion && *fusion != "concat_linear") {
    throw ConfigError("key 'model.fusion': only concat_linear is supported, got '" +
                      *fusion + "'");
  }
  if (config.data.synthetic) {
    config.model.modality_dims = config.data.synthetic->modality_dims;
    config.model.num_classes = config.data.synthetic->num_classes;
  }

  TrainConfig& train = config.train;
  read_strategy(in, train.strategy);
  in.read("train.epochs", train.epochs);
  in.read("train.batch_size", train.batch_size);
  in.read("train.lr", train.optimizer.lr);
  in.read("train.momentum", train.optimizer.momentum);
  in.read("train.eval_every", train.eval_every);
  in.read("train.seed", train.seed);

  AmrConfig& amr = train.amr;
  in.read("amr.enabled", amr.enabled);
  in.read_list("amr.ratios", amr.target.ratios);
  in.read("amr.lambda", amr.target.lambda);
  in.read("amr.lr", amr.target.lr);
  in.read("amr.every_k_steps", amr.every_k_steps);
  in.read("amr.use_per_sample", amr.use_per_sample);
  if (auto cls = in.raw("amr.class")) amr.attribution_class = parse_attribution_class(*cls);

  if (auto dir = in.raw("output.directory")) config.output.directory = *dir;
  if (auto formats = in.raw("output.formats")) {
    std::stringstream ss(*formats);
    std::string item;
    config.output.json = config.output.csv = false;
    while (std::getline(ss, item, ',')) {
      item = boost::algorithm::trim_copy(item);
      if (item == "json") {
        config.output.json = true;
      } else if (item == "csv") {
        config.output.csv = true;
      } else {
        throw ConfigError("key 'output.formats': unknown format '" + item + "'");
      }
    }
  }

  in.read_list("matrix.methods", config.matrix.methods);
  in.read_list("matrix.amr", config.matrix.amr);
  in.read("matrix.seeds", config.matrix.seeds);

  in.reject_unknown();
  config.validate();
  return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_experiment_config(text.str());
}

DatasetSplits load_data(const DataSource& source) {
  if (source.synthetic) return generate_synthetic(*source.synthetic);
  auto load = [&](const std::filesystem::path& path, Split split) {
    if (path.extension() == ".csv") {
      return load_feature_csv(path, source.num_classes, split);
    }
    return load_feature_file(path, split);
  };
  DatasetSplits splits{load(source.train_file, Split::kTrain),
                       load(source.val_file, Split::kVal)};
  if (splits.train.dims != splits.val.dims ||
      splits.train.num_classes != splits.val.num_classes) {
    throw DataError("train and val files disagree on modality dims or class count");
  }
  return splits;
}

}  // namespace amrlab
