#include "amrlab/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "amrlab/errors.hpp"
#include "binary_io.hpp"

namespace amrlab {

namespace {

constexpr std::string_view kCheckpointMagic = "AMRLAB1";
constexpr std::uint32_t kMaxCheckpointCount = 1u << 20;

std::size_t fusion_output_width(const ModelConfig& config) {
  return config.classifier_hidden.empty() ? config.num_classes
                                          : config.classifier_hidden.front();
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(matmul(x, weight), expand(bias, 0, x.dim(0)));
}

}  // namespace

void ModelConfig::validate() const {
  if (modality_dims.empty()) throw ConfigError("model needs at least one modality");
  for (std::size_t d : modality_dims) {
    if (d == 0) throw ConfigError("modality widths must be >= 1");
  }
  if (encoding_dim == 0) throw ConfigError("encoding width must be >= 1");
  for (std::size_t h : encoder_hidden) {
    if (h == 0) throw ConfigError("encoder hidden widths must be >= 1");
  }
  for (std::size_t h : classifier_hidden) {
    if (h == 0) throw ConfigError("classifier hidden widths must be >= 1");
  }
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
}

MultimodalModel::MultimodalModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);

  auto add_layer = [&](std::size_t in, std::size_t out, const std::string& name,
                       ParamGroup group, std::optional<std::size_t> modality) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> w(in * out);
    for (double& v : w) v = dist(rng);
    params_.emplace_back(Shape{in, out}, std::move(w));
    info_.push_back({name + ".weight", group, modality});
    params_.push_back(Tensor::zeros({out}));
    info_.push_back({name + ".bias", group, modality});
  };

  for (std::size_t m = 0; m < config_.num_modalities(); ++m) {
    std::size_t in = config_.modality_dims[m];
    for (std::size_t l = 0; l < encoder_layer_count(); ++l) {
      const std::size_t out = l < config_.encoder_hidden.size()
                                  ? config_.encoder_hidden[l]
                                  : config_.encoding_dim;
      add_layer(in, out,
                "encoder." + std::to_string(m) + ".layer" + std::to_string(l),
                ParamGroup::kEncoder, m);
      in = out;
    }
  }
  add_layer(config_.encoding_dim * config_.num_modalities(),
            fusion_output_width(config_), "fusion", ParamGroup::kFusionClassifier,
            std::nullopt);
  for (std::size_t l = 0; l < config_.classifier_hidden.size(); ++l) {
    const std::size_t in = config_.classifier_hidden[l];
    const std::size_t out = l + 1 < config_.classifier_hidden.size()
                                ? config_.classifier_hidden[l + 1]
                                : config_.num_classes;
    add_layer(in, out, "classifier.layer" + std::to_string(l),
              ParamGroup::kFusionClassifier, std::nullopt);
  }
}

ParamGroups MultimodalModel::param_groups() const {
  ParamGroups groups;
  for (std::size_t i = 0; i < info_.size(); ++i) {
    (info_[i].group == ParamGroup::kEncoder ? groups.encoder
                                            : groups.fusion_classifier)
        .push_back(i);
  }
  return groups;
}

std::size_t MultimodalModel::encoder_weight_index(std::size_t modality,
                                                  std::size_t layer) const {
  if (modality >= num_modalities() || layer >= encoder_layer_count()) {
    throw InputError("encoder parameter index out of range");
  }
  return 2 * (modality * encoder_layer_count() + layer);
}

std::size_t MultimodalModel::fusion_weight_index() const {
  return 2 * num_modalities() * encoder_layer_count();
}

std::size_t MultimodalModel::classifier_weight_index(std::size_t layer) const {
  if (layer >= config_.classifier_hidden.size()) {
    throw InputError("classifier layer " + std::to_string(layer) + " out of range");
  }
  return fusion_weight_index() + 2 * (layer + 1);
}

std::pair<std::size_t, std::size_t> MultimodalModel::fusion_rows(
    std::size_t modality) const {
  return {modality * config_.encoding_dim, (modality + 1) * config_.encoding_dim};
}

bool MultimodalModel::identical(const MultimodalModel& other) const {
  if (!(config_ == other.config_) || params_.size() != other.params_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].identical(other.params_[i])) return false;
  }
  return true;
}

MultimodalModel init_model(const ModelConfig& config) {
  return MultimodalModel(config);
}

std::vector<Tensor> bind_parameters(Graph& graph, const MultimodalModel& model) {
  std::vector<Tensor> bound;
  bound.reserve(model.parameters().size());
  for (const Tensor& p : model.parameters()) bound.push_back(graph.variable(p));
  return bound;
}

Tensor logits_from_encodings(const MultimodalModel& model,
                             std::span<const Tensor> params,
                             std::span<const Tensor> encodings,
                             const ForwardOptions& options) {
  const ModelConfig& config = model.config();
  if (encodings.size() != config.num_modalities()) {
    throw InputError("expected " + std::to_string(config.num_modalities()) +
                     " encodings, got " + std::to_string(encodings.size()));
  }
  if (params.size() != model.parameters().size()) {
    throw InputError("parameter list does not match the model");
  }
  const std::size_t fusion = model.fusion_weight_index();
  Tensor h = linear(concat_cols(encodings), params[fusion], params[fusion + 1]);
  const std::size_t hidden = config.classifier_hidden.size();
  if (hidden == 0) return h;
  h = relu(h);
  if (options.dropout && options.dropout->fused.defined()) {
    h = mul(h, options.dropout->fused);
  }
  for (std::size_t l = 0; l < hidden; ++l) {
    const std::size_t w = model.classifier_weight_index(l);
    h = linear(h, params[w], params[w + 1]);
    if (l + 1 < hidden) h = relu(h);
  }
  return h;
}

std::vector<Tensor> encode(const MultimodalModel& model,
                           std::span<const Tensor> params,
                           std::span<const Tensor> inputs,
                           const ForwardOptions& options) {
  const ModelConfig& config = model.config();
  const std::size_t modalities = config.num_modalities();
  if (inputs.size() != modalities) {
    throw InputError("model has " + std::to_string(modalities) +
                     " modalities, got " + std::to_string(inputs.size()) +
                     " inputs");
  }
  if (params.size() != model.parameters().size()) {
    throw InputError("parameter list does not match the model");
  }
  if (!options.modality_kept.empty() &&
      options.modality_kept.size() != modalities) {
    throw InputError("modality_kept has the wrong length");
  }
  std::size_t batch = 0;
  for (std::size_t m = 0; m < modalities; ++m) {
    const Tensor& x = inputs[m];
    if (x.rank() != 2 || x.dim(1) != config.modality_dims[m]) {
      throw InputError("modality " + std::to_string(m) + " expects width " +
                       std::to_string(config.modality_dims[m]) + ", got " +
                       shape_string(x.shape()));
    }
    if (m == 0) batch = x.dim(0);
    if (x.dim(0) != batch) throw InputError("modalities disagree on batch size");
  }

  std::vector<Tensor> encodings;
  encodings.reserve(modalities);
  for (std::size_t m = 0; m < modalities; ++m) {
    Tensor h = inputs[m];
    for (std::size_t l = 0; l < model.encoder_layer_count(); ++l) {
      const std::size_t w = model.encoder_weight_index(m, l);
      h = relu(linear(h, params[w], params[w + 1]));
      const bool hidden_layer = l + 1 < model.encoder_layer_count();
      if (hidden_layer && options.dropout &&
          m < options.dropout->encoder.size() &&
          l < options.dropout->encoder[m].size()) {
        h = mul(h, options.dropout->encoder[m][l]);
      }
    }
    if (!options.modality_kept.empty() && !options.modality_kept[m]) {
      h = Tensor::zeros(h.shape());
    }
    encodings.push_back(h);
  }
  return encodings;
}

ForwardResult forward(const MultimodalModel& model,
                      std::span<const Tensor> params,
                      std::span<const Tensor> inputs,
                      const ForwardOptions& options) {
  ForwardResult result;
  result.encodings = encode(model, params, inputs, options);
  result.logits = logits_from_encodings(model, params, result.encodings, options);
  result.probabilities = softmax(result.logits.detach());
  return result;
}

ForwardResult forward(const MultimodalModel& model,
                      std::span<const Tensor> inputs,
                      const ForwardOptions& options) {
  return forward(model, model.parameters(), inputs, options);
}

MultimodalModel unimodal_view(const MultimodalModel& model, std::size_t modality) {
  const ModelConfig& base = model.config();
  if (modality >= base.num_modalities()) {
    throw InputError("modality index " + std::to_string(modality) +
                     " out of range for " +
                     std::to_string(base.num_modalities()) + " modalities");
  }
  ModelConfig config = base;
  config.modality_dims = {base.modality_dims[modality]};
  config.init_seed = base.init_seed + 0x9e3779b97f4a7c15ULL * (modality + 1);
  return MultimodalModel(std::move(config));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_sizes(std::ostream& out, const std::vector<std::size_t>& sizes) {
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(sizes.size()));
  for (std::size_t s : sizes) {
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(s));
  }
}

std::vector<std::size_t> read_sizes(std::istream& in, const char* what) {
  const auto n = binary::read<std::uint32_t>(in, what);
  if (n > kMaxCheckpointCount) throw FormatError(std::string("implausible ") + what);
  std::vector<std::size_t> sizes(n);
  for (auto& s : sizes) s = binary::read<std::uint32_t>(in, what);
  return sizes;
}

}  // namespace

void save_checkpoint(const MultimodalModel& model,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const ModelConfig& c = model.config();
  binary::write_magic(out, kCheckpointMagic);
  write_sizes(out, c.modality_dims);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(c.encoding_dim));
  write_sizes(out, c.encoder_hidden);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(c.fusion));
  write_sizes(out, c.classifier_hidden);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(c.num_classes));
  binary::write<std::uint64_t>(out, c.init_seed);

  const auto params = model.parameters();
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Tensor& p : params) {
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (std::size_t d : p.shape()) {
      binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    }
    for (double v : p.data()) binary::write<double>(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

MultimodalModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  binary::expect_magic(in, kCheckpointMagic);
  ModelConfig c;
  c.modality_dims = read_sizes(in, "modality widths");
  c.encoding_dim = binary::read<std::uint32_t>(in, "encoding width");
  c.encoder_hidden = read_sizes(in, "encoder layers");
  const auto fusion = binary::read<std::uint32_t>(in, "fusion kind");
  if (fusion != static_cast<std::uint32_t>(FusionKind::kConcatLinear)) {
    throw FormatError("unknown fusion kind " + std::to_string(fusion));
  }
  c.classifier_hidden = read_sizes(in, "classifier layers");
  c.num_classes = binary::read<std::uint32_t>(in, "class count");
  c.init_seed = binary::read<std::uint64_t>(in, "init seed");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }

  MultimodalModel model(c);
  auto& params = model.mutable_parameters();
  const auto count = binary::read<std::uint32_t>(in, "parameter count");
  if (count != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) +
                      " tensors, config implies " + std::to_string(params.size()));
  }
  for (Tensor& p : params) {
    const auto rank = binary::read<std::uint32_t>(in, "tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = binary::read<std::uint64_t>(in, "tensor shape");
    if (shape != p.shape()) {
      throw FormatError("tensor shape " + shape_string(shape) +
                        " does not match config " + shape_string(p.shape()));
    }
    std::vector<double> values(p.numel());
    for (double& v : values) v = binary::read<double>(in, "tensor data");
    p = Tensor(std::move(shape), std::move(values));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after checkpoint data");
  }
  return model;
}

}  // namespace amrlab
