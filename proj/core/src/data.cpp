#include "amrlab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "amrlab/errors.hpp"
#include "binary_io.hpp"

namespace amrlab {

namespace {

constexpr std::string_view kDataMagic = "AMRDATA1";
constexpr std::uint32_t kMaxModalities = 1024;
constexpr std::uint32_t kMaxWidth = 1u << 24;

}  // namespace

std::string split_name(Split split) {
  return split == Split::kTrain ? "train" : "val";
}

void SyntheticConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic data needs >= 2 classes");
  if (train_samples == 0 || val_samples == 0) {
    throw ConfigError("synthetic splits must be non-empty");
  }
  if (modality_dims.empty()) throw ConfigError("synthetic data needs modalities");
  const std::size_t m = modality_dims.size();
  if (signal.size() != m || noise.size() != m) {
    throw ConfigError("signal and noise need one entry per modality");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (modality_dims[i] == 0) throw ConfigError("modality widths must be >= 1");
    if (!(signal[i] >= 0.0)) throw ConfigError("signal scale must be >= 0");
    if (!(noise[i] > 0.0)) throw ConfigError("noise std must be > 0");
  }
  if (!(label_noise >= 0.0 && label_noise < 0.5)) {
    throw ConfigError("label noise must lie in [0, 0.5)");
  }
}

void Dataset::validate() const {
  if (dims.empty()) throw DataError("dataset has no modalities");
  if (num_classes < 2) throw DataError("dataset needs >= 2 classes");
  if (features.size() != dims.size()) {
    throw DataError("feature blocks do not match modality count");
  }
  for (std::size_t m = 0; m < dims.size(); ++m) {
    if (dims[m] == 0) throw DataError("modality width is zero");
    if (features[m].size() != labels.size() * dims[m]) {
      throw DataError("modality " + std::to_string(m) +
                      " row count differs from label count");
    }
  }
  for (std::size_t y : labels) {
    if (y >= num_classes) {
      throw DataError("label " + std::to_string(y) + " out of range for " +
                      std::to_string(num_classes) + " classes");
    }
  }
}

Tensor Dataset::rows(std::size_t modality,
                     std::span<const std::size_t> indices) const {
  const std::size_t d = dims.at(modality);
  std::vector<double> out(indices.size() * d);
  const std::vector<float>& block = features[modality];
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const float* src = block.data() + indices[r] * d;
    std::copy(src, src + d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return Tensor({indices.size(), d}, std::move(out));
}

Tensor Dataset::all_rows(std::size_t modality) const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return rows(modality, idx);
}

Dataset Dataset::select_modality(std::size_t modality) const {
  if (modality >= dims.size()) {
    throw InputError("modality index " + std::to_string(modality) +
                     " out of range");
  }
  Dataset out;
  out.dims = {dims[modality]};
  out.num_classes = num_classes;
  out.features = {features[modality]};
  out.labels = labels;
  out.split = split;
  return out;
}

DatasetSplits generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t modalities = config.modality_dims.size();
  const std::size_t classes = config.num_classes;

  // prototypes[m][c * dim + j], unit norm per class.
  std::vector<std::vector<double>> prototypes(modalities);
  for (std::size_t m = 0; m < modalities; ++m) {
    const std::size_t d = config.modality_dims[m];
    prototypes[m].resize(classes * d);
    for (std::size_t c = 0; c < classes; ++c) {
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double v = normal(rng);
        prototypes[m][c * d + j] = v;
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < d; ++j) prototypes[m][c * d + j] /= norm;
    }
  }

  auto make_split = [&](std::size_t n, Split split) {
    Dataset ds;
    ds.dims = config.modality_dims;
    ds.num_classes = classes;
    ds.split = split;
    ds.features.resize(modalities);
    for (std::size_t m = 0; m < modalities; ++m) {
      ds.features[m].resize(n * config.modality_dims[m]);
    }
    ds.labels.resize(n);
    std::uniform_int_distribution<std::size_t> pick_class(0, classes - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = pick_class(rng);
      for (std::size_t m = 0; m < modalities; ++m) {
        const std::size_t d = config.modality_dims[m];
        for (std::size_t j = 0; j < d; ++j) {
          const double x = config.signal[m] * prototypes[m][y * d + j] +
                           config.noise[m] * normal(rng);
          ds.features[m][i * d + j] = static_cast<float>(x);
        }
      }
      std::size_t label = y;
      if (config.label_noise > 0.0 && unit(rng) < config.label_noise) {
        label = pick_class(rng);
      }
      ds.labels[i] = label;
    }
    return ds;
  };

  DatasetSplits splits;
  splits.train = make_split(config.train_samples, Split::kTrain);
  splits.val = make_split(config.val_samples, Split::kVal);
  return splits;
}

void save_feature_file(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  binary::write_magic(out, kDataMagic);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.num_modalities()));
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.num_classes));
  binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(dataset.size()));
  for (std::size_t d : dataset.dims) {
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& block : dataset.features) {
    for (float v : block) binary::write<float>(out, v);
  }
  for (std::size_t y : dataset.labels) {
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(y));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset load_feature_file(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  binary::expect_magic(in, kDataMagic);
  const auto modalities = binary::read<std::uint32_t>(in, "modality count");
  const auto classes = binary::read<std::uint32_t>(in, "class count");
  const auto n = binary::read<std::uint64_t>(in, "sample count");
  if (modalities == 0 || modalities > kMaxModalities) {
    throw FormatError("implausible modality count " + std::to_string(modalities));
  }
  Dataset ds;
  ds.num_classes = classes;
  ds.split = split;
  for (std::uint32_t m = 0; m < modalities; ++m) {
    const auto d = binary::read<std::uint32_t>(in, "modality width");
    if (d == 0 || d > kMaxWidth) {
      throw FormatError("implausible modality width " + std::to_string(d));
    }
    ds.dims.push_back(d);
  }

  // Reject sizes the file cannot possibly hold before allocating.
  const auto header_end = in.tellg();
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(header_end);
  std::uint64_t row_bytes = 4;
  for (std::size_t d : ds.dims) row_bytes += 4 * d;
  const auto payload = file_size - static_cast<std::uint64_t>(header_end);
  if (n != 0 && payload / row_bytes < n) {
    throw FormatError("truncated file: header promises " + std::to_string(n) +
                      " rows");
  }

  ds.features.resize(modalities);
  for (std::uint32_t m = 0; m < modalities; ++m) {
    ds.features[m].resize(n * ds.dims[m]);
    for (float& v : ds.features[m]) v = binary::read<float>(in, "features");
  }
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = binary::read<std::uint32_t>(in, "labels");
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after labels");
  }
  for (const auto& block : ds.features) {
    for (float v : block) {
      if (!std::isfinite(v)) throw DataError("non-finite feature value");
    }
  }
  ds.validate();
  return ds;
}

Dataset load_feature_csv(const std::filesystem::path& path,
                         std::size_t num_classes, Split split) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV " + path.string());

  // Header: label, then m<modality>_<index> columns grouped by modality.
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header.front() != "label") {
    throw FormatError("CSV header must start with 'label'");
  }
  Dataset ds;
  ds.split = split;
  std::vector<std::size_t> column_modality;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string& h = header[c];
    const auto underscore = h.find('_');
    std::size_t m = 0;
    std::size_t j = 0;
    if (h.size() < 4 || h[0] != 'm' || underscore == std::string::npos ||
        std::from_chars(h.data() + 1, h.data() + underscore, m).ec != std::errc() ||
        std::from_chars(h.data() + underscore + 1, h.data() + h.size(), j).ec !=
            std::errc()) {
      throw FormatError("bad CSV column name '" + h + "'");
    }
    if (m == ds.dims.size()) ds.dims.push_back(0);
    if (m + 1 != ds.dims.size() || j != ds.dims[m]) {
      throw FormatError("CSV columns must be m<k>_<i> in order, got '" + h + "'");
    }
    ++ds.dims[m];
    column_modality.push_back(m);
  }
  if (ds.dims.empty()) throw FormatError("CSV has no feature columns");
  ds.features.resize(ds.dims.size());

  std::size_t line_no = 1;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= header.size()) {
        throw FormatError("line " + std::to_string(line_no) + ": too many cells");
      }
      try {
        std::size_t used = 0;
        if (col == 0) {
          const long y = std::stol(cell, &used);
          if (y < 0) throw DataError("negative label");
          ds.labels.push_back(static_cast<std::size_t>(y));
          max_label = std::max(max_label, ds.labels.back());
        } else {
          const float v = std::stof(cell, &used);
          ds.features[column_modality[col - 1]].push_back(v);
        }
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::logic_error&) {
        throw FormatError("line " + std::to_string(line_no) + ": bad value '" +
                          cell + "'");
      }
      ++col;
    }
    if (col != header.size()) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " cells");
    }
  }
  ds.num_classes = num_classes ? num_classes : max_label + 1;
  ds.validate();
  return ds;
}

MultimodalBatch make_batch(const Dataset& dataset,
                           std::span<const std::size_t> indices) {
  MultimodalBatch batch;
  batch.indices.assign(indices.begin(), indices.end());
  for (std::size_t m = 0; m < dataset.num_modalities(); ++m) {
    batch.inputs.push_back(dataset.rows(m, indices));
  }
  batch.labels.reserve(indices.size());
  for (std::size_t i : indices) batch.labels.push_back(dataset.labels.at(i));
  return batch;
}

std::vector<MultimodalBatch> batches(const Dataset& dataset,
                                     std::size_t batch_size,
                                     std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw InputError("batch size must be >= 1");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<MultimodalBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(
        dataset, std::span<const std::size_t>(order.data() + start, end - start)));
  }
  return out;
}

}  // namespace amrlab
