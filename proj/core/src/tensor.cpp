#include "amrlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "amrlab/errors.hpp"

namespace amrlab {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(data))) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
  }
  if (shape_numel(shape_) != data_->size()) {
    throw DimensionError("tensor of shape " + shape_string(shape_) + " given " +
                         std::to_string(data_->size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::ones(Shape shape) { return filled(std::move(shape), 1.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  }
  return (*data_)[0];
}

double Tensor::operator[](std::size_t flat_index) const {
  return (*data_)[flat_index];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return (*data_)[row * shape_[1] + col];
}

std::span<double> Tensor::mutable_data() {
  if (attached()) throw UsageError("mutable_data() on a graph-attached tensor");
  if (!data_) return {};
  if (data_.use_count() > 1) {
    data_ = std::make_shared<std::vector<double>>(*data_);
  }
  return {data_->data(), data_->size()};
}

Tensor Tensor::detach() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

bool Tensor::identical(const Tensor& other) const {
  if (shape_ != other.shape_ || numel() != other.numel()) return false;
  if (numel() == 0) return true;
  return std::memcmp(data_->data(), other.data_->data(),
                     numel() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// Graph

Tensor Graph::variable(const Tensor& value) {
  if (!value.defined()) throw UsageError("variable() of an undefined tensor");
  Tensor out = value.detach();
  out.graph_ = this;
  out.node_ = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{});
  return out;
}

Graph::RecordingScope::RecordingScope(Graph& graph, bool recording)
    : graph_(graph), previous_(graph.recording_) {
  graph_.recording_ = recording;
}

Graph::RecordingScope::~RecordingScope() { graph_.recording_ = previous_; }

Tensor Graph::record(Tensor value, std::vector<Tensor> inputs,
                     BackwardFn backward) {
  value.graph_ = this;
  value.node_ = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{std::move(inputs), std::move(backward)});
  return value;
}

std::vector<Tensor> backward(const Tensor& root, std::span<const Tensor> wrt,
                             bool create_graph) {
  if (root.numel() != 1) {
    throw UsageError("backward() needs a scalar root, got shape " +
                     shape_string(root.shape()));
  }
  std::vector<Tensor> result;
  result.reserve(wrt.size());
  Graph* graph = root.graph();
  if (!root.attached()) {
    for (const Tensor& w : wrt) result.push_back(Tensor::zeros(w.shape()));
    return result;
  }

  const auto root_id = static_cast<std::size_t>(root.node());
  // A node is needed when it is a requested tensor or feeds one.
  std::vector<bool> needed(root_id + 1, false);
  for (const Tensor& w : wrt) {
    if (w.graph() == graph && w.attached() &&
        static_cast<std::size_t>(w.node()) <= root_id) {
      needed[static_cast<std::size_t>(w.node())] = true;
    }
  }
  for (std::size_t id = 0; id <= root_id; ++id) {
    if (needed[id]) continue;
    for (const Tensor& in : graph->nodes_[id].inputs) {
      if (in.attached() && needed[static_cast<std::size_t>(in.node())]) {
        needed[id] = true;
        break;
      }
    }
  }

  std::vector<Tensor> grads(root_id + 1);
  if (needed[root_id]) grads[root_id] = Tensor::ones(root.shape());

  Graph::RecordingScope scope(*graph, create_graph);
  for (std::size_t id = root_id + 1; id-- > 0;) {
    if (!grads[id].defined()) continue;
    // nodes_ is a deque, so this reference survives nodes appended below.
    const Graph::Node& node = graph->nodes_[id];
    if (!node.backward) continue;
    std::vector<bool> input_needed(node.inputs.size(), false);
    bool any = false;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const Tensor& in = node.inputs[k];
      input_needed[k] = in.attached() && in.graph() == graph &&
                        needed[static_cast<std::size_t>(in.node())];
      any = any || input_needed[k];
    }
    if (!any) continue;
    std::vector<Tensor> input_grads = node.backward(grads[id], input_needed);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (!input_needed[k] || !input_grads[k].defined()) continue;
      const auto in_id = static_cast<std::size_t>(node.inputs[k].node());
      grads[in_id] = grads[in_id].defined() ? add(grads[in_id], input_grads[k])
                                            : input_grads[k];
    }
  }

  for (const Tensor& w : wrt) {
    if (w.graph() == graph && w.attached() &&
        static_cast<std::size_t>(w.node()) <= root_id &&
        grads[static_cast<std::size_t>(w.node())].defined()) {
      result.push_back(grads[static_cast<std::size_t>(w.node())]);
    } else {
      result.push_back(Tensor::zeros(w.shape()));
    }
  }
  return result;
}

std::vector<Tensor> backward(const Tensor& root,
                             std::initializer_list<Tensor> wrt,
                             bool create_graph) {
  return backward(root, std::span<const Tensor>(wrt.begin(), wrt.size()),
                  create_graph);
}

// ---------------------------------------------------------------------------
// Operation helpers

namespace {

Graph* recording_graph(std::initializer_list<const Tensor*> operands) {
  Graph* graph = nullptr;
  for (const Tensor* t : operands) {
    if (!t->attached()) continue;
    if (graph && graph != t->graph()) {
      throw UsageError("operands belong to different graphs");
    }
    graph = t->graph();
  }
  return graph && graph->recording() ? graph : nullptr;
}

Graph* recording_graph(std::span<const Tensor> operands) {
  Graph* graph = nullptr;
  for (const Tensor& t : operands) {
    if (!t.attached()) continue;
    if (graph && graph != t.graph()) {
      throw UsageError("operands belong to different graphs");
    }
    graph = t.graph();
  }
  return graph && graph->recording() ? graph : nullptr;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined operand");
}

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " +
                         shape_string(t.shape()));
  }
}

// Wraps a freshly computed value as a node (when recording) or constant.
Tensor finish(Graph* graph, Shape shape, std::vector<double> values,
              const char* op, std::vector<Tensor> inputs, BackwardFn backward) {
  check_finite(values, op);
  Tensor out(std::move(shape), std::move(values));
  if (!graph) return out;
  return graph->record(std::move(out), std::move(inputs), std::move(backward));
}

template <typename F>
std::vector<double> map_values(const Tensor& t, F f) {
  std::vector<double> out(t.numel());
  auto in = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return out;
}

template <typename F>
std::vector<double> zip_values(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t check_axis(const Tensor& t, std::size_t axis, const char* op) {
  require_defined(t, op);
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": invalid axis " +
                         std::to_string(axis) + " for shape " +
                         shape_string(t.shape()));
  }
  return axis;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

Tensor sign_of(const Tensor& t) {
  return Tensor(t.shape(), map_values(t, [](double v) {
                  return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                }));
}

Tensor flatten(const Tensor& t) { return reshape(t, {t.numel()}); }

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = x[i * k + p];
      if (s == 0.0) continue;
      const double* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return finish(recording_graph({&a, &b}), {m, n}, std::move(out), "matmul",
                {a, b}, [a, b](const Tensor& g, const std::vector<bool>& need) {
                  std::vector<Tensor> grads(2);
                  if (need[0]) grads[0] = matmul(g, transpose(b));
                  if (need[1]) grads[1] = matmul(transpose(a), g);
                  return grads;
                });
}

Tensor transpose(const Tensor& t) {
  require_matrix(t, "transpose");
  const std::size_t r = t.dim(0);
  const std::size_t c = t.dim(1);
  std::vector<double> out(r * c);
  auto in = t.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  }
  return finish(recording_graph({&t}), {c, r}, std::move(out), "transpose",
                {t}, [](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{transpose(g)};
                });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return finish(recording_graph({&a, &b}), a.shape(),
                zip_values(a, b, std::plus<>()), "add", {a, b},
                [](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{g, g};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return finish(recording_graph({&a, &b}), a.shape(),
                zip_values(a, b, std::minus<>()), "sub", {a, b},
                [](const Tensor& g, const std::vector<bool>& need) {
                  std::vector<Tensor> grads(2);
                  grads[0] = g;
                  if (need[1]) grads[1] = neg(g);
                  return grads;
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return finish(recording_graph({&a, &b}), a.shape(),
                zip_values(a, b, std::multiplies<>()), "mul", {a, b},
                [a, b](const Tensor& g, const std::vector<bool>& need) {
                  std::vector<Tensor> grads(2);
                  if (need[0]) grads[0] = mul(g, b);
                  if (need[1]) grads[1] = mul(g, a);
                  return grads;
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  for (double v : b.data()) {
    if (v == 0.0) throw NumericError("div: division by zero");
  }
  Graph* graph = recording_graph({&a, &b});
  auto values = zip_values(a, b, std::divides<>());
  check_finite(values, "div");
  Tensor out(a.shape(), std::move(values));
  if (!graph) return out;
  // The closure needs the recorded output, so record it in two steps.
  auto self = std::make_shared<Tensor>();
  Tensor recorded = graph->record(
      out, {a, b}, [b, self](const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> grads(2);
        const Tensor g_over_b = div(g, b);
        if (need[0]) grads[0] = g_over_b;
        if (need[1]) grads[1] = neg(mul(g_over_b, *self));
        return grads;
      });
  *self = recorded;
  return recorded;
}

Tensor neg(const Tensor& t) { return scale(t, -1.0); }

Tensor scale(const Tensor& t, double factor) {
  require_defined(t, "scale");
  return finish(recording_graph({&t}), t.shape(),
                map_values(t, [factor](double v) { return v * factor; }),
                "scale", {t},
                [factor](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{scale(g, factor)};
                });
}

Tensor abs(const Tensor& t) {
  require_defined(t, "abs");
  return finish(recording_graph({&t}), t.shape(),
                map_values(t, [](double v) { return std::fabs(v); }), "abs",
                {t}, [t](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, sign_of(t))};
                });
}

Tensor relu(const Tensor& t) {
  require_defined(t, "relu");
  return finish(recording_graph({&t}), t.shape(),
                map_values(t, [](double v) { return v > 0.0 ? v : 0.0; }),
                "relu", {t}, [t](const Tensor& g, const std::vector<bool>&) {
                  Tensor step(t.shape(), map_values(t, [](double v) {
                                return v > 0.0 ? 1.0 : 0.0;
                              }));
                  return std::vector<Tensor>{mul(g, step)};
                });
}

Tensor exp(const Tensor& t) {
  require_defined(t, "exp");
  Graph* graph = recording_graph({&t});
  auto values = map_values(t, [](double v) { return std::exp(v); });
  check_finite(values, "exp");
  Tensor out(t.shape(), std::move(values));
  if (!graph) return out;
  auto self = std::make_shared<Tensor>();
  Tensor recorded = graph->record(
      out, {t}, [self](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{mul(g, *self)};
      });
  *self = recorded;
  return recorded;
}

Tensor log(const Tensor& t) {
  require_defined(t, "log");
  for (double v : t.data()) {
    if (!(v > 0.0)) throw NumericError("log of a non-positive value");
  }
  return finish(recording_graph({&t}), t.shape(),
                map_values(t, [](double v) { return std::log(v); }), "log",
                {t}, [t](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{div(g, t)};
                });
}

Tensor safe_reciprocal(const Tensor& t) {
  require_defined(t, "safe_reciprocal");
  Graph* graph = recording_graph({&t});
  auto values =
      map_values(t, [](double v) { return v == 0.0 ? 0.0 : 1.0 / v; });
  check_finite(values, "safe_reciprocal");
  Tensor out(t.shape(), std::move(values));
  if (!graph) return out;
  auto self = std::make_shared<Tensor>();
  Tensor recorded = graph->record(
      out, {t}, [self](const Tensor& g, const std::vector<bool>&) {
        // d(1/x) = -1/x^2 = -(1/x)^2, which is 0 wherever 1/x was clamped.
        return std::vector<Tensor>{neg(mul(g, mul(*self, *self)))};
      });
  *self = recorded;
  return recorded;
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& t, Shape shape) {
  require_defined(t, "reshape");
  if (shape_numel(shape) != t.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(t.shape()) +
                         " as " + shape_string(shape));
  }
  const Shape original = t.shape();
  std::vector<double> values(t.data().begin(), t.data().end());
  return finish(recording_graph({&t}), std::move(shape), std::move(values),
                "reshape", {t},
                [original](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{reshape(g, original)};
                });
}

Tensor expand(const Tensor& t, std::size_t axis, std::size_t count) {
  require_defined(t, "expand");
  if (axis > t.rank()) {
    throw DimensionError("expand: invalid axis " + std::to_string(axis));
  }
  if (count == 0) throw DimensionError("expand: zero extent");
  Shape shape = t.shape();
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  const AxisSplit s = split_axis(shape, axis);
  std::vector<double> out(shape_numel(shape));
  auto in = t.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      std::copy_n(in.data() + o * s.inner, s.inner,
                  out.data() + (o * s.extent + e) * s.inner);
    }
  }
  return finish(recording_graph({&t}), std::move(shape), std::move(out),
                "expand", {t}, [axis](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{sum(g, axis)};
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t rows = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row counts differ");
    }
    offsets.push_back(total);
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto in = parts[k].data();
    const std::size_t c = parts[k].dim(1);
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy_n(in.data() + i * c, c, out.data() + i * total + offsets[k]);
    }
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.dim(1));
  return finish(recording_graph(parts), {rows, total}, std::move(out),
                "concat_cols", std::move(inputs),
                [offsets, widths](const Tensor& g, const std::vector<bool>& need) {
                  std::vector<Tensor> grads(offsets.size());
                  for (std::size_t k = 0; k < offsets.size(); ++k) {
                    if (need[k]) {
                      grads[k] = slice_cols(g, offsets[k], offsets[k] + widths[k]);
                    }
                  }
                  return grads;
                });
}

Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t end) {
  require_matrix(t, "slice_cols");
  const std::size_t rows = t.dim(0);
  const std::size_t cols = t.dim(1);
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: bad range [" + std::to_string(begin) +
                         ", " + std::to_string(end) + ") of " +
                         std::to_string(cols) + " columns");
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  auto in = t.data();
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(in.data() + i * cols + begin, w, out.data() + i * w);
  }
  return finish(recording_graph({&t}), {rows, w}, std::move(out), "slice_cols",
                {t}, [begin, cols](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{pad_cols(g, begin, cols)};
                });
}

Tensor pad_cols(const Tensor& t, std::size_t offset, std::size_t total_cols) {
  require_matrix(t, "pad_cols");
  const std::size_t rows = t.dim(0);
  const std::size_t w = t.dim(1);
  if (offset + w > total_cols) throw DimensionError("pad_cols: out of range");
  std::vector<double> out(rows * total_cols, 0.0);
  auto in = t.data();
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(in.data() + i * w, w, out.data() + i * total_cols + offset);
  }
  return finish(recording_graph({&t}), {rows, total_cols}, std::move(out),
                "pad_cols", {t},
                [offset, w](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{slice_cols(g, offset, offset + w)};
                });
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  if (labels.empty()) throw InputError("one_hot: empty label list");
  std::vector<double> out(labels.size() * num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw InputError("label " + std::to_string(labels[i]) +
                       " out of range for " + std::to_string(num_classes) +
                       " classes");
    }
    out[i * num_classes + labels[i]] = 1.0;
  }
  return Tensor({labels.size(), num_classes}, std::move(out));
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& t, std::optional<std::size_t> axis) {
  if (!axis) return sum(flatten(t), 0);
  check_axis(t, *axis, "sum");
  const AxisSplit s = split_axis(t.shape(), *axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto in = t.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = in.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  const std::size_t ax = *axis;
  const std::size_t extent = s.extent;
  return finish(recording_graph({&t}), drop_axis(t.shape(), ax), std::move(out),
                "sum", {t},
                [ax, extent](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{expand(g, ax, extent)};
                });
}

Tensor mean(const Tensor& t, std::optional<std::size_t> axis) {
  require_defined(t, "mean");
  const std::size_t n = axis ? t.dim(check_axis(t, *axis, "mean")) : t.numel();
  return scale(sum(t, axis), 1.0 / static_cast<double>(n));
}

Tensor l2_norm(const Tensor& t, std::optional<std::size_t> axis) {
  if (!axis) return l2_norm(flatten(t), 0);
  check_axis(t, *axis, "l2_norm");
  const AxisSplit s = split_axis(t.shape(), *axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto in = t.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = in.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i] * src[i];
    }
  }
  for (double& v : out) v = std::sqrt(v);
  Graph* graph = recording_graph({&t});
  check_finite(out, "l2_norm");
  Tensor value(drop_axis(t.shape(), *axis), std::move(out));
  if (!graph) return value;
  const std::size_t ax = *axis;
  const std::size_t extent = s.extent;
  auto self = std::make_shared<Tensor>();
  Tensor recorded = graph->record(
      value, {t},
      [t, ax, extent, self](const Tensor& g, const std::vector<bool>&) {
        // t / |t|, defined as 0 where |t| = 0.
        return std::vector<Tensor>{
            mul(t, expand(mul(g, safe_reciprocal(*self)), ax, extent))};
      });
  *self = recorded;
  return recorded;
}

MaxResult max_with_argmax(const Tensor& t, std::size_t axis) {
  check_axis(t, axis, "max_with_argmax");
  const AxisSplit s = split_axis(t.shape(), axis);
  auto in = t.data();
  MaxResult result;
  result.indices.assign(s.outer * s.inner, 0);
  std::vector<double> mask(t.numel(), 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double best_value = in[o * s.extent * s.inner + i];
      for (std::size_t e = 1; e < s.extent; ++e) {
        const double v = in[(o * s.extent + e) * s.inner + i];
        if (v > best_value) {
          best_value = v;
          best = e;
        }
      }
      result.indices[o * s.inner + i] = best;
      mask[(o * s.extent + best) * s.inner + i] = 1.0;
    }
  }
  // Selecting through a constant mask gives the frozen-argmax gradient.
  result.values = sum(mul(t, Tensor(t.shape(), std::move(mask))), axis);
  return result;
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor log_softmax(const Tensor& logits) {
  require_matrix(logits, "log_softmax");
  const std::size_t classes = logits.dim(1);
  // Row max as a constant: log-softmax is invariant to the shift.
  const Tensor row_max = max_with_argmax(logits.detach(), 1).values;
  const Tensor shifted = sub(logits, expand(row_max, 1, classes));
  const Tensor log_sum = log(sum(exp(shifted), 1));
  return sub(shifted, expand(log_sum, 1, classes));
}

Tensor softmax(const Tensor& logits) { return exp(log_softmax(logits)); }

Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const std::size_t> labels) {
  require_matrix(logits, "softmax_cross_entropy");
  if (labels.size() != logits.dim(0)) {
    throw InputError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.dim(0)) + " rows");
  }
  const Tensor target = one_hot(labels, logits.dim(1));
  return neg(mean(sum(mul(log_softmax(logits), target), 1)));
}

// ---------------------------------------------------------------------------

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& fn,
                                  const Tensor& x, double step) {
  if (!(step > 0.0)) throw InputError("finite difference step must be > 0");
  const Tensor base = x.detach();
  std::vector<double> grad(base.numel());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    Tensor plus = base;
    Tensor minus = base;
    plus.mutable_data()[i] += step;
    minus.mutable_data()[i] -= step;
    grad[i] = (fn(plus) - fn(minus)) / (2.0 * step);
  }
  return Tensor(base.shape(), std::move(grad));
}

}  // namespace amrlab
