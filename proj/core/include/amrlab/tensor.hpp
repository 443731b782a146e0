#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace amrlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Graph;

// Dense row-major double tensor. Values are immutable and shared between
// copies; a tensor may additionally carry a handle to a node of a Graph, in
// which case it participates in differentiation. Graph-attached tensors must
// not outlive their Graph.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const;
  double item() const;
  double operator[](std::size_t flat_index) const;
  double at(std::size_t row, std::size_t col) const;

  // Copy-on-write access for optimizers. Only valid on constants.
  std::span<double> mutable_data();

  Graph* graph() const { return graph_; }
  std::int64_t node() const { return node_; }
  bool attached() const { return graph_ != nullptr && node_ >= 0; }

  // Same values, no graph handle.
  Tensor detach() const;

  // Bit-level equality of shape and values.
  bool identical(const Tensor& other) const;

 private:
  friend class Graph;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Graph* graph_ = nullptr;
  std::int64_t node_ = -1;
};

// Computes gradients for each input of a node given the gradient flowing
// into its output. `needed[k]` says whether input k lies on a path to a
// requested gradient; entries for unneeded inputs may be left undefined.
// When the graph is recording, the closure's tensor operations are
// themselves recorded, which is what makes higher-order gradients possible.
using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& grad_output, const std::vector<bool>& needed)>;

// Tape of differentiable operations. Nodes are appended in execution order,
// so every input of a node precedes it. A Graph is single-threaded.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf node holding a copy of `value`'s data.
  Tensor variable(const Tensor& value);

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Disables or enables recording for a scope.
  class RecordingScope {
   public:
    RecordingScope(Graph& graph, bool recording);
    ~RecordingScope();
    RecordingScope(const RecordingScope&) = delete;
    RecordingScope& operator=(const RecordingScope&) = delete;

   private:
    Graph& graph_;
    bool previous_;
  };

  // Used by operation implementations.
  Tensor record(Tensor value, std::vector<Tensor> inputs, BackwardFn backward);

 private:
  friend std::vector<Tensor> backward(const Tensor& root,
                                      std::span<const Tensor> wrt,
                                      bool create_graph);

  struct Node {
    std::vector<Tensor> inputs;
    BackwardFn backward;  // empty for leaves
  };

  std::deque<Node> nodes_;
  bool recording_ = true;
};

// Gradient of a scalar `root` with respect to each tensor in `wrt`. Tensors
// that `root` does not depend on get zeros. With create_graph set, the
// returned gradients are graph nodes and can be differentiated again.
std::vector<Tensor> backward(const Tensor& root, std::span<const Tensor> wrt,
                             bool create_graph = false);
std::vector<Tensor> backward(const Tensor& root,
                             std::initializer_list<Tensor> wrt,
                             bool create_graph = false);

// ---------------------------------------------------------------------------
// Operations. Each returns a graph node when any operand is attached to a
// recording graph, a constant otherwise. Shape violations throw
// DimensionError; a non-finite result from finite operands throws
// NumericError.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& t);
Tensor scale(const Tensor& t, double factor);
Tensor abs(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
// 1/x, with 0 mapped to 0 (and derivative 0 there).
Tensor safe_reciprocal(const Tensor& t);

// Reductions remove `axis`; without an axis the whole tensor reduces to a
// rank-0 scalar.
Tensor sum(const Tensor& t, std::optional<std::size_t> axis = std::nullopt);
Tensor mean(const Tensor& t, std::optional<std::size_t> axis = std::nullopt);
Tensor l2_norm(const Tensor& t, std::optional<std::size_t> axis = std::nullopt);

struct MaxResult {
  Tensor values;
  std::vector<std::size_t> indices;  // winning position along the axis
};
// The winning index is held constant under differentiation; ties go to the
// lowest index.
MaxResult max_with_argmax(const Tensor& t, std::size_t axis);

// Inserts `axis` with extent `count`, repeating values. Adjoint of sum.
Tensor expand(const Tensor& t, std::size_t axis, std::size_t count);
Tensor reshape(const Tensor& t, Shape shape);

// Column-wise concatenation of 2-D tensors with equal row counts.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t end);
// Embeds t as columns [offset, offset + cols) of a zero matrix.
Tensor pad_cols(const Tensor& t, std::size_t offset, std::size_t total_cols);

// Constant [labels.size() x num_classes] indicator matrix.
Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

Tensor log_softmax(const Tensor& logits);  // row-wise on [batch x C]
Tensor softmax(const Tensor& logits);
// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const std::size_t> labels);

// Central-difference gradient of a scalar function; test oracle.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& fn,
                                  const Tensor& x, double step);

}  // namespace amrlab
