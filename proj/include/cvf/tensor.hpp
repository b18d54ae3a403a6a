#pragma once

// Dense float64 tensors with a recorded reverse-mode graph.
//
// Every op returns a new Tensor whose node keeps shared handles to its inputs
// and a closure that pushes the output gradient back into them. The graph is
// therefore a DAG owned by the tensors that reference it; `trace()` exposes it
// in topological order and `backward()` walks that order once in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvf {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class GradSink;

/// Pushes the output gradient into the inputs of one recorded op.
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access; intended for leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat) const { return values()[flat]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  std::uint64_t id() const;
  const std::string& op() const;

  /// Constant copy sharing no graph history.
  Tensor detach() const;

  /// Low-level constructor for ops. `inputs` are recorded only when at least
  /// one of them requires a gradient; otherwise the result is a constant.
  static Tensor make_op(std::string op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> inputs, BackwardFn backward);

  detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Gives an op's backward closure access to its inputs' gradient buffers.
class GradSink {
 public:
  explicit GradSink(std::span<detail::Node* const> inputs) : inputs_(inputs) {}
  /// True when input `i` participates in differentiation.
  bool wants(std::size_t i) const;
  /// Gradient buffer of input `i`, zero-filled on first access.
  std::span<double> grad(std::size_t i);
  std::span<const double> input_values(std::size_t i) const;

 private:
  std::span<detail::Node* const> inputs_;
};

struct GraphRecord {
  std::uint64_t id = 0;
  std::string op;
  std::vector<std::uint64_t> inputs;
};

/// Nodes reachable from `root` that take part in differentiation, inputs
/// before consumers.
std::vector<GraphRecord> trace(const Tensor& root);

/// Accumulates d(loss)/d(leaf) into every requires-grad leaf reachable from
/// `loss`. Throws ShapeError unless `loss` holds exactly one value.
void backward(const Tensor& loss);

// Elementwise. `mul` also accepts b of shape [1,H,W] against a of shape
// [C,H,W] and broadcasts over channels.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Same values, new shape of equal element count.
Tensor reshape(const Tensor& x, Shape shape);

/// out[i] = x[indices[i]] over flat indices; the result has `shape`.
Tensor gather(const Tensor& x, std::span<const std::size_t> indices, Shape shape);

/// [C1,H,W] ++ [C2,H,W] -> [C1+C2,H,W].
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Row-wise concatenation of [N,D_k] matrices -> [N, sum D_k].
Tensor concat_columns(std::span<const Tensor> parts);

/// Stacks [N_k,D] matrices -> [sum N_k, D].
Tensor concat_rows(std::span<const Tensor> parts);

/// x[N,D] * W[D,E] + b[E].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Columnwise maximum of x[N,D]; N >= 1.
Tensor max_over_set(const Tensor& x);

/// Columnwise maximum of the rows of x[N,D] grouped by `segment[i]`. Rows with
/// a negative segment id are ignored; segments with no rows yield zeros.
Tensor segment_max(const Tensor& x, std::span<const std::int64_t> segment,
                   std::size_t num_segments);

/// Sums rows of x[N,C] into cells of a [C, H, W] grid; `cell[i]` is the flat
/// index iy*W + ix of row i, negative to drop the row.
Tensor scatter_to_grid(const Tensor& x, std::span<const std::int64_t> cell, std::size_t height,
                       std::size_t width);

/// Averages rows of x[N,C] into a [C, H, W] grid over the rows that target
/// each cell; cells with no rows are zero.
Tensor scatter_mean_to_grid(const Tensor& x, std::span<const std::int64_t> cell,
                            std::size_t height, std::size_t width);

/// input[C_in,H,W], weight[C_out,C_in,k,k], bias[C_out].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding);

}  // namespace cvf
