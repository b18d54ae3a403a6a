#include "cvf/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace cvf {

namespace detail {

struct Node {
  std::uint64_t id = 0;
  std::string op;
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> next_node_id{1};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

std::shared_ptr<detail::Node> new_node(std::string op, Shape shape, std::vector<double> values,
                                       bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError(op + ": " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

// Reverse postorder DFS restricted to nodes that carry gradients.
std::vector<detail::Node*> topo_nodes(detail::Node* root) {
  std::vector<detail::Node*> order;
  if (root == nullptr || !root->requires_grad) return order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(shape_numel(shape), value);
  return Tensor(new_node("leaf", std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node("leaf", std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) throw ShapeError("dim: axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->values.size(); }

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return node_->inputs.empty(); }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

void Tensor::clear_grad() { node_->grad.clear(); }

std::uint64_t Tensor::id() const { return node_->id; }

const std::string& Tensor::op() const { return node_->op; }

Tensor Tensor::detach() const { return from(shape(), node_->values, false); }

Tensor Tensor::make_op(std::string op, Shape shape, std::vector<double> values,
                       std::vector<Tensor> inputs, BackwardFn backward) {
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(op), std::move(shape), std::move(values), any);
  if (any) {
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Graph traversal

bool GradSink::wants(std::size_t i) const { return inputs_[i]->requires_grad; }

std::span<double> GradSink::grad(std::size_t i) {
  auto* node = inputs_[i];
  if (node->grad.empty()) node->grad.assign(node->values.size(), 0.0);
  return node->grad;
}

std::span<const double> GradSink::input_values(std::size_t i) const {
  return inputs_[i]->values;
}

std::vector<GraphRecord> trace(const Tensor& root) {
  std::vector<GraphRecord> records;
  for (detail::Node* node : topo_nodes(root.node())) {
    GraphRecord rec{node->id, node->op, {}};
    for (const auto& in : node->inputs) {
      if (in->requires_grad) rec.inputs.push_back(in->id);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  auto order = topo_nodes(loss.node());
  if (order.empty()) return;
  // Interior nodes start from zero so repeated passes do not mix.
  for (detail::Node* node : order) {
    if (!node->inputs.empty()) node->grad.assign(node->values.size(), 0.0);
  }
  detail::Node* root = order.back();
  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->inputs.empty() || !node->backward) continue;
    std::vector<detail::Node*> inputs;
    inputs.reserve(node->inputs.size());
    for (auto& in : node->inputs) inputs.push_back(in.get());
    GradSink sink(inputs);
    node->backward(node->grad, sink);
  }
  // Interior buffers are not needed after the pass.
  for (detail::Node* node : order) {
    if (!node->inputs.empty() && node != root) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_op("add", a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, GradSink& sink) {
                           for (std::size_t k = 0; k < 2; ++k) {
                             if (!sink.wants(k)) continue;
                             auto gi = sink.grad(k);
                             for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                           }
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::make_op("sub", a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, GradSink& sink) {
                           if (sink.wants(0)) {
                             auto gi = sink.grad(0);
                             for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                           }
                           if (sink.wants(1)) {
                             auto gi = sink.grad(1);
                             for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
                           }
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.numel());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor::make_op("mul", a.shape(), std::move(out), {a, b},
                           [](std::span<const double> g, GradSink& sink) {
                             auto av = sink.input_values(0), bv = sink.input_values(1);
                             if (sink.wants(0)) {
                               auto ga = sink.grad(0);
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                             }
                             if (sink.wants(1)) {
                               auto gb = sink.grad(1);
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                             }
                           });
  }
  bool broadcast = a.rank() == 3 && b.rank() == 3 && b.dim(0) == 1 && a.dim(1) == b.dim(1) &&
                   a.dim(2) == b.dim(2);
  if (!broadcast) {
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " do not conform");
  }
  const std::size_t channels = a.dim(0), plane = a.dim(1) * a.dim(2);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = av[c * plane + p] * bv[p];
  }
  return Tensor::make_op(
      "mul_bcast", a.shape(), std::move(out), {a, b},
      [channels, plane](std::span<const double> g, GradSink& sink) {
        auto av = sink.input_values(0), bv = sink.input_values(1);
        if (sink.wants(0)) {
          auto ga = sink.grad(0);
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < plane; ++p) ga[c * plane + p] += g[c * plane + p] * bv[p];
        }
        if (sink.wants(1)) {
          auto gb = sink.grad(1);
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < plane; ++p) gb[p] += g[c * plane + p] * av[c * plane + p];
        }
      });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return Tensor::make_op("scale", a.shape(), std::move(out), {a},
                         [factor](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
                         });
}

Tensor add_scalar(const Tensor& a, double offset) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v += offset;
  return Tensor::make_op("add_scalar", a.shape(), std::move(out), {a},
                         [](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Split by sign so exp never overflows.
    if (xv[i] >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    } else {
      double e = std::exp(xv[i]);
      out[i] = e / (1.0 + e);
    }
  }
  auto saved = std::make_shared<std::vector<double>>(out);
  return Tensor::make_op("sigmoid", x.shape(), std::move(out), {x},
                         [saved](std::span<const double> g, GradSink& sink) {
                           auto gx = sink.grad(0);
                           const auto& s = *saved;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i] += g[i] * s[i] * (1.0 - s[i]);
                         });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0 ? xv[i] : 0.0;
  return Tensor::make_op("relu", x.shape(), std::move(out), {x},
                         [](std::span<const double> g, GradSink& sink) {
                           auto xv = sink.input_values(0);
                           auto gx = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (xv[i] > 0) gx[i] += g[i];
                         });
}

Tensor sum(const Tensor& x) {
  auto xv = x.values();
  double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return Tensor::make_op("sum", {1}, {total}, {x}, [](std::span<const double> g, GradSink& sink) {
    auto gx = sink.grad(0);
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return Tensor::make_op("reshape", std::move(shape), std::move(out), {x},
                         [](std::span<const double> g, GradSink& sink) {
                           auto gx = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

Tensor gather(const Tensor& x, std::span<const std::size_t> indices, Shape shape) {
  if (shape_numel(shape) != indices.size()) {
    throw ShapeError("gather: " + std::to_string(indices.size()) + " indices for shape " +
                     shape_str(shape));
  }
  auto xv = x.values();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= xv.size()) throw ShapeError("gather: index out of range");
    out[i] = xv[indices[i]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  return Tensor::make_op("gather", std::move(shape), std::move(out), {x},
                         [idx](std::span<const double> g, GradSink& sink) {
                           auto gx = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[(*idx)[i]] += g[i];
                         });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 3);
  require_rank("concat_channels", b, 3);
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const std::size_t split = a.numel();
  return Tensor::make_op("concat_channels", {a.dim(0) + b.dim(0), a.dim(1), a.dim(2)},
                         std::move(out), {a, b},
                         [split](std::span<const double> g, GradSink& sink) {
                           if (sink.wants(0)) {
                             auto ga = sink.grad(0);
                             for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
                           }
                           if (sink.wants(1)) {
                             auto gb = sink.grad(1);
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
                           }
                         });
}

Tensor concat_columns(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_columns: no operands");
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank("concat_columns", p, 2);
    if (p.dim(0) != rows) throw ShapeError("concat_columns: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.begin() + r * widths[k], widths[k], out.begin() + r * total + offset);
    offset += widths[k];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_op("concat_columns", {rows, total}, std::move(out), std::move(inputs),
                         [widths, rows, total](std::span<const double> g, GradSink& sink) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < widths.size(); ++k) {
                             if (sink.wants(k)) {
                               auto gk = sink.grad(k);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < widths[k]; ++c)
                                   gk[r * widths[k] + c] += g[r * total + offset + c];
                             }
                             offset += widths[k];
                           }
                         });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  require_rank("concat_rows", parts[0], 2);
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    require_rank("concat_rows", p, 2);
    if (p.dim(1) != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.numel());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_op("concat_rows", {rows, cols}, std::move(out), std::move(inputs),
                         [sizes](std::span<const double> g, GradSink& sink) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < sizes.size(); ++k) {
                             if (sink.wants(k)) {
                               auto gk = sink.grad(k);
                               for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += g[offset + i];
                             }
                             offset += sizes[k];
                           }
                         });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  require_rank("linear", bias, 1);
  const std::size_t n = x.dim(0), d = x.dim(1), e = weight.dim(1);
  if (weight.dim(0) != d || bias.dim(0) != e) {
    throw ShapeError("linear: x" + shape_str(x.shape()) + " W" + shape_str(weight.shape()) +
                     " b" + shape_str(bias.shape()));
  }
  std::vector<double> out(n * e);
  RowMap y(out.data(), n, e);
  y.noalias() = ConstRowMap(x.values().data(), n, d) * ConstRowMap(weight.values().data(), d, e);
  Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(), e);
  y.rowwise() += b;
  return Tensor::make_op(
      "linear", {n, e}, std::move(out), {x, weight, bias},
      [n, d, e](std::span<const double> g, GradSink& sink) {
        ConstRowMap gy(g.data(), n, e);
        if (sink.wants(0)) {
          RowMap gx(sink.grad(0).data(), n, d);
          gx.noalias() += gy * ConstRowMap(sink.input_values(1).data(), d, e).transpose();
        }
        if (sink.wants(1)) {
          RowMap gw(sink.grad(1).data(), d, e);
          gw.noalias() += ConstRowMap(sink.input_values(0).data(), n, d).transpose() * gy;
        }
        if (sink.wants(2)) {
          Eigen::Map<Eigen::RowVectorXd> gb(sink.grad(2).data(), e);
          gb += gy.colwise().sum();
        }
      });
}

Tensor segment_max(const Tensor& x, std::span<const std::int64_t> segment,
                   std::size_t num_segments) {
  require_rank("segment_max", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (segment.size() != n) throw ShapeError("segment_max: segment ids do not match rows");
  auto xv = x.values();
  // argmax row per (segment, column); first maximal row wins ties.
  auto arg = std::make_shared<std::vector<std::int64_t>>(num_segments * d, -1);
  std::vector<double> out(num_segments * d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (segment[r] < 0) continue;
    auto s = static_cast<std::size_t>(segment[r]);
    if (s >= num_segments) throw ShapeError("segment_max: segment id out of range");
    for (std::size_t c = 0; c < d; ++c) {
      auto& a = (*arg)[s * d + c];
      if (a < 0 || xv[r * d + c] > out[s * d + c]) {
        a = static_cast<std::int64_t>(r);
        out[s * d + c] = xv[r * d + c];
      }
    }
  }
  return Tensor::make_op("segment_max", {num_segments, d}, std::move(out), {x},
                         [arg, d](std::span<const double> g, GradSink& sink) {
                           auto gx = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             auto r = (*arg)[i];
                             if (r >= 0) gx[static_cast<std::size_t>(r) * d + i % d] += g[i];
                           }
                         });
}

Tensor max_over_set(const Tensor& x) {
  require_rank("max_over_set", x, 2);
  if (x.dim(0) == 0) throw ShapeError("max_over_set: empty set");
  std::vector<std::int64_t> seg(x.dim(0), 0);
  return reshape(segment_max(x, seg, 1), {x.dim(1)});
}

Tensor scatter_to_grid(const Tensor& x, std::span<const std::int64_t> cell, std::size_t height,
                       std::size_t width) {
  require_rank("scatter_to_grid", x, 2);
  const std::size_t n = x.dim(0), c = x.dim(1), plane = height * width;
  if (cell.size() != n) throw ShapeError("scatter_to_grid: cell ids do not match rows");
  auto xv = x.values();
  std::vector<double> out(c * plane, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (cell[r] < 0) continue;
    auto p = static_cast<std::size_t>(cell[r]);
    if (p >= plane) throw ShapeError("scatter_to_grid: cell out of range");
    for (std::size_t k = 0; k < c; ++k) out[k * plane + p] += xv[r * c + k];
  }
  auto cells = std::make_shared<std::vector<std::int64_t>>(cell.begin(), cell.end());
  return Tensor::make_op("scatter_to_grid", {c, height, width}, std::move(out), {x},
                         [cells, c, plane](std::span<const double> g, GradSink& sink) {
                           auto gx = sink.grad(0);
                           for (std::size_t r = 0; r < cells->size(); ++r) {
                             if ((*cells)[r] < 0) continue;
                             auto p = static_cast<std::size_t>((*cells)[r]);
                             for (std::size_t k = 0; k < c; ++k) gx[r * c + k] += g[k * plane + p];
                           }
                         });
}

Tensor scatter_mean_to_grid(const Tensor& x, std::span<const std::int64_t> cell,
                            std::size_t height, std::size_t width) {
  require_rank("scatter_mean_to_grid", x, 2);
  const std::size_t n = x.dim(0), c = x.dim(1), plane = height * width;
  if (cell.size() != n) throw ShapeError("scatter_mean_to_grid: cell ids do not match rows");
  std::vector<double> count(plane, 0.0);
  for (auto id : cell) {
    if (id < 0) continue;
    if (static_cast<std::size_t>(id) >= plane) throw ShapeError("scatter_mean_to_grid: cell out of range");
    count[static_cast<std::size_t>(id)] += 1.0;
  }
  auto xv = x.values();
  std::vector<double> out(c * plane, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (cell[r] < 0) continue;
    auto p = static_cast<std::size_t>(cell[r]);
    for (std::size_t k = 0; k < c; ++k) out[k * plane + p] += xv[r * c + k];
  }
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < plane; ++p)
      if (count[p] > 0) out[k * plane + p] /= count[p];
  auto cells = std::make_shared<std::vector<std::int64_t>>(cell.begin(), cell.end());
  auto counts = std::make_shared<std::vector<double>>(std::move(count));
  return Tensor::make_op("scatter_mean_to_grid", {c, height, width}, std::move(out), {x},
                         [cells, counts, c, plane](std::span<const double> g, GradSink& sink) {
                           auto gx = sink.grad(0);
                           for (std::size_t r = 0; r < cells->size(); ++r) {
                             if ((*cells)[r] < 0) continue;
                             auto p = static_cast<std::size_t>((*cells)[r]);
                             const double inv = 1.0 / (*counts)[p];
                             for (std::size_t k = 0; k < c; ++k) gx[r * c + k] += g[k * plane + p] * inv;
                           }
                         });
}

// ---------------------------------------------------------------------------
// Convolution as im2col + GEMM.

namespace {

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, h_out, w_out;
  int stride, pad;
  std::size_t cols() const { return h_out * w_out; }
  std::size_t rows() const { return c_in * k * k; }
};

void im2col(const ConvGeometry& g, const double* in, double* col) {
  const auto k = static_cast<long>(g.k);
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        double* row = col + ((ci * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          long iy = static_cast<long>(oy) * g.stride - g.pad + ky;
          double* dst = row + oy * g.w_out;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.w_out, 0.0);
            continue;
          }
          const double* src = in + (ci * g.h + iy) * g.w;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            long ix = static_cast<long>(ox) * g.stride - g.pad + kx;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* in_grad) {
  const auto k = static_cast<long>(g.k);
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        const double* row = col + ((ci * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          long iy = static_cast<long>(oy) * g.stride - g.pad + ky;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = in_grad + (ci * g.h + iy) * g.w;
          const double* src = row + oy * g.w_out;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            long ix = static_cast<long>(ox) * g.stride - g.pad + kx;
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  require_rank("conv2d", input, 3);
  require_rank("conv2d", weight, 4);
  require_rank("conv2d", bias, 1);
  if (weight.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(0)) +
                     " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square and odd, got " + shape_str(weight.shape()));
  }
  if (bias.dim(0) != weight.dim(0)) throw ShapeError("conv2d: bias length mismatch");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride or padding");
  ConvGeometry g{};
  g.c_in = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.c_out = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  const long span_h = static_cast<long>(g.h) + 2 * padding - static_cast<long>(g.k);
  const long span_w = static_cast<long>(g.w) + 2 * padding - static_cast<long>(g.k);
  if (span_h < 0 || span_w < 0) throw ShapeError("conv2d: kernel larger than padded input");
  g.h_out = static_cast<std::size_t>(span_h / stride + 1);
  g.w_out = static_cast<std::size_t>(span_w / stride + 1);

  auto col = std::make_shared<std::vector<double>>(g.rows() * g.cols());
  im2col(g, input.values().data(), col->data());
  std::vector<double> out(g.c_out * g.cols());
  RowMap y(out.data(), g.c_out, g.cols());
  y.noalias() = ConstRowMap(weight.values().data(), g.c_out, g.rows()) *
                ConstRowMap(col->data(), g.rows(), g.cols());
  Eigen::Map<const Eigen::VectorXd> b(bias.values().data(), g.c_out);
  y.colwise() += b;

  return Tensor::make_op(
      "conv2d", {g.c_out, g.h_out, g.w_out}, std::move(out), {input, weight, bias},
      [g, col](std::span<const double> grad_out, GradSink& sink) {
        ConstRowMap gy(grad_out.data(), g.c_out, g.cols());
        if (sink.wants(1)) {
          RowMap gw(sink.grad(1).data(), g.c_out, g.rows());
          gw.noalias() += gy * ConstRowMap(col->data(), g.rows(), g.cols()).transpose();
        }
        if (sink.wants(2)) {
          Eigen::Map<Eigen::VectorXd> gb(sink.grad(2).data(), g.c_out);
          gb += gy.rowwise().sum();
        }
        if (sink.wants(0)) {
          std::vector<double> gcol(g.rows() * g.cols());
          RowMap gc(gcol.data(), g.rows(), g.cols());
          gc.noalias() = ConstRowMap(sink.input_values(1).data(), g.c_out, g.rows()).transpose() * gy;
          col2im(g, gcol.data(), sink.grad(0).data());
        }
      });
}

}  // namespace cvf
