#include "cvf/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>

namespace cvf {

namespace {

std::atomic<std::size_t> clamp_count{0};

double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }
double smooth_l1_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0); }

void require_residual_rows(const char* op, const Tensor& pred, std::size_t rows) {
  if (pred.rank() != 2 || pred.dim(1) != 7 || pred.dim(0) != rows) {
    throw ShapeError(std::string(op) + ": expected [" + std::to_string(rows) + ",7], got " +
                     shape_str(pred.shape()));
  }
}

double binary_entropy(double t) {
  double h = 0;
  if (t > 0) h -= t * std::log(t);
  if (t < 1) h -= (1 - t) * std::log1p(-t);
  return h;
}

}  // namespace

std::size_t focal_clamp_warnings() { return clamp_count.load(); }

Tensor focal_loss(const Tensor& prob, std::span<const std::int8_t> label, const LossWeights& w) {
  if (prob.numel() != label.size()) throw ShapeError("focal_loss: label count mismatch");
  auto p = prob.values();
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (label[i] < 0) continue;
    ++count;
    const double q = label[i] == 1 ? p[i] : 1.0 - p[i];
    if (q < kProbEpsilon) clamp_count.fetch_add(1, std::memory_order_relaxed);
    const double a = label[i] == 1 ? w.alpha : 1.0 - w.alpha;
    total += -a * std::pow(1.0 - q, w.gamma) * std::log(std::max(q, kProbEpsilon));
  }
  const double norm = count ? 1.0 / static_cast<double>(count) : 0.0;
  auto labels = std::make_shared<std::vector<std::int8_t>>(label.begin(), label.end());
  return Tensor::make_op(
      "focal_loss", {1}, {total * norm}, {prob},
      [labels, norm, w](std::span<const double> g, GradSink& sink) {
        auto p = sink.input_values(0);
        auto gp = sink.grad(0);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const auto lab = (*labels)[i];
          if (lab < 0) continue;
          const double q = lab == 1 ? p[i] : 1.0 - p[i];
          const double a = lab == 1 ? w.alpha : 1.0 - w.alpha;
          // d/dq of -a (1-q)^g log q
          double dq = 0;
          if (q >= kProbEpsilon) {
            dq = a * w.gamma * std::pow(1.0 - q, w.gamma - 1) * std::log(q) -
                 a * std::pow(1.0 - q, w.gamma) / q;
          } else {
            dq = a * w.gamma * std::pow(1.0 - q, w.gamma - 1) * std::log(kProbEpsilon);
          }
          gp[i] += g[0] * norm * (lab == 1 ? dq : -dq);
        }
      });
}

Tensor reg_loss_loc(const Tensor& pred, std::span<const Residual> target) {
  require_residual_rows("reg_loss_loc", pred, target.size());
  const std::size_t n = target.size();
  auto v = pred.values();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 6; ++k) total += smooth_l1(v[i * 7 + k] - target[i][k]);
  const double norm = n ? 1.0 / static_cast<double>(n) : 0.0;
  auto tgt = std::make_shared<std::vector<Residual>>(target.begin(), target.end());
  return Tensor::make_op("reg_loss_loc", {1}, {total * norm}, {pred},
                         [tgt, norm](std::span<const double> g, GradSink& sink) {
                           auto v = sink.input_values(0);
                           auto gp = sink.grad(0);
                           for (std::size_t i = 0; i < tgt->size(); ++i)
                             for (int k = 0; k < 6; ++k)
                               gp[i * 7 + k] += g[0] * norm * smooth_l1_grad(v[i * 7 + k] - (*tgt)[i][k]);
                         });
}

Tensor reg_loss_angle(const Tensor& pred, std::span<const Residual> target) {
  require_residual_rows("reg_loss_angle", pred, target.size());
  const std::size_t n = target.size();
  auto v = pred.values();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += smooth_l1(std::sin(v[i * 7 + 6] - target[i][6]));
  const double norm = n ? 1.0 / static_cast<double>(n) : 0.0;
  auto tgt = std::make_shared<std::vector<Residual>>(target.begin(), target.end());
  return Tensor::make_op("reg_loss_angle", {1}, {total * norm}, {pred},
                         [tgt, norm](std::span<const double> g, GradSink& sink) {
                           auto v = sink.input_values(0);
                           auto gp = sink.grad(0);
                           for (std::size_t i = 0; i < tgt->size(); ++i) {
                             const double d = v[i * 7 + 6] - (*tgt)[i][6];
                             gp[i * 7 + 6] += g[0] * norm * smooth_l1_grad(std::sin(d)) * std::cos(d);
                           }
                         });
}

double iou_soft_target(double iou, double lo, double hi) {
  return std::clamp((iou - lo) / (hi - lo), 0.0, 1.0);
}

Tensor iou_confidence_loss(const Tensor& logit, std::span<const double> target) {
  if (logit.numel() != target.size()) throw ShapeError("iou_confidence_loss: target count mismatch");
  auto x = logit.values();
  const std::size_t n = target.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += std::max(x[i], 0.0) - x[i] * target[i] + std::log1p(std::exp(-std::abs(x[i]))) -
             binary_entropy(target[i]);
  }
  const double norm = n ? 1.0 / static_cast<double>(n) : 0.0;
  auto tgt = std::make_shared<std::vector<double>>(target.begin(), target.end());
  return Tensor::make_op("iou_confidence_loss", {1}, {total * norm}, {logit},
                         [tgt, norm](std::span<const double> g, GradSink& sink) {
                           auto x = sink.input_values(0);
                           auto gx = sink.grad(0);
                           for (std::size_t i = 0; i < tgt->size(); ++i) {
                             const double p = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                                        : std::exp(x[i]) / (1.0 + std::exp(x[i]));
                             gx[i] += g[0] * norm * (p - (*tgt)[i]);
                           }
                         });
}

Tensor weighted_detection_loss(const Tensor& first, const Tensor& angle, const Tensor& loc,
                               const LossWeights& w) {
  return add(scale(first, w.beta1), scale(add(angle, loc), w.beta2));
}

}  // namespace cvf
