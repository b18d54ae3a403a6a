#include "cvf/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cvf {

AnchorSet make_anchors(const VoxelGridSpec& spec, const AnchorConfig& config) {
  if (config.yaws.empty()) throw std::invalid_argument("make_anchors: no anchor yaws");
  AnchorSet set;
  set.per_cell = config.yaws.size();
  set.height = spec.bev_height();
  set.width = spec.bev_width();
  const double cell_x = spec.voxel_size.x() * kBevStride;
  const double cell_y = spec.voxel_size.y() * kBevStride;
  set.boxes.reserve(set.per_cell * set.height * set.width);
  for (double yaw : config.yaws) {
    for (std::size_t row = 0; row < set.height; ++row) {
      for (std::size_t col = 0; col < set.width; ++col) {
        const Vec3 c(spec.range_min.x() + (static_cast<double>(col) + 0.5) * cell_x,
                     spec.range_min.y() + (static_cast<double>(row) + 0.5) * cell_y,
                     config.z_center);
        set.boxes.emplace_back(c, config.width, config.length, config.height, yaw);
      }
    }
  }
  return set;
}

RpnHead RpnHead::create(ParameterStore& store, const std::string& name, std::size_t in_channels,
                        std::size_t hidden_channels, std::size_t anchors_per_cell,
                        std::mt19937_64& rng) {
  RpnHead head;
  head.hidden = Conv2dLayer::create(store, name + ".hidden", in_channels, hidden_channels, 3, 1, 1, rng);
  head.cls = Conv2dLayer::create(store, name + ".cls", hidden_channels, anchors_per_cell, 1, 1, 0,
                                 rng, Init::Zero);
  head.reg = Conv2dLayer::create(store, name + ".reg", hidden_channels, 7 * anchors_per_cell, 1,
                                 1, 0, rng, Init::Zero);
  return head;
}

RpnOutput RpnHead::operator()(const Tensor& joint) const {
  const Tensor h = relu(hidden(joint));
  return {cls(h), reg(h)};
}

std::array<std::size_t, 7> residual_offsets(const AnchorSet& anchors, std::size_t index) {
  const std::size_t plane = anchors.height * anchors.width;
  const std::size_t a = index / plane, cell = index % plane;
  std::array<std::size_t, 7> out{};
  for (std::size_t k = 0; k < 7; ++k) out[k] = (a * 7 + k) * plane + cell;
  return out;
}

std::vector<Proposal> decode_proposals(const RpnOutput& out, const AnchorSet& anchors,
                                       std::size_t top_k) {
  auto logits = out.logits.values();
  auto res = out.residuals.values();
  if (logits.size() != anchors.size() || res.size() != 7 * anchors.size()) {
    throw ShapeError("decode_proposals: head output does not match the anchor set");
  }
  std::vector<std::size_t> order(anchors.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t keep = std::min(top_k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
                    });
  order.resize(keep);
  std::vector<Proposal> proposals;
  proposals.reserve(keep);
  for (std::size_t idx : order) {
    Residual r;
    const auto offs = residual_offsets(anchors, idx);
    for (std::size_t k = 0; k < 7; ++k) r[static_cast<long>(k)] = res[offs[k]];
    for (int k = 3; k < 6; ++k) r[k] = std::clamp(r[k], -4.0, 4.0);
    const double score = 1.0 / (1.0 + std::exp(-logits[idx]));
    proposals.push_back({decode_box_residual(r, anchors.boxes[idx]), score, idx});
  }
  return proposals;
}

std::vector<std::size_t> nms(const std::vector<Proposal>& proposals, double iou_threshold,
                             std::size_t max_keep) {
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return proposals[a].score > proposals[b].score;
  });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    if (kept.size() >= max_keep) break;
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (bev_iou(proposals[idx].box, proposals[k].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::size_t TargetAssignment::positives() const {
  return static_cast<std::size_t>(std::count(label.begin(), label.end(), 1));
}

namespace {

double footprint_radius(const Box3D& b) { return 0.5 * std::hypot(b.w, b.l); }

}  // namespace

TargetAssignment assign_targets(const AnchorSet& anchors, const std::vector<Box3D>& gts,
                                double pos_iou, double neg_iou) {
  if (!(0 <= neg_iou && neg_iou <= pos_iou && pos_iou <= 1)) {
    throw std::invalid_argument("assign_targets: need 0 <= neg_iou <= pos_iou <= 1");
  }
  const std::size_t n = anchors.size();
  TargetAssignment t;
  t.label.assign(n, 0);
  t.matched.assign(n, -1);
  t.residual.assign(n, Residual::Zero());
  if (gts.empty()) return t;

  std::vector<double> best_iou(n, 0.0);
  std::vector<std::int32_t> best_gt(n, -1);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<std::size_t> gt_anchor(gts.size(), n);
  for (std::size_t i = 0; i < n; ++i) {
    const Box3D& a = anchors.boxes[i];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double reach = footprint_radius(a) + footprint_radius(gts[g]);
      if ((a.center.head<2>() - gts[g].center.head<2>()).norm() >= reach) continue;
      const double iou = bev_iou(a, gts[g]);
      if (iou > best_iou[i]) {
        best_iou[i] = iou;
        best_gt[i] = static_cast<std::int32_t>(g);
      }
      if (iou > gt_best[g]) {
        gt_best[g] = iou;
        gt_anchor[g] = i;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (best_iou[i] >= pos_iou) {
      t.label[i] = 1;
      t.matched[i] = best_gt[i];
    } else if (best_iou[i] > neg_iou) {
      t.label[i] = -1;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_anchor[g] == n) continue;
    t.label[gt_anchor[g]] = 1;
    t.matched[gt_anchor[g]] = static_cast<std::int32_t>(g);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (t.label[i] == 1) {
      t.residual[i] = encode_box_residual(gts[static_cast<std::size_t>(t.matched[i])], anchors.boxes[i]);
    }
  }
  return t;
}

}  // namespace cvf
