#include "cvf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <json.hpp>

namespace cvf {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

std::vector<std::int64_t> match_detections(std::span<const Detection> dets,
                                           std::span<const Box3D> gts, double iou_threshold) {
  std::vector<std::int64_t> match(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : score_order(dets)) {
    double best = -1;
    std::int64_t best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double iou = iou_3d(dets[d].box, gts[g]);
      if (iou >= iou_threshold && iou > best) {
        best = iou;
        best_gt = static_cast<std::int64_t>(g);
      }
    }
    if (best_gt >= 0) {
      taken[static_cast<std::size_t>(best_gt)] = true;
      match[d] = best_gt;
    }
  }
  return match;
}

ApResult average_precision_41pt(std::span<const SceneResult> scenes, double iou_threshold) {
  if (!(iou_threshold > 0 && iou_threshold <= 1)) {
    throw std::invalid_argument("average_precision_41pt: threshold must lie in (0, 1]");
  }
  struct Ranked {
    double score;
    bool tp;
  };
  std::vector<Ranked> ranked;
  ApResult r;
  for (const auto& s : scenes) {
    r.num_gt += s.gts.size();
    const auto match = match_detections(s.detections, s.gts, iou_threshold);
    for (std::size_t i = 0; i < s.detections.size(); ++i) {
      ranked.push_back({s.detections[i].score, match[i] >= 0});
    }
  }
  r.num_det = ranked.size();
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  if (r.num_gt == 0) {
    r.fp = r.num_det;
    if (r.num_det == 0) {
      r.ap = 1.0;
      r.empty_warning = true;
      r.interpolated.fill(1.0);
      std::cerr << "warning: AP over an empty set of gts and detections is defined as 1\n";
    }
    return r;
  }

  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    tp += ranked[i].tp ? 1 : 0;
    r.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    r.recall.push_back(static_cast<double>(tp) / static_cast<double>(r.num_gt));
  }
  r.tp = tp;
  r.fp = ranked.size() - tp;
  r.fn = r.num_gt - tp;

  // Running max of precision from the tail gives the interpolated envelope.
  std::vector<double> envelope(r.precision.size());
  double run = 0;
  for (std::size_t i = r.precision.size(); i-- > 0;) {
    run = std::max(run, r.precision[i]);
    envelope[i] = run;
  }
  double sum = 0;
  std::size_t i = 0;
  for (std::size_t k = 0; k < kRecallLevels; ++k) {
    const double level = static_cast<double>(k) / static_cast<double>(kRecallLevels - 1);
    while (i < r.recall.size() && r.recall[i] < level) ++i;
    r.interpolated[k] = i < r.recall.size() ? envelope[i] : 0.0;
    sum += r.interpolated[k];
  }
  r.ap = sum / static_cast<double>(kRecallLevels);
  return r;
}

ApResult average_precision_41pt(std::span<const Detection> dets, std::span<const Box3D> gts,
                                double iou_threshold) {
  SceneResult s{{dets.begin(), dets.end()}, {gts.begin(), gts.end()}};
  return average_precision_41pt(std::span<const SceneResult>(&s, 1), iou_threshold);
}

std::size_t range_bin(const Vec3& center) {
  const double r = center.head<2>().norm();
  std::size_t bin = 0;
  for (std::size_t b = 0; b < kRangeBinStarts.size(); ++b) {
    if (r >= kRangeBinStarts[b]) bin = b;
  }
  return bin;
}

std::array<std::vector<SceneResult>, 3> partition_by_range(std::span<const SceneResult> scenes,
                                                            double iou_threshold) {
  std::array<std::vector<SceneResult>, 3> out;
  for (const auto& s : scenes) {
    std::array<SceneResult, 3> parts;
    for (const auto& g : s.gts) parts[range_bin(g.center)].gts.push_back(g);
    const auto match = match_detections(s.detections, s.gts, iou_threshold);
    for (std::size_t i = 0; i < s.detections.size(); ++i) {
      const Vec3& where = match[i] >= 0 ? s.gts[static_cast<std::size_t>(match[i])].center
                                        : s.detections[i].box.center;
      parts[range_bin(where)].detections.push_back(s.detections[i]);
    }
    for (std::size_t b = 0; b < 3; ++b) out[b].push_back(std::move(parts[b]));
  }
  return out;
}

std::array<ApResult, 3> distance_binned_eval(std::span<const SceneResult> scenes,
                                             double iou_threshold) {
  const auto parts = partition_by_range(scenes, iou_threshold);
  std::array<ApResult, 3> out;
  for (std::size_t b = 0; b < 3; ++b) out[b] = average_precision_41pt(parts[b], iou_threshold);
  return out;
}

namespace {

nlohmann::ordered_json to_json(const ApResult& r) {
  nlohmann::ordered_json j;
  j["ap"] = r.ap;
  j["num_gt"] = r.num_gt;
  j["num_det"] = r.num_det;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["empty_warning"] = r.empty_warning;
  j["interpolated_precision"] = r.interpolated;
  return j;
}

}  // namespace

std::string format_eval_report(const ApResult& overall, const std::array<ApResult, 3>* bins,
                               double iou_threshold) {
  nlohmann::ordered_json j;
  j["metric"] = "ap41_iou3d";
  j["iou_threshold"] = iou_threshold;
  j["overall"] = to_json(overall);
  if (bins) {
    nlohmann::ordered_json b;
    for (std::size_t i = 0; i < bins->size(); ++i) b[kRangeBinNames[i]] = to_json((*bins)[i]);
    j["bins"] = b;
  }
  return j.dump(2) + "\n";
}

GrayImage render_map(const Tensor& map) {
  std::size_t h = 0, w = 0, c = 1;
  if (map.rank() == 2) {
    h = map.dim(0);
    w = map.dim(1);
  } else if (map.rank() == 3) {
    c = map.dim(0);
    h = map.dim(1);
    w = map.dim(2);
  } else {
    throw ShapeError("render_map: expected [H,W] or [C,H,W], got " + shape_str(map.shape()));
  }
  const auto v = map.values();
  std::vector<double> plane(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (map.rank() == 2) {
      plane[i] = v[i];
    } else {
      double sq = 0;
      for (std::size_t ch = 0; ch < c; ++ch) sq += v[ch * h * w + i] * v[ch * h * w + i];
      plane[i] = std::sqrt(sq);
    }
  }
  const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
  GrayImage img{w, h, std::vector<std::uint8_t>(h * w, 128)};
  if (*hi > *lo) {
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < plane.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (plane[i] - *lo) / span));
    }
  }
  return img;
}

void dump_bev_image(const Tensor& map, const std::filesystem::path& path) {
  write_file_bytes(path, encode_pgm(render_map(map)));
}

}  // namespace cvf
