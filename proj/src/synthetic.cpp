#include "cvf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cvf {

bool box_in_range(const Box3D& box, const VoxelGridSpec& spec, double margin) {
  for (const auto& c : box.bev_corners()) {
    if (c.x() < spec.range_min.x() + margin || c.x() > spec.range_max.x() - margin ||
        c.y() < spec.range_min.y() + margin || c.y() > spec.range_max.y() - margin) {
      return false;
    }
  }
  return true;
}

Calibration default_front_calibration() {
  Calibration c;
  c.P << 721.5, 0, 609.6, 0, 0, 721.5, 172.9, 0, 0, 0, 1, 0;
  c.R0.setIdentity();
  c.Tr << 0, -1, 0, 0, 0, 0, -1, -0.08, 1, 0, 0, -0.27;
  return c;
}

std::size_t surface_point_count(double range, const SyntheticConfig& config) {
  const double r = std::max(range, 1.0);
  const double n = std::round(config.surface_density / (r * r));
  return std::clamp(static_cast<std::size_t>(n), config.min_surface_points,
                    config.max_surface_points);
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::array<Vec3, 8> corners(const Box3D& b) {
  std::array<Vec3, 8> out;
  std::size_t k = 0;
  for (double sx : {-0.5, 0.5})
    for (double sy : {-0.5, 0.5})
      for (double sz : {-0.5, 0.5}) out[k++] = b.to_world(Vec3(sx * b.l, sy * b.w, sz * b.h));
  return out;
}

bool fully_visible(const Box3D& b, const Calibration& calib, const SyntheticConfig& cfg) {
  for (const auto& c : corners(b)) {
    auto px = project_to_image(c, calib);
    if (!px || px->depth < 0.5 || px->x < 0 || px->y < 0 ||
        px->x >= static_cast<double>(cfg.image_width) ||
        px->y >= static_cast<double>(cfg.image_height)) {
      return false;
    }
  }
  return true;
}

struct Placed {
  Box3D box;
  bool clutter = false;
};

/// Points on the faces whose outward normal points toward the sensor.
void sample_surface(const Box3D& b, std::size_t count, Rng& rng, std::vector<LidarPoint>& out) {
  struct Face {
    int axis;
    double sign;
    double area;
  };
  const std::array<double, 3> ext{b.l, b.w, b.h};
  std::vector<Face> faces;
  for (int axis = 0; axis < 3; ++axis) {
    for (double sign : {-1.0, 1.0}) {
      Vec3 local = Vec3::Zero();
      local[axis] = sign * ext[axis] / 2;
      const Vec3 center = b.to_world(local);
      const Vec3 normal = b.to_world(local + Vec3::Unit(axis) * sign) - center;
      if (normal.dot(-center) <= 0) continue;
      faces.push_back({axis, sign, ext[(axis + 1) % 3] * ext[(axis + 2) % 3]});
    }
  }
  if (faces.empty()) return;
  std::vector<double> areas;
  for (const auto& f : faces) areas.push_back(f.area);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  for (std::size_t i = 0; i < count; ++i) {
    const auto& f = faces[pick(rng)];
    Vec3 local;
    for (int a = 0; a < 3; ++a) local[a] = uniform(rng, -0.5, 0.5) * ext[a];
    local[f.axis] = f.sign * ext[f.axis] / 2;
    const Vec3 p = b.to_world(local);
    out.push_back({p.x(), p.y(), p.z(), uniform(rng, 0.3, 0.9)});
  }
}

void paint_signature(Tensor& features, const Box3D& b, const Calibration& calib,
                     const SyntheticConfig& cfg, std::size_t first_channel, Rng& rng) {
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
  for (const auto& corner : corners(b)) {
    auto px = project_to_image(corner, calib);
    if (!px) return;
    u0 = std::min(u0, px->x / cfg.camera_stride);
    u1 = std::max(u1, px->x / cfg.camera_stride);
    v0 = std::min(v0, px->y / cfg.camera_stride);
    v1 = std::max(v1, px->y / cfg.camera_stride);
  }
  const auto lo = [](double v) { return static_cast<std::ptrdiff_t>(std::floor(v)); };
  const std::ptrdiff_t c0 = std::max<std::ptrdiff_t>(lo(u0), 0);
  const std::ptrdiff_t c1 = std::min<std::ptrdiff_t>(lo(u1), static_cast<std::ptrdiff_t>(w) - 1);
  const std::ptrdiff_t r0 = std::max<std::ptrdiff_t>(lo(v0), 0);
  const std::ptrdiff_t r1 = std::min<std::ptrdiff_t>(lo(v1), static_cast<std::ptrdiff_t>(h) - 1);
  std::normal_distribution<double> noise(0.0, cfg.camera_noise);
  auto vals = features.mutable_values();
  for (std::ptrdiff_t r = r0; r <= r1; ++r) {
    for (std::ptrdiff_t col = c0; col <= c1; ++col) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0;
        if (ch == first_channel % c) s = cfg.camera_signal;
        if (ch == (first_channel + 1) % c) s = 0.5 * cfg.camera_signal;
        vals[(ch * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(col)] =
            s + noise(rng);
      }
    }
  }
}

}  // namespace

SceneSample generate_synthetic_scene(std::uint64_t seed, const SyntheticConfig& cfg,
                                     const VoxelGridSpec& spec) {
  Rng rng(seed);
  const Calibration calib = default_front_calibration();
  SceneSample sample;

  std::vector<Placed> placed;
  auto place = [&](bool clutter) {
    const double r_lo = clutter ? std::max(cfg.min_range, cfg.clutter_min_range) : cfg.min_range;
    for (int attempt = 0; attempt < 2000; ++attempt) {
      const double r = uniform(rng, r_lo, cfg.max_range);
      const double bearing = uniform(rng, -0.6, 0.6);
      const double yaw = uniform(rng, -kPi, kPi);
      const double l = clutter ? uniform(rng, 3.0, 4.6) : uniform(rng, 3.6, 4.2);
      const double w = clutter ? uniform(rng, 1.4, 2.0) : uniform(rng, 1.55, 1.8);
      const double h = clutter ? uniform(rng, 1.2, 1.9) : uniform(rng, 1.45, 1.65);
      const Box3D box(Vec3(r * std::cos(bearing), r * std::sin(bearing), cfg.ground_z + h / 2), w,
                      l, h, yaw);
      if (!box_in_range(box, spec, 0.5) || box.z_min() < spec.range_min.z() ||
          box.z_max() > spec.range_max.z() || !fully_visible(box, calib, cfg)) {
        continue;
      }
      const Box3D grown(box.center, w + cfg.clearance, l + cfg.clearance, h, yaw);
      bool clear = true;
      for (const auto& other : placed) {
        const Box3D og(other.box.center, other.box.w + cfg.clearance,
                       other.box.l + cfg.clearance, other.box.h, other.box.yaw);
        if (bev_intersection(grown, og) > 0) {
          clear = false;
          break;
        }
      }
      if (clear) {
        placed.push_back({box, clutter});
        return;
      }
    }
  };
  for (std::size_t i = 0; i < cfg.n_objects; ++i) place(false);
  for (std::size_t i = 0; i < cfg.clutter_objects; ++i) place(true);

  for (const auto& p : placed) {
    const double r = p.box.center.head<2>().norm();
    sample_surface(p.box, surface_point_count(r, cfg), rng, sample.points);
    if (!p.clutter) {
      sample.gt_boxes.push_back(p.box);
      sample.gt_classes.push_back("Car");
    }
  }

  const double r_max = std::min(cfg.max_range + 10.0, spec.range_max.x());
  std::normal_distribution<double> ground_noise(0.0, 0.02);
  for (std::size_t i = 0; i < cfg.ground_points; ++i) {
    const double r = uniform(rng, 2.0, r_max);
    const double bearing = uniform(rng, -kPi / 4, kPi / 4);
    const Vec3 p(r * std::cos(bearing), r * std::sin(bearing), cfg.ground_z + ground_noise(rng));
    const double intensity = uniform(rng, 0.0, 0.3);
    if (!spec.voxel_of(p)) continue;
    bool inside = false;
    for (const auto& o : placed) inside = inside || o.box.contains(p, 0.1);
    if (!inside) sample.points.push_back({p.x(), p.y(), p.z(), intensity});
  }

  const std::size_t fh = (cfg.image_height + static_cast<std::size_t>(cfg.camera_stride) - 1) /
                         static_cast<std::size_t>(cfg.camera_stride);
  const std::size_t fw = (cfg.image_width + static_cast<std::size_t>(cfg.camera_stride) - 1) /
                         static_cast<std::size_t>(cfg.camera_stride);
  const double noise_sd = cfg.camera_mode == CameraMode::Noise ? 1.0 : cfg.camera_noise;
  std::normal_distribution<double> bg(0.0, noise_sd);
  std::vector<double> values(cfg.camera_channels * fh * fw);
  for (auto& v : values) v = bg(rng);
  Tensor features = Tensor::from({cfg.camera_channels, fh, fw}, std::move(values));

  if (cfg.camera_mode == CameraMode::Signature) {
    std::vector<std::size_t> order(placed.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return placed[a].box.center.head<2>().norm() > placed[b].box.center.head<2>().norm();
    });
    for (std::size_t i : order) {
      paint_signature(features, placed[i].box, calib, cfg, placed[i].clutter ? 2 : 0, rng);
    }
  }

  CameraInput cam;
  cam.view = {features, calib, cfg.camera_stride};
  cam.image_width = cfg.image_width;
  cam.image_height = cfg.image_height;
  sample.cameras.push_back(std::move(cam));
  return sample;
}

std::vector<CloudTransform> AugmentDraw::ops() const {
  std::vector<CloudTransform> out;
  if (flip) out.push_back(CloudTransform::flip());
  out.push_back(CloudTransform::rotate(rotation));
  out.push_back(CloudTransform::scale(scale));
  return out;
}

AugmentDraw draw_augmentation(std::uint64_t seed, const AugmentBounds& bounds) {
  Rng rng(seed);
  AugmentDraw d;
  d.flip = uniform(rng, 0.0, 1.0) < bounds.flip_probability;
  d.rotation = uniform(rng, -bounds.max_rotation, bounds.max_rotation);
  d.scale = uniform(rng, bounds.scale_min, bounds.scale_max);
  return d;
}

SceneSample apply_augmentation(const SceneSample& sample, const AugmentDraw& draw) {
  SceneSample out = sample;
  for (const auto& op : draw.ops()) {
    if (op.kind == CloudTransform::Kind::Rotate && op.value == 0) continue;
    if (op.kind == CloudTransform::Kind::Scale && op.value == 1) continue;
    out.points = transform_cloud(out.points, op);
    for (auto& b : out.gt_boxes) b = transform_box(b, op);
    for (auto& cam : out.cameras) cam.view.calib = adjust_calibration(cam.view.calib, op);
  }
  return out;
}

}  // namespace cvf
