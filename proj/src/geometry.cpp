#include "cvf/geometry.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>

namespace cvf {

Calibration Calibration::identity() {
  Calibration c;
  c.P.leftCols<3>().setIdentity();
  c.R0.setIdentity();
  c.Tr.leftCols<3>().setIdentity();
  return c;
}

Vec3 Calibration::lidar_to_rect(const Vec3& p) const {
  return R0 * (Tr.leftCols<3>() * p + Tr.col(3));
}

Vec3 Calibration::rect_to_lidar(const Vec3& q) const {
  const Vec3 cam = R0.transpose() * q;
  return Mat3(Tr.leftCols<3>()).inverse() * (cam - Tr.col(3));
}

double Calibration::orthonormality_error() const {
  const Mat3 r = Tr.leftCols<3>();
  const double e0 = (R0 * R0.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double e1 = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(e0, e1);
}

std::optional<PixelCoord> project_to_image(const Vec3& p, const Calibration& calib) {
  const Vec3 rect = calib.lidar_to_rect(p);
  if (!(rect.z() > 0)) return std::nullopt;
  const Vec3 uvw = calib.P.leftCols<3>() * rect + calib.P.col(3);
  if (!(uvw.z() > 0)) return std::nullopt;
  return PixelCoord{uvw.x() / uvw.z(), uvw.y() / uvw.z(), rect.z()};
}

double normalize_yaw(double yaw) {
  double r = yaw - 2 * kPi * std::floor((yaw + kPi) / (2 * kPi));
  if (r >= kPi) r -= 2 * kPi;
  if (r < -kPi) r = -kPi;
  return r;
}

// ---------------------------------------------------------------------------
// Box3D

Box3D::Box3D(const Vec3& c, double width, double length, double height, double heading)
    : center(c), w(width), l(length), h(height), yaw(normalize_yaw(heading)) {
  if (!(w > 0) || !(l > 0) || !(h > 0) || !std::isfinite(w) || !std::isfinite(l) ||
      !std::isfinite(h)) {
    throw std::invalid_argument("Box3D: sizes must be positive and finite");
  }
  if (!center.allFinite() || !std::isfinite(heading)) {
    throw std::invalid_argument("Box3D: non-finite center or yaw");
  }
}

std::array<Vec2, 4> Box3D::bev_corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double hl = l / 2, hw = w / 2;
  const std::array<Vec2, 4> local{Vec2(hl, hw), Vec2(-hl, hw), Vec2(-hl, -hw), Vec2(hl, -hw)};
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = Vec2(center.x() + c * local[i].x() - s * local[i].y(),
                  center.y() + s * local[i].x() + c * local[i].y());
  }
  return out;
}

Vec3 Box3D::to_local(const Vec3& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const Vec3 d = p - center;
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
}

Vec3 Box3D::to_world(const Vec3& q) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return center + Vec3(c * q.x() - s * q.y(), s * q.x() + c * q.y(), q.z());
}

bool Box3D::contains(const Vec3& p, double margin) const {
  const Vec3 q = to_local(p);
  return std::abs(q.x()) <= l / 2 + margin && std::abs(q.y()) <= w / 2 + margin &&
         std::abs(q.z()) <= h / 2 + margin;
}

// ---------------------------------------------------------------------------
// Overlap

namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double polygon_area(std::span<const Vec2> poly) {
  double area = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    area += cross(poly[i], poly[(i + 1) % poly.size()]);
  }
  return 0.5 * area;
}

// Canonical operand order so overlap is exactly symmetric in its arguments.
bool box_less(const Box3D& a, const Box3D& b) {
  return std::tie(a.center.x(), a.center.y(), a.center.z(), a.w, a.l, a.h, a.yaw) <
         std::tie(b.center.x(), b.center.y(), b.center.z(), b.w, b.l, b.h, b.yaw);
}

}  // namespace

double convex_intersection_area(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  // Sutherland-Hodgman against each edge of the clip polygon.
  std::vector<Vec2> poly(subject.begin(), subject.end());
  std::vector<Vec2> next;
  for (std::size_t e = 0; e < clip.size() && !poly.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    const Vec2 edge = b - a;
    next.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& p = poly[i];
      const Vec2& q = poly[(i + 1) % poly.size()];
      const double sp = cross(edge, p - a);
      const double sq = cross(edge, q - a);
      if (sp >= 0) next.push_back(p);
      if ((sp >= 0) != (sq >= 0)) {
        const double t = sp / (sp - sq);
        next.push_back(p + t * (q - p));
      }
    }
    poly.swap(next);
  }
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, polygon_area(poly));
}

double bev_intersection(const Box3D& a, const Box3D& b) {
  const Box3D& first = box_less(b, a) ? b : a;
  const Box3D& second = box_less(b, a) ? a : b;
  const double reach = 0.5 * (std::hypot(first.w, first.l) + std::hypot(second.w, second.l));
  if ((first.center.head<2>() - second.center.head<2>()).norm() > reach) return 0.0;
  const auto pa = first.bev_corners();
  const auto pb = second.bev_corners();
  return convex_intersection_area(pa, pb);
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection(a, b);
  if (inter <= 0) return 0.0;
  const double uni = a.w * a.l + b.w * b.l - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double dz = std::min(a.z_max(), b.z_max()) - std::max(a.z_min(), b.z_min());
  if (dz <= 0) return 0.0;
  const double inter = bev_intersection(a, b) * dz;
  if (inter <= 0) return 0.0;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Residuals

Residual encode_box_residual(const Box3D& gt, const Box3D& anchor) {
  if (!(anchor.w > 0) || !(anchor.l > 0) || !(anchor.h > 0)) {
    throw std::invalid_argument("encode_box_residual: anchor size must be positive");
  }
  const double diag = std::hypot(anchor.w, anchor.l);
  Residual r;
  r << (gt.center.x() - anchor.center.x()) / diag, (gt.center.y() - anchor.center.y()) / diag,
      (gt.center.z() - anchor.center.z()) / anchor.h, std::log(gt.w / anchor.w),
      std::log(gt.l / anchor.l), std::log(gt.h / anchor.h), gt.yaw - anchor.yaw;
  return r;
}

Box3D decode_box_residual(const Residual& r, const Box3D& anchor) {
  if (!(anchor.w > 0) || !(anchor.l > 0) || !(anchor.h > 0)) {
    throw std::invalid_argument("decode_box_residual: anchor size must be positive");
  }
  const double diag = std::hypot(anchor.w, anchor.l);
  const Vec3 c(anchor.center.x() + r(0) * diag, anchor.center.y() + r(1) * diag,
               anchor.center.z() + r(2) * anchor.h);
  return Box3D(c, anchor.w * std::exp(r(3)), anchor.l * std::exp(r(4)), anchor.h * std::exp(r(5)),
               anchor.yaw + r(6));
}

// ---------------------------------------------------------------------------
// Cloud transforms

Mat3 CloudTransform::matrix() const {
  switch (kind) {
    case Kind::FlipY:
      return Eigen::Vector3d(1, -1, 1).asDiagonal();
    case Kind::Rotate: {
      const double c = std::cos(value), s = std::sin(value);
      Mat3 m;
      m << c, -s, 0, s, c, 0, 0, 0, 1;
      return m;
    }
    case Kind::Scale:
      if (!(value > 0)) {
        throw std::invalid_argument("scale factor must be positive, got " + std::to_string(value));
      }
      return Mat3::Identity() * value;
  }
  return Mat3::Identity();
}

Vec3 transform_point(const Vec3& p, const CloudTransform& op) { return op.matrix() * p; }

std::vector<LidarPoint> transform_cloud(std::span<const LidarPoint> points,
                                        const CloudTransform& op) {
  const Mat3 m = op.matrix();
  std::vector<LidarPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Vec3 q = m * p.xyz();
    out.push_back({q.x(), q.y(), q.z(), p.intensity});
  }
  return out;
}

Box3D transform_box(const Box3D& box, const CloudTransform& op) {
  const Vec3 c = op.matrix() * box.center;
  switch (op.kind) {
    case CloudTransform::Kind::FlipY:
      return Box3D(c, box.w, box.l, box.h, -box.yaw);
    case CloudTransform::Kind::Rotate:
      return Box3D(c, box.w, box.l, box.h, box.yaw + op.value);
    case CloudTransform::Kind::Scale:
      return Box3D(c, box.w * op.value, box.l * op.value, box.h * op.value, box.yaw);
  }
  return box;
}

Calibration adjust_calibration(const Calibration& calib, const CloudTransform& op) {
  const Mat3 m = op.matrix();  // validates the scale factor as well
  Calibration out = calib;
  out.Tr.leftCols<3>() = calib.Tr.leftCols<3>() * m.inverse();
  return out;
}

}  // namespace cvf
