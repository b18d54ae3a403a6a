#pragma once

// Frames, camera projection, oriented boxes and rotated overlap.
//
// LiDAR frame: x forward, y left, z up (meters). A Box3D has its length `l`
// along the heading direction and width `w` across it; yaw is the heading
// angle about +z measured from +x.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace cvf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Residual = Eigen::Matrix<double, 7, 1>;

inline constexpr double kPi = 3.14159265358979323846;

struct LidarPoint {
  double x = 0, y = 0, z = 0;
  double intensity = 0;

  Vec3 xyz() const { return {x, y, z}; }
};

/// LiDAR -> rectified camera -> pixel chain of one camera.
struct Calibration {
  Mat34 P = Mat34::Zero();   // rectified camera -> pixels
  Mat3 R0 = Mat3::Identity();  // rectification rotation
  Mat34 Tr = Mat34::Zero();  // LiDAR -> camera rigid transform

  static Calibration identity();

  /// Rectified camera coordinates of a LiDAR-frame point.
  Vec3 lidar_to_rect(const Vec3& p) const;
  /// Inverse of lidar_to_rect.
  Vec3 rect_to_lidar(const Vec3& q) const;

  /// Max deviation of R0 and Tr's rotation block from orthonormality.
  double orthonormality_error() const;
};

struct PixelCoord {
  double x = 0;
  double y = 0;
  double depth = 0;
};

/// Pixel coordinates of `p`, or nullopt when the point is behind the camera
/// (non-positive rectified depth).
std::optional<PixelCoord> project_to_image(const Vec3& p, const Calibration& calib);

/// Maps an angle into [-pi, pi); +pi maps to -pi.
double normalize_yaw(double yaw);

struct Box3D {
  Vec3 center = Vec3::Zero();
  double w = 1, l = 1, h = 1;
  double yaw = 0;

  Box3D() = default;
  /// Throws std::invalid_argument on non-positive or non-finite sizes.
  Box3D(const Vec3& center, double w, double l, double h, double yaw);

  double volume() const { return w * l * h; }
  double z_min() const { return center.z() - h / 2; }
  double z_max() const { return center.z() + h / 2; }
  /// Footprint corners, counter-clockwise.
  std::array<Vec2, 4> bev_corners() const;
  /// Point-in-box test in the box frame, with an optional tolerance.
  bool contains(const Vec3& p, double margin = 0.0) const;
  /// Box-frame coordinates (heading, lateral, vertical) of a world point.
  Vec3 to_local(const Vec3& p) const;
  Vec3 to_world(const Vec3& local) const;
};

/// Area of the intersection of two convex counter-clockwise polygons.
double convex_intersection_area(std::span<const Vec2> a, std::span<const Vec2> b);

double bev_intersection(const Box3D& a, const Box3D& b);
double bev_iou(const Box3D& a, const Box3D& b);
double iou_3d(const Box3D& a, const Box3D& b);

/// Residual of `gt` relative to `anchor`: (dx/d, dy/d, dz/h, log w, log l,
/// log h ratios, raw yaw delta) with d the anchor footprint diagonal.
Residual encode_box_residual(const Box3D& gt, const Box3D& anchor);
Box3D decode_box_residual(const Residual& res, const Box3D& anchor);

struct CloudTransform {
  enum class Kind { FlipY, Rotate, Scale };
  Kind kind = Kind::Rotate;
  double value = 0;  // rotation angle (rad) or scale factor

  static CloudTransform flip() { return {Kind::FlipY, 0}; }
  static CloudTransform rotate(double angle) { return {Kind::Rotate, angle}; }
  static CloudTransform scale(double factor) { return {Kind::Scale, factor}; }

  bool is_rigid() const { return kind != Kind::Scale; }
  /// Linear part; throws std::invalid_argument for a non-positive scale.
  Mat3 matrix() const;
};

Vec3 transform_point(const Vec3& p, const CloudTransform& op);
std::vector<LidarPoint> transform_cloud(std::span<const LidarPoint> points, const CloudTransform& op);
Box3D transform_box(const Box3D& box, const CloudTransform& op);

/// Calibration under which transformed points project where the originals
/// did, at the original depth: Tr's linear part is composed with the inverse
/// of the transform. After a scale the linear part is no longer orthonormal.
Calibration adjust_calibration(const Calibration& calib, const CloudTransform& op);

}  // namespace cvf
