#pragma once

// File formats: KITTI velodyne scans, calibration and label text, and the
// binary netpbm images used for stand-in camera input and map dumps. Byte
// layouts are documented in docs/FORMATS.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cvf/geometry.hpp"
#include "cvf/tensor.hpp"

namespace cvf {

/// Malformed input. `line` is 1-based for text formats and 0 for binary ones;
/// `offset` is the byte offset of the fault.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, std::uint64_t offset,
             const std::string& message);

  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }
  std::uint64_t offset() const { return offset_; }

 private:
  std::string source_;
  std::size_t line_;
  std::uint64_t offset_;
};

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

// Velodyne scans: consecutive little-endian float32 (x, y, z, intensity).
inline constexpr std::size_t kVelodyneRecordBytes = 16;

std::vector<LidarPoint> parse_velodyne(std::string_view bytes, const std::string& source = "<memory>");
std::string encode_velodyne(std::span<const LidarPoint> points);
std::vector<LidarPoint> read_velodyne_bin(const std::filesystem::path& path);
void write_velodyne_bin(const std::filesystem::path& path, std::span<const LidarPoint> points);

/// Calibration from P2, R0_rect and Tr_velo_to_cam. Other keys must still be
/// well formed and are otherwise ignored.
Calibration parse_kitti_calib(std::string_view text, const std::string& source = "<memory>");
Calibration read_kitti_calib(const std::filesystem::path& path);
std::string format_kitti_calib(const Calibration& calib);

struct KittiObject {
  std::string type;
  double truncation = 0;
  int occlusion = 0;
  double alpha = 0;
  std::array<double, 4> bbox{};  // left, top, right, bottom
  double height = 0, width = 0, length = 0;
  Vec3 location = Vec3::Zero();  // rectified camera frame, bottom center
  double rotation_y = 0;
  std::optional<double> score;
  Box3D box;  // LiDAR frame
};

/// Camera-frame label values -> LiDAR-frame box.
Box3D camera_to_lidar_box(const Vec3& location, double h, double w, double l, double rotation_y,
                          const Calibration& calib);

/// Inverse of camera_to_lidar_box, filling location, dims, rotation_y, alpha
/// and the projected 2D box.
KittiObject lidar_box_to_kitti(const Box3D& box, const std::string& type, const Calibration& calib,
                               std::optional<double> score = std::nullopt);

/// Label rows with 15 fields (16 with score). DontCare rows are skipped.
std::vector<KittiObject> parse_kitti_labels(std::string_view text, const Calibration& calib,
                                            const std::string& source = "<memory>");
std::vector<KittiObject> read_kitti_labels(const std::filesystem::path& path,
                                           const Calibration& calib);
std::string format_kitti_label(const KittiObject& obj);

enum class Difficulty { Easy, Moderate, Hard };

/// Hardest-first tier check against the KITTI thresholds (bbox height,
/// occlusion, truncation); nullopt when the object fits no tier.
std::optional<Difficulty> kitti_difficulty(const KittiObject& obj);

/// Binary P5 (gray) or P6 (RGB), maxval <= 255, as [C, H, W] in [0, 1].
Tensor parse_netpbm(std::string_view bytes, const std::string& source = "<memory>");
Tensor read_netpbm(const std::filesystem::path& path);

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

std::string encode_pgm(const GrayImage& image);
GrayImage decode_pgm(std::string_view bytes, const std::string& source = "<memory>");

}  // namespace cvf
