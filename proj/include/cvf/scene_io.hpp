#pragma once

// Scene directories: the on-disk form of a SceneSample shared by the command
// line tools.
//
//   velodyne.bin     KITTI point records
//   calib.txt        calibration of camera 0; calib_<k>.txt for camera k > 0
//   camera.cvf       stride-8 camera features, tensors "camera<k>" in the
//                    checkpoint container
//   image_2.ppm      raw image for camera 0, read when camera.cvf is absent
//   label.txt        KITTI labels (optional)

#include <filesystem>
#include <string>
#include <vector>

#include "cvf/synthetic.hpp"

namespace cvf {

void write_scene_dir(const std::filesystem::path& dir, const SceneSample& sample);

/// Labels other than DontCare become gt boxes. Throws ParseError or
/// std::runtime_error naming the offending file.
SceneSample read_scene_dir(const std::filesystem::path& dir);

bool is_scene_dir(const std::filesystem::path& dir);

/// `root` itself when it is a scene directory, otherwise its scene
/// subdirectories in name order.
std::vector<std::filesystem::path> list_scene_dirs(const std::filesystem::path& root);

}  // namespace cvf
