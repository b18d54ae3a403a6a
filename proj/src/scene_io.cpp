#include "cvf/scene_io.hpp"

#include <algorithm>
#include <stdexcept>

#include "cvf/io.hpp"
#include "cvf/params.hpp"

namespace cvf {

namespace fs = std::filesystem;

namespace {

fs::path calib_path(const fs::path& dir, std::size_t k) {
  return dir / (k == 0 ? std::string("calib.txt") : "calib_" + std::to_string(k) + ".txt");
}

}  // namespace

void write_scene_dir(const fs::path& dir, const SceneSample& sample) {
  fs::create_directories(dir);
  write_velodyne_bin(dir / "velodyne.bin", sample.points);
  ParameterStore features;
  for (std::size_t k = 0; k < sample.cameras.size(); ++k) {
    const auto& cam = sample.cameras[k];
    if (cam.raw_image) throw std::invalid_argument("raw image cameras cannot be written");
    write_file_bytes(calib_path(dir, k), format_kitti_calib(cam.view.calib));
    features.add("camera" + std::to_string(k), cam.view.features.detach());
  }
  if (!sample.cameras.empty()) save_checkpoint(dir / "camera.cvf", features);
  const Calibration calib =
      sample.cameras.empty() ? default_front_calibration() : sample.cameras[0].view.calib;
  std::string labels;
  for (std::size_t i = 0; i < sample.gt_boxes.size(); ++i) {
    const std::string type = i < sample.gt_classes.size() ? sample.gt_classes[i] : "Car";
    labels += format_kitti_label(lidar_box_to_kitti(sample.gt_boxes[i], type, calib)) + "\n";
  }
  write_file_bytes(dir / "label.txt", labels);
}

bool is_scene_dir(const fs::path& dir) { return fs::is_regular_file(dir / "velodyne.bin"); }

SceneSample read_scene_dir(const fs::path& dir) {
  if (!is_scene_dir(dir)) {
    throw std::runtime_error(dir.string() + ": not a scene directory (no velodyne.bin)");
  }
  SceneSample sample;
  sample.points = read_velodyne_bin(dir / "velodyne.bin");
  if (fs::exists(dir / "camera.cvf")) {
    const ParameterStore features = load_checkpoint(dir / "camera.cvf");
    for (std::size_t k = 0;; ++k) {
      const std::string name = "camera" + std::to_string(k);
      if (!features.contains(name)) break;
      CameraInput cam;
      const Tensor& f = features.at(name);
      if (f.rank() != 3) throw std::runtime_error(dir.string() + "/camera.cvf: " + name + " is not [C,H,W]");
      cam.view = {f.detach(), read_kitti_calib(calib_path(dir, k)), static_cast<double>(kBevStride)};
      cam.image_width = f.dim(2) * kBevStride;
      cam.image_height = f.dim(1) * kBevStride;
      sample.cameras.push_back(std::move(cam));
    }
  } else if (fs::exists(dir / "image_2.ppm")) {
    CameraInput cam;
    const Tensor image = read_netpbm(dir / "image_2.ppm");
    cam.view = {image, read_kitti_calib(calib_path(dir, 0)), 1.0};
    cam.raw_image = true;
    cam.image_width = image.dim(2);
    cam.image_height = image.dim(1);
    sample.cameras.push_back(std::move(cam));
  }
  if (fs::exists(dir / "label.txt")) {
    const Calibration calib =
        sample.cameras.empty() ? read_kitti_calib(calib_path(dir, 0)) : sample.cameras[0].view.calib;
    for (const auto& obj : read_kitti_labels(dir / "label.txt", calib)) {
      sample.gt_boxes.push_back(obj.box);
      sample.gt_classes.push_back(obj.type);
    }
  }
  return sample;
}

std::vector<fs::path> list_scene_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error(root.string() + ": no such directory");
  if (is_scene_dir(root)) return {root};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && is_scene_dir(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error(root.string() + ": contains no scene directories");
  return out;
}

}  // namespace cvf
