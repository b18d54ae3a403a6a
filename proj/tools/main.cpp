// cvf: command line front end for scene generation, training, detection and
// evaluation.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "cvf/config.hpp"
#include "cvf/eval.hpp"
#include "cvf/io.hpp"
#include "cvf/model.hpp"
#include "cvf/params.hpp"
#include "cvf/scene_io.hpp"

namespace fs = std::filesystem;
using namespace cvf;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "run configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed; overrides the config value");
  auto* out = cmd->add_option("--out", c.out, "output path");
  if (out_required) out->required();
}

RunConfig run_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void load_weights(CvfModel& model, const std::string& path) {
  if (path.empty()) return;
  const ParameterStore saved = load_checkpoint(path);
  const std::size_t copied = model.params().assign_from(saved);
  if (copied != model.params().size() || saved.size() != model.params().size()) {
    throw std::runtime_error(path + ": checkpoint holds " + std::to_string(saved.size()) +
                             " tensors, " + std::to_string(copied) + " match the " +
                             std::to_string(model.params().size()) + " model parameters");
  }
}

void make_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string scene_name(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

// ------------------------------------------------------------------ commands

int synth_gen(const Common& c, std::size_t count) {
  const RunConfig cfg = run_config(c);
  for (std::size_t i = 0; i < count; ++i) {
    const SceneSample s = generate_synthetic_scene(cfg.seed + i, cfg.synth, cfg.voxel);
    const fs::path dir = count == 1 ? fs::path(c.out) : fs::path(c.out) / scene_name(i);
    write_scene_dir(dir, s);
    std::printf("%s: %zu points, %zu objects\n", dir.string().c_str(), s.points.size(),
                s.gt_boxes.size());
  }
  return 0;
}

int voxelize_cmd(const Common& c, const std::string& input) {
  const RunConfig cfg = run_config(c);
  const SceneSample s = read_scene_dir(input);
  const VoxelizedScene v = voxelize(s.points, cfg.voxel, cfg.seed);
  make_parent(c.out);
  std::string text;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "# dims %zu %zu %zu\n# voxels %zu points %zu out_of_range %zu overflow %zu\n",
                cfg.voxel.nx(), cfg.voxel.ny(), cfg.voxel.nz(), v.voxels.size(), v.point_count(),
                v.out_of_range, v.overflow_dropped);
  text += buf;
  text += "# ix iy iz count mean_x mean_y mean_z\n";
  for (const auto& vox : v.voxels) {
    Vec3 m = Vec3::Zero();
    for (const auto& p : vox.points) m += p.xyz();
    m /= static_cast<double>(vox.points.size());
    std::snprintf(buf, sizeof(buf), "%zu %zu %zu %zu %.6f %.6f %.6f\n", vox.index[0], vox.index[1],
                  vox.index[2], vox.points.size(), m.x(), m.y(), m.z());
    text += buf;
  }
  write_file_bytes(c.out, text);
  std::printf("%zu voxels, %zu points kept, %zu dropped\n", v.voxels.size(), v.point_count(),
              v.dropped());
  return 0;
}

int project_bev(const Common& c, const std::string& input, const std::string& checkpoint,
                bool zero_offsets) {
  const RunConfig cfg = run_config(c);
  CvfModel model(cfg);
  load_weights(model, checkpoint);
  const SceneSample s = read_scene_dir(input);
  std::vector<CameraView> views;
  for (const auto& cam : s.cameras) {
    views.push_back({model.camera_features(cam), cam.view.calib, static_cast<double>(kBevStride)});
  }
  if (views.empty()) throw std::runtime_error(input + ": scene has no camera");
  const auto projected = model.project_camera(views, !zero_offsets);
  make_parent(c.out);
  dump_bev_image(projected.features, c.out);
  std::printf("%zu x %zu camera BEV map\n", projected.features.dim(1), projected.features.dim(2));
  return 0;
}

int fuse(const Common& c, const std::string& input, const std::string& checkpoint) {
  const RunConfig cfg = run_config(c);
  CvfModel model(cfg);
  load_weights(model, checkpoint);
  const PreparedScene scene = model.prepare(read_scene_dir(input));
  const ForwardPass pass = model.forward(scene);
  const fs::path out(c.out);
  fs::create_directories(out);
  dump_bev_image(pass.camera_bev, out / "camera_bev.pgm");
  dump_bev_image(pass.lidar.final().features, out / "lidar_bev.pgm");
  dump_bev_image(pass.fusion.camera_attention, out / "camera_attention.pgm");
  dump_bev_image(pass.fusion.lidar_attention, out / "lidar_attention.pgm");
  dump_bev_image(pass.fusion.joint, out / "joint.pgm");
  const auto la = pass.fusion.lidar_attention.values();
  double lidar_mean = 0;
  for (double v : la) lidar_mean += v;
  lidar_mean /= static_cast<double>(la.size());
  std::printf("mean camera attention %.6f\nmean lidar attention %.6f\n",
              mean_camera_attention(pass), lidar_mean);
  return 0;
}

int train_toy(const Common& c, std::optional<std::size_t> steps_flag, std::optional<double> lr,
              const std::string& input, std::optional<std::size_t> scenes_flag, std::size_t log_every) {
  RunConfig cfg = run_config(c);
  if (lr) cfg.train.learning_rate = *lr;
  const std::size_t steps = steps_flag.value_or(cfg.train.steps);
  const std::size_t scenes = scenes_flag.value_or(cfg.train.scenes);
  CvfModel model(cfg);
  std::vector<SceneSample> samples;
  if (!input.empty()) {
    for (const auto& dir : list_scene_dirs(input)) samples.push_back(read_scene_dir(dir));
  } else {
    for (std::size_t i = 0; i < scenes; ++i) {
      samples.push_back(generate_synthetic_scene(cfg.seed + i, cfg.synth, cfg.voxel));
    }
  }
  std::vector<PreparedScene> prepared;
  if (!cfg.train.augment) {
    for (const auto& s : samples) prepared.push_back(model.prepare(s));
  }
  Trainer trainer(model, cfg.train.learning_rate);
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t k = step % samples.size();
    const LossBreakdown lb =
        cfg.train.augment
            ? trainer.step(model.prepare(augment(samples[k], cfg.seed * 1000003 + step, cfg.augment)))
            : trainer.step(prepared[k]);
    if (step == 0 || (step + 1) % log_every == 0 || step + 1 == steps) {
      std::printf("step %zu scene %zu rpn %.6f refine %.6f total %.6f positives %zu\n", step + 1, k,
                  lb.rpn, lb.refine, lb.rpn + lb.refine, lb.positives);
      std::fflush(stdout);
    }
  }
  make_parent(c.out);
  save_checkpoint(c.out, model.params());
  std::printf("wrote %s (%zu tensors, %zu values)\n", c.out.c_str(), model.params().size(),
              model.params().total_elements());
  return 0;
}

std::string label_text(const std::vector<Detection>& dets, const Calibration& calib) {
  std::string text;
  for (const auto& d : dets) text += format_kitti_label(lidar_box_to_kitti(d.box, d.label, calib, d.score)) + "\n";
  return text;
}

int detect_cmd(const Common& c, const std::string& input, const std::string& checkpoint) {
  const RunConfig cfg = run_config(c);
  CvfModel model(cfg);
  load_weights(model, checkpoint);
  const bool single = is_scene_dir(input);
  for (const auto& dir : list_scene_dirs(input)) {
    const SceneSample s = read_scene_dir(dir);
    const Calibration calib = s.cameras.empty() ? default_front_calibration() : s.cameras[0].view.calib;
    const auto dets = model.detect(model.prepare(s));
    const fs::path out = single ? fs::path(c.out) : fs::path(c.out) / (dir.filename().string() + ".txt");
    make_parent(out);
    write_file_bytes(out, label_text(dets, calib));
    std::printf("%s: %zu detections\n", out.string().c_str(), dets.size());
  }
  return 0;
}

int eval_cmd(const Common& c, const std::string& gt_root, const std::string& pred, double iou, bool bins) {
  const bool single = is_scene_dir(gt_root);
  std::vector<SceneResult> scenes;
  for (const auto& dir : list_scene_dirs(gt_root)) {
    const SceneSample s = read_scene_dir(dir);
    const Calibration calib = s.cameras.empty() ? read_kitti_calib(dir / "calib.txt") : s.cameras[0].view.calib;
    SceneResult r;
    for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
      if (s.gt_classes[i] == "Car") r.gts.push_back(s.gt_boxes[i]);
    }
    const fs::path p = single ? fs::path(pred) : fs::path(pred) / (dir.filename().string() + ".txt");
    if (!fs::exists(p)) throw std::runtime_error(p.string() + ": no such prediction file");
    for (const auto& obj : read_kitti_labels(p, calib)) {
      if (obj.type != "Car") continue;
      if (!obj.score) throw std::runtime_error(p.string() + ": detection without a score");
      r.detections.push_back({obj.box, *obj.score, obj.type});
    }
    scenes.push_back(std::move(r));
  }
  const ApResult overall = average_precision_41pt(scenes, iou);
  std::array<ApResult, 3> per_bin;
  if (bins) per_bin = distance_binned_eval(scenes, iou);
  const std::string report = format_eval_report(overall, bins ? &per_bin : nullptr, iou) + "\n";
  if (c.out.empty() || c.out == "-") {
    std::fwrite(report.data(), 1, report.size(), stdout);
  } else {
    make_parent(c.out);
    write_file_bytes(c.out, report);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Camera/LiDAR fusion detector tools"};
  app.require_subcommand(1);

  Common c;
  std::string input, checkpoint, gt, pred;
  std::size_t count = 1, log_every = 50;
  std::optional<std::size_t> steps, scenes;
  std::optional<double> lr;
  double iou = 0.7;
  bool zero_offsets = false, bins = false;

  auto* synth = app.add_subcommand("synth-gen", "write synthetic scene directories");
  add_common(synth, c);
  synth->add_option("--count", count, "number of scenes; seeds seed, seed+1, ...")
      ->check(CLI::PositiveNumber);

  auto* vox = app.add_subcommand("voxelize", "voxelize a scene and list the occupied voxels");
  add_common(vox, c);
  vox->add_option("--input", input, "scene directory")->required()->check(CLI::ExistingDirectory);

  auto* proj = app.add_subcommand("project-bev", "render the projected camera BEV map as PGM");
  add_common(proj, c);
  proj->add_option("--input", input, "scene directory")->required()->check(CLI::ExistingDirectory);
  proj->add_option("--checkpoint", checkpoint, "trained parameters")->check(CLI::ExistingFile);
  proj->add_flag("--zero-offsets", zero_offsets, "project without the learned offsets");

  auto* fu = app.add_subcommand("fuse", "render BEV maps and attention maps of one scene");
  add_common(fu, c);
  fu->add_option("--input", input, "scene directory")->required()->check(CLI::ExistingDirectory);
  fu->add_option("--checkpoint", checkpoint, "trained parameters")->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train-toy", "train on synthetic or on-disk scenes");
  add_common(train, c);
  train->add_option("--steps", steps, "optimizer steps; overrides the config value")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", lr, "learning rate; overrides the config value")->check(CLI::PositiveNumber);
  train->add_option("--input", input, "scene directory or a directory of scenes")
      ->check(CLI::ExistingDirectory);
  train->add_option("--scenes", scenes, "synthetic scenes when --input is absent; overrides the config value")
      ->check(CLI::PositiveNumber);
  train->add_option("--log-every", log_every, "steps between log lines")->check(CLI::PositiveNumber);

  auto* det = app.add_subcommand("detect", "write detections as KITTI labels");
  add_common(det, c);
  det->add_option("--input", input, "scene directory or a directory of scenes")
      ->required()->check(CLI::ExistingDirectory);
  det->add_option("--checkpoint", checkpoint, "trained parameters")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "41-point AP report over 3D IoU matching");
  add_common(ev, c, false);
  ev->add_option("--gt", gt, "scene directory or a directory of scenes")
      ->required()->check(CLI::ExistingDirectory);
  ev->add_option("--pred", pred, "label file, or a directory of <scene>.txt files")
      ->required()->check(CLI::ExistingPath);
  ev->add_option("--iou", iou, "3D IoU threshold")->check(CLI::Range(0.0, 1.0));
  ev->add_flag("--bins", bins, "add the 0-20, 20-40 and 40-70 m bins");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return synth_gen(c, count);
    if (*vox) return voxelize_cmd(c, input);
    if (*proj) return project_bev(c, input, checkpoint, zero_offsets);
    if (*fu) return fuse(c, input, checkpoint);
    if (*train) return train_toy(c, steps, lr, input, scenes, log_every);
    if (*det) return detect_cmd(c, input, checkpoint);
    if (*ev) {
      if (!c.config.empty() && !ev->count("--iou")) iou = run_config(c).eval_iou;
      return eval_cmd(c, gt, pred, iou, bins);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cvf: error: %s\n", e.what());
    return 1;
  }
  return 1;
}
