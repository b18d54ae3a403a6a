#include "cvf/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "cvf/io.hpp"

namespace cvf {

namespace {

struct BadValue : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Cross-field violation blamed on one key.
struct BadKey : std::invalid_argument {
  BadKey(std::string k, const std::string& what) : std::invalid_argument(what), key(std::move(k)) {}
  std::string key;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double to_double(std::string_view s) {
  s = trim(s);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw BadValue("expected a finite number, got '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t to_uint(std::string_view s) {
  s = trim(s);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw BadValue("expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

bool to_bool(std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw BadValue("expected true or false, got '" + std::string(s) + "'");
}

std::vector<double> to_list(std::string_view s) {
  std::vector<double> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = s.find(',', start);
    out.push_back(to_double(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string fmt_list(const auto& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(values[0])>>) {
      s += fmt(values[i]);
    } else {
      s += std::to_string(values[i]);
    }
  }
  return s;
}

struct Field {
  std::string key;
  std::function<void(std::string_view)> set;
  std::function<std::string()> get;
};

struct VoxelDraft {
  Vec3 range_min, range_max, size;
  std::size_t max_points;
};

Field num(std::string key, double& ref) {
  return {std::move(key), [&ref](std::string_view s) { ref = to_double(s); },
          [&ref] { return fmt(ref); }};
}

Field positive(std::string key, double& ref) {
  return {std::move(key),
          [&ref](std::string_view s) {
            const double v = to_double(s);
            if (v <= 0) throw BadValue("must be positive");
            ref = v;
          },
          [&ref] { return fmt(ref); }};
}

Field count(std::string key, std::size_t& ref, std::size_t min = 0) {
  return {std::move(key),
          [&ref, min](std::string_view s) {
            const auto v = to_uint(s);
            if (v < min) throw BadValue("must be at least " + std::to_string(min));
            ref = static_cast<std::size_t>(v);
          },
          [&ref] { return std::to_string(ref); }};
}

Field flag(std::string key, bool& ref) {
  return {std::move(key), [&ref](std::string_view s) { ref = to_bool(s); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field vec3(std::string key, Vec3& ref) {
  return {std::move(key),
          [&ref](std::string_view s) {
            const auto v = to_list(s);
            if (v.size() != 3) throw BadValue("expected three comma-separated numbers");
            ref = Vec3(v[0], v[1], v[2]);
          },
          [&ref] { return fmt_list(std::vector<double>{ref.x(), ref.y(), ref.z()}); }};
}

Field widths(std::string key, std::array<std::size_t, 3>& ref) {
  return {std::move(key),
          [&ref](std::string_view s) {
            const auto v = to_list(s);
            if (v.size() != 3) throw BadValue("expected three comma-separated widths");
            for (std::size_t i = 0; i < 3; ++i) {
              if (v[i] < 1 || v[i] != std::floor(v[i])) throw BadValue("widths must be positive integers");
              ref[i] = static_cast<std::size_t>(v[i]);
            }
          },
          [&ref] { return fmt_list(ref); }};
}

std::vector<Field> fields(RunConfig& c, VoxelDraft& vd) {
  auto& m = c.model;
  auto& d = c.detect;
  auto& s = c.synth;
  return {
      vec3("voxel.range_min", vd.range_min),
      vec3("voxel.range_max", vd.range_max),
      vec3("voxel.size", vd.size),
      count("voxel.max_points", vd.max_points, 1),
      positive("anchor.width", c.anchors.width),
      positive("anchor.length", c.anchors.length),
      positive("anchor.height", c.anchors.height),
      num("anchor.z_center", c.anchors.z_center),
      {"anchor.yaws",
       [&c](std::string_view v) {
         auto list = to_list(v);
         if (list.empty()) throw BadValue("at least one anchor yaw required");
         c.anchors.yaws = std::move(list);
       },
       [&c] { return fmt_list(c.anchors.yaws); }},
      num("loss.beta1", c.loss.beta1),
      num("loss.beta2", c.loss.beta2),
      num("loss.alpha", c.loss.alpha),
      num("loss.gamma", c.loss.gamma),
      count("model.encoder_width", m.lidar.encoder_width, 1),
      widths("model.lidar_stages", m.lidar.stage_widths),
      widths("model.camera_backbone", m.camera_backbone),
      count("model.camera_channels", m.camera_channels, 1),
      count("model.camera_bev_channels", m.camera_bev_channels, 1),
      count("model.camera_slabs", m.camera_slabs, 1),
      count("model.cameras", m.cameras, 1),
      count("model.offset_tiles_y", m.offset_tiles_y, 1),
      count("model.offset_tiles_x", m.offset_tiles_x, 1),
      flag("model.use_offsets", m.use_offsets),
      flag("model.use_camera", m.use_camera),
      count("model.rpn_hidden", m.rpn_hidden, 1),
      count("model.roi_encoder_width", m.roi_encoder_width, 1),
      count("model.refine_hidden", m.refine_hidden, 1),
      count("roi.r", m.roi_r, 1),
      count("roi.grid", m.roi_grid, 1),
      num("assign.pos_iou", d.assign_pos_iou),
      num("assign.neg_iou", d.assign_neg_iou),
      count("rpn.pre_nms_top_k", d.pre_nms_top_k, 1),
      num("rpn.nms_iou", d.rpn_nms_iou),
      count("rpn.max_keep", d.rpn_max_keep, 1),
      num("refine.pos_iou", d.refine_pos_iou),
      num("refine.iou_target_lo", d.iou_target_lo),
      num("refine.iou_target_hi", d.iou_target_hi),
      num("detect.nms_iou", d.final_nms_iou),
      num("detect.score_threshold", d.score_threshold),
      count("detect.max_detections", d.max_detections, 1),
      positive("train.lr", c.train.learning_rate),
      count("train.steps", c.train.steps),
      count("train.scenes", c.train.scenes, 1),
      flag("train.augment", c.train.augment),
      num("augment.flip_probability", c.augment.flip_probability),
      num("augment.max_rotation", c.augment.max_rotation),
      positive("augment.scale_min", c.augment.scale_min),
      positive("augment.scale_max", c.augment.scale_max),
      count("synth.objects", s.n_objects),
      positive("synth.min_range", s.min_range),
      positive("synth.max_range", s.max_range),
      num("synth.clearance", s.clearance),
      num("synth.ground_z", s.ground_z),
      positive("synth.surface_density", s.surface_density),
      count("synth.min_surface_points", s.min_surface_points),
      count("synth.max_surface_points", s.max_surface_points),
      count("synth.ground_points", s.ground_points),
      count("synth.clutter_objects", s.clutter_objects),
      num("synth.clutter_min_range", s.clutter_min_range),
      count("synth.camera_channels", s.camera_channels, 1),
      count("synth.image_width", s.image_width, 1),
      count("synth.image_height", s.image_height, 1),
      num("synth.camera_signal", s.camera_signal),
      num("synth.camera_noise", s.camera_noise),
      {"synth.camera_mode",
       [&s](std::string_view v) {
         v = trim(v);
         if (v == "signature") {
           s.camera_mode = CameraMode::Signature;
         } else if (v == "noise") {
           s.camera_mode = CameraMode::Noise;
         } else {
           throw BadValue("expected signature or noise");
         }
       },
       [&s] { return std::string(s.camera_mode == CameraMode::Noise ? "noise" : "signature"); }},
      {"seed", [&c](std::string_view v) { c.seed = to_uint(v); },
       [&c] { return std::to_string(c.seed); }},
      num("eval.iou", c.eval_iou),
  };
}

void check_ranges(const RunConfig& c) {
  auto in01 = [](double v, const char* key) {
    if (v < 0 || v > 1) throw BadKey(key, std::string(key) + " must lie in [0, 1]");
  };
  in01(c.detect.assign_pos_iou, "assign.pos_iou");
  in01(c.detect.assign_neg_iou, "assign.neg_iou");
  if (c.detect.assign_neg_iou > c.detect.assign_pos_iou) {
    throw BadKey("assign.pos_iou", "assign.neg_iou exceeds assign.pos_iou");
  }
  in01(c.detect.rpn_nms_iou, "rpn.nms_iou");
  in01(c.detect.final_nms_iou, "detect.nms_iou");
  in01(c.augment.flip_probability, "augment.flip_probability");
  if (c.augment.scale_min > c.augment.scale_max) {
    throw BadKey("augment.scale_min", "augment.scale_min exceeds augment.scale_max");
  }
  if (!(c.eval_iou > 0 && c.eval_iou <= 1)) throw BadKey("eval.iou", "eval.iou must lie in (0, 1]");
  if (c.detect.iou_target_hi <= c.detect.iou_target_lo) {
    throw BadKey("refine.iou_target_hi", "refine.iou_target_hi must exceed refine.iou_target_lo");
  }
  if (c.synth.min_range > c.synth.max_range) {
    throw BadKey("synth.min_range", "synth.min_range exceeds synth.max_range");
  }
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const RunConfig& base, const std::string& source) {
  RunConfig c = base;
  VoxelDraft vd{c.voxel.range_min, c.voxel.range_max, c.voxel.voxel_size, c.voxel.max_points_per_voxel};
  auto table = fields(c, vd);
  std::map<std::string, std::pair<std::size_t, std::uint64_t>, std::less<>> seen;
  std::size_t number = 0;
  std::pair<std::size_t, std::uint64_t> voxel_at{0, 0};
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++number;
    std::string_view line = text.substr(start, end - start);
    const std::uint64_t offset = start;
    start = end + 1;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, number, offset, "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ParseError(source, number, offset, "unknown key '" + std::string(key) + "'");
    if (!seen.emplace(std::string(key), std::make_pair(number, offset)).second) {
      throw ParseError(source, number, offset, "repeated key '" + std::string(key) + "'");
    }
    try {
      it->set(line.substr(eq + 1));
    } catch (const BadValue& e) {
      throw ParseError(source, number, offset + eq + 1, std::string(key) + ": " + e.what());
    }
    if (key.starts_with("voxel.")) voxel_at = {number, offset};
  }
  const std::pair<std::size_t, std::uint64_t> eof{
      static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) + 1, text.size()};
  try {
    c.voxel = VoxelGridSpec::make(vd.range_min, vd.range_max, vd.size, vd.max_points);
  } catch (const std::invalid_argument& e) {
    const auto at = voxel_at.first ? voxel_at : eof;
    throw ParseError(source, at.first, at.second, e.what());
  }
  try {
    check_ranges(c);
  } catch (const BadKey& e) {
    auto it = seen.find(e.key);
    const auto at = it != seen.end() ? it->second : eof;
    throw ParseError(source, at.first, at.second, e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  return parse_run_config(read_file_bytes(path), base, path.string());
}

std::string format_run_config(const RunConfig& config) {
  RunConfig copy = config;
  VoxelDraft vd{copy.voxel.range_min, copy.voxel.range_max, copy.voxel.voxel_size,
                copy.voxel.max_points_per_voxel};
  std::string out;
  for (const auto& f : fields(copy, vd)) out += f.key + " = " + f.get() + "\n";
  return out;
}

}  // namespace cvf
