#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cvf/config.hpp"
#include "cvf/io.hpp"
#include "cvf/synthetic.hpp"
#include "support/calib.hpp"

using namespace cvf;

namespace {

const std::filesystem::path kData = std::filesystem::path(CVF_SOURCE_DIR) / "tests" / "data";

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cvf_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

const char* kIdentityCalib =
    "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
    "P2: 1 0 0 0 0 1 0 0 0 0 1 0\n"
    "R0_rect: 1 0 0 0 1 0 0 0 1\n"
    "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";

Calibration standard_axes() {
  Calibration c = check::kitti_like();
  c.R0.setIdentity();
  c.Tr << 0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0;
  return c;
}

VoxelGridSpec desk_spec() {
  return VoxelGridSpec::make(Vec3(0, -25.6, -3), Vec3(70.4, 25.6, 1), Vec3(0.2, 0.2, 0.4), 5);
}

}  // namespace

// ---------------------------------------------------------------- velodyne

TEST(Velodyne, SingleRecord) {
  const unsigned char raw[16] = {0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40,
                                 0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x00, 0x3F};
  const auto pts = parse_velodyne(std::string_view(reinterpret_cast<const char*>(raw), 16));
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].x, 1.0);
  EXPECT_EQ(pts[0].y, 2.0);
  EXPECT_EQ(pts[0].z, 3.0);
  EXPECT_EQ(pts[0].intensity, 0.5);
}

TEST(Velodyne, EmptyFile) {
  const auto path = scratch("empty.bin");
  write_file_bytes(path, "");
  EXPECT_TRUE(read_velodyne_bin(path).empty());
}

TEST(Velodyne, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-80.f, 80.f);
  std::vector<LidarPoint> pts;
  for (int i = 0; i < 1000; ++i) pts.push_back({u(rng), u(rng), u(rng), u(rng) / 80.f});
  const auto path = scratch("cloud.bin");
  write_velodyne_bin(path, pts);
  const std::string bytes = read_file_bytes(path);
  EXPECT_EQ(bytes.size(), 16000u);
  const auto back = read_velodyne_bin(path);
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(std::memcmp(&back[i].x, &pts[i].x, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&back[i].intensity, &pts[i].intensity, sizeof(double)), 0);
  }
  EXPECT_EQ(encode_velodyne(back), bytes);
}

TEST(Velodyne, TruncatedRecordReportsOffset) {
  std::string bytes = encode_velodyne(std::vector<LidarPoint>{{1, 2, 3, 0}, {4, 5, 6, 1}});
  bytes.resize(bytes.size() - 3);
  try {
    parse_velodyne(bytes, "scan.bin");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 16u);
    EXPECT_EQ(e.source(), "scan.bin");
  }
}

TEST(Velodyne, MissingFileThrows) {
  EXPECT_THROW(read_velodyne_bin(scratch("does_not_exist.bin")), std::runtime_error);
}

// ---------------------------------------------------------------- calibration

TEST(KittiCalib, IdentityFile) {
  const Calibration c = parse_kitti_calib(kIdentityCalib);
  const Calibration id = Calibration::identity();
  EXPECT_TRUE(c.P == id.P);
  EXPECT_TRUE(c.R0 == id.R0);
  EXPECT_TRUE(c.Tr == id.Tr);
}

TEST(KittiCalib, FormatParseRoundTrip) {
  const Calibration c = check::kitti_like();
  const Calibration back = parse_kitti_calib(format_kitti_calib(c));
  EXPECT_TRUE(back.P == c.P);
  EXPECT_TRUE(back.R0 == c.R0);
  EXPECT_TRUE(back.Tr == c.Tr);
}

TEST(KittiCalib, ExtraKeysAndBlankLinesAccepted) {
  std::string text = std::string("\n") + kIdentityCalib + "Tr_imu_to_velo: 1 0 0 0 0 1 0 0 0 0 1 0\n\n";
  EXPECT_NO_THROW(parse_kitti_calib(text));
}

TEST(KittiCalib, ErrorNamesTheLine) {
  try {
    parse_kitti_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 one\n", "c.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.offset(), 27u + 26u);
    EXPECT_NE(std::string(e.what()).find("c.txt:2"), std::string::npos);
  }
}

TEST(Malformed, CuratedFilesRejectedAtTheirLine) {
  std::ifstream manifest(kData / "malformed" / "MANIFEST");
  ASSERT_TRUE(manifest.good());
  std::string line;
  std::size_t checked = 0;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string file, kind;
    std::size_t expected = 0;
    row >> file >> kind >> expected;
    const auto path = kData / "malformed" / file;
    try {
      if (kind == "calib") {
        read_kitti_calib(path);
      } else {
        read_kitti_labels(path, check::kitti_like());
      }
      ADD_FAILURE() << file << " was accepted";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), expected) << file << ": " << e.what();
      EXPECT_NE(std::string(e.what()).find(file), std::string::npos);
    }
    ++checked;
  }
  EXPECT_EQ(checked, 20u);
}

// ---------------------------------------------------------------- labels

TEST(KittiLabels, DontCareSkippedAndFieldsRead) {
  const std::string text =
      "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n"
      "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n"
      "Pedestrian 0.00 1 0.21 423.17 173.67 433.17 224.03 1.87 0.50 0.90 -9.80 2.08 18.12 -0.30 0.8\n";
  const auto objs = parse_kitti_labels(text, check::kitti_like());
  ASSERT_EQ(objs.size(), 2u);
  EXPECT_EQ(objs[0].type, "Car");
  EXPECT_DOUBLE_EQ(objs[0].length, 3.64);
  EXPECT_FALSE(objs[0].score.has_value());
  EXPECT_EQ(objs[1].type, "Pedestrian");
  EXPECT_EQ(objs[1].occlusion, 1);
  ASSERT_TRUE(objs[1].score.has_value());
  EXPECT_DOUBLE_EQ(*objs[1].score, 0.8);
}

TEST(KittiLabels, StandardAxesMapping) {
  // Camera (x right, y down, z forward) = LiDAR (-y, -z, x).
  const Calibration c = standard_axes();
  const Box3D b = camera_to_lidar_box(Vec3(2, 1.5, 20), 1.5, 1.6, 4.0, 0.3, c);
  EXPECT_NEAR(b.center.x(), 20, 1e-12);
  EXPECT_NEAR(b.center.y(), -2, 1e-12);
  EXPECT_NEAR(b.center.z(), -0.75, 1e-12);
  EXPECT_NEAR(normalize_yaw(b.yaw - (-0.3 - kPi / 2)), 0, 1e-12);
  EXPECT_DOUBLE_EQ(b.l, 4.0);
  EXPECT_DOUBLE_EQ(b.w, 1.6);
}

TEST(KittiLabels, CameraLidarRoundTrip) {
  const Calibration c = check::kitti_like();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 loc(10 * u(rng), 1.6 + 0.2 * u(rng), 30 + 25 * u(rng));
    const double ry = 3 * u(rng);
    const Box3D b = camera_to_lidar_box(loc, 1.5, 1.6, 3.9, ry, c);
    const KittiObject back = lidar_box_to_kitti(b, "Car", c);
    EXPECT_LT((back.location - loc).norm(), 1e-6);
    // R0 tilts the up axis by 0.01 rad, so yaw only agrees to second order.
    EXPECT_LT(std::abs(normalize_yaw(back.rotation_y - ry)), 1e-4);
    const auto again = parse_kitti_labels(format_kitti_label(back), c);
    ASSERT_EQ(again.size(), 1u);
    EXPECT_LT((again[0].box.center - b.center).norm(), 1e-5);
  }
}

TEST(KittiLabels, YawRoundTripExactWithSharedUpAxis) {
  const Calibration c = standard_axes();
  for (double ry = -3.1; ry < 3.1; ry += 0.37) {
    const Box3D b = camera_to_lidar_box(Vec3(1, 1.6, 30), 1.5, 1.6, 3.9, ry, c);
    EXPECT_NEAR(normalize_yaw(lidar_box_to_kitti(b, "Car", c).rotation_y - ry), 0, 1e-12);
  }
}

TEST(KittiLabels, ProjectedBoxEnclosesCenter) {
  const Calibration c = check::kitti_like();
  const Box3D b(Vec3(25, 3, -0.9), 1.6, 3.9, 1.56, 0.4);
  const auto obj = lidar_box_to_kitti(b, "Car", c, 0.7);
  const auto px = project_to_image(b.center, c);
  ASSERT_TRUE(px.has_value());
  EXPECT_LT(obj.bbox[0], px->x);
  EXPECT_GT(obj.bbox[2], px->x);
  EXPECT_LT(obj.bbox[1], px->y);
  EXPECT_GT(obj.bbox[3], px->y);
  EXPECT_NE(format_kitti_label(obj).find(" 0.700000"), std::string::npos);
}

TEST(KittiLabels, DifficultyTiers) {
  KittiObject o;
  o.bbox = {0, 0, 10, 45};
  EXPECT_EQ(kitti_difficulty(o), Difficulty::Easy);
  o.occlusion = 1;
  EXPECT_EQ(kitti_difficulty(o), Difficulty::Moderate);
  o.occlusion = 2;
  EXPECT_EQ(kitti_difficulty(o), Difficulty::Hard);
  o.bbox = {0, 0, 10, 20};
  EXPECT_FALSE(kitti_difficulty(o).has_value());
  o = {};
  o.bbox = {0, 0, 10, 30};
  o.truncation = 0.4;
  EXPECT_EQ(kitti_difficulty(o), Difficulty::Hard);
}

// ---------------------------------------------------------------- netpbm

TEST(Netpbm, ColorImageChannels) {
  std::string bytes = "P6\n# comment\n2 1\n255\n";
  const unsigned char px[6] = {255, 0, 51, 0, 255, 102};
  bytes.append(reinterpret_cast<const char*>(px), 6);
  const Tensor t = parse_netpbm(bytes);
  ASSERT_EQ(t.shape(), (Shape{3, 1, 2}));
  EXPECT_DOUBLE_EQ(t[0], 1.0);
  EXPECT_DOUBLE_EQ(t[1], 0.0);
  EXPECT_DOUBLE_EQ(t[2], 0.0);
  EXPECT_DOUBLE_EQ(t[3], 1.0);
  EXPECT_DOUBLE_EQ(t[4], 0.2);
  EXPECT_DOUBLE_EQ(t[5], 0.4);
}

TEST(Netpbm, PgmRoundTrip) {
  GrayImage img{3, 2, {0, 1, 2, 128, 254, 255}};
  const auto back = decode_pgm(encode_pgm(img));
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Netpbm, TruncatedAndWrongMagicRejected) {
  EXPECT_THROW(parse_netpbm(std::string("P5\n4 4\n255\n") + "abc"), ParseError);
  EXPECT_THROW(parse_netpbm("P3\n1 1\n255\n0 0 0\n"), ParseError);
  EXPECT_THROW(parse_netpbm("P5\n1 1\n65535\n\x01\x02"), ParseError);
}

// ---------------------------------------------------------------- synthetic

TEST(Synthetic, EmptySceneIsGroundOnly) {
  SyntheticConfig cfg;
  cfg.n_objects = 0;
  const auto s = generate_synthetic_scene(1, cfg, desk_spec());
  EXPECT_TRUE(s.gt_boxes.empty());
  ASSERT_FALSE(s.points.empty());
  for (const auto& p : s.points) EXPECT_NEAR(p.z, cfg.ground_z, 0.15);
}

TEST(Synthetic, DeterministicGivenSeed) {
  SyntheticConfig cfg;
  const auto a = generate_synthetic_scene(42, cfg, desk_spec());
  const auto b = generate_synthetic_scene(42, cfg, desk_spec());
  EXPECT_EQ(encode_velodyne(a.points), encode_velodyne(b.points));
  ASSERT_EQ(a.gt_boxes.size(), b.gt_boxes.size());
  const auto fa = a.cameras[0].view.features.values(), fb = b.cameras[0].view.features.values();
  EXPECT_TRUE(std::equal(fa.begin(), fa.end(), fb.begin(), fb.end()));
  const auto c = generate_synthetic_scene(43, cfg, desk_spec());
  EXPECT_NE(encode_velodyne(a.points), encode_velodyne(c.points));
}

TEST(Synthetic, BoxesDisjointInRangeAndVisible) {
  SyntheticConfig cfg;
  cfg.n_objects = 6;
  cfg.clutter_objects = 3;
  const auto spec = desk_spec();
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = generate_synthetic_scene(seed, cfg, spec);
    EXPECT_EQ(s.gt_boxes.size(), cfg.n_objects);
    for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
      EXPECT_TRUE(box_in_range(s.gt_boxes[i], spec));
      for (std::size_t j = i + 1; j < s.gt_boxes.size(); ++j) {
        EXPECT_EQ(bev_iou(s.gt_boxes[i], s.gt_boxes[j]), 0.0);
      }
      const auto px = project_to_image(s.gt_boxes[i].center, s.cameras[0].view.calib);
      ASSERT_TRUE(px.has_value());
      EXPECT_GE(px->x, 0);
      EXPECT_LT(px->x, 1242);
    }
  }
}

TEST(Synthetic, NearBoxesGetAtLeastFiftyPoints) {
  SyntheticConfig cfg;
  cfg.n_objects = 4;
  cfg.max_range = 20;
  EXPECT_GE(surface_point_count(19.999, cfg), 50u);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_synthetic_scene(seed, cfg, desk_spec());
    for (const auto& b : s.gt_boxes) {
      ASSERT_LT(b.center.head<2>().norm(), 20.0);
      std::size_t inside = 0;
      for (const auto& p : s.points) inside += b.contains(p.xyz(), 1e-9) ? 1 : 0;
      EXPECT_GE(inside, 50u);
    }
  }
}

TEST(Synthetic, CameraSignatureAtObjectCenter) {
  SyntheticConfig cfg;
  cfg.camera_noise = 0.0;
  const auto s = generate_synthetic_scene(5, cfg, desk_spec());
  const auto& view = s.cameras[0].view;
  const std::size_t h = view.features.dim(1), w = view.features.dim(2);
  EXPECT_EQ(h, 47u);
  EXPECT_EQ(w, 156u);
  for (const auto& b : s.gt_boxes) {
    const auto q = project_to_feature(b.center, view.calib, view.stride);
    ASSERT_TRUE(q.has_value());
    const auto col = static_cast<std::size_t>(std::floor(q->x()));
    const auto row = static_cast<std::size_t>(std::floor(q->y()));
    EXPECT_DOUBLE_EQ(view.features[row * w + col], cfg.camera_signal);
  }
}

TEST(Synthetic, NoiseModeCarriesNoSignature) {
  SyntheticConfig cfg;
  cfg.camera_mode = CameraMode::Noise;
  const auto s = generate_synthetic_scene(5, cfg, desk_spec());
  double sum = 0, sq = 0;
  const auto v = s.cameras[0].view.features.values();
  for (double x : v) {
    sum += x;
    sq += x * x;
  }
  const double n = static_cast<double>(v.size());
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

// ---------------------------------------------------------------- augmentation

TEST(Augment, IdentityDrawLeavesSampleUnchanged) {
  const auto s = generate_synthetic_scene(2, SyntheticConfig{}, desk_spec());
  const auto t = apply_augmentation(s, AugmentDraw{});
  EXPECT_EQ(encode_velodyne(s.points), encode_velodyne(t.points));
  for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
    EXPECT_EQ(s.gt_boxes[i].center, t.gt_boxes[i].center);
    EXPECT_EQ(s.gt_boxes[i].yaw, t.gt_boxes[i].yaw);
  }
  EXPECT_TRUE(s.cameras[0].view.calib.Tr == t.cameras[0].view.calib.Tr);
}

TEST(Augment, RotationDrawsStayInBounds) {
  AugmentBounds bounds;
  std::size_t flips = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto d = draw_augmentation(seed, bounds);
    ASSERT_GE(d.rotation, -kPi / 4);
    ASSERT_LE(d.rotation, kPi / 4);
    ASSERT_GE(d.scale, 0.95);
    ASSERT_LE(d.scale, 1.05);
    flips += d.flip ? 1 : 0;
  }
  EXPECT_GT(flips, 4500u);
  EXPECT_LT(flips, 5500u);
}

TEST(Augment, BoxesKeepTheirMemberPointsAndProjections) {
  SyntheticConfig cfg;
  cfg.n_objects = 4;
  const auto s = generate_synthetic_scene(9, cfg, desk_spec());
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto draw = draw_augmentation(seed, AugmentBounds{});
    const auto t = apply_augmentation(s, draw);
    ASSERT_EQ(t.points.size(), s.points.size());
    for (std::size_t b = 0; b < s.gt_boxes.size(); ++b) {
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        const bool before = s.gt_boxes[b].contains(s.points[i].xyz(), 1e-9);
        if (before) EXPECT_TRUE(t.gt_boxes[b].contains(t.points[i].xyz(), 1e-9));
        if (!s.gt_boxes[b].contains(s.points[i].xyz(), 0.05)) {
          EXPECT_FALSE(t.gt_boxes[b].contains(t.points[i].xyz(), 0.0));
        }
      }
    }
    for (std::size_t i = 0; i < s.points.size(); i += 97) {
      const auto a = project_to_image(s.points[i].xyz(), s.cameras[0].view.calib);
      const auto c = project_to_image(t.points[i].xyz(), t.cameras[0].view.calib);
      ASSERT_EQ(a.has_value(), c.has_value());
      if (a) {
        EXPECT_NEAR(a->x, c->x, 1e-6);
        EXPECT_NEAR(a->y, c->y, 1e-6);
        EXPECT_NEAR(a->depth, c->depth, 1e-9);
      }
    }
  }
}

// ---------------------------------------------------------------- config

TEST(RunConfig, DefaultsMatchKittiSetup) {
  const RunConfig c;
  EXPECT_EQ(c.voxel.dims, (std::array<std::size_t, 3>{1408, 1600, 40}));
  EXPECT_EQ(c.voxel.bev_height(), 200u);
  EXPECT_EQ(c.voxel.bev_width(), 176u);
  EXPECT_EQ(c.detect.rpn_nms_iou, 0.7);
  EXPECT_EQ(c.loss.beta1, 1.0);
  EXPECT_EQ(c.loss.beta2, 2.0);
  EXPECT_EQ(c.loss.alpha, 0.25);
  EXPECT_EQ(c.loss.gamma, 2.0);
  EXPECT_EQ(c.anchors.yaws.size(), 2u);
  EXPECT_EQ(c.augment.max_rotation, kPi / 4);
  EXPECT_EQ(c.augment.scale_min, 0.95);
  EXPECT_EQ(c.augment.scale_max, 1.05);
  EXPECT_EQ(c.eval_iou, 0.7);
}

TEST(RunConfig, FormatParseRoundTrip) {
  RunConfig c;
  c.seed = 17;
  c.synth.camera_mode = CameraMode::Noise;
  c.model.use_camera = false;
  c.anchors.yaws = {0.1, 1.2, 2.3};
  const std::string text = format_run_config(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(format_run_config(back), text);
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.synth.camera_mode, CameraMode::Noise);
  EXPECT_FALSE(back.model.use_camera);
}

TEST(RunConfig, OverridesAndComments) {
  const RunConfig c = parse_run_config(
      "# desk grid\n"
      "voxel.range_min = 0, -12.8, -3\n"
      "voxel.range_max = 25.6, 12.8, 1   # trailing comment\n"
      "voxel.size = 0.2,0.2,0.4\n"
      "\n"
      "roi.r = 2\n");
  EXPECT_EQ(c.voxel.dims, (std::array<std::size_t, 3>{128, 128, 10}));
  EXPECT_EQ(c.model.roi_r, 2u);
  EXPECT_EQ(c.model.roi_grid, 6u);
}

TEST(RunConfig, ErrorsArePositioned) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_run_config(text, {}, "x.cfg");
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("seed = 1\nbogus.key = 3\n"), 2u);
  EXPECT_EQ(line_of("\n\nroi.r = three\n"), 3u);
  EXPECT_EQ(line_of("roi.r = 0\n"), 1u);
  EXPECT_EQ(line_of("seed = 1\nseed = 2\n"), 2u);
  EXPECT_EQ(line_of("seed 1\n"), 1u);
  EXPECT_EQ(line_of("seed = 1\nvoxel.size = 0.3,0.05,0.1\n"), 2u);
  EXPECT_EQ(line_of("assign.pos_iou = 0.3\n"), 1u);
  EXPECT_EQ(line_of("seed = 1\n\neval.iou = 1.5\n"), 3u);
}

TEST(RunConfig, CheckedInFilesLoad) {
  const auto root = std::filesystem::path(CVF_SOURCE_DIR) / "configs";
  const RunConfig kitti = load_run_config(root / "kitti.cfg");
  EXPECT_EQ(format_run_config(kitti), format_run_config(RunConfig{}));
  const RunConfig desk = load_run_config(root / "desk.cfg");
  EXPECT_EQ(desk.voxel.bev_height() * kBevStride, desk.voxel.ny());
  EXPECT_EQ(desk.loss.beta2, 2.0);
  const RunConfig fusion = load_run_config(root / "fusion_benefit.cfg");
  EXPECT_EQ(fusion.voxel.bev_height(), 32u);
  EXPECT_EQ(fusion.voxel.bev_width(), 44u);
  EXPECT_EQ(fusion.train.scenes, 40u);
  EXPECT_EQ(fusion.eval_iou, 0.5);
}
