#include "cvf/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace cvf {

namespace {

double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

BevFeatureMap joint_map(const ForwardPass& pass) {
  BevFeatureMap m = pass.lidar.final();
  m.features = pass.fusion.joint;
  return m;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(rows.size() * d);
  for (std::size_t r : rows)
    for (std::size_t c = 0; c < d; ++c) idx.push_back(r * d + c);
  return gather(x, idx, {rows.size(), d});
}

}  // namespace

CvfModel::CvfModel(const RunConfig& config) : config_(config) {
  const auto& m = config_.model;
  std::mt19937_64 rng(config_.seed);
  lidar_ = std::make_unique<LidarBackbone>(params_, config_.voxel, m.lidar, rng);
  camera_backbone_ = std::make_unique<CameraBackbone>(params_, 3, m.camera_backbone, rng);
  grid_ = CameraVoxelGrid::from_spec(config_.voxel, m.camera_slabs);
  offsets_ = OffsetField::create(params_, "camera.offsets", m.offset_tiles_y, m.offset_tiles_x);
  compressor_ = CameraBevCompressor::create(params_, "camera.compress", m.camera_channels,
                                            m.camera_bev_channels, rng);
  const std::size_t c_lidar = lidar_->out_channels();
  const std::size_t c_joint = m.camera_bev_channels + c_lidar;
  fusion_ = GatedFusion::create(params_, "fusion", m.camera_bev_channels, c_lidar, rng);
  rpn_ = RpnHead::create(params_, "rpn", c_joint, m.rpn_hidden, config_.anchors.yaws.size(), rng);
  const auto stages = lidar_->stage_channels();
  for (std::size_t s = 0; s < stages.size(); ++s) {
    lidar_pool_.push_back(SetEncoder::create(params_, "roi.lidar" + std::to_string(s), stages[s],
                                             m.roi_encoder_width, rng));
  }
  camera_pool_ = SetEncoder::create(params_, "roi.camera", m.camera_channels, m.roi_encoder_width, rng);
  const std::size_t g2 = m.roi_grid * m.roi_grid;
  const std::size_t head_in = g2 * c_joint + (stages.size() + m.cameras) * m.roi_encoder_width;
  head_ = RefineHead::create(params_, "refine", head_in, m.refine_hidden, rng);
  anchors_ = make_anchors(config_.voxel, config_.anchors);
}

PreparedScene CvfModel::prepare(const SceneSample& sample) const {
  if (sample.cameras.size() != config_.model.cameras) {
    throw std::invalid_argument("scene has " + std::to_string(sample.cameras.size()) +
                                " cameras, model expects " + std::to_string(config_.model.cameras));
  }
  PreparedScene p;
  p.voxels = prepare_voxel_inputs(voxelize(sample.points, config_.voxel, config_.seed), config_.voxel);
  p.cameras = sample.cameras;
  for (const auto& b : sample.gt_boxes) {
    if (config_.voxel.voxel_of(b.center)) p.gts.push_back(b);
  }
  p.targets = assign_targets(anchors_, p.gts, config_.detect.assign_pos_iou,
                             config_.detect.assign_neg_iou);
  return p;
}

Tensor CvfModel::camera_features(const CameraInput& cam) const {
  Tensor f = cam.raw_image ? (*camera_backbone_)(cam.view.features) : cam.view.features;
  if (f.rank() != 3 || f.dim(0) != config_.model.camera_channels) {
    throw ShapeError("camera features " + shape_str(f.shape()) + " do not have " +
                     std::to_string(config_.model.camera_channels) + " channels");
  }
  return f;
}

ProjectedCameraBev CvfModel::project_camera(const std::vector<CameraView>& views,
                                            bool use_offsets) const {
  ProjectionOptions opt;
  opt.use_offsets = use_offsets;
  return auto_calibrated_project(views, grid_, &offsets_, opt);
}

ForwardPass CvfModel::forward(const PreparedScene& scene) const {
  const auto& m = config_.model;
  ForwardPass pass;
  pass.lidar = (*lidar_)(scene.voxels);
  const Tensor& lidar_bev = pass.lidar.final().features;
  for (const auto& cam : scene.cameras) {
    pass.views.push_back({camera_features(cam), cam.view.calib, static_cast<double>(kBevStride)});
  }
  if (m.use_camera) {
    pass.camera_bev = compressor_(project_camera(pass.views, m.use_offsets).features);
  } else {
    pass.camera_bev = Tensor::zeros({m.camera_bev_channels, lidar_bev.dim(1), lidar_bev.dim(2)});
  }
  pass.fusion = fusion_(pass.camera_bev, lidar_bev);
  pass.rpn = rpn_(pass.fusion.joint);
  return pass;
}

std::vector<Proposal> CvfModel::proposals(const ForwardPass& pass) const {
  const auto& d = config_.detect;
  auto all = decode_proposals(pass.rpn, anchors_, d.pre_nms_top_k);
  std::vector<Proposal> kept;
  for (std::size_t i : nms(all, d.rpn_nms_iou, d.rpn_max_keep)) kept.push_back(all[i]);
  return kept;
}

RefineOutput CvfModel::refine(const ForwardPass& pass, const RefineInputs& in) const {
  const auto& m = config_.model;
  const std::size_t k = in.boxes.size();
  std::vector<Tensor> pieces;
  pieces.push_back(roi_align_rows(joint_map(pass), in.boxes, m.roi_grid));
  pieces.push_back(roi_lidar_pool(pass.lidar.scales, in.boxes, m.roi_grid, lidar_pool_));
  if (m.use_camera && !in.mask_camera) {
    const std::vector<SetEncoder> encoders(pass.views.size(), camera_pool_);
    pieces.push_back(roi_grid_camera_pool(in.boxes, m.roi_r, pass.views, encoders));
  } else {
    pieces.push_back(Tensor::zeros({k, m.cameras * m.roi_encoder_width}));
  }
  return head_(pieces);
}

LossBreakdown CvfModel::loss(const PreparedScene& scene) const {
  const ForwardPass pass = forward(scene);
  std::vector<Box3D> boxes;
  for (const auto& p : proposals(pass)) boxes.push_back(p.box);
  return loss(scene, pass, boxes);
}

LossBreakdown CvfModel::loss(const PreparedScene& scene, std::span<const Box3D> proposals) const {
  return loss(scene, forward(scene), proposals);
}

LossBreakdown CvfModel::loss(const PreparedScene& scene, const ForwardPass& pass,
                             std::span<const Box3D> proposals) const {
  const auto& w = config_.loss;
  const auto& d = config_.detect;
  LossBreakdown out;

  // First stage.
  const Tensor prob = sigmoid(reshape(pass.rpn.logits, {pass.rpn.logits.numel()}));
  const Tensor cls = focal_loss(prob, scene.targets.label, w);
  std::vector<std::size_t> offsets;
  std::vector<Residual> rpn_targets;
  for (std::size_t i = 0; i < scene.targets.label.size(); ++i) {
    if (scene.targets.label[i] != 1) continue;
    const auto o = residual_offsets(anchors_, i);
    offsets.insert(offsets.end(), o.begin(), o.end());
    rpn_targets.push_back(scene.targets.residual[i]);
  }
  Tensor angle = Tensor::scalar(0), loc = Tensor::scalar(0);
  if (!rpn_targets.empty()) {
    const Tensor pred = gather(pass.rpn.residuals, offsets, {rpn_targets.size(), 7});
    angle = reg_loss_angle(pred, rpn_targets);
    loc = reg_loss_loc(pred, rpn_targets);
  }
  const Tensor l_rpn = weighted_detection_loss(cls, angle, loc, w);
  out.positives = rpn_targets.size();
  out.rpn_cls = cls.item();
  out.rpn_angle = angle.item();
  out.rpn_loc = loc.item();
  out.rpn = l_rpn.item();

  // Second stage on the proposals plus the ground truth boxes.
  RefineInputs in;
  in.boxes.assign(proposals.begin(), proposals.end());
  in.boxes.insert(in.boxes.end(), scene.gts.begin(), scene.gts.end());
  const RefineOutput ref = refine(pass, in);
  std::vector<double> soft(in.boxes.size());
  std::vector<std::size_t> pos_rows;
  std::vector<Residual> ref_targets;
  for (std::size_t k = 0; k < in.boxes.size(); ++k) {
    double best = 0;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < scene.gts.size(); ++g) {
      const double iou = iou_3d(in.boxes[k], scene.gts[g]);
      if (iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    soft[k] = iou_soft_target(best, d.iou_target_lo, d.iou_target_hi);
    if (!scene.gts.empty() && best >= d.refine_pos_iou) {
      pos_rows.push_back(k);
      ref_targets.push_back(encode_box_residual(scene.gts[best_gt], in.boxes[k]));
    }
  }
  const Tensor conf = iou_confidence_loss(ref.confidence, soft);
  Tensor ref_angle = Tensor::scalar(0), ref_loc = Tensor::scalar(0);
  if (!pos_rows.empty()) {
    const Tensor pred = gather_rows(ref.residuals, pos_rows);
    ref_angle = reg_loss_angle(pred, ref_targets);
    ref_loc = reg_loss_loc(pred, ref_targets);
  }
  const Tensor l_ref = weighted_detection_loss(conf, ref_angle, ref_loc, w);
  out.refine_positives = pos_rows.size();
  out.ref_iou = conf.item();
  out.ref_angle = ref_angle.item();
  out.ref_loc = ref_loc.item();
  out.refine = l_ref.item();
  out.total = add(l_rpn, l_ref);
  return out;
}

std::vector<Detection> CvfModel::detect(const PreparedScene& scene) const {
  const auto& d = config_.detect;
  const ForwardPass pass = forward(scene);
  const auto props = proposals(pass);
  if (props.empty()) return {};
  RefineInputs in;
  for (const auto& p : props) in.boxes.push_back(p.box);
  const RefineOutput ref = refine(pass, in);
  const auto conf = ref.confidence.values();
  const auto res = ref.residuals.values();
  std::vector<Proposal> refined;
  for (std::size_t k = 0; k < props.size(); ++k) {
    const double score = sigmoid_value(conf[k]);
    if (score < d.score_threshold) continue;
    Residual r;
    for (std::size_t j = 0; j < 7; ++j) r(j) = res[k * 7 + j];
    for (std::size_t j = 3; j < 6; ++j) r(j) = std::clamp(r(j), -4.0, 4.0);
    Box3D box = decode_box_residual(r, props[k].box);
    box.yaw = normalize_yaw(box.yaw);
    refined.push_back({box, score, props[k].anchor});
  }
  std::vector<Detection> out;
  for (std::size_t i : nms(refined, d.final_nms_iou, d.max_detections)) {
    out.push_back({refined[i].box, refined[i].score, "Car"});
  }
  return out;
}

Trainer::Trainer(CvfModel& model, double learning_rate)
    : model_(model), adam_(Adam::Options{learning_rate}) {}

LossBreakdown Trainer::step(const PreparedScene& scene) {
  model_.params().zero_grad();
  LossBreakdown lb = model_.loss(scene);
  backward(lb.total);
  adam_.step(model_.params());
  return lb;
}

double mean_camera_attention(const ForwardPass& pass) {
  const auto v = pass.fusion.camera_attention.values();
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace cvf
