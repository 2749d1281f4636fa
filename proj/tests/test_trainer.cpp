#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fusionsplat/metrics.hpp"
#include "fusionsplat/rasterizer.hpp"
#include "fusionsplat/trainer.hpp"
#include "test_util.hpp"

using namespace fsplat;
using namespace fsplat::testutil;
using doctest::Approx;

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("fusionsplat_trainer_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

// Small analytic dataset shared by the training tests.
SensorDataset tiny_dataset(double motion_scale = 1.0) {
  TinySceneSpec spec;
  spec.resolution = 20;
  spec.views = 2;
  spec.timestamps = 3;
  spec.sim_fps = 40;
  spec.motion_scale = motion_scale;
  return generate_tiny_scene(spec);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.total_steps = 10;
  cfg.static_steps = 3;
  cfg.init_points = 120;
  cfg.grid.res_spatial = 8;
  cfg.grid.res_time = 4;
  cfg.grid.features = 4;
  cfg.decoder.hidden = 16;
  cfg.decoder.layers = 2;
  cfg.decoder.k_max = 2;
  cfg.seed = 7;
  return cfg;
}

template <typename T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

std::vector<double> decoder_params(const DeformDecoder& dec) {
  std::vector<double> out;
  dec.for_each_param([&](const std::vector<double>& p) {
    out.insert(out.end(), p.begin(), p.end());
  });
  return out;
}

bool same_adam(const AdamState& a, const AdamState& b) {
  return a.t == b.t && bitwise_equal(a.m, b.m) && bitwise_equal(a.v, b.v);
}

// Bit-level equality of two complete training states.
bool same_state(const TrainState& a, const TrainState& b) {
  bool ok = a.step == b.step && a.rng == b.rng &&
            a.gaussians.size() == b.gaussians.size();
  ok = ok && bitwise_equal(a.gaussians.mu, b.gaussians.mu);
  ok = ok && bitwise_equal(a.gaussians.rot, b.gaussians.rot);
  ok = ok && bitwise_equal(a.gaussians.log_scale, b.gaussians.log_scale);
  ok = ok && bitwise_equal(a.gaussians.opacity_logit, b.gaussians.opacity_logit);
  ok = ok && bitwise_equal(a.gaussians.color_logit, b.gaussians.color_logit);
  for (int p = 0; p < kPlaneCount; ++p) {
    ok = ok && bitwise_equal(a.field.grids.planes[p].data,
                             b.field.grids.planes[p].data);
    ok = ok && same_adam(a.opt.planes[p], b.opt.planes[p]);
  }
  ok = ok && bitwise_equal(decoder_params(a.field.decoder),
                           decoder_params(b.field.decoder));
  ok = ok && same_adam(a.opt.mu, b.opt.mu) && same_adam(a.opt.rot, b.opt.rot);
  ok = ok && same_adam(a.opt.log_scale, b.opt.log_scale);
  ok = ok && same_adam(a.opt.opacity, b.opt.opacity);
  ok = ok && same_adam(a.opt.color, b.opt.color);
  ok = ok && a.opt.decoder.size() == b.opt.decoder.size();
  for (size_t i = 0; ok && i < a.opt.decoder.size(); ++i) {
    ok = same_adam(a.opt.decoder[i], b.opt.decoder[i]);
  }
  ok = ok && bitwise_equal(a.densify.grad_sum, b.densify.grad_sum);
  ok = ok && bitwise_equal(a.densify.visits, b.densify.visits);
  return ok;
}

}  // namespace

TEST_CASE("config files parse with comments and unknown keys are refused") {
  TempDir tmp("cfg");
  {
    std::ofstream out(tmp.file("train.cfg"));
    out << "# training schedule\n";
    out << "total_steps 1200\n";
    out << "static_steps 150\n\n";
    out << "lambda_event 0.35\n";
    out << "window_max 0.02\n";
    out << "lr_mu 3e-4\n";
    out << "grid_res_spatial 24\n";
    out << "decoder_hidden 48\n";
    out << "seed 99\n";
    out << "background 0.1 0.2 0.3\n";
  }
  TrainConfig cfg = parse_train_config(tmp.file("train.cfg"));
  CHECK(cfg.total_steps == 1200);
  CHECK(cfg.static_steps == 150);
  CHECK(cfg.lambda_event == 0.35);
  CHECK(cfg.window_max == 0.02);
  CHECK(cfg.lr_mu == 3e-4);
  CHECK(cfg.grid.res_spatial == 24);
  CHECK(cfg.decoder.hidden == 48);
  CHECK(cfg.seed == 99);
  CHECK(cfg.background_override);
  CHECK(cfg.background == Vector3d(0.1, 0.2, 0.3));
  // Untouched keys keep their defaults.
  CHECK(cfg.lambda_rgb == 1.0);
  CHECK(cfg.densify_interval == 200);

  {
    std::ofstream out(tmp.file("bad.cfg"));
    out << "total_steps 100\n";
    out << "warp_speed 9\n";
  }
  CHECK_THROWS_WITH_AS(parse_train_config(tmp.file("bad.cfg")),
                       doctest::Contains("warp_speed"), validation_error);
  {
    std::ofstream out(tmp.file("bad2.cfg"));
    out << "total_steps banana\n";
  }
  CHECK_THROWS_AS(parse_train_config(tmp.file("bad2.cfg")), validation_error);
}

TEST_CASE("config validation rejects inconsistent schedules") {
  TrainConfig cfg;
  cfg.static_steps = cfg.total_steps + 1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("static_steps"),
                       validation_error);
  cfg = TrainConfig{};
  cfg.window_min = 0.1;
  cfg.window_max = 0.05;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("window_min"),
                       validation_error);
  cfg = TrainConfig{};
  cfg.split_scale_shrink = 1.0;
  CHECK_THROWS_AS(cfg.validate(), validation_error);
  TrainConfig{}.validate();  // defaults are self-consistent
}

TEST_CASE("color error is the mean absolute difference") {
  Image gt(4, 3, 3, 0.4);
  Image pred = gt;
  CHECK(rgb_l1(pred, gt, nullptr, 1.0) == 0.0);

  for (double& v : pred.data) v += 0.1;
  CHECK(rgb_l1(pred, gt, nullptr, 1.0) == Approx(0.1).epsilon(1e-12));

  // Half the values offset by 0.2, the rest exact.
  pred = gt;
  for (size_t i = 0; i < pred.data.size() / 2; ++i) pred.data[i] += 0.2;
  CHECK(rgb_l1(pred, gt, nullptr, 1.0) == Approx(0.1).epsilon(1e-12));

  CHECK_THROWS_AS(rgb_l1(Image(2, 2, 3), gt, nullptr, 1.0), validation_error);
}

TEST_CASE("color error gradient matches finite differences") {
  Rng rng(51);
  Image gt(3, 3, 3), pred(3, 3, 3);
  for (double& v : gt.data) v = rng.uniform(0.0, 1.0);
  for (size_t i = 0; i < pred.data.size(); ++i) {
    // Keep residuals away from the |x| kink so the difference quotient
    // stays one-sided.
    double off = rng.uniform(0.05, 0.3) * (rng.uniform() < 0.5 ? -1 : 1);
    pred.data[i] = gt.data[i] + off;
  }
  Image d_pred;
  double upstream = 0.7;
  rgb_l1(pred, gt, &d_pred, upstream);
  GradCheck check;
  auto loss = [&]() { return upstream * rgb_l1(pred, gt, nullptr, 1.0); };
  for (size_t i = 0; i < pred.data.size(); ++i) {
    check.add("pred[" + std::to_string(i) + "]", d_pred.data[i],
              central_diff(loss, &pred.data[i]));
  }
  INFO("worst coordinate: ", check.worst);
  CHECK(check.max_err < 1e-3);
}

TEST_CASE("depth error ignores pixels without ground truth") {
  Image gt(4, 2, 1, 2.0);
  gt.at(0, 0) = 0.0;  // invalid
  gt.at(1, 3) = 0.0;  // invalid
  Image pred(4, 2, 1, 2.05);
  CHECK(depth_l1(pred, gt, nullptr, 1.0) == Approx(0.05).epsilon(1e-12));

  // Error only on invalid pixels scores zero.
  pred = gt;
  pred.at(0, 0) = 9.0;
  pred.at(1, 3) = -3.0;
  CHECK(depth_l1(pred, gt, nullptr, 1.0) == 0.0);

  // Gradient never touches invalid pixels.
  Image d_pred;
  pred = Image(4, 2, 1, 2.4);
  depth_l1(pred, gt, &d_pred, 1.0);
  CHECK(d_pred.at(0, 0) == 0.0);
  CHECK(d_pred.at(1, 3) == 0.0);
  CHECK(d_pred.at(0, 1) != 0.0);

  bool empty = false;
  Image none(4, 2, 1, 0.0);
  CHECK(depth_l1(pred, none, nullptr, 1.0, &empty) == 0.0);
  CHECK(empty);
}

TEST_CASE("the total objective is the weighted component sum") {
  TrainConfig cfg;
  LossBreakdown parts;
  CHECK(total_loss(parts, cfg) == 0.0);

  cfg.lambda_rgb = 1.0;
  cfg.lambda_event = 0.0;
  cfg.lambda_depth = 0.0;
  cfg.lambda_smooth = 0.0;
  parts.rgb = 0.3;
  CHECK(total_loss(parts, cfg) == 0.3);

  cfg.lambda_event = 0.1;
  cfg.lambda_depth = 0.5;
  cfg.lambda_smooth = 0.01;
  parts.rgb = 0.2;
  parts.event = 1.0;
  parts.depth = 0.1;
  parts.smooth = 2.0;
  CHECK(total_loss(parts, cfg) == Approx(0.37).epsilon(1e-12));

  parts.event = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(total_loss(parts, cfg), numeric_error);
}

TEST_CASE("initialization back-projects the earliest depth frame") {
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  TrainState state = init_training(ds, cfg);

  size_t n = state.gaussians.size();
  CHECK(n >= 25);  // the 20x20 probe has ~30 pixels with surface depth
  CHECK(n <= 2 * static_cast<size_t>(cfg.init_points));

  // The seeding frame: first train frame at the earliest timestamp.
  const FrameRecord& depth0 = ds.depth[0];
  CHECK(depth0.cam.timestamp == 0.0);
  const FrameRecord& rgb0 = ds.rgb[0];

  double opacity_logit = logit(cfg.init_opacity);
  for (size_t i = 0; i < n; ++i) {
    Gaussian g = state.gaussians.get(i);
    CHECK(g.rot == Vector4d(1, 0, 0, 0));
    CHECK(g.opacity_logit == opacity_logit);

    // Every point projects back onto a pixel whose recorded depth it carries.
    Vector3d pc = depth0.cam.to_camera(g.mu);
    int px = static_cast<int>(std::lround(
        depth0.cam.fx * pc[0] / pc[2] + depth0.cam.cx - kPixelCenter));
    int py = static_cast<int>(std::lround(
        depth0.cam.fy * pc[1] / pc[2] + depth0.cam.cy - kPixelCenter));
    REQUIRE(px >= 0);
    REQUIRE(px < depth0.image.width);
    REQUIRE(py >= 0);
    REQUIRE(py < depth0.image.height);
    CHECK(pc[2] == Approx(depth0.image.at(py, px)).epsilon(1e-9));
    // Colors come from the co-registered rgb frame.
    for (int c = 0; c < 3; ++c) {
      double col = std::clamp(rgb0.image.at(py, px, c), 0.002, 0.998);
      CHECK(sigmoid(g.color_logit[c]) == Approx(col).epsilon(1e-9));
    }
  }

  // Deformation starts as the identity: zero heads, near-zero grids.
  for (double v : state.field.decoder.head_mu_w) CHECK(v == 0.0);
  for (double v : state.field.decoder.head_scale_b) CHECK(v == 0.0);
  for (double v : state.field.decoder.head_rot_b) CHECK(v == 0.0);
  for (const FeaturePlane& p : state.field.grids.planes) {
    for (double v : p.data) CHECK(std::abs(v) <= 1e-4);
  }
  // The field's box covers every seeded point.
  for (size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      CHECK(state.gaussians.mu[i][a] >= state.field.grids.bbox_lo[a]);
      CHECK(state.gaussians.mu[i][a] <= state.field.grids.bbox_hi[a]);
    }
  }
  CHECK(state.densify.grad_sum.size() == n);
  CHECK(state.step == 0);
  CHECK(state.opt.decoder.size() > 0);
}

TEST_CASE("zero loss weights leave parameters untouched") {
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.lambda_rgb = 0;
  cfg.lambda_event = 0;
  cfg.lambda_depth = 0;
  cfg.lambda_smooth = 0;
  cfg.static_steps = 1;  // cover both phases
  TrainState state = init_training(ds, cfg);
  std::vector<Vector3d> mu0 = state.gaussians.mu;
  std::vector<Vector4d> rot0 = state.gaussians.rot;
  std::vector<double> dec0 = decoder_params(state.field.decoder);

  for (int i = 0; i < 3; ++i) {
    // The unweighted components are still reported for logging; only the
    // combined objective collapses to zero.
    CHECK(train_step(state, ds, cfg).total == 0.0);
  }
  CHECK(bitwise_equal(state.gaussians.mu, mu0));
  CHECK(bitwise_equal(state.gaussians.rot, rot0));
  CHECK(bitwise_equal(decoder_params(state.field.decoder), dec0));
  CHECK(state.opt.mu.t == 3);  // the optimizer still counted its steps
  CHECK(state.step == 3);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  TrainState a = init_training(ds, cfg);
  TrainState b = init_training(ds, cfg);
  REQUIRE(same_state(a, b));
  for (int i = 0; i < 5; ++i) {
    LossBreakdown la = train_step(a, ds, cfg);
    LossBreakdown lb = train_step(b, ds, cfg);
    CHECK(std::memcmp(&la.total, &lb.total, 8) == 0);
  }
  CHECK(same_state(a, b));
}

TEST_CASE("worker count does not change the training trajectory") {
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  TrainState a = init_training(ds, cfg);
  TrainState b = init_training(ds, cfg);
  ThreadPool pool3(3);
  for (int i = 0; i < 4; ++i) {
    train_step(a, ds, cfg, nullptr);
    train_step(b, ds, cfg, &pool3);
  }
  CHECK(same_state(a, b));
}

TEST_CASE("phase one never touches the deformation field") {
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.static_steps = 3;
  TrainState state = init_training(ds, cfg);
  std::vector<double> dec0 = decoder_params(state.field.decoder);
  std::array<std::vector<double>, kPlaneCount> grids0;
  for (int p = 0; p < kPlaneCount; ++p) {
    grids0[p] = state.field.grids.planes[p].data;
  }

  for (int i = 0; i < 3; ++i) {
    train_step(state, ds, cfg);
    CHECK(bitwise_equal(decoder_params(state.field.decoder), dec0));
    for (int p = 0; p < kPlaneCount; ++p) {
      CHECK(bitwise_equal(state.field.grids.planes[p].data, grids0[p]));
    }
    // Head weights are not merely unchanged, they are exactly zero.
    for (double v : state.field.decoder.head_mu_b) CHECK(v == 0.0);
  }

  // Phase two: the smoothness term moves the grids immediately and the
  // heads pick up gradient from the rendered losses.
  train_step(state, ds, cfg);
  train_step(state, ds, cfg);
  bool grids_moved = false;
  for (int p = 0; p < kPlaneCount; ++p) {
    grids_moved = grids_moved ||
                  !bitwise_equal(state.field.grids.planes[p].data, grids0[p]);
  }
  CHECK(grids_moved);
  CHECK(!bitwise_equal(decoder_params(state.field.decoder), dec0));
}

TEST_CASE("density control clones, splits and prunes as configured") {
  SensorDataset ds;
  ds.meta.scene_diameter = 2.0;
  TrainConfig cfg = tiny_config();
  cfg.densify_grad_threshold = 0.03;
  cfg.prune_opacity = 0.005;
  cfg.split_scale_fraction = 0.02;  // split above exp(s) = 0.04

  TrainState state;
  state.rng = Rng(1);
  Gaussian g0;  // transparent: pruned
  g0.mu = Vector3d(0, 0, 0);
  g0.rot = Vector4d(1, 0, 0, 0);
  g0.log_scale = Vector3d::Constant(std::log(0.01));
  g0.opacity_logit = logit(0.001);
  g0.color_logit = Vector3d(0.1, 0.2, 0.3);
  Gaussian g1 = g0;  // small, high gradient: cloned
  g1.mu = Vector3d(1, 2, 3);
  g1.opacity_logit = logit(0.5);
  g1.log_scale = Vector3d(std::log(0.01), std::log(0.005), std::log(0.005));
  Gaussian g2 = g1;  // large, high gradient: split
  g2.mu = Vector3d(-1, 0, 1);
  g2.log_scale = Vector3d::Constant(std::log(0.08));
  state.gaussians.push_back(g0);
  state.gaussians.push_back(g1);
  state.gaussians.push_back(g2);
  state.densify.grad_sum = {0.0, 0.5, 0.6};
  state.densify.visits = {0, 10, 10};

  // Simulated stepped optimizer rows so the remap is observable.
  state.opt.mu.t = 5;
  state.opt.mu.m = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  state.opt.mu.v = {9, 8, 7, 6, 5, 4, 3, 2, 1};

  densify_and_prune(state, ds, cfg);
  REQUIRE(state.gaussians.size() == 4);

  // Slot 0: g1 kept bit for bit; slot 1: its clone, pushed along x (the
  // dominant scale axis of the identity-rotated gaussian).
  CHECK(state.gaussians.mu[0] == g1.mu);
  double clone_off = 0.5 * std::exp(g1.log_scale[0]);
  CHECK((state.gaussians.mu[1] - (g1.mu + Vector3d(clone_off, 0, 0)))
            .norm() == 0.0);
  CHECK(state.gaussians.log_scale[1] == g1.log_scale);
  // Slots 2/3: the split children straddle g2 with shrunken scales.
  double off = 0.5 * std::exp(g2.log_scale[0]);
  CHECK((state.gaussians.mu[2] - (g2.mu - Vector3d(off, 0, 0))).norm() == 0.0);
  CHECK((state.gaussians.mu[3] - (g2.mu + Vector3d(off, 0, 0))).norm() == 0.0);
  Vector3d shrunk =
      g2.log_scale - Vector3d::Constant(std::log(cfg.split_scale_shrink));
  CHECK(state.gaussians.log_scale[2] == shrunk);
  CHECK(state.gaussians.log_scale[3] == shrunk);
  // No gaussian kept the pruned opacity.
  for (double o : state.gaussians.opacity_logit) {
    CHECK(sigmoid(o) >= cfg.prune_opacity);
  }

  // Optimizer rows: kept gaussian carries its moments, new rows are zero.
  REQUIRE(state.opt.mu.m.size() == 12);
  CHECK(state.opt.mu.t == 5);
  CHECK((state.opt.mu.m[0] == 4 && state.opt.mu.m[1] == 5 &&
         state.opt.mu.m[2] == 6));
  for (size_t i = 3; i < 12; ++i) CHECK(state.opt.mu.m[i] == 0.0);
  CHECK(state.densify.grad_sum.size() == 4);
  CHECK(state.densify.visits == std::vector<int32_t>(4, 0));
}

TEST_CASE("density control skips growth when the budget is exhausted") {
  SensorDataset ds;
  ds.meta.scene_diameter = 2.0;
  TrainConfig cfg = tiny_config();
  cfg.max_gaussians = 3;

  TrainState state;
  Gaussian g;
  g.mu = Vector3d(0, 0, 0);
  g.rot = Vector4d(1, 0, 0, 0);
  g.log_scale = Vector3d::Constant(std::log(0.01));
  g.opacity_logit = logit(0.5);
  g.color_logit = Vector3d::Zero();
  state.gaussians.push_back(g);
  g.opacity_logit = logit(0.001);
  state.gaussians.push_back(g);  // pruned regardless of budget
  g.opacity_logit = logit(0.5);
  g.log_scale = Vector3d::Constant(std::log(0.09));
  state.gaussians.push_back(g);
  state.densify.grad_sum = {0.9, 0.0, 0.9};
  state.densify.visits = {10, 0, 10};

  densify_and_prune(state, ds, cfg);
  // Two survivors wanted to grow into four total, over the budget of three:
  // growth cancelled, prune still applied.
  CHECK(state.gaussians.size() == 2);
}

TEST_CASE("no gaussian meets a threshold, the set is unchanged") {
  SensorDataset ds;
  ds.meta.scene_diameter = 2.0;
  TrainConfig cfg = tiny_config();
  TrainState state;
  Gaussian g;
  g.mu = Vector3d(0.3, -0.2, 0.1);
  g.rot = Vector4d(1, 0, 0, 0);
  g.log_scale = Vector3d::Constant(std::log(0.05));
  g.opacity_logit = logit(0.4);
  g.color_logit = Vector3d(0.3, 0.1, -0.2);
  state.gaussians.push_back(g);
  state.densify.grad_sum = {0.0};
  state.densify.visits = {4};
  GaussianSet before = state.gaussians;
  densify_and_prune(state, ds, cfg);
  CHECK(state.gaussians.size() == 1);
  CHECK(bitwise_equal(state.gaussians.mu, before.mu));
  CHECK(bitwise_equal(state.gaussians.log_scale, before.log_scale));
}

TEST_CASE("splitting a gaussian barely changes the rendered image") {
  // One fat, fairly opaque gaussian in front of the camera; splitting it
  // should approximately conserve the rendered mass.
  Camera cam = test_camera(32);
  SensorDataset ds;
  ds.meta.scene_diameter = 2.0;
  TrainConfig cfg = tiny_config();
  cfg.split_scale_fraction = 0.02;

  TrainState state;
  Gaussian g;
  g.mu = Vector3d(0, 0, 3.0);
  g.rot = Vector4d(1, 0, 0, 0);
  g.log_scale = Vector3d::Constant(std::log(0.3));
  g.opacity_logit = logit(0.6);
  g.color_logit = Vector3d(1.2, 0.4, -0.5);
  state.gaussians.push_back(g);
  state.densify.grad_sum = {1.0};
  state.densify.visits = {1};

  Vector3d bg(0.1, 0.1, 0.1);
  RenderOutput before = render(state.gaussians, cam, bg);
  densify_and_prune(state, ds, cfg);
  REQUIRE(state.gaussians.size() == 2);
  RenderOutput after = render(state.gaussians, cam, bg);
  CHECK(rgb_l1(after.color, before.color, nullptr, 1.0) < 0.05);
}

TEST_CASE("event-only training leaves depth untouched on static geometry") {
  // Static geometry, one fixed event camera, and transient brightness
  // blips on the left half of the sensor that rise and fall within a
  // single event timestamp: each blip lands a +1 and a -1 at the same t.
  // A half-open window (t_s, t_e] therefore sees each pair whole or not
  // at all -- every flickering pixel neutralizes in every window.  With
  // the active pixels masked and the static half predicting exactly zero
  // change, the event gradient vanishes identically and the geometry must
  // stay bitwise frozen: events carry no depth signal here.
  SensorDataset ds = tiny_dataset(0.0);
  REQUIRE(ds.events.events.empty());  // a truly static scene is silent

  const int kBlips = 40;
  const uint16_t ew = ds.events.width, eh = ds.events.height;
  for (int i = 0; i < kBlips; ++i) {
    double t = (i + 0.5) / kBlips;
    for (uint16_t y = 0; y < eh; ++y) {
      for (uint16_t x = 0; x < ew / 2; ++x) {
        ds.events.events.push_back({x, y, t, +1});
        ds.events.events.push_back({x, y, t, -1});
      }
    }
  }

  // Sanity check the construction: any window neutralizes every blipping
  // pixel and leaves the static half unmasked.
  EventWindow probe_win = accumulate_window(ds.events, 0.2, 0.3, ds.meta.eta);
  int masked = 0, unmasked = 0;
  for (double m : probe_win.mask.data) (m == 0.0 ? masked : unmasked)++;
  CHECK(masked == ew / 2 * eh);
  CHECK(unmasked >= 200);

  TrainConfig cfg = tiny_config();
  cfg.lambda_rgb = 0;
  cfg.lambda_depth = 0;
  cfg.lambda_smooth = 0;
  cfg.lambda_event = 0.2;
  cfg.static_steps = 0;
  cfg.total_steps = 50;

  TrainState state = init_training(ds, cfg);
  size_t eval_frame = ds.frames_in_split("eval").at(0);
  const Camera& probe = ds.rgb[eval_frame].cam;
  RenderOutput before = render(state.gaussians, probe, Vector3d::Zero());

  for (int i = 0; i < 50; ++i) {
    LossBreakdown lb = train_step(state, ds, cfg);
    // Neutralization zeroes the loss itself: active pixels are masked and
    // the static prediction matches the quiet pixels exactly.
    CHECK(lb.event == 0.0);
    CHECK_FALSE(lb.event_all_masked);
  }

  RenderOutput after = render(state.gaussians, probe, Vector3d::Zero());
  Image validity(probe.width, probe.height, 1, 1.0);
  CHECK(drms(after.depth, before.depth, validity) <= 1e-3);
}

TEST_CASE("checkpoints round trip the full training state bit for bit") {
  TempDir tmp("ckpt");
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  TrainState state = init_training(ds, cfg);
  for (int i = 0; i < 5; ++i) train_step(state, ds, cfg);

  save_checkpoint(tmp.file("s.ckpt"), state);
  TrainState loaded = load_checkpoint(tmp.file("s.ckpt"));
  CHECK(same_state(state, loaded));

  SUBCASE("a densified state still round trips") {
    // Force growth so the gaussian count differs from initialization.
    for (double& v : state.densify.grad_sum) v = 1e9;
    for (int32_t& v : state.densify.visits) v = 1;
    size_t before = state.gaussians.size();
    densify_and_prune(state, ds, cfg);
    CHECK(state.gaussians.size() > before);
    save_checkpoint(tmp.file("d.ckpt"), state);
    CHECK(same_state(state, load_checkpoint(tmp.file("d.ckpt"))));
  }

  SUBCASE("version and integrity failures are refused") {
    std::ifstream in(tmp.file("s.ckpt"), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();

    std::string bumped = bytes;
    bumped[4] = 9;
    {
      std::ofstream out(tmp.file("v.ckpt"), std::ios::binary);
      out << bumped;
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("v.ckpt")),
                         doctest::Contains("format version 9"),
                         validation_error);
    {
      std::ofstream out(tmp.file("t.ckpt"), std::ios::binary);
      out << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("t.ckpt")),
                         doctest::Contains("truncated"), validation_error);
    {
      std::ofstream out(tmp.file("x.ckpt"), std::ios::binary);
      out << bytes << "extra";
    }
    CHECK_THROWS_AS(load_checkpoint(tmp.file("x.ckpt")), validation_error);
  }
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  TempDir tmp("resume");
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();

  TrainState straight = init_training(ds, cfg);
  for (int i = 0; i < 6; ++i) train_step(straight, ds, cfg);

  TrainState part = init_training(ds, cfg);
  for (int i = 0; i < 3; ++i) train_step(part, ds, cfg);
  save_checkpoint(tmp.file("mid.ckpt"), part);
  TrainState resumed = load_checkpoint(tmp.file("mid.ckpt"));
  for (int i = 0; i < 3; ++i) train_step(resumed, ds, cfg);

  CHECK(same_state(straight, resumed));
}

TEST_CASE("the training loop writes history and periodic checkpoints") {
  TempDir tmp("loop");
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 6;
  cfg.static_steps = 2;
  cfg.checkpoint_interval = 3;
  TrainState state = init_training(ds, cfg);
  train(state, ds, cfg, tmp.path.string());

  CHECK(state.step == 6);
  CHECK(fs::exists(tmp.file("checkpoint_3.ckpt")));
  CHECK(fs::exists(tmp.file("checkpoint_final.ckpt")));
  CHECK(!fs::exists(tmp.file("checkpoint_6.ckpt")));  // folded into final

  std::ifstream csv(tmp.file("loss_history.csv"));
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "step,l_rgb,l_event,l_depth,l_g,total");
  int rows = 0;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 6);

  // The final checkpoint is the live state.
  TrainState final_state = load_checkpoint(tmp.file("checkpoint_final.ckpt"));
  CHECK(same_state(state, final_state));
}

TEST_CASE("two hundred steps halve the objective on the tiny scene") {
  SensorDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 200;
  cfg.static_steps = 60;
  cfg.densify_from = 80;
  cfg.densify_until = 160;
  cfg.densify_interval = 40;
  TrainState state = init_training(ds, cfg);

  double first = train_step(state, ds, cfg).total;
  double last_avg = 0;
  const int kTail = 10;
  for (int64_t i = 1; i < cfg.total_steps; ++i) {
    double total = train_step(state, ds, cfg).total;
    if (i >= cfg.total_steps - kTail) last_avg += total;
    if (state.step >= cfg.static_steps && state.step >= cfg.densify_from &&
        state.step <= cfg.densify_until &&
        state.step % cfg.densify_interval == 0) {
      densify_and_prune(state, ds, cfg);
    }
  }
  last_avg /= kTail;
  INFO("step-0 loss ", first, " tail average ", last_avg);
  CHECK(last_avg <= 0.5 * first);
}
