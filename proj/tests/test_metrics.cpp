#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fusionsplat/metrics.hpp"
#include "fusionsplat/rng.hpp"
#include "test_util.hpp"

using namespace fsplat;
using namespace fsplat::testutil;
using doctest::Approx;

namespace fs = std::filesystem;

namespace {

SensorDataset static_dataset() {
  TinySceneSpec spec;
  spec.resolution = 16;
  spec.views = 2;
  spec.timestamps = 3;
  spec.sim_fps = 20;
  spec.motion_scale = 0.0;
  return generate_tiny_scene(spec);
}

}  // namespace

TEST_CASE("psnr follows the decibel formula and flags exact matches") {
  Image a(8, 8, 3, 0.4);
  PsnrResult same = psnr(a, a);
  CHECK(same.exact);
  CHECK(std::isinf(same.db));

  Image b = a;
  for (double& v : b.data) v += 0.1;  // MSE 0.01
  PsnrResult r = psnr(a, b);
  CHECK(!r.exact);
  CHECK(r.db == Approx(20.0).epsilon(1e-12));

  // One bad value out of forty: MSE 2.5e-4, just over 36 dB.
  Image c(10, 4, 1, 0.5);
  Image d = c;
  d.at(2, 3) += 0.1;
  CHECK(psnr(c, d).db == Approx(36.0206).epsilon(1e-4));

  // Symmetric in its arguments.
  CHECK(psnr(a, b).db == psnr(b, a).db);

  CHECK_THROWS_AS(psnr(a, Image(4, 4, 3)), validation_error);
}

TEST_CASE("drms is a masked root mean square in world units") {
  Image gt(4, 4, 1, 2.0);
  Image validity(4, 4, 1, 1.0);
  CHECK(drms(gt, gt, validity) == 0.0);

  Image pred = gt;
  for (double& v : pred.data) v += 0.1;
  CHECK(drms(pred, gt, validity) == Approx(0.1).epsilon(1e-12));

  // Error 0.2 on half the valid pixels: RMS of the mixture.
  pred = gt;
  for (size_t i = 0; i < 8; ++i) pred.data[i] += 0.2;
  CHECK(drms(pred, gt, validity) == Approx(0.2 / std::sqrt(2.0)).epsilon(1e-12));

  // Invalid pixels are excluded entirely.
  validity.at(0, 0) = 0.0;
  Image spiked = gt;
  spiked.at(0, 0) = 99.0;
  CHECK(drms(spiked, gt, validity) == 0.0);

  // Symmetry, and exact scale equivariance for a power-of-two factor.
  Rng rng(61);
  Image x(4, 4, 1), y(4, 4, 1);
  for (double& v : x.data) v = rng.uniform(0.5, 3.0);
  for (double& v : y.data) v = rng.uniform(0.5, 3.0);
  Image ones(4, 4, 1, 1.0);
  CHECK(drms(x, y, ones) == drms(y, x, ones));
  Image x2 = x, y2 = y;
  for (double& v : x2.data) v *= 2.0;
  for (double& v : y2.data) v *= 2.0;
  CHECK(drms(x2, y2, ones) == 2.0 * drms(x, y, ones));

  Image none(4, 4, 1, 0.0);
  CHECK_THROWS_WITH_AS(drms(x, y, none), doctest::Contains("no pixels"),
                       validation_error);
  CHECK_THROWS_AS(drms(x, Image(2, 2, 1), ones), validation_error);
}

TEST_CASE("identity deformation scores a static scene identically over time") {
  SensorDataset ds = static_dataset();
  TrainConfig cfg;
  cfg.init_points = 100;
  cfg.grid.res_spatial = 8;
  cfg.grid.res_time = 4;
  cfg.grid.features = 4;
  cfg.decoder.hidden = 16;
  cfg.decoder.layers = 2;
  cfg.decoder.k_max = 2;
  TrainState state = init_training(ds, cfg);

  EvalReport report = evaluate(state, ds, "eval", ds.meta.background);
  CHECK(!report.empty_split);
  // 2 held-out views x 2 shared timestamps.
  REQUIRE(report.frames.size() == 4);
  // Same view at different timestamps: scene and deformation are both
  // static, so the scores must agree.
  CHECK(report.frames[0].psnr.db ==
        Approx(report.frames[1].psnr.db).epsilon(1e-6));
  CHECK(report.frames[2].psnr.db ==
        Approx(report.frames[3].psnr.db).epsilon(1e-6));
  CHECK(report.frames[0].timestamp != report.frames[1].timestamp);

  for (const FrameScore& f : report.frames) {
    CHECK(f.drms >= 0);  // every frame has co-registered depth
    CHECK(f.render_ms >= 0);
    CHECK(std::isfinite(f.psnr.db));
  }
  CHECK(report.mean_drms >= 0);
  CHECK(report.exact_frames == 0);
  CHECK(std::isfinite(report.mean_psnr_db));
}

TEST_CASE("an empty split yields an empty flagged report") {
  SensorDataset ds = static_dataset();
  TrainConfig cfg;
  cfg.init_points = 60;
  cfg.grid.res_spatial = 8;
  cfg.grid.res_time = 4;
  cfg.grid.features = 4;
  cfg.decoder.hidden = 16;
  TrainState state = init_training(ds, cfg);
  EvalReport report = evaluate(state, ds, "no_such_split", Vector3d::Zero());
  CHECK(report.empty_split);
  CHECK(report.frames.empty());
  CHECK(summarize(report).find("empty split") != std::string::npos);
}

TEST_CASE("the evaluation csv has a fixed schema") {
  fs::path tmp = fs::temp_directory_path() /
                 ("fusionsplat_metrics_" + std::to_string(::getpid()));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  std::string path = (tmp / "eval.csv").string();

  EvalReport report;
  FrameScore a;
  a.frame = "rgb/eval_v00_t000.png";
  a.timestamp = 0.25;
  a.psnr.db = 31.5;
  a.drms = 0.02;
  a.render_ms = 3.5;
  FrameScore b;
  b.frame = "rgb/eval_v00_t001.png";
  b.timestamp = 0.5;
  b.psnr.exact = true;
  b.psnr.db = std::numeric_limits<double>::infinity();
  b.drms = -1;  // no depth truth
  report.frames = {a, b};
  write_eval_csv(path, report);

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "frame,timestamp,psnr_db,psnr_exact,drms,lpips,render_ms");
  REQUIRE(std::getline(in, line));
  CHECK(line.find("rgb/eval_v00_t000.png,0.25,31.5,0,0.02,") == 0);
  CHECK(line.find("\"n/a (out of scope: pretrained network dependency)\"") !=
        std::string::npos);
  REQUIRE(std::getline(in, line));
  CHECK(line.find("exact,1,,") != std::string::npos);  // sentinel, empty drms
  fs::remove_all(tmp);
}

TEST_CASE("the summary names the frame count and mean scores") {
  EvalReport report;
  FrameScore f;
  f.frame = "x.png";
  f.psnr.db = 30.0;
  f.drms = 0.5;
  report.frames = {f};
  report.mean_psnr_db = 30.0;
  report.mean_drms = 0.5;
  std::string s = summarize(report);
  CHECK(s.find("frames: 1") != std::string::npos);
  CHECK(s.find("30") != std::string::npos);
  CHECK(s.find("0.5") != std::string::npos);

  EvalReport no_depth;
  no_depth.frames = {f};
  no_depth.mean_psnr_db = 30.0;
  no_depth.mean_drms = -1;
  CHECK(summarize(no_depth).find("n/a (no depth ground truth)") !=
        std::string::npos);
}
