#include "fusionsplat/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fusionsplat/rasterizer.hpp"

namespace fsplat {

PsnrResult psnr(const Image& a, const Image& b) {
  require(a.same_shape(b), "psnr: image shapes differ");
  require(!a.data.empty(), "psnr: empty images");
  double se = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    se += d * d;
  }
  double mse = se / static_cast<double>(a.data.size());
  PsnrResult r;
  if (mse == 0) {
    r.db = std::numeric_limits<double>::infinity();
    r.exact = true;
  } else {
    r.db = 10.0 * std::log10(1.0 / mse);
  }
  return r;
}

double drms(const Image& pred, const Image& gt, const Image& validity) {
  require(pred.width == gt.width && pred.height == gt.height &&
              pred.width == validity.width && pred.height == validity.height,
          "drms: image shapes differ");
  require(pred.channels == 1 && gt.channels == 1 && validity.channels == 1,
          "drms: depth images must be single-channel");
  double se = 0;
  size_t count = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    if (!(validity.data[i] > 0)) continue;
    double d = pred.data[i] - gt.data[i];
    se += d * d;
    ++count;
  }
  require(count > 0, "drms: validity mask selects no pixels");
  return std::sqrt(se / static_cast<double>(count));
}

EvalReport evaluate(const TrainState& state, const SensorDataset& ds,
                    const std::string& split, const Vector3d& background,
                    ThreadPool* pool) {
  EvalReport report;
  std::vector<size_t> frames = ds.frames_in_split(split);
  if (frames.empty()) {
    report.empty_split = true;
    return report;
  }

  double psnr_sum = 0;
  size_t psnr_count = 0;
  double drms_sum = 0;
  size_t drms_count = 0;
  for (size_t idx : frames) {
    const FrameRecord& f = ds.rgb[idx];
    double tau = ds.meta.span > 0
                     ? std::clamp(f.cam.timestamp / ds.meta.span, 0.0, 1.0)
                     : 0.0;
    auto t0 = std::chrono::steady_clock::now();
    GaussianSet deformed = deform(state.gaussians, tau, state.field, pool);
    RenderOutput out = render(deformed, f.cam, background, pool);
    auto t1 = std::chrono::steady_clock::now();

    for (double& v : out.color.data) v = std::clamp(v, 0.0, 1.0);

    FrameScore score;
    score.frame = f.path;
    score.timestamp = f.cam.timestamp;
    score.psnr = psnr(out.color, f.image);
    score.render_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();

    int depth_idx = idx < ds.rgb_depth_pair.size() ? ds.rgb_depth_pair[idx]
                                                   : -1;
    if (depth_idx >= 0) {
      const Image& gt = ds.depth[depth_idx].image;
      // Ground-truth zeros mark pixels with no depth; score the rest.
      score.drms = drms(out.depth, gt, gt);
      drms_sum += score.drms;
      ++drms_count;
    }
    if (score.psnr.exact) {
      ++report.exact_frames;
    } else {
      psnr_sum += score.psnr.db;
      ++psnr_count;
    }
    report.frames.push_back(std::move(score));
  }
  report.mean_psnr_db = psnr_count > 0 ? psnr_sum / psnr_count
                                       : std::numeric_limits<double>::infinity();
  report.mean_drms = drms_count > 0 ? drms_sum / drms_count : -1;
  return report;
}

void write_eval_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), "evaluate: cannot open " + path);
  out << "frame,timestamp,psnr_db,psnr_exact,drms,lpips,render_ms\n";
  out.precision(10);
  for (const FrameScore& f : report.frames) {
    out << f.frame << ',' << f.timestamp << ',';
    if (f.psnr.exact) {
      out << "exact";
    } else {
      out << f.psnr.db;
    }
    out << ',' << (f.psnr.exact ? 1 : 0) << ',';
    if (f.drms >= 0) {
      out << f.drms;
    }
    out << ",\"n/a (out of scope: pretrained network dependency)\","
        << f.render_ms << '\n';
  }
  require(static_cast<bool>(out), "evaluate: write failed for " + path);
}

std::string summarize(const EvalReport& report) {
  std::ostringstream os;
  os.precision(6);
  if (report.empty_split) {
    os << "frames: 0 (empty split)\n";
    return os.str();
  }
  os << "frames: " << report.frames.size() << '\n';
  if (std::isinf(report.mean_psnr_db)) {
    os << "mean_psnr_db: exact\n";
  } else {
    os << "mean_psnr_db: " << report.mean_psnr_db << '\n';
  }
  if (report.exact_frames > 0) {
    os << "exact_frames: " << report.exact_frames << '\n';
  }
  if (report.mean_drms >= 0) {
    os << "mean_drms: " << report.mean_drms << '\n';
  } else {
    os << "mean_drms: n/a (no depth ground truth)\n";
  }
  return os.str();
}

}  // namespace fsplat
