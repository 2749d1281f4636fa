#pragma once

#include <string>
#include <vector>

#include "fusionsplat/dataset_io.hpp"
#include "fusionsplat/threading.hpp"
#include "fusionsplat/trainer.hpp"

namespace fsplat {

// Peak signal-to-noise ratio in dB for values in [0,1]:
// 10*log10(1 / MSE). A zero MSE has no finite ratio; it reports +infinity
// with exact=true so downstream consumers can print the sentinel.
struct PsnrResult {
  double db = 0;
  bool exact = false;  // images were identical
};
PsnrResult psnr(const Image& a, const Image& b);

// Root-mean-square error over pixels where validity > 0. An empty validity
// mask is a validation error (the caller asked for a score over nothing).
double drms(const Image& pred, const Image& gt, const Image& validity);

// Per-frame evaluation row.
struct FrameScore {
  std::string frame;
  double timestamp = 0;
  PsnrResult psnr;
  double drms = -1;  // -1: no depth ground truth for this frame
  double render_ms = 0;
};

struct EvalReport {
  std::vector<FrameScore> frames;
  double mean_psnr_db = 0;   // over frames with finite psnr
  size_t exact_frames = 0;   // frames with identical images
  double mean_drms = -1;     // over frames with depth truth; -1 if none
  bool empty_split = false;  // no frames matched the requested split
};

// Renders every rgb frame of `split` at its own timestamp through the
// deformation field and scores it against ground truth. Depth frames
// co-registered with an rgb frame contribute drms.
EvalReport evaluate(const TrainState& state, const SensorDataset& ds,
                    const std::string& split, const Vector3d& background,
                    ThreadPool* pool = nullptr);

// CSV with one row per frame:
// frame,timestamp,psnr_db,psnr_exact,drms,lpips,render_ms.
// The perceptual column is fixed to "n/a (out of scope: pretrained network
// dependency)"; psnr_db prints "exact" when the images were identical.
void write_eval_csv(const std::string& path, const EvalReport& report);

// Human-readable one-line-per-stat summary, used by the CLI.
std::string summarize(const EvalReport& report);

}  // namespace fsplat
