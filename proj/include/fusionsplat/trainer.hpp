#pragma once

#include <array>
#include <string>
#include <vector>

#include "fusionsplat/dataset_io.hpp"
#include "fusionsplat/deformation.hpp"
#include "fusionsplat/optimizer.hpp"
#include "fusionsplat/rng.hpp"

namespace fsplat {

struct TrainConfig {
  int64_t total_steps = 4000;
  int64_t static_steps = 500;  // phase 1: rgb+depth only, no deformation

  // Loss weights; the perceptual term is out of scope and has no weight.
  double lambda_rgb = 1.0;
  double lambda_event = 0.2;
  double lambda_depth = 0.5;
  double lambda_smooth = 0.01;

  // Event supervision window length bounds, seconds.
  double window_min = 0.001;
  double window_max = 0.05;

  // Per-group learning rates; positions decay exponentially to lr_mu_final.
  double lr_mu = 1.6e-4;
  double lr_mu_final = 1.6e-6;
  double lr_scale = 5e-3;
  double lr_rot = 1e-3;
  double lr_opacity = 5e-2;
  double lr_color = 2.5e-3;
  double lr_grids = 1.6e-3;
  double lr_decoder = 1.6e-4;

  GridConfig grid;
  DecoderConfig decoder;

  int init_points = 2000;       // back-projected from the first depth map
  double init_opacity = 0.1;

  int64_t densify_interval = 200;
  int64_t densify_from = 600;
  int64_t densify_until = 3000;
  double densify_grad_threshold = 0.03;  // mean screen-space |d mu2|, pixels
  double prune_opacity = 0.005;
  double split_scale_fraction = 0.02;  // of scene diameter; larger -> split
  double split_scale_shrink = 1.6;
  size_t max_gaussians = 60000;

  uint64_t seed = 1;
  bool background_override = false;
  Vector3d background = Vector3d::Zero();
  int64_t checkpoint_interval = 0;  // 0: only the final checkpoint

  void validate() const;
};

// `key value` per line, '#' comments; unknown keys are validation errors.
TrainConfig parse_train_config(const std::string& path);

// Optimizer slots for every parameter group.
struct OptSlots {
  AdamState mu, rot, log_scale, opacity, color;
  std::array<AdamState, kPlaneCount> planes;
  std::vector<AdamState> decoder;  // parallel to DeformDecoder::for_each_param
};

// Screen-gradient statistics accumulated between densification rounds.
struct DensifyStats {
  std::vector<double> grad_sum;
  std::vector<int32_t> visits;

  void reset(size_t n) {
    grad_sum.assign(n, 0.0);
    visits.assign(n, 0);
  }
};

struct TrainState {
  GaussianSet gaussians;
  DeformationField field;
  OptSlots opt;
  DensifyStats densify;
  int64_t step = 0;
  Rng rng;
};

struct LossBreakdown {
  double rgb = 0, event = 0, depth = 0, smooth = 0;
  double total = 0;
  bool event_all_masked = false;
};

// Weighted sum of the loss components; non-finite values raise numeric_error.
double total_loss(const LossBreakdown& parts, const TrainConfig& cfg);

// Mean absolute color error and its gradient on pred (scaled by upstream).
double rgb_l1(const Image& pred, const Image& gt, Image* d_pred,
              double upstream);

// Mean absolute depth error over pixels where gt > 0; an empty validity mask
// yields 0 and sets *empty_mask.
double depth_l1(const Image& pred, const Image& gt, Image* d_pred,
                double upstream, bool* empty_mask = nullptr);

// Seeds the model by back-projecting the earliest depth frame and builds the
// deformation field over the resulting bounding box.
TrainState init_training(const SensorDataset& ds, const TrainConfig& cfg);

// One optimization step (phase picked from state.step); returns the losses
// at that step.
LossBreakdown train_step(TrainState& state, const SensorDataset& ds,
                         const TrainConfig& cfg, ThreadPool* pool = nullptr);

// Clone / split high-gradient Gaussians, prune transparent ones, keep the
// optimizer slots aligned. Uses the statistics gathered since the last call.
void densify_and_prune(TrainState& state, const SensorDataset& ds,
                       const TrainConfig& cfg);

// Full loop: runs state.step -> cfg.total_steps, appends loss_history.csv,
// writes periodic and final checkpoints into out_dir.
void train(TrainState& state, const SensorDataset& ds, const TrainConfig& cfg,
           const std::string& out_dir, ThreadPool* pool = nullptr);

// Versioned binary checkpoint of the complete training state (parameters,
// field, optimizer moments, rng, step); round trips bit-exactly.
inline constexpr uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

}  // namespace fsplat
