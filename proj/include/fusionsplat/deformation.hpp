#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "fusionsplat/rasterizer.hpp"
#include "fusionsplat/rng.hpp"
#include "fusionsplat/scene_core.hpp"
#include "fusionsplat/threading.hpp"

namespace fsplat {

// The six factored feature planes, indexed by which pair of the (x,y,z,t)
// axes each one spans.
enum PlaneKind : int { kXY = 0, kXZ, kYZ, kXT, kYT, kZT, kPlaneCount };
inline constexpr const char* kPlaneNames[kPlaneCount] = {"xy", "xz", "yz",
                                                         "xt", "yt", "zt"};
// Planes whose second axis is time.
inline constexpr bool kPlaneHasTime[kPlaneCount] = {false, false, false,
                                                    true,  true,  true};

struct GridConfig {
  int res_spatial = 32;  // nodes per spatial axis
  int res_time = 16;     // nodes along the time axis
  int features = 16;     // feature channels per plane
};

struct DecoderConfig {
  int hidden = 64;  // width of each trunk layer
  int layers = 2;   // trunk depth
  int k_max = 6;    // highest time-encoding frequency is 2^k_max
};

// One 2D feature plane, row-major [rows][cols][features].
struct FeaturePlane {
  int rows = 0, cols = 0, features = 0;
  std::vector<double> data;

  double& at(int r, int c, int f) {
    return data[(static_cast<size_t>(r) * cols + c) * features + f];
  }
  double at(int r, int c, int f) const {
    return data[(static_cast<size_t>(r) * cols + c) * features + f];
  }
};

struct PlaneGrids {
  GridConfig config;
  std::array<FeaturePlane, kPlaneCount> planes;
  // Spatial extent covered by the grids (dilation already applied).
  Vector3d bbox_lo = Vector3d::Constant(-1);
  Vector3d bbox_hi = Vector3d::Constant(1);
};

// Fully connected ReLU trunk with three linear heads. The heads start at
// exactly zero so a freshly initialized field is the identity deformation.
struct DeformDecoder {
  int input_dim = 0, hidden = 0, layers = 0, k_max = 6;
  // trunk_w[l] is row-major [hidden][fan_in]; fan_in = input_dim for l = 0,
  // else hidden.
  std::vector<std::vector<double>> trunk_w, trunk_b;
  std::vector<double> head_mu_w, head_mu_b;        // 3 x hidden, 3
  std::vector<double> head_scale_w, head_scale_b;  // 3 x hidden, 3
  std::vector<double> head_rot_w, head_rot_b;      // 4 x hidden, 4

  // Visits every parameter array in a fixed order (trunk first, then the
  // mu/scale/rot heads); optimizer state and checkpoints rely on this order.
  void for_each_param(const std::function<void(std::vector<double>&)>& fn);
  void for_each_param(
      const std::function<void(const std::vector<double>&)>& fn) const;
  size_t param_count() const;
};

struct DeformationField {
  PlaneGrids grids;
  DeformDecoder decoder;
};

// Sinusoidal time features (sin 2^k pi t, cos 2^k pi t) for k = 0..k_max.
// t must lie in [0,1].
std::vector<double> encode_time(double t, int k_max);

// Bilinear lookup of all six planes at (mu, t), concatenated in plane order;
// coordinates clamp to the extent. Returns 6*features values.
std::vector<double> sample_grids(const PlaneGrids& grids, const Vector3d& mu,
                                 double t);

// Uniform(-1e-4, 1e-4) feature init over an extent enclosing [lo, hi]
// dilated by 5%.
PlaneGrids make_grids(const GridConfig& cfg, const Vector3d& bbox_lo,
                      const Vector3d& bbox_hi, Rng& rng);

// He-uniform trunk, zero heads.
DeformDecoder make_decoder(const DecoderConfig& cfg, int grid_features,
                           Rng& rng);

// Per-Gaussian activations retained for the backward pass.
struct DeformContext {
  double t = 0;
  std::vector<double> time_enc;
  std::vector<double> inputs;   // n x input_dim
  std::vector<double> hidden;   // n x layers x hidden (post-ReLU)
  std::vector<Vector4d> rot_prenorm;  // r + delta_r before normalization
};

// Evaluates the deformation at time t: mu += d_mu, log_scale += d_s,
// rot = normalize(rot + d_r); opacity and color pass through untouched.
// With ctx non-null the activations needed by deform_vjp are captured.
GaussianSet deform(const GaussianSet& gs, double t,
                   const DeformationField& field, ThreadPool* pool = nullptr,
                   DeformContext* ctx = nullptr);

// Gradient sinks for the field itself.
struct FieldGrads {
  std::array<std::vector<double>, kPlaneCount> planes;
  std::vector<std::vector<double>> decoder;  // parallel to for_each_param

  void init_like(const DeformationField& field);
  void accumulate(const FieldGrads& o, double w);
};

// Backward through deform(): upstream holds gradients on the deformed set's
// mu / rot / log_scale (opacity and color pass through unchanged, so their
// upstream entries are copied straight to the canonical grads). Canonical
// parameter gradients are accumulated into *canonical, field gradients into
// *field_grads.
void deform_vjp(const GaussianSet& gs, const DeformationField& field,
                const DeformContext& ctx, const RenderGrads& upstream,
                RenderGrads* canonical, FieldGrads* field_grads,
                ThreadPool* pool = nullptr);

// Mean squared second difference along the time axis over the three planes
// that have one. Fewer than 3 time nodes is a configuration error.
double grid_smoothness(const PlaneGrids& grids);

// Accumulates d(upstream * grid_smoothness)/d(plane features).
void grid_smoothness_vjp(const PlaneGrids& grids, double upstream,
                         FieldGrads* field_grads);

}  // namespace fsplat
