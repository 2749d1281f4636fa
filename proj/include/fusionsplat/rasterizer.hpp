#pragma once

#include <cstdint>
#include <vector>

#include "fusionsplat/scene_core.hpp"
#include "fusionsplat/threading.hpp"

namespace fsplat {

// Blending stops once remaining transmittance drops below this.
inline constexpr double kTransmittanceMin = 1e-4;
// Pixels with blended alpha at or below this report the far plane as depth.
inline constexpr double kDepthAlphaMin = 1e-4;
// Splats are evaluated only within 3 sigma: d^T cov2^{-1} d <= 9.
inline constexpr double kMahalanobisMax = 9.0;
inline constexpr int kTileSize = 16;

// One Gaussian's contribution to one pixel, kept for the backward pass.
// `transmittance` is the value *before* this contribution was composited.
struct BlendRecord {
  int32_t gaussian = 0;
  double alpha = 0.0;
  double transmittance = 1.0;
};

struct RenderOutput {
  Image color;  // H x W x 3, background already composited
  Image depth;  // H x W, alpha-normalized blend of camera-space z
  Image alpha;  // H x W, 1 - final transmittance

  // Backward-pass state. Records are grouped per pixel: pixel p owns
  // records[pixel_offset[p] .. pixel_offset[p+1]).
  std::vector<BlendRecord> records;
  std::vector<uint32_t> pixel_offset;
  std::vector<Projected2D> projections;       // per Gaussian
  std::vector<Matrix2d> inv_cov;              // per Gaussian, screen-space
  std::vector<double> final_transmittance;    // per pixel
  std::vector<double> depth_blend;            // per pixel, pre-normalization
};

// Per-pixel upstream gradients; any image may be empty (treated as zero).
struct RenderUpstream {
  Image d_color;
  Image d_depth;
  Image d_alpha;
};

// Per-Gaussian parameter gradients plus the screen-space positional gradient
// magnitude that drives densification.
struct RenderGrads {
  std::vector<Vector3d> d_mu;
  std::vector<Vector4d> d_rot;
  std::vector<Vector3d> d_log_scale;
  std::vector<double> d_opacity_logit;
  std::vector<Vector3d> d_color_logit;
  std::vector<double> screen_grad_norm;  // |d(loss)/d(mu2)| per Gaussian

  void resize(size_t n);
  void accumulate(const RenderGrads& o, double weight);
};

// Front-to-back alpha compositing of the Gaussian set seen from `cam`.
// Deterministic for a fixed input regardless of pool size: the compositing
// order is the global camera-space depth order (ties broken by index) and
// each pixel is owned by exactly one 16x16 tile. An empty set renders pure
// background. Any non-finite parameter raises numeric_error naming the index.
RenderOutput render(const GaussianSet& gs, const Camera& cam,
                    const Vector3d& background, ThreadPool* pool = nullptr);

// Exact VJP of render() with respect to every Gaussian parameter. Gradient
// accumulation is two-phase (per-tile buffers merged in tile order), so the
// result is bit-identical for any thread count.
RenderGrads render_vjp(const GaussianSet& gs, const Camera& cam,
                       const Vector3d& background, const RenderOutput& fwd,
                       const RenderUpstream& up, ThreadPool* pool = nullptr);

}  // namespace fsplat
