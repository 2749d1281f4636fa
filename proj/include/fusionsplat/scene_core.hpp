#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fusionsplat/common.hpp"

namespace fsplat {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::Matrix4d;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::Vector4d;

// Screen-space covariances get this added on the diagonal so every splat
// covers at least ~a pixel and stays comfortably invertible.
inline constexpr double kCovRegularization = 0.3;

// One anisotropic 3D Gaussian. Rotation is a quaternion (w,x,y,z) kept at
// unit norm by the owner; scales are stored in log space so optimizer steps
// stay multiplicative; opacity and color are stored as logits and squashed
// through sigmoid wherever they are consumed.
struct Gaussian {
  Vector3d mu = Vector3d::Zero();
  Vector4d rot = Vector4d(1, 0, 0, 0);
  Vector3d log_scale = Vector3d::Zero();
  double opacity_logit = 0.0;
  Vector3d color_logit = Vector3d::Zero();
};

// Structure-of-arrays Gaussian collection; all arrays share one length.
struct GaussianSet {
  std::vector<Vector3d> mu;
  std::vector<Vector4d> rot;
  std::vector<Vector3d> log_scale;
  std::vector<double> opacity_logit;
  std::vector<Vector3d> color_logit;

  size_t size() const { return mu.size(); }

  void resize(size_t n) {
    mu.resize(n, Vector3d::Zero());
    rot.resize(n, Vector4d(1, 0, 0, 0));
    log_scale.resize(n, Vector3d::Zero());
    opacity_logit.resize(n, 0.0);
    color_logit.resize(n, Vector3d::Zero());
  }

  void push_back(const Gaussian& g) {
    mu.push_back(g.mu);
    rot.push_back(g.rot);
    log_scale.push_back(g.log_scale);
    opacity_logit.push_back(g.opacity_logit);
    color_logit.push_back(g.color_logit);
  }

  Gaussian get(size_t i) const {
    return Gaussian{mu[i], rot[i], log_scale[i], opacity_logit[i],
                    color_logit[i]};
  }

  // Index of the first non-finite parameter's Gaussian, or -1.
  long first_non_finite() const;
};

// Pinhole camera. world_to_camera maps world points into a frame whose +z
// axis looks through the image; pixel (x,y) samples at (x+0.5, y+0.5).
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Matrix4d world_to_camera = Matrix4d::Identity();
  double near = 0.01, far = 100.0;
  double timestamp = 0.0;

  Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  Vector3d to_camera(const Vector3d& p_world) const {
    return rotation() * p_world + translation();
  }
  // Throws validation_error naming each problem (non-finite entries,
  // non-orthonormal rotation, bad intrinsics or clip range).
  void validate(const std::string& label) const;
};

// Convenience pose: camera at `eye` looking at `target` with `up` roughly up.
Matrix4d look_at(const Vector3d& eye, const Vector3d& target,
                 const Vector3d& up);

// A Gaussian after perspective projection: 2D mean in pixels, 2x2 screen
// covariance (regularization included), camera-space depth, and whether the
// depth landed inside (near, far).
struct Projected2D {
  Vector2d mu2 = Vector2d::Zero();
  Matrix2d cov2 = Matrix2d::Identity();
  double z_cam = 0.0;
  bool valid = false;
};

// Gradients flowing backward into project_gaussian.
struct ProjectedGrad {
  Vector2d d_mu2 = Vector2d::Zero();
  Matrix2d d_cov2 = Matrix2d::Zero();  // full-matrix convention
  double d_z = 0.0;
};

struct GaussianGrad {
  Vector3d d_mu = Vector3d::Zero();
  Vector4d d_rot = Vector4d::Zero();
  Vector3d d_log_scale = Vector3d::Zero();
};

// Rotation matrix of a quaternion after normalization. Zero-norm input is a
// degenerate rotation and rejected.
Matrix3d rotation_from_quaternion(const Vector4d& q);

// d(loss)/d(raw q) given d(loss)/dR, through the normalization.
Vector4d rotation_from_quaternion_vjp(const Vector4d& q, const Matrix3d& d_R);

// World-space covariance R * diag(exp(s))^2 * R^T.
Matrix3d covariance_from_params(const Vector4d& rot, const Vector3d& log_scale);

// d(loss)/d(rot, log_scale) given d(loss)/dSigma (full-matrix convention).
void covariance_from_params_vjp(const Vector4d& rot, const Vector3d& log_scale,
                                const Matrix3d& d_sigma, Vector4d* d_rot,
                                Vector3d* d_log_scale);

// EWA-style projection: exact perspective division for the mean, first-order
// (Jacobian) propagation for the covariance, +kCovRegularization*I on the
// screen covariance. valid=false when z_cam lies outside (near, far); the
// other fields are still filled for valid depths only.
Projected2D project_gaussian(const Gaussian& g, const Camera& cam);

// Analytic VJP of project_gaussian. Precondition: the forward pass was valid.
GaussianGrad project_gaussian_vjp(const Gaussian& g, const Camera& cam,
                                  const ProjectedGrad& up);

}  // namespace fsplat
