#include "fusionsplat/scene_core.hpp"

#include <cmath>
#include <sstream>

namespace fsplat {

namespace {

bool finite3(const Vector3d& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}
bool finite4(const Vector4d& v) {
  return finite3(v.head<3>()) && std::isfinite(v[3]);
}

}  // namespace

long GaussianSet::first_non_finite() const {
  for (size_t i = 0; i < size(); ++i) {
    if (!finite3(mu[i]) || !finite4(rot[i]) || !finite3(log_scale[i]) ||
        !std::isfinite(opacity_logit[i]) || !finite3(color_logit[i])) {
      return static_cast<long>(i);
    }
  }
  return -1;
}

void Camera::validate(const std::string& label) const {
  std::ostringstream problems;
  int count = 0;
  auto bad = [&](const std::string& msg) {
    problems << (count++ ? "; " : "") << msg;
  };
  if (!world_to_camera.allFinite()) bad("non-finite pose matrix");
  if (!(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) &&
        std::isfinite(cy)))
    bad("non-finite intrinsics");
  if (fx <= 0 || fy <= 0) bad("focal lengths must be positive");
  if (width <= 0 || height <= 0) bad("image size must be positive");
  if (!(near > 0)) bad("near plane must be positive");
  if (!(far > near)) bad("far plane must exceed near plane");
  if (world_to_camera.allFinite()) {
    Matrix3d R = rotation();
    if ((R.transpose() * R - Matrix3d::Identity()).cwiseAbs().maxCoeff() >
        1e-6)
      bad("rotation block is not orthonormal");
    Eigen::RowVector4d bottom = world_to_camera.row(3);
    if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0)
      bad("bottom row must be (0,0,0,1)");
  }
  if (!std::isfinite(timestamp)) bad("non-finite timestamp");
  if (count > 0) {
    throw validation_error("camera '" + label + "': " + problems.str());
  }
}

Matrix4d look_at(const Vector3d& eye, const Vector3d& target,
                 const Vector3d& up) {
  Vector3d zc = (target - eye).normalized();
  Vector3d xc = zc.cross(up).normalized();
  Vector3d yc = zc.cross(xc);
  Matrix4d m = Matrix4d::Identity();
  m.block<1, 3>(0, 0) = xc.transpose();
  m.block<1, 3>(1, 0) = yc.transpose();
  m.block<1, 3>(2, 0) = zc.transpose();
  m.topRightCorner<3, 1>() = -m.topLeftCorner<3, 3>() * eye;
  return m;
}

Matrix3d rotation_from_quaternion(const Vector4d& q) {
  double n = q.norm();
  if (!(n > 1e-12)) {
    throw validation_error(
        "degenerate rotation: quaternion norm is zero (or non-finite)");
  }
  double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

Vector4d rotation_from_quaternion_vjp(const Vector4d& q, const Matrix3d& G) {
  double n = q.norm();
  if (!(n > 1e-12)) {
    throw validation_error(
        "degenerate rotation: quaternion norm is zero (or non-finite)");
  }
  Vector4d u = q / n;
  double w = u[0], x = u[1], y = u[2], z = u[3];
  // dR/d(unit quaternion), contracted against G entry by entry.
  Vector4d d_unit;
  d_unit[0] = 2 * (G(0, 1) * -z + G(0, 2) * y + G(1, 0) * z + G(1, 2) * -x +
                   G(2, 0) * -y + G(2, 1) * x);
  d_unit[1] = 2 * (G(0, 1) * y + G(0, 2) * z + G(1, 0) * y +
                   G(1, 1) * -2 * x + G(1, 2) * -w + G(2, 0) * z +
                   G(2, 1) * w + G(2, 2) * -2 * x);
  d_unit[2] = 2 * (G(0, 0) * -2 * y + G(0, 1) * x + G(0, 2) * w +
                   G(1, 0) * x + G(1, 2) * z + G(2, 0) * -w + G(2, 1) * z +
                   G(2, 2) * -2 * y);
  d_unit[3] = 2 * (G(0, 0) * -2 * z + G(0, 1) * -w + G(0, 2) * x +
                   G(1, 0) * w + G(1, 1) * -2 * z + G(1, 2) * y +
                   G(2, 0) * x + G(2, 1) * y);
  // Through the normalization q -> q/|q|.
  return (d_unit - u * u.dot(d_unit)) / n;
}

Matrix3d covariance_from_params(const Vector4d& rot,
                                const Vector3d& log_scale) {
  Matrix3d R = rotation_from_quaternion(rot);
  Vector3d d = (2.0 * log_scale).array().exp();
  return R * d.asDiagonal() * R.transpose();
}

void covariance_from_params_vjp(const Vector4d& rot, const Vector3d& log_scale,
                                const Matrix3d& G, Vector4d* d_rot,
                                Vector3d* d_log_scale) {
  Matrix3d R = rotation_from_quaternion(rot);
  Vector3d d = (2.0 * log_scale).array().exp();
  Matrix3d d_R = (G + G.transpose()) * R * d.asDiagonal();
  Matrix3d RtGR = R.transpose() * G * R;
  for (int k = 0; k < 3; ++k) {
    (*d_log_scale)[k] = RtGR(k, k) * 2.0 * d[k];
  }
  *d_rot = rotation_from_quaternion_vjp(rot, d_R);
}

Projected2D project_gaussian(const Gaussian& g, const Camera& cam) {
  Projected2D out;
  Vector3d pc = cam.to_camera(g.mu);
  out.z_cam = pc[2];
  if (!(pc[2] > cam.near && pc[2] < cam.far)) {
    out.valid = false;
    return out;
  }
  out.valid = true;
  double inv_z = 1.0 / pc[2];
  out.mu2 = Vector2d(cam.fx * pc[0] * inv_z + cam.cx,
                     cam.fy * pc[1] * inv_z + cam.cy);

  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx * inv_z, 0, -cam.fx * pc[0] * inv_z * inv_z, 0, cam.fy * inv_z,
      -cam.fy * pc[1] * inv_z * inv_z;
  Matrix3d sigma = covariance_from_params(g.rot, g.log_scale);
  Matrix3d Rw = cam.rotation();
  Matrix3d m_cam = Rw * sigma * Rw.transpose();
  out.cov2 = J * m_cam * J.transpose() +
             kCovRegularization * Matrix2d::Identity();
  return out;
}

GaussianGrad project_gaussian_vjp(const Gaussian& g, const Camera& cam,
                                  const ProjectedGrad& up) {
  Vector3d pc = cam.to_camera(g.mu);
  double z = pc[2];
  double inv_z = 1.0 / z;
  double inv_z2 = inv_z * inv_z;

  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx * inv_z, 0, -cam.fx * pc[0] * inv_z2, 0, cam.fy * inv_z,
      -cam.fy * pc[1] * inv_z2;
  Matrix3d sigma = covariance_from_params(g.rot, g.log_scale);
  Matrix3d Rw = cam.rotation();
  Matrix3d m_cam = Rw * sigma * Rw.transpose();

  // Mean: mu2 = K(pc), d(mu2)/d(pc) is exactly J.
  Vector3d d_pc = J.transpose() * up.d_mu2;
  d_pc[2] += up.d_z;

  // Covariance: cov2 = J M J^T (the +c*I term has zero derivative).
  const Matrix2d& G2 = up.d_cov2;
  Eigen::Matrix<double, 2, 3> d_J = (G2 + G2.transpose()) * J * m_cam;
  Matrix3d d_m = J.transpose() * G2 * J;
  Matrix3d d_sigma = Rw.transpose() * d_m * Rw;

  // J's own dependence on the camera-space point.
  d_pc[0] += d_J(0, 2) * (-cam.fx * inv_z2);
  d_pc[1] += d_J(1, 2) * (-cam.fy * inv_z2);
  d_pc[2] += d_J(0, 0) * (-cam.fx * inv_z2) + d_J(1, 1) * (-cam.fy * inv_z2) +
             d_J(0, 2) * (2 * cam.fx * pc[0] * inv_z2 * inv_z) +
             d_J(1, 2) * (2 * cam.fy * pc[1] * inv_z2 * inv_z);

  GaussianGrad out;
  out.d_mu = Rw.transpose() * d_pc;
  covariance_from_params_vjp(g.rot, g.log_scale, d_sigma, &out.d_rot,
                             &out.d_log_scale);
  return out;
}

}  // namespace fsplat
