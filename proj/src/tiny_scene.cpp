#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "fusionsplat/dataset_io.hpp"
#include "fusionsplat/event_simulator.hpp"

namespace fsplat {

namespace {

constexpr double kPi = std::numbers::pi;

struct Sphere {
  Vector3d center;
  double radius;
  Vector3d color;
};

struct OrientedBox {
  Vector3d center;
  Vector3d half;
  Matrix3d rot;  // box -> world
  Vector3d color;
};

struct SceneAtTime {
  std::vector<Sphere> spheres;
  std::vector<OrientedBox> boxes;
};

Matrix3d rot_z(double a) {
  Matrix3d m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

// The analytic scene at normalized time u = t / span in [0, 1].
SceneAtTime scene_at(const TinySceneSpec& spec, double u) {
  SceneAtTime s;
  double m = spec.motion_scale;
  if (spec.name == "orbiting_two_ball") {
    s.spheres.push_back({Vector3d(0, 0, -0.25), 0.22,
                         Vector3d(0.25, 0.35, 0.75)});
    double a = 2 * kPi * m * u;
    s.spheres.push_back(
        {Vector3d(0.5 * std::cos(a), 0.5 * std::sin(a), 0.15), 0.16,
         Vector3d(0.85, 0.12, 0.10)});
    s.spheres.push_back(
        {Vector3d(-0.5 * std::cos(a), -0.5 * std::sin(a), 0.15), 0.16,
         Vector3d(0.10, 0.80, 0.15)});
  } else if (spec.name == "translating_spheres") {
    double w = m * u;
    s.spheres.push_back({Vector3d(-0.45 + 0.9 * w, 0, 0), 0.2,
                         Vector3d(0.90, 0.55, 0.15)});
    s.spheres.push_back(
        {Vector3d(0.3 - 0.6 * w, -0.35 + 0.7 * w, 0.25), 0.15,
         Vector3d(0.20, 0.50, 0.90)});
  } else if (spec.name == "flapping_plate") {
    s.spheres.push_back({Vector3d(0, 0, 0), 0.2, Vector3d(0.80, 0.70, 0.50)});
    double theta = m * (50.0 * kPi / 180.0) * std::sin(2 * kPi * 3.0 * u);
    Matrix3d R = rot_z(theta);
    OrientedBox plate;
    plate.half = Vector3d(0.32, 0.02, 0.12);
    plate.rot = R;
    plate.center = Vector3d(0.2, 0, 0) + R * Vector3d(0.34, 0, 0);
    plate.color = Vector3d(0.70, 0.15, 0.12);
    s.boxes.push_back(plate);
  } else {
    throw validation_error("unknown tiny scene '" + spec.name +
                           "' (expected orbiting_two_ball, "
                           "translating_spheres or flapping_plate)");
  }
  return s;
}

// Nearest hit along origin + s*dir; returns s or +inf.
double hit_sphere(const Sphere& sp, const Vector3d& o, const Vector3d& d) {
  Vector3d oc = o - sp.center;
  double b = oc.dot(d);
  double c = oc.squaredNorm() - sp.radius * sp.radius;
  double disc = b * b - c;
  if (disc < 0) return std::numeric_limits<double>::infinity();
  double root = std::sqrt(disc);
  double s = -b - root;
  if (s <= 1e-9) s = -b + root;
  return s > 1e-9 ? s : std::numeric_limits<double>::infinity();
}

double hit_box(const OrientedBox& bx, const Vector3d& o, const Vector3d& d) {
  Vector3d ob = bx.rot.transpose() * (o - bx.center);
  Vector3d db = bx.rot.transpose() * d;
  double s0 = 0, s1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(db[a]) < 1e-15) {
      if (std::abs(ob[a]) > bx.half[a])
        return std::numeric_limits<double>::infinity();
      continue;
    }
    double lo = (-bx.half[a] - ob[a]) / db[a];
    double hi = (bx.half[a] - ob[a]) / db[a];
    if (lo > hi) std::swap(lo, hi);
    s0 = std::max(s0, lo);
    s1 = std::min(s1, hi);
  }
  if (s0 > s1 || s1 <= 1e-9)
    return std::numeric_limits<double>::infinity();
  return s0 > 1e-9 ? s0 : s1;
}

// Traces one ray; returns the hit color (or background) and camera depth.
void trace(const SceneAtTime& sc, const Camera& cam, const Vector3d& o,
           const Vector3d& d, const Vector3d& background, Vector3d* color,
           double* depth) {
  double best = std::numeric_limits<double>::infinity();
  const Vector3d* best_color = nullptr;
  for (const Sphere& sp : sc.spheres) {
    double s = hit_sphere(sp, o, d);
    if (s < best) {
      best = s;
      best_color = &sp.color;
    }
  }
  for (const OrientedBox& bx : sc.boxes) {
    double s = hit_box(bx, o, d);
    if (s < best) {
      best = s;
      best_color = &bx.color;
    }
  }
  if (best_color == nullptr) {
    *color = background;
    *depth = 0.0;  // invalid
    return;
  }
  Vector3d p_world = o + best * d;
  *color = *best_color;
  *depth = (cam.rotation() * p_world + cam.translation())[2];
}

Vector3d ray_dir_world(const Camera& cam, double px, double py) {
  Vector3d d_cam((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
  return (cam.rotation().transpose() * d_cam).normalized();
}

Vector3d default_background() { return Vector3d(0.08, 0.08, 0.10); }

constexpr int kSupersample = 3;

Image render_rgb(const TinySceneSpec& spec, const SceneAtTime& sc,
                 const Camera& cam) {
  (void)spec;
  Image out(cam.width, cam.height, 3);
  Vector3d bg = default_background();
  Vector3d origin = -cam.rotation().transpose() * cam.translation();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      Vector3d acc = Vector3d::Zero();
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          double px = x + (sx + 0.5) / kSupersample;
          double py = y + (sy + 0.5) / kSupersample;
          Vector3d color;
          double depth;
          trace(sc, cam, origin, ray_dir_world(cam, px, py), bg, &color,
                &depth);
          acc += color;
        }
      }
      acc /= kSupersample * kSupersample;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = acc[c];
    }
  }
  return out;
}

Image render_depth(const TinySceneSpec& spec, const SceneAtTime& sc,
                   const Camera& cam) {
  (void)spec;
  Image out(cam.width, cam.height, 1);
  Vector3d bg = default_background();
  Vector3d origin = -cam.rotation().transpose() * cam.translation();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      Vector3d color;
      double depth;
      trace(sc, cam, origin,
            ray_dir_world(cam, x + kPixelCenter, y + kPixelCenter), bg,
            &color, &depth);
      out.at(y, x) = depth;
    }
  }
  return out;
}

Camera ring_camera(const TinySceneSpec& spec, double azimuth,
                   double elevation, double timestamp) {
  Camera cam;
  cam.width = spec.resolution;
  cam.height = spec.resolution;
  cam.fx = cam.fy = 1.4 * spec.resolution;
  cam.cx = spec.resolution / 2.0;
  cam.cy = spec.resolution / 2.0;
  cam.near = 0.1;
  cam.far = 10.0;
  cam.timestamp = timestamp;
  double dist = 2.6;
  Vector3d eye(dist * std::cos(elevation) * std::cos(azimuth),
               dist * std::cos(elevation) * std::sin(azimuth),
               dist * std::sin(elevation));
  cam.world_to_camera = look_at(eye, Vector3d(0, 0, 0), Vector3d(0, 0, 1));
  return cam;
}

std::string frame_name(const char* prefix, int view, int t_idx,
                       const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_v%02d_t%03d.%s", prefix, view, t_idx,
                ext);
  return buf;
}

}  // namespace

Image render_tiny_scene_rgb(const TinySceneSpec& spec, const Camera& cam,
                            double t) {
  return render_rgb(spec, scene_at(spec, t / spec.span), cam);
}

Image render_tiny_scene_depth(const TinySceneSpec& spec, const Camera& cam,
                              double t) {
  return render_depth(spec, scene_at(spec, t / spec.span), cam);
}

SensorDataset generate_tiny_scene(const TinySceneSpec& spec) {
  require(spec.resolution >= 8 && spec.resolution <= 1024,
          "tiny scene: resolution out of range");
  require(spec.views >= 1, "tiny scene: need at least one view");
  require(spec.timestamps >= 2, "tiny scene: need at least two timestamps");
  require(spec.span > 0, "tiny scene: span must be positive");
  require(spec.contrast > 0, "tiny scene: contrast must be positive");
  require(spec.sim_fps * spec.span >= 1,
          "tiny scene: sim_fps too low for the span");
  scene_at(spec, 0.0);  // validates the name

  SensorDataset ds;
  ds.meta.name = spec.name;
  ds.meta.span = spec.span;
  ds.meta.eta = spec.contrast;
  ds.meta.background = default_background();

  // Scene diameter: bounding box of every surface over the motion.
  {
    Vector3d lo = Vector3d::Constant(1e30), hi = Vector3d::Constant(-1e30);
    for (int k = 0; k <= 100; ++k) {
      SceneAtTime sc = scene_at(spec, k / 100.0);
      for (const Sphere& sp : sc.spheres) {
        lo = lo.cwiseMin(sp.center - Vector3d::Constant(sp.radius));
        hi = hi.cwiseMax(sp.center + Vector3d::Constant(sp.radius));
      }
      for (const OrientedBox& bx : sc.boxes) {
        double r = bx.half.norm();
        lo = lo.cwiseMin(bx.center - Vector3d::Constant(r));
        hi = hi.cwiseMax(bx.center + Vector3d::Constant(r));
      }
    }
    ds.meta.scene_diameter = (hi - lo).norm();
  }

  const double elev_train = 28.0 * kPi / 180.0;
  auto train_time = [&](int j) {
    return spec.span * j / static_cast<double>(spec.timestamps - 1);
  };

  for (int v = 0; v < spec.views; ++v) {
    double az = 2 * kPi * v / spec.views;
    for (int j = 0; j < spec.timestamps; ++j) {
      double t = train_time(j);
      Camera cam = ring_camera(spec, az, elev_train, t);
      SceneAtTime sc = scene_at(spec, t / spec.span);
      FrameRecord rgb;
      rgb.cam = cam;
      rgb.split = "train";
      rgb.path = "rgb/" + frame_name("train", v, j, "png");
      rgb.image = render_rgb(spec, sc, cam);
      ds.rgb.push_back(std::move(rgb));
      FrameRecord dep;
      dep.cam = cam;
      dep.split = "train";
      dep.path = "depth/" + frame_name("train", v, j, "dpth");
      dep.image = render_depth(spec, sc, cam);
      ds.depth.push_back(std::move(dep));
    }
  }

  // Held-out views between training azimuths; 10 shared timestamps each for
  // "eval" (training times) and "eval_mid" (between training times).
  const int eval_views = std::min(3, spec.views);
  const int eval_times = std::min(10, spec.timestamps - 1);
  for (int e = 0; e < eval_views; ++e) {
    int base = e * spec.views / eval_views;
    double az = 2 * kPi * (base + 0.5) / spec.views;
    for (int j = 0; j < eval_times; ++j) {
      int jt = j * (spec.timestamps - 1) / std::max(1, eval_times - 1);
      double t = train_time(jt);
      Camera cam = ring_camera(spec, az, elev_train, t);
      SceneAtTime sc = scene_at(spec, t / spec.span);
      FrameRecord rgb;
      rgb.cam = cam;
      rgb.split = "eval";
      rgb.path = "rgb/" + frame_name("eval", e, j, "png");
      rgb.image = render_rgb(spec, sc, cam);
      ds.rgb.push_back(std::move(rgb));
      FrameRecord dep;
      dep.cam = cam;
      dep.split = "eval";
      dep.path = "depth/" + frame_name("eval", e, j, "dpth");
      dep.image = render_depth(spec, sc, cam);
      ds.depth.push_back(std::move(dep));

      int gap = j * (spec.timestamps - 2) / std::max(1, eval_times - 1);
      double t_mid = 0.5 * (train_time(gap) + train_time(gap + 1));
      Camera cam_mid = ring_camera(spec, az, elev_train, t_mid);
      SceneAtTime sc_mid = scene_at(spec, t_mid / spec.span);
      FrameRecord rgbm;
      rgbm.cam = cam_mid;
      rgbm.split = "eval_mid";
      rgbm.path = "rgb/" + frame_name("evalmid", e, j, "png");
      rgbm.image = render_rgb(spec, sc_mid, cam_mid);
      ds.rgb.push_back(std::move(rgbm));
      FrameRecord depm;
      depm.cam = cam_mid;
      depm.split = "eval_mid";
      depm.path = "depth/" + frame_name("evalmid", e, j, "dpth");
      depm.image = render_depth(spec, sc_mid, cam_mid);
      ds.depth.push_back(std::move(depm));
    }
  }

  // Fixed event camera between the first two training azimuths, slightly
  // lower than the rgb ring.
  Camera ecam = ring_camera(spec, kPi / spec.views, 22.0 * kPi / 180.0, 0.0);
  ds.event_poses.push_back(ecam);
  size_t sim_frames =
      static_cast<size_t>(std::lround(spec.sim_fps * spec.span)) + 1;
  std::vector<double> sim_t(sim_frames);
  for (size_t k = 0; k < sim_frames; ++k) {
    sim_t[k] = spec.span * static_cast<double>(k) /
               static_cast<double>(sim_frames - 1);
  }
  ds.events = simulate_events_streamed(
      spec.resolution, spec.resolution, sim_frames,
      [&](size_t k) {
        return render_rgb(spec, scene_at(spec, sim_t[k] / spec.span), ecam);
      },
      sim_t, spec.contrast);

  ds.build_pairing();
  return ds;
}

}  // namespace fsplat
