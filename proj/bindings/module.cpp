// Python bindings: numpy-array views of the core operations.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstring>
#include <optional>
#include <stdexcept>

#include "fusionsplat/dataset_io.hpp"
#include "fusionsplat/event_simulator.hpp"
#include "fusionsplat/metrics.hpp"
#include "fusionsplat/rasterizer.hpp"
#include "fusionsplat/trainer.hpp"

namespace py = pybind11;
using namespace fsplat;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image image_from_array(const DArray& arr, const char* name) {
  auto buf = arr.request();
  if (buf.ndim != 2 && buf.ndim != 3) {
    throw validation_error(std::string(name) + ": expected a 2-d or 3-d array");
  }
  int h = static_cast<int>(buf.shape[0]);
  int w = static_cast<int>(buf.shape[1]);
  int c = buf.ndim == 3 ? static_cast<int>(buf.shape[2]) : 1;
  Image img(w, h, c);
  std::memcpy(img.data.data(), buf.ptr, img.data.size() * sizeof(double));
  return img;
}

py::array_t<double> array_from_image(const Image& img) {
  if (img.channels == 1) {
    py::array_t<double> out({img.height, img.width});
    std::memcpy(out.mutable_data(), img.data.data(),
                img.data.size() * sizeof(double));
    return out;
  }
  py::array_t<double> out({img.height, img.width, img.channels});
  std::memcpy(out.mutable_data(), img.data.data(),
              img.data.size() * sizeof(double));
  return out;
}

GaussianSet set_from_arrays(const DArray& mu, const DArray& rot,
                            const DArray& log_scale,
                            const DArray& opacity_logit,
                            const DArray& color_logit) {
  auto rows = [](const DArray& a, py::ssize_t cols, const char* name) {
    auto b = a.request();
    bool ok = cols == 1 ? (b.ndim == 1)
                        : (b.ndim == 2 && b.shape[1] == cols);
    if (!ok) {
      throw validation_error(std::string(name) + ": wrong shape");
    }
    return b.shape[0];
  };
  py::ssize_t n = rows(mu, 3, "mu");
  if (rows(rot, 4, "rot") != n || rows(log_scale, 3, "log_scale") != n ||
      rows(opacity_logit, 1, "opacity_logit") != n ||
      rows(color_logit, 3, "color_logit") != n) {
    throw validation_error("gaussian arrays disagree on the count");
  }
  GaussianSet gs;
  gs.resize(static_cast<size_t>(n));
  std::memcpy(gs.mu.data(), mu.data(), n * 3 * sizeof(double));
  std::memcpy(gs.rot.data(), rot.data(), n * 4 * sizeof(double));
  std::memcpy(gs.log_scale.data(), log_scale.data(), n * 3 * sizeof(double));
  std::memcpy(gs.opacity_logit.data(), opacity_logit.data(),
              n * sizeof(double));
  std::memcpy(gs.color_logit.data(), color_logit.data(),
              n * 3 * sizeof(double));
  return gs;
}

Vector3d vec3_from(const DArray& a, const char* name) {
  auto b = a.request();
  if (b.ndim != 1 || b.shape[0] != 3) {
    throw validation_error(std::string(name) + ": expected 3 values");
  }
  const double* p = static_cast<const double*>(b.ptr);
  return Vector3d(p[0], p[1], p[2]);
}

py::dict stream_to_dict(const EventStream& s) {
  py::array_t<uint16_t> x(static_cast<py::ssize_t>(s.events.size()));
  py::array_t<uint16_t> y(static_cast<py::ssize_t>(s.events.size()));
  py::array_t<double> t(static_cast<py::ssize_t>(s.events.size()));
  py::array_t<int8_t> p(static_cast<py::ssize_t>(s.events.size()));
  for (size_t i = 0; i < s.events.size(); ++i) {
    x.mutable_data()[i] = s.events[i].x;
    y.mutable_data()[i] = s.events[i].y;
    t.mutable_data()[i] = s.events[i].t;
    p.mutable_data()[i] = s.events[i].polarity;
  }
  py::dict d;
  d["width"] = s.width;
  d["height"] = s.height;
  d["x"] = x;
  d["y"] = y;
  d["t"] = t;
  d["polarity"] = p;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Event-fused dynamic gaussian splatting core";

  py::register_exception<validation_error>(m, "ValidationError",
                                           PyExc_ValueError);
  py::register_exception<numeric_error>(m, "NumericalError",
                                        PyExc_ArithmeticError);

  py::class_<Camera>(m, "Camera")
      .def(py::init([](double fx, double fy, double cx, double cy, int width,
                       int height, const DArray& world_to_camera, double near,
                       double far, double timestamp) {
             Camera c;
             c.fx = fx;
             c.fy = fy;
             c.cx = cx;
             c.cy = cy;
             c.width = width;
             c.height = height;
             auto b = world_to_camera.request();
             if (b.ndim != 2 || b.shape[0] != 4 || b.shape[1] != 4) {
               throw validation_error("world_to_camera: expected a 4x4 matrix");
             }
             const double* p = static_cast<const double*>(b.ptr);
             for (int r = 0; r < 4; ++r) {
               for (int col = 0; col < 4; ++col) {
                 c.world_to_camera(r, col) = p[r * 4 + col];
               }
             }
             c.near = near;
             c.far = far;
             c.timestamp = timestamp;
             c.validate("camera");
             return c;
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"),
           py::arg("width"), py::arg("height"), py::arg("world_to_camera"),
           py::arg("near") = 0.01, py::arg("far") = 100.0,
           py::arg("timestamp") = 0.0)
      .def_readonly("fx", &Camera::fx)
      .def_readonly("fy", &Camera::fy)
      .def_readonly("cx", &Camera::cx)
      .def_readonly("cy", &Camera::cy)
      .def_readonly("width", &Camera::width)
      .def_readonly("height", &Camera::height)
      .def_readonly("near", &Camera::near)
      .def_readonly("far", &Camera::far)
      .def_readonly("timestamp", &Camera::timestamp);

  m.def(
      "look_at",
      [](const DArray& eye, const DArray& target, const DArray& up) {
        Matrix4d w2c = look_at(vec3_from(eye, "eye"), vec3_from(target, "target"),
                               vec3_from(up, "up"));
        py::array_t<double> out({4, 4});
        for (int r = 0; r < 4; ++r) {
          for (int c = 0; c < 4; ++c) out.mutable_data()[r * 4 + c] = w2c(r, c);
        }
        return out;
      },
      py::arg("eye"), py::arg("target"), py::arg("up"),
      "World-to-camera matrix looking from eye toward target (y down, z "
      "forward)");

  m.def(
      "covariance_from_params",
      [](const DArray& rot, const DArray& log_scale) {
        auto rb = rot.request();
        auto sb = log_scale.request();
        if (rb.ndim != 1 || rb.shape[0] != 4 || sb.ndim != 1 ||
            sb.shape[0] != 3) {
          throw validation_error(
              "covariance_from_params: rot must have 4 values, log_scale 3");
        }
        const double* rp = static_cast<const double*>(rb.ptr);
        const double* sp = static_cast<const double*>(sb.ptr);
        Matrix3d cov = covariance_from_params(Vector4d(rp[0], rp[1], rp[2], rp[3]),
                                              Vector3d(sp[0], sp[1], sp[2]));
        py::array_t<double> out({3, 3});
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) out.mutable_data()[r * 3 + c] = cov(r, c);
        }
        return out;
      },
      py::arg("rot"), py::arg("log_scale"),
      "World-space covariance R diag(exp(2s)) R^T");

  m.def(
      "render",
      [](const DArray& mu, const DArray& rot, const DArray& log_scale,
         const DArray& opacity_logit, const DArray& color_logit,
         const Camera& cam, const DArray& background, int threads) {
        GaussianSet gs =
            set_from_arrays(mu, rot, log_scale, opacity_logit, color_logit);
        ThreadPool pool(threads > 0 ? threads : 1);
        RenderOutput out =
            render(gs, cam, vec3_from(background, "background"), &pool);
        py::dict d;
        d["color"] = array_from_image(out.color);
        d["depth"] = array_from_image(out.depth);
        d["alpha"] = array_from_image(out.alpha);
        return d;
      },
      py::arg("mu"), py::arg("rot"), py::arg("log_scale"),
      py::arg("opacity_logit"), py::arg("color_logit"), py::arg("camera"),
      py::arg("background"), py::arg("threads") = 1,
      "Depth-sorted alpha blending of the gaussian set into color, depth and "
      "alpha images");

  m.def(
      "encode_time",
      [](double t, int k_max) {
        std::vector<double> enc = encode_time(t, k_max);
        py::array_t<double> out(static_cast<py::ssize_t>(enc.size()));
        std::memcpy(out.mutable_data(), enc.data(),
                    enc.size() * sizeof(double));
        return out;
      },
      py::arg("t"), py::arg("k_max"),
      "Sinusoidal time features (sin/cos pairs for frequencies 2^0..2^k_max)");

  m.def(
      "simulate_events",
      [](const DArray& frames, const std::vector<double>& timestamps,
         double contrast, double time_jitter, double threshold_jitter,
         uint64_t seed) {
        auto b = frames.request();
        if (b.ndim != 4 && b.ndim != 3) {
          throw validation_error(
              "frames: expected (n, h, w, 3) or (n, h, w) array");
        }
        size_t n = static_cast<size_t>(b.shape[0]);
        int h = static_cast<int>(b.shape[1]);
        int w = static_cast<int>(b.shape[2]);
        int c = b.ndim == 4 ? static_cast<int>(b.shape[3]) : 1;
        const double* p = static_cast<const double*>(b.ptr);
        size_t stride = static_cast<size_t>(h) * w * c;
        SimulatorOptions opt;
        opt.time_jitter_std = time_jitter;
        opt.threshold_jitter = threshold_jitter;
        opt.seed = seed;
        EventStream s = simulate_events_streamed(
            w, h, n,
            [&](size_t k) {
              Image img(w, h, c);
              std::memcpy(img.data.data(), p + k * stride,
                          stride * sizeof(double));
              return img;
            },
            timestamps, contrast, opt);
        return stream_to_dict(s);
      },
      py::arg("frames"), py::arg("timestamps"), py::arg("contrast"),
      py::arg("time_jitter") = 0.0, py::arg("threshold_jitter") = 0.0,
      py::arg("seed") = 0,
      "Threshold-crossing event simulation over a frame stack");

  m.def(
      "accumulate_window",
      [](py::dict events, double t_start, double t_end, double eta) {
        EventStream s;
        s.width = events["width"].cast<uint16_t>();
        s.height = events["height"].cast<uint16_t>();
        auto x = events["x"].cast<py::array_t<uint16_t>>();
        auto y = events["y"].cast<py::array_t<uint16_t>>();
        auto t = events["t"].cast<py::array_t<double>>();
        auto p = events["polarity"].cast<py::array_t<int8_t>>();
        py::ssize_t n = x.size();
        s.events.resize(static_cast<size_t>(n));
        for (py::ssize_t i = 0; i < n; ++i) {
          s.events[i] = {x.data()[i], y.data()[i], t.data()[i], p.data()[i]};
        }
        EventWindow win = accumulate_window(s, t_start, t_end, eta);
        py::dict d;
        d["delta_log"] = array_from_image(win.delta_log);
        d["mask"] = array_from_image(win.mask);
        return d;
      },
      py::arg("events"), py::arg("t_start"), py::arg("t_end"), py::arg("eta"),
      "Integrate events in (t_start, t_end] into a log-change image and "
      "neutralization mask");

  m.def(
      "predicted_log_diff",
      [](const DArray& rgb_start, const DArray& rgb_end) {
        return array_from_image(
            predicted_log_diff(image_from_array(rgb_start, "rgb_start"),
                               image_from_array(rgb_end, "rgb_end")));
      },
      py::arg("rgb_start"), py::arg("rgb_end"),
      "log(Y_end + eps) - log(Y_start + eps) per pixel");

  m.def(
      "event_loss",
      [](py::dict window, const DArray& predicted) {
        EventWindow win;
        win.delta_log =
            image_from_array(window["delta_log"].cast<DArray>(), "delta_log");
        win.mask = image_from_array(window["mask"].cast<DArray>(), "mask");
        bool all_masked = false;
        double loss = event_loss(
            win, image_from_array(predicted, "predicted"), &all_masked);
        return py::make_tuple(loss, all_masked);
      },
      py::arg("window"), py::arg("predicted"),
      "Masked mean squared error between measured and predicted log changes");

  m.def(
      "psnr",
      [](const DArray& a, const DArray& b) {
        PsnrResult r = psnr(image_from_array(a, "a"), image_from_array(b, "b"));
        return py::make_tuple(r.db, r.exact);
      },
      py::arg("a"), py::arg("b"), "(psnr_db, exact) for images in [0,1]");

  m.def(
      "drms",
      [](const DArray& pred, const DArray& gt, const DArray& validity) {
        return drms(image_from_array(pred, "pred"), image_from_array(gt, "gt"),
                    image_from_array(validity, "validity"));
      },
      py::arg("pred"), py::arg("gt"), py::arg("validity"),
      "Root-mean-square depth error over validity > 0 pixels");

  m.def(
      "generate_scene",
      [](const std::string& name, const std::string& out_dir, int resolution,
         int views, int timestamps, double span, double contrast,
         double motion_scale, uint64_t seed) {
        TinySceneSpec spec;
        spec.name = name;
        spec.resolution = resolution;
        spec.views = views;
        spec.timestamps = timestamps;
        spec.span = span;
        spec.contrast = contrast;
        spec.motion_scale = motion_scale;
        spec.seed = seed;
        SensorDataset ds = generate_tiny_scene(spec);
        write_dataset(out_dir, ds);
        py::dict d;
        d["rgb_frames"] = ds.rgb.size();
        d["depth_frames"] = ds.depth.size();
        d["events"] = ds.events.events.size();
        d["scene_diameter"] = ds.meta.scene_diameter;
        return d;
      },
      py::arg("name"), py::arg("out_dir"), py::arg("resolution") = 64,
      py::arg("views") = 12, py::arg("timestamps") = 60, py::arg("span") = 1.0,
      py::arg("contrast") = 0.2, py::arg("motion_scale") = 1.0,
      py::arg("seed") = 1,
      "Write one of the built-in analytic scenes as a dataset directory");

  m.def(
      "run_training",
      [](const std::string& data_dir, const std::string& out_dir,
         const std::string& config_path, std::optional<uint64_t> seed,
         int threads, std::optional<int64_t> total_steps) {
        TrainConfig cfg = config_path.empty() ? TrainConfig{}
                                              : parse_train_config(config_path);
        if (seed) cfg.seed = *seed;
        if (total_steps) cfg.total_steps = *total_steps;
        cfg.validate();
        SensorDataset ds = load_dataset(data_dir);
        ThreadPool pool(threads > 0 ? threads : 1);
        TrainState state = init_training(ds, cfg);
        train(state, ds, cfg, out_dir, &pool);
        return out_dir + "/checkpoint_final.ckpt";
      },
      py::arg("data_dir"), py::arg("out_dir"), py::arg("config_path") = "",
      py::arg("seed") = std::nullopt, py::arg("threads") = 1,
      py::arg("total_steps") = std::nullopt,
      "Full optimization loop; returns the final checkpoint path");

  m.def(
      "evaluate_checkpoint",
      [](const std::string& checkpoint, const std::string& data_dir,
         const std::string& split, int threads) {
        TrainState state = load_checkpoint(checkpoint);
        SensorDataset ds = load_dataset(data_dir);
        ThreadPool pool(threads > 0 ? threads : 1);
        EvalReport rep = evaluate(state, ds, split, ds.meta.background, &pool);
        py::dict d;
        d["frames"] = rep.frames.size();
        d["mean_psnr_db"] = rep.mean_psnr_db;
        d["exact_frames"] = rep.exact_frames;
        d["mean_drms"] = rep.mean_drms;
        d["empty_split"] = rep.empty_split;
        d["scene_diameter"] = ds.meta.scene_diameter;
        return d;
      },
      py::arg("checkpoint"), py::arg("data_dir"), py::arg("split") = "eval",
      py::arg("threads") = 1, "Score a checkpoint against a dataset split");
}
