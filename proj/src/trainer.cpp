#include "fusionsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "fusionsplat/rasterizer.hpp"

namespace fsplat {

namespace fs = std::filesystem;

namespace {

static_assert(sizeof(Vector3d) == 3 * sizeof(double));
static_assert(sizeof(Vector4d) == 4 * sizeof(double));

std::span<double> flat(std::vector<Vector3d>& v) {
  return {reinterpret_cast<double*>(v.data()), v.size() * 3};
}
std::span<double> flat(std::vector<Vector4d>& v) {
  return {reinterpret_cast<double*>(v.data()), v.size() * 4};
}
std::span<const double> flat(const std::vector<Vector3d>& v) {
  return {reinterpret_cast<const double*>(v.data()), v.size() * 3};
}
std::span<const double> flat(const std::vector<Vector4d>& v) {
  return {reinterpret_cast<const double*>(v.data()), v.size() * 4};
}

bool same_camera(const Camera& a, const Camera& b) {
  return a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy &&
         a.width == b.width && a.height == b.height &&
         a.world_to_camera == b.world_to_camera;
}

double position_lr(const TrainConfig& cfg, int64_t step) {
  if (cfg.total_steps <= 1) return cfg.lr_mu;
  double t = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.lr_mu * std::pow(cfg.lr_mu_final / cfg.lr_mu, t);
}

double scene_extent(const TrainState& state, const SensorDataset& ds) {
  if (ds.meta.scene_diameter > 0) return ds.meta.scene_diameter;
  return (state.field.grids.bbox_hi - state.field.grids.bbox_lo).norm();
}

}  // namespace

void TrainConfig::validate() const {
  require(total_steps >= 1, "config: total_steps must be at least 1");
  require(static_steps >= 0 && static_steps <= total_steps,
          "config: static_steps must lie in [0, total_steps]");
  require(lambda_rgb >= 0 && lambda_event >= 0 && lambda_depth >= 0 &&
              lambda_smooth >= 0,
          "config: loss weights must be non-negative");
  require(window_min > 0 && window_min <= window_max,
          "config: need 0 < window_min <= window_max");
  for (double lr : {lr_mu, lr_mu_final, lr_scale, lr_rot, lr_opacity,
                    lr_color, lr_grids, lr_decoder}) {
    require(lr >= 0 && std::isfinite(lr),
            "config: learning rates must be finite and non-negative");
  }
  require(init_points >= 1, "config: init_points must be positive");
  require(init_opacity > 0 && init_opacity < 1,
          "config: init_opacity must lie in (0,1)");
  require(densify_interval >= 1, "config: densify_interval must be positive");
  require(prune_opacity >= 0 && prune_opacity < 1,
          "config: prune_opacity must lie in [0,1)");
  require(split_scale_shrink > 1, "config: split_scale_shrink must exceed 1");
  require(max_gaussians >= 1, "config: max_gaussians must be positive");
}

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("config: cannot open " + path);
  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto ctx = [&](const std::string& what) {
      return "config " + path + " line " + std::to_string(line_no) + ": " +
             what;
    };
    auto num = [&]() {
      double v;
      if (!(ls >> v)) throw validation_error(ctx("expected a number"));
      return v;
    };
    try {
      if (key == "total_steps") cfg.total_steps = static_cast<int64_t>(num());
      else if (key == "static_steps") cfg.static_steps = static_cast<int64_t>(num());
      else if (key == "lambda_rgb") cfg.lambda_rgb = num();
      else if (key == "lambda_event") cfg.lambda_event = num();
      else if (key == "lambda_depth") cfg.lambda_depth = num();
      else if (key == "lambda_smooth") cfg.lambda_smooth = num();
      else if (key == "window_min") cfg.window_min = num();
      else if (key == "window_max") cfg.window_max = num();
      else if (key == "lr_mu") cfg.lr_mu = num();
      else if (key == "lr_mu_final") cfg.lr_mu_final = num();
      else if (key == "lr_scale") cfg.lr_scale = num();
      else if (key == "lr_rot") cfg.lr_rot = num();
      else if (key == "lr_opacity") cfg.lr_opacity = num();
      else if (key == "lr_color") cfg.lr_color = num();
      else if (key == "lr_grids") cfg.lr_grids = num();
      else if (key == "lr_decoder") cfg.lr_decoder = num();
      else if (key == "grid_res_spatial") cfg.grid.res_spatial = static_cast<int>(num());
      else if (key == "grid_res_time") cfg.grid.res_time = static_cast<int>(num());
      else if (key == "grid_features") cfg.grid.features = static_cast<int>(num());
      else if (key == "decoder_hidden") cfg.decoder.hidden = static_cast<int>(num());
      else if (key == "decoder_layers") cfg.decoder.layers = static_cast<int>(num());
      else if (key == "decoder_k_max") cfg.decoder.k_max = static_cast<int>(num());
      else if (key == "init_points") cfg.init_points = static_cast<int>(num());
      else if (key == "init_opacity") cfg.init_opacity = num();
      else if (key == "densify_interval") cfg.densify_interval = static_cast<int64_t>(num());
      else if (key == "densify_from") cfg.densify_from = static_cast<int64_t>(num());
      else if (key == "densify_until") cfg.densify_until = static_cast<int64_t>(num());
      else if (key == "densify_grad_threshold") cfg.densify_grad_threshold = num();
      else if (key == "prune_opacity") cfg.prune_opacity = num();
      else if (key == "split_scale_fraction") cfg.split_scale_fraction = num();
      else if (key == "split_scale_shrink") cfg.split_scale_shrink = num();
      else if (key == "max_gaussians") cfg.max_gaussians = static_cast<size_t>(num());
      else if (key == "seed") cfg.seed = static_cast<uint64_t>(num());
      else if (key == "checkpoint_interval") cfg.checkpoint_interval = static_cast<int64_t>(num());
      else if (key == "background") {
        // Sequenced reads: argument evaluation order must not matter.
        double r = num(), g = num(), b = num();
        cfg.background = Vector3d(r, g, b);
        cfg.background_override = true;
      } else {
        throw validation_error(ctx("unknown key '" + key + "'"));
      }
    } catch (const validation_error&) {
      throw;
    } catch (const std::exception& e) {
      throw validation_error(ctx(e.what()));
    }
  }
  cfg.validate();
  return cfg;
}

double total_loss(const LossBreakdown& parts, const TrainConfig& cfg) {
  double total = cfg.lambda_rgb * parts.rgb + cfg.lambda_event * parts.event +
                 cfg.lambda_depth * parts.depth +
                 cfg.lambda_smooth * parts.smooth;
  if (!std::isfinite(total)) {
    std::ostringstream os;
    os << "total_loss: non-finite loss (rgb=" << parts.rgb
       << " event=" << parts.event << " depth=" << parts.depth
       << " smooth=" << parts.smooth << ")";
    throw numeric_error(os.str());
  }
  return total;
}

double rgb_l1(const Image& pred, const Image& gt, Image* d_pred,
              double upstream) {
  require(pred.same_shape(gt), "rgb_l1: image shapes differ");
  require(!pred.data.empty(), "rgb_l1: empty images");
  double sum = 0;
  double k = upstream / static_cast<double>(pred.data.size());
  if (d_pred && d_pred->data.empty())
    *d_pred = Image(pred.width, pred.height, pred.channels, 0.0);
  for (size_t i = 0; i < pred.data.size(); ++i) {
    double d = pred.data[i] - gt.data[i];
    sum += std::abs(d);
    if (d_pred) d_pred->data[i] += k * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
  }
  return sum / static_cast<double>(pred.data.size());
}

double depth_l1(const Image& pred, const Image& gt, Image* d_pred,
                double upstream, bool* empty_mask) {
  require(pred.width == gt.width && pred.height == gt.height,
          "depth_l1: image shapes differ");
  require(pred.channels == 1 && gt.channels == 1,
          "depth_l1: depth images must be single-channel");
  if (d_pred && d_pred->data.empty())
    *d_pred = Image(pred.width, pred.height, 1, 0.0);
  size_t valid = 0;
  for (double v : gt.data) valid += v > 0 ? 1 : 0;
  if (empty_mask) *empty_mask = valid == 0;
  if (valid == 0) return 0.0;
  double sum = 0;
  double k = upstream / static_cast<double>(valid);
  for (size_t i = 0; i < pred.data.size(); ++i) {
    if (!(gt.data[i] > 0)) continue;
    double d = pred.data[i] - gt.data[i];
    sum += std::abs(d);
    if (d_pred) d_pred->data[i] += k * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
  }
  return sum / static_cast<double>(valid);
}

TrainState init_training(const SensorDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  require(!ds.depth.empty(),
          "init: the dataset has no depth frames to back-project");

  // Earliest training depth frame, manifest order breaking ties.
  const FrameRecord* first_depth = nullptr;
  for (const FrameRecord& f : ds.depth) {
    if (f.split != "train") continue;
    if (!first_depth || f.cam.timestamp < first_depth->cam.timestamp) {
      first_depth = &f;
    }
  }
  require(first_depth != nullptr, "init: no train-split depth frame found");

  // The co-registered rgb frame provides initial colors.
  const Image* colors = nullptr;
  for (const FrameRecord& f : ds.rgb) {
    if (f.split == "train" && f.cam.timestamp == first_depth->cam.timestamp &&
        f.cam.world_to_camera == first_depth->cam.world_to_camera) {
      colors = &f.image;
      break;
    }
  }

  const Camera& cam = first_depth->cam;
  const Image& depth = first_depth->image;
  size_t valid = 0;
  for (double v : depth.data) valid += v > 0 ? 1 : 0;
  require(valid > 0, "init: first depth frame has no valid pixels");

  size_t stride = std::max<size_t>(1, valid / static_cast<size_t>(cfg.init_points));
  Matrix3d R_t = cam.rotation().transpose();
  Vector3d trans = cam.translation();
  double h_pix = std::sqrt(static_cast<double>(stride));

  TrainState state;
  state.rng = Rng(cfg.seed);
  size_t k = 0;
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      double z = depth.at(y, x);
      if (!(z > 0)) continue;
      if (k++ % stride != 0) continue;
      Gaussian g;
      Vector3d p_cam((x + kPixelCenter - cam.cx) / cam.fx * z,
                     (y + kPixelCenter - cam.cy) / cam.fy * z, z);
      g.mu = R_t * (p_cam - trans);
      double s0 = 0.9 * z * h_pix / cam.fx;
      g.log_scale = Vector3d::Constant(std::log(s0));
      g.opacity_logit = logit(cfg.init_opacity);
      Vector3d c = colors ? Vector3d(colors->at(y, x, 0), colors->at(y, x, 1),
                                     colors->at(y, x, 2))
                          : Vector3d::Constant(0.5);
      for (int ch = 0; ch < 3; ++ch) {
        g.color_logit[ch] = logit(std::clamp(c[ch], 0.002, 0.998));
      }
      state.gaussians.push_back(g);
    }
  }

  Vector3d lo = Vector3d::Constant(std::numeric_limits<double>::infinity());
  Vector3d hi = -lo;
  for (const Vector3d& mu : state.gaussians.mu) {
    lo = lo.cwiseMin(mu);
    hi = hi.cwiseMax(mu);
  }
  state.field.grids = make_grids(cfg.grid, lo, hi, state.rng);
  state.field.decoder =
      make_decoder(cfg.decoder, cfg.grid.features, state.rng);
  size_t slots = 0;
  state.field.decoder.for_each_param([&](std::vector<double>&) { ++slots; });
  state.opt.decoder.resize(slots);
  state.densify.reset(state.gaussians.size());
  return state;
}

namespace {

void accumulate_densify_stats(TrainState& state, const RenderGrads& grads) {
  for (size_t i = 0; i < state.gaussians.size(); ++i) {
    double g = grads.screen_grad_norm[i];
    if (g > 0) {
      state.densify.grad_sum[i] += g;
      state.densify.visits[i] += 1;
    }
  }
}

void apply_gaussian_updates(TrainState& state, const TrainConfig& cfg,
                            const RenderGrads& grads, int64_t step) {
  AdamConfig ac;
  ac.lr = position_lr(cfg, step);
  adam_step(flat(state.gaussians.mu), flat(grads.d_mu), state.opt.mu, ac);
  ac.lr = cfg.lr_rot;
  adam_step(flat(state.gaussians.rot), flat(grads.d_rot), state.opt.rot, ac);
  ac.lr = cfg.lr_scale;
  adam_step(flat(state.gaussians.log_scale), flat(grads.d_log_scale),
            state.opt.log_scale, ac);
  ac.lr = cfg.lr_opacity;
  adam_step(state.gaussians.opacity_logit, grads.d_opacity_logit,
            state.opt.opacity, ac);
  ac.lr = cfg.lr_color;
  adam_step(flat(state.gaussians.color_logit), flat(grads.d_color_logit),
            state.opt.color, ac);
  // Keep stored quaternions unit length; the raw parameter only encodes a
  // direction, and unit norm keeps rotation steps well-scaled.
  for (Vector4d& q : state.gaussians.rot) {
    double n = q.norm();
    if (!(n > 1e-12)) {
      throw numeric_error("train: quaternion collapsed to zero norm");
    }
    q /= n;
  }
}

void apply_field_updates(TrainState& state, const TrainConfig& cfg,
                         const FieldGrads& grads) {
  AdamConfig ac;
  ac.lr = cfg.lr_grids;
  for (int pl = 0; pl < kPlaneCount; ++pl) {
    adam_step(state.field.grids.planes[pl].data, grads.planes[pl],
              state.opt.planes[pl], ac);
  }
  ac.lr = cfg.lr_decoder;
  size_t slot = 0;
  state.field.decoder.for_each_param([&](std::vector<double>& p) {
    adam_step(p, grads.decoder[slot], state.opt.decoder[slot], ac);
    ++slot;
  });
}

}  // namespace

LossBreakdown train_step(TrainState& state, const SensorDataset& ds,
                         const TrainConfig& cfg, ThreadPool* pool) {
  const int64_t step = state.step;
  const bool phase2 = step >= cfg.static_steps;
  const Vector3d bg =
      cfg.background_override ? cfg.background : ds.meta.background;
  const double span = ds.meta.span;

  // Candidate frames: phase 1 sticks to the earliest timestamp so the static
  // geometry settles before any deformation is learned.
  std::vector<size_t> candidates = ds.frames_in_split("train");
  require(!candidates.empty(), "train: dataset has no train rgb frames");
  if (!phase2) {
    double t_min = std::numeric_limits<double>::infinity();
    for (size_t i : candidates) {
      t_min = std::min(t_min, ds.rgb[i].cam.timestamp);
    }
    std::vector<size_t> first;
    for (size_t i : candidates) {
      if (ds.rgb[i].cam.timestamp == t_min) first.push_back(i);
    }
    candidates = std::move(first);
  }
  size_t frame_idx = candidates[state.rng.uniform_index(candidates.size())];
  const FrameRecord& frame = ds.rgb[frame_idx];
  int depth_idx = frame_idx < ds.rgb_depth_pair.size()
                      ? ds.rgb_depth_pair[frame_idx]
                      : -1;

  LossBreakdown lb;
  const size_t n = state.gaussians.size();
  RenderGrads canonical;
  canonical.resize(n);
  FieldGrads field_grads;
  field_grads.init_like(state.field);
  bool want_events = phase2 && cfg.lambda_event > 0 &&
                     !ds.events.events.empty();
  WindowSample window{};
  if (phase2) {
    // Drawn every phase-2 step (even if unused) to keep the rng sequence
    // aligned across configurations that toggle the event term.
    window = sample_window(span, cfg.window_min, cfg.window_max, state.rng);
  }

  double tau_rgb = std::clamp(frame.cam.timestamp / span, 0.0, 1.0);

  auto render_supervised = [&](double tau, const Camera& cam,
                               DeformContext* ctx, GaussianSet* deformed)
      -> RenderOutput {
    if (phase2) {
      *deformed = deform(state.gaussians, tau, state.field, pool, ctx);
      return render(*deformed, cam, bg, pool);
    }
    *deformed = state.gaussians;
    return render(*deformed, cam, bg, pool);
  };

  // --- RGB (+ depth) view ---------------------------------------------------
  DeformContext ctx_rgb;
  GaussianSet set_rgb;
  RenderOutput out_rgb = render_supervised(
      tau_rgb, frame.cam, phase2 ? &ctx_rgb : nullptr, &set_rgb);

  RenderUpstream up_rgb;
  lb.rgb = rgb_l1(out_rgb.color, frame.image, &up_rgb.d_color,
                  cfg.lambda_rgb);
  bool separate_depth_render = false;
  const FrameRecord* depth_frame =
      depth_idx >= 0 ? &ds.depth[depth_idx] : nullptr;
  if (depth_frame) {
    separate_depth_render = !same_camera(frame.cam, depth_frame->cam);
    if (!separate_depth_render) {
      lb.depth = depth_l1(out_rgb.depth, depth_frame->image, &up_rgb.d_depth,
                          cfg.lambda_depth);
    }
  }
  RenderGrads g_rgb = render_vjp(set_rgb, frame.cam, bg, out_rgb, up_rgb, pool);
  accumulate_densify_stats(state, g_rgb);
  if (phase2) {
    deform_vjp(state.gaussians, state.field, ctx_rgb, g_rgb, &canonical,
               &field_grads, pool);
  } else {
    canonical.accumulate(g_rgb, 1.0);
  }

  // Depth sensor with its own intrinsics: a second pass over the same set.
  if (depth_frame && separate_depth_render) {
    DeformContext ctx_d;
    GaussianSet set_d;
    RenderOutput out_d = render_supervised(
        tau_rgb, depth_frame->cam, phase2 ? &ctx_d : nullptr, &set_d);
    RenderUpstream up_d;
    lb.depth = depth_l1(out_d.depth, depth_frame->image, &up_d.d_depth,
                        cfg.lambda_depth);
    RenderGrads g_d =
        render_vjp(set_d, depth_frame->cam, bg, out_d, up_d, pool);
    accumulate_densify_stats(state, g_d);
    if (phase2) {
      deform_vjp(state.gaussians, state.field, ctx_d, g_d, &canonical,
                 &field_grads, pool);
    } else {
      canonical.accumulate(g_d, 1.0);
    }
  }

  // --- Event window ----------------------------------------------------------
  if (want_events) {
    EventWindow win = accumulate_window(ds.events, window.t_start,
                                        window.t_end, ds.meta.eta);
    const Camera& ecam_s = ds.event_camera_at(window.t_start);
    const Camera& ecam_e = ds.event_camera_at(window.t_end);
    double tau_s = std::clamp(window.t_start / span, 0.0, 1.0);
    double tau_e = std::clamp(window.t_end / span, 0.0, 1.0);

    DeformContext ctx_s, ctx_e;
    GaussianSet set_s, set_e;
    RenderOutput out_s = render_supervised(tau_s, ecam_s, &ctx_s, &set_s);
    RenderOutput out_e = render_supervised(tau_e, ecam_e, &ctx_e, &set_e);

    Image pred = predicted_log_diff(out_s.color, out_e.color);
    lb.event = event_loss(win, pred, &lb.event_all_masked);
    Image d_pred = event_loss_vjp(win, pred, cfg.lambda_event);
    RenderUpstream up_s, up_e;
    predicted_log_diff_vjp(out_s.color, out_e.color, d_pred, &up_s.d_color,
                           &up_e.d_color);

    RenderGrads g_s = render_vjp(set_s, ecam_s, bg, out_s, up_s, pool);
    RenderGrads g_e = render_vjp(set_e, ecam_e, bg, out_e, up_e, pool);
    accumulate_densify_stats(state, g_s);
    accumulate_densify_stats(state, g_e);
    deform_vjp(state.gaussians, state.field, ctx_s, g_s, &canonical,
               &field_grads, pool);
    deform_vjp(state.gaussians, state.field, ctx_e, g_e, &canonical,
               &field_grads, pool);
  }

  // --- Temporal smoothness ----------------------------------------------------
  lb.smooth = grid_smoothness(state.field.grids);
  if (phase2 && cfg.lambda_smooth > 0) {
    grid_smoothness_vjp(state.field.grids, cfg.lambda_smooth, &field_grads);
  }

  lb.total = total_loss(lb, cfg);

  // --- Updates ----------------------------------------------------------------
  apply_gaussian_updates(state, cfg, canonical, step);
  if (phase2) {
    apply_field_updates(state, cfg, field_grads);
  }
  state.step += 1;
  return lb;
}

void densify_and_prune(TrainState& state, const SensorDataset& ds,
                       const TrainConfig& cfg) {
  const size_t n = state.gaussians.size();
  require(state.densify.grad_sum.size() == n,
          "densify: statistics do not match the gaussian count");
  double split_above =
      cfg.split_scale_fraction * scene_extent(state, ds);
  double shrink = std::log(cfg.split_scale_shrink);

  enum class Action { kKeep, kClone, kSplit, kDrop };
  std::vector<Action> action(n, Action::kKeep);
  size_t grown = 0, kept = 0;
  for (size_t i = 0; i < n; ++i) {
    if (sigmoid(state.gaussians.opacity_logit[i]) < cfg.prune_opacity) {
      action[i] = Action::kDrop;
      continue;
    }
    ++kept;
    double avg = state.densify.visits[i] > 0
                     ? state.densify.grad_sum[i] / state.densify.visits[i]
                     : 0.0;
    if (avg > cfg.densify_grad_threshold) {
      double max_scale = state.gaussians.log_scale[i].maxCoeff();
      action[i] = std::exp(max_scale) > split_above ? Action::kSplit
                                                    : Action::kClone;
      ++grown;
    }
  }
  if (kept + grown > cfg.max_gaussians) {
    // Over budget: skip growth this round, pruning still applies.
    for (auto& a : action) {
      if (a == Action::kClone || a == Action::kSplit) a = Action::kKeep;
    }
  }

  GaussianSet out;
  // (source index, fresh) pairs describe where optimizer rows come from.
  std::vector<std::pair<int32_t, bool>> rows;
  for (size_t i = 0; i < n; ++i) {
    if (action[i] == Action::kDrop) continue;
    Gaussian g = state.gaussians.get(i);
    if (action[i] == Action::kKeep) {
      out.push_back(g);
      rows.push_back({static_cast<int32_t>(i), false});
      continue;
    }
    int dominant = 0;
    g.log_scale.maxCoeff(&dominant);
    Vector3d axis = rotation_from_quaternion(g.rot).col(dominant);
    Vector3d offset = 0.5 * std::exp(g.log_scale[dominant]) * axis;
    if (action[i] == Action::kClone) {
      out.push_back(g);
      rows.push_back({static_cast<int32_t>(i), false});
      Gaussian copy = g;
      copy.mu += offset;
      out.push_back(copy);
      rows.push_back({static_cast<int32_t>(i), true});
    } else {
      Gaussian child = g;
      child.log_scale -= Vector3d::Constant(shrink);
      child.mu = g.mu - offset;
      out.push_back(child);
      rows.push_back({static_cast<int32_t>(i), true});
      child.mu = g.mu + offset;
      out.push_back(child);
      rows.push_back({static_cast<int32_t>(i), true});
    }
  }

  auto remap = [&](AdamState& st, size_t stride) {
    if (st.m.empty()) return;  // group never stepped yet
    std::vector<double> m(rows.size() * stride, 0.0),
        v(rows.size() * stride, 0.0);
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].second) continue;  // fresh rows start with zero moments
      size_t src = static_cast<size_t>(rows[r].first) * stride;
      for (size_t k = 0; k < stride; ++k) {
        m[r * stride + k] = st.m[src + k];
        v[r * stride + k] = st.v[src + k];
      }
    }
    st.m = std::move(m);
    st.v = std::move(v);
  };
  remap(state.opt.mu, 3);
  remap(state.opt.rot, 4);
  remap(state.opt.log_scale, 3);
  remap(state.opt.opacity, 1);
  remap(state.opt.color, 3);

  state.gaussians = std::move(out);
  state.densify.reset(state.gaussians.size());
}

void train(TrainState& state, const SensorDataset& ds, const TrainConfig& cfg,
           const std::string& out_dir, ThreadPool* pool) {
  cfg.validate();
  fs::create_directories(out_dir);
  fs::path csv_path = fs::path(out_dir) / "loss_history.csv";
  bool fresh = state.step == 0 || !fs::exists(csv_path);
  std::ofstream csv(csv_path, fresh ? std::ios::trunc : std::ios::app);
  require(static_cast<bool>(csv), "train: cannot open " + csv_path.string());
  if (fresh) csv << "step,l_rgb,l_event,l_depth,l_g,total\n";
  csv.precision(10);

  while (state.step < cfg.total_steps) {
    int64_t step = state.step;
    LossBreakdown lb = train_step(state, ds, cfg, pool);
    csv << step << ',' << lb.rgb << ',' << lb.event << ',' << lb.depth << ','
        << lb.smooth << ',' << lb.total << '\n';

    if (state.step >= cfg.static_steps &&
        state.step >= cfg.densify_from && state.step <= cfg.densify_until &&
        state.step % cfg.densify_interval == 0 &&
        state.step < cfg.total_steps) {
      densify_and_prune(state, ds, cfg);
    }
    if (cfg.checkpoint_interval > 0 &&
        state.step % cfg.checkpoint_interval == 0 &&
        state.step < cfg.total_steps) {
      save_checkpoint((fs::path(out_dir) / ("checkpoint_" +
                                            std::to_string(state.step) +
                                            ".ckpt"))
                          .string(),
                      state);
    }
  }
  csv.flush();
  save_checkpoint((fs::path(out_dir) / "checkpoint_final.ckpt").string(),
                  state);
}

}  // namespace fsplat
