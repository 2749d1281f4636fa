#include "fusionsplat/deformation.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace fsplat {

namespace {

constexpr size_t kDeformBlock = 2048;

// Which (x,y,z,t) coordinate feeds each plane axis; 0..2 = mu, 3 = time.
constexpr int kPlaneAxes[kPlaneCount][2] = {{0, 1}, {0, 2}, {1, 2},
                                            {0, 3}, {1, 3}, {2, 3}};

struct PlaneCoord {
  int i0, i1;      // lower node per axis
  double f0, f1;   // fractions
  double scale0, scale1;  // d(node coord)/d(mu component), 0 when clamped
};

// Maps a value to continuous node coordinates with clamping.
void node_coord(double v, double lo, double hi, int res, int* i, double* f,
                double* scale) {
  double u = (v - lo) / (hi - lo) * (res - 1);
  double du = (res - 1) / (hi - lo);
  if (u <= 0) {
    u = 0;
    du = 0;
  } else if (u >= res - 1) {
    u = res - 1;
    du = 0;
  }
  int i0 = static_cast<int>(u);
  if (i0 > res - 2) i0 = res - 2;
  *i = i0;
  *f = u - i0;
  *scale = du;
}

PlaneCoord plane_coord(const PlaneGrids& g, int plane, const Vector3d& mu,
                       double t) {
  PlaneCoord pc;
  const FeaturePlane& p = g.planes[plane];
  for (int a = 0; a < 2; ++a) {
    int axis = kPlaneAxes[plane][a];
    double v, lo, hi;
    int res = a == 0 ? p.rows : p.cols;
    if (axis == 3) {
      v = t;
      lo = 0;
      hi = 1;
    } else {
      v = mu[axis];
      lo = g.bbox_lo[axis];
      hi = g.bbox_hi[axis];
    }
    int* i = a == 0 ? &pc.i0 : &pc.i1;
    double* f = a == 0 ? &pc.f0 : &pc.f1;
    double* s = a == 0 ? &pc.scale0 : &pc.scale1;
    node_coord(v, lo, hi, res, i, f, s);
  }
  return pc;
}

double relu(double x) { return x > 0 ? x : 0; }

// y += W x + b, W row-major [out][in].
void linear(const std::vector<double>& W, const std::vector<double>& b,
            const double* x, int in, int out, double* y) {
  for (int o = 0; o < out; ++o) {
    double acc = b[o];
    const double* row = W.data() + static_cast<size_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

}  // namespace

std::vector<double> encode_time(double t, int k_max) {
  require(k_max >= 0, "encode_time: k_max must be non-negative");
  require(t >= 0.0 && t <= 1.0,
          "encode_time: t = " + std::to_string(t) + " outside [0,1]");
  std::vector<double> enc(2 * (k_max + 1));
  double freq = std::numbers::pi;
  for (int k = 0; k <= k_max; ++k) {
    enc[2 * k] = std::sin(freq * t);
    enc[2 * k + 1] = std::cos(freq * t);
    freq *= 2;
  }
  return enc;
}

std::vector<double> sample_grids(const PlaneGrids& grids, const Vector3d& mu,
                                 double t) {
  require(t >= 0.0 && t <= 1.0,
          "sample_grids: t = " + std::to_string(t) + " outside [0,1]");
  const int F = grids.config.features;
  std::vector<double> out(static_cast<size_t>(kPlaneCount) * F);
  for (int pl = 0; pl < kPlaneCount; ++pl) {
    const FeaturePlane& p = grids.planes[pl];
    PlaneCoord pc = plane_coord(grids, pl, mu, t);
    double w00 = (1 - pc.f0) * (1 - pc.f1), w01 = (1 - pc.f0) * pc.f1;
    double w10 = pc.f0 * (1 - pc.f1), w11 = pc.f0 * pc.f1;
    for (int f = 0; f < F; ++f) {
      out[static_cast<size_t>(pl) * F + f] =
          w00 * p.at(pc.i0, pc.i1, f) + w01 * p.at(pc.i0, pc.i1 + 1, f) +
          w10 * p.at(pc.i0 + 1, pc.i1, f) + w11 * p.at(pc.i0 + 1, pc.i1 + 1, f);
    }
  }
  return out;
}

PlaneGrids make_grids(const GridConfig& cfg, const Vector3d& bbox_lo,
                      const Vector3d& bbox_hi, Rng& rng) {
  require(cfg.res_spatial >= 2, "grids: res_spatial must be at least 2");
  require(cfg.res_time >= 2, "grids: res_time must be at least 2");
  require(cfg.features >= 1, "grids: features must be at least 1");
  require((bbox_hi - bbox_lo).minCoeff() >= 0,
          "grids: bbox_hi must not be below bbox_lo");
  PlaneGrids g;
  g.config = cfg;
  Vector3d ext = bbox_hi - bbox_lo;
  for (int a = 0; a < 3; ++a) {
    // 5% dilation so border Gaussians sit strictly inside; degenerate axes
    // get a small absolute pad.
    double pad = ext[a] > 1e-9 ? 0.025 * ext[a] : 1e-3;
    g.bbox_lo[a] = bbox_lo[a] - pad;
    g.bbox_hi[a] = bbox_hi[a] + pad;
  }
  for (int pl = 0; pl < kPlaneCount; ++pl) {
    FeaturePlane& p = g.planes[pl];
    p.rows = cfg.res_spatial;
    p.cols = kPlaneHasTime[pl] ? cfg.res_time : cfg.res_spatial;
    p.features = cfg.features;
    p.data.resize(static_cast<size_t>(p.rows) * p.cols * p.features);
    for (double& v : p.data) v = rng.uniform(-1e-4, 1e-4);
  }
  return g;
}

DeformDecoder make_decoder(const DecoderConfig& cfg, int grid_features,
                           Rng& rng) {
  require(cfg.hidden >= 1 && cfg.layers >= 1,
          "decoder: hidden and layers must be at least 1");
  require(cfg.k_max >= 0, "decoder: k_max must be non-negative");
  DeformDecoder d;
  d.input_dim = kPlaneCount * grid_features + 2 * (cfg.k_max + 1) + 3;
  d.hidden = cfg.hidden;
  d.layers = cfg.layers;
  d.k_max = cfg.k_max;
  d.trunk_w.resize(cfg.layers);
  d.trunk_b.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    int fan_in = l == 0 ? d.input_dim : d.hidden;
    double bound = std::sqrt(6.0 / fan_in);
    d.trunk_w[l].resize(static_cast<size_t>(d.hidden) * fan_in);
    for (double& v : d.trunk_w[l]) v = rng.uniform(-bound, bound);
    d.trunk_b[l].assign(d.hidden, 0.0);
  }
  d.head_mu_w.assign(static_cast<size_t>(3) * d.hidden, 0.0);
  d.head_mu_b.assign(3, 0.0);
  d.head_scale_w.assign(static_cast<size_t>(3) * d.hidden, 0.0);
  d.head_scale_b.assign(3, 0.0);
  d.head_rot_w.assign(static_cast<size_t>(4) * d.hidden, 0.0);
  d.head_rot_b.assign(4, 0.0);
  return d;
}

void DeformDecoder::for_each_param(
    const std::function<void(std::vector<double>&)>& fn) {
  for (int l = 0; l < layers; ++l) {
    fn(trunk_w[l]);
    fn(trunk_b[l]);
  }
  fn(head_mu_w);
  fn(head_mu_b);
  fn(head_scale_w);
  fn(head_scale_b);
  fn(head_rot_w);
  fn(head_rot_b);
}

void DeformDecoder::for_each_param(
    const std::function<void(const std::vector<double>&)>& fn) const {
  const_cast<DeformDecoder*>(this)->for_each_param(
      [&](std::vector<double>& v) { fn(v); });
}

size_t DeformDecoder::param_count() const {
  size_t n = 0;
  for_each_param([&](const std::vector<double>& v) { n += v.size(); });
  return n;
}

void FieldGrads::init_like(const DeformationField& field) {
  for (int pl = 0; pl < kPlaneCount; ++pl) {
    planes[pl].assign(field.grids.planes[pl].data.size(), 0.0);
  }
  decoder.clear();
  field.decoder.for_each_param([&](const std::vector<double>& v) {
    decoder.emplace_back(v.size(), 0.0);
  });
}

void FieldGrads::accumulate(const FieldGrads& o, double w) {
  for (int pl = 0; pl < kPlaneCount; ++pl) {
    for (size_t i = 0; i < planes[pl].size(); ++i)
      planes[pl][i] += w * o.planes[pl][i];
  }
  for (size_t a = 0; a < decoder.size(); ++a) {
    for (size_t i = 0; i < decoder[a].size(); ++i)
      decoder[a][i] += w * o.decoder[a][i];
  }
}

GaussianSet deform(const GaussianSet& gs, double t,
                   const DeformationField& field, ThreadPool* pool,
                   DeformContext* ctx) {
  const DeformDecoder& dec = field.decoder;
  const int I = dec.input_dim, D = dec.hidden, L = dec.layers;
  const int F = field.grids.config.features;
  require(I == kPlaneCount * F + 2 * (dec.k_max + 1) + 3,
          "deform: decoder input size does not match grid features");
  if (long bad = gs.first_non_finite(); bad >= 0) {
    throw numeric_error("deform: gaussian " + std::to_string(bad) +
                        " has a non-finite parameter");
  }
  std::vector<double> time_enc = encode_time(t, dec.k_max);

  const size_t n = gs.size();
  GaussianSet out = gs;  // opacity/color (and fast-path params) carry over
  if (ctx) {
    ctx->t = t;
    ctx->time_enc = time_enc;
    ctx->inputs.assign(n * static_cast<size_t>(I), 0.0);
    ctx->hidden.assign(n * static_cast<size_t>(L) * D, 0.0);
    ctx->rot_prenorm.assign(n, Vector4d::Zero());
  }

  // Identity shortcut: with all heads exactly zero and no context needed,
  // the deltas are identically zero and the input set is returned as-is.
  if (!ctx) {
    bool heads_zero = true;
    for (const auto* w : {&dec.head_mu_w, &dec.head_mu_b, &dec.head_scale_w,
                          &dec.head_scale_b, &dec.head_rot_w, &dec.head_rot_b}) {
      for (double v : *w) heads_zero &= v == 0.0;
    }
    if (heads_zero) return out;
  }

  parallel_blocks(pool, n, kDeformBlock, [&](size_t, size_t lo, size_t hi) {
    std::vector<double> x(I), h(static_cast<size_t>(L) * D), pre(D);
    for (size_t i = lo; i < hi; ++i) {
      std::vector<double> feats = sample_grids(field.grids, gs.mu[i], t);
      std::copy(feats.begin(), feats.end(), x.begin());
      std::copy(time_enc.begin(), time_enc.end(), x.begin() + kPlaneCount * F);
      x[I - 3] = gs.mu[i][0];
      x[I - 2] = gs.mu[i][1];
      x[I - 1] = gs.mu[i][2];

      const double* in = x.data();
      for (int l = 0; l < L; ++l) {
        linear(dec.trunk_w[l], dec.trunk_b[l], in, l == 0 ? I : D, D,
               pre.data());
        double* hl = h.data() + static_cast<size_t>(l) * D;
        for (int d = 0; d < D; ++d) hl[d] = relu(pre[d]);
        in = hl;
      }
      double d_mu[3], d_s[3], d_r[4];
      linear(dec.head_mu_w, dec.head_mu_b, in, D, 3, d_mu);
      linear(dec.head_scale_w, dec.head_scale_b, in, D, 3, d_s);
      linear(dec.head_rot_w, dec.head_rot_b, in, D, 4, d_r);

      bool all_zero = true, all_finite = true;
      for (double v : d_mu) {
        all_zero &= v == 0.0;
        all_finite &= std::isfinite(v);
      }
      for (double v : d_s) {
        all_zero &= v == 0.0;
        all_finite &= std::isfinite(v);
      }
      for (double v : d_r) {
        all_zero &= v == 0.0;
        all_finite &= std::isfinite(v);
      }
      if (!all_finite) {
        throw numeric_error("deform: non-finite deformation for gaussian " +
                            std::to_string(i));
      }
      Vector4d u = gs.rot[i];
      if (!all_zero) {
        out.mu[i] = gs.mu[i] + Vector3d(d_mu[0], d_mu[1], d_mu[2]);
        out.log_scale[i] = gs.log_scale[i] + Vector3d(d_s[0], d_s[1], d_s[2]);
        u += Vector4d(d_r[0], d_r[1], d_r[2], d_r[3]);
        double norm = u.norm();
        if (!(norm > 1e-12)) {
          throw numeric_error(
              "deform: rotation collapsed to zero for gaussian " +
              std::to_string(i));
        }
        out.rot[i] = u / norm;
      }
      if (ctx) {
        std::copy(x.begin(), x.end(),
                  ctx->inputs.begin() + i * static_cast<size_t>(I));
        std::copy(h.begin(), h.end(),
                  ctx->hidden.begin() + i * static_cast<size_t>(L) * D);
        ctx->rot_prenorm[i] = u;
      }
    }
  });
  return out;
}

void deform_vjp(const GaussianSet& gs, const DeformationField& field,
                const DeformContext& ctx, const RenderGrads& upstream,
                RenderGrads* canonical, FieldGrads* field_grads,
                ThreadPool* pool) {
  const DeformDecoder& dec = field.decoder;
  const int I = dec.input_dim, D = dec.hidden, L = dec.layers;
  const int F = field.grids.config.features;
  const size_t n = gs.size();
  require(ctx.inputs.size() == n * static_cast<size_t>(I),
          "deform_vjp: context does not match the gaussian set");
  require(canonical->d_mu.size() == n && upstream.d_mu.size() == n,
          "deform_vjp: gradient buffers must match the gaussian set size");

  size_t blocks = block_count(n, kDeformBlock);
  std::vector<FieldGrads> partial(blocks);
  for (auto& p : partial) p.init_like(field);

  parallel_blocks(pool, n, kDeformBlock, [&](size_t b, size_t lo, size_t hi) {
    FieldGrads& fg = partial[b];
    // decoder grad arrays in for_each_param order
    std::vector<std::vector<double>*> dg;
    for (auto& v : fg.decoder) dg.push_back(&v);
    std::vector<double> d_h(D), d_pre(D), d_x(I), tmp(std::max(I, D));
    for (size_t i = lo; i < hi; ++i) {
      const double* x = ctx.inputs.data() + i * static_cast<size_t>(I);
      const double* h = ctx.hidden.data() + i * static_cast<size_t>(L) * D;
      const double* h_last = h + static_cast<size_t>(L - 1) * D;

      // Pass-throughs.
      canonical->d_opacity_logit[i] += upstream.d_opacity_logit[i];
      canonical->d_color_logit[i] += upstream.d_color_logit[i];
      canonical->screen_grad_norm[i] += upstream.screen_grad_norm[i];

      // mu / log_scale identity paths.
      canonical->d_mu[i] += upstream.d_mu[i];
      canonical->d_log_scale[i] += upstream.d_log_scale[i];

      // rot: r' = u/|u| with u = rot + d_r.
      const Vector4d& u = ctx.rot_prenorm[i];
      double norm = u.norm();
      Vector4d uhat = u / norm;
      Vector4d d_u =
          (upstream.d_rot[i] - uhat * uhat.dot(upstream.d_rot[i])) / norm;
      canonical->d_rot[i] += d_u;

      // Head gradients; delta upstreams are exactly the deformed grads.
      const double* delta_mu = upstream.d_mu[i].data();
      const double* delta_s = upstream.d_log_scale[i].data();
      const double* delta_r = d_u.data();

      std::fill(d_h.begin(), d_h.end(), 0.0);
      auto head_back = [&](const std::vector<double>& W,
                           std::vector<double>& dW, std::vector<double>& db,
                           const double* delta, int out) {
        for (int o = 0; o < out; ++o) {
          db[o] += delta[o];
          const double* row = W.data() + static_cast<size_t>(o) * D;
          double* drow = dW.data() + static_cast<size_t>(o) * D;
          for (int d = 0; d < D; ++d) {
            drow[d] += delta[o] * h_last[d];
            d_h[d] += delta[o] * row[d];
          }
        }
      };
      size_t base = static_cast<size_t>(2) * L;  // heads follow the trunk
      head_back(dec.head_mu_w, *dg[base + 0], *dg[base + 1], delta_mu, 3);
      head_back(dec.head_scale_w, *dg[base + 2], *dg[base + 3], delta_s, 3);
      head_back(dec.head_rot_w, *dg[base + 4], *dg[base + 5], delta_r, 4);

      // Trunk, last layer to first.
      for (int l = L - 1; l >= 0; --l) {
        const double* hl = h + static_cast<size_t>(l) * D;
        for (int d = 0; d < D; ++d) d_pre[d] = hl[d] > 0 ? d_h[d] : 0.0;
        const double* in = l == 0 ? x : h + static_cast<size_t>(l - 1) * D;
        int fan_in = l == 0 ? I : D;
        std::vector<double>& dW = *dg[2 * l];
        std::vector<double>& db = *dg[2 * l + 1];
        double* d_in = l == 0 ? d_x.data() : d_h.data();
        // d_in aliases d_h for inner layers; compute into a temp first.
        std::fill(tmp.begin(), tmp.begin() + fan_in, 0.0);
        for (int o = 0; o < D; ++o) {
          double g = d_pre[o];
          db[o] += g;
          if (g == 0.0) continue;
          const double* row = dec.trunk_w[l].data() +
                              static_cast<size_t>(o) * fan_in;
          double* drow = dW.data() + static_cast<size_t>(o) * fan_in;
          for (int k = 0; k < fan_in; ++k) {
            drow[k] += g * in[k];
            tmp[k] += g * row[k];
          }
        }
        std::copy(tmp.begin(), tmp.begin() + fan_in, d_in);
      }

      // d_x: grid features, then (skipped) time encoding, then raw mu.
      canonical->d_mu[i] += Vector3d(d_x[I - 3], d_x[I - 2], d_x[I - 1]);

      for (int pl = 0; pl < kPlaneCount; ++pl) {
        const FeaturePlane& p = field.grids.planes[pl];
        PlaneCoord pc = plane_coord(field.grids, pl, gs.mu[i], ctx.t);
        double w00 = (1 - pc.f0) * (1 - pc.f1), w01 = (1 - pc.f0) * pc.f1;
        double w10 = pc.f0 * (1 - pc.f1), w11 = pc.f0 * pc.f1;
        double* gplane = fg.planes[pl].data();
        auto slot = [&](int r, int c, int f) {
          return (static_cast<size_t>(r) * p.cols + c) * F + f;
        };
        double d_f0 = 0, d_f1 = 0;
        for (int f = 0; f < F; ++f) {
          double gfeat = d_x[static_cast<size_t>(pl) * F + f];
          if (gfeat == 0.0) continue;
          gplane[slot(pc.i0, pc.i1, f)] += gfeat * w00;
          gplane[slot(pc.i0, pc.i1 + 1, f)] += gfeat * w01;
          gplane[slot(pc.i0 + 1, pc.i1, f)] += gfeat * w10;
          gplane[slot(pc.i0 + 1, pc.i1 + 1, f)] += gfeat * w11;
          double p00 = p.at(pc.i0, pc.i1, f), p01 = p.at(pc.i0, pc.i1 + 1, f);
          double p10 = p.at(pc.i0 + 1, pc.i1, f),
                 p11 = p.at(pc.i0 + 1, pc.i1 + 1, f);
          d_f0 += gfeat * ((1 - pc.f1) * (p10 - p00) + pc.f1 * (p11 - p01));
          d_f1 += gfeat * ((1 - pc.f0) * (p01 - p00) + pc.f0 * (p11 - p10));
        }
        // Chain node coordinates back to mu (time axis carries no gradient).
        int axis0 = kPlaneAxes[pl][0], axis1 = kPlaneAxes[pl][1];
        if (axis0 < 3) canonical->d_mu[i][axis0] += d_f0 * pc.scale0;
        if (axis1 < 3) canonical->d_mu[i][axis1] += d_f1 * pc.scale1;
      }
    }
  });

  // Deterministic merge in block order.
  for (auto& p : partial) field_grads->accumulate(p, 1.0);
}

double grid_smoothness(const PlaneGrids& grids) {
  require(grids.config.res_time >= 3,
          "grid_smoothness: needs at least 3 time nodes");
  double sum = 0;
  size_t count = 0;
  for (int pl = 0; pl < kPlaneCount; ++pl) {
    if (!kPlaneHasTime[pl]) continue;
    const FeaturePlane& p = grids.planes[pl];
    for (int r = 0; r < p.rows; ++r) {
      for (int c = 1; c + 1 < p.cols; ++c) {
        for (int f = 0; f < p.features; ++f) {
          double d2 = p.at(r, c - 1, f) - 2 * p.at(r, c, f) + p.at(r, c + 1, f);
          sum += d2 * d2;
          ++count;
        }
      }
    }
  }
  return sum / static_cast<double>(count);
}

void grid_smoothness_vjp(const PlaneGrids& grids, double upstream,
                         FieldGrads* field_grads) {
  require(grids.config.res_time >= 3,
          "grid_smoothness: needs at least 3 time nodes");
  size_t count = 0;
  for (int pl = 0; pl < kPlaneCount; ++pl) {
    if (!kPlaneHasTime[pl]) continue;
    const FeaturePlane& p = grids.planes[pl];
    count += static_cast<size_t>(p.rows) * (p.cols - 2) * p.features;
  }
  double k = 2.0 * upstream / static_cast<double>(count);
  for (int pl = 0; pl < kPlaneCount; ++pl) {
    if (!kPlaneHasTime[pl]) continue;
    const FeaturePlane& p = grids.planes[pl];
    std::vector<double>& g = field_grads->planes[pl];
    auto slot = [&](int r, int c, int f) {
      return (static_cast<size_t>(r) * p.cols + c) * p.features + f;
    };
    for (int r = 0; r < p.rows; ++r) {
      for (int c = 1; c + 1 < p.cols; ++c) {
        for (int f = 0; f < p.features; ++f) {
          double d2 =
              p.at(r, c - 1, f) - 2 * p.at(r, c, f) + p.at(r, c + 1, f);
          g[slot(r, c - 1, f)] += k * d2;
          g[slot(r, c, f)] += -2 * k * d2;
          g[slot(r, c + 1, f)] += k * d2;
        }
      }
    }
  }
}

}  // namespace fsplat
