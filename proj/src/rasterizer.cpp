#include "fusionsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fsplat {

namespace {

constexpr size_t kGaussianBlock = 256;

struct TileGradEntry {
  int32_t g;
  // d_mu2 (2), d_cov2 upper triangle (a, b, c), d_z, d_opacity (pre-sigmoid
  // chain), d_color on the squashed value (3).
  double v[10];
};

struct TileRecords {
  std::vector<BlendRecord> records;
  std::vector<uint16_t> per_pixel;  // record count per in-tile pixel
};

int tile_dim(int size) { return (size + kTileSize - 1) / kTileSize; }

}  // namespace

void RenderGrads::resize(size_t n) {
  d_mu.assign(n, Vector3d::Zero());
  d_rot.assign(n, Vector4d::Zero());
  d_log_scale.assign(n, Vector3d::Zero());
  d_opacity_logit.assign(n, 0.0);
  d_color_logit.assign(n, Vector3d::Zero());
  screen_grad_norm.assign(n, 0.0);
}

void RenderGrads::accumulate(const RenderGrads& o, double w) {
  for (size_t i = 0; i < d_mu.size(); ++i) {
    d_mu[i] += w * o.d_mu[i];
    d_rot[i] += w * o.d_rot[i];
    d_log_scale[i] += w * o.d_log_scale[i];
    d_opacity_logit[i] += w * o.d_opacity_logit[i];
    d_color_logit[i] += w * o.d_color_logit[i];
    screen_grad_norm[i] += std::abs(w) * o.screen_grad_norm[i];
  }
}

RenderOutput render(const GaussianSet& gs, const Camera& cam,
                    const Vector3d& background, ThreadPool* pool) {
  cam.validate("render");
  if (long bad = gs.first_non_finite(); bad >= 0) {
    throw numeric_error("render: gaussian " + std::to_string(bad) +
                        " has a non-finite parameter");
  }
  if (!background.allFinite()) {
    throw numeric_error("render: non-finite background color");
  }

  const size_t n = gs.size();
  const int W = cam.width, H = cam.height;
  RenderOutput out;
  out.color = Image(W, H, 3);
  out.depth = Image(W, H, 1);
  out.alpha = Image(W, H, 1);
  out.projections.assign(n, Projected2D{});
  out.inv_cov.assign(n, Matrix2d::Identity());
  out.final_transmittance.assign(static_cast<size_t>(W) * H, 1.0);
  out.depth_blend.assign(static_cast<size_t>(W) * H, 0.0);

  std::vector<double> radius(n, 0.0);
  parallel_blocks(pool, n, kGaussianBlock,
                  [&](size_t, size_t lo, size_t hi) {
                    for (size_t i = lo; i < hi; ++i) {
                      Projected2D p = project_gaussian(gs.get(i), cam);
                      out.projections[i] = p;
                      if (!p.valid) continue;
                      double a = p.cov2(0, 0), b = p.cov2(0, 1),
                             c = p.cov2(1, 1);
                      double det = a * c - b * b;
                      out.inv_cov[i] << c / det, -b / det, -b / det, a / det;
                      double lam_max =
                          0.5 * (a + c) +
                          std::sqrt(0.25 * (a - c) * (a - c) + b * b);
                      radius[i] = 3.0 * std::sqrt(lam_max);
                    }
                  });

  // Global compositing order: camera depth, index breaks ties.
  std::vector<int32_t> order;
  order.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (out.projections[i].valid) order.push_back(static_cast<int32_t>(i));
  }
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    double za = out.projections[a].z_cam, zb = out.projections[b].z_cam;
    return za < zb || (za == zb && a < b);
  });

  const int tx = tile_dim(W), ty = tile_dim(H);
  std::vector<std::vector<int32_t>> tile_lists(static_cast<size_t>(tx) * ty);
  for (int32_t gi : order) {
    const Projected2D& p = out.projections[gi];
    double r = radius[gi];
    // Pixels sample at integer + 0.5.
    int x0 = static_cast<int>(std::floor(p.mu2[0] - r - kPixelCenter)) + 1;
    int x1 = static_cast<int>(std::floor(p.mu2[0] + r - kPixelCenter));
    int y0 = static_cast<int>(std::floor(p.mu2[1] - r - kPixelCenter)) + 1;
    int y1 = static_cast<int>(std::floor(p.mu2[1] + r - kPixelCenter));
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, W - 1);
    y1 = std::min(y1, H - 1);
    if (x0 > x1 || y0 > y1) continue;
    for (int tyi = y0 / kTileSize; tyi <= y1 / kTileSize; ++tyi) {
      for (int txi = x0 / kTileSize; txi <= x1 / kTileSize; ++txi) {
        tile_lists[static_cast<size_t>(tyi) * tx + txi].push_back(gi);
      }
    }
  }

  std::vector<TileRecords> tiles(tile_lists.size());
  auto run_tile = [&](size_t t, size_t, size_t) {
    const auto& list = tile_lists[t];
    TileRecords& tr = tiles[t];
    int px0 = static_cast<int>(t % tx) * kTileSize;
    int py0 = static_cast<int>(t / tx) * kTileSize;
    int px1 = std::min(px0 + kTileSize, W);
    int py1 = std::min(py0 + kTileSize, H);
    tr.per_pixel.assign(static_cast<size_t>(px1 - px0) * (py1 - py0), 0);
    size_t slot = 0;
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x, ++slot) {
        Vector2d pix(x + kPixelCenter, y + kPixelCenter);
        double T = 1.0;
        double cr = 0, cg = 0, cb = 0, zsum = 0;
        uint16_t count = 0;
        for (int32_t gi : list) {
          const Projected2D& p = out.projections[gi];
          Vector2d d = pix - p.mu2;
          const Matrix2d& M = out.inv_cov[gi];
          double q = d.dot(M * d);
          if (q > kMahalanobisMax) continue;
          double opac = sigmoid(gs.opacity_logit[gi]);
          double a = opac * std::exp(-0.5 * q);
          if (a <= 0.0) continue;
          tr.records.push_back(BlendRecord{gi, a, T});
          ++count;
          double w = a * T;
          cr += w * sigmoid(gs.color_logit[gi][0]);
          cg += w * sigmoid(gs.color_logit[gi][1]);
          cb += w * sigmoid(gs.color_logit[gi][2]);
          zsum += w * p.z_cam;
          T *= 1.0 - a;
          if (T < kTransmittanceMin) break;
        }
        tr.per_pixel[slot] = count;
        size_t pix_idx = static_cast<size_t>(y) * W + x;
        out.color.at(y, x, 0) = cr + background[0] * T;
        out.color.at(y, x, 1) = cg + background[1] * T;
        out.color.at(y, x, 2) = cb + background[2] * T;
        double alpha = 1.0 - T;
        out.alpha.at(y, x) = alpha;
        out.final_transmittance[pix_idx] = T;
        out.depth_blend[pix_idx] = zsum;
        out.depth.at(y, x) = alpha > kDepthAlphaMin ? zsum / alpha : cam.far;
      }
    }
  };
  parallel_blocks(pool, tiles.size(), 1, run_tile);

  // Flatten tile records into per-pixel ranges.
  out.pixel_offset.assign(static_cast<size_t>(W) * H + 1, 0);
  for (size_t t = 0; t < tiles.size(); ++t) {
    int px0 = static_cast<int>(t % tx) * kTileSize;
    int py0 = static_cast<int>(t / tx) * kTileSize;
    int px1 = std::min(px0 + kTileSize, W);
    int py1 = std::min(py0 + kTileSize, H);
    size_t slot = 0;
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x, ++slot) {
        out.pixel_offset[static_cast<size_t>(y) * W + x + 1] =
            tiles[t].per_pixel[slot];
      }
    }
  }
  std::partial_sum(out.pixel_offset.begin(), out.pixel_offset.end(),
                   out.pixel_offset.begin());
  out.records.resize(out.pixel_offset.back());
  parallel_blocks(pool, tiles.size(), 1, [&](size_t t, size_t, size_t) {
    int px0 = static_cast<int>(t % tx) * kTileSize;
    int py0 = static_cast<int>(t / tx) * kTileSize;
    int px1 = std::min(px0 + kTileSize, W);
    int py1 = std::min(py0 + kTileSize, H);
    size_t slot = 0, src = 0;
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x, ++slot) {
        size_t dst = out.pixel_offset[static_cast<size_t>(y) * W + x];
        for (uint16_t k = 0; k < tiles[t].per_pixel[slot]; ++k) {
          out.records[dst + k] = tiles[t].records[src++];
        }
      }
    }
  });
  return out;
}

RenderGrads render_vjp(const GaussianSet& gs, const Camera& cam,
                       const Vector3d& background, const RenderOutput& fwd,
                       const RenderUpstream& up, ThreadPool* pool) {
  const size_t n = gs.size();
  const int W = cam.width, H = cam.height;
  auto check_plane = [&](const Image& im, int ch, const char* name) {
    if (im.data.empty()) return;
    require(im.width == W && im.height == H && im.channels == ch,
            std::string("render_vjp: upstream ") + name + " has wrong shape");
  };
  check_plane(up.d_color, 3, "d_color");
  check_plane(up.d_depth, 1, "d_depth");
  check_plane(up.d_alpha, 1, "d_alpha");

  const int tx = tile_dim(W), ty = tile_dim(H);
  std::vector<std::vector<TileGradEntry>> tile_entries(
      static_cast<size_t>(tx) * ty);

  auto run_tile = [&](size_t t, size_t, size_t) {
    auto& entries = tile_entries[t];
    int px0 = static_cast<int>(t % tx) * kTileSize;
    int py0 = static_cast<int>(t / tx) * kTileSize;
    int px1 = std::min(px0 + kTileSize, W);
    int py1 = std::min(py0 + kTileSize, H);
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        size_t pix_idx = static_cast<size_t>(y) * W + x;
        size_t rec0 = fwd.pixel_offset[pix_idx];
        size_t rec1 = fwd.pixel_offset[pix_idx + 1];
        if (rec0 == rec1) continue;

        double gC[3] = {0, 0, 0};
        if (!up.d_color.data.empty()) {
          gC[0] = up.d_color.at(y, x, 0);
          gC[1] = up.d_color.at(y, x, 1);
          gC[2] = up.d_color.at(y, x, 2);
        }
        double gD = up.d_depth.data.empty() ? 0.0 : up.d_depth.at(y, x);
        double gA = up.d_alpha.data.empty() ? 0.0 : up.d_alpha.at(y, x);

        double T_final = fwd.final_transmittance[pix_idx];
        double alpha_total = 1.0 - T_final;
        double z_raw = fwd.depth_blend[pix_idx];

        // depth = z_raw / alpha_total (or constant far): chain both paths.
        double d_zraw = 0.0, d_alpha_total = gA;
        if (alpha_total > kDepthAlphaMin && gD != 0.0) {
          d_zraw = gD / alpha_total;
          d_alpha_total -= gD * z_raw / (alpha_total * alpha_total);
        }
        // color += background * T_final; alpha = 1 - T_final.
        double d_T_final = -d_alpha_total;
        d_T_final += gC[0] * background[0] + gC[1] * background[1] +
                     gC[2] * background[2];

        // Reverse walk with suffix accumulators; no divisions, so records
        // with alpha == 1 are handled exactly.
        double Sr = 0, Sg = 0, Sb = 0, Sz = 0, V = 1;
        Vector2d pix(x + kPixelCenter, y + kPixelCenter);
        for (size_t k = rec1; k-- > rec0;) {
          const BlendRecord& rec = fwd.records[k];
          int32_t gi = rec.gaussian;
          double a = rec.alpha;
          double T = rec.transmittance;
          double w = a * T;
          const Projected2D& p = fwd.projections[gi];

          double cu[3] = {sigmoid(gs.color_logit[gi][0]),
                          sigmoid(gs.color_logit[gi][1]),
                          sigmoid(gs.color_logit[gi][2])};

          double g_alpha = gC[0] * T * (cu[0] - Sr) + gC[1] * T * (cu[1] - Sg) +
                           gC[2] * T * (cu[2] - Sb) +
                           d_zraw * T * (p.z_cam - Sz) - d_T_final * T * V;

          TileGradEntry e;
          e.g = gi;
          double G_val = a / sigmoid(gs.opacity_logit[gi]);
          // dq and d(mu2) through the exponent q = d^T M d.
          Vector2d dvec = pix - p.mu2;
          Vector2d u = fwd.inv_cov[gi] * dvec;
          double half_ga = 0.5 * g_alpha * a;
          e.v[0] = g_alpha * a * u[0];   // d mu2.x
          e.v[1] = g_alpha * a * u[1];   // d mu2.y
          e.v[2] = half_ga * u[0] * u[0];  // d cov2 aa
          e.v[3] = half_ga * u[0] * u[1];  // d cov2 ab (= ba)
          e.v[4] = half_ga * u[1] * u[1];  // d cov2 bb
          e.v[5] = d_zraw * w;             // d z_cam
          e.v[6] = g_alpha * G_val;        // d opacity (before sigmoid chain)
          e.v[7] = gC[0] * w;              // d color on squashed value
          e.v[8] = gC[1] * w;
          e.v[9] = gC[2] * w;
          entries.push_back(e);

          // Suffix update: S(k-1) = c_k a_k + (1 - a_k) S(k), V likewise.
          Sr = cu[0] * a + (1 - a) * Sr;
          Sg = cu[1] * a + (1 - a) * Sg;
          Sb = cu[2] * a + (1 - a) * Sb;
          Sz = p.z_cam * a + (1 - a) * Sz;
          V *= 1 - a;
        }
      }
    }
  };
  parallel_blocks(pool, tile_entries.size(), 1, run_tile);

  // Phase 2: merge per-tile entries in tile order - the accumulation order
  // is fixed no matter how phase 1 was scheduled.
  std::vector<Vector2d> acc_mu2(n, Vector2d::Zero());
  std::vector<double> acc_cov(3 * n, 0.0);
  std::vector<double> acc_z(n, 0.0), acc_op(n, 0.0);
  std::vector<Vector3d> acc_col(n, Vector3d::Zero());
  std::vector<uint8_t> touched(n, 0);
  for (const auto& entries : tile_entries) {
    for (const TileGradEntry& e : entries) {
      acc_mu2[e.g][0] += e.v[0];
      acc_mu2[e.g][1] += e.v[1];
      acc_cov[3 * e.g] += e.v[2];
      acc_cov[3 * e.g + 1] += e.v[3];
      acc_cov[3 * e.g + 2] += e.v[4];
      acc_z[e.g] += e.v[5];
      acc_op[e.g] += e.v[6];
      acc_col[e.g] += Vector3d(e.v[7], e.v[8], e.v[9]);
      touched[e.g] = 1;
    }
  }

  RenderGrads grads;
  grads.resize(n);
  parallel_blocks(pool, n, kGaussianBlock, [&](size_t, size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      if (!touched[i]) continue;
      double opac = sigmoid(gs.opacity_logit[i]);
      grads.d_opacity_logit[i] = acc_op[i] * opac * (1 - opac);
      for (int c = 0; c < 3; ++c) {
        double cv = sigmoid(gs.color_logit[i][c]);
        grads.d_color_logit[i][c] = acc_col[i][c] * cv * (1 - cv);
      }
      ProjectedGrad pg;
      pg.d_mu2 = acc_mu2[i];
      pg.d_cov2 << acc_cov[3 * i], acc_cov[3 * i + 1], acc_cov[3 * i + 1],
          acc_cov[3 * i + 2];
      pg.d_z = acc_z[i];
      GaussianGrad gg = project_gaussian_vjp(gs.get(i), cam, pg);
      grads.d_mu[i] = gg.d_mu;
      grads.d_rot[i] = gg.d_rot;
      grads.d_log_scale[i] = gg.d_log_scale;
      grads.screen_grad_norm[i] = acc_mu2[i].norm();
    }
  });
  return grads;
}

}  // namespace fsplat
