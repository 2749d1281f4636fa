#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fusionsplat/trainer.hpp"

namespace fsplat {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'S', 'C', 'K'};
constexpr char kTrailer[4] = {'K', 'C', 'S', 'F'};

struct Writer {
  std::string buf;

  void bytes(const void* p, size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  void doubles(const double* p, size_t n) {
    pod<uint64_t>(n);
    bytes(p, n * sizeof(double));
  }
  void doubles(const std::vector<double>& v) { doubles(v.data(), v.size()); }
  void vec3s(const std::vector<Vector3d>& v) {
    doubles(reinterpret_cast<const double*>(v.data()), v.size() * 3);
  }
  void vec4s(const std::vector<Vector4d>& v) {
    doubles(reinterpret_cast<const double*>(v.data()), v.size() * 4);
  }
  void adam(const AdamState& s) {
    pod<int64_t>(s.t);
    doubles(s.m);
    doubles(s.v);
  }
};

struct Reader {
  std::string buf;
  size_t pos = 0;
  std::string path;

  void need(size_t n) {
    if (pos + n > buf.size()) {
      throw validation_error("checkpoint " + path +
                             ": truncated (needed " + std::to_string(n) +
                             " bytes at offset " + std::to_string(pos) + ")");
    }
  }
  void bytes(void* p, size_t n) {
    need(n);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::vector<double> doubles() {
    uint64_t n = pod<uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    bytes(v.data(), n * sizeof(double));
    return v;
  }
  void doubles_into(std::vector<double>& out, size_t expect,
                    const char* what) {
    out = doubles();
    if (out.size() != expect) {
      throw validation_error("checkpoint " + path + ": " + what + " has " +
                             std::to_string(out.size()) + " values, expected " +
                             std::to_string(expect));
    }
  }
  template <typename VecT, int kDim>
  std::vector<VecT> vecs(size_t count, const char* what) {
    std::vector<double> raw = doubles();
    if (raw.size() != count * kDim) {
      throw validation_error("checkpoint " + path + ": " + what + " has " +
                             std::to_string(raw.size()) +
                             " values, expected " +
                             std::to_string(count * kDim));
    }
    std::vector<VecT> v(count);
    for (size_t i = 0; i < count; ++i) {
      v[i] = Eigen::Map<const VecT>(raw.data() + i * kDim);
    }
    return v;
  }
  AdamState adam() {
    AdamState s;
    s.t = pod<int64_t>();
    s.m = doubles();
    s.v = doubles();
    if (s.m.size() != s.v.size()) {
      throw validation_error("checkpoint " + path +
                             ": optimizer moment arrays disagree in size");
    }
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  Writer w;
  w.bytes(kMagic, 4);
  w.pod<uint32_t>(kCheckpointVersion);

  const GaussianSet& gs = state.gaussians;
  w.pod<uint64_t>(gs.size());
  w.vec3s(gs.mu);
  w.vec4s(gs.rot);
  w.vec3s(gs.log_scale);
  w.doubles(gs.opacity_logit);
  w.vec3s(gs.color_logit);

  const PlaneGrids& grids = state.field.grids;
  w.pod<int32_t>(grids.config.res_spatial);
  w.pod<int32_t>(grids.config.res_time);
  w.pod<int32_t>(grids.config.features);
  w.bytes(grids.bbox_lo.data(), 3 * sizeof(double));
  w.bytes(grids.bbox_hi.data(), 3 * sizeof(double));
  for (const FeaturePlane& p : grids.planes) {
    w.pod<int32_t>(p.rows);
    w.pod<int32_t>(p.cols);
    w.pod<int32_t>(p.features);
    w.doubles(p.data);
  }

  const DeformDecoder& dec = state.field.decoder;
  w.pod<int32_t>(dec.input_dim);
  w.pod<int32_t>(dec.hidden);
  w.pod<int32_t>(dec.layers);
  w.pod<int32_t>(dec.k_max);
  dec.for_each_param([&](const std::vector<double>& p) { w.doubles(p); });

  w.adam(state.opt.mu);
  w.adam(state.opt.rot);
  w.adam(state.opt.log_scale);
  w.adam(state.opt.opacity);
  w.adam(state.opt.color);
  for (const AdamState& s : state.opt.planes) w.adam(s);
  w.pod<uint64_t>(state.opt.decoder.size());
  for (const AdamState& s : state.opt.decoder) w.adam(s);

  w.pod<uint64_t>(state.densify.grad_sum.size());
  w.bytes(state.densify.grad_sum.data(),
          state.densify.grad_sum.size() * sizeof(double));
  w.bytes(state.densify.visits.data(),
          state.densify.visits.size() * sizeof(int32_t));

  w.pod<int64_t>(state.step);
  std::string rng = state.rng.save_state();
  w.pod<uint64_t>(rng.size());
  w.bytes(rng.data(), rng.size());
  w.bytes(kTrailer, 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw validation_error("checkpoint: cannot open " + path);
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  out.flush();
  if (!out) throw validation_error("checkpoint: write failed for " + path);
}

TrainState load_checkpoint(const std::string& path) {
  Reader r;
  r.path = path;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("checkpoint: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.buf = ss.str();
  }
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw validation_error("checkpoint " + path + ": bad magic");
  }
  uint32_t version = r.pod<uint32_t>();
  if (version != kCheckpointVersion) {
    throw validation_error("checkpoint " + path + ": format version " +
                           std::to_string(version) + ", this build reads " +
                           std::to_string(kCheckpointVersion));
  }

  TrainState state;
  uint64_t n = r.pod<uint64_t>();
  GaussianSet& gs = state.gaussians;
  gs.mu = r.vecs<Vector3d, 3>(n, "mu");
  gs.rot = r.vecs<Vector4d, 4>(n, "rot");
  gs.log_scale = r.vecs<Vector3d, 3>(n, "log_scale");
  r.doubles_into(gs.opacity_logit, n, "opacity_logit");
  gs.color_logit = r.vecs<Vector3d, 3>(n, "color_logit");

  PlaneGrids& grids = state.field.grids;
  grids.config.res_spatial = r.pod<int32_t>();
  grids.config.res_time = r.pod<int32_t>();
  grids.config.features = r.pod<int32_t>();
  r.bytes(grids.bbox_lo.data(), 3 * sizeof(double));
  r.bytes(grids.bbox_hi.data(), 3 * sizeof(double));
  for (FeaturePlane& p : grids.planes) {
    p.rows = r.pod<int32_t>();
    p.cols = r.pod<int32_t>();
    p.features = r.pod<int32_t>();
    r.doubles_into(p.data,
                   static_cast<size_t>(p.rows) * p.cols * p.features,
                   "feature plane");
  }

  DeformDecoder& dec = state.field.decoder;
  dec.input_dim = r.pod<int32_t>();
  dec.hidden = r.pod<int32_t>();
  dec.layers = r.pod<int32_t>();
  dec.k_max = r.pod<int32_t>();
  require(dec.layers >= 1 && dec.hidden >= 1 && dec.input_dim >= 1,
          "checkpoint " + path + ": invalid decoder dimensions");
  dec.trunk_w.resize(dec.layers);
  dec.trunk_b.resize(dec.layers);
  for (int l = 0; l < dec.layers; ++l) {
    size_t fan_in = l == 0 ? dec.input_dim : dec.hidden;
    r.doubles_into(dec.trunk_w[l], static_cast<size_t>(dec.hidden) * fan_in,
                   "trunk weights");
    r.doubles_into(dec.trunk_b[l], dec.hidden, "trunk bias");
  }
  r.doubles_into(dec.head_mu_w, 3 * static_cast<size_t>(dec.hidden),
                 "mu head weights");
  r.doubles_into(dec.head_mu_b, 3, "mu head bias");
  r.doubles_into(dec.head_scale_w, 3 * static_cast<size_t>(dec.hidden),
                 "scale head weights");
  r.doubles_into(dec.head_scale_b, 3, "scale head bias");
  r.doubles_into(dec.head_rot_w, 4 * static_cast<size_t>(dec.hidden),
                 "rot head weights");
  r.doubles_into(dec.head_rot_b, 4, "rot head bias");

  state.opt.mu = r.adam();
  state.opt.rot = r.adam();
  state.opt.log_scale = r.adam();
  state.opt.opacity = r.adam();
  state.opt.color = r.adam();
  for (AdamState& s : state.opt.planes) s = r.adam();
  uint64_t dec_slots = r.pod<uint64_t>();
  state.opt.decoder.resize(dec_slots);
  for (AdamState& s : state.opt.decoder) s = r.adam();

  uint64_t dn = r.pod<uint64_t>();
  state.densify.grad_sum.resize(dn);
  r.bytes(state.densify.grad_sum.data(), dn * sizeof(double));
  state.densify.visits.resize(dn);
  r.bytes(state.densify.visits.data(), dn * sizeof(int32_t));

  state.step = r.pod<int64_t>();
  uint64_t rng_len = r.pod<uint64_t>();
  std::string rng_state(rng_len, '\0');
  r.bytes(rng_state.data(), rng_len);
  state.rng.load_state(rng_state);

  char trailer[4];
  r.bytes(trailer, 4);
  if (std::memcmp(trailer, kTrailer, 4) != 0 || r.pos != r.buf.size()) {
    throw validation_error("checkpoint " + path +
                           ": trailing corruption detected");
  }
  return state;
}

}  // namespace fsplat
