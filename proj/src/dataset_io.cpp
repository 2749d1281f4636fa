#include "fusionsplat/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fsplat {

static_assert(std::endian::native == std::endian::little,
              "binary codecs assume a little-endian host");

namespace fs = std::filesystem;

namespace {

constexpr size_t kEventHeaderSize = 16;
constexpr size_t kEventRecordSize = 14;
constexpr int kMaxListedProblems = 20;

void append_u16(std::string* b, uint16_t v) {
  b->append(reinterpret_cast<const char*>(&v), 2);
}
void append_u32(std::string* b, uint32_t v) {
  b->append(reinterpret_cast<const char*>(&v), 4);
}
void append_f64(std::string* b, double v) {
  b->append(reinterpret_cast<const char*>(&v), 8);
}

uint16_t load_u16(const char* p) {
  uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}
uint32_t load_u32(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
double load_f64(const char* p) {
  double v;
  std::memcpy(&v, p, 8);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw validation_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw validation_error("short write to " + path);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Throws one validation_error carrying every collected problem.
void throw_problems(const std::string& context,
                    const std::vector<std::string>& problems) {
  std::ostringstream os;
  os << context << ": " << problems.size() << " problem(s)";
  int listed = 0;
  for (const auto& p : problems) {
    if (listed++ == kMaxListedProblems) {
      os << "\n  - ... and " << problems.size() - kMaxListedProblems
         << " more";
      break;
    }
    os << "\n  - " << p;
  }
  throw validation_error(os.str());
}

void camera_tokens(std::ostringstream& os, const Camera& cam) {
  os << ' ' << cam.width << ' ' << cam.height << ' ' << fmt_double(cam.fx)
     << ' ' << fmt_double(cam.fy) << ' ' << fmt_double(cam.cx) << ' '
     << fmt_double(cam.cy) << ' ' << fmt_double(cam.near) << ' '
     << fmt_double(cam.far);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      os << ' ' << fmt_double(cam.world_to_camera(r, c));
    }
  }
}

// Parses the 20 camera tokens starting at tokens[pos]; returns false and
// reports through *problem on malformed input.
bool parse_camera(const std::vector<std::string>& tokens, size_t pos,
                  double timestamp, Camera* cam, std::string* problem) {
  if (tokens.size() < pos + 20) {
    *problem = "too few camera fields";
    return false;
  }
  try {
    size_t used = 0;
    cam->width = std::stoi(tokens[pos], &used);
    cam->height = std::stoi(tokens[pos + 1]);
    cam->fx = std::stod(tokens[pos + 2]);
    cam->fy = std::stod(tokens[pos + 3]);
    cam->cx = std::stod(tokens[pos + 4]);
    cam->cy = std::stod(tokens[pos + 5]);
    cam->near = std::stod(tokens[pos + 6]);
    cam->far = std::stod(tokens[pos + 7]);
    cam->world_to_camera = Matrix4d::Identity();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        cam->world_to_camera(r, c) = std::stod(tokens[pos + 8 + 4 * r + c]);
      }
    }
  } catch (const std::exception&) {
    *problem = "malformed numeric camera field";
    return false;
  }
  cam->timestamp = timestamp;
  return true;
}

bool same_pose(const Camera& a, const Camera& b) {
  return a.world_to_camera == b.world_to_camera;
}

}  // namespace

// ---- event stream codec ----------------------------------------------------

void write_event_stream(const std::string& path, const EventStream& stream) {
  require(stream.width > 0 && stream.height > 0,
          "write_event_stream: sensor size missing");
  require(stream.events.size() <= 0xffffffffull,
          "write_event_stream: too many events for the format");
  std::string b;
  b.reserve(kEventHeaderSize + stream.events.size() * kEventRecordSize);
  b.append("EVST", 4);
  append_u16(&b, kEventFormatVersion);
  append_u16(&b, stream.width);
  append_u16(&b, stream.height);
  append_u32(&b, static_cast<uint32_t>(stream.events.size()));
  b.append(2, '\0');
  for (const Event& e : stream.events) {
    append_u16(&b, e.x);
    append_u16(&b, e.y);
    append_f64(&b, e.t);
    b.push_back(static_cast<char>(e.polarity));
    b.push_back('\0');
  }
  write_file(path, b);
}

EventStream read_event_stream(const std::string& path) {
  std::string b = read_file(path);
  std::vector<std::string> problems;
  EventStream out;
  if (b.size() < kEventHeaderSize) {
    problems.push_back("file is smaller than the 16-byte header");
    throw_problems("event stream " + path, problems);
  }
  if (std::memcmp(b.data(), "EVST", 4) != 0) {
    problems.push_back("bad magic (expected \"EVST\")");
    throw_problems("event stream " + path, problems);
  }
  uint16_t version = load_u16(b.data() + 4);
  if (version != kEventFormatVersion) {
    problems.push_back("unsupported version " + std::to_string(version) +
                       " (this build reads version " +
                       std::to_string(kEventFormatVersion) + ")");
    throw_problems("event stream " + path, problems);
  }
  out.width = load_u16(b.data() + 6);
  out.height = load_u16(b.data() + 8);
  uint32_t count = load_u32(b.data() + 10);
  if (out.width == 0 || out.height == 0) {
    problems.push_back("sensor size is zero");
  }
  size_t expected = kEventHeaderSize + static_cast<size_t>(count) *
                                            kEventRecordSize;
  if (b.size() != expected) {
    problems.push_back("file size " + std::to_string(b.size()) +
                       " does not match header record count " +
                       std::to_string(count) + " (expected " +
                       std::to_string(expected) + " bytes)");
    throw_problems("event stream " + path, problems);
  }
  out.events.resize(count);
  double prev_t = -std::numeric_limits<double>::infinity();
  for (uint32_t i = 0; i < count; ++i) {
    size_t off = kEventHeaderSize + static_cast<size_t>(i) * kEventRecordSize;
    const char* p = b.data() + off;
    Event& e = out.events[i];
    e.x = load_u16(p);
    e.y = load_u16(p + 2);
    e.t = load_f64(p + 4);
    e.polarity = static_cast<int8_t>(p[12]);
    auto rec_problem = [&](const std::string& what) {
      problems.push_back("record " + std::to_string(i) + " at byte offset " +
                         std::to_string(off) + ": " + what);
    };
    if (e.x >= out.width) {
      rec_problem("x=" + std::to_string(e.x) + " outside sensor width " +
                  std::to_string(out.width));
    }
    if (e.y >= out.height) {
      rec_problem("y=" + std::to_string(e.y) + " outside sensor height " +
                  std::to_string(out.height));
    }
    if (e.polarity != 1 && e.polarity != -1) {
      rec_problem("polarity " + std::to_string(e.polarity) +
                  " (must be +1 or -1)");
    }
    if (!std::isfinite(e.t)) {
      rec_problem("non-finite timestamp");
    } else if (e.t < prev_t) {
      rec_problem("timestamp " + fmt_double(e.t) +
                  " precedes the previous record");
    } else {
      prev_t = e.t;
    }
  }
  if (!problems.empty()) throw_problems("event stream " + path, problems);
  return out;
}

// ---- depth codec ------------------------------------------------------------

void write_depth(const std::string& path, const Image& depth) {
  require(depth.channels == 1, "write_depth: depth must be single-channel");
  require(depth.width > 0 && depth.height > 0, "write_depth: empty image");
  std::string b;
  b.reserve(12 + depth.data.size() * 4);
  b.append("DPTH", 4);
  append_u32(&b, static_cast<uint32_t>(depth.width));
  append_u32(&b, static_cast<uint32_t>(depth.height));
  for (double v : depth.data) {
    float f = static_cast<float>(v);
    b.append(reinterpret_cast<const char*>(&f), 4);
  }
  write_file(path, b);
}

Image read_depth(const std::string& path) {
  std::string b = read_file(path);
  std::vector<std::string> problems;
  if (b.size() < 12) {
    problems.push_back("file is smaller than the 12-byte header");
    throw_problems("depth plane " + path, problems);
  }
  if (std::memcmp(b.data(), "DPTH", 4) != 0) {
    problems.push_back("bad magic (expected \"DPTH\")");
    throw_problems("depth plane " + path, problems);
  }
  uint32_t w = load_u32(b.data() + 4), h = load_u32(b.data() + 8);
  size_t expected = 12 + static_cast<size_t>(w) * h * 4;
  if (w == 0 || h == 0) problems.push_back("image size is zero");
  if (b.size() != expected) {
    problems.push_back("file size " + std::to_string(b.size()) +
                       " does not match " + std::to_string(w) + "x" +
                       std::to_string(h) + " (expected " +
                       std::to_string(expected) + " bytes)");
    throw_problems("depth plane " + path, problems);
  }
  Image out(static_cast<int>(w), static_cast<int>(h), 1);
  for (size_t i = 0; i < out.data.size(); ++i) {
    float f;
    std::memcpy(&f, b.data() + 12 + i * 4, 4);
    if (!std::isfinite(f) || f < 0) {
      problems.push_back("pixel " + std::to_string(i) +
                         ": depth must be finite and non-negative");
      if (problems.size() > kMaxListedProblems) break;
    }
    out.data[i] = f;
  }
  if (!problems.empty()) throw_problems("depth plane " + path, problems);
  return out;
}

// ---- dataset ----------------------------------------------------------------

const Camera& SensorDataset::event_camera_at(double t) const {
  require(!event_poses.empty(), "dataset has no event camera poses");
  size_t best = 0;
  double best_d = std::abs(event_poses[0].timestamp - t);
  for (size_t i = 1; i < event_poses.size(); ++i) {
    double d = std::abs(event_poses[i].timestamp - t);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return event_poses[best];
}

std::vector<size_t> SensorDataset::frames_in_split(
    const std::string& split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < rgb.size(); ++i) {
    if (rgb[i].split == split) out.push_back(i);
  }
  return out;
}

void SensorDataset::build_pairing() {
  rgb_depth_pair.assign(rgb.size(), -1);
  for (size_t i = 0; i < rgb.size(); ++i) {
    for (size_t j = 0; j < depth.size(); ++j) {
      if (rgb[i].split == depth[j].split &&
          rgb[i].cam.timestamp == depth[j].cam.timestamp &&
          same_pose(rgb[i].cam, depth[j].cam)) {
        rgb_depth_pair[i] = static_cast<int>(j);
        break;
      }
    }
  }
}

void write_dataset(const std::string& dir, const SensorDataset& ds) {
  fs::create_directories(dir);
  fs::create_directories(fs::path(dir) / "rgb");
  fs::create_directories(fs::path(dir) / "depth");

  std::ostringstream m;
  m << "fusionsplat-dataset 1\n";
  m << "meta name " << ds.meta.name << '\n';
  m << "meta span " << fmt_double(ds.meta.span) << '\n';
  m << "meta eta " << fmt_double(ds.meta.eta) << '\n';
  m << "meta scene_diameter " << fmt_double(ds.meta.scene_diameter) << '\n';
  m << "meta background " << fmt_double(ds.meta.background[0]) << ' '
    << fmt_double(ds.meta.background[1]) << ' '
    << fmt_double(ds.meta.background[2]) << '\n';
  if (!ds.events.events.empty() || !ds.event_poses.empty()) {
    m << "events events.evst\n";
    write_event_stream((fs::path(dir) / "events.evst").string(), ds.events);
  }
  for (const Camera& cam : ds.event_poses) {
    m << "epose " << fmt_double(cam.timestamp);
    camera_tokens(m, cam);
    m << '\n';
  }
  for (const FrameRecord& f : ds.rgb) {
    write_png((fs::path(dir) / f.path).string(), f.image);
    m << "frame rgb " << f.split << ' ' << fmt_double(f.cam.timestamp) << ' '
      << f.path;
    camera_tokens(m, f.cam);
    m << '\n';
  }
  for (const FrameRecord& f : ds.depth) {
    write_depth((fs::path(dir) / f.path).string(), f.image);
    m << "frame depth " << f.split << ' ' << fmt_double(f.cam.timestamp)
      << ' ' << f.path;
    camera_tokens(m, f.cam);
    m << '\n';
  }
  write_file((fs::path(dir) / "manifest.txt").string(), m.str());
}

SensorDataset load_dataset(const std::string& dir) {
  SensorDataset ds;
  ds.root = dir;
  std::vector<std::string> problems;
  std::string manifest;
  try {
    manifest = read_file((fs::path(dir) / "manifest.txt").string());
  } catch (const validation_error& e) {
    problems.push_back(e.what());
    throw_problems("dataset " + dir, problems);
  }

  std::istringstream lines(manifest);
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::string events_path;
  int events_line = 0;
  bool span_seen = false;

  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    if (tok.empty()) continue;
    auto problem = [&](const std::string& what) {
      problems.push_back("manifest line " + std::to_string(line_no) + ": " +
                         what);
    };

    if (!header_seen) {
      if (tok.size() != 2 || tok[0] != "fusionsplat-dataset" ||
          tok[1] != "1") {
        problem("first line must be \"fusionsplat-dataset 1\"");
        throw_problems("dataset " + dir, problems);
      }
      header_seen = true;
      continue;
    }

    if (tok[0] == "meta") {
      if (tok.size() < 3) {
        problem("meta line needs a key and a value");
        continue;
      }
      try {
        if (tok[1] == "name") {
          ds.meta.name = tok[2];
        } else if (tok[1] == "span") {
          ds.meta.span = std::stod(tok[2]);
          span_seen = true;
        } else if (tok[1] == "eta") {
          ds.meta.eta = std::stod(tok[2]);
        } else if (tok[1] == "scene_diameter") {
          ds.meta.scene_diameter = std::stod(tok[2]);
        } else if (tok[1] == "background") {
          if (tok.size() != 5) {
            problem("background needs three components");
            continue;
          }
          for (int c = 0; c < 3; ++c)
            ds.meta.background[c] = std::stod(tok[2 + c]);
        } else {
          problem("unknown meta key '" + tok[1] + "'");
        }
      } catch (const std::exception&) {
        problem("malformed numeric value for meta key '" + tok[1] + "'");
      }
    } else if (tok[0] == "events") {
      if (tok.size() != 2) {
        problem("events line needs exactly one path");
        continue;
      }
      events_path = tok[1];
      events_line = line_no;
    } else if (tok[0] == "epose") {
      if (tok.size() != 22) {
        problem("epose line needs a timestamp and 20 camera fields");
        continue;
      }
      double ts = 0;
      try {
        ts = std::stod(tok[1]);
      } catch (const std::exception&) {
        problem("malformed epose timestamp");
        continue;
      }
      Camera cam;
      std::string why;
      if (!parse_camera(tok, 2, ts, &cam, &why)) {
        problem(why);
        continue;
      }
      try {
        cam.validate("epose line " + std::to_string(line_no));
      } catch (const validation_error& e) {
        problems.push_back(e.what());
        continue;
      }
      ds.event_poses.push_back(cam);
    } else if (tok[0] == "frame") {
      if (tok.size() != 25) {
        problem("frame line needs kind, split, timestamp, path and 20 "
                "camera fields");
        continue;
      }
      const std::string& kind = tok[1];
      const std::string& split = tok[2];
      if (kind != "rgb" && kind != "depth") {
        problem("unknown frame kind '" + kind + "'");
        continue;
      }
      if (split != "train" && split != "eval" && split != "eval_mid") {
        problem("unknown split '" + split + "'");
        continue;
      }
      double ts = 0;
      try {
        ts = std::stod(tok[3]);
      } catch (const std::exception&) {
        problem("malformed frame timestamp");
        continue;
      }
      FrameRecord rec;
      rec.split = split;
      rec.path = tok[4];
      std::string why;
      if (!parse_camera(tok, 5, ts, &rec.cam, &why)) {
        problem(why);
        continue;
      }
      try {
        rec.cam.validate("frame line " + std::to_string(line_no));
      } catch (const validation_error& e) {
        problems.push_back(e.what());
        continue;
      }
      std::string full = (fs::path(dir) / rec.path).string();
      try {
        rec.image = kind == "rgb" ? read_png(full) : read_depth(full);
      } catch (const validation_error& e) {
        problems.push_back(e.what());
        continue;
      }
      if (rec.image.width != rec.cam.width ||
          rec.image.height != rec.cam.height) {
        problem("image " + rec.path + " is " +
                std::to_string(rec.image.width) + "x" +
                std::to_string(rec.image.height) +
                " but the camera declares " + std::to_string(rec.cam.width) +
                "x" + std::to_string(rec.cam.height));
        continue;
      }
      (kind == "rgb" ? ds.rgb : ds.depth).push_back(std::move(rec));
    } else {
      problem("unknown directive '" + tok[0] + "'");
    }
  }

  if (!header_seen) {
    problems.push_back("manifest is empty");
    throw_problems("dataset " + dir, problems);
  }
  if (!span_seen) problems.push_back("manifest never declares meta span");
  if (!(ds.meta.span > 0) || !std::isfinite(ds.meta.span)) {
    problems.push_back("meta span must be positive and finite");
  }
  if (!(ds.meta.eta > 0) || !std::isfinite(ds.meta.eta)) {
    problems.push_back("meta eta must be positive and finite");
  }
  if (!ds.meta.background.allFinite() || ds.meta.background.minCoeff() < 0 ||
      ds.meta.background.maxCoeff() > 1) {
    problems.push_back("meta background must lie in [0,1]^3");
  }
  if (ds.meta.scene_diameter < 0 || !std::isfinite(ds.meta.scene_diameter)) {
    problems.push_back("meta scene_diameter must be non-negative");
  }

  if (!events_path.empty()) {
    try {
      ds.events =
          read_event_stream((fs::path(dir) / events_path).string());
      if (!ds.events.events.empty()) {
        double t_min = ds.events.events.front().t;
        double t_max = ds.events.events.back().t;
        if (t_min < 0) {
          problems.push_back("event stream starts at t=" + fmt_double(t_min) +
                             " before 0");
        }
        if (t_max > ds.meta.span) {
          problems.push_back(
              "event stream runs to t=" + fmt_double(t_max) +
              " beyond the declared span " + fmt_double(ds.meta.span) +
              " (manifest line " + std::to_string(events_line) + ")");
        }
      }
      if (ds.event_poses.empty()) {
        problems.push_back(
            "an event stream is declared but no epose line gives the event "
            "camera");
      }
    } catch (const validation_error& e) {
      problems.push_back(e.what());
    }
  }

  for (const FrameRecord& f : ds.rgb) {
    if (f.cam.timestamp < 0 || f.cam.timestamp > ds.meta.span) {
      problems.push_back("rgb frame " + f.path + " timestamp " +
                         fmt_double(f.cam.timestamp) + " outside [0, span]");
    }
  }
  for (const FrameRecord& f : ds.depth) {
    if (f.cam.timestamp < 0 || f.cam.timestamp > ds.meta.span) {
      problems.push_back("depth frame " + f.path + " timestamp " +
                         fmt_double(f.cam.timestamp) + " outside [0, span]");
    }
  }
  if (ds.rgb.empty()) problems.push_back("dataset contains no rgb frames");

  if (!problems.empty()) throw_problems("dataset " + dir, problems);

  ds.build_pairing();
  for (size_t i = 0; i < ds.rgb.size(); ++i) {
    if (ds.rgb_depth_pair[i] < 0 && !ds.depth.empty()) {
      ds.warnings.push_back("rgb frame " + ds.rgb[i].path +
                            " has no co-registered depth frame");
    }
  }
  return ds;
}

}  // namespace fsplat
