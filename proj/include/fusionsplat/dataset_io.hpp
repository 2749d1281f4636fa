#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fusionsplat/event_model.hpp"
#include "fusionsplat/scene_core.hpp"

namespace fsplat {

// --- Binary event stream (.evst) -------------------------------------------
// 16-byte header: magic "EVST", u16 version=1, u16 width, u16 height,
// u32 record count, 2 pad bytes. Then `count` 14-byte records: u16 x, u16 y,
// f64 t, i8 polarity, i8 pad. Everything little-endian. Records must be
// time-sorted with coordinates inside the sensor and polarity in {-1,+1}.
inline constexpr uint16_t kEventFormatVersion = 1;

void write_event_stream(const std::string& path, const EventStream& stream);

// Throws validation_error listing every problem found (malformed records
// are reported with their byte offset into the file).
EventStream read_event_stream(const std::string& path);

// --- Binary depth plane (.dpth) --------------------------------------------
// Header: magic "DPTH", u32 width, u32 height; then width*height float32
// values, row-major, little-endian. 0 marks an invalid pixel.
void write_depth(const std::string& path, const Image& depth);
Image read_depth(const std::string& path);

// --- PNG color frames -------------------------------------------------------
// 8-bit RGB; read converts gray/palette/alpha files to plain RGB in [0,1].
void write_png(const std::string& path, const Image& rgb);
Image read_png(const std::string& path);

// --- Dataset ----------------------------------------------------------------

struct FrameRecord {
  Camera cam;
  std::string path;   // relative to the dataset root
  std::string split;  // "train", "eval", "eval_mid"
  Image image;        // RGB in [0,1] or a single depth plane
};

struct DatasetMeta {
  std::string name;
  double span = 1.0;             // timestamps live in [0, span]
  double eta = 0.2;              // log-intensity step per event
  double scene_diameter = 0.0;   // world units, for relative depth errors
  Vector3d background = Vector3d::Zero();
};

struct SensorDataset {
  std::string root;
  DatasetMeta meta;
  std::vector<FrameRecord> rgb;
  std::vector<FrameRecord> depth;
  EventStream events;
  std::vector<Camera> event_poses;  // timestamped, nearest pose is used
  std::vector<std::string> warnings;

  // Index into `depth` of the frame co-registered with rgb[i] (same split,
  // timestamp, and pose), or -1. Filled by load_dataset / finalize.
  std::vector<int> rgb_depth_pair;

  const Camera& event_camera_at(double t) const;
  std::vector<size_t> frames_in_split(const std::string& split) const;
  void build_pairing();
};

// Reads <dir>/manifest.txt and every file it references. All validation
// problems are collected and thrown together as one validation_error;
// non-fatal oddities end up in .warnings.
SensorDataset load_dataset(const std::string& dir);

// Writes a complete dataset directory (manifest, PNGs, depth planes, event
// stream). The inverse of load_dataset.
void write_dataset(const std::string& dir, const SensorDataset& ds);

// --- Built-in analytic scenes ----------------------------------------------

struct TinySceneSpec {
  std::string name = "orbiting_two_ball";  // or "translating_spheres",
                                           // "flapping_plate"
  int resolution = 64;
  int views = 12;            // training camera ring positions
  int timestamps = 60;       // training timestamps per view cycle
  double span = 1.0;         // seconds
  double contrast = 0.2;     // event threshold; eta is set to match
  double motion_scale = 1.0; // 0 freezes all motion
  int sim_fps = 600;         // frame rate fed to the event simulator
  uint64_t seed = 1;
};

// Renders the analytic scene into a dataset: RGB + depth trains views, a
// held-out "eval" split at training timestamps, an "eval_mid" split between
// training timestamps, and an event stream from a fixed event camera.
SensorDataset generate_tiny_scene(const TinySceneSpec& spec);

// The analytic renderer behind generate_tiny_scene, exposed for oracles:
// flat-shaded spheres/boxes raytraced at (view pose, time).
Image render_tiny_scene_rgb(const TinySceneSpec& spec, const Camera& cam,
                            double t);
Image render_tiny_scene_depth(const TinySceneSpec& spec, const Camera& cam,
                              double t);

}  // namespace fsplat
