// Command-line frontend: generate / simulate / train / render / evaluate.
// Exit codes: 0 success, 2 validation failure, 3 numerical failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fusionsplat/dataset_io.hpp"
#include "fusionsplat/event_simulator.hpp"
#include "fusionsplat/metrics.hpp"
#include "fusionsplat/rasterizer.hpp"
#include "fusionsplat/trainer.hpp"

namespace fs = std::filesystem;
using namespace fsplat;

namespace {

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

struct GenerateArgs {
  TinySceneSpec spec;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  SensorDataset ds = generate_tiny_scene(a.spec);
  write_dataset(a.out, ds);
  std::cout << "wrote dataset '" << a.spec.name << "' to " << a.out << " ("
            << ds.rgb.size() << " rgb frames, " << ds.depth.size()
            << " depth frames, " << ds.events.events.size() << " events)\n";
  return 0;
}

struct SimulateArgs {
  std::string frames_dir;
  std::string out;
  double fps = 600;
  double contrast = 0.2;
  SimulatorOptions opt;
};

int run_simulate(const SimulateArgs& a) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(a.frames_dir)) {
    if (e.path().extension() == ".png") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  require(files.size() >= 2,
          "simulate: need at least two .png frames in " + a.frames_dir);
  require(a.fps > 0, "simulate: --fps must be positive");

  Image first = read_png(files[0]);
  std::vector<double> timestamps(files.size());
  for (size_t i = 0; i < files.size(); ++i) {
    timestamps[i] = static_cast<double>(i) / a.fps;
  }
  EventStream stream = simulate_events_streamed(
      first.width, first.height, files.size(),
      [&](size_t k) { return k == 0 ? first : read_png(files[k]); },
      timestamps, a.contrast, a.opt);
  write_event_stream(a.out, stream);
  std::cout << "simulated " << stream.events.size() << " events from "
            << files.size() << " frames into " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::optional<uint64_t> seed;
  int threads = 0;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg =
      a.config.empty() ? TrainConfig{} : parse_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();

  SensorDataset ds = load_dataset(a.data);
  for (const std::string& w : ds.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
  ThreadPool pool(resolve_threads(a.threads));

  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    std::cout << "resuming from " << a.resume << " at step " << state.step
              << "\n";
  } else {
    state = init_training(ds, cfg);
    std::cout << "initialized " << state.gaussians.size()
              << " gaussians from the first depth frame\n";
  }
  train(state, ds, cfg, a.out, &pool);
  std::cout << "trained to step " << state.step << " ("
            << state.gaussians.size() << " gaussians); outputs in " << a.out
            << "\n";
  return 0;
}

struct RenderArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "eval";
  int index = 0;
  std::optional<double> time;
  std::string out;
  std::string depth_out;
  int threads = 0;
};

int run_render(const RenderArgs& a) {
  TrainState state = load_checkpoint(a.checkpoint);
  SensorDataset ds = load_dataset(a.data);
  std::vector<size_t> frames = ds.frames_in_split(a.split);
  require(!frames.empty(), "render: split '" + a.split + "' has no frames");
  require(a.index >= 0 && static_cast<size_t>(a.index) < frames.size(),
          "render: --index out of range (split has " +
              std::to_string(frames.size()) + " frames)");
  const FrameRecord& f = ds.rgb[frames[static_cast<size_t>(a.index)]];
  double t = a.time ? *a.time : f.cam.timestamp;
  double tau =
      ds.meta.span > 0 ? std::clamp(t / ds.meta.span, 0.0, 1.0) : 0.0;

  ThreadPool pool(resolve_threads(a.threads));
  GaussianSet deformed = deform(state.gaussians, tau, state.field, &pool);
  RenderOutput out = render(deformed, f.cam, ds.meta.background, &pool);
  for (double& v : out.color.data) v = std::clamp(v, 0.0, 1.0);
  write_png(a.out, out.color);
  if (!a.depth_out.empty()) write_depth(a.depth_out, out.depth);
  std::cout << "rendered " << f.path << " at t=" << t << " to " << a.out
            << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "eval";
  std::string out;
  int threads = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  TrainState state = load_checkpoint(a.checkpoint);
  SensorDataset ds = load_dataset(a.data);
  ThreadPool pool(resolve_threads(a.threads));
  EvalReport report =
      evaluate(state, ds, a.split, ds.meta.background, &pool);
  if (report.empty_split) {
    std::cerr << "warning: split '" << a.split
              << "' matched no frames; empty report\n";
  }
  if (!a.out.empty()) write_eval_csv(a.out, report);
  std::cout << summarize(report);
  if (ds.meta.scene_diameter > 0 && report.mean_drms >= 0) {
    std::cout << "mean_drms_relative: "
              << report.mean_drms / ds.meta.scene_diameter << " (of scene diameter "
              << ds.meta.scene_diameter << ")\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-fused dynamic gaussian splatting toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  GenerateArgs gen;
  auto* cgen = app.add_subcommand("generate", "Write a synthetic dataset");
  cgen->add_option("--scene", gen.spec.name,
                   "orbiting_two_ball | translating_spheres | flapping_plate");
  cgen->add_option("--out", gen.out, "output dataset directory")->required();
  cgen->add_option("--resolution", gen.spec.resolution, "image side, pixels");
  cgen->add_option("--views", gen.spec.views, "training camera count");
  cgen->add_option("--timestamps", gen.spec.timestamps,
                   "training timestamps per view");
  cgen->add_option("--span", gen.spec.span, "sequence length, seconds");
  cgen->add_option("--contrast", gen.spec.contrast, "event threshold");
  cgen->add_option("--motion-scale", gen.spec.motion_scale,
                   "0 freezes all motion");
  cgen->add_option("--sim-fps", gen.spec.sim_fps, "event simulator frame rate");
  cgen->add_option("--seed", gen.spec.seed, "rng seed");

  SimulateArgs sim;
  auto* csim = app.add_subcommand(
      "simulate", "Turn a directory of frames into an event stream");
  csim->add_option("--frames", sim.frames_dir, "directory of .png frames")
      ->required();
  csim->add_option("--out", sim.out, "output .evst path")->required();
  csim->add_option("--fps", sim.fps, "frame rate of the sequence");
  csim->add_option("--contrast", sim.contrast, "event threshold");
  csim->add_option("--time-jitter", sim.opt.time_jitter_std,
                   "gaussian timestamp jitter, seconds");
  csim->add_option("--threshold-jitter", sim.opt.threshold_jitter,
                   "relative threshold jitter in [0,1)");
  csim->add_option("--seed", sim.opt.seed, "rng seed for jitter");

  TrainArgs tr;
  auto* ctr = app.add_subcommand("train", "Optimize a model on a dataset");
  ctr->add_option("--config", tr.config, "key/value config file");
  ctr->add_option("--data", tr.data, "dataset directory")->required();
  ctr->add_option("--out", tr.out, "output directory")->required();
  ctr->add_option("--resume", tr.resume, "checkpoint to continue from");
  ctr->add_option("--seed", tr.seed, "override the config seed");
  ctr->add_option("--threads", tr.threads, "worker threads (0 = all cores)");

  RenderArgs rd;
  auto* crd = app.add_subcommand("render", "Render one frame of a checkpoint");
  crd->add_option("--checkpoint", rd.checkpoint, "checkpoint path")
      ->required();
  crd->add_option("--data", rd.data, "dataset directory")->required();
  crd->add_option("--split", rd.split, "frame split (default eval)");
  crd->add_option("--index", rd.index, "frame index inside the split");
  crd->add_option("--time", rd.time, "override the render timestamp");
  crd->add_option("--out", rd.out, "output .png path")->required();
  crd->add_option("--depth-out", rd.depth_out, "optional depth output path");
  crd->add_option("--threads", rd.threads, "worker threads (0 = all cores)");

  EvaluateArgs ev;
  auto* cev = app.add_subcommand("evaluate", "Score a checkpoint on a split");
  cev->add_option("--checkpoint", ev.checkpoint, "checkpoint path")
      ->required();
  cev->add_option("--data", ev.data, "dataset directory")->required();
  cev->add_option("--split", ev.split, "frame split (default eval)");
  cev->add_option("--out", ev.out, "optional report .csv path");
  cev->add_option("--threads", ev.threads, "worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad arguments are validation failures
  }

  try {
    if (cgen->parsed()) return run_generate(gen);
    if (csim->parsed()) return run_simulate(sim);
    if (ctr->parsed()) return run_train(tr);
    if (crd->parsed()) return run_render(rd);
    if (cev->parsed()) return run_evaluate(ev);
  } catch (const validation_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
