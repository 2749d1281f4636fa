#include "fusionsplat/event_simulator.hpp"

#include <algorithm>
#include <cmath>

#include "fusionsplat/rng.hpp"

namespace fsplat {

namespace {

// Per-pixel log luminance with the same floor the loss model uses, so a
// simulate -> accumulate round trip is self-consistent.
void log_luma_plane(const Image& frame, std::vector<double>* out) {
  out->resize(frame.pixel_count());
  if (frame.channels == 1) {
    for (size_t i = 0; i < out->size(); ++i) {
      (*out)[i] = std::log(frame.data[i] + kLogEps);
    }
    return;
  }
  for (size_t i = 0; i < out->size(); ++i) {
    double y = luma(frame.data[3 * i], frame.data[3 * i + 1],
                    frame.data[3 * i + 2]);
    (*out)[i] = std::log(y + kLogEps);
  }
}

}  // namespace

EventStream simulate_events_streamed(
    int width, int height, size_t frame_count,
    const std::function<Image(size_t)>& frame_at,
    const std::vector<double>& timestamps, double contrast,
    const SimulatorOptions& opt) {
  require(width > 0 && height > 0 && width <= 65535 && height <= 65535,
          "simulate_events: sensor size out of range");
  require(frame_count >= 2, "simulate_events: need at least two frames");
  require(timestamps.size() == frame_count,
          "simulate_events: one timestamp per frame required");
  require(contrast > 1e-12, "simulate_events: contrast must be positive");
  for (size_t k = 0; k + 1 < frame_count; ++k) {
    require(std::isfinite(timestamps[k]) && timestamps[k] < timestamps[k + 1],
            "simulate_events: timestamps must be strictly increasing");
  }

  Rng rng(opt.seed);
  const size_t npix = static_cast<size_t>(width) * height;
  std::vector<double> l_prev, l_cur, l_first;
  std::vector<int64_t> net(npix, 0);

  EventStream out;
  out.width = static_cast<uint16_t>(width);
  out.height = static_cast<uint16_t>(height);

  Image f0 = frame_at(0);
  require(f0.width == width && f0.height == height,
          "simulate_events: frame 0 has the wrong size");
  log_luma_plane(f0, &l_prev);
  l_first = l_prev;

  for (size_t k = 1; k < frame_count; ++k) {
    Image fk = frame_at(k);
    require(fk.width == width && fk.height == height,
            "simulate_events: frame " + std::to_string(k) +
                " has the wrong size");
    log_luma_plane(fk, &l_cur);
    double ta = timestamps[k - 1], tb = timestamps[k];
    size_t idx = 0;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x, ++idx) {
        double la = l_prev[idx], lb = l_cur[idx];
        if (lb == la) continue;
        double dir = lb > la ? 1.0 : -1.0;
        for (;;) {
          // Reference level recomputed from the integer step count each
          // iteration, so it cannot drift over long sequences.
          double step = contrast;
          if (opt.threshold_jitter > 0) {
            step = contrast * (1.0 + opt.threshold_jitter *
                                         rng.uniform(-1.0, 1.0));
          }
          double target =
              l_first[idx] + contrast * static_cast<double>(net[idx]) +
              dir * step;
          if (dir > 0 ? target > lb : target < lb) break;
          double t = ta + (target - la) / (lb - la) * (tb - ta);
          if (opt.time_jitter_std > 0) t += opt.time_jitter_std * rng.normal();
          t = std::clamp(t, ta, tb);
          // Windows are half-open on the left; keep the event strictly
          // inside its frame interval so none can fall on a boundary twice.
          if (t == ta) t = std::nextafter(ta, tb);
          out.events.push_back(Event{static_cast<uint16_t>(x),
                                     static_cast<uint16_t>(y), t,
                                     static_cast<int8_t>(dir)});
          net[idx] += dir > 0 ? 1 : -1;
        }
      }
    }
    std::swap(l_prev, l_cur);
  }

  // Global time order; stable so simultaneous events keep the row-major
  // emission order.
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return out;
}

EventStream simulate_events(const std::vector<Image>& frames,
                            const std::vector<double>& timestamps,
                            double contrast, const SimulatorOptions& opt) {
  require(!frames.empty(), "simulate_events: no frames");
  return simulate_events_streamed(
      frames[0].width, frames[0].height, frames.size(),
      [&](size_t k) { return frames[k]; }, timestamps, contrast, opt);
}

}  // namespace fsplat
