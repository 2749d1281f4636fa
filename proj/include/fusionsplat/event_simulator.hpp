#pragma once

#include <functional>
#include <vector>

#include "fusionsplat/event_model.hpp"

namespace fsplat {

// Optional sensor imperfections; zeros give the ideal deterministic sensor.
struct SimulatorOptions {
  double time_jitter_std = 0.0;    // gaussian jitter on event timestamps, s
  double threshold_jitter = 0.0;   // per-event threshold scale ~ U[1-r, 1+r]
  uint64_t seed = 0;
};

// Ideal event sensor over a frame sequence: per pixel, log luminance
// log(Y + 1e-3) is interpolated linearly between consecutive frames and an
// event fires each time it moves `contrast` away from the per-pixel
// reference level (which then steps by +-contrast). Output is time-sorted;
// simultaneous events order by pixel row-major. Between the first and last
// frame the accumulated event sum tracks the true log change to within one
// threshold at every pixel.
EventStream simulate_events(const std::vector<Image>& frames,
                            const std::vector<double>& timestamps,
                            double contrast, const SimulatorOptions& opt = {});

// Streaming variant: frame_at(k) is called once per frame in order.
EventStream simulate_events_streamed(
    int width, int height, size_t frame_count,
    const std::function<Image(size_t)>& frame_at,
    const std::vector<double>& timestamps, double contrast,
    const SimulatorOptions& opt = {});

}  // namespace fsplat
