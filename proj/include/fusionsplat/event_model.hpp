#pragma once

#include <cstdint>
#include <vector>

#include "fusionsplat/common.hpp"
#include "fusionsplat/rng.hpp"

namespace fsplat {

// Stability floor inside the log-intensity map log(Y + eps).
inline constexpr double kLogEps = 1e-3;

// One brightness-change event: at time t the log intensity at pixel (x,y)
// moved by polarity * threshold since the last event there.
struct Event {
  uint16_t x = 0, y = 0;
  double t = 0;
  int8_t polarity = 0;  // +1 or -1
};

// Events sorted by time (ties: y, then x), plus the sensor size.
struct EventStream {
  uint16_t width = 0, height = 0;
  std::vector<Event> events;
};

// Windowed ground truth: per-pixel integrated log-intensity change plus a
// mask that zeroes pixels whose events cancelled to nothing inside the
// window (their transient flicker carries no usable brightness target).
struct EventWindow {
  double t_start = 0, t_end = 0;
  Image delta_log;  // H x W, eta * (signed event count)
  Image mask;       // H x W, 0 where the polarity sum neutralized
};

// Integrates events with t in (t_start, t_end]. Pixels without events keep
// delta_log 0 and mask 1; pixels whose polarity sum is zero despite having
// events get mask 0. Every delta_log value is an exact multiple of eta.
EventWindow accumulate_window(const EventStream& stream, double t_start,
                              double t_end, double eta);

// Draws a window with length ~ U[min_len, max_len] and start ~ U[0, span -
// length]. max_len must not exceed span.
struct WindowSample {
  double t_start = 0, t_end = 0;
};
WindowSample sample_window(double span, double min_len, double max_len,
                           Rng& rng);

// log(Y_end + eps) - log(Y_start + eps) with Rec.601 luma Y, per pixel.
Image predicted_log_diff(const Image& rgb_start, const Image& rgb_end);

// Mean squared error between predicted and ground-truth log changes over
// mask == 1 pixels. An all-zero mask yields 0 and sets *all_masked.
double event_loss(const EventWindow& window, const Image& predicted,
                  bool* all_masked = nullptr);

// d(event_loss)/d(predicted), same masking and normalization.
Image event_loss_vjp(const EventWindow& window, const Image& predicted,
                     double upstream);

// Backward through predicted_log_diff: scatters d(loss)/d(log diff) into
// gradients on the two RGB frames.
void predicted_log_diff_vjp(const Image& rgb_start, const Image& rgb_end,
                            const Image& d_log_diff, Image* d_rgb_start,
                            Image* d_rgb_end);

}  // namespace fsplat
