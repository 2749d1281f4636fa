#include "fusionsplat/event_model.hpp"

#include <algorithm>
#include <cmath>

namespace fsplat {

EventWindow accumulate_window(const EventStream& stream, double t_start,
                              double t_end, double eta) {
  require(t_start < t_end, "accumulate_window: t_start must precede t_end");
  require(eta > 0, "accumulate_window: eta must be positive");
  require(stream.width > 0 && stream.height > 0,
          "accumulate_window: stream has no sensor size");

  EventWindow w;
  w.t_start = t_start;
  w.t_end = t_end;
  w.delta_log = Image(stream.width, stream.height, 1, 0.0);
  w.mask = Image(stream.width, stream.height, 1, 1.0);

  // Signed integer counts keep the sum exact; delta_log = eta * count is
  // then an exact double product per pixel.
  std::vector<int32_t> count(w.delta_log.pixel_count(), 0);
  std::vector<uint8_t> touched(w.delta_log.pixel_count(), 0);

  // Events are time-sorted, so the window is a contiguous run.
  auto lo = std::upper_bound(
      stream.events.begin(), stream.events.end(), t_start,
      [](double t, const Event& e) { return t < e.t; });
  auto hi = std::upper_bound(
      stream.events.begin(), stream.events.end(), t_end,
      [](double t, const Event& e) { return t < e.t; });
  for (auto it = lo; it != hi; ++it) {
    size_t idx = static_cast<size_t>(it->y) * stream.width + it->x;
    count[idx] += it->polarity;
    touched[idx] = 1;
  }
  for (size_t i = 0; i < count.size(); ++i) {
    w.delta_log.data[i] = eta * static_cast<double>(count[i]);
    if (touched[i] && count[i] == 0) w.mask.data[i] = 0.0;
  }
  return w;
}

WindowSample sample_window(double span, double min_len, double max_len,
                           Rng& rng) {
  require(span > 0, "sample_window: span must be positive");
  require(min_len > 0 && min_len <= max_len,
          "sample_window: need 0 < min_len <= max_len");
  require(max_len <= span,
          "sample_window: max_len exceeds the dataset time span");
  WindowSample s;
  double len = rng.uniform(min_len, max_len);
  s.t_start = rng.uniform(0.0, span - len);
  s.t_end = s.t_start + len;
  return s;
}

Image predicted_log_diff(const Image& rgb_start, const Image& rgb_end) {
  require(rgb_start.same_shape(rgb_end),
          "predicted_log_diff: frame shapes differ");
  require(rgb_start.channels == 3, "predicted_log_diff: frames must be RGB");
  Image out(rgb_start.width, rgb_start.height, 1);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double ys = luma(rgb_start.at(y, x, 0), rgb_start.at(y, x, 1),
                       rgb_start.at(y, x, 2));
      double ye = luma(rgb_end.at(y, x, 0), rgb_end.at(y, x, 1),
                       rgb_end.at(y, x, 2));
      out.at(y, x) = std::log(ye + kLogEps) - std::log(ys + kLogEps);
    }
  }
  return out;
}

double event_loss(const EventWindow& window, const Image& predicted,
                  bool* all_masked) {
  require(window.delta_log.same_shape(predicted),
          "event_loss: prediction shape differs from the event window");
  double sum = 0;
  size_t active = 0;
  for (size_t i = 0; i < predicted.data.size(); ++i) {
    if (window.mask.data[i] == 0.0) continue;
    double d = window.delta_log.data[i] - predicted.data[i];
    sum += d * d;
    ++active;
  }
  if (all_masked) *all_masked = active == 0;
  if (active == 0) return 0.0;
  return sum / static_cast<double>(active);
}

Image event_loss_vjp(const EventWindow& window, const Image& predicted,
                     double upstream) {
  require(window.delta_log.same_shape(predicted),
          "event_loss: prediction shape differs from the event window");
  Image d_pred(predicted.width, predicted.height, 1, 0.0);
  size_t active = 0;
  for (size_t i = 0; i < predicted.data.size(); ++i) {
    if (window.mask.data[i] != 0.0) ++active;
  }
  if (active == 0) return d_pred;
  double k = 2.0 * upstream / static_cast<double>(active);
  for (size_t i = 0; i < predicted.data.size(); ++i) {
    if (window.mask.data[i] == 0.0) continue;
    d_pred.data[i] = k * (predicted.data[i] - window.delta_log.data[i]);
  }
  return d_pred;
}

void predicted_log_diff_vjp(const Image& rgb_start, const Image& rgb_end,
                            const Image& d_log_diff, Image* d_rgb_start,
                            Image* d_rgb_end) {
  require(rgb_start.same_shape(rgb_end),
          "predicted_log_diff: frame shapes differ");
  require(d_log_diff.width == rgb_start.width &&
              d_log_diff.height == rgb_start.height,
          "predicted_log_diff_vjp: gradient shape differs");
  if (d_rgb_start->data.empty())
    *d_rgb_start = Image(rgb_start.width, rgb_start.height, 3, 0.0);
  if (d_rgb_end->data.empty())
    *d_rgb_end = Image(rgb_end.width, rgb_end.height, 3, 0.0);
  const double lw[3] = {kLumaR, kLumaG, kLumaB};
  for (int y = 0; y < rgb_start.height; ++y) {
    for (int x = 0; x < rgb_start.width; ++x) {
      double g = d_log_diff.at(y, x);
      if (g == 0.0) continue;
      double ys = luma(rgb_start.at(y, x, 0), rgb_start.at(y, x, 1),
                       rgb_start.at(y, x, 2));
      double ye = luma(rgb_end.at(y, x, 0), rgb_end.at(y, x, 1),
                       rgb_end.at(y, x, 2));
      for (int c = 0; c < 3; ++c) {
        d_rgb_end->at(y, x, c) += g * lw[c] / (ye + kLogEps);
        d_rgb_start->at(y, x, c) -= g * lw[c] / (ys + kLogEps);
      }
    }
  }
}

}  // namespace fsplat
