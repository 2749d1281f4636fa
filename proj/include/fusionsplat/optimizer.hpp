#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fusionsplat/common.hpp"

namespace fsplat {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment slots for one parameter group. `t` counts completed
// steps for bias correction and is shared by the whole group.
struct AdamState {
  std::vector<double> m, v;
  int64_t t = 0;

  void ensure_size(size_t n) {
    if (m.size() != n) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
  }
};

// One Adam update over a flat parameter view. params and grads must have the
// state's size; call ensure_size first when the group changes shape.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace fsplat
