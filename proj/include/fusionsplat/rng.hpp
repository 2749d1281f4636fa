#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "fusionsplat/common.hpp"

namespace fsplat {

// Deterministic random source. mt19937_64 has a standard-specified sequence,
// and the uniform/normal transforms below are hand-rolled so that every draw
// is identical across platforms and standard libraries (std::uniform_*
// distributions make no such guarantee).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform on [0,1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n). Lemire's multiply-shift; slight bias is
  // irrelevant at our n but the draw count per call is always exactly one.
  uint64_t uniform_index(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(eng_()) * n) >> 64);
  }

  // Standard normal via Box-Muller; the spare is cached, so state
  // serialization must include it.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Guard the log against u1 == 0.
    double r = std::sqrt(-2.0 * std::log(u1 + 0x1.0p-53));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::string save_state() const {
    std::ostringstream os;
    // The spare normal is written as its bit pattern for an exact round trip.
    os << eng_ << ' ' << (has_spare_ ? 1 : 0) << ' '
       << std::bit_cast<uint64_t>(spare_);
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    uint64_t spare_bits = 0;
    if (!(is >> eng_ >> spare_flag >> spare_bits)) {
      throw validation_error("rng: malformed serialized state");
    }
    has_spare_ = spare_flag != 0;
    spare_ = std::bit_cast<double>(spare_bits);
  }

  bool operator==(const Rng& o) const {
    return eng_ == o.eng_ && has_spare_ == o.has_spare_ &&
           (!has_spare_ || spare_ == o.spare_);
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fsplat
