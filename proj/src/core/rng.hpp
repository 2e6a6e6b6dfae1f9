#pragma once

#include <cstdint>
#include <string_view>

namespace mohets {

// Counter-based 64-bit generator (splitmix64 over a keyed counter).  Every
// draw is a pure function of (seed, stream name, draw index), so dropout
// masks, shuffles, and initialization are reproducible independent of what
// other code draws in between.  Streams are named so each consumer gets an
// independent sequence from the same run seed.
class Rng {
 public:
  explicit Rng(uint64_t seed, std::string_view stream = "");

  uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // standard normal (Box-Muller)
  int64_t uniform_int(int64_t n);          // [0, n), n > 0

  // Deterministic key derivation for sub-streams.
  static uint64_t derive(uint64_t seed, std::string_view stream);

 private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mohets
