#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dfu {

// Seeded random source. normal() draws are stateless beyond the engine so
// that the serialized engine state fully determines future draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Box-Muller; consumes two uniforms and returns one deviate.
  double normal();

  // Independent child stream; advances this generator by one draw.
  Rng fork();

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dfu
