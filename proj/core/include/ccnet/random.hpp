#pragma once

#include <array>
#include <cstdint>
#include <random>

namespace ccnet {

// Deterministic child seed for an independent random stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  std::array<std::uint32_t, 2> raw{};
  seq.generate(raw.begin(), raw.end());
  return (static_cast<std::uint64_t>(raw[0]) << 32) | raw[1];
}

}  // namespace ccnet
