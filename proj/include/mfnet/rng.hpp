#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mfnet {

// Every random quantity is drawn from a named sub-stream of one master seed,
// further keyed by up to two integer counters (layer, edge, particle, ...).
// Streams are independent std::mt19937_64 engines seeded by a splitmix64
// hash of (master, name, a, b), so any component can be regenerated alone.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t a = 0,
                          std::uint64_t b = 0);

inline std::mt19937_64 make_engine(std::uint64_t master, std::string_view stream,
                                   std::uint64_t a = 0, std::uint64_t b = 0) {
  return std::mt19937_64(derive_seed(master, stream, a, b));
}

}  // namespace mfnet
