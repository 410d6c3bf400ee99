#pragma once

#include <cstdint>
#include <initializer_list>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

namespace mgse {

// Boost distributions are specified by Boost, not by the standard library
// vendor, so streams reproduce across toolchains.
using Engine = boost::random::mt19937_64;

namespace rng {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream identifiers. Each consumer of randomness owns a domain so that adding
/// a consumer never perturbs another consumer's stream.
enum class Domain : std::uint64_t {
  walk_axis = 1,
  walk_events = 2,
  echo_noise = 3,
  exchange_cell = 4,
  block = 5,
  synthetic = 6,
};

inline std::uint64_t derive(std::uint64_t seed, Domain d, std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(d));
  for (auto p : path) h = splitmix64(h ^ (p + 0x3c6ef372fe94f82bULL));
  return h;
}

inline Engine engine(std::uint64_t seed, Domain d, std::initializer_list<std::uint64_t> path = {}) {
  return Engine(derive(seed, d, path));
}

inline double normal(Engine& e) {
  boost::random::normal_distribution<double> nd;
  return nd(e);
}

inline double uniform(Engine& e) {
  boost::random::uniform_01<double> u;
  return u(e);
}

}  // namespace rng
}  // namespace mgse
