#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace pedsleep {

using Rng = std::mt19937_64;

// Stable 64-bit mixing; used to derive independent RNG streams from a root
// seed and a list of stream keys (repeat index, iteration, cohort id...).
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::span<const double> values, std::uint64_t h = 0xcbf29ce484222325ULL);

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

// Generator for the stream identified by (seed, keys...). Parallel and serial
// callers that use the same keys see the same draws.
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {});

// Stream tags, so call sites don't collide on small integer keys.
enum class Stream : std::uint64_t {
  kInit = 1,
  kBatch,
  kMask,
  kValMask,
  kSplit,
  kSynth,
  kProbe,
  kCohort,
  kShuffle,
  kSample,
  kScatter,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

// Uniform double in [0, 1); implemented directly so results do not depend on
// the standard library's distribution implementation.
double uniform01(Rng& rng);
std::size_t uniform_index(std::size_t n, Rng& rng);
double standard_normal(Rng& rng);

}  // namespace pedsleep
