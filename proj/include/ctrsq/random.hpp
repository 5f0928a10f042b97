#pragma once

#include <cstdint>
#include <random>

namespace ctrsq {

using Rng = std::mt19937_64;

/// Purpose tags keep action draws and Brownian draws on separate substreams,
/// so a policy change never shifts the noise of a trajectory.
enum class StreamTag : std::uint64_t {
  noise = 0x6e6f697365ULL,
  action = 0x616374696f6eULL,
  init = 0x696e6974ULL,
  evaluation = 0x6576616cULL,
  sweep = 0x7377656570ULL,
};

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// (root seed, substream) pair. Every draw is a function of these two words;
/// child streams are derived by hashing, never by advancing shared state.
class RandomStream {
 public:
  constexpr RandomStream() = default;
  constexpr explicit RandomStream(std::uint64_t seed, std::uint64_t substream = 0) noexcept
      : seed_(seed), substream_(substream) {}

  constexpr std::uint64_t seed() const noexcept { return seed_; }
  constexpr std::uint64_t substream() const noexcept { return substream_; }

  /// Child stream for an (index, purpose) pair, e.g. (episode j, noise).
  constexpr RandomStream derive(std::uint64_t index,
                                std::uint64_t tag = 0) const noexcept {
    const std::uint64_t mixed =
        splitmix64(splitmix64(substream_ ^ 0x5bd1e9955bd1e995ULL) + index) ^ splitmix64(~tag);
    return RandomStream(seed_, mixed);
  }

  constexpr RandomStream derive(StreamTag tag) const noexcept {
    return derive(0, static_cast<std::uint64_t>(tag));
  }

  constexpr RandomStream episode(std::uint64_t index) const noexcept {
    return derive(index, 0x65706973ULL);
  }

  Rng engine() const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(substream_),
                      static_cast<std::uint32_t>(substream_ >> 32)};
    return Rng(seq);
  }

  friend constexpr bool operator==(const RandomStream&, const RandomStream&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t substream_ = 0;
};

}  // namespace ctrsq
