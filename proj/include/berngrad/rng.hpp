#pragma once

// Counter-based random streams.
//
// Every random quantity in the library is drawn from a Philox4x32-10 stream
// addressed by (seed, iteration, replicate, purpose). Two streams with the
// same address produce the same sequence; streams with different addresses
// use disjoint counter ranges of the same keyed bijection, so Monte-Carlo
// replicates can be generated in any order on any number of threads.

#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace berngrad {

// Philox4x32-10 block function (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

// SplitMix64 finalizer, used to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// What a stream is used for. Distinct purposes never share draws.
enum class Purpose : std::uint32_t {
  Coupling = 0,    // coordinate uniforms for (z, z~) and plain samples
  Categorical = 1, // coordinate choice q for bitflip-style updates
  Independent = 2, // second independent sample (Reinforce-LOO)
  LossEstimate = 3,
  VarianceProbe = 4,
  Init = 5,
  Data = 6,
  Split = 7,
};

struct StreamId {
  std::uint32_t iteration = 0;
  std::uint32_t replicate = 0;
  Purpose purpose = Purpose::Coupling;

  friend constexpr bool operator==(const StreamId&, const StreamId&) = default;
};

// Sequential 64-bit generator over one stream. Satisfies
// std::uniform_random_bit_generator, so it plugs into <random> distributions.
class StreamEngine {
 public:
  using result_type = std::uint64_t;

  constexpr StreamEngine(std::uint64_t seed, StreamId id) noexcept
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        id_(id) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() {
    if (lane_ == 2) refill();
    const result_type out = (std::uint64_t{buffer_[2 * lane_]} << 32) |
                            buffer_[2 * lane_ + 1];
    ++lane_;
    return out;
  }

  // Uniform on [2^-53, 1 - 2^-53]; exact 0 and 1 never occur.
  constexpr double uniform() {
    constexpr double kUlp = 0x1.0p-53;
    const double u = static_cast<double>((*this)() >> 11) * kUlp;
    if (u < kUlp) return kUlp;
    if (u > 1.0 - kUlp) return 1.0 - kUlp;
    return u;
  }

  // Uniform index in [0, n) by rejection; n >= 1.
  constexpr std::size_t index(std::size_t n) {
    const std::uint64_t bound = n;
    const std::uint64_t limit = max() - max() % bound;
    std::uint64_t x = (*this)();
    while (x >= limit) x = (*this)();
    return static_cast<std::size_t>(x % bound);
  }

 private:
  constexpr void refill() {
    if (block_ == std::numeric_limits<std::uint32_t>::max())
      throw std::length_error("random stream exhausted");
    buffer_ = Philox4x32::block(
        {block_, id_.replicate, id_.iteration,
         static_cast<std::uint32_t>(id_.purpose)},
        key_);
    ++block_;
    lane_ = 0;
  }

  Philox4x32::Key key_;
  StreamId id_;
  std::uint32_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int lane_ = 2;
};

// Address of a random stream. Cheap value type; engine() starts the
// sequence from its beginning every time it is called.
class RngStream {
 public:
  constexpr RngStream() = default;
  constexpr explicit RngStream(std::uint64_t seed, StreamId id = {})
      : seed_(seed), id_(id) {}

  constexpr std::uint64_t seed() const noexcept { return seed_; }
  constexpr const StreamId& id() const noexcept { return id_; }

  constexpr RngStream with_purpose(Purpose p) const noexcept {
    RngStream s = *this;
    s.id_.purpose = p;
    return s;
  }
  constexpr RngStream at_iteration(std::uint32_t it) const noexcept {
    RngStream s = *this;
    s.id_.iteration = it;
    return s;
  }
  constexpr RngStream at_replicate(std::uint32_t rep) const noexcept {
    RngStream s = *this;
    s.id_.replicate = rep;
    return s;
  }

  // Child stream with a derived seed and a reset stream id. Children of
  // distinct (parent, index) pairs have unrelated keys.
  constexpr RngStream split(std::uint64_t index) const noexcept {
    std::uint64_t h = mix64(seed_ ^ 0x5851f42d4c957f2dull);
    h = mix64(h ^ ((std::uint64_t{id_.iteration} << 32) | id_.replicate));
    h = mix64(h ^ static_cast<std::uint64_t>(id_.purpose));
    h = mix64(h ^ index);
    return RngStream(h);
  }

  constexpr StreamEngine engine() const noexcept {
    return StreamEngine(seed_, id_);
  }

  friend constexpr bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t seed_ = 0;
  StreamId id_{};
};

}  // namespace berngrad
