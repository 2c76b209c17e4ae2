#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace nres {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// A stream is identified by a 64-bit key; the counter enumerates blocks of
/// four 32-bit outputs. Any (key, counter) pair can be evaluated directly,
/// which keeps per-scenario and per-cell draws reproducible regardless of
/// evaluation order or thread count.
class Philox {
 public:
  static constexpr std::string_view kAlgorithm = "philox4x32-10";

  using Block = std::array<std::uint32_t, 4>;

  explicit Philox(std::uint64_t key, std::uint64_t stream = 0) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        stream_(stream) {}

  /// Raw block for an explicit counter.
  static Block block(std::array<std::uint32_t, 2> key, Block counter) noexcept;

  /// Next 32 random bits.
  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal() noexcept;

  /// Deterministic child seed, e.g. for scenario i of a master seed.
  static std::uint64_t derive(std::uint64_t master, std::uint64_t index) noexcept;

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  Block buffer_{};
  int available_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace nres
