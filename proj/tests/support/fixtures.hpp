#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ecgd/noise_lab.hpp"
#include "ecgd/rng.hpp"
#include "ecgd/tensor.hpp"

namespace ecgd::testing {

ad::Tensor random_tensor(const ad::Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0);
Segment random_segment(Rng& rng, double scale = 1.0);
std::vector<Segment> random_segments(std::size_t n, std::uint64_t seed, double scale = 1.0);

/// Clean segments cut from synthetic ECG records, at least `n` of them.
std::vector<Segment> synthetic_clean(std::size_t n, std::uint64_t seed);
/// Noise pools for bw, ma and em from synthetic noise records.
std::vector<NoisePool> synthetic_noise(std::size_t segments_per_pool, std::uint64_t seed);

/// `n` mixed pairs (no split) of the given noise type.
std::vector<SegmentPair> synthetic_pairs(std::size_t n, NoiseType type, double snr_db,
                                         std::uint64_t seed);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace ecgd::testing
