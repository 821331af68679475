#include "fixtures.hpp"

#include <atomic>
#include <unistd.h>

#include "ecgd/synth.hpp"

namespace ecgd::testing {

ad::Tensor random_tensor(const ad::Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<float> v(ad::numel(shape));
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return ad::Tensor::from(shape, std::move(v));
}

Segment random_segment(Rng& rng, double scale) {
  Segment s;
  for (float& v : s.data) v = static_cast<float>(scale * rng.uniform(-1.0, 1.0));
  return s;
}

std::vector<Segment> random_segments(std::size_t n, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::vector<Segment> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_segment(rng, scale));
  return out;
}

std::vector<Segment> synthetic_clean(std::size_t n, std::uint64_t seed) {
  const std::size_t per_record = 512;
  std::vector<Segment> out;
  for (std::uint64_t r = 0; out.size() < n; ++r) {
    const auto rec = synth::ecg_record("ecg" + std::to_string(r), per_record * kSegmentLength,
                                       seed * 7919 + r);
    const auto segs = segment_record(rec);
    out.insert(out.end(), segs.begin(), segs.end());
  }
  out.resize(n);
  return out;
}

std::vector<NoisePool> synthetic_noise(std::size_t segments_per_pool, std::uint64_t seed) {
  std::vector<NoisePool> pools;
  std::uint64_t salt = 0;
  for (const char* c : {"bw", "ma", "em"}) {
    const auto rec = synth::noise_record(c, segments_per_pool * kSegmentLength, seed * 31 + salt++);
    pools.push_back({c, segment_record(rec)});
  }
  return pools;
}

std::vector<SegmentPair> synthetic_pairs(std::size_t n, NoiseType type, double snr_db,
                                         std::uint64_t seed) {
  const auto clean = synthetic_clean(n, seed);
  const auto noise = synthetic_noise(std::max<std::size_t>(64, n / 4), seed + 1);
  DatasetSpec spec;
  spec.noise_type = type;
  spec.snr_db = snr_db;
  spec.seed = seed;
  spec.train_parts = 1;
  spec.test_parts = 0;
  return build_dataset(clean, noise, spec).train;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("ecgd-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace ecgd::testing
