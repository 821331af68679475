#include <doctest.h>

#include <cmath>

#include "ecgd/error.hpp"
#include "ecgd/noise_lab.hpp"
#include "ecgd/synth.hpp"
#include "fixtures.hpp"

using namespace ecgd;

TEST_CASE("synthetic ECG has beat-like peaks and is deterministic") {
  const auto a = synth::ecg_record("a", 3600, 1);
  const auto b = synth::ecg_record("a", 3600, 1);
  CHECK(a.channels.values == b.channels.values);
  CHECK(a.channels.rows == 2);

  // About 6-16 R peaks in ten seconds.
  std::size_t peaks = 0;
  for (std::size_t t = 1; t + 1 < 3600; ++t) {
    const double v = a.channels(0, t);
    if (v > 0.5 && v >= a.channels(0, t - 1) && v > a.channels(0, t + 1)) ++peaks;
  }
  CHECK(peaks >= 6);
  CHECK(peaks <= 16);
}

TEST_CASE("noise components differ in spectral character") {
  auto lag1 = [](const SignalRecord& r) {
    double num = 0.0, den = 0.0;
    const auto x = r.channels.row(0);
    for (std::size_t t = 1; t < x.size(); ++t) {
      num += x[t] * x[t - 1];
      den += x[t] * x[t];
    }
    return num / den;
  };
  const auto bw = synth::noise_record("bw", 20000, 3);
  const auto ma = synth::noise_record("ma", 20000, 3);
  const auto em = synth::noise_record("em", 20000, 3);
  CHECK(lag1(bw) > 0.99);
  CHECK(lag1(ma) < 0.6);
  CHECK(lag1(em) > 0.8);
  CHECK_THROWS_AS(synth::noise_record("pli", 10, 1), Error);
}

TEST_CASE("written WFDB records read back within quantization") {
  testing::TempDir dir("synth");
  const auto rec = synth::ecg_record("s1", 1000, 4);
  const auto hea = synth::write_wfdb(dir.path(), rec);
  const auto back = read_record_file(hea);
  REQUIRE(back.channels.cols == 1000);
  double worst = 0.0;
  for (std::size_t i = 0; i < rec.channels.values.size(); ++i) {
    worst = std::max(worst, std::abs(rec.channels.values[i] - back.channels.values[i]));
  }
  CHECK(worst <= 0.5 / 200.0 + 1e-12);

  const auto csv = read_record_file(synth::write_csv(dir.path(), rec));
  CHECK(csv.channels.cols == 1000);
  CHECK(csv.channels(1, 500) == doctest::Approx(rec.channels(1, 500)).epsilon(1e-7));
}
