#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "ecgd/error.hpp"
#include "ecgd/noise_lab.hpp"
#include "fixtures.hpp"

using namespace ecgd;

namespace {

SignalRecord record_of(std::size_t channels, std::size_t samples) {
  SignalRecord r;
  r.header.record_name = "r";
  r.header.n_signals = channels;
  r.header.n_samples = samples;
  r.channels = Matrix(channels, samples);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < samples; ++t) r.channels(c, t) = static_cast<double>(c * 1000 + t);
  }
  return r;
}

Segment constant(float v) {
  Segment s;
  s.data.fill(v);
  return s;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Parse;
}

}  // namespace

TEST_CASE("noise type names") {
  CHECK(parse_noise_type("bw") == NoiseType::bw);
  CHECK(parse_noise_type("ebm") == NoiseType::combined);
  CHECK(parse_noise_type("emb") == NoiseType::combined);
  CHECK_FALSE(parse_noise_type("pli").has_value());
  CHECK(to_string(NoiseType::combined) == "ebm");
  CHECK(noise_components(NoiseType::combined) == std::vector<std::string>{"bw", "ma", "em"});
}

TEST_CASE("segment_record windows") {
  CHECK(segment_record(record_of(2, 512)).size() == 2);
  CHECK(segment_record(record_of(2, 255)).empty());
  CHECK(segment_record(record_of(2, 650000)).size() == 650000 / 256);

  const auto segs = segment_record(record_of(3, 600));
  REQUIRE(segs.size() == 2);
  CHECK(segs[1].at(0, 0) == 256.0f);
  CHECK(segs[1].at(1, 5) == 1261.0f);

  CHECK(kind_of([] { segment_record(record_of(1, 512)); }) == ErrorKind::Shape);
  const auto dup = segment_record(record_of(1, 512), true);
  CHECK(dup[0].channel(0)[9] == dup[0].channel(1)[9]);
  CHECK(segment_record(record_of(0, 0)).empty());
}

TEST_CASE("noise_scale closed forms") {
  const std::vector<double> unit(8, 1.0);
  CHECK(noise_scale(unit, unit, 0.0) == doctest::Approx(1.0).epsilon(1e-15));

  const std::vector<double> two(8, 2.0);  // power 4
  const double alpha = noise_scale(two, unit, -4.0);
  CHECK(alpha == doctest::Approx(std::sqrt(4.0 * std::pow(10.0, 0.4))).epsilon(1e-14));
  CHECK(alpha == doctest::Approx(3.169787).epsilon(1e-6));

  // Recompute the achieved SNR from the definition.
  double sig = 0.0, res = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    sig += two[i] * two[i];
    res += alpha * unit[i] * alpha * unit[i];
  }
  CHECK(10.0 * std::log10(sig / res) == doctest::Approx(-4.0).epsilon(1e-12));

  const std::vector<double> zero(8, 0.0);
  CHECK(kind_of([&] { noise_scale(unit, zero, 0.0); }) == ErrorKind::Degenerate);
  CHECK(kind_of([&] { noise_scale(zero, unit, 0.0); }) == ErrorKind::Degenerate);
  CHECK(kind_of([&] { noise_scale(unit, unit, std::numeric_limits<double>::infinity()); }) ==
        ErrorKind::Domain);
}

TEST_CASE("mix hits the target SNR within 1e-6 dB") {
  Rng rng(99);
  double worst = 0.0;
  for (int n = 0; n < 200; ++n) {
    const Segment c = testing::random_segment(rng, rng.uniform(0.01, 5.0));
    const Segment z = testing::random_segment(rng, rng.uniform(0.01, 5.0));
    for (double target : {-10.0, -4.0, 0.0, 6.0, 17.5}) {
      const auto p = mix(c, z, MixSpec{target, NoiseType::bw, 1});
      worst = std::max(worst, std::abs(snr_db(p.clean, p.noisy) - target));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("combined noise sums the parts before scaling") {
  Rng rng(4);
  const Segment c = testing::random_segment(rng);
  std::array<Segment, 3> parts{testing::random_segment(rng), testing::random_segment(rng),
                               testing::random_segment(rng)};
  Segment summed;
  for (std::size_t i = 0; i < Segment::kSize; ++i) {
    summed.data[i] = parts[0].data[i] + parts[1].data[i] + parts[2].data[i];
  }
  const auto p = mix(c, parts, MixSpec{-4.0, NoiseType::combined, 0});
  CHECK(std::abs(snr_db(p.clean, p.noisy) + 4.0) < 1e-6);

  // The residual is a scalar multiple of the summed noise.
  const double alpha = noise_scale(c, summed, -4.0);
  for (std::size_t i = 0; i < Segment::kSize; i += 37) {
    CHECK(p.noisy.data[i] - c.data[i] == doctest::Approx(alpha * summed.data[i]).epsilon(1e-5));
  }
}

TEST_CASE("snr_db and rmse definitions") {
  Segment c = constant(0.0f);
  Segment e = constant(0.0f);
  c.data[0] = 1.0f;
  e.data[0] = 2.0f;
  CHECK(snr_db(c, e) == doctest::Approx(0.0));
  c.data[0] = static_cast<float>(std::sqrt(10.0));
  e.data[0] = c.data[0] + 1.0f;
  CHECK(snr_db(c, e) == doctest::Approx(10.0).epsilon(1e-6));

  CHECK(snr_db(c, c) == std::numeric_limits<double>::infinity());
  CHECK(snr_db(constant(0.0f), constant(1.0f)) == -std::numeric_limits<double>::infinity());

  CHECK(rmse(c, c) == 0.0);
  CHECK(rmse(constant(0.0f), constant(1.0f)) == 1.0);
  const std::vector<float> a(3), b(4);
  CHECK(kind_of([&] { rmse(a, b); }) == ErrorKind::Shape);
}

TEST_CASE("snr_db is invariant under joint scaling") {
  Rng rng(8);
  for (int n = 0; n < 50; ++n) {
    const Segment c = testing::random_segment(rng);
    const Segment r = testing::random_segment(rng, 0.3);
    const double lambda = rng.uniform(0.1, 8.0) * (rng.bernoulli(0.5) ? -1 : 1);
    std::vector<double> c1(Segment::kSize), e1(Segment::kSize);
    std::vector<float> c2(Segment::kSize), e2(Segment::kSize), cf(Segment::kSize),
        ef(Segment::kSize);
    for (std::size_t i = 0; i < Segment::kSize; ++i) {
      cf[i] = c.data[i];
      ef[i] = c.data[i] + r.data[i];
      c2[i] = static_cast<float>(lambda * c.data[i]);
      e2[i] = static_cast<float>(lambda * c.data[i] + lambda * r.data[i]);
    }
    CHECK(snr_db(c2, e2) == doctest::Approx(snr_db(cf, ef)).epsilon(1e-5));
  }
}

TEST_CASE("rmse is nonnegative, zero iff identical, symmetric") {
  Rng rng(12);
  for (int n = 0; n < 50; ++n) {
    const Segment a = testing::random_segment(rng);
    Segment b = a;
    CHECK(rmse(a, b) == 0.0);
    b.data[rng.below(Segment::kSize)] += 0.5f;
    CHECK(rmse(a, b) > 0.0);
    CHECK(rmse(a, b) == rmse(b, a));
  }
}

TEST_CASE("build_dataset split, determinism and disjointness") {
  const auto clean = testing::synthetic_clean(100, 3);
  const auto noise = testing::synthetic_noise(40, 3);
  DatasetSpec spec;
  spec.seed = 17;
  const auto a = build_dataset(clean, noise, spec);
  CHECK(a.train.size() == 80);
  CHECK(a.test.size() == 20);

  const auto b = build_dataset(clean, noise, spec);
  REQUIRE(b.train.size() == a.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].clean == b.train[i].clean);
    CHECK(a.train[i].noisy == b.train[i].noisy);
  }

  // Every clean segment is used once; train and test are disjoint.
  std::set<std::vector<float>> seen;
  for (const auto* part : {&a.train, &a.test}) {
    for (const auto& p : *part) {
      CHECK(seen.insert(std::vector<float>(p.clean.data.begin(), p.clean.data.end())).second);
      CHECK(std::abs(snr_db(p.clean, p.noisy) - spec.snr_db) < 1e-6);
    }
  }
  CHECK(seen.size() == 100);

  spec.seed = 18;
  const auto c = build_dataset(clean, noise, spec);
  CHECK_FALSE(c.train[0].noisy == a.train[0].noisy);
}

TEST_CASE("build_dataset options and errors") {
  const auto clean = testing::synthetic_clean(50, 5);
  const auto noise = testing::synthetic_noise(20, 5);
  DatasetSpec spec;
  spec.max_pairs = 10;
  const auto small = build_dataset(clean, noise, spec);
  CHECK(small.train.size() + small.test.size() == 10);
  CHECK(small.test.size() == 2);

  spec.max_pairs = 0;
  spec.normalize = true;
  const auto norm = build_dataset(clean, noise, spec);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto* part : {&norm.train, &norm.test}) {
    for (const auto& p : *part) {
      for (float v : p.clean.data) {
        sum += v;
        sq += static_cast<double>(v) * v;
        ++n;
      }
    }
  }
  CHECK(std::abs(sum / static_cast<double>(n)) < 1e-5);
  CHECK(sq / static_cast<double>(n) == doctest::Approx(1.0).epsilon(1e-4));

  spec.normalize = false;
  spec.noise_type = NoiseType::combined;
  CHECK(std::abs(snr_db(build_dataset(clean, noise, spec).train[0].clean,
                        build_dataset(clean, noise, spec).train[0].noisy) + 4.0) < 1e-6);

  const std::vector<NoisePool> only_bw{noise[0]};
  CHECK(kind_of([&] { build_dataset(clean, only_bw, spec); }) == ErrorKind::Domain);
  CHECK(kind_of([&] { build_dataset(std::span<const Segment>{}, noise, spec); }) ==
        ErrorKind::Domain);
}

TEST_CASE("split_test_count floors the test side") {
  CHECK(split_test_count(100, 4, 1) == 20);
  CHECK(split_test_count(9, 4, 1) == 1);
  CHECK(split_test_count(4, 4, 1) == 0);
}

TEST_CASE("interleave round trip") {
  const auto pairs = testing::synthetic_pairs(6, NoiseType::ma, 0.0, 2);
  const auto flat = interleave_pairs(pairs);
  REQUIRE(flat.size() == 12);
  const auto back = deinterleave_pairs(flat);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].clean == pairs[i].clean);
    CHECK(back[i].noisy == pairs[i].noisy);
  }
  CHECK(kind_of([&] { deinterleave_pairs(std::span(flat).first(3)); }) == ErrorKind::Shape);
}

TEST_CASE("metrics formatting") {
  CHECK(format_metric(1.5) == "1.500000");
  CHECK(format_metric(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_metric(-std::numeric_limits<double>::infinity()) == "-inf");
  CHECK(format_metrics_row({"bw", "model", -4.0, 10.25, 0.125}) ==
        "bw,model,-4.000000,10.250000,0.125000");
  CHECK(kMetricsHeader == "noise_type,method,input_snr_db,output_snr_db,rmse");
}

TEST_CASE("summarize means") {
  const auto pairs = testing::synthetic_pairs(10, NoiseType::bw, -4.0, 3);
  std::vector<Segment> clean, noisy;
  for (const auto& p : pairs) {
    clean.push_back(p.clean);
    noisy.push_back(p.noisy);
  }
  const auto pass = summarize(clean, noisy, noisy);
  CHECK(pass.mean_input_snr_db == doctest::Approx(-4.0).epsilon(1e-6));
  CHECK(std::abs(pass.mean_output_snr_db - pass.mean_input_snr_db) < 1e-12);
  const auto perfect = summarize(clean, noisy, clean);
  CHECK(std::isinf(perfect.mean_output_snr_db));
  CHECK(perfect.mean_rmse == 0.0);
}
