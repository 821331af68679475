#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ecgd/error.hpp"
#include "ecgd/trainer.hpp"
#include "fixtures.hpp"

using namespace ecgd;
using namespace ecgd::train;
using ad::Tensor;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), 4 * a.numel()) == 0;
}

bool same_params(const net::ModelParams& a, const net::ModelParams& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!same_bits(ta[i], tb[i])) return false;
  }
  return true;
}

bool same_bits(float a, float b) { return std::memcmp(&a, &b, 4) == 0; }

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config defaults and validation") {
  const TrainConfig d;
  CHECK(d.lr == 0.001f);
  CHECK(d.epochs == 100);
  CHECK(d.batch_size == 128);
  CHECK(d.mask_rate == 0.1);
  CHECK(d.shuffle);
  CHECK_NOTHROW(d.validate());

  TrainConfig c;
  c.mask_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.mask_rate = -0.01;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.lr = 0.0f;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("mask statistics") {
  Rng rng(1);
  const Tensor ones = make_mask({2, 256}, 0.0, rng);
  for (float v : ones.data()) CHECK(v == 1.0f);

  for (int trial = 0; trial < 20; ++trial) {
    const Tensor m = make_mask({2, 256}, 0.5, rng);
    std::size_t zeros = 0;
    for (float v : m.data()) {
      CHECK((v == 0.0f || v == 1.0f));
      zeros += v == 0.0f;
    }
    CHECK(std::abs(static_cast<double>(zeros) - 256.0) <= 3.0 * std::sqrt(128.0));
  }

  Rng a(9), b(9);
  CHECK(same_bits(make_mask({2, 256}, 0.3, a), make_mask({2, 256}, 0.3, b)));
  // Consecutive draws differ.
  CHECK_FALSE(same_bits(make_mask({2, 256}, 0.3, a), make_mask({2, 256}, 0.3, a)));

  CHECK_THROWS_AS(make_mask({2, 256}, 1.0, rng), Error);
  CHECK_THROWS_AS(make_mask({2, 256}, -0.5, rng), Error);
}

TEST_CASE("segment tensor round trip") {
  Rng rng(2);
  const Segment s = testing::random_segment(rng);
  const Tensor t = to_tensor(s);
  CHECK(t.shape() == ad::Shape{2, 256});
  CHECK(to_segment(t) == s);
  CHECK_THROWS_AS(to_segment(Tensor::zeros({2, 255})), Error);
}

TEST_CASE("zero mask rate leaves the loss unchanged") {
  const auto pairs = testing::synthetic_pairs(10, NoiseType::ma, 0.0, 3);
  TrainState state = make_state(net::ModelConfig::reduced(), 3);

  double total = 0.0;
  for (const auto& p : pairs) {
    total += ad::mse_loss(state.model.forward(to_tensor(p.noisy)), to_tensor(p.clean)).item();
  }
  const auto unmasked = static_cast<float>(total / static_cast<double>(pairs.size()));

  TrainConfig c;
  c.mask_rate = 0.0;
  const std::uint64_t before = mask_application_count();
  const float loss = train_step(state, pairs, c);
  CHECK(mask_application_count() - before == pairs.size());
  CHECK(same_bits(loss, unmasked));
  CHECK(std::isfinite(loss));
  CHECK(loss >= 0.0f);
}

TEST_CASE("identical seeds give identical loss trajectories") {
  const auto pairs = testing::synthetic_pairs(40, NoiseType::bw, -4.0, 4);
  TrainConfig c = small_config();
  c.epochs = 1;
  TrainState a = make_state(net::ModelConfig::reduced(), 4);
  TrainState b = make_state(net::ModelConfig::reduced(), 4);
  const FitResult ra = fit(a, pairs, c);
  const FitResult rb = fit(b, pairs, c);
  REQUIRE(ra.step_losses.size() == 10);
  REQUIRE(rb.step_losses.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(same_bits(ra.step_losses[i], rb.step_losses[i]));
  CHECK(same_params(a.model.params(), b.model.params()));

  TrainState other = make_state(net::ModelConfig::reduced(), 44);
  CHECK_FALSE(same_bits(fit(other, pairs, c).step_losses[0], ra.step_losses[0]));
}

TEST_CASE("batch gradients do not depend on the thread count") {
  const auto pairs = testing::synthetic_pairs(20, NoiseType::em, 0.0, 5);
  TrainState a = make_state(net::ModelConfig::reduced(), 5);
  TrainState b = make_state(net::ModelConfig::reduced(), 5);
  const float la = compute_batch_gradients(a, pairs, 0.1);
#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(3);
#endif
  const float lb = compute_batch_gradients(b, pairs, 0.1);
#ifdef _OPENMP
  omp_set_num_threads(saved);
#endif
  CHECK(same_bits(la, lb));
  const auto ta = a.model.params().tensors();
  const auto tb = b.model.params().tensors();
  for (std::size_t k = 0; k < ta.size(); ++k) {
    REQUIRE(ta[k].has_grad());
    CHECK(std::memcmp(ta[k].grad().data(), tb[k].grad().data(), 4 * ta[k].numel()) == 0);
  }
}

TEST_CASE("history length and epochs = 0") {
  const auto pairs = testing::synthetic_pairs(10, NoiseType::bw, -4.0, 6);
  TrainConfig c = small_config();
  TrainState s = make_state(net::ModelConfig::reduced(), 6);
  const FitResult r = fit(s, pairs, c);
  CHECK(r.step_losses.size() == 2 * 3);  // ceil(10 / 4) = 3
  CHECK(r.epoch_losses.size() == 2);
  CHECK(s.epoch == 2);
  CHECK(s.adam.t == 6);

  c.epochs = 0;
  TrainState z = make_state(net::ModelConfig::reduced(), 6);
  const net::ModelParams before = z.model.params().clone();
  const FitResult rz = fit(z, pairs, c);
  CHECK(rz.step_losses.empty());
  CHECK(rz.epoch_losses.empty());
  CHECK(same_params(before, z.model.params()));

  c.epochs = 1;
  CHECK_THROWS_AS(fit(z, std::span<const SegmentPair>{}, c), Error);
  CHECK_THROWS_AS(train_step(z, std::span<const SegmentPair>{}, c), Error);
}

TEST_CASE("epoch callback sees each epoch mean") {
  const auto pairs = testing::synthetic_pairs(8, NoiseType::bw, -4.0, 7);
  TrainConfig c = small_config();
  TrainState s = make_state(net::ModelConfig::reduced(), 7);
  std::vector<double> seen;
  const FitResult r = fit(s, pairs, c, [&](const TrainState& st, double mean) {
    CHECK(st.epoch == seen.size() + 1);
    seen.push_back(mean);
  });
  CHECK(seen == r.epoch_losses);
  CHECK(r.epoch_losses[0] == doctest::Approx((double(r.step_losses[0]) + r.step_losses[1]) / 2));
}

TEST_CASE("evaluation never masks and is pure") {
  auto test = testing::synthetic_pairs(6, NoiseType::bw, -4.0, 8);
  const auto ma = testing::synthetic_pairs(4, NoiseType::ma, -4.0, 9);
  test.insert(test.end(), ma.begin(), ma.end());
  const net::Model model(net::ModelConfig::reduced(), 8);

  const std::uint64_t before = mask_application_count();
  const MetricsTable t1 = evaluate(model, test);
  const MetricsTable t2 = evaluate(model, test);
  std::vector<Segment> noisy;
  for (const auto& p : test) noisy.push_back(p.noisy);
  (void)denoise(model, noisy);
  CHECK(mask_application_count() == before);

  REQUIRE(t1.size() == 2);
  CHECK(t1.at("bw").count == 6);
  CHECK(t1.at("ma").count == 4);
  for (const auto& [k, m] : t1) {
    CHECK(m.mean_output_snr_db == t2.at(k).mean_output_snr_db);
    CHECK(m.mean_rmse == t2.at(k).mean_rmse);
  }

  // Evaluation order does not matter beyond summation rounding.
  auto reversed = test;
  std::reverse(reversed.begin(), reversed.end());
  const MetricsTable t3 = evaluate(model, reversed);
  for (const auto& [k, m] : t1) {
    CHECK(t3.at(k).mean_output_snr_db == doctest::Approx(m.mean_output_snr_db).epsilon(1e-12));
    CHECK(t3.at(k).mean_rmse == doctest::Approx(m.mean_rmse).epsilon(1e-12));
  }

  CHECK_THROWS_AS(evaluate(model, std::span<const SegmentPair>{}), Error);
}

TEST_CASE("pass-through outputs reproduce the input SNR") {
  const auto test = testing::synthetic_pairs(12, NoiseType::em, -4.0, 10);
  std::vector<Segment> passthrough;
  for (const auto& p : test) passthrough.push_back(p.noisy);
  const MetricsTable t = evaluate_outputs(test, passthrough);
  const NoiseMetrics& m = t.at("em");
  CHECK(std::abs(m.mean_output_snr_db - m.mean_input_snr_db) < 1e-5);
  CHECK(std::abs(m.mean_input_snr_db - -4.0) < 1e-4);
  passthrough.pop_back();
  CHECK_THROWS_AS(evaluate_outputs(test, passthrough), Error);
}

TEST_CASE("parallel denoise equals serial denoise") {
  const net::Model model(net::ModelConfig::reduced(), 11);
  const auto segs = testing::random_segments(9, 11);
#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
#endif
  const auto a = denoise(model, segs);
#ifdef _OPENMP
  omp_set_num_threads(saved);
#endif
  const auto b = serial::denoise(model, segs);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("checkpoint round trip preserves every bit") {
  const auto pairs = testing::synthetic_pairs(8, NoiseType::bw, -4.0, 12);
  TrainConfig c = small_config();
  c.epochs = 1;
  TrainState s = make_state(net::ModelConfig::reduced(), 12);
  fit(s, pairs, c);

  const auto bytes = serialize_checkpoint(s);
  const TrainState r = deserialize_checkpoint(bytes);
  CHECK(r.model.config() == s.model.config());
  CHECK(same_params(r.model.params(), s.model.params()));
  CHECK(r.adam.t == s.adam.t);
  CHECK(r.adam.m == s.adam.m);
  CHECK(r.adam.v == s.adam.v);
  CHECK(r.rng.state() == s.rng.state());
  CHECK(r.epoch == s.epoch);
  const Tensor x = to_tensor(pairs[0].noisy);
  CHECK(same_bits(r.model.forward(x), s.model.forward(x)));

  testing::TempDir dir("trainer");
  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(path, s);
  const TrainState loaded = load_checkpoint(path);
  CHECK(same_params(loaded.model.params(), s.model.params()));

  // An untrained state has no Adam moments yet and still round-trips.
  const TrainState fresh = make_state(net::ModelConfig::reduced(), 13);
  CHECK(same_params(deserialize_checkpoint(serialize_checkpoint(fresh)).model.params(),
                    fresh.model.params()));
}

TEST_CASE("checkpoint rejects damaged or mismatched files") {
  const TrainState s = make_state(net::ModelConfig::reduced(), 14);
  const auto bytes = serialize_checkpoint(s);

  auto kind_of = [](std::span<const std::uint8_t> b, const net::ModelConfig* expected = nullptr) {
    try {
      deserialize_checkpoint(b, expected);
    } catch (const Error& e) {
      return e.kind();
    }
    FAIL("no error");
    return ErrorKind::Io;
  };

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{40}, bytes.size() / 2,
                          bytes.size() - 1}) {
    const ErrorKind k = kind_of(std::span(bytes).first(cut));
    CHECK((k == ErrorKind::Truncated || k == ErrorKind::Integrity));
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK(kind_of(extra) == ErrorKind::Integrity);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK(kind_of(magic) == ErrorKind::Integrity);
  auto version = bytes;
  version[8] = 7;
  CHECK(kind_of(version) == ErrorKind::Version);

  const net::ModelConfig full;
  CHECK(kind_of(bytes, &full) == ErrorKind::Config);
  const net::ModelConfig reduced = net::ModelConfig::reduced();
  CHECK_NOTHROW(deserialize_checkpoint(bytes, &reduced));

  testing::TempDir dir("trainer");
  const auto path = dir.path() / "cut.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() / 3));
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), Error);
}

TEST_CASE("resuming from a checkpoint continues the same trajectory") {
  const auto pairs = testing::synthetic_pairs(12, NoiseType::ma, -4.0, 15);
  TrainConfig c = small_config();
  c.epochs = 2;

  TrainState straight = make_state(net::ModelConfig::reduced(), 15);
  const FitResult full = fit(straight, pairs, c);

  TrainState first = make_state(net::ModelConfig::reduced(), 15);
  TrainConfig one = c;
  one.epochs = 1;
  const FitResult part1 = fit(first, pairs, one);
  TrainState resumed = deserialize_checkpoint(serialize_checkpoint(first));
  const FitResult part2 = fit(resumed, pairs, c);

  REQUIRE(part1.step_losses.size() + part2.step_losses.size() == full.step_losses.size());
  for (std::size_t i = 0; i < part2.step_losses.size(); ++i) {
    CHECK(same_bits(part2.step_losses[i], full.step_losses[part1.step_losses.size() + i]));
  }
  CHECK(same_params(resumed.model.params(), straight.model.params()));
}

TEST_CASE("periodic checkpoints are written") {
  const auto pairs = testing::synthetic_pairs(4, NoiseType::bw, -4.0, 16);
  testing::TempDir dir("trainer");
  TrainConfig c = small_config();
  c.epochs = 2;
  c.checkpoint_every = 1;
  c.checkpoint_path = dir.path() / "periodic.ckpt";
  TrainState s = make_state(net::ModelConfig::reduced(), 16);
  fit(s, pairs, c);
  const TrainState r = load_checkpoint(c.checkpoint_path);
  CHECK(r.epoch == 2);
  CHECK(same_params(r.model.params(), s.model.params()));
}

TEST_CASE("reduced model overfits one batch") {
  const auto pairs = testing::synthetic_pairs(8, NoiseType::bw, -4.0, 21);
  TrainState s = make_state(net::ModelConfig::reduced(), 21);
  const TrainConfig c;
  const float initial = compute_batch_gradients(s, pairs, 0.0);
  for (int i = 0; i < 200; ++i) train_step(s, pairs, c);
  const float final_loss = compute_batch_gradients(s, pairs, 0.0);
  MESSAGE("overfit: " << initial << " -> " << final_loss);
  CHECK(final_loss < 0.1f * initial);
}
