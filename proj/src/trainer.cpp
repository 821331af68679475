#include "ecgd/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>

#include "ecgd/bytes.hpp"
#include "ecgd/error.hpp"

namespace ecgd::train {

using ad::Tensor;

namespace {

std::atomic<std::uint64_t> g_mask_applications{0};

// Samples per gradient-accumulation chunk. Fixed so that the reduction order,
// and therefore every bit of the result, does not depend on the thread count.
constexpr std::size_t kChunk = 8;

constexpr std::string_view kCheckpointMagic{"ECGCKPT1", 8};
constexpr std::string_view kTrainKeyPrefix = "train.";

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0f)) throw Error(ErrorKind::Config, "lr must be > 0");
  if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be >= 1");
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) {
    throw Error(ErrorKind::Config, "mask_rate must be in [0, 1)");
  }
}

TrainState make_state(const net::ModelConfig& config, std::uint64_t seed) {
  TrainState s(net::Model(config, seed), 0);
  s.rng = Rng(seed).fork(0x5eed);
  return s;
}

ad::Tensor make_mask(const ad::Shape& shape, double mask_rate, Rng& rng) {
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) {
    throw Error(ErrorKind::Domain, "make_mask: rate must be in [0, 1), got " +
                                       std::to_string(mask_rate));
  }
  Tensor m = Tensor::filled(shape, 1.0f);
  if (mask_rate == 0.0) return m;
  for (float& v : m.data()) v = rng.bernoulli(mask_rate) ? 0.0f : 1.0f;
  return m;
}

std::uint64_t mask_application_count() noexcept { return g_mask_applications.load(); }

Tensor to_tensor(const Segment& s) {
  return Tensor::from({Segment::kChannels, Segment::kLength},
                      std::vector<float>(s.data.begin(), s.data.end()));
}

Segment to_segment(const Tensor& t) {
  if (t.numel() != Segment::kSize) {
    throw Error(ErrorKind::Shape, "to_segment: expected 512 values, got " +
                                      std::to_string(t.numel()));
  }
  Segment s;
  std::copy(t.data().begin(), t.data().end(), s.data.begin());
  return s;
}

float compute_batch_gradients(TrainState& state, std::span<const SegmentPair> batch,
                              double mask_rate) {
  if (batch.empty()) throw Error(ErrorKind::Domain, "train_step: empty batch");

  // Masks come from the state's stream in batch order, before any fan-out.
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  inputs.reserve(batch.size());
  targets.reserve(batch.size());
  for (const auto& pair : batch) {
    Tensor x = to_tensor(pair.noisy);
    const Tensor mask = make_mask(x.shape(), mask_rate, state.rng);
    auto xv = x.data();
    const auto mv = mask.data();
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] *= mv[i];
    g_mask_applications.fetch_add(1, std::memory_order_relaxed);
    inputs.push_back(std::move(x));
    targets.push_back(to_tensor(pair.clean));
  }

  const std::size_t n = batch.size();
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  const float inv_batch = 1.0f / static_cast<float>(n);
  std::vector<net::ModelParams> chunk_params(n_chunks);
  std::vector<double> losses(n, 0.0);
  std::vector<std::exception_ptr> errors(n_chunks);
  const net::Model& model = state.model;

#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t ci = 0; ci < static_cast<std::int64_t>(n_chunks); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    try {
      chunk_params[c] = model.params().alias(true);
      ad::Tape tape;
      ad::TapeScope scope(tape);
      for (std::size_t i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
        Tensor out = model.forward(inputs[i], chunk_params[c]);
        Tensor loss = ad::mse_loss(out, targets[i]);
        losses[i] = loss.item();
        tape.backward(ad::scale(loss, inv_batch));
        tape.clear();
      }
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Fixed-order reduction of chunk gradients into the model parameters.
  auto master = state.model.params().tensors();
  for (auto& t : master) t.zero_grad();
  for (const auto& cp : chunk_params) {
    const auto parts = cp.tensors();
    for (std::size_t k = 0; k < master.size(); ++k) {
      if (!parts[k].has_grad()) continue;
      auto dst = master[k].grad();
      const auto src = parts[k].grad();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }

  double total = 0.0;
  for (double l : losses) total += l;
  const auto loss = static_cast<float>(total / static_cast<double>(n));
  if (ad::checked() && !std::isfinite(loss)) {
    throw Error(ErrorKind::Numeric, "train_step: non-finite loss " + std::to_string(loss) +
                                        " (epoch " + std::to_string(state.epoch) + ", adam step " +
                                        std::to_string(state.adam.t) + ")");
  }
  return loss;
}

float train_step(TrainState& state, std::span<const SegmentPair> batch, const TrainConfig& config) {
  config.validate();
  const float loss = compute_batch_gradients(state, batch, config.mask_rate);
  auto params = state.model.params().tensors();
  ad::adam_step(params, state.adam, config.lr);
  return loss;
}

FitResult fit(TrainState& state, std::span<const SegmentPair> train_set, const TrainConfig& config,
              const EpochCallback& on_epoch) {
  config.validate();
  FitResult result;
  if (state.epoch >= config.epochs) return result;
  if (train_set.empty()) throw Error(ErrorKind::Domain, "fit: empty training set");

  std::vector<std::size_t> order(train_set.size());
  std::vector<SegmentPair> batch;
  batch.reserve(config.batch_size);
  while (state.epoch < config.epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle) shuffle(order, state.rng);

    double epoch_total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(train_set[order[i]]);
      }
      const float loss = train_step(state, batch, config);
      result.step_losses.push_back(loss);
      epoch_total += loss;
      ++steps;
    }
    ++state.epoch;
    const double mean_loss = epoch_total / static_cast<double>(steps);
    result.epoch_losses.push_back(mean_loss);

    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() &&
        state.epoch % config.checkpoint_every == 0) {
      save_checkpoint(config.checkpoint_path, state);
    }
    if (on_epoch) on_epoch(state, mean_loss);
  }
  return result;
}

namespace serial {
std::vector<Segment> denoise(const net::Model& model, std::span<const Segment> inputs) {
  std::vector<Segment> out;
  out.reserve(inputs.size());
  for (const auto& s : inputs) out.push_back(to_segment(model.forward(to_tensor(s))));
  return out;
}
}  // namespace serial

std::vector<Segment> denoise(const net::Model& model, std::span<const Segment> inputs) {
  std::vector<Segment> out(inputs.size());
  std::vector<std::exception_ptr> errors(inputs.size());
  const auto n = static_cast<std::int64_t>(inputs.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      out[k] = to_segment(model.forward(to_tensor(inputs[k])));
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

MetricsTable evaluate_outputs(std::span<const SegmentPair> test_set,
                              std::span<const Segment> outputs) {
  if (test_set.empty()) throw Error(ErrorKind::Domain, "evaluate: empty test set");
  if (outputs.size() != test_set.size()) {
    throw Error(ErrorKind::Shape, "evaluate: " + std::to_string(outputs.size()) +
                                      " outputs for " + std::to_string(test_set.size()) + " pairs");
  }
  MetricsTable table;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto& p = test_set[i];
    auto& m = table[std::string(to_string(p.mix.noise_type))];
    m.count += 1;
    m.mean_input_snr_db += snr_db(p.clean, p.noisy);
    m.mean_output_snr_db += snr_db(p.clean, outputs[i]);
    m.mean_rmse += rmse(p.clean, outputs[i]);
  }
  for (auto& [name, m] : table) {
    const double n = static_cast<double>(m.count);
    m.mean_input_snr_db /= n;
    m.mean_output_snr_db /= n;
    m.mean_rmse /= n;
  }
  return table;
}

MetricsTable evaluate(const net::Model& model, std::span<const SegmentPair> test_set) {
  if (test_set.empty()) throw Error(ErrorKind::Domain, "evaluate: empty test set");
  std::vector<Segment> noisy(test_set.size());
  for (std::size_t i = 0; i < test_set.size(); ++i) noisy[i] = test_set[i].noisy;
  return evaluate_outputs(test_set, denoise(model, noisy));
}

// ---------------------------------------------------------------------------

namespace {

void write_named(bytes::Writer& w, const std::string& name, std::span<const float> data) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.raw(name);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.f32s(data);
}

void read_named(bytes::Reader& r, const std::string& expect_name, std::span<float> out) {
  const std::uint16_t len = r.u16();
  const std::string name = r.raw(len);
  if (name != expect_name) {
    throw Error(ErrorKind::Integrity, "checkpoint: expected tensor '" + expect_name +
                                          "', found '" + name + "'");
  }
  const std::uint32_t count = r.u32();
  if (count != out.size()) {
    throw Error(ErrorKind::Integrity, "checkpoint: tensor '" + name + "' has " +
                                          std::to_string(count) + " values, expected " +
                                          std::to_string(out.size()));
  }
  r.f32s(out);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state) {
  bytes::Writer w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const std::string blob = state.model.config().serialize() + std::string(kTrainKeyPrefix) +
                           "adam_step=" + std::to_string(state.adam.t) + "\n";
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.raw(blob);

  const auto named = state.model.params().named();
  for (const auto& [name, t] : named) write_named(w, name, t.data());
  for (std::size_t pass = 0; pass < 2; ++pass) {
    const auto& moments = pass == 0 ? state.adam.m : state.adam.v;
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (moments.empty()) {
        write_named(w, named[i].first, std::vector<float>(named[i].second.numel(), 0.0f));
      } else {
        write_named(w, named[i].first, moments[i]);
      }
    }
  }
  w.u64(state.rng.state());
  w.u32(state.epoch);
  return w.take();
}

TrainState deserialize_checkpoint(std::span<const std::uint8_t> data,
                                  const net::ModelConfig* expected) {
  bytes::Reader r(data);
  if (r.remaining() < kCheckpointMagic.size() + 4 || r.raw(8) != kCheckpointMagic) {
    throw Error(ErrorKind::Integrity, "checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::Version, "checkpoint: unsupported version " + std::to_string(version));
  }
  const std::string blob = r.raw(r.u32());

  std::string model_text;
  std::uint64_t adam_step = 0;
  std::size_t pos = 0;
  while (pos < blob.size()) {
    const std::size_t nl = blob.find('\n', pos);
    std::string line = blob.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? blob.size() : nl + 1;
    if (line.rfind(kTrainKeyPrefix, 0) == 0) {
      const std::string kv = line.substr(kTrainKeyPrefix.size());
      if (kv.rfind("adam_step=", 0) != 0) {
        throw Error(ErrorKind::Integrity, "checkpoint: unknown training key '" + line + "'");
      }
      adam_step = std::stoull(kv.substr(10));
    } else {
      model_text += line + "\n";
    }
  }
  const net::ModelConfig config = net::ModelConfig::parse(model_text);
  if (expected && !(*expected == config)) {
    throw Error(ErrorKind::Config, "checkpoint: model config differs from the requested one");
  }

  net::ModelParams params = net::allocate_params(config);
  const auto named = params.named();
  for (const auto& [name, t] : named) {
    Tensor handle = t;
    read_named(r, name, handle.data());
  }
  ad::AdamState adam;
  adam.t = adam_step;
  adam.m.resize(named.size());
  adam.v.resize(named.size());
  for (std::size_t pass = 0; pass < 2; ++pass) {
    auto& moments = pass == 0 ? adam.m : adam.v;
    for (std::size_t i = 0; i < named.size(); ++i) {
      moments[i].resize(named[i].second.numel());
      read_named(r, named[i].first, moments[i]);
    }
  }
  const std::uint64_t rng_state = r.u64();
  const std::uint32_t epoch = r.u32();
  if (r.remaining() != 0) {
    throw Error(ErrorKind::Integrity, "checkpoint: " + std::to_string(r.remaining()) +
                                          " unexpected trailing bytes");
  }

  TrainState state(net::Model(config, std::move(params)), 0);
  state.adam = std::move(adam);
  state.rng.set_state(rng_state);
  state.epoch = epoch;
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  write_file_atomic(path, serialize_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path, const net::ModelConfig* expected) {
  try {
    return deserialize_checkpoint(read_file_bytes(path), expected);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace ecgd::train
