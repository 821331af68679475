#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ecgd/net.hpp"
#include "ecgd/noise_lab.hpp"
#include "ecgd/optim.hpp"
#include "ecgd/rng.hpp"

namespace ecgd::train {

struct TrainConfig {
  float lr = 0.001f;
  std::uint32_t epochs = 100;
  std::size_t batch_size = 128;
  /// Probability that an input element is zeroed during training.
  double mask_rate = 0.1;
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Save a checkpoint every N epochs when > 0 and checkpoint_path is set.
  std::uint32_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;

  void validate() const;
};

/// Everything needed to continue training bit-for-bit.
struct TrainState {
  net::Model model;
  ad::AdamState adam;
  Rng rng;
  std::uint32_t epoch = 0;

  TrainState(net::Model m, std::uint64_t seed) : model(std::move(m)), rng(seed) {}
};

/// Fresh model initialized from `seed`; the data-order/mask stream is forked
/// from the same seed.
TrainState make_state(const net::ModelConfig& config, std::uint64_t seed);

/// Elementwise Bernoulli keep-mask: each element is 0 with probability
/// `mask_rate`, else 1.
ad::Tensor make_mask(const ad::Shape& shape, double mask_rate, Rng& rng);

/// Number of masks applied to inputs since process start.
std::uint64_t mask_application_count() noexcept;

/// Segment -> [2 x 256] tensor and back.
ad::Tensor to_tensor(const Segment& s);
Segment to_segment(const ad::Tensor& t);

/// Masked forward, MSE against the clean target, backward and one Adam step.
/// Returns the batch loss before the update.
float train_step(TrainState& state, std::span<const SegmentPair> batch, const TrainConfig& config);

/// Batch loss and gradients without updating (gradients are left on the
/// model parameters). Exposed for gradient checks and the masking invariant.
float compute_batch_gradients(TrainState& state, std::span<const SegmentPair> batch,
                              double mask_rate);

struct FitResult {
  std::vector<double> epoch_losses;  // mean over steps, one per epoch run
  std::vector<float> step_losses;
};

using EpochCallback = std::function<void(const TrainState&, double mean_loss)>;

/// Runs epochs state.epoch .. config.epochs-1 with a seeded shuffle.
FitResult fit(TrainState& state, std::span<const SegmentPair> train_set, const TrainConfig& config,
              const EpochCallback& on_epoch = {});

/// Forward pass for each segment, no masking, no tape.
std::vector<Segment> denoise(const net::Model& model, std::span<const Segment> inputs);
namespace serial {
std::vector<Segment> denoise(const net::Model& model, std::span<const Segment> inputs);
}

struct NoiseMetrics {
  std::size_t count = 0;
  double mean_input_snr_db = 0.0;
  double mean_output_snr_db = 0.0;
  double mean_rmse = 0.0;
};

/// Keyed by noise type name ("bw", "ma", "em", "ebm").
using MetricsTable = std::map<std::string, NoiseMetrics>;

MetricsTable evaluate(const net::Model& model, std::span<const SegmentPair> test_set);
/// Same table for any denoiser (e.g. the wavelet baseline).
MetricsTable evaluate_outputs(std::span<const SegmentPair> test_set,
                              std::span<const Segment> outputs);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
/// Rejects bad magic/version, truncation, trailing bytes, parameter layout
/// mismatches, and (when `expected` is given) a different model config.
TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                  const net::ModelConfig* expected = nullptr);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path,
                           const net::ModelConfig* expected = nullptr);

}  // namespace ecgd::train
