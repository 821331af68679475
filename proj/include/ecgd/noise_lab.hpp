#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgd/signal_io.hpp"

namespace ecgd {

enum class NoiseType { bw, ma, em, combined };

/// Accepts "bw", "ma", "em", and both "ebm" and "emb" for the combined class.
std::optional<NoiseType> parse_noise_type(std::string_view s);
std::string_view to_string(NoiseType t) noexcept;
/// Noise record stems a type draws from, e.g. {"bw"} or {"bw","ma","em"}.
std::vector<std::string> noise_components(NoiseType t);

struct MixSpec {
  double snr_db = -4.0;
  NoiseType noise_type = NoiseType::bw;
  std::uint64_t seed = 0;
};

struct SegmentPair {
  Segment clean;
  Segment noisy;
  MixSpec mix;
};

/// Cuts consecutive non-overlapping 256-sample windows from the first two
/// channels. A single-channel record is rejected unless
/// `duplicate_single_channel` is set, in which case the channel is copied.
std::vector<Segment> segment_record(const SignalRecord& record,
                                    bool duplicate_single_channel = false);

/// Scale for the noise so that clean + scale * noise has the requested SNR.
double noise_scale(std::span<const double> clean, std::span<const double> noise,
                   double snr_db);
double noise_scale(const Segment& clean, const Segment& noise, double snr_db);

/// Adds the noise parts (summed first, unscaled) to `clean` at `spec.snr_db`.
/// All arithmetic is in double; the result is rounded to f32 once.
SegmentPair mix(const Segment& clean, std::span<const Segment> noise_parts,
                const MixSpec& spec);
SegmentPair mix(const Segment& clean, const Segment& noise, const MixSpec& spec);

/// 10 log10(sum clean^2 / sum (estimate - clean)^2) pooled over channels.
/// Returns +inf for a zero residual and -inf for zero clean power.
double snr_db(std::span<const float> clean, std::span<const float> estimate);
double snr_db(const Segment& clean, const Segment& estimate);

double rmse(std::span<const float> clean, std::span<const float> estimate);
double rmse(const Segment& clean, const Segment& estimate);

/// Noise segments available for one component stem ("bw", "ma" or "em").
struct NoisePool {
  std::string component;
  std::vector<Segment> segments;
};

struct DatasetSpec {
  NoiseType noise_type = NoiseType::bw;
  double snr_db = -4.0;
  std::uint64_t seed = 0;
  unsigned train_parts = 4;
  unsigned test_parts = 1;
  /// Use at most this many clean segments (random subset); 0 means all.
  std::size_t max_pairs = 0;
  /// z-score the clean segments with dataset-wide statistics before mixing.
  bool normalize = false;
};

struct Dataset {
  std::vector<SegmentPair> train;
  std::vector<SegmentPair> test;
};

/// Pairs every selected clean segment with randomly drawn noise segments
/// (with replacement), mixes them at the target SNR and splits the shuffled
/// pairs train:test. Deterministic in `spec.seed`.
Dataset build_dataset(std::span<const Segment> clean, std::span<const NoisePool> noise,
                      const DatasetSpec& spec);

/// Record-level entry point: segments every record first.
Dataset build_dataset(std::span<const SignalRecord> clean_records,
                      std::span<const SignalRecord> noise_records,
                      const DatasetSpec& spec);

/// Test-side count for `n` pairs under a train:test ratio (floored).
std::size_t split_test_count(std::size_t n, unsigned train_parts, unsigned test_parts);

// Paired datasets are stored as interleaved (clean, noisy) segments.
std::vector<Segment> interleave_pairs(std::span<const SegmentPair> pairs);
std::vector<SegmentPair> deinterleave_pairs(std::span<const Segment> segments,
                                            const MixSpec& mix = {});

// ---------------------------------------------------------------------------
// Metrics table

struct MetricsRow {
  std::string noise_type;
  std::string method;
  double input_snr_db = 0.0;
  double output_snr_db = 0.0;
  double rmse = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "noise_type,method,input_snr_db,output_snr_db,rmse";

/// Fixed-precision formatting; infinities print as "inf" / "-inf".
std::string format_metric(double v);
std::string format_metrics_row(const MetricsRow& row);

/// Mean of per-pair metrics, accumulated in index order.
struct MetricSummary {
  double mean_input_snr_db = 0.0;
  double mean_output_snr_db = 0.0;
  double mean_rmse = 0.0;
  std::size_t count = 0;
};

MetricSummary summarize(std::span<const Segment> clean, std::span<const Segment> noisy,
                        std::span<const Segment> estimate);

}  // namespace ecgd
