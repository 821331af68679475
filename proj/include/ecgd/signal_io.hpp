#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ecgd {

/// One signal line of a WFDB header.
struct SignalSpec {
  std::string file_name;
  int format_code = 212;
  double gain = 200.0;     // ADU per mV
  int baseline = 0;        // ADU
  std::string description;
};

struct RecordHeader {
  std::string record_name;
  std::size_t n_signals = 0;
  double fs = 360.0;
  std::size_t n_samples = 0;  // per signal
  std::vector<SignalSpec> signals;
};

/// Row-major [rows x cols] matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }
};

struct SignalRecord {
  RecordHeader header;
  Matrix channels;  // [n_signals x n_samples], millivolts
};

/// Raw ADU samples, [n_signals x n_samples_per_signal].
struct RawSamples {
  std::size_t n_signals = 0;
  std::size_t n_samples = 0;
  std::vector<std::int32_t> values;

  std::int32_t operator()(std::size_t s, std::size_t t) const {
    return values[s * n_samples + t];
  }
};

inline constexpr double kDefaultSamplingHz = 360.0;

RecordHeader parse_header(std::string_view text);

/// Decode one 3-byte format-212 group into its two signed 12-bit samples.
std::array<std::int32_t, 2> unpack_fmt212(std::uint8_t b0, std::uint8_t b1,
                                          std::uint8_t b2) noexcept;

/// Decode an interleaved format-212 stream. `n_samples` is the total sample
/// count across all signals; it must be a multiple of `n_signals`.
RawSamples decode_fmt212(std::span<const std::uint8_t> bytes,
                         std::size_t n_samples, std::size_t n_signals);

double adu_to_mv(std::int32_t raw, double gain, double baseline);

SignalRecord read_csv_signal(std::string_view text,
                             double fs = kDefaultSamplingHz,
                             std::string record_name = "csv");

/// Header + format-212 payload already in memory.
SignalRecord decode_record(const RecordHeader& header,
                           std::span<const std::uint8_t> dat_bytes);

/// Loads `<stem>.hea` and the .dat it names.
SignalRecord read_wfdb_record(const std::filesystem::path& header_path);

/// Loads a .hea/.dat pair or a .csv, chosen by extension.
SignalRecord read_record_file(const std::filesystem::path& path);

// Writers used for fixtures and round-trip tests.
std::vector<std::uint8_t> encode_fmt212(const RawSamples& samples);
std::string format_header(const RecordHeader& header);

// ---------------------------------------------------------------------------
// Segment dataset file

inline constexpr std::size_t kSegmentChannels = 2;
inline constexpr std::size_t kSegmentLength = 256;
inline constexpr std::uint32_t kSegmentFileVersion = 1;

/// Fixed-size [2 x 256] f32 block, channel-major.
struct Segment {
  static constexpr std::size_t kChannels = kSegmentChannels;
  static constexpr std::size_t kLength = kSegmentLength;
  static constexpr std::size_t kSize = kChannels * kLength;

  std::array<float, kSize> data{};

  float& at(std::size_t c, std::size_t t) { return data[c * kLength + t]; }
  float at(std::size_t c, std::size_t t) const { return data[c * kLength + t]; }
  std::span<const float> channel(std::size_t c) const {
    return {data.data() + c * kLength, kLength};
  }
  std::span<float> channel(std::size_t c) {
    return {data.data() + c * kLength, kLength};
  }

  friend bool operator==(const Segment&, const Segment&) = default;
};

std::vector<std::uint8_t> serialize_segments(std::span<const Segment> segments);
std::vector<Segment> deserialize_segments(std::span<const std::uint8_t> bytes);

void write_segments(const std::filesystem::path& path,
                    std::span<const Segment> segments);
std::vector<Segment> read_segments(const std::filesystem::path& path);

// Small file helpers shared by the CLI and trainer.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace ecgd
