#pragma once

// File conventions owned by the command-line tool: the key=value sidecar that
// travels next to every segment file, the flat config file, and the
// append-only metrics table.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecgd/noise_lab.hpp"

namespace ecgd::cli {

using KeyValues = std::map<std::string, std::string>;

/// Parses "key=value" lines; blank lines and '#' comments are skipped.
/// Duplicate keys and lines without '=' are Config errors naming the line.
KeyValues parse_key_values(const std::string& text, const std::string& source);
std::string format_key_values(const KeyValues& kv);

/// `<data>.meta`
std::filesystem::path sidecar_path(const std::filesystem::path& data);
std::optional<KeyValues> read_sidecar(const std::filesystem::path& data);
void write_sidecar(const std::filesystem::path& data, const KeyValues& kv);

/// Segment file plus sidecar. kind is "clean", "paired" or "denoised".
struct SegmentFile {
  std::vector<Segment> segments;
  KeyValues meta;

  std::string kind() const;
  bool paired() const { return kind() == "paired"; }
};

SegmentFile load_segment_file(const std::filesystem::path& path);
void save_segment_file(const std::filesystem::path& path, const SegmentFile& file);

/// Noise type recorded in a sidecar, if any.
std::optional<NoiseType> sidecar_noise_type(const KeyValues& meta);

/// Adds one row to a metrics CSV, writing the header only when the file is
/// new. An existing file with a different header is rejected.
void append_metrics_row(const std::filesystem::path& path, const MetricsRow& row);

}  // namespace ecgd::cli
