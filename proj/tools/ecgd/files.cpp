#include "files.hpp"

#include <sstream>

#include "ecgd/error.hpp"
#include "ecgd/signal_io.hpp"

namespace ecgd::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Config,
                  source + ":" + std::to_string(no) + ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorKind::Config, source + ":" + std::to_string(no) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw Error(ErrorKind::Config, source + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

fs::path sidecar_path(const fs::path& data) {
  fs::path p = data;
  p += ".meta";
  return p;
}

std::optional<KeyValues> read_sidecar(const fs::path& data) {
  const fs::path p = sidecar_path(data);
  if (!fs::exists(p)) return std::nullopt;
  return parse_key_values(read_file_text(p), p.string());
}

void write_sidecar(const fs::path& data, const KeyValues& kv) {
  write_file_atomic(sidecar_path(data), format_key_values(kv));
}

std::string SegmentFile::kind() const {
  const auto it = meta.find("kind");
  return it == meta.end() ? "clean" : it->second;
}

SegmentFile load_segment_file(const fs::path& path) {
  SegmentFile f;
  f.segments = read_segments(path);
  if (auto meta = read_sidecar(path)) f.meta = std::move(*meta);
  if (f.paired() && f.segments.size() % 2 != 0) {
    throw Error(ErrorKind::Integrity,
                path.string() + ": paired dataset has an odd segment count (" +
                    std::to_string(f.segments.size()) + ")");
  }
  return f;
}

void save_segment_file(const fs::path& path, const SegmentFile& file) {
  // Sidecar first: a reader never sees new segments with a stale sidecar.
  KeyValues meta = file.meta;
  meta["count"] = std::to_string(file.segments.size());
  write_sidecar(path, meta);
  write_segments(path, file.segments);
}

std::optional<NoiseType> sidecar_noise_type(const KeyValues& meta) {
  const auto it = meta.find("noise_type");
  if (it == meta.end()) return std::nullopt;
  const auto t = parse_noise_type(it->second);
  if (!t) throw Error(ErrorKind::Config, "sidecar: unknown noise_type '" + it->second + "'");
  return t;
}

void append_metrics_row(const fs::path& path, const MetricsRow& row) {
  std::string text;
  if (fs::exists(path)) {
    text = read_file_text(path);
    const std::string header = text.substr(0, text.find('\n'));
    if (trim(header) != kMetricsHeader) {
      throw Error(ErrorKind::Config, path.string() + ": existing file has header '" + header +
                                         "', expected '" + std::string(kMetricsHeader) + "'");
    }
    if (!text.empty() && text.back() != '\n') text += '\n';
  } else {
    text = std::string(kMetricsHeader) + "\n";
  }
  text += format_metrics_row(row) + "\n";
  write_file_atomic(path, text);
}

}  // namespace ecgd::cli
