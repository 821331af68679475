#include "ecgd/signal_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "ecgd/bytes.hpp"
#include "ecgd/error.hpp"

namespace ecgd {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

/// Parses the leading numeric part of a field such as "212x1" or "360/360".
template <typename T>
bool parse_leading(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr != s.data();
}

[[noreturn]] void header_error(std::size_t line_no, const std::string& msg) {
  throw Error(ErrorKind::Parse,
              "header line " + std::to_string(line_no) + ": " + msg);
}

// Signal line: file format [gain[(baseline)][/units] [adc_res [adc_zero ...]]]
SignalSpec parse_signal_line(std::span<const std::string_view> f, std::size_t line_no) {
  if (f.size() < 2) header_error(line_no, "signal line needs at least file name and format");
  SignalSpec spec;
  spec.file_name = std::string(f[0]);
  if (!parse_leading(f[1], spec.format_code)) {
    header_error(line_no, "non-numeric format field '" + std::string(f[1]) + "'");
  }

  bool has_paren_baseline = false;
  if (f.size() > 2) {
    std::string_view g = f[2];
    std::string_view gain_part = g.substr(0, g.find_first_of("(/"));
    double gain = 0.0;
    if (!parse_number(gain_part, gain)) {
      header_error(line_no, "non-numeric gain field '" + std::string(g) + "'");
    }
    // WFDB: a gain of zero means "uncalibrated", use the default 200 ADU/mV.
    spec.gain = gain == 0.0 ? 200.0 : gain;
    if (const auto open = g.find('('); open != std::string_view::npos) {
      const auto close = g.find(')', open);
      if (close == std::string_view::npos ||
          !parse_number(g.substr(open + 1, close - open - 1), spec.baseline)) {
        header_error(line_no, "malformed baseline in gain field '" + std::string(g) + "'");
      }
      has_paren_baseline = true;
    }
  }
  if (f.size() > 4) {
    int adc_zero = 0;
    if (!parse_number(f[4], adc_zero)) {
      header_error(line_no, "non-numeric ADC zero field '" + std::string(f[4]) + "'");
    }
    if (!has_paren_baseline) spec.baseline = adc_zero;
  }
  if (spec.gain < 0.0) header_error(line_no, "gain must be positive");
  if (f.size() > 8) {
    std::string desc;
    for (std::size_t i = 8; i < f.size(); ++i) {
      if (!desc.empty()) desc += ' ';
      desc += f[i];
    }
    spec.description = std::move(desc);
  }
  return spec;
}

}  // namespace

RecordHeader parse_header(std::string_view text) {
  RecordHeader h;
  bool have_record_line = false;
  std::size_t line_no = 0;
  std::size_t record_line_no = 0;

  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split_ws(t);

    if (!have_record_line) {
      if (fields.size() < 2) header_error(line_no, "record line needs name and signal count");
      h.record_name = std::string(fields[0]);
      if (h.record_name.find('/') != std::string::npos) {
        header_error(line_no, "multi-segment records are not supported");
      }
      if (!parse_number(fields[1], h.n_signals)) {
        header_error(line_no, "non-numeric signal count '" + std::string(fields[1]) + "'");
      }
      if (h.n_signals < 1) header_error(line_no, "signal count must be >= 1");
      if (fields.size() > 2) {
        if (!parse_leading(fields[2], h.fs)) {
          header_error(line_no, "non-numeric sampling frequency '" + std::string(fields[2]) + "'");
        }
        if (!(h.fs > 0.0)) header_error(line_no, "sampling frequency must be > 0");
      }
      if (fields.size() > 3 && !parse_number(fields[3], h.n_samples)) {
        header_error(line_no, "non-numeric sample count '" + std::string(fields[3]) + "'");
      }
      have_record_line = true;
      record_line_no = line_no;
      continue;
    }

    if (h.signals.size() == h.n_signals) {
      header_error(line_no, "more signal lines than the " + std::to_string(h.n_signals) +
                                " declared");
    }
    h.signals.push_back(parse_signal_line(fields, line_no));
  }

  if (!have_record_line) header_error(1, "missing record line");
  if (h.signals.size() != h.n_signals) {
    header_error(record_line_no, "declares " + std::to_string(h.n_signals) +
                                     " signals but " + std::to_string(h.signals.size()) +
                                     " signal lines follow");
  }
  return h;
}

std::array<std::int32_t, 2> unpack_fmt212(std::uint8_t b0, std::uint8_t b1,
                                          std::uint8_t b2) noexcept {
  std::int32_t s1 = b0 | ((b1 & 0x0F) << 8);
  std::int32_t s2 = b2 | ((b1 & 0xF0) << 4);
  if (s1 >= 2048) s1 -= 4096;
  if (s2 >= 2048) s2 -= 4096;
  return {s1, s2};
}

RawSamples decode_fmt212(std::span<const std::uint8_t> bytes, std::size_t n_samples,
                         std::size_t n_signals) {
  if (n_signals == 0) throw Error(ErrorKind::Domain, "fmt212: n_signals must be >= 1");
  if (n_samples % n_signals != 0) {
    throw Error(ErrorKind::Domain, "fmt212: total sample count " + std::to_string(n_samples) +
                                       " is not a multiple of " + std::to_string(n_signals) +
                                       " signals");
  }
  const std::size_t needed = (3 * n_samples + 1) / 2;
  if (bytes.size() < needed) {
    throw Error(ErrorKind::Truncated, "fmt212: need " + std::to_string(needed) +
                                          " bytes for " + std::to_string(n_samples) +
                                          " samples, have " + std::to_string(bytes.size()));
  }

  RawSamples out;
  out.n_signals = n_signals;
  out.n_samples = n_samples / n_signals;
  out.values.resize(n_samples);

  const auto n_pairs = static_cast<std::int64_t>(n_samples / 2);
  const std::size_t per = out.n_samples;
  auto store = [&](std::size_t k, std::int32_t v) {
    // Flat interleaved index k -> (signal, time).
    out.values[(k % n_signals) * per + k / n_signals] = v;
  };

#pragma omp parallel for schedule(static) if (n_pairs > 65536)
  for (std::int64_t p = 0; p < n_pairs; ++p) {
    const std::size_t b = 3 * static_cast<std::size_t>(p);
    const auto s = unpack_fmt212(bytes[b], bytes[b + 1], bytes[b + 2]);
    store(2 * static_cast<std::size_t>(p), s[0]);
    store(2 * static_cast<std::size_t>(p) + 1, s[1]);
  }
  if (n_samples % 2 == 1) {
    const std::size_t b = 3 * (n_samples / 2);
    store(n_samples - 1, unpack_fmt212(bytes[b], bytes[b + 1], 0)[0]);
  }
  return out;
}

std::vector<std::uint8_t> encode_fmt212(const RawSamples& samples) {
  const std::size_t total = samples.n_signals * samples.n_samples;
  std::vector<std::uint8_t> out((3 * total + 1) / 2, 0);
  auto flat = [&](std::size_t k) -> std::uint32_t {
    const auto v = samples(k % samples.n_signals, k / samples.n_signals);
    if (v < -2048 || v > 2047) {
      throw Error(ErrorKind::Domain, "fmt212: sample " + std::to_string(v) +
                                         " outside 12-bit range");
    }
    return static_cast<std::uint32_t>(v) & 0x0FFF;
  };
  for (std::size_t k = 0; k < total; k += 2) {
    const std::size_t b = 3 * (k / 2);
    const std::uint32_t s1 = flat(k);
    const std::uint32_t s2 = k + 1 < total ? flat(k + 1) : 0;
    out[b] = static_cast<std::uint8_t>(s1 & 0xFF);
    out[b + 1] = static_cast<std::uint8_t>(((s1 >> 8) & 0x0F) | ((s2 >> 4) & 0xF0));
    if (k + 1 < total) out[b + 2] = static_cast<std::uint8_t>(s2 & 0xFF);
  }
  return out;
}

std::string format_header(const RecordHeader& h) {
  std::ostringstream os;
  os << h.record_name << ' ' << h.n_signals << ' ' << h.fs << ' ' << h.n_samples << '\n';
  for (const auto& s : h.signals) {
    os << s.file_name << ' ' << s.format_code << ' ' << s.gain << "(" << s.baseline
       << ")/mV 12 " << s.baseline << " 0 0 0";
    if (!s.description.empty()) os << ' ' << s.description;
    os << '\n';
  }
  return os.str();
}

double adu_to_mv(std::int32_t raw, double gain, double baseline) {
  if (!(gain > 0.0)) {
    throw Error(ErrorKind::Domain, "adu_to_mv: gain must be > 0, got " + std::to_string(gain));
  }
  return (static_cast<double>(raw) - baseline) / gain;
}

SignalRecord decode_record(const RecordHeader& header, std::span<const std::uint8_t> dat) {
  for (const auto& s : header.signals) {
    if (s.format_code != 212) {
      throw Error(ErrorKind::Unsupported, "record " + header.record_name + ": format " +
                                              std::to_string(s.format_code) +
                                              " is not supported (only 212)");
    }
    if (s.file_name != header.signals.front().file_name) {
      throw Error(ErrorKind::Unsupported,
                  "record " + header.record_name + ": signals split across files");
    }
  }
  const RawSamples raw =
      decode_fmt212(dat, header.n_samples * header.n_signals, header.n_signals);

  SignalRecord rec;
  rec.header = header;
  rec.channels = Matrix(header.n_signals, header.n_samples);
  for (std::size_t s = 0; s < header.n_signals; ++s) {
    const auto& spec = header.signals[s];
    for (std::size_t t = 0; t < header.n_samples; ++t) {
      rec.channels(s, t) = adu_to_mv(raw(s, t), spec.gain, spec.baseline);
    }
  }
  return rec;
}

SignalRecord read_csv_signal(std::string_view text, double fs, std::string record_name) {
  if (!(fs > 0.0)) throw Error(ErrorKind::Domain, "csv: sampling frequency must be > 0");

  std::vector<std::vector<double>> rows;
  std::size_t n_cols = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        trim(text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;

    std::vector<std::string_view> cells;
    std::size_t c = 0;
    while (true) {
      const std::size_t comma = line.find(',', c);
      cells.push_back(trim(line.substr(c, comma == std::string_view::npos ? line.npos : comma - c)));
      if (comma == std::string_view::npos) break;
      c = comma + 1;
    }

    std::vector<double> values(cells.size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!parse_number(cells[i], values[i])) numeric = false;
    }
    if (!numeric) {
      if (rows.empty() && n_cols == 0) {
        n_cols = cells.size();  // header row
        continue;
      }
      throw Error(ErrorKind::Parse, "csv line " + std::to_string(line_no) +
                                        ": non-numeric field");
    }
    if (n_cols == 0) n_cols = cells.size();
    if (cells.size() != n_cols) {
      throw Error(ErrorKind::Parse, "csv line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(n_cols) + " columns, got " +
                                        std::to_string(cells.size()));
    }
    rows.push_back(std::move(values));
  }
  if (n_cols == 0) throw Error(ErrorKind::Parse, "csv: empty input");

  SignalRecord rec;
  rec.header.record_name = std::move(record_name);
  rec.header.n_signals = n_cols;
  rec.header.fs = fs;
  rec.header.n_samples = rows.size();
  rec.header.signals.resize(n_cols);
  for (std::size_t i = 0; i < n_cols; ++i) {
    rec.header.signals[i].file_name = rec.header.record_name + ".csv";
    rec.header.signals[i].gain = 1.0;
    rec.header.signals[i].format_code = 0;
  }
  rec.channels = Matrix(n_cols, rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t ch = 0; ch < n_cols; ++ch) rec.channels(ch, t) = rows[t][ch];
  }
  return rec;
}

SignalRecord read_wfdb_record(const std::filesystem::path& header_path) {
  const RecordHeader h = parse_header(read_file_text(header_path));
  const auto dat_path = header_path.parent_path() / h.signals.front().file_name;
  const auto bytes = read_file_bytes(dat_path);
  try {
    return decode_record(h, bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), dat_path.string() + ": " + e.what());
  }
}

SignalRecord read_record_file(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".hea") return read_wfdb_record(path);
  if (ext == ".csv") {
    return read_csv_signal(read_file_text(path), kDefaultSamplingHz, path.stem().string());
  }
  throw Error(ErrorKind::Unsupported, path.string() + ": expected a .hea or .csv record");
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kSegmentMagic{"ECGSEG1\0", 8};
constexpr std::size_t kSegmentHeaderBytes = 8 + 4 * 4;
}  // namespace

std::vector<std::uint8_t> serialize_segments(std::span<const Segment> segments) {
  bytes::Writer w;
  w.buffer().reserve(kSegmentHeaderBytes + segments.size() * Segment::kSize * 4);
  w.raw(kSegmentMagic);
  w.u32(kSegmentFileVersion);
  w.u32(static_cast<std::uint32_t>(segments.size()));
  w.u32(static_cast<std::uint32_t>(Segment::kChannels));
  w.u32(static_cast<std::uint32_t>(Segment::kLength));
  for (const auto& s : segments) w.f32s(s.data);
  return w.take();
}

std::vector<Segment> deserialize_segments(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  if (r.remaining() < kSegmentHeaderBytes) {
    throw Error(ErrorKind::Integrity, "segment file: header truncated");
  }
  if (r.raw(8) != kSegmentMagic) throw Error(ErrorKind::Integrity, "segment file: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kSegmentFileVersion) {
    throw Error(ErrorKind::Version, "segment file: unsupported version " +
                                        std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  const std::uint32_t channels = r.u32();
  const std::uint32_t length = r.u32();
  if (channels != Segment::kChannels || length != Segment::kLength) {
    throw Error(ErrorKind::Shape, "segment file: expected 2x256 segments, got " +
                                      std::to_string(channels) + "x" + std::to_string(length));
  }
  const std::uint64_t payload = std::uint64_t{count} * Segment::kSize * 4;
  if (r.remaining() != payload) {
    throw Error(ErrorKind::Integrity, "segment file: declared " + std::to_string(count) +
                                          " segments (" + std::to_string(payload) +
                                          " payload bytes) but found " +
                                          std::to_string(r.remaining()));
  }
  std::vector<Segment> out(count);
  for (auto& s : out) r.f32s(s.data);
  return out;
}

void write_segments(const std::filesystem::path& path, std::span<const Segment> segments) {
  write_file_atomic(path, serialize_segments(segments));
}

std::vector<Segment> read_segments(const std::filesystem::path& path) {
  try {
    return deserialize_segments(read_file_bytes(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_file_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out) throw Error(ErrorKind::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace ecgd
