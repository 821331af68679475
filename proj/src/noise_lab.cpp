#include "ecgd/noise_lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "ecgd/error.hpp"
#include "ecgd/rng.hpp"

namespace ecgd {

std::optional<NoiseType> parse_noise_type(std::string_view s) {
  if (s == "bw") return NoiseType::bw;
  if (s == "ma") return NoiseType::ma;
  if (s == "em") return NoiseType::em;
  if (s == "ebm" || s == "emb") return NoiseType::combined;
  return std::nullopt;
}

std::string_view to_string(NoiseType t) noexcept {
  switch (t) {
    case NoiseType::bw: return "bw";
    case NoiseType::ma: return "ma";
    case NoiseType::em: return "em";
    case NoiseType::combined: return "ebm";
  }
  return "?";
}

std::vector<std::string> noise_components(NoiseType t) {
  if (t == NoiseType::combined) return {"bw", "ma", "em"};
  return {std::string(to_string(t))};
}

std::vector<Segment> segment_record(const SignalRecord& record, bool duplicate_single_channel) {
  const auto& m = record.channels;
  if (m.rows == 0) return {};
  if (m.rows < 2 && !duplicate_single_channel) {
    throw Error(ErrorKind::Shape, "record " + record.header.record_name +
                                      " has one channel; two are required");
  }
  const std::size_t second = m.rows >= 2 ? 1 : 0;
  const std::size_t n = m.cols / Segment::kLength;
  std::vector<Segment> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * Segment::kLength;
    for (std::size_t t = 0; t < Segment::kLength; ++t) {
      out[i].at(0, t) = static_cast<float>(m(0, off + t));
      out[i].at(1, t) = static_cast<float>(m(second, off + t));
    }
  }
  return out;
}

namespace {

double power(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

std::array<double, Segment::kSize> widen(const Segment& s) {
  std::array<double, Segment::kSize> out{};
  std::copy(s.data.begin(), s.data.end(), out.begin());
  return out;
}

}  // namespace

double noise_scale(std::span<const double> clean, std::span<const double> noise, double snr_db) {
  if (!std::isfinite(snr_db)) {
    throw Error(ErrorKind::Domain, "noise_scale: target SNR must be finite");
  }
  if (clean.size() != noise.size()) {
    throw Error(ErrorKind::Shape, "noise_scale: clean and noise lengths differ");
  }
  const double px = power(clean);
  const double pn = power(noise);
  if (pn == 0.0) throw Error(ErrorKind::Degenerate, "noise_scale: noise segment has zero power");
  if (px == 0.0) throw Error(ErrorKind::Degenerate, "noise_scale: clean segment has zero power");
  return std::sqrt(px / pn * std::pow(10.0, -snr_db / 10.0));
}

double noise_scale(const Segment& clean, const Segment& noise, double snr_db) {
  const auto c = widen(clean);
  const auto n = widen(noise);
  return noise_scale(c, n, snr_db);
}

SegmentPair mix(const Segment& clean, std::span<const Segment> noise_parts, const MixSpec& spec) {
  if (noise_parts.empty()) throw Error(ErrorKind::Domain, "mix: no noise segment given");
  const auto c = widen(clean);
  std::array<double, Segment::kSize> n{};
  for (const auto& part : noise_parts) {
    for (std::size_t i = 0; i < Segment::kSize; ++i) n[i] += static_cast<double>(part.data[i]);
  }
  const double alpha = noise_scale(c, n, spec.snr_db);
  SegmentPair p;
  p.clean = clean;
  p.mix = spec;
  for (std::size_t i = 0; i < Segment::kSize; ++i) {
    p.noisy.data[i] = static_cast<float>(c[i] + alpha * n[i]);
  }
  return p;
}

SegmentPair mix(const Segment& clean, const Segment& noise, const MixSpec& spec) {
  return mix(clean, std::span<const Segment>(&noise, 1), spec);
}

double snr_db(std::span<const float> clean, std::span<const float> estimate) {
  if (clean.size() != estimate.size()) {
    throw Error(ErrorKind::Shape, "snr_db: shape mismatch");
  }
  double signal = 0.0;
  double resid = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double c = clean[i];
    const double r = static_cast<double>(estimate[i]) - c;
    signal += c * c;
    resid += r * r;
  }
  if (resid == 0.0) return std::numeric_limits<double>::infinity();
  if (signal == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / resid);
}

double snr_db(const Segment& clean, const Segment& estimate) {
  return snr_db(std::span<const float>(clean.data), std::span<const float>(estimate.data));
}

double rmse(std::span<const float> clean, std::span<const float> estimate) {
  if (clean.size() != estimate.size()) throw Error(ErrorKind::Shape, "rmse: shape mismatch");
  if (clean.empty()) throw Error(ErrorKind::Shape, "rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = static_cast<double>(estimate[i]) - static_cast<double>(clean[i]);
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(clean.size()));
}

double rmse(const Segment& clean, const Segment& estimate) {
  return rmse(std::span<const float>(clean.data), std::span<const float>(estimate.data));
}

std::size_t split_test_count(std::size_t n, unsigned train_parts, unsigned test_parts) {
  if (train_parts + test_parts == 0) {
    throw Error(ErrorKind::Config, "split ratio must have a positive total");
  }
  return n * test_parts / (train_parts + test_parts);
}

Dataset build_dataset(std::span<const Segment> clean, std::span<const NoisePool> noise,
                      const DatasetSpec& spec) {
  if (clean.empty()) throw Error(ErrorKind::Domain, "build_dataset: no clean segments");
  if (!std::isfinite(spec.snr_db)) {
    throw Error(ErrorKind::Domain, "build_dataset: target SNR must be finite");
  }

  // One pool per component, in component order.
  std::vector<const NoisePool*> pools;
  for (const auto& name : noise_components(spec.noise_type)) {
    const auto it = std::find_if(noise.begin(), noise.end(),
                                 [&](const NoisePool& p) { return p.component == name; });
    if (it == noise.end() || it->segments.empty()) {
      throw Error(ErrorKind::Domain, "build_dataset: no noise segments of type '" + name + "'");
    }
    pools.push_back(&*it);
  }

  Rng rng(spec.seed);

  std::vector<std::size_t> chosen(clean.size());
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (spec.max_pairs != 0 && spec.max_pairs < chosen.size()) {
    shuffle(chosen, rng);
    chosen.resize(spec.max_pairs);
    std::sort(chosen.begin(), chosen.end());
  }

  std::vector<Segment> sources(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) sources[i] = clean[chosen[i]];

  if (spec.normalize) {
    double sum = 0.0;
    double sq = 0.0;
    for (const auto& s : sources) {
      for (float v : s.data) {
        sum += v;
        sq += static_cast<double>(v) * v;
      }
    }
    const double n = static_cast<double>(sources.size() * Segment::kSize);
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(sq / n - mean * mean, 0.0));
    if (sd == 0.0) throw Error(ErrorKind::Degenerate, "build_dataset: clean data is constant");
    for (auto& s : sources) {
      for (float& v : s.data) v = static_cast<float>((v - mean) / sd);
    }
  }

  // Draw noise indices serially so the pairing depends only on the seed.
  const std::size_t n_parts = pools.size();
  std::vector<std::size_t> draws(sources.size() * n_parts);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (std::size_t k = 0; k < n_parts; ++k) {
      draws[i * n_parts + k] = static_cast<std::size_t>(rng.below(pools[k]->segments.size()));
    }
  }

  std::vector<SegmentPair> pairs(sources.size());
  const auto n_pairs = static_cast<std::int64_t>(sources.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n_pairs; ++i) {
    std::array<Segment, 3> parts;
    for (std::size_t k = 0; k < n_parts; ++k) {
      parts[k] = pools[k]->segments[draws[static_cast<std::size_t>(i) * n_parts + k]];
    }
    const MixSpec ms{spec.snr_db, spec.noise_type, spec.seed};
    pairs[static_cast<std::size_t>(i)] =
        mix(sources[static_cast<std::size_t>(i)], std::span<const Segment>(parts.data(), n_parts), ms);
  }

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);

  const std::size_t n_test = split_test_count(pairs.size(), spec.train_parts, spec.test_parts);
  Dataset ds;
  ds.train.reserve(pairs.size() - n_test);
  ds.test.reserve(n_test);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < pairs.size() - n_test ? ds.train : ds.test).push_back(pairs[order[i]]);
  }
  return ds;
}

Dataset build_dataset(std::span<const SignalRecord> clean_records,
                      std::span<const SignalRecord> noise_records, const DatasetSpec& spec) {
  std::vector<Segment> clean;
  for (const auto& r : clean_records) {
    auto segs = segment_record(r, true);
    clean.insert(clean.end(), segs.begin(), segs.end());
  }
  std::vector<NoisePool> pools;
  for (const auto& r : noise_records) {
    auto segs = segment_record(r, true);
    const auto it = std::find_if(pools.begin(), pools.end(), [&](const NoisePool& p) {
      return p.component == r.header.record_name;
    });
    if (it == pools.end()) {
      pools.push_back({r.header.record_name, std::move(segs)});
    } else {
      it->segments.insert(it->segments.end(), segs.begin(), segs.end());
    }
  }
  return build_dataset(clean, pools, spec);
}

std::vector<Segment> interleave_pairs(std::span<const SegmentPair> pairs) {
  std::vector<Segment> out;
  out.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    out.push_back(p.clean);
    out.push_back(p.noisy);
  }
  return out;
}

std::vector<SegmentPair> deinterleave_pairs(std::span<const Segment> segments, const MixSpec& mix) {
  if (segments.size() % 2 != 0) {
    throw Error(ErrorKind::Shape, "paired dataset has an odd segment count (" +
                                      std::to_string(segments.size()) + ")");
  }
  std::vector<SegmentPair> out(segments.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].clean = segments[2 * i];
    out[i].noisy = segments[2 * i + 1];
    out[i].mix = mix;
  }
  return out;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_metrics_row(const MetricsRow& row) {
  return row.noise_type + "," + row.method + "," + format_metric(row.input_snr_db) + "," +
         format_metric(row.output_snr_db) + "," + format_metric(row.rmse);
}

MetricSummary summarize(std::span<const Segment> clean, std::span<const Segment> noisy,
                        std::span<const Segment> estimate) {
  if (clean.size() != estimate.size() || (!noisy.empty() && noisy.size() != clean.size())) {
    throw Error(ErrorKind::Shape, "summarize: dataset sizes differ (" +
                                      std::to_string(clean.size()) + " clean, " +
                                      std::to_string(estimate.size()) + " estimates)");
  }
  if (clean.empty()) throw Error(ErrorKind::Domain, "summarize: empty dataset");
  MetricSummary s;
  s.count = clean.size();
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (!noisy.empty()) s.mean_input_snr_db += snr_db(clean[i], noisy[i]);
    s.mean_output_snr_db += snr_db(clean[i], estimate[i]);
    s.mean_rmse += rmse(clean[i], estimate[i]);
  }
  const double n = static_cast<double>(s.count);
  s.mean_input_snr_db = noisy.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : s.mean_input_snr_db / n;
  s.mean_output_snr_db /= n;
  s.mean_rmse /= n;
  return s;
}

}  // namespace ecgd
