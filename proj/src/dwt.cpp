#include "ecgd/dwt.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ecgd/error.hpp"

namespace ecgd::dwt {
namespace {

// Minimum-phase Daubechies-8 scaling filter (reconstruction order), from a
// 60-digit spectral factorization. Sum is sqrt(2), norm is 1.
constexpr std::array<double, kDb8Taps> kDb8Scaling = {
    0.054415842243104009955,   0.31287159091429997066,    0.67563073629728980681,
    0.58535468365420671277,    -0.015829105256349305667,  -0.28401554296154692652,
    0.00047248457391328277036, 0.12874742662047845886,    -0.01736930100180754617,
    -0.044088253930794751507,  0.013981027917398281649,   0.0087460940474057767164,
    -0.0048703529934515743104, -0.0003917403733769470463, 0.00067544940645056936637,
    -0.00011747678412476953373,
};

FilterBank make_db8() {
  FilterBank b;
  constexpr std::size_t F = kDb8Taps;
  for (std::size_t k = 0; k < F; ++k) b.lo_d[k] = kDb8Scaling[F - 1 - k];
  for (std::size_t k = 0; k < F; ++k) {
    b.hi_d[k] = (k % 2 == 0 ? 1.0 : -1.0) * b.lo_d[F - 1 - k];
  }
  for (std::size_t k = 0; k < F; ++k) {
    b.lo_r[k] = b.lo_d[F - 1 - k];
    b.hi_r[k] = b.hi_d[F - 1 - k];
  }
  return b;
}

// Maps an index of the extended signal back into [0, n).
std::size_t fold(std::ptrdiff_t i, std::size_t n, Extension ext) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  if (ext == Extension::periodic) {
    i %= sn;
    return static_cast<std::size_t>(i < 0 ? i + sn : i);
  }
  // Half-point symmetric: x[-1] = x[0], x[n] = x[n-1]; may need several
  // reflections when n is small relative to the filter.
  const std::ptrdiff_t period = 2 * sn;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < sn ? i : period - 1 - i);
}

// Analysis tap alignment: out[o] = sum_j f[j] x[2o + offset - j].
std::ptrdiff_t analysis_offset(Extension ext) {
  // Periodic mode is shifted so that the filter support of out[0] starts at
  // x[0], matching the usual periodization convention.
  return ext == Extension::symmetric ? 1 : static_cast<std::ptrdiff_t>(kDb8Taps) - 1;
}

void analyze(std::span<const double> x, const FilterBank& b, Extension ext,
             std::vector<double>& approx, std::vector<double>& detail) {
  const std::size_t n = x.size();
  const std::size_t m = coeff_length(n, ext);
  approx.assign(m, 0.0);
  detail.assign(m, 0.0);
  const std::ptrdiff_t off = analysis_offset(ext);
  for (std::size_t o = 0; o < m; ++o) {
    double a = 0.0;
    double d = 0.0;
    for (std::size_t j = 0; j < kDb8Taps; ++j) {
      const auto idx = static_cast<std::ptrdiff_t>(2 * o) + off - static_cast<std::ptrdiff_t>(j);
      const double v = x[fold(idx, n, ext)];
      a += b.lo_d[j] * v;
      d += b.hi_d[j] * v;
    }
    approx[o] = a;
    detail[o] = d;
  }
}

// Adjoint of the analysis of the extended signal, evaluated on [0, n).
std::vector<double> synthesize(std::span<const double> approx, std::span<const double> detail,
                               std::size_t n, const FilterBank& b, Extension ext) {
  std::vector<double> x(n, 0.0);
  const std::ptrdiff_t off = analysis_offset(ext);
  const auto F = static_cast<std::ptrdiff_t>(kDb8Taps);
  if (ext == Extension::periodic) {
    // Every coefficient contributes to F positions modulo n.
    for (std::size_t o = 0; o < approx.size(); ++o) {
      for (std::ptrdiff_t j = 0; j < F; ++j) {
        const auto m = fold(static_cast<std::ptrdiff_t>(2 * o) + off - j, n, ext);
        x[m] += b.lo_d[static_cast<std::size_t>(j)] * approx[o] +
                b.hi_d[static_cast<std::size_t>(j)] * detail[o];
      }
    }
    return x;
  }
  const auto count = static_cast<std::ptrdiff_t>(approx.size());
  for (std::size_t mi = 0; mi < n; ++mi) {
    const auto m = static_cast<std::ptrdiff_t>(mi);
    // Coefficients o with 0 <= 2o + off - m < F.
    const std::ptrdiff_t o_lo = std::max<std::ptrdiff_t>(0, (m - off + 1) / 2);
    double acc = 0.0;
    for (std::ptrdiff_t o = o_lo; o < count; ++o) {
      const std::ptrdiff_t j = 2 * o + off - m;
      if (j < 0) continue;
      if (j >= F) break;
      acc += b.lo_d[static_cast<std::size_t>(j)] * approx[static_cast<std::size_t>(o)] +
             b.hi_d[static_cast<std::size_t>(j)] * detail[static_cast<std::size_t>(o)];
    }
    x[mi] = acc;
  }
  return x;
}

void denoise_channel(std::span<const float> in, std::span<float> out, int levels,
                     const double* threshold_override) {
  std::vector<double> x(in.begin(), in.end());
  Coeffs c = forward(x, levels);
  const double t = threshold_override ? *threshold_override
                                      : universal_threshold(c.details.front(), x.size());
  for (auto& d : c.details) {
    for (double& v : d) v = soft_threshold(v, t);
  }
  const auto y = inverse(c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(y[i]);
}

}  // namespace

const FilterBank& db8() {
  static const FilterBank bank = make_db8();
  return bank;
}

std::size_t coeff_length(std::size_t n, Extension ext) {
  if (ext == Extension::periodic) return n / 2;
  return (n + kDb8Taps - 1) / 2;
}

Coeffs forward(std::span<const double> x, int levels, Extension ext, const FilterBank& bank) {
  if (levels < 1) throw Error(ErrorKind::Domain, "dwt: levels must be >= 1");
  Coeffs c;
  c.extension = ext;
  std::vector<double> current(x.begin(), x.end());
  for (int level = 0; level < levels; ++level) {
    const std::size_t n = current.size();
    if (n < kDb8Taps || (ext == Extension::periodic && n % 2 != 0)) {
      throw Error(ErrorKind::Domain,
                  "dwt: signal of length " + std::to_string(x.size()) + " is too short for " +
                      std::to_string(levels) + " levels (level " + std::to_string(level + 1) +
                      " input has " + std::to_string(n) + " samples)");
    }
    c.signal_lengths.push_back(n);
    std::vector<double> approx;
    std::vector<double> detail;
    analyze(current, bank, ext, approx, detail);
    c.details.push_back(std::move(detail));
    current = std::move(approx);
  }
  c.approx = std::move(current);
  return c;
}

std::vector<double> inverse(const Coeffs& c, const FilterBank& bank) {
  const std::size_t levels = c.details.size();
  if (levels == 0 || c.signal_lengths.size() != levels) {
    throw Error(ErrorKind::Shape, "idwt: coefficient structure is inconsistent");
  }
  for (std::size_t j = 0; j < levels; ++j) {
    const std::size_t expect = coeff_length(c.signal_lengths[j], c.extension);
    if (c.details[j].size() != expect ||
        (j + 1 < levels && c.signal_lengths[j + 1] != expect)) {
      throw Error(ErrorKind::Shape, "idwt: detail level " + std::to_string(j + 1) + " has " +
                                        std::to_string(c.details[j].size()) +
                                        " coefficients, expected " + std::to_string(expect));
    }
  }
  if (c.approx.size() != c.details.back().size()) {
    throw Error(ErrorKind::Shape, "idwt: approximation length does not match coarsest detail");
  }
  std::vector<double> current = c.approx;
  for (std::size_t j = levels; j-- > 0;) {
    current = synthesize(current, c.details[j], c.signal_lengths[j], bank, c.extension);
  }
  return current;
}

double soft_threshold(double c, double t) {
  if (!(t >= 0.0)) throw Error(ErrorKind::Domain, "soft_threshold: threshold must be >= 0");
  const double mag = std::abs(c) - t;
  if (mag <= 0.0) return 0.0;
  return std::copysign(mag, c);
}

std::vector<double> soft_threshold(std::span<const double> c, double t) {
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = soft_threshold(c[i], t);
  return out;
}

double universal_threshold(std::span<const double> d1, std::size_t n) {
  if (d1.empty()) throw Error(ErrorKind::Domain, "universal_threshold: empty detail band");
  if (n < 1) throw Error(ErrorKind::Domain, "universal_threshold: n must be >= 1");
  std::vector<double> mags(d1.size());
  std::transform(d1.begin(), d1.end(), mags.begin(), [](double v) { return std::abs(v); });
  std::sort(mags.begin(), mags.end());
  const std::size_t k = mags.size();
  const double median = k % 2 == 1 ? mags[k / 2] : 0.5 * (mags[k / 2 - 1] + mags[k / 2]);
  const double sigma = median / 0.6745;
  return sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
}

Segment denoise(const Segment& segment, int levels) {
  Segment out;
  for (std::size_t ch = 0; ch < Segment::kChannels; ++ch) {
    denoise_channel(segment.channel(ch), out.channel(ch), levels, nullptr);
  }
  return out;
}

Segment denoise_with_threshold(const Segment& segment, double threshold, int levels) {
  if (!(threshold >= 0.0)) throw Error(ErrorKind::Domain, "dwt: threshold must be >= 0");
  Segment out;
  for (std::size_t ch = 0; ch < Segment::kChannels; ++ch) {
    denoise_channel(segment.channel(ch), out.channel(ch), levels, &threshold);
  }
  return out;
}

namespace serial {
std::vector<Segment> denoise_all(std::span<const Segment> segments, int levels) {
  std::vector<Segment> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(denoise(s, levels));
  return out;
}
}  // namespace serial

std::vector<Segment> denoise_all(std::span<const Segment> segments, int levels) {
  std::vector<Segment> out(segments.size());
  const auto n = static_cast<std::int64_t>(segments.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = denoise(segments[static_cast<std::size_t>(i)], levels);
  }
  return out;
}

}  // namespace ecgd::dwt
