#include "ecgd/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ecgd/error.hpp"
#include "ecgd/rng.hpp"

namespace ecgd::synth {

namespace {

constexpr double kGain = 200.0;
constexpr int kBaseline = 1024;

struct Wave {
  double amp;     // mV
  double offset;  // s, relative to the R peak
  double width;   // s, Gaussian sigma
};

// P, Q, R, S, T.
using BeatShape = std::array<Wave, 5>;

BeatShape jitter(const BeatShape& base, double amp_scale, Rng& rng) {
  BeatShape out = base;
  for (auto& w : out) {
    w.amp *= amp_scale * rng.uniform(0.85, 1.15);
    w.width *= rng.uniform(0.9, 1.1);
  }
  return out;
}

SignalRecord empty_record(const std::string& name, std::size_t n, double fs) {
  SignalRecord r;
  r.header.record_name = name;
  r.header.n_signals = 2;
  r.header.fs = fs;
  r.header.n_samples = n;
  for (int c = 0; c < 2; ++c) {
    SignalSpec s;
    s.file_name = name + ".dat";
    s.gain = kGain;
    s.baseline = kBaseline;
    r.header.signals.push_back(s);
  }
  r.channels = Matrix(2, n);
  return r;
}

// One-pole low-pass, y += a (x - y).
void smooth(std::span<double> x, double a) {
  double y = x.empty() ? 0.0 : x[0];
  for (double& v : x) {
    y += a * (v - y);
    v = y;
  }
}

}  // namespace

SignalRecord ecg_record(const std::string& name, std::size_t n_samples, std::uint64_t seed,
                        double fs) {
  if (!(fs > 0.0)) throw Error(ErrorKind::Domain, "synth: fs must be > 0");
  Rng rng(seed);
  SignalRecord r = empty_record(name, n_samples, fs);

  const BeatShape lead1{{{0.15, -0.20, 0.025},
                         {-0.12, -0.035, 0.010},
                         {1.20, 0.0, 0.011},
                         {-0.30, 0.035, 0.011},
                         {0.32, 0.26, 0.050}}};
  const BeatShape lead2{{{0.08, -0.20, 0.025},
                         {-0.05, -0.035, 0.010},
                         {0.55, 0.0, 0.012},
                         {-0.45, 0.04, 0.012},
                         {0.18, 0.27, 0.055}}};
  const double amp1 = rng.uniform(0.7, 1.3);
  const double amp2 = rng.uniform(0.7, 1.3);
  const double mean_rr = 60.0 / rng.uniform(58.0, 95.0);

  const double duration = static_cast<double>(n_samples) / fs;
  double t_beat = rng.uniform(0.0, mean_rr);
  while (t_beat - 0.6 < duration) {
    const BeatShape b1 = jitter(lead1, amp1, rng);
    const BeatShape b2 = jitter(lead2, amp2, rng);
    const auto lo = static_cast<std::ptrdiff_t>(std::floor((t_beat - 0.45) * fs));
    const auto hi = static_cast<std::ptrdiff_t>(std::ceil((t_beat + 0.60) * fs));
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo, 0);
         i < std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(n_samples)); ++i) {
      const double dt = static_cast<double>(i) / fs - t_beat;
      double v1 = 0.0;
      double v2 = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        const double z1 = (dt - b1[k].offset) / b1[k].width;
        const double z2 = (dt - b2[k].offset) / b2[k].width;
        v1 += b1[k].amp * std::exp(-0.5 * z1 * z1);
        v2 += b2[k].amp * std::exp(-0.5 * z2 * z2);
      }
      r.channels(0, static_cast<std::size_t>(i)) += v1;
      r.channels(1, static_cast<std::size_t>(i)) += v2;
    }
    t_beat += mean_rr * rng.uniform(0.92, 1.08);
  }
  return r;
}

SignalRecord noise_record(const std::string& component, std::size_t n_samples,
                          std::uint64_t seed, double fs) {
  if (!(fs > 0.0)) throw Error(ErrorKind::Domain, "synth: fs must be > 0");
  Rng rng(seed);
  SignalRecord r = empty_record(component, n_samples, fs);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> buf(n_samples);

  for (std::size_t c = 0; c < 2; ++c) {
    if (component == "bw") {
      // Respiration-band sinusoids plus a slow random walk.
      std::array<double, 4> f{}, a{}, ph{};
      for (std::size_t k = 0; k < 4; ++k) {
        f[k] = rng.uniform(0.05, 0.6);
        a[k] = rng.uniform(0.1, 0.4);
        ph[k] = rng.uniform(0.0, two_pi);
      }
      double walk = 0.0;
      for (std::size_t i = 0; i < n_samples; ++i) {
        walk = 0.9995 * walk + 0.01 * rng.normal();
        buf[i] = walk;
      }
      smooth(buf, 0.02);
      for (std::size_t i = 0; i < n_samples; ++i) {
        const double t = static_cast<double>(i) / fs;
        double v = buf[i];
        for (std::size_t k = 0; k < 4; ++k) v += a[k] * std::sin(two_pi * f[k] * t + ph[k]);
        r.channels(c, i) = v;
      }
    } else if (component == "ma") {
      // Broadband noise under a slowly varying activity envelope.
      double env = 1.0;
      double prev = 0.0;
      for (std::size_t i = 0; i < n_samples; ++i) {
        env = std::clamp(env + 0.01 * rng.normal(), 0.3, 2.0);
        const double w = rng.normal();
        r.channels(c, i) = 0.08 * env * (0.7 * w + 0.3 * prev);
        prev = w;
      }
    } else if (component == "em") {
      // Quiet floor with bursts of low-frequency wander and step transients.
      std::fill(buf.begin(), buf.end(), 0.0);
      std::size_t i = 0;
      while (i < n_samples) {
        i += static_cast<std::size_t>(rng.uniform(0.5, 3.0) * fs);
        const auto len = static_cast<std::size_t>(rng.uniform(0.2, 1.5) * fs);
        const double level = rng.uniform(-0.6, 0.6);
        double walk = 0.0;
        for (std::size_t k = i; k < std::min(n_samples, i + len); ++k) {
          walk += 0.03 * rng.normal();
          buf[k] = level + walk;
        }
        i += len;
      }
      smooth(buf, 0.15);
      for (std::size_t k = 0; k < n_samples; ++k) {
        r.channels(c, k) = buf[k] + 0.01 * rng.normal();
      }
    } else {
      throw Error(ErrorKind::Domain, "synth: unknown noise component '" + component + "'");
    }
  }
  return r;
}

std::filesystem::path write_wfdb(const std::filesystem::path& dir, const SignalRecord& record) {
  const auto& h = record.header;
  RawSamples raw;
  raw.n_signals = h.n_signals;
  raw.n_samples = h.n_samples;
  raw.values.resize(raw.n_signals * raw.n_samples);
  for (std::size_t s = 0; s < raw.n_signals; ++s) {
    const double gain = h.signals.at(s).gain;
    const double base = h.signals.at(s).baseline;
    for (std::size_t t = 0; t < raw.n_samples; ++t) {
      const double adu = std::round(record.channels(s, t) * gain + base);
      raw.values[s * raw.n_samples + t] =
          static_cast<std::int32_t>(std::clamp(adu, -2048.0, 2047.0));
    }
  }
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / h.signals.front().file_name, encode_fmt212(raw));
  const auto hea = dir / (h.record_name + ".hea");
  write_file_atomic(hea, format_header(h));
  return hea;
}

std::filesystem::path write_csv(const std::filesystem::path& dir, const SignalRecord& record) {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t s = 0; s < record.channels.rows; ++s) os << (s ? ",ch" : "ch") << s;
  os << '\n';
  for (std::size_t t = 0; t < record.channels.cols; ++t) {
    for (std::size_t s = 0; s < record.channels.rows; ++s) {
      if (s) os << ',';
      os << record.channels(s, t);
    }
    os << '\n';
  }
  std::filesystem::create_directories(dir);
  const auto path = dir / (record.header.record_name + ".csv");
  write_file_atomic(path, os.str());
  return path;
}

}  // namespace ecgd::synth
