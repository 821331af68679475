#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "ecgd/signal_io.hpp"

namespace ecgd::dwt {

inline constexpr std::size_t kDb8Taps = 16;

/// Decomposition and reconstruction filters of an orthogonal wavelet.
struct FilterBank {
  std::array<double, kDb8Taps> lo_d{};
  std::array<double, kDb8Taps> hi_d{};
  std::array<double, kDb8Taps> lo_r{};
  std::array<double, kDb8Taps> hi_r{};
};

/// Daubechies wavelet with 8 vanishing moments.
const FilterBank& db8();

enum class Extension {
  /// Half-point symmetric extension; coefficient count grows by
  /// floor((n + taps - 1) / 2) per level.
  symmetric,
  /// Periodic wrap with n/2 coefficients per level (n must stay even).
  /// Orthogonal, so coefficient energy equals signal energy.
  periodic,
};

struct Coeffs {
  std::vector<double> approx;
  /// details[0] is the finest level.
  std::vector<std::vector<double>> details;
  /// Input length at each level; signal_lengths[0] is the original length.
  std::vector<std::size_t> signal_lengths;
  Extension extension = Extension::symmetric;
};

/// Coefficient count produced by one analysis level.
std::size_t coeff_length(std::size_t n, Extension ext = Extension::symmetric);

Coeffs forward(std::span<const double> x, int levels = 4,
               Extension ext = Extension::symmetric,
               const FilterBank& bank = db8());

std::vector<double> inverse(const Coeffs& coeffs, const FilterBank& bank = db8());

double soft_threshold(double c, double t);
std::vector<double> soft_threshold(std::span<const double> c, double t);

/// VisuShrink: median(|d1|) / 0.6745 * sqrt(2 ln n).
double universal_threshold(std::span<const double> detail_level1, std::size_t n);

/// Per-channel transform, soft-threshold every detail level with the
/// universal threshold estimated from that channel's finest level, and
/// reconstruct. The approximation band is untouched.
Segment denoise(const Segment& segment, int levels = 4);

/// Threshold-override variant used to check the t = 0 identity.
Segment denoise_with_threshold(const Segment& segment, double threshold, int levels = 4);

namespace serial {
std::vector<Segment> denoise_all(std::span<const Segment> segments, int levels = 4);
}

/// OpenMP across segments; output is identical to serial::denoise_all.
std::vector<Segment> denoise_all(std::span<const Segment> segments, int levels = 4);

}  // namespace ecgd::dwt
