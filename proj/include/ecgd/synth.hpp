#pragma once

// Synthetic stand-ins for MIT-BIH clean records and the bw/ma/em stress-test
// noise records. Beats are sums of Gaussian P, Q, R, S and T waves with
// jittered RR intervals. Output is in mV, deterministic in the seed.

#include <cstdint>
#include <filesystem>
#include <string>

#include "ecgd/signal_io.hpp"

namespace ecgd::synth {

/// Two-lead ECG, `n_samples` per lead.
SignalRecord ecg_record(const std::string& name, std::size_t n_samples, std::uint64_t seed,
                        double fs = kDefaultSamplingHz);

/// Two-channel noise for component "bw" (sub-Hz drift), "ma" (broadband
/// muscle noise) or "em" (bursty electrode motion). Throws Domain otherwise.
SignalRecord noise_record(const std::string& component, std::size_t n_samples,
                          std::uint64_t seed, double fs = kDefaultSamplingHz);

/// Quantizes to ADU (gain 200, baseline 1024, clamped to 12 bits) and writes
/// `<dir>/<record_name>.hea` and `.dat`. Returns the header path.
std::filesystem::path write_wfdb(const std::filesystem::path& dir, const SignalRecord& record);

/// Same record as CSV with a "ch0,ch1" header row.
std::filesystem::path write_csv(const std::filesystem::path& dir, const SignalRecord& record);

}  // namespace ecgd::synth
