#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace ecgd::cli {

using std::filesystem::path;

struct SynthOptions {
  path out;
  std::size_t records = 4;
  std::size_t samples = 21600;
  std::size_t noise_samples = 0;  // 0: same as samples
  std::uint64_t seed = 0;
  bool csv = false;
};

struct PrepareOptions {
  path records;
  path out;
  bool csv = false;
  double fs = 360.0;
  bool duplicate_single_channel = false;
};

struct MixOptions {
  path clean;
  path noise_dir;
  std::string type = "bw";
  double snr_db = -4.0;
  std::uint64_t seed = 0;
  path out;
  path test_out;  // empty: no split
  std::size_t max_pairs = 0;
  bool normalize = false;
};

/// Unset optionals fall back to the config file, then to built-in defaults.
struct TrainOptions {
  path data;
  path config;
  path out;
  path history;  // empty: <out>.history.csv
  path resume;
  std::optional<std::uint32_t> epochs;
  std::optional<float> lr;
  std::optional<double> mask_rate;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> checkpoint_every;
  bool reduced = false;
  bool verbose = false;
};

struct DenoiseOptions {
  path ckpt;
  path in;
  path out;
  std::string method = "model";
};

struct EvalOptions {
  path clean;
  path noisy;  // only needed when `clean` is not a paired dataset
  path denoised;
  std::string label;
  path out;
  std::string type;  // overrides the sidecar noise type
};

void run_synth(const SynthOptions& o, std::ostream& log);
void run_prepare(const PrepareOptions& o, std::ostream& log);
void run_mix(const MixOptions& o, std::ostream& log);
void run_train(const TrainOptions& o, std::ostream& log);
void run_denoise(const DenoiseOptions& o, std::ostream& log);
void run_eval(const EvalOptions& o, std::ostream& log);

}  // namespace ecgd::cli
