// ecgd: prepare -> mix -> train -> denoise -> eval.
//
// Errors go to stderr as one line, "ecgd: error[<kind>]: <message>", where
// kind is an ErrorKind name, "usage" for flag errors or "internal".

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "commands.hpp"
#include "ecgd/error.hpp"

namespace {

using namespace ecgd::cli;

const CLI::Validator kFinite(
    [](std::string& s) -> std::string {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) return "not a number: " + s;
        if (!std::isfinite(v)) return "value must be finite: " + s;
      } catch (const std::exception&) {
        return "not a number: " + s;
      }
      return {};
    },
    "FINITE");

int fail(std::string_view kind, const std::string& msg) {
  std::cerr << "ecgd: error[" << kind << "]: " << msg << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECG denoising toolkit: masked-input U-shaped transformer and wavelet baseline"};
  app.name("ecgd");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (0: runtime default); results do not depend on it")
      ->check(CLI::NonNegativeNumber);

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Write synthetic two-lead ECG records and bw/ma/em noise records");
  synth->add_option("--out", so.out, "Output directory (gets clean/ and noise/)")->required();
  synth->add_option("--records", so.records, "Number of clean records")->check(CLI::PositiveNumber);
  synth->add_option("--samples", so.samples, "Samples per clean record and lead");
  synth->add_option("--noise-samples", so.noise_samples, "Samples per noise record (0: same as --samples)");
  synth->add_option("--seed", so.seed, "Random seed");
  synth->add_flag("--csv", so.csv, "Write CSV instead of WFDB header + format-212 data");

  PrepareOptions po;
  auto* prepare = app.add_subcommand("prepare", "Cut clean records into 2x256 segments");
  prepare->add_option("--records", po.records, "Directory of .hea/.dat records (or .csv with --csv)")->required();
  prepare->add_option("--out", po.out, "Clean segment dataset to write")->required();
  prepare->add_flag("--csv", po.csv, "Read .csv records instead of WFDB");
  prepare->add_option("--fs", po.fs, "Sampling rate assumed for CSV records (Hz)")->check(kFinite);
  prepare->add_flag("--duplicate-single-channel", po.duplicate_single_channel,
                    "Copy the only lead of single-channel records into both channels");

  MixOptions mo;
  auto* mix = app.add_subcommand("mix", "Pair clean segments with scaled noise at a target SNR");
  mix->add_option("--clean", mo.clean, "Clean segment dataset from `prepare`")->required();
  mix->add_option("--noise-dir", mo.noise_dir, "Directory holding bw/ma/em records (.hea or .csv)")->required();
  mix->add_option("--type", mo.type, "Noise type")->check(CLI::IsMember({"bw", "ma", "em", "ebm", "emb"}));
  mix->add_option("--snr-db", mo.snr_db, "Target SNR in dB")->check(kFinite);
  mix->add_option("--seed", mo.seed, "Pairing seed");
  mix->add_option("--out", mo.out, "Paired dataset (training part when --test-out is given)")->required();
  mix->add_option("--test-out", mo.test_out, "Also write a 4:1 held-out test split here");
  mix->add_option("--max-pairs", mo.max_pairs, "Use a random subset of this many clean segments (0: all)");
  mix->add_flag("--normalize", mo.normalize, "z-score clean segments with dataset-wide statistics first");

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Train the denoiser on a paired dataset");
  train->add_option("--data", to.data, "Paired dataset from `mix`")->required();
  train->add_option("--config", to.config, "Flat key=value config file; flags override it");
  train->add_option("--out", to.out, "Checkpoint to write")->required();
  train->add_option("--history", to.history, "Loss history CSV (default: <out>.history.csv)");
  train->add_option("--resume", to.resume, "Continue from this checkpoint");
  train->add_option("--epochs", to.epochs, "Epochs")->default_str("100");
  train->add_option("--lr", to.lr, "Adam learning rate")->default_str("0.001")->check(kFinite);
  train->add_option("--mask-rate", to.mask_rate, "Probability of zeroing each input element")
      ->default_str("0.1")
      ->check(kFinite);
  train->add_option("--batch-size", to.batch_size, "Pairs per step")->default_str("128");
  train->add_option("--seed", to.seed, "Initialization, shuffle and mask seed")->default_str("0");
  train->add_option("--checkpoint-every", to.checkpoint_every, "Also checkpoint every N epochs (0: off)")
      ->default_str("0");
  train->add_flag("--reduced", to.reduced, "Use the reduced 2-stage model");
  train->add_flag("--verbose", to.verbose, "Also write per-step losses to <history>.steps.csv");

  DenoiseOptions dn;
  auto* denoise = app.add_subcommand("denoise", "Denoise segments with a checkpoint or the wavelet baseline");
  denoise->add_option("--ckpt", dn.ckpt, "Checkpoint (required for --method model)");
  denoise->add_option("--in", dn.in, "Segment dataset; paired inputs use their noisy members")->required();
  denoise->add_option("--out", dn.out, "Denoised segments to write")->required();
  denoise->add_option("--method", dn.method, "Denoiser")->check(CLI::IsMember({"model", "dwt"}));

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Append one metrics row (mean SNR in/out, RMSE) to a CSV");
  eval->add_option("--clean", ev.clean, "Paired dataset (or clean segments with --noisy)")->required();
  eval->add_option("--noisy", ev.noisy, "Noisy segments when --clean holds clean segments only");
  eval->add_option("--denoised", ev.denoised, "Output of `denoise`")->required();
  eval->add_option("--label", ev.label, "Method label for the row")->required();
  eval->add_option("--out", ev.out, "Metrics CSV (created with a header, then appended)")->required();
  eval->add_option("--type", ev.type, "Noise type for the row (default: from the dataset sidecar)")
      ->check(CLI::IsMember({"bw", "ma", "em", "ebm", "emb"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif

  try {
    if (*synth) run_synth(so, std::cout);
    else if (*prepare) run_prepare(po, std::cout);
    else if (*mix) run_mix(mo, std::cout);
    else if (*train) run_train(to, std::cout);
    else if (*denoise) run_denoise(dn, std::cout);
    else if (*eval) run_eval(ev, std::cout);
  } catch (const ecgd::Error& e) {
    return fail(ecgd::to_string(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
