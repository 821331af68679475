#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "ecgd/dwt.hpp"
#include "ecgd/error.hpp"
#include "ecgd/noise_lab.hpp"
#include "ecgd/signal_io.hpp"
#include "ecgd/synth.hpp"
#include "ecgd/trainer.hpp"
#include "files.hpp"

namespace ecgd::cli {

namespace fs = std::filesystem;

namespace {

// Achieved SNR of every written pair must match the request this closely.
constexpr double kSnrToleranceDb = 1e-6;

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::Config, msg); }

void require_file(const path& p, const char* what) {
  if (p.empty()) config_error(std::string(what) + " path is required");
  if (!fs::is_regular_file(p)) throw Error(ErrorKind::Io, std::string(what) + " not found: " + p.string());
}

void require_output(const path& p, const char* what) {
  if (p.empty()) config_error(std::string(what) + " path is required");
  const path parent = p.has_parent_path() ? p.parent_path() : path(".");
  if (!fs::is_directory(parent)) {
    throw Error(ErrorKind::Io, std::string(what) + " directory does not exist: " + parent.string());
  }
}

// Re-raises with the offending file in the message, keeping the kind.
template <class F>
auto with_file(const path& p, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), p.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

NoiseType noise_type_arg(const std::string& s) {
  const auto t = parse_noise_type(s);
  if (!t) config_error("unknown noise type '" + s + "' (expected bw, ma, em, ebm or emb)");
  return *t;
}

std::vector<path> list_records(const path& dir, const std::string& ext) {
  std::vector<path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

path find_noise_record(const path& dir, const std::string& component) {
  for (const char* ext : {".hea", ".csv"}) {
    const path p = dir / (component + ext);
    if (fs::is_regular_file(p)) return p;
  }
  config_error("noise record '" + component + "' (.hea or .csv) not found in " + dir.string());
}

}  // namespace

// ---------------------------------------------------------------------------

void run_synth(const SynthOptions& o, std::ostream& log) {
  if (o.out.empty()) config_error("--out is required");
  if (o.records == 0) config_error("--records must be >= 1");
  if (o.samples < Segment::kLength) config_error("--samples must be >= 256");
  const path clean_dir = o.out / "clean";
  const path noise_dir = o.out / "noise";
  fs::create_directories(clean_dir);
  fs::create_directories(noise_dir);

  Rng rng(o.seed);
  for (std::size_t i = 0; i < o.records; ++i) {
    const auto rec = synth::ecg_record(std::to_string(100 + i), o.samples, rng.next_u64());
    const path p = o.csv ? synth::write_csv(clean_dir, rec) : synth::write_wfdb(clean_dir, rec);
    log << "wrote " << p.string() << "\n";
  }
  const std::size_t n_noise = o.noise_samples == 0 ? o.samples : o.noise_samples;
  for (const char* comp : {"bw", "ma", "em"}) {
    const auto rec = synth::noise_record(comp, n_noise, rng.next_u64());
    const path p = o.csv ? synth::write_csv(noise_dir, rec) : synth::write_wfdb(noise_dir, rec);
    log << "wrote " << p.string() << "\n";
  }
}

void run_prepare(const PrepareOptions& o, std::ostream& log) {
  if (o.records.empty()) config_error("--records is required");
  if (!fs::is_directory(o.records)) throw Error(ErrorKind::Io, "not a directory: " + o.records.string());
  require_output(o.out, "--out");
  if (!(o.fs > 0.0)) config_error("--fs must be > 0");

  const auto files = list_records(o.records, o.csv ? ".csv" : ".hea");
  if (files.empty()) {
    throw Error(ErrorKind::Io, "no " + std::string(o.csv ? ".csv" : ".hea") + " records in " +
                                   o.records.string());
  }
  SegmentFile out;
  out.meta["kind"] = "clean";
  for (const auto& f : files) {
    const auto segs = with_file(f, [&] {
      const SignalRecord rec = o.csv ? read_csv_signal(read_file_text(f), o.fs, f.stem().string())
                                     : read_record_file(f);
      return segment_record(rec, o.duplicate_single_channel);
    });
    log << f.stem().string() << ": " << segs.size() << " segments\n";
    out.segments.insert(out.segments.end(), segs.begin(), segs.end());
  }
  if (out.segments.empty()) throw Error(ErrorKind::Domain, "records are shorter than one segment");
  save_segment_file(o.out, out);
  log << "total: " << out.segments.size() << " segments -> " << o.out.string() << "\n";
}

void run_mix(const MixOptions& o, std::ostream& log) {
  require_file(o.clean, "--clean");
  if (o.noise_dir.empty()) config_error("--noise-dir is required");
  if (!fs::is_directory(o.noise_dir)) throw Error(ErrorKind::Io, "not a directory: " + o.noise_dir.string());
  require_output(o.out, "--out");
  if (!o.test_out.empty()) require_output(o.test_out, "--test-out");
  if (!std::isfinite(o.snr_db)) config_error("--snr-db must be finite");
  const NoiseType type = noise_type_arg(o.type);

  const SegmentFile clean = with_file(o.clean, [&] { return load_segment_file(o.clean); });
  if (clean.kind() != "clean") config_error(o.clean.string() + " is a " + clean.kind() + " dataset, not clean");

  std::vector<NoisePool> pools;
  for (const auto& comp : noise_components(type)) {
    const path p = find_noise_record(o.noise_dir, comp);
    NoisePool pool;
    pool.component = comp;
    pool.segments = with_file(p, [&] { return segment_record(read_record_file(p), true); });
    pools.push_back(std::move(pool));
  }

  DatasetSpec spec;
  spec.noise_type = type;
  spec.snr_db = o.snr_db;
  spec.seed = o.seed;
  spec.max_pairs = o.max_pairs;
  spec.normalize = o.normalize;
  spec.train_parts = o.test_out.empty() ? 1 : 4;
  spec.test_parts = o.test_out.empty() ? 0 : 1;
  const Dataset ds = build_dataset(clean.segments, pools, spec);

  for (const auto* part : {&ds.train, &ds.test}) {
    for (std::size_t i = 0; i < part->size(); ++i) {
      const double got = snr_db((*part)[i].clean, (*part)[i].noisy);
      if (!(std::abs(got - o.snr_db) <= kSnrToleranceDb)) {
        throw Error(ErrorKind::Numeric, "pair " + std::to_string(i) + ": achieved SNR " +
                                            format_double(got) + " dB, requested " +
                                            format_double(o.snr_db) + " dB");
      }
    }
  }

  auto write = [&](const path& p, const std::vector<SegmentPair>& pairs, const char* split) {
    SegmentFile f;
    f.segments = interleave_pairs(pairs);
    f.meta = {{"kind", "paired"},
              {"noise_type", std::string(to_string(type))},
              {"snr_db", format_double(o.snr_db)},
              {"seed", std::to_string(o.seed)},
              {"split", split},
              {"normalized", o.normalize ? "1" : "0"}};
    save_segment_file(p, f);
    log << "wrote " << pairs.size() << " " << to_string(type) << " pairs at " << format_double(o.snr_db)
        << " dB -> " << p.string() << "\n";
  };
  write(o.out, ds.train, o.test_out.empty() ? "all" : "train");
  if (!o.test_out.empty()) write(o.test_out, ds.test, "test");
}

// ---------------------------------------------------------------------------

namespace {

struct ResolvedTrain {
  train::TrainConfig train;
  net::ModelConfig model;
  std::uint64_t seed = 0;
};

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, float>) {
      out = std::stof(value, &used);
    } else if constexpr (std::is_same_v<T, double>) {
      out = std::stod(value, &used);
    } else {
      if (!value.empty() && value.front() == '-') throw std::invalid_argument("negative");
      const unsigned long long v = std::stoull(value, &used);
      if (v > std::numeric_limits<T>::max()) throw std::out_of_range("range");
      out = static_cast<T>(v);
    }
    if (used != value.size()) throw std::invalid_argument("trailing");
    if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(out)) throw std::invalid_argument("non-finite");
    }
    return out;
  } catch (const std::logic_error&) {
    config_error("config key '" + key + "': bad value '" + value + "'");
  }
}

ResolvedTrain resolve_train(const TrainOptions& o) {
  ResolvedTrain r;
  std::string model_text;
  std::string preset = o.reduced ? "reduced" : "";
  if (!o.config.empty()) {
    require_file(o.config, "--config");
    const KeyValues kv = parse_key_values(read_file_text(o.config), o.config.string());
    for (const auto& [k, v] : kv) {
      if (k == "lr") r.train.lr = parse_number<float>(k, v);
      else if (k == "epochs") r.train.epochs = parse_number<std::uint32_t>(k, v);
      else if (k == "batch_size") r.train.batch_size = parse_number<std::size_t>(k, v);
      else if (k == "mask_rate") r.train.mask_rate = parse_number<double>(k, v);
      else if (k == "seed") r.seed = parse_number<std::uint64_t>(k, v);
      else if (k == "checkpoint_every") r.train.checkpoint_every = parse_number<std::uint32_t>(k, v);
      else if (k == "shuffle") {
        if (v != "0" && v != "1") config_error("config key 'shuffle': expected 0 or 1");
        r.train.shuffle = v == "1";
      } else if (k == "model") {
        if (preset.empty()) preset = v;
      } else if (k.rfind("model.", 0) == 0) {
        model_text += k.substr(6) + "=" + v + "\n";
      } else {
        config_error(o.config.string() + ": unknown key '" + k + "'");
      }
    }
  }
  if (preset.empty() || preset == "default") r.model = net::ModelConfig{};
  else if (preset == "reduced") r.model = net::ModelConfig::reduced();
  else config_error("unknown model preset '" + preset + "' (expected default or reduced)");
  if (!model_text.empty()) {
    // Explicit model.* keys override the preset one by one.
    r.model = net::ModelConfig::parse(r.model.serialize() + model_text);
  }

  if (o.epochs) r.train.epochs = *o.epochs;
  if (o.lr) r.train.lr = *o.lr;
  if (o.mask_rate) r.train.mask_rate = *o.mask_rate;
  if (o.batch_size) r.train.batch_size = *o.batch_size;
  if (o.seed) r.seed = *o.seed;
  if (o.checkpoint_every) r.train.checkpoint_every = *o.checkpoint_every;
  r.train.seed = r.seed;
  r.train.validate();
  r.model.validate();
  if (r.model.input_channels != Segment::kChannels || r.model.input_length != Segment::kLength) {
    config_error("model expects [" + std::to_string(r.model.input_channels) + " x " +
                 std::to_string(r.model.input_length) + "] inputs but segments are [2 x 256]");
  }
  return r;
}

}  // namespace

void run_train(const TrainOptions& o, std::ostream& log) {
  require_file(o.data, "--data");
  require_output(o.out, "--out");
  const path history = o.history.empty() ? path(o.out.string() + ".history.csv") : o.history;
  require_output(history, "--history");
  ResolvedTrain r = resolve_train(o);

  const SegmentFile data = with_file(o.data, [&] { return load_segment_file(o.data); });
  if (!data.paired()) config_error(o.data.string() + " is not a paired dataset (run `ecgd mix` first)");
  MixSpec mix;
  if (const auto t = sidecar_noise_type(data.meta)) mix.noise_type = *t;
  const auto pairs = deinterleave_pairs(data.segments, mix);
  if (pairs.empty()) throw Error(ErrorKind::Domain, o.data.string() + ": dataset is empty");

  train::TrainState state = o.resume.empty()
                                ? train::make_state(r.model, r.seed)
                                : train::load_checkpoint(o.resume, &r.model);
  r.train.checkpoint_path = r.train.checkpoint_every > 0 ? o.out : path();

  log << "training on " << pairs.size() << " pairs: epochs=" << r.train.epochs
      << " lr=" << r.train.lr << " batch_size=" << r.train.batch_size
      << " mask_rate=" << format_double(r.train.mask_rate) << " seed=" << r.seed
      << " params=" << state.model.params().count() << "\n";
  const std::uint32_t first_epoch = state.epoch;
  const train::FitResult fit = train::fit(state, pairs, r.train, [&](const train::TrainState& s, double mean) {
    log << "epoch " << s.epoch << "/" << r.train.epochs << " mean_loss=" << format_double(mean) << "\n";
    log.flush();
  });

  train::save_checkpoint(o.out, state);
  std::string csv = "epoch,mean_loss\n";
  for (std::size_t i = 0; i < fit.epoch_losses.size(); ++i) {
    csv += std::to_string(first_epoch + i + 1) + "," + format_double(fit.epoch_losses[i]) + "\n";
  }
  write_file_atomic(history, csv);
  if (o.verbose) {
    std::string steps = "step,loss\n";
    for (std::size_t i = 0; i < fit.step_losses.size(); ++i) {
      steps += std::to_string(i + 1) + "," + format_double(fit.step_losses[i]) + "\n";
    }
    write_file_atomic(path(history.string() + ".steps.csv"), steps);
  }
  log << "checkpoint -> " << o.out.string() << ", history -> " << history.string() << "\n";
}

void run_denoise(const DenoiseOptions& o, std::ostream& log) {
  require_file(o.in, "--in");
  require_output(o.out, "--out");
  if (o.method != "model" && o.method != "dwt") config_error("--method must be model or dwt");
  if (o.method == "model") require_file(o.ckpt, "--ckpt");

  const SegmentFile in = with_file(o.in, [&] { return load_segment_file(o.in); });
  // A paired dataset contributes only its noisy members.
  std::vector<Segment> inputs;
  if (in.paired()) {
    for (std::size_t i = 1; i < in.segments.size(); i += 2) inputs.push_back(in.segments[i]);
  } else {
    inputs = in.segments;
  }

  SegmentFile out;
  if (o.method == "model") {
    const train::TrainState state = train::load_checkpoint(o.ckpt);
    const auto& c = state.model.config();
    if (c.input_channels != Segment::kChannels || c.input_length != Segment::kLength) {
      config_error(o.ckpt.string() + ": model input shape does not match [2 x 256] segments");
    }
    out.segments = train::denoise(state.model, inputs);
  } else {
    out.segments = dwt::denoise_all(inputs);
  }
  out.meta["kind"] = "denoised";
  out.meta["method"] = o.method;
  out.meta["source"] = o.in.filename().string();
  if (const auto t = in.meta.find("noise_type"); t != in.meta.end()) out.meta["noise_type"] = t->second;
  save_segment_file(o.out, out);
  log << "denoised " << out.segments.size() << " segments with " << o.method << " -> " << o.out.string()
      << "\n";
}

void run_eval(const EvalOptions& o, std::ostream& log) {
  require_file(o.clean, "--clean");
  require_file(o.denoised, "--denoised");
  require_output(o.out, "--out");
  if (o.label.empty()) config_error("--label is required");
  if (o.label.find_first_of(",\n\r") != std::string::npos) config_error("--label must not contain commas or newlines");

  const SegmentFile ref = with_file(o.clean, [&] { return load_segment_file(o.clean); });
  const SegmentFile est = with_file(o.denoised, [&] { return load_segment_file(o.denoised); });

  std::vector<Segment> clean;
  std::vector<Segment> noisy;
  if (ref.paired()) {
    if (!o.noisy.empty()) config_error("--noisy conflicts with a paired --clean dataset");
    for (std::size_t i = 0; i < ref.segments.size(); i += 2) {
      clean.push_back(ref.segments[i]);
      noisy.push_back(ref.segments[i + 1]);
    }
  } else {
    if (o.noisy.empty()) config_error("--clean is not a paired dataset; pass --noisy as well");
    require_file(o.noisy, "--noisy");
    clean = ref.segments;
    noisy = with_file(o.noisy, [&] { return load_segment_file(o.noisy); }).segments;
  }
  if (est.segments.size() != clean.size()) {
    throw Error(ErrorKind::Shape, "count mismatch: " + std::to_string(clean.size()) + " reference vs " +
                                      std::to_string(est.segments.size()) + " denoised segments");
  }
  if (noisy.size() != clean.size()) {
    throw Error(ErrorKind::Shape, "count mismatch: " + std::to_string(clean.size()) + " clean vs " +
                                      std::to_string(noisy.size()) + " noisy segments");
  }

  std::string type_name = "unknown";
  if (!o.type.empty()) {
    type_name = std::string(to_string(noise_type_arg(o.type)));
  } else if (const auto t = sidecar_noise_type(ref.meta)) {
    type_name = std::string(to_string(*t));
  }

  const MetricSummary s = summarize(clean, noisy, est.segments);
  MetricsRow row;
  row.noise_type = type_name;
  row.method = o.label;
  row.input_snr_db = s.mean_input_snr_db;
  row.output_snr_db = s.mean_output_snr_db;
  row.rmse = s.mean_rmse;
  append_metrics_row(o.out, row);
  log << kMetricsHeader << "\n" << format_metrics_row(row) << "\n";
}

}  // namespace ecgd::cli
