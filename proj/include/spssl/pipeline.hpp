#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spssl/data.hpp"
#include "spssl/eval.hpp"
#include "spssl/io.hpp"
#include "spssl/trainer.hpp"

namespace spssl::pipeline {

namespace fs = std::filesystem;

inline void write_metrics(const fs::path& dir, const eval::MetricsRecord& rec) {
  io::write_file_atomic(dir / "per_sample.csv", eval::per_sample_csv(rec));
  io::write_file_atomic(dir / "metrics.json", eval::to_json(rec).dump(2) + "\n");
}

inline eval::MetricsRecord record_meta(const RunConfig& c, std::uint64_t seed, double inferences_per_step) {
  eval::MetricsRecord m;
  m.run_id = c.run_id;
  m.method = c.method;
  m.seed = seed;
  m.N = c.split.labeled;
  m.M = c.method == "supervised_only" ? 0 : c.split.unlabeled;
  m.inferences_per_step = inferences_per_step;
  return m;
}

/// Teacher-side inferences per step, read back from the last row of train.csv.
inline double inferences_per_step_from_csv(const fs::path& csv_path, std::int64_t t_max) {
  const auto csv = io::read_file(csv_path);
  auto end = csv.find_last_not_of('\n');
  if (end == std::string::npos) throw IOError("empty " + csv_path.string());
  const auto start = csv.rfind('\n', end);
  const auto line = csv.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1);
  const auto comma = line.rfind(',');
  try {
    return std::stod(line.substr(comma + 1)) / static_cast<double>(t_max);
  } catch (const std::exception&) {
    throw IOError("malformed train.csv " + csv_path.string());
  }
}

/// Re-evaluates a run directory from its own contents.
inline eval::MetricsRecord evaluate_run_dir(const fs::path& dir, const std::vector<data::SegSample>* test_set = nullptr) {
  if (!fs::exists(dir / "config.json")) throw IOError("no config.json in " + dir.string());
  const auto c = load_config(dir / "config.json");
  std::vector<data::SegSample> loaded;
  if (!test_set) {
    loaded = load_train_data(c).test;
    test_set = &loaded;
  }
  const auto meta = record_meta(c, c.seeds.front(), inferences_per_step_from_csv(dir / "train.csv", c.t_max));
  return eval::evaluate_run(dir / "student.ckpt", *test_set, c.seg, meta, c.window, c.stride);
}

/// Trains one seed, evaluates the final student and writes metrics next to the checkpoints.
inline eval::MetricsRecord train_and_evaluate(const RunConfig& c, std::uint64_t seed, const TrainData& data,
                                              const fs::path& out_root,
                                              const std::function<void(const StepRecord&)>& on_step = {}) {
  auto run = run_training(c, seed, data, out_root, on_step);
  const auto rc = load_config(run.dir / "config.json");
  const double ips = static_cast<double>(run.state.teacher_inferences) / static_cast<double>(rc.t_max);
  auto rec = eval::evaluate_params(rc.seg, run.state.student, data.test, record_meta(rc, seed, ips), rc.window, rc.stride);
  write_metrics(run.dir, rec);
  return rec;
}

/// Reads metrics.json from every immediate subdirectory that has one.
inline std::vector<eval::MetricsRecord> collect_metrics(const fs::path& root) {
  if (!fs::is_directory(root)) throw IOError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "metrics.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<eval::MetricsRecord> out;
  for (const auto& d : dirs) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(d / "metrics.json"));
    } catch (const nlohmann::json::parse_error& e) {
      throw IOError((d / "metrics.json").string() + ": " + e.what());
    }
    out.push_back(eval::metrics_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// DAE

struct DenoiseReport {
  double corrupted_dsc = 0;      // mean DSC(corrupted, clean)
  double reconstructed_dsc = 0;  // mean DSC(DAE(corrupted) > 0.5, clean)
  std::size_t count = 0;
};

/// Corrupts center crops of held-out masks and measures how much the DAE repairs them.
inline DenoiseReport denoise_report(const RunConfig& c, const ModelParams<float>& dae,
                                    const std::vector<data::SegSample>& samples, std::uint64_t seed) {
  Rng rng(seed);
  DenoiseReport r;
  NoGradGuard no_grad;
  for (const auto& s : samples) {
    if (!s.mask) continue;
    const auto n = s.mask->dim(0);
    if (n < c.crop) throw ShapeError("denoise_report: mask smaller than crop");
    const data::AugmentParams center{false, false, 0, (n - c.crop) / 2, (n - c.crop) / 2, c.crop};
    const auto clean = data::apply_augment(*s.mask, center);
    const auto noisy = data::corrupt_mask(clean, rng, c.corruption).mask;
    auto recon = dae_forward(c.dae, dae, ops::reshape(noisy, {1, 1, c.crop, c.crop}));
    auto bin = TensorF::zeros({c.crop, c.crop});
    for (std::size_t i = 0; i < bin.numel(); ++i) bin[i] = recon[i] > 0.5f ? 1.f : 0.f;
    r.corrupted_dsc += eval::dsc(noisy, clean);
    r.reconstructed_dsc += eval::dsc(bin, clean);
    ++r.count;
  }
  if (r.count == 0) throw ConfigError("denoise_report: no masks");
  r.corrupted_dsc /= static_cast<double>(r.count);
  r.reconstructed_dsc /= static_cast<double>(r.count);
  return r;
}

struct DaeRun {
  fs::path dir;
  ModelParams<float> params;
  std::vector<DaeStepRecord> curve;
};

/// train-dae: dae.ckpt, dae_train.csv and config.json under out_root/run_id.
inline DaeRun train_dae_run(RunConfig c, std::uint64_t seed, const TrainData& data, const fs::path& out_root) {
  c.seeds = {seed};
  if (c.run_id.empty()) c.run_id = "dae_N" + std::to_string(c.split.labeled) + "_s" + std::to_string(seed);
  c.validate();
  const auto dir = out_root / c.run_id;
  fs::create_directories(dir);
  auto res = train_dae(c, dae_training_masks(c, data), seed);
  c.dae_checkpoint.clear();  // keep config.json independent of the output location
  write_config(dir / "config.json", c);
  io::write_file_atomic(dir / "dae_train.csv", dae_curve_csv(res.curve));
  io::save_checkpoint(dir / "dae.ckpt", res.params);
  return {dir, std::move(res.params), std::move(res.curve)};
}

// ---------------------------------------------------------------------------
// Sweeps

/// Copy of `base` with one top-level numeric key replaced.
inline RunConfig with_param(const RunConfig& base, const std::string& param, double value) {
  auto j = to_json(base);
  if (!j.contains(param) || !j.at(param).is_number()) throw ConfigError("sweep: '" + param + "' is not a numeric config key");
  if (j.at(param).is_number_integer()) {
    if (value != std::floor(value)) throw ConfigError("sweep: '" + param + "' needs integer values");
    j[param] = static_cast<std::int64_t>(value);
  } else {
    j[param] = value;
  }
  return apply_json(RunConfig{}, j);
}

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

struct SweepSetting {
  std::string method;
  double value;
};

inline std::string sweep_label(const std::string& method, const std::string& param, double value) {
  return method + "@" + param + "=" + format_value(value);
}

/// One child run per (method, value, seed); returns records relabelled per setting.
inline std::vector<eval::MetricsRecord> run_sweep(const RunConfig& base, const std::string& param,
                                                  const std::vector<double>& values,
                                                  const std::vector<std::string>& methods, const TrainData& data,
                                                  const fs::path& out_root,
                                                  const std::function<void(const std::string&)>& log = {}) {
  std::vector<eval::MetricsRecord> records;
  for (const auto& m : methods)
    for (double v : values) {
      auto c = with_param(base, param, v);
      c.method = m;
      for (auto seed : c.seeds) {
        c.run_id = m + "_" + param + "=" + format_value(v) + "_s" + std::to_string(seed);
        c.validate();
        if (log) log(c.run_id);
        auto rec = train_and_evaluate(c, seed, data, out_root);
        rec.method = sweep_label(m, param, v);
        records.push_back(rec);
      }
    }
  io::write_file_atomic(out_root / "summary.csv", eval::summary_csv(eval::compare_runs(records)));
  return records;
}

}  // namespace spssl::pipeline
