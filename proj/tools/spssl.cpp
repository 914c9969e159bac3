// spssl: command-line front end (gen-data, train-dae, train-ssl, eval, compare, sweep).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spssl/data.hpp"
#include "spssl/eval.hpp"
#include "spssl/io.hpp"
#include "spssl/pipeline.hpp"
#include "spssl/trainer.hpp"

namespace fs = std::filesystem;
using namespace spssl;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("SPSSL_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const auto s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("SPSSL_SEED is not an unsigned integer: '") + v + "'");
  return s;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v;
    if (!(is >> v) || !is.eof()) throw ConfigError(std::string(what) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

/// Flags shared by the training commands; unset ones leave the file value alone.
struct Overrides {
  std::string config;
  std::string data_dir;
  std::string method;
  std::string dae_checkpoint;
  std::string seeds;
  std::string run_id;
  std::optional<double> gamma, beta, alpha_ema, lr0, u_max;
  std::optional<std::int64_t> t_max, dae_steps;
  std::optional<int> K;
  std::optional<std::size_t> labeled, unlabeled;
  std::optional<std::string> dae_masks;
  bool binarize = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON config file");
    cmd->add_option("--data", data_dir, "corpus directory (overrides data_dir)");
    cmd->add_option("--seeds", seeds, "comma-separated seeds");
    cmd->add_option("--run-id", run_id, "output subdirectory name");
    cmd->add_option("--gamma", gamma);
    cmd->add_option("--beta", beta);
    cmd->add_option("--alpha-ema", alpha_ema);
    cmd->add_option("--lr0", lr0);
    cmd->add_option("--u-max", u_max);
    cmd->add_option("--t-max", t_max);
    cmd->add_option("--K", K);
    cmd->add_option("--labeled", labeled, "N labeled samples");
    cmd->add_option("--unlabeled", unlabeled, "M unlabeled samples");
    cmd->add_option("--dae-checkpoint", dae_checkpoint);
    cmd->add_option("--dae-steps", dae_steps);
    cmd->add_option("--dae-masks", dae_masks, "labeled | train");
    cmd->add_flag("--binarize-dae-input", binarize, "threshold teacher maps at 0.5 before the DAE");
  }

  /// defaults < SPSSL_SEED < file < flags
  RunConfig resolve() const {
    RunConfig c;
    if (auto s = env_seed()) c.seeds = {*s};
    if (!config.empty()) c = load_config(config, c);
    if (!method.empty()) c.method = method;
    if (!data_dir.empty()) c.data_dir = data_dir;
    if (!dae_checkpoint.empty()) c.dae_checkpoint = dae_checkpoint;
    if (!seeds.empty()) c.seeds = parse_list<std::uint64_t>(seeds, "--seeds");
    if (!run_id.empty()) c.run_id = run_id;
    if (gamma) c.gamma = *gamma;
    if (beta) c.beta = *beta;
    if (alpha_ema) c.alpha_ema = *alpha_ema;
    if (lr0) c.lr0 = *lr0;
    if (u_max) c.u_max = *u_max;
    if (t_max) c.t_max = *t_max;
    if (dae_steps) c.dae_steps = *dae_steps;
    if (K) c.K = *K;
    if (labeled) c.split.labeled = *labeled;
    if (unlabeled) c.split.unlabeled = *unlabeled;
    if (dae_masks) c.dae_masks = *dae_masks;
    if (binarize) c.dae_binarize = true;
    c.validate();
    return c;
  }
};

void print_summary(const std::vector<eval::SummaryRow>& rows) {
  std::printf("%-36s %4s %4s %16s %16s %8s\n", "method", "N", "M", "DSC (%)", "HD95 (px)", "inf/step");
  for (const auto& r : rows)
    std::printf("%-36s %4zu %4zu %7.2f +- %5.2f %7.2f +- %5.2f %8.2f\n", r.method.c_str(), r.N, r.M, r.dsc_mean,
                r.dsc_std, r.hd95_mean, r.hd95_std, r.inferences_per_step);
}

bool dir_has_entries(const fs::path& p) { return fs::exists(p) && fs::directory_iterator(p) != fs::directory_iterator(); }

int run(int argc, char** argv) {
  CLI::App app{"Mean-teacher segmentation with DAE-based uncertainty"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus and split");
  std::string gen_out;
  std::size_t count = 100, side = 96;
  std::optional<std::uint64_t> gen_seed;
  data::SplitSpec spec;
  data::CorpusOptions corpus_opt;
  bool force = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", count, "number of samples")->capture_default_str();
  gen->add_option("--side", side, "image side in pixels")->capture_default_str();
  gen->add_option("--seed", gen_seed, "corpus and split seed");
  gen->add_option("--labeled", spec.labeled)->capture_default_str();
  gen->add_option("--unlabeled", spec.unlabeled)->capture_default_str();
  gen->add_option("--test", spec.test)->capture_default_str();
  gen->add_option("--texture-amp", corpus_opt.texture_amp)->capture_default_str();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  // train-dae
  auto* tdae = app.add_subcommand("train-dae", "pre-train the denoising autoencoder");
  Overrides dae_ov;
  std::string dae_out = "runs";
  bool dae_report = false;
  dae_ov.attach(tdae);
  tdae->add_option("--out-dir", dae_out)->capture_default_str();
  tdae->add_flag("--report", dae_report, "measure denoising on the test masks");

  // train-ssl
  auto* tssl = app.add_subcommand("train-ssl", "train student/teacher and evaluate");
  Overrides ssl_ov;
  std::string ssl_out = "runs";
  ssl_ov.attach(tssl);
  tssl->add_option("--method", ssl_ov.method, "ours_dae | ours_threshold_variant | ours_entropy_variant | "
                                              "mean_teacher | entropy_mc_baseline | supervised_only");
  tssl->add_option("--out-dir", ssl_out)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a saved student checkpoint");
  std::string ev_ckpt, ev_run, ev_config, ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "student checkpoint");
  ev->add_option("--run", ev_run, "run directory");
  ev->add_option("--config", ev_config, "config (default: config.json next to the checkpoint)");
  ev->add_option("--out", ev_out, "where to write metrics (default: the run directory)");

  // compare
  auto* cmp = app.add_subcommand("compare", "aggregate metrics across runs");
  std::string cmp_runs, cmp_out;
  cmp->add_option("--runs", cmp_runs, "directory of run directories")->required();
  cmp->add_option("--out", cmp_out, "summary CSV path (default: RUNS/summary.csv)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "train and evaluate one run per parameter value and method");
  Overrides sw_ov;
  std::string sw_param, sw_values, sw_methods, sw_out = "runs";
  sw_ov.attach(sw);
  sw->add_option("--param", sw_param, "numeric config key")->required();
  sw->add_option("--values", sw_values, "comma-separated values")->required();
  sw->add_option("--methods", sw_methods, "comma-separated methods (default: config method)");
  sw->add_option("--out-dir", sw_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*gen) {
    const fs::path out(gen_out);
    if (dir_has_entries(out) && !force) throw IOError(out.string() + " is not empty (use --force to overwrite)");
    if (force) {
      fs::remove_all(out / "corpus");
      fs::remove(out / "manifest.txt");
      fs::remove(out / "split.json");
    }
    spec.seed = gen_seed ? *gen_seed : env_seed().value_or(0);
    auto corpus = data::gen_corpus(count, side, spec.seed, corpus_opt);
    data::make_split(corpus.size(), spec);
    data::write_corpus(out, corpus, spec);
    const nlohmann::json resolved = {{"count", count},
                                     {"side", side},
                                     {"seed", spec.seed},
                                     {"labeled", spec.labeled},
                                     {"unlabeled", spec.unlabeled},
                                     {"test", spec.test},
                                     {"texture_amp", corpus_opt.texture_amp}};
    io::write_file_atomic(out / "gen_config.json", resolved.dump(2) + "\n");
    std::printf("wrote %zu samples to %s (split %zu/%zu/%zu)\n", count, out.c_str(), spec.labeled, spec.unlabeled,
                spec.test);
    return 0;
  }

  if (*tdae) {
    auto c = dae_ov.resolve();
    const auto data = load_train_data(c);
    for (auto seed : c.seeds) {
      auto cs = c;
      if (!c.run_id.empty() && c.seeds.size() > 1) cs.run_id = c.run_id + "_s" + std::to_string(seed);
      auto run = pipeline::train_dae_run(cs, seed, data, dae_out);
      std::printf("%s: final loss %.5f -> %s\n", run.dir.filename().c_str(), run.curve.back().loss,
                  (run.dir / "dae.ckpt").c_str());
      if (dae_report) {
        auto r = pipeline::denoise_report(cs, run.params, data.test, seed);
        std::printf("  denoising on %zu test masks: corrupted DSC %.2f, reconstructed DSC %.2f\n", r.count,
                    r.corrupted_dsc, r.reconstructed_dsc);
      }
    }
    return 0;
  }

  if (*tssl) {
    auto c = ssl_ov.resolve();
    const auto data = load_train_data(c);
    std::vector<eval::MetricsRecord> records;
    for (auto seed : c.seeds) {
      auto cs = c;
      if (!c.run_id.empty() && c.seeds.size() > 1) cs.run_id = c.run_id + "_s" + std::to_string(seed);
      auto rec = pipeline::train_and_evaluate(cs, seed, data, ssl_out, [&](const StepRecord& r) {
        if ((r.t + 1) % 100 == 0 || r.t + 1 == cs.t_max)
          std::fprintf(stderr, "[%s s%llu] t=%lld L_s=%.4f L_c=%.5f\n", cs.method.c_str(),
                       static_cast<unsigned long long>(seed), static_cast<long long>(r.t + 1), r.loss_sup,
                       r.loss_cons);
      });
      std::printf("%s: DSC %.2f  HD95 %.2f\n", rec.run_id.c_str(), rec.dsc_percent, rec.hd95);
      records.push_back(rec);
    }
    print_summary(eval::compare_runs(records));
    return 0;
  }

  if (*ev) {
    fs::path dir;
    if (!ev_run.empty()) {
      dir = ev_run;
    } else if (!ev_ckpt.empty()) {
      dir = fs::path(ev_ckpt).parent_path();
    } else {
      throw ConfigError("eval needs --run DIR or --checkpoint FILE");
    }
    eval::MetricsRecord rec;
    if (ev_ckpt.empty() && ev_config.empty()) {
      rec = pipeline::evaluate_run_dir(dir);
    } else {
      const auto c = load_config(ev_config.empty() ? dir / "config.json" : fs::path(ev_config));
      const auto ckpt = ev_ckpt.empty() ? dir / "student.ckpt" : fs::path(ev_ckpt);
      double ips = 0;
      if (fs::exists(dir / "train.csv")) ips = pipeline::inferences_per_step_from_csv(dir / "train.csv", c.t_max);
      auto meta = pipeline::record_meta(c, c.seeds.front(), ips);
      rec = eval::evaluate_run(ckpt, load_train_data(c).test, c.seg, meta, c.window, c.stride);
    }
    const fs::path out = ev_out.empty() ? dir : fs::path(ev_out);
    fs::create_directories(out);
    pipeline::write_metrics(out, rec);
    std::printf("%s: DSC %.2f  HD95 %.2f  (%zu samples)\n", rec.run_id.c_str(), rec.dsc_percent, rec.hd95,
                rec.per_sample.size());
    return 0;
  }

  if (*cmp) {
    const auto records = pipeline::collect_metrics(cmp_runs);
    if (records.empty()) throw IOError("no metrics.json found under " + cmp_runs);
    const auto rows = eval::compare_runs(records);
    const fs::path out = cmp_out.empty() ? fs::path(cmp_runs) / "summary.csv" : fs::path(cmp_out);
    io::write_file_atomic(out, eval::summary_csv(rows));
    print_summary(rows);
    return 0;
  }

  if (*sw) {
    auto c = sw_ov.resolve();
    const auto values = parse_list<double>(sw_values, "--values");
    std::vector<std::string> methods = {c.method};
    if (!sw_methods.empty()) methods = parse_list<std::string>(sw_methods, "--methods");
    for (const auto& m : methods) {
      auto probe = pipeline::with_param(c, sw_param, values.front());
      probe.method = m;
      probe.validate();
    }
    const auto data = load_train_data(c);
    const fs::path out = fs::path(sw_out) / ("sweep_" + sw_param);
    fs::create_directories(out);
    write_config(out / "base_config.json", c);
    auto records = pipeline::run_sweep(c, sw_param, values, methods, data, out,
                                       [](const std::string& id) { std::fprintf(stderr, "running %s\n", id.c_str()); });
    print_summary(eval::compare_runs(records));
    std::printf("summary: %s\n", (out / "summary.csv").c_str());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const spssl::Error& e) {
    std::fprintf(stderr, "%s: %s\n", e.name(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "Error: %s\n", e.what());
    return 1;
  }
}
