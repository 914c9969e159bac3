// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Criteria 7 and 8 train full-size
// models and take over an hour on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "spssl/data.hpp"
#include "spssl/eval.hpp"
#include "spssl/io.hpp"
#include "spssl/losses.hpp"
#include "spssl/ops.hpp"
#include "spssl/pipeline.hpp"
#include "spssl/schedules.hpp"
#include "spssl/trainer.hpp"

using namespace spssl;
namespace fs = std::filesystem;
using spssl::testing::gradcheck;
using spssl::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double rel_err(double got, double want) {
  if (got == want) return 0.0;
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

// Shared state across criteria: one corpus, DAEs cached per N.
struct Workspace {
  fs::path root;
  fs::path data_dir;
  std::map<std::size_t, fs::path> dae_ckpt;
  std::map<std::size_t, double> dae_seconds;

  RunConfig base(std::size_t N, std::size_t M) const {
    RunConfig c;
    c.data_dir = data_dir.string();
    c.split.labeled = N;
    c.split.unlabeled = M;
    c.split.test = 20;
    c.split.seed = 0;
    return c;
  }

  // Default train-dae for split N/(80-N), seed 0. Cached.
  fs::path dae_for(std::size_t N) {
    if (dae_ckpt.count(N)) return dae_ckpt[N];
    auto c = base(N, 80 - N);
    const auto t0 = Clock::now();
    auto run = pipeline::train_dae_run(c, 0, load_train_data(c), root / "dae");
    dae_seconds[N] = seconds_since(t0);
    dae_ckpt[N] = run.dir / "dae.ckpt";
    return dae_ckpt[N];
  }
};

// ---------------------------------------------------------------------------
// 1. autodiff

TensorD project(const TensorD& y, const TensorD& r) { return ops::sum(ops::mul(y, r)); }
TensorD const_like(const TensorD& y, Rng& rng) { return random_tensor(y.shape(), rng, -1, 1, false); }

Outcome criterion_autodiff() {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst;
  std::map<std::string, int> shapes;
  auto check = [&](const std::string& op, std::vector<TensorD> in, const std::function<TensorD()>& f) {
    const double e = gradcheck(std::move(in), f, 1e-5).max_rel_error;
    worst[op] = std::max(worst[op], e);
    ++shapes[op];
  };
  for (int trial = 0; trial < 24; ++trial) {
    Rng rng(90000 + trial);
    const std::size_t B = 1 + rng.below(2), Ci = 1 + rng.below(3), Co = 1 + rng.below(3);
    const std::size_t H = 4 + rng.below(5), W = 4 + rng.below(5);
    const std::size_t k = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);

    auto x = random_tensor({B, Ci, H, W}, rng);
    auto w = random_tensor({Co, Ci, k, k}, rng);
    auto b = random_tensor({Co}, rng);
    auto r = const_like(ops::conv2d(x, w, b, stride, pad), rng);
    check("conv2d", {x, w, b}, [&] { return project(ops::conv2d(x, w, b, stride, pad), r); });

    auto tw = random_tensor({Ci, Co, k + 1, k + 1}, rng);
    auto tr = const_like(ops::transposed_conv2d(x, tw, b, stride), rng);
    check("transposed_conv2d", {x, tw, b}, [&] { return project(ops::transposed_conv2d(x, tw, b, stride), tr); });

    auto xs = random_tensor({B, Ci * 2, H, W}, rng);
    auto gam = random_tensor({Ci * 2}, rng);
    auto bet = random_tensor({Ci * 2}, rng);
    auto rs = const_like(xs, rng);
    check("group_norm", {xs, gam, bet}, [&] { return project(ops::group_norm(xs, gam, bet, 2), rs); });
    check("softmax_channel", {xs}, [&] { return project(ops::softmax_channel(xs), rs); });
    check("log_softmax_channel", {xs}, [&] { return project(ops::log_softmax_channel(xs), rs); });
    check("sigmoid", {xs}, [&] { return project(ops::sigmoid(xs), rs); });

    auto xr = random_tensor({B, Ci, H, W}, rng);
    for (auto& v : xr.data()) v += v < 0 ? -0.1 : 0.1;  // off the kink
    auto rr = const_like(xr, rng);
    check("relu", {xr}, [&] { return project(ops::relu(xr), rr); });
    const Rng drop = rng.split("dropout");
    check("dropout", {xr}, [&] {
      Rng d = drop;
      return project(ops::dropout(xr, 0.4, d, true), rr);
    });

    const std::size_t fi = 2 + rng.below(6), fo = 1 + rng.below(4);
    auto li = random_tensor({B, fi}, rng);
    auto lw = random_tensor({fo, fi}, rng);
    auto lb = random_tensor({fo}, rng);
    auto lr = random_tensor({B, fo}, rng, -1, 1, false);
    check("linear", {li, lw, lb}, [&] { return project(ops::linear(li, lw, lb), lr); });

    auto a = random_tensor({B, 2, H, W}, rng);
    auto c = random_tensor({B, 2, H, W}, rng, 0.5, 2.0);
    auto ra = const_like(a, rng);
    check("add", {a, c}, [&] { return project(ops::add(a, c), ra); });
    check("sub", {a, c}, [&] { return project(ops::sub(a, c), ra); });
    check("mul", {a, c}, [&] { return project(ops::mul(a, c), ra); });
    check("div", {a, c}, [&] { return project(ops::div(a, c), ra); });
    check("square", {a}, [&] { return project(ops::square(a), ra); });
    const double s = rng.uniform(-2, 2), sh = rng.uniform(-1, 1);
    check("affine", {a}, [&] { return project(ops::affine(a, s, sh), ra); });
    check("sum", {a}, [&] { return ops::affine(ops::sum(a), s); });
    check("mean", {a}, [&] { return ops::affine(ops::mean(a), s); });
    auto rb = random_tensor({B}, rng, -1, 1, false);
    check("sum_per_sample", {a}, [&] { return project(ops::sum_per_sample(a), rb); });
    auto rsel = random_tensor({B, H * W}, rng, -1, 1, false);
    check("reshape", {a}, [&] { return project(ops::reshape(ops::select_channel(a, 1), {B, H * W}), rsel); });
    auto rch = random_tensor({B, 1, H, W}, rng, -1, 1, false);
    check("select_channel", {a}, [&] { return project(ops::select_channel(a, 0), rch); });
    auto wide = random_tensor({B + 2, 2, H, W}, rng);
    auto rsl = random_tensor({2, 2, H, W}, rng, -1, 1, false);
    check("slice_batch", {wide}, [&] { return project(ops::slice_batch(wide, 1, 3), rsl); });
  }
  const double secs = seconds_since(t0);
  Outcome o;
  double global = 0;
  int min_shapes = 1 << 30;
  std::string bad;
  for (const auto& [op, e] : worst) {
    global = std::max(global, e);
    min_shapes = std::min(min_shapes, shapes[op]);
    if (!(e <= 1e-6)) bad += " " + op + fmt("=%.2e", e);
  }
  o.pass = bad.empty() && min_shapes >= 20 && secs < 60;
  o.detail = fmt("%zu ops, >=%d random shapes each, worst rel err %.2e, %.1f s", worst.size(), min_shapes, global, secs);
  if (!bad.empty()) o.detail += "; over tolerance:" + bad;
  return o;
}

// ---------------------------------------------------------------------------
// 2. schedules

Outcome criterion_schedules() {
  const std::int64_t T = 2000;
  const double beta = 0.1, lr0 = 0.1, u_max = std::numbers::ln2;
  double worst = 0;
  bool ok = true;
  auto cmp = [&](double got, double want) {
    const double e = want == 0 ? std::abs(got) : rel_err(got, want);
    worst = std::max(worst, e);
    ok = ok && e <= 1e-12;
  };
  for (std::int64_t t : {std::int64_t{0}, T / 4, T / 2, 3 * T / 4, T}) {
    const long double r = 1.0L - static_cast<long double>(t) / T;
    const long double ramp = std::exp(-5.0L * r * r);
    cmp(schedules::lambda_c(t, T, beta), static_cast<double>(beta * ramp));
    cmp(schedules::cosine_lr(t, T, lr0),
        static_cast<double>(lr0 * 0.5L * (1.0L + std::cos(std::numbers::pi_v<long double> * t / T))));
    cmp(schedules::dae_lr(t, lr0, 500), lr0 / static_cast<double>(1LL << (t / 500)));
    cmp(schedules::uncertainty_threshold(t, T, u_max), static_cast<double>(u_max * (0.75L + 0.25L * ramp)));
  }
  cmp(schedules::lambda_c(0, T, beta), beta * std::exp(-5.0));
  cmp(schedules::lambda_c(T, T, beta), beta);
  return {ok, fmt("lambda_c, cosine_lr, dae_lr, threshold at 5 points each + spot values; worst rel err %.2e", worst)};
}

// ---------------------------------------------------------------------------
// 3. EMA

Outcome criterion_ema() {
  // Toy student: two tensors descending a quadratic bowl with SGD+momentum.
  Rng rng(33);
  ModelParams<double> student;
  student.add("w", random_tensor({3, 4}, rng, -1, 1, false));
  student.add("b", random_tensor({5}, rng, -1, 1, false));
  student.set_requires_grad(true);
  auto teacher = student.clone();
  teacher.set_requires_grad(false);
  std::vector<ModelParams<double>> traj{student.clone()};
  const double alpha = 0.99;
  for (int step = 1; step <= 100; ++step) {
    student.zero_grad();
    TensorD loss = ops::affine(ops::sum(ops::square(ops::affine(student.at("w"), 1.0, -0.3))), 1.0);
    loss = ops::add(loss, ops::sum(ops::square(student.at("b"))));
    loss.backward();
    sgd_step(student, 0.05, 0.9);
    traj.push_back(student.clone());
    ema_update(teacher, student, alpha);
  }
  double worst = 0;
  for (std::size_t k = 0; k < teacher.size(); ++k)
    for (std::size_t i = 0; i < teacher[k].second.numel(); ++i) {
      // theta_t(T) = a^T theta_s(0) + (1 - a) sum_{j=1..T} a^(T-j) theta_s(j)
      long double closed = std::pow(static_cast<long double>(alpha), 100) * traj[0][k].second[i];
      for (int j = 1; j <= 100; ++j)
        closed += (1.0L - alpha) * std::pow(static_cast<long double>(alpha), 100 - j) * traj[j][k].second[i];
      worst = std::max(worst, rel_err(teacher[k].second[i], static_cast<double>(closed)));
    }
  return {worst <= 1e-6, fmt("17 teacher parameters after 100 SGD+EMA steps, worst rel err %.2e", worst)};
}

// ---------------------------------------------------------------------------
// 4. weighted consistency reductions

Outcome criterion_consistency() {
  double mse_err = 0, equal_max = 0, scale_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(4000 + trial);
    const std::size_t B = 1 + rng.below(4), H = 2 + rng.below(15), W = 2 + rng.below(15);
    auto ps = random_tensor({B, 1, H, W}, rng, 0, 1, false);
    auto pt = random_tensor({B, 1, H, W}, rng, 0, 1, false);

    losses::UncertaintyMap<double> zero{TensorD::zeros({B, H, W}), losses::UncertaintyMethod::DaeL2, 1};
    const double got = losses::consistency_loss(ps, pt, losses::reliability_weights(zero, rng.uniform(0.1, 5))).item();
    double mse = 0;
    for (std::size_t i = 0; i < ps.numel(); ++i) mse += (ps[i] - pt[i]) * (ps[i] - pt[i]);
    mse /= static_cast<double>(ps.numel());
    mse_err = std::max(mse_err, std::abs(got - mse));

    losses::UncertaintyMap<double> U{random_tensor({B, H, W}, rng, 0, 1, false), losses::UncertaintyMethod::DaeL2, 1};
    auto w = losses::reliability_weights(U, rng.uniform(0.1, 5));
    equal_max = std::max(equal_max, std::abs(losses::consistency_loss(ps, ps, w).item()));

    const double base = losses::consistency_loss(ps, pt, w).item();
    for (double c : {1e-3, 0.37, 4.0, 250.0}) {
      auto scaled = w;
      scaled.values = w.values.clone(false);
      for (auto& v : scaled.values.data()) v *= c;
      scale_err = std::max(scale_err, std::abs(losses::consistency_loss(ps, pt, scaled).item() - base));
    }
  }
  const bool ok = mse_err <= 1e-7 && equal_max == 0.0 && scale_err <= 1e-7;
  return {ok, fmt("50 random batches: |U=0 - MSE| %.1e, p_s=p_t max %.1e, rescaling drift %.1e", mse_err, equal_max,
                  scale_err)};
}

// ---------------------------------------------------------------------------
// 5. metrics

Outcome criterion_metrics() {
  using data::Grid;
  Rng rng(5151);
  std::size_t mismatches = 0, pairs = 0;
  for (; pairs < 1500; ++pairs) {
    const std::size_t h = 1 + rng.below(16), w = 1 + rng.below(16);
    const auto a = spssl::testing::random_blobs(h, w, rng);
    const auto b = spssl::testing::random_blobs(h, w, rng);
    if (eval::dsc(a, b) != spssl::testing::dsc_bruteforce(a, b)) ++mismatches;
    if (eval::hd95(a, b) != spssl::testing::hd95_bruteforce(a, b)) ++mismatches;
  }
  bool hand = true;
  Grid m(16, 16);
  for (std::size_t y = 4; y < 11; ++y)
    for (std::size_t x = 3; x < 9; ++x) m.at(y, x) = 1;
  hand = hand && eval::dsc(m, m) == 100.0 && eval::hd95(m, m) == 0.0;
  Grid p(16, 16), q(16, 16);
  p.at(2, 2) = 1;
  q.at(2, 7) = 1;
  hand = hand && eval::hd95(p, q) == 5.0;
  Grid r(16, 16), s(16, 16);
  r.at(1, 1) = 1;
  s.at(4, 5) = 1;  // 3-4-5 triangle
  hand = hand && eval::hd95(r, s) == 5.0 && eval::dsc(r, s) == 0.0;
  return {mismatches == 0 && hand,
          fmt("%zu random pairs up to 16x16, %zu mismatches vs brute force; hand cases %s", pairs, mismatches,
              hand ? "exact" : "WRONG")};
}

// ---------------------------------------------------------------------------
// 6. inference cost

Outcome criterion_inference_cost(Workspace& ws) {
  const std::int64_t steps = 50;
  std::map<std::string, double> per_step;
  auto c0 = ws.base(8, 72);
  c0.t_max = steps;
  const auto data = load_train_data(c0);
  for (const std::string m : {"mean_teacher", "ours_dae", "entropy_mc_baseline"}) {
    auto c = c0;
    c.method = m;
    c.K = 8;
    std::optional<ModelParams<float>> dae;
    if (c.uses_dae()) {
      c.dae_checkpoint = ws.dae_for(8).string();
      dae = load_dae_if_needed(c);
    }
    SslSession session(c, 0, data, std::move(dae));
    std::int64_t step_sum = 0;
    while (!session.done()) step_sum += session.step().step_inferences;
    if (step_sum != session.state().teacher_inferences) return {false, m + ": per-step and cumulative counters disagree"};
    per_step[m] = static_cast<double>(session.state().teacher_inferences) / static_cast<double>(steps);
  }
  // The teacher's own forward pass is 1 per step; everything beyond it is "extra".
  const double mt_extra = per_step["mean_teacher"] - 1, ours_extra = per_step["ours_dae"] - 1;
  const double ent_extra = per_step["entropy_mc_baseline"] - 1;
  const bool ok = mt_extra == 0 && ours_extra == 1 && ent_extra == 8;
  return {ok, fmt("extra teacher-side inferences/step over %lld steps: ours_dae %.3f, entropy_mc_baseline(K=8) %.3f, "
                  "mean_teacher %.3f",
                  static_cast<long long>(steps), ours_extra, ent_extra, mt_extra)};
}

// ---------------------------------------------------------------------------
// 7. DAE prior

Outcome criterion_dae(Workspace& ws) {
  const auto ckpt = ws.dae_for(8);
  auto c = ws.base(8, 72);
  const auto data = load_train_data(c);
  Rng unused;
  auto dae = init_dae<float>(c.dae, unused);
  io::load_into(ckpt, dae);
  const auto r = pipeline::denoise_report(c, dae, data.test, 0);
  const double margin = r.reconstructed_dsc - r.corrupted_dsc;
  const double secs = ws.dae_seconds[8];
  const bool ok = r.count == 20 && c.dae_steps <= 2000 && secs < 600 && margin >= 5.0;

  // Not part of the verdict: same budget, trained on all N+M training masks.
  auto all = c;
  all.dae_masks = "train";
  const auto wide = train_dae(all, dae_training_masks(all, data), 0);
  const auto rw = pipeline::denoise_report(all, wide.params, data.test, 0);
  return {ok, fmt("%lld steps in %.0f s; on %zu held-out masks DSC(corrupted)=%.2f, DSC(DAE)=%.2f, margin %.2f "
                  "(all-training-masks DAE: %.2f, margin %.2f)",
                  static_cast<long long>(c.dae_steps), secs, r.count, r.corrupted_dsc, r.reconstructed_dsc, margin,
                  rw.reconstructed_dsc, rw.reconstructed_dsc - rw.corrupted_dsc)};
}

// ---------------------------------------------------------------------------
// 8. trend

struct TrendResult {
  std::map<std::string, double> dsc;
  double seconds = 0;
};

TrendResult trend_at(Workspace& ws, std::size_t N, std::size_t M, std::FILE* log) {
  const auto ckpt = ws.dae_for(N);
  auto base = ws.base(N, M);
  base.t_max = 2000;
  base.dae_checkpoint = ckpt.string();
  const auto data = load_train_data(base);
  std::vector<eval::MetricsRecord> records;
  const auto t0 = Clock::now();
  for (std::uint64_t seed : {0, 1, 2})
    for (const std::string m : {"supervised_only", "mean_teacher", "ours_dae"}) {
      auto c = base;
      c.method = m;
      const auto t1 = Clock::now();
      records.push_back(pipeline::train_and_evaluate(c, seed, data, ws.root / fmt("trend_%zu_%zu", N, M)));
      std::fprintf(log, "    %zu/%zu %-16s seed %llu: DSC %.2f HD95 %.2f (%.0f s)\n", N, M, m.c_str(),
                   static_cast<unsigned long long>(seed), records.back().dsc_percent, records.back().hd95,
                   seconds_since(t1));
      std::fflush(log);
    }
  TrendResult out;
  out.seconds = seconds_since(t0) + ws.dae_seconds[N];
  for (const auto& row : eval::compare_runs(records)) out.dsc[row.method] = row.dsc_mean;
  return out;
}

Outcome criterion_trend(Workspace& ws) {
  const auto a = trend_at(ws, 8, 72, stdout);
  const auto b = trend_at(ws, 16, 64, stdout);
  auto describe = [](const char* split, const TrendResult& r) {
    return fmt("%s: ours %.2f, MT %.2f, sup %.2f (%.0f min)", split, r.dsc.at("ours_dae"), r.dsc.at("mean_teacher"),
               r.dsc.at("supervised_only"), r.seconds / 60);
  };
  auto ordered = [](const TrendResult& r) {
    return r.dsc.at("ours_dae") >= r.dsc.at("mean_teacher") && r.dsc.at("mean_teacher") >= r.dsc.at("supervised_only");
  };
  const double gap = a.dsc.at("ours_dae") - a.dsc.at("supervised_only");
  // ~1.5 h budget for the nine 8/72 runs (DAE pre-training included).
  const bool ok = ordered(a) && gap >= 2.0 && a.seconds <= 5400 && ordered(b);
  return {ok, describe("8/72", a) + fmt(", ours-sup %.2f; ", gap) + describe("16/64", b)};
}

// ---------------------------------------------------------------------------
// 9. ablation sweep

Outcome criterion_sweep(Workspace& ws) {
  auto base = ws.base(8, 72);
  base.t_max = 100;
  base.dae_checkpoint = ws.dae_for(8).string();
  const auto data = load_train_data(base);
  const std::vector<double> gammas{0.1, 0.5, 1, 2, 5};
  const std::vector<std::string> methods{"ours_dae", "ours_threshold_variant", "ours_entropy_variant"};
  const auto out = ws.root / "sweep_gamma";
  fs::create_directories(out);
  pipeline::run_sweep(base, "gamma", gammas, methods, data, out);

  std::istringstream csv(io::read_file(out / "summary.csv"));
  std::string line;
  std::getline(csv, line);
  std::set<std::string> labels;
  std::size_t rows = 0, complete = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++rows;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    labels.insert(f.empty() ? "" : f[0]);
    bool filled = f.size() == 8;
    for (std::size_t i = 3; filled && i < 8; ++i) filled = !f[i].empty() && std::isfinite(std::stod(f[i]));
    complete += filled;
  }
  bool all_settings = true;
  for (const auto& m : methods)
    for (double g : gammas) all_settings = all_settings && labels.count(pipeline::sweep_label(m, "gamma", g));
  const bool ok = rows == 15 && complete == 15 && all_settings;
  return {ok, fmt("%zu summary rows (expected 15), %zu with complete metrics, one per (variant, gamma): %s", rows,
                  complete, all_settings ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 10. determinism

std::vector<std::string> differing_files(const fs::path& a, const fs::path& b) {
  std::vector<std::string> diff;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    if (!fs::exists(b / name) || io::read_file(e.path()) != io::read_file(b / name)) diff.push_back(name.string());
  }
  return diff;
}

Outcome criterion_determinism(Workspace& ws) {
  std::size_t files = 0;
  std::vector<std::string> diff;
  auto compare = [&](const fs::path& a, const fs::path& b) {
    for (const auto& e : fs::directory_iterator(a)) files += e.is_regular_file();
    for (auto& d : differing_files(a, b)) diff.push_back(a.filename().string() + "/" + d);
  };

  auto dc = ws.base(8, 72);
  dc.dae_steps = 100;
  const auto ddata = load_train_data(dc);
  for (const char* rep : {"rep_a", "rep_b"}) pipeline::train_dae_run(dc, 3, ddata, ws.root / rep);
  compare(ws.root / "rep_a" / "dae_N8_s3", ws.root / "rep_b" / "dae_N8_s3");

  for (const std::string m : {"ours_dae", "entropy_mc_baseline", "supervised_only"}) {
    auto c = ws.base(8, 72);
    c.method = m;
    c.t_max = 40;
    c.dae_checkpoint = ws.dae_for(8).string();
    const auto data = load_train_data(c);
    for (const char* rep : {"rep_a", "rep_b"}) pipeline::train_and_evaluate(c, 5, data, ws.root / rep);
    const auto id = default_run_id(c, 5);
    compare(ws.root / "rep_a" / id, ws.root / "rep_b" / id);
  }
  std::string detail = fmt("4 repeated runs (train-dae, ours_dae, entropy_mc_baseline, supervised_only), %zu files", files);
  if (!diff.empty()) {
    detail += "; differ:";
    for (const auto& d : diff) detail += " " + d;
  } else {
    detail += " byte-identical";
  }
  return {diff.empty() && files >= 4 * 3, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string workdir = (fs::temp_directory_path() / "spssl_acceptance").string();
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory (wiped)");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Workspace ws;
  ws.root = workdir;
  fs::remove_all(ws.root);
  fs::create_directories(ws.root);
  ws.data_dir = ws.root / "data";
  {
    data::SplitSpec spec;
    data::write_corpus(ws.data_dir, data::gen_corpus(100, 96, 0), spec);
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"autodiff gradients vs central differences", criterion_autodiff},
      {"closed-form schedules", criterion_schedules},
      {"EMA closed-form recurrence", criterion_ema},
      {"weighted consistency reductions", criterion_consistency},
      {"DSC/HD95 brute-force oracles", criterion_metrics},
      {"teacher-side inference counters", [&] { return criterion_inference_cost(ws); }},
      {"DAE denoising margin", [&] { return criterion_dae(ws); }},
      {"trend: ours >= MT >= supervised", [&] { return criterion_trend(ws); }},
      {"ablation sweep summary", [&] { return criterion_sweep(ws); }},
      {"bit-identical repeat runs", [&] { return criterion_determinism(ws); }},
  };

  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++ran;
    failed += !o.pass;
    std::printf("%s criterion %2d  %s: %s  [%.0f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
