#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spssl/data.hpp"
#include "spssl/errors.hpp"
#include "spssl/io.hpp"
#include "spssl/losses.hpp"
#include "spssl/nets.hpp"
#include "spssl/ops.hpp"
#include "spssl/params.hpp"
#include "spssl/schedules.hpp"

namespace spssl {

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"ours_dae",     "ours_entropy_variant", "ours_threshold_variant",
                                             "mean_teacher", "entropy_mc_baseline",  "supervised_only"};
  return m;
}

/// Complete hyperparameter record of a run.
struct RunConfig {
  std::string method = "ours_dae";
  double gamma = 1.0;
  double beta = 0.1;
  double alpha_ema = 0.99;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::int64_t t_max = 2000;
  int K = 8;
  std::size_t batch_size = 4;
  double sigma_perturb = 0.1;
  data::SplitSpec split;
  std::vector<std::uint64_t> seeds{0};
  std::string dae_checkpoint;
  std::string data_dir;
  std::string run_id;
  double u_max = 0.0;  // 0 selects the analytic maximum of the uncertainty
  std::size_t crop = 64;
  std::size_t window = 64;
  std::size_t stride = 32;
  bool dae_binarize = false;
  std::string dae_masks = "labeled";
  std::int64_t dae_steps = 2000;
  double dae_lr0 = 0.1;
  std::int64_t dae_lr_step = 500;
  std::size_t dae_batch_size = 4;
  SegNetConfig seg;
  DaeConfig dae;
  data::CorruptionOptions corruption;

  bool uses_dae() const { return method == "ours_dae" || method == "ours_threshold_variant"; }
  bool uses_entropy() const { return method == "ours_entropy_variant" || method == "entropy_mc_baseline"; }
  bool uses_consistency() const { return method != "supervised_only"; }

  double resolved_u_max() const {
    if (u_max > 0) return u_max;
    return uses_entropy() ? std::log(static_cast<double>(seg.num_classes)) : 1.0;
  }

  void validate() const {
    const auto& m = known_methods();
    if (std::find(m.begin(), m.end(), method) == m.end()) throw ConfigError("unknown method '" + method + "'");
    if (!(gamma > 0)) throw ConfigError("gamma must be > 0");
    if (!(beta >= 0)) throw ConfigError("beta must be >= 0");
    if (!(alpha_ema >= 0 && alpha_ema < 1)) throw ConfigError("alpha_ema must be in [0,1)");
    if (!(lr0 >= 0)) throw ConfigError("lr0 must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0,1)");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
    if (uses_entropy() && K < 2) throw ConfigError("K must be >= 2 for entropy methods");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(sigma_perturb >= 0)) throw ConfigError("sigma_perturb must be >= 0");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (!(u_max >= 0)) throw ConfigError("u_max must be >= 0");
    if (dae_masks != "labeled" && dae_masks != "train") throw ConfigError("dae_masks must be 'labeled' or 'train'");
    if (dae_steps < 1 || dae_lr_step < 1 || dae_batch_size < 1) throw ConfigError("dae_steps, dae_lr_step, dae_batch_size must be >= 1");
    if (window > crop * 8 || stride < 1 || stride > window) throw ConfigError("stride must be in [1, window]");
    seg.validate();
    dae.validate();
    if (dae.input_side != crop) throw ConfigError("dae.input_side must equal crop");
    if (crop % (std::size_t{1} << (seg.depth - 1)) != 0) throw ConfigError("crop must be divisible by 2^(depth-1)");
  }
};

// ---------------------------------------------------------------------------
// JSON (de)serialization. Keys mirror the field names; anything else is rejected.

namespace detail {

template <typename V>
void take(const nlohmann::json& j, const char* key, V& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& seen, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!seen.count(k)) throw ConfigError("unknown config key '" + where + k + "'");
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  return json{
      {"method", c.method},
      {"gamma", c.gamma},
      {"beta", c.beta},
      {"alpha_ema", c.alpha_ema},
      {"lr0", c.lr0},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"t_max", c.t_max},
      {"K", c.K},
      {"batch_size", c.batch_size},
      {"sigma_perturb", c.sigma_perturb},
      {"split",
       {{"labeled", c.split.labeled}, {"unlabeled", c.split.unlabeled}, {"test", c.split.test}, {"seed", c.split.seed}}},
      {"seeds", c.seeds},
      {"dae_checkpoint", c.dae_checkpoint},
      {"data_dir", c.data_dir},
      {"run_id", c.run_id},
      {"u_max", c.u_max},
      {"crop", c.crop},
      {"window", c.window},
      {"stride", c.stride},
      {"dae_binarize", c.dae_binarize},
      {"dae_masks", c.dae_masks},
      {"dae_steps", c.dae_steps},
      {"dae_lr0", c.dae_lr0},
      {"dae_lr_step", c.dae_lr_step},
      {"dae_batch_size", c.dae_batch_size},
      {"seg",
       {{"base_width", c.seg.base_width},
        {"depth", c.seg.depth},
        {"dropout_p", c.seg.dropout_p},
        {"groups", c.seg.groups},
        {"num_classes", c.seg.num_classes}}},
      {"dae",
       {{"latent_dim", c.dae.latent_dim},
        {"depth", c.dae.depth},
        {"base_width", c.dae.base_width},
        {"groups", c.dae.groups}}},
      {"corruption",
       {{"swap_p", c.corruption.swap_p},
        {"swap_distance", c.corruption.swap_distance},
        {"morph_max_iters", c.corruption.morph_max_iters},
        {"resize_min", c.corruption.resize_min},
        {"resize_max", c.corruption.resize_max},
        {"add_max_fraction", c.corruption.add_max_fraction}}},
  };
}

/// Overlays `j` onto `base`. Unknown keys at any level raise ConfigError.
inline RunConfig apply_json(RunConfig c, const nlohmann::json& j) {
  std::set<std::string> seen;
  detail::take(j, "method", c.method, seen);
  detail::take(j, "gamma", c.gamma, seen);
  detail::take(j, "beta", c.beta, seen);
  detail::take(j, "alpha_ema", c.alpha_ema, seen);
  detail::take(j, "lr0", c.lr0, seen);
  detail::take(j, "momentum", c.momentum, seen);
  detail::take(j, "weight_decay", c.weight_decay, seen);
  detail::take(j, "t_max", c.t_max, seen);
  detail::take(j, "K", c.K, seen);
  detail::take(j, "batch_size", c.batch_size, seen);
  detail::take(j, "sigma_perturb", c.sigma_perturb, seen);
  detail::take(j, "seeds", c.seeds, seen);
  detail::take(j, "dae_checkpoint", c.dae_checkpoint, seen);
  detail::take(j, "data_dir", c.data_dir, seen);
  detail::take(j, "run_id", c.run_id, seen);
  detail::take(j, "u_max", c.u_max, seen);
  detail::take(j, "crop", c.crop, seen);
  detail::take(j, "window", c.window, seen);
  detail::take(j, "stride", c.stride, seen);
  detail::take(j, "dae_binarize", c.dae_binarize, seen);
  detail::take(j, "dae_masks", c.dae_masks, seen);
  detail::take(j, "dae_steps", c.dae_steps, seen);
  detail::take(j, "dae_lr0", c.dae_lr0, seen);
  detail::take(j, "dae_lr_step", c.dae_lr_step, seen);
  detail::take(j, "dae_batch_size", c.dae_batch_size, seen);
  seen.insert({"split", "seg", "dae", "corruption"});
  detail::reject_unknown(j, seen, "");

  if (j.contains("split")) {
    const auto& s = j.at("split");
    std::set<std::string> ss;
    detail::take(s, "labeled", c.split.labeled, ss);
    detail::take(s, "unlabeled", c.split.unlabeled, ss);
    detail::take(s, "test", c.split.test, ss);
    detail::take(s, "seed", c.split.seed, ss);
    detail::reject_unknown(s, ss, "split.");
  }
  if (j.contains("seg")) {
    const auto& s = j.at("seg");
    std::set<std::string> ss;
    detail::take(s, "base_width", c.seg.base_width, ss);
    detail::take(s, "depth", c.seg.depth, ss);
    detail::take(s, "dropout_p", c.seg.dropout_p, ss);
    detail::take(s, "groups", c.seg.groups, ss);
    detail::take(s, "num_classes", c.seg.num_classes, ss);
    detail::reject_unknown(s, ss, "seg.");
  }
  if (j.contains("dae")) {
    const auto& s = j.at("dae");
    std::set<std::string> ss;
    detail::take(s, "latent_dim", c.dae.latent_dim, ss);
    detail::take(s, "depth", c.dae.depth, ss);
    detail::take(s, "base_width", c.dae.base_width, ss);
    detail::take(s, "groups", c.dae.groups, ss);
    detail::reject_unknown(s, ss, "dae.");
  }
  if (j.contains("corruption")) {
    const auto& s = j.at("corruption");
    std::set<std::string> ss;
    detail::take(s, "swap_p", c.corruption.swap_p, ss);
    detail::take(s, "swap_distance", c.corruption.swap_distance, ss);
    detail::take(s, "morph_max_iters", c.corruption.morph_max_iters, ss);
    detail::take(s, "resize_min", c.corruption.resize_min, ss);
    detail::take(s, "resize_max", c.corruption.resize_max, ss);
    detail::take(s, "add_max_fraction", c.corruption.add_max_fraction, ss);
    detail::reject_unknown(s, ss, "corruption.");
  }
  c.dae.input_side = c.crop;
  return c;
}

inline RunConfig parse_config(const std::string& text, const RunConfig& base = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return apply_json(base, j);
}

inline RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {}) {
  return parse_config(io::read_file(path), base);
}

inline void write_config(const std::filesystem::path& path, const RunConfig& c) {
  io::write_file_atomic(path, to_json(c).dump(2) + "\n");
}

inline std::string default_run_id(const RunConfig& c, std::uint64_t seed) {
  return c.method + "_N" + std::to_string(c.split.labeled) + "_M" + std::to_string(c.split.unlabeled) + "_s" +
         std::to_string(seed);
}

// ---------------------------------------------------------------------------

/// theta_t <- alpha * theta_t + (1 - alpha) * theta_s, in place.
template <typename T>
void ema_update(ModelParams<T>& teacher, const ModelParams<T>& student, double alpha) {
  if (!(alpha >= 0 && alpha < 1)) throw ConfigError("ema_update: alpha must be in [0,1)");
  teacher.require_same_layout(student, "ema_update");
  const auto a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    auto dst = teacher[i].second.data();
    auto src = student[i].second.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = a * dst[k] + b * src[k];
  }
}

/// Samples available to a run, already split.
struct TrainData {
  std::vector<data::SegSample> labeled;
  std::vector<data::SegSample> unlabeled;  // masks removed
  std::vector<data::SegSample> test;
  std::vector<TensorF> unlabeled_masks;    // kept aside, only read by train_dae with dae_masks = "train"
};

inline TrainData split_corpus(const std::vector<data::SegSample>& corpus, const data::SplitSpec& spec) {
  const auto split = data::make_split(corpus.size(), spec);
  TrainData d;
  for (auto i : split.labeled) {
    if (!corpus[i].mask) throw IOError("labeled sample '" + corpus[i].id + "' has no mask");
    d.labeled.push_back(corpus[i]);
  }
  for (auto i : split.unlabeled) {
    auto s = corpus[i];
    if (s.mask) d.unlabeled_masks.push_back(*s.mask);
    s.mask.reset();
    d.unlabeled.push_back(std::move(s));
  }
  for (auto i : split.test) d.test.push_back(corpus[i]);
  return d;
}

inline TrainData load_train_data(const RunConfig& c) {
  if (c.data_dir.empty()) throw ConfigError("data_dir is not set");
  return split_corpus(data::read_corpus(c.data_dir), c.split);
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// DAE pre-training

struct DaeStepRecord {
  std::int64_t step;
  double lr;
  double loss;
};

struct DaeResult {
  ModelParams<float> params;
  std::vector<DaeStepRecord> curve;
};

inline std::string dae_curve_csv(const std::vector<DaeStepRecord>& curve) {
  std::string out = "step,lr,loss\n";
  for (const auto& r : curve) out += std::to_string(r.step) + "," + fmt(r.lr) + "," + fmt(r.loss) + "\n";
  return out;
}

/// Stacks clean/corrupted crop pairs of randomly drawn masks.
inline std::pair<TensorF, TensorF> dae_batch(const std::vector<TensorF>& masks, std::size_t batch, std::size_t crop,
                                             const data::CorruptionOptions& opt, Rng& rng) {
  std::vector<float> clean, noisy;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& m = masks[rng.below(masks.size())];
    auto corrupted = data::corrupt_mask(m, rng, opt).mask;
    const auto aug = data::draw_augment(rng, m.dim(0), m.dim(1), crop);
    auto c = data::apply_augment(m, aug), n = data::apply_augment(corrupted, aug);
    clean.insert(clean.end(), c.data().begin(), c.data().end());
    noisy.insert(noisy.end(), n.data().begin(), n.data().end());
  }
  return {TensorF::from({batch, 1, crop, crop}, std::move(clean)), TensorF::from({batch, 1, crop, crop}, std::move(noisy))};
}

/// Trains the DAE to map corrupted masks back to clean ones.
inline DaeResult train_dae(const RunConfig& c, const std::vector<TensorF>& masks, std::uint64_t seed) {
  c.validate();
  if (masks.empty()) throw ConfigError("train_dae: no training masks");
  Rng root(seed);
  auto init_rng = root.split("dae.init");
  auto data_rng = root.split("dae.data");
  DaeResult res{init_dae<float>(c.dae, init_rng), {}};
  res.params.set_requires_grad(true);
  for (std::int64_t step = 0; step < c.dae_steps; ++step) {
    const double lr = schedules::dae_lr(step, c.dae_lr0, c.dae_lr_step);
    auto [clean, noisy] = dae_batch(masks, c.dae_batch_size, c.crop, c.corruption, data_rng);
    auto loss = losses::dae_recon_loss(dae_forward(c.dae, res.params, noisy), clean);
    const double l = loss.item();
    if (!std::isfinite(l)) throw NumericError("train_dae: non-finite loss at step " + std::to_string(step));
    loss.backward();
    sgd_step(res.params, lr, c.momentum, c.weight_decay);
    res.params.zero_grad();
    res.curve.push_back({step, lr, l});
  }
  res.params.set_requires_grad(false);
  return res;
}

inline std::vector<TensorF> dae_training_masks(const RunConfig& c, const TrainData& d) {
  std::vector<TensorF> masks;
  for (const auto& s : d.labeled) masks.push_back(*s.mask);
  if (c.dae_masks == "train") masks.insert(masks.end(), d.unlabeled_masks.begin(), d.unlabeled_masks.end());
  return masks;
}

// ---------------------------------------------------------------------------
// Mean-teacher training

struct TrainState {
  std::int64_t t = 0;
  ModelParams<float> student;
  ModelParams<float> teacher;
  Rng data_rng, perturb_rng, dropout_rng, mc_rng;
  std::int64_t teacher_inferences = 0;  // cumulative teacher-side forward passes
};

inline TrainState init_state(const RunConfig& c, std::uint64_t seed) {
  Rng root(seed);
  auto init_rng = root.split("init");
  TrainState s{0, init_segnet<float>(c.seg, init_rng), {}, root.split("data"), root.split("perturb"),
               root.split("dropout"), root.split("mc"), 0};
  s.teacher = s.student.clone();
  s.student.set_requires_grad(true);
  return s;
}

/// Crops of one batch: labeled rows first.
struct SslBatch {
  TensorF images;  // [B,1,H,W]
  TensorF labels;  // [nl,H,W]
  std::size_t labeled = 0;
};

inline SslBatch assemble_batch(const TrainData& d, const data::Batch& b, Rng& rng, std::size_t crop) {
  std::vector<float> img, lab;
  for (auto i : b.labeled) {
    auto s = data::augment(d.labeled[i], rng, crop);
    img.insert(img.end(), s.image.data().begin(), s.image.data().end());
    lab.insert(lab.end(), s.mask->data().begin(), s.mask->data().end());
  }
  for (auto i : b.unlabeled) {
    auto s = data::augment(d.unlabeled[i], rng, crop);
    img.insert(img.end(), s.image.data().begin(), s.image.data().end());
  }
  const std::size_t B = b.labeled.size() + b.unlabeled.size();
  return {TensorF::from({B, 1, crop, crop}, std::move(img)), TensorF::from({b.labeled.size(), crop, crop}, std::move(lab)),
          b.labeled.size()};
}

struct StepRecord {
  std::int64_t t = 0;
  double lr = 0, lambda_c = 0, loss_sup = 0, loss_cons = 0, mean_U = 0;
  std::int64_t teacher_inferences = 0;
  int step_inferences = 0;  // teacher-side passes spent in this step
};

/// Replaces the uncertainty estimate; receives the teacher foreground map [B,1,H,W].
using UncertaintyOverride = std::function<losses::UncertaintyMap<float>(const TensorF& p_t_fg)>;

inline void require_dae(const RunConfig& c, const ModelParams<float>* dae) {
  if (c.uses_dae() && !dae) {
    throw ConfigError("method " + c.method +
                      " needs a trained DAE: run `spssl train-dae` and set dae_checkpoint to its dae.ckpt");
  }
}

/// One optimization step: L = L_s + lambda_c(t) * L_c, SGD on the student, EMA into the teacher.
inline StepRecord ssl_step(TrainState& s, const SslBatch& batch, const RunConfig& c, const ModelParams<float>* dae,
                           const UncertaintyOverride& override_u = {}) {
  if (!override_u) require_dae(c, dae);
  if (s.t >= c.t_max) throw StateError("ssl_step: t has reached t_max");
  StepRecord rec;
  rec.t = s.t;
  rec.lr = schedules::cosine_lr(s.t, c.t_max, c.lr0);
  rec.lambda_c = schedules::lambda_c(s.t, c.t_max, c.beta);

  const bool consistency = c.uses_consistency() && batch.images.dim(0) > 0;
  auto x_s = data::perturb_input(batch.images, c.sigma_perturb, s.perturb_rng);
  auto logits = seg_forward(c.seg, s.student, x_s, ForwardMode::Train, &s.dropout_rng);
  auto sup = losses::supervised_loss(ops::slice_batch(logits, 0, batch.labeled), batch.labels);
  auto total = sup.total;
  rec.loss_sup = sup.total.item();

  if (consistency) {
    auto x_t = data::perturb_input(batch.images, c.sigma_perturb, s.perturb_rng);
    TensorF p_t_fg;
    {
      NoGradGuard no_grad;
      p_t_fg = ops::select_channel(ops::softmax_channel(seg_forward(c.seg, s.teacher, x_t, ForwardMode::Eval)), 1);
    }
    rec.step_inferences = 1;

    std::optional<losses::UncertaintyMap<float>> U;
    if (override_u) {
      U = override_u(p_t_fg);
    } else if (c.uses_dae()) {
      auto input = p_t_fg;
      if (c.dae_binarize) {
        input = p_t_fg.clone(false);
        for (auto& v : input.data()) v = v > 0.5f ? 1.f : 0.f;
      }
      U = losses::dae_uncertainty(c.dae, *dae, input);
    } else if (c.uses_entropy()) {
      U = losses::entropy_uncertainty(c.seg, s.teacher, x_t, c.K, s.mc_rng);
    }
    if (U) {
      rec.step_inferences += U->inference_count;
      double acc = 0;
      for (float v : U->values.data()) acc += v;
      rec.mean_U = acc / static_cast<double>(U->values.numel());
    }

    const Shape wshape{batch.images.dim(0), batch.images.dim(2), batch.images.dim(3)};
    losses::ConsistencyWeights<float> w;
    if (c.method == "mean_teacher" && !U) {
      w = losses::uniform_weights<float>(wshape);
    } else if (c.method == "ours_threshold_variant" || c.method == "entropy_mc_baseline") {
      w = losses::threshold_weights(*U, s.t, c.t_max, c.resolved_u_max());
    } else {
      w = losses::reliability_weights(*U, c.gamma);
    }

    auto p_s_fg = ops::select_channel(ops::softmax_channel(logits), 1);
    try {
      auto lc = losses::consistency_loss(p_s_fg, p_t_fg, w);
      rec.loss_cons = lc.item();
      total = ops::add(total, ops::affine(lc, static_cast<float>(rec.lambda_c)));
    } catch (const DegenerateWeightError&) {
      rec.loss_cons = 0.0;  // every voxel masked out: no consistency signal this step
    }
  }

  const double l = total.item();
  if (!std::isfinite(l) || !std::isfinite(rec.loss_sup) || !std::isfinite(rec.loss_cons)) {
    throw NumericError("non-finite loss at t=" + std::to_string(s.t) + " (L=" + fmt(l) + ", L_s=" + fmt(rec.loss_sup) +
                       ", L_c=" + fmt(rec.loss_cons) + ", lr=" + fmt(rec.lr) + ")");
  }
  total.backward();
  sgd_step(s.student, rec.lr, c.momentum, c.weight_decay);
  s.student.zero_grad();
  ema_update(s.teacher, s.student, c.alpha_ema);

  s.teacher_inferences += rec.step_inferences;
  rec.teacher_inferences = s.teacher_inferences;
  ++s.t;
  return rec;
}

inline std::string step_csv_header() { return "t,lr,lambda_c,loss_sup,loss_cons,mean_U,teacher_inferences\n"; }

inline std::string step_csv_row(const StepRecord& r) {
  return std::to_string(r.t) + "," + fmt(r.lr) + "," + fmt(r.lambda_c) + "," + fmt(r.loss_sup) + "," +
         fmt(r.loss_cons) + "," + fmt(r.mean_U) + "," + std::to_string(r.teacher_inferences) + "\n";
}

/// Drives t_max steps of one seed.
class SslSession {
 public:
  SslSession(RunConfig cfg, std::uint64_t seed, const TrainData& data, std::optional<ModelParams<float>> dae = {})
      : cfg_(std::move(cfg)), data_(data), dae_(std::move(dae)), state_(init_state(cfg_, seed)),
        stream_(data.labeled.size(), cfg_.method == "supervised_only" ? 0 : data.unlabeled.size(), cfg_.batch_size,
                Rng(seed).split("batches")) {
    cfg_.validate();
    require_dae(cfg_, dae_ ? &*dae_ : nullptr);
    if (dae_) {
      Rng unused;
      init_dae<float>(cfg_.dae, unused).require_same_layout(*dae_, "DAE checkpoint");
      dae_->set_requires_grad(false);
    }
  }

  StepRecord step(const UncertaintyOverride& override_u = {}) {
    auto batch = assemble_batch(data_, stream_.next(), state_.data_rng, cfg_.crop);
    return ssl_step(state_, batch, cfg_, dae_ ? &*dae_ : nullptr, override_u);
  }

  bool done() const { return state_.t >= cfg_.t_max; }
  TrainState& state() { return state_; }
  const RunConfig& config() const { return cfg_; }

 private:
  RunConfig cfg_;
  const TrainData& data_;
  std::optional<ModelParams<float>> dae_;
  TrainState state_;
  data::BatchStream stream_;
};

struct RunOutput {
  std::filesystem::path dir;
  TrainState state;
  std::vector<StepRecord> records;
};

inline std::optional<ModelParams<float>> load_dae_if_needed(const RunConfig& c) {
  if (!c.uses_dae()) return std::nullopt;
  if (c.dae_checkpoint.empty() || !std::filesystem::exists(c.dae_checkpoint)) {
    throw ConfigError("method " + c.method + " needs dae_checkpoint (missing: '" + c.dae_checkpoint +
                      "'); run `spssl train-dae` first");
  }
  return io::load_checkpoint<float>(c.dae_checkpoint);
}

/// Full run for one seed; writes config.json, train.csv, student.ckpt, teacher.ckpt under out_root/run_id.
inline RunOutput run_training(RunConfig c, std::uint64_t seed, const TrainData& data,
                              const std::filesystem::path& out_root,
                              const std::function<void(const StepRecord&)>& on_step = {}) {
  c.seeds = {seed};
  if (c.run_id.empty()) c.run_id = default_run_id(c, seed);
  c.validate();
  const auto dir = out_root / c.run_id;
  std::filesystem::create_directories(dir);
  write_config(dir / "config.json", c);

  SslSession session(c, seed, data, load_dae_if_needed(c));
  RunOutput out{dir, {}, {}};
  std::string csv = step_csv_header();
  while (!session.done()) {
    StepRecord r;
    try {
      r = session.step();
    } catch (const NumericError& e) {
      io::write_file_atomic(dir / "train.csv", csv);
      io::write_file_atomic(dir / "diagnostic.txt", std::string(e.what()) + "\n");
      io::save_checkpoint(dir / "student_at_failure.ckpt", session.state().student);
      throw;
    }
    csv += step_csv_row(r);
    out.records.push_back(r);
    if (on_step) on_step(r);
  }
  io::write_file_atomic(dir / "train.csv", csv);
  io::save_checkpoint(dir / "student.ckpt", session.state().student);
  io::save_checkpoint(dir / "teacher.ckpt", session.state().teacher);
  out.state = std::move(session.state());
  return out;
}

}  // namespace spssl
