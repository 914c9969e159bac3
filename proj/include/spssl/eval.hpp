#pragma once

#include <algorithm>
#include <filesystem>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "spssl/data.hpp"
#include "spssl/errors.hpp"
#include "spssl/io.hpp"
#include "spssl/nets.hpp"
#include "spssl/ops.hpp"
#include "spssl/tensor.hpp"

namespace spssl::eval {

using data::Grid;

/// 100 * 2|A n B| / (|A| + |B|); two empty masks score 100.
inline double dsc(const Grid& a, const Grid& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("dsc: mask shapes differ");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    na += a.v[i];
    nb += b.v[i];
    inter += a.v[i] & b.v[i];
  }
  if (na + nb == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline double dsc(const TensorF& a, const TensorF& b) {
  if (a.shape() != b.shape()) throw ShapeError("dsc: mask shapes differ");
  return dsc(Grid::from_tensor(a), Grid::from_tensor(b));
}

/// Foreground pixels with at least one background 4-neighbour; pixels
/// outside the frame count as background.
inline Grid boundary(const Grid& g) {
  Grid out(g.h, g.w);
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x) {
      if (!g.at(y, x)) continue;
      for (auto [dy, dx] : data::kCross)
        if (!g.get(static_cast<std::ptrdiff_t>(y) + dy, static_cast<std::ptrdiff_t>(x) + dx)) {
          out.at(y, x) = 1;
          break;
        }
    }
  return out;
}

namespace detail {

// Exact 1-D squared distance transform (lower envelope of parabolas).
inline void edt_1d(const double* f, std::size_t n, double* d, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  // Skip leading sites at infinity.
  std::size_t first = 0;
  while (first < n && f[first] == inf) ++first;
  if (first == n) {
    std::fill(d, d + n, inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == inf) continue;
    const double fq = f[q] + static_cast<double>(q * q);
    double s;
    for (;;) {
      const std::size_t p = v[k];
      s = (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * static_cast<double>(q) - 2.0 * static_cast<double>(p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {  // k == 0 and new parabola dominates everywhere
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

/// Squared Euclidean distance from every pixel to the nearest set pixel.
inline std::vector<double> squared_edt(const Grid& sites) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t h = sites.h, w = sites.w;
  std::vector<double> grid(h * w);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = sites.v[i] ? 0.0 : inf;
  std::vector<double> f(std::max(h, w)), d(std::max(h, w));
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    edt_1d(f.data(), h, d.data(), v, z);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    edt_1d(grid.data() + y * w, w, d.data(), v, z);
    std::copy_n(d.data(), w, grid.data() + y * w);
  }
  return grid;
}

}  // namespace detail

/// Percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw RangeError("percentile: empty input");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

/// Symmetric surface distances: A->B for each boundary pixel of A, then B->A.
inline std::vector<double> surface_distances(const Grid& a, const Grid& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("hd95: mask shapes differ");
  if (a.count() == 0 || b.count() == 0) throw EmptyMaskError("hd95: empty mask");
  const Grid ba = boundary(a), bb = boundary(b);
  const auto dist_to_b = detail::squared_edt(bb);
  const auto dist_to_a = detail::squared_edt(ba);
  std::vector<double> out;
  for (std::size_t i = 0; i < ba.v.size(); ++i)
    if (ba.v[i]) out.push_back(std::sqrt(dist_to_b[i]));
  for (std::size_t i = 0; i < bb.v.size(); ++i)
    if (bb.v[i]) out.push_back(std::sqrt(dist_to_a[i]));
  return out;
}

/// 95th percentile of the combined surface-distance multiset, in pixels.
inline double hd95(const Grid& a, const Grid& b) { return percentile(surface_distances(a, b), 95.0); }

inline double hd95(const TensorF& a, const TensorF& b) {
  if (a.shape() != b.shape()) throw ShapeError("hd95: mask shapes differ");
  return hd95(Grid::from_tensor(a), Grid::from_tensor(b));
}

// ---------------------------------------------------------------------------

struct SlidingWindowResult {
  TensorF prob;          // [H,W] averaged foreground probability
  TensorF mask;          // [H,W] prob > 0.5
  std::vector<int> coverage;  // windows covering each pixel
};

inline std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, std::size_t stride) {
  std::vector<std::size_t> starts;
  for (std::size_t s = 0;; s += stride) {
    if (s + window >= extent) {
      starts.push_back(extent - window);  // final window snapped to the border
      break;
    }
    starts.push_back(s);
  }
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  return starts;
}

/// Tiled eval-mode inference over image [1,H,W] with softmax averaging.
inline SlidingWindowResult sliding_window_infer(const SegNetConfig& cfg, const ModelParams<float>& params,
                                                const TensorF& image, std::size_t window, std::size_t stride) {
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels) throw ShapeError("sliding_window_infer: image must be [C,H,W]");
  const std::size_t H = image.dim(1), W = image.dim(2), C = image.dim(0);
  if (window > std::min(H, W)) throw ConfigError("sliding_window_infer: window larger than image");
  if (stride < 1 || stride > window) throw ConfigError("sliding_window_infer: stride must be in [1, window]");
  const auto ys = window_starts(H, window, stride), xs = window_starts(W, window, stride);

  std::vector<std::pair<std::size_t, std::size_t>> tiles;
  for (auto y : ys)
    for (auto x : xs) tiles.emplace_back(y, x);
  std::vector<float> batch(tiles.size() * C * window * window);
  for (std::size_t t = 0; t < tiles.size(); ++t)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < window; ++y)
        std::copy_n(image.ptr() + (c * H + tiles[t].first + y) * W + tiles[t].second, window,
                    batch.data() + ((t * C + c) * window + y) * window);

  TensorF prob_tiles;
  {
    NoGradGuard no_grad;
    auto input = TensorF::from({tiles.size(), C, window, window}, std::move(batch));
    prob_tiles = ops::softmax_channel(seg_forward(cfg, params, input, ForwardMode::Eval));
  }
  const std::size_t K = cfg.num_classes, S = window * window;
  std::vector<double> acc(H * W, 0.0);
  std::vector<int> cover(H * W, 0);
  for (std::size_t t = 0; t < tiles.size(); ++t)
    for (std::size_t y = 0; y < window; ++y)
      for (std::size_t x = 0; x < window; ++x) {
        const std::size_t i = (tiles[t].first + y) * W + tiles[t].second + x;
        acc[i] += prob_tiles[(t * K + 1) * S + y * window + x];
        cover[i] += 1;
      }
  std::vector<float> prob(H * W), mask(H * W);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    prob[i] = static_cast<float>(acc[i] / cover[i]);
    mask[i] = prob[i] > 0.5f ? 1.f : 0.f;
  }
  return {TensorF::from({H, W}, std::move(prob)), TensorF::from({H, W}, std::move(mask)), std::move(cover)};
}

// ---------------------------------------------------------------------------

struct SampleMetrics {
  std::string sample_id;
  double dsc = 0.0;
  double hd95 = std::numeric_limits<double>::quiet_NaN();
  std::string flag;  // empty, or why hd95 is missing
};

struct MetricsRecord {
  std::string run_id;
  std::string method;
  std::uint64_t seed = 0;
  std::size_t N = 0, M = 0;
  double dsc_percent = 0.0;
  double hd95 = 0.0;
  double inferences_per_step = 0.0;
  std::vector<SampleMetrics> per_sample;
};

inline SampleMetrics score_sample(const std::string& id, const TensorF& pred, const TensorF& gt) {
  SampleMetrics m{id, dsc(pred, gt)};
  const auto p = Grid::from_tensor(pred), g = Grid::from_tensor(gt);
  if (p.count() == 0 || g.count() == 0) {
    m.flag = p.count() == 0 ? "empty_pred" : "empty_gt";
  } else {
    m.hd95 = hd95(p, g);
  }
  return m;
}

/// Fills means from per-sample rows; flagged samples are excluded from the HD95 mean.
inline void summarize(MetricsRecord& rec) {
  double ds = 0, hs = 0;
  std::size_t hn = 0;
  for (const auto& s : rec.per_sample) {
    ds += s.dsc;
    if (s.flag.empty()) {
      hs += s.hd95;
      ++hn;
    }
  }
  rec.dsc_percent = rec.per_sample.empty() ? 0.0 : ds / static_cast<double>(rec.per_sample.size());
  rec.hd95 = hn == 0 ? std::numeric_limits<double>::quiet_NaN() : hs / static_cast<double>(hn);
}

using Predictor = std::function<TensorF(const data::SegSample&)>;

inline MetricsRecord evaluate_with(const Predictor& predict, const std::vector<data::SegSample>& test_set,
                                   MetricsRecord meta) {
  meta.per_sample.clear();
  for (const auto& s : test_set) {
    if (!s.mask) throw ConfigError("evaluate: test sample '" + s.id + "' has no mask");
    meta.per_sample.push_back(score_sample(s.id, predict(s), *s.mask));
  }
  summarize(meta);
  return meta;
}

inline MetricsRecord evaluate_params(const SegNetConfig& cfg, const ModelParams<float>& params,
                                     const std::vector<data::SegSample>& test_set, MetricsRecord meta,
                                     std::size_t window = 64, std::size_t stride = 32) {
  return evaluate_with(
      [&](const data::SegSample& s) { return sliding_window_infer(cfg, params, s.image, window, stride).mask; },
      test_set, std::move(meta));
}

/// Scores a saved student checkpoint on the test set.
inline MetricsRecord evaluate_run(const std::filesystem::path& checkpoint, const std::vector<data::SegSample>& test_set,
                                  const SegNetConfig& cfg, MetricsRecord meta, std::size_t window = 64,
                                  std::size_t stride = 32) {
  Rng unused;
  auto params = init_segnet<float>(cfg, unused);
  io::load_into(checkpoint, params);
  return evaluate_params(cfg, params, test_set, std::move(meta), window, stride);
}

inline nlohmann::json to_json(const MetricsRecord& r) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"run_id", r.run_id},
          {"method", r.method},
          {"seed", r.seed},
          {"N", r.N},
          {"M", r.M},
          {"dsc_percent", r.dsc_percent},
          {"hd95", num(r.hd95)},
          {"inferences_per_step", r.inferences_per_step},
          {"samples", r.per_sample.size()}};
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.N = j.at("N").get<std::size_t>();
    r.M = j.at("M").get<std::size_t>();
    r.dsc_percent = j.at("dsc_percent").get<double>();
    r.hd95 = j.at("hd95").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("hd95").get<double>();
    r.inferences_per_step = j.at("inferences_per_step").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IOError(std::string("malformed metrics record: ") + e.what());
  }
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string per_sample_csv(const MetricsRecord& rec) {
  std::string out = "run_id,method,seed,sample_id,dsc,hd95,flag\n";
  for (const auto& s : rec.per_sample) {
    out += rec.run_id + "," + rec.method + "," + std::to_string(rec.seed) + "," + s.sample_id + "," +
           format_number(s.dsc) + "," + format_number(s.hd95) + "," + s.flag + "\n";
  }
  return out;
}

struct SummaryRow {
  std::string method;
  std::size_t N = 0, M = 0;
  double dsc_mean = 0, dsc_std = 0, hd95_mean = 0, hd95_std = 0, inferences_per_step = 0;
  std::size_t runs = 0;
};

/// Mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

/// Groups runs by (method label, N, M); statistics are taken across runs.
inline std::vector<SummaryRow> compare_runs(const std::vector<MetricsRecord>& records) {
  std::map<std::tuple<std::string, std::size_t, std::size_t>, std::vector<const MetricsRecord*>> groups;
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> order;
  for (const auto& r : records) {
    auto key = std::make_tuple(r.method, r.N, r.M);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<SummaryRow> rows;
  for (const auto& key : order) {
    const auto& runs = groups[key];
    std::vector<double> d, h, inf;
    for (const auto* r : runs) {
      d.push_back(r->dsc_percent);
      if (!std::isnan(r->hd95)) h.push_back(r->hd95);
      inf.push_back(r->inferences_per_step);
    }
    SummaryRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key)};
    std::tie(row.dsc_mean, row.dsc_std) = mean_std(d);
    std::tie(row.hd95_mean, row.hd95_std) = mean_std(h);
    row.inferences_per_step = mean_std(inf).first;
    row.runs = runs.size();
    rows.push_back(row);
  }
  return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "method,N,M,dsc_mean,dsc_std,hd95_mean,hd95_std,inferences_per_step\n";
  for (const auto& r : rows) {
    out += r.method + "," + std::to_string(r.N) + "," + std::to_string(r.M) + "," + format_number(r.dsc_mean) + "," +
           format_number(r.dsc_std) + "," + format_number(r.hd95_mean) + "," + format_number(r.hd95_std) + "," +
           format_number(r.inferences_per_step) + "\n";
  }
  return out;
}

}  // namespace spssl::eval
