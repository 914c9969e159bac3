#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spssl/errors.hpp"
#include "spssl/io.hpp"
#include "spssl/rng.hpp"
#include "spssl/tensor.hpp"

namespace spssl::data {

/// One image/mask pair; the mask is absent for unlabeled data.
struct SegSample {
  std::string id;
  TensorF image;               // [1,H,W], intensities in [0,1]
  std::optional<TensorF> mask;  // [H,W], values in {0,1}
};

struct CorpusOptions {
  double foreground_level = 0.65;
  double background_level = 0.35;
  double texture_amp = 0.12;
  double noise_sigma = 0.08;
  double min_fraction = 0.05;
  double max_fraction = 0.30;
};

// ---------------------------------------------------------------------------
// Binary grid helpers

/// Row-major binary image used by the morphology and corruption code.
struct Grid {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> v;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols) : h(rows), w(cols), v(rows * cols, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return v[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
  bool get(std::ptrdiff_t y, std::ptrdiff_t x) const {
    return y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(h) && x < static_cast<std::ptrdiff_t>(w) &&
           v[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] != 0;
  }
  std::size_t count() const { return static_cast<std::size_t>(std::count(v.begin(), v.end(), 1)); }
  bool operator==(const Grid&) const = default;

  static Grid from_tensor(const TensorF& mask) {
    if (mask.rank() != 2) throw ShapeError("mask must be [H,W], got " + to_string(mask.shape()));
    Grid g(mask.dim(0), mask.dim(1));
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = mask[i] > 0.5f ? 1 : 0;
    return g;
  }

  TensorF to_tensor() const {
    std::vector<float> vals(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) vals[i] = v[i] ? 1.f : 0.f;
    return TensorF::from({h, w}, std::move(vals));
  }
};

inline constexpr std::array<std::array<int, 2>, 4> kCross = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

/// Erosion by the 3x3 cross; pixels outside the frame count as background.
inline Grid erode(const Grid& g, int iterations = 1) {
  Grid cur = g;
  for (int it = 0; it < iterations; ++it) {
    Grid next(cur.h, cur.w);
    for (std::size_t y = 0; y < cur.h; ++y)
      for (std::size_t x = 0; x < cur.w; ++x) {
        bool keep = cur.at(y, x) != 0;
        for (auto [dy, dx] : kCross)
          keep = keep && cur.get(static_cast<std::ptrdiff_t>(y) + dy, static_cast<std::ptrdiff_t>(x) + dx);
        next.at(y, x) = keep ? 1 : 0;
      }
    cur = std::move(next);
  }
  return cur;
}

inline Grid dilate(const Grid& g, int iterations = 1) {
  Grid cur = g;
  for (int it = 0; it < iterations; ++it) {
    Grid next(cur.h, cur.w);
    for (std::size_t y = 0; y < cur.h; ++y)
      for (std::size_t x = 0; x < cur.w; ++x) {
        bool on = cur.at(y, x) != 0;
        for (auto [dy, dx] : kCross)
          on = on || cur.get(static_cast<std::ptrdiff_t>(y) + dy, static_cast<std::ptrdiff_t>(x) + dx);
        next.at(y, x) = on ? 1 : 0;
      }
    cur = std::move(next);
  }
  return cur;
}

/// 4-connected component labels (0 = background, 1..n).
inline std::vector<int> label_components(const Grid& g, int& count) {
  std::vector<int> labels(g.v.size(), 0);
  count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < g.v.size(); ++start) {
    if (!g.v[start] || labels[start]) continue;
    ++count;
    labels[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const auto y = static_cast<std::ptrdiff_t>(i / g.w), x = static_cast<std::ptrdiff_t>(i % g.w);
      for (auto [dy, dx] : kCross) {
        if (!g.get(y + dy, x + dx)) continue;
        const std::size_t j = static_cast<std::size_t>(y + dy) * g.w + static_cast<std::size_t>(x + dx);
        if (!labels[j]) {
          labels[j] = count;
          stack.push_back(j);
        }
      }
    }
  }
  return labels;
}

namespace detail {

struct Ellipse {
  double cy, cx, a, b, theta;
  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
    return u * u + v * v <= 1.0;
  }
};

inline void paint(Grid& g, const Ellipse& e) {
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x)
      if (e.contains(static_cast<double>(y), static_cast<double>(x))) g.at(y, x) = 1;
}

inline Grid random_blob(std::size_t side, Rng& rng, const CorpusOptions& opt) {
  const double s = static_cast<double>(side);
  for (;;) {
    Grid g(side, side);
    const double cy = s / 2 + rng.uniform(-0.12, 0.12) * s;
    const double cx = s / 2 + rng.uniform(-0.12, 0.12) * s;
    const int parts = rng.uniform_int(2, 4);
    for (int k = 0; k < parts; ++k) {
      Ellipse e{cy + rng.uniform(-0.12, 0.12) * s, cx + rng.uniform(-0.12, 0.12) * s,
                rng.uniform(0.07, 0.2) * s, rng.uniform(0.07, 0.2) * s, rng.uniform(0.0, std::numbers::pi)};
      paint(g, e);
    }
    const double frac = static_cast<double>(g.count()) / (s * s);
    if (frac >= opt.min_fraction && frac <= opt.max_fraction) return g;
  }
}

}  // namespace detail

/// Synthetic corpus: smooth multi-ellipse blobs over textured background.
inline std::vector<SegSample> gen_corpus(std::size_t count, std::size_t side, std::uint64_t seed,
                                         const CorpusOptions& opt = {}) {
  if (count < 1) throw ConfigError("gen_corpus: count must be >= 1");
  if (side < 32) throw ConfigError("gen_corpus: side must be >= 32");
  std::vector<SegSample> out;
  out.reserve(count);
  const Rng root(seed);
  const double s = static_cast<double>(side);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = root.split(i);
    Grid blob = detail::random_blob(side, rng, opt);

    // Low-frequency texture: mean of three random plane waves, in [-1,1].
    std::array<std::array<double, 3>, 3> waves{};
    for (auto& w : waves) {
      const double freq = rng.uniform(1.0, 3.0) * 2.0 * std::numbers::pi / s;
      const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
      w = {freq * std::cos(dir), freq * std::sin(dir), rng.uniform(0.0, 2.0 * std::numbers::pi)};
    }
    std::vector<float> img(side * side);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        double t = 0;
        for (const auto& w : waves) t += std::sin(w[0] * static_cast<double>(y) + w[1] * static_cast<double>(x) + w[2]);
        t /= 3.0;
        const bool fg = blob.at(y, x) != 0;
        double v = fg ? opt.foreground_level + opt.texture_amp * t : opt.background_level - opt.texture_amp * t;
        v += rng.normal(0.0, opt.noise_sigma);
        img[y * side + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    char id[32];
    std::snprintf(id, sizeof(id), "s%03zu", i);
    out.push_back({id, TensorF::from({1, side, side}, std::move(img)), blob.to_tensor()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentParams {
  bool flip_h = false;  // mirror columns
  bool flip_v = false;  // mirror rows
  int rot_k = 0;        // counter-clockwise quarter turns
  std::size_t y0 = 0, x0 = 0, crop = 0;
};

inline AugmentParams draw_augment(Rng& rng, std::size_t h, std::size_t w, std::size_t crop) {
  if (crop > h || crop > w) throw ShapeError("augment: crop larger than image");
  if (h != w) throw ShapeError("augment: quarter-turn rotation needs a square image");
  AugmentParams p;
  p.flip_h = rng.bernoulli(0.5);
  p.flip_v = rng.bernoulli(0.5);
  p.rot_k = rng.uniform_int(0, 3);
  p.crop = crop;
  p.y0 = static_cast<std::size_t>(rng.below(h - crop + 1));
  p.x0 = static_cast<std::size_t>(rng.below(w - crop + 1));
  return p;
}

/// Source pixel in the original frame for crop coordinate (y, x).
inline std::pair<std::size_t, std::size_t> augment_source(const AugmentParams& p, std::size_t n, std::size_t y,
                                                          std::size_t x) {
  // Output of (flip, then rotate) at (ry, rx); invert rotation, then flip.
  std::size_t ry = y + p.y0, rx = x + p.x0;
  for (int k = 0; k < ((p.rot_k % 4) + 4) % 4; ++k) {
    // CCW quarter turn: new[i][j] = old[j][n-1-i]
    const std::size_t oy = rx, ox = n - 1 - ry;
    ry = oy;
    rx = ox;
  }
  if (p.flip_v) ry = n - 1 - ry;
  if (p.flip_h) rx = n - 1 - rx;
  return {ry, rx};
}

/// Applies the same spatial transform to every channel plane of [C,H,W] or [H,W].
inline TensorF apply_augment(const TensorF& t, const AugmentParams& p) {
  const bool planar = t.rank() == 2;
  const std::size_t C = planar ? 1 : t.dim(0);
  const std::size_t n = planar ? t.dim(0) : t.dim(1);
  const std::size_t crop = p.crop == 0 ? n : p.crop;
  if (p.y0 + crop > n || p.x0 + crop > n) throw ShapeError("augment: crop window out of bounds");
  std::vector<float> out(C * crop * crop);
  for (std::size_t y = 0; y < crop; ++y)
    for (std::size_t x = 0; x < crop; ++x) {
      auto [sy, sx] = augment_source(p, n, y, x);
      for (std::size_t c = 0; c < C; ++c) out[(c * crop + y) * crop + x] = t[(c * n + sy) * n + sx];
    }
  Shape shape = planar ? Shape{crop, crop} : Shape{C, crop, crop};
  return TensorF::from(std::move(shape), std::move(out));
}

inline SegSample augment(const SegSample& s, Rng& rng, std::size_t crop = 64) {
  const auto p = draw_augment(rng, s.image.dim(1), s.image.dim(2), crop);
  SegSample out{s.id, apply_augment(s.image, p), std::nullopt};
  if (s.mask) out.mask = apply_augment(*s.mask, p);
  return out;
}

/// Additive Gaussian noise, clipped to [0,1].
template <typename T>
Tensor<T> perturb_input(const Tensor<T>& image, double sigma, Rng& rng) {
  if (sigma < 0) throw ConfigError("perturb_input: sigma must be >= 0");
  auto out = image.clone(false);
  if (sigma == 0) return out;
  for (auto& v : out.data()) v = static_cast<T>(std::clamp(static_cast<double>(v) + rng.normal(0.0, sigma), 0.0, 1.0));
  return out;
}

// ---------------------------------------------------------------------------
// Label corruption

struct CorruptionOptions {
  double swap_p = 0.3;
  double swap_distance = 2.0;
  int morph_max_iters = 2;
  double resize_min = 0.8;
  double resize_max = 1.2;
  double add_max_fraction = 0.05;
};

enum CorruptionOp : unsigned { kBoundarySwap = 1, kMorphology = 2, kResize = 4, kShapeEdit = 8 };

struct CorruptionResult {
  TensorF mask;
  unsigned ops = 0;
  bool flagged = false;  // input was empty; returned unchanged
};

/// Flips each pixel within `distance` of the class boundary with probability p.
inline Grid boundary_swap(const Grid& g, double p, double distance, Rng& rng) {
  Grid boundary(g.h, g.w);
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x)
      for (auto [dy, dx] : kCross) {
        const auto ny = static_cast<std::ptrdiff_t>(y) + dy, nx = static_cast<std::ptrdiff_t>(x) + dx;
        if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(g.h) || nx >= static_cast<std::ptrdiff_t>(g.w)) continue;
        if (g.get(ny, nx) != (g.at(y, x) != 0)) boundary.at(y, x) = 1;
      }
  const int r = static_cast<int>(std::floor(distance));
  Grid out = g;
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x) {
      bool near = false;
      for (int dy = -r; dy <= r && !near; ++dy)
        for (int dx = -r; dx <= r && !near; ++dx)
          near = dy * dy + dx * dx <= distance * distance &&
                 boundary.get(static_cast<std::ptrdiff_t>(y) + dy, static_cast<std::ptrdiff_t>(x) + dx);
      if (near && rng.bernoulli(p)) out.at(y, x) ^= 1;
    }
  return out;
}

/// Nearest-neighbour scaling of the foreground about its centroid.
inline Grid resize_about_centroid(const Grid& g, double factor) {
  double cy = 0, cx = 0;
  const double n = static_cast<double>(g.count());
  if (n == 0) return g;
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x)
      if (g.at(y, x)) {
        cy += static_cast<double>(y);
        cx += static_cast<double>(x);
      }
  cy /= n;
  cx /= n;
  Grid out(g.h, g.w);
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x) {
      const auto sy = static_cast<std::ptrdiff_t>(std::lround(cy + (static_cast<double>(y) - cy) / factor));
      const auto sx = static_cast<std::ptrdiff_t>(std::lround(cx + (static_cast<double>(x) - cx) / factor));
      out.at(y, x) = g.get(sy, sx) ? 1 : 0;
    }
  return out;
}

inline Grid add_random_ellipse(const Grid& g, double max_fraction, Rng& rng) {
  const double area = rng.uniform(0.2, 1.0) * max_fraction * static_cast<double>(g.h * g.w);
  const double ratio = rng.uniform(0.5, 1.0);
  const double a = std::sqrt(area / (std::numbers::pi * ratio));
  detail::Ellipse e{rng.uniform(0.0, static_cast<double>(g.h)), rng.uniform(0.0, static_cast<double>(g.w)), a,
                    a * ratio, rng.uniform(0.0, std::numbers::pi)};
  Grid out = g;
  detail::paint(out, e);
  return out;
}

/// Removes one random connected component when there are several,
/// otherwise adds an ellipse.
inline Grid edit_shapes(const Grid& g, double max_fraction, Rng& rng) {
  const bool add = rng.bernoulli(0.5);
  int count = 0;
  auto labels = label_components(g, count);
  if (add || count < 2) return add_random_ellipse(g, max_fraction, rng);
  const int victim = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(count)));
  Grid out = g;
  for (std::size_t i = 0; i < out.v.size(); ++i)
    if (labels[i] == victim) out.v[i] = 0;
  return out;
}

/// Applies a uniformly drawn non-empty subset of the corruption operations,
/// in the order resize, morphology, shape edit, boundary swap.
inline CorruptionResult corrupt_mask(const TensorF& mask, Rng& rng, const CorruptionOptions& opt = {}) {
  Grid g = Grid::from_tensor(mask);
  if (g.count() == 0) return {mask.clone(false), 0, true};
  const unsigned ops = 1 + static_cast<unsigned>(rng.below(15));
  if (ops & kResize) g = resize_about_centroid(g, rng.uniform(opt.resize_min, opt.resize_max));
  if (ops & kMorphology) {
    const int iters = rng.uniform_int(1, opt.morph_max_iters);
    g = rng.bernoulli(0.5) ? erode(g, iters) : dilate(g, iters);
  }
  if (ops & kShapeEdit) g = edit_shapes(g, opt.add_max_fraction, rng);
  if (ops & kBoundarySwap) g = boundary_swap(g, opt.swap_p, opt.swap_distance, rng);
  return {g.to_tensor(), ops, false};
}

// ---------------------------------------------------------------------------
// Splits and batching

struct SplitSpec {
  std::size_t labeled = 8;
  std::size_t unlabeled = 72;
  std::size_t test = 20;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> labeled, unlabeled, test;  // indices into the corpus
};

/// Seeded permutation; test ids are taken from the tail so they do not
/// depend on N and M.
inline Split make_split(std::size_t corpus_size, const SplitSpec& spec) {
  if (spec.labeled + spec.unlabeled + spec.test > corpus_size) {
    throw ConfigError("split: N + M + test exceeds corpus size " + std::to_string(corpus_size));
  }
  std::vector<std::size_t> perm(corpus_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(perm.begin(), perm.end());
  Split s;
  s.labeled.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(spec.labeled));
  s.unlabeled.assign(perm.begin() + static_cast<std::ptrdiff_t>(spec.labeled),
                     perm.begin() + static_cast<std::ptrdiff_t>(spec.labeled + spec.unlabeled));
  s.test.assign(perm.end() - static_cast<std::ptrdiff_t>(spec.test), perm.end());
  return s;
}

struct Batch {
  std::vector<std::size_t> labeled;    // positions in the labeled list
  std::vector<std::size_t> unlabeled;  // positions in the unlabeled list
};

/// Endless stream of half-labeled / half-unlabeled batches. Each pool is
/// cycled in a fresh random order every epoch. With no unlabeled data every
/// batch is fully labeled.
class BatchStream {
 public:
  BatchStream(std::size_t labeled_count, std::size_t unlabeled_count, std::size_t batch_size, Rng rng)
      : rng_(std::move(rng)), batch_size_(batch_size) {
    if (labeled_count == 0) throw ConfigError("make_batches: labeled set is empty");
    if (batch_size == 0) throw ConfigError("make_batches: batch_size must be >= 1");
    if (unlabeled_count > 0 && batch_size % 2 != 0) throw ConfigError("make_batches: batch_size must be even");
    labeled_.resize(labeled_count);
    unlabeled_.resize(unlabeled_count);
    std::iota(labeled_.order.begin(), labeled_.order.end(), 0);
    std::iota(unlabeled_.order.begin(), unlabeled_.order.end(), 0);
  }

  Batch next() {
    Batch b;
    const bool mixed = !unlabeled_.order.empty();
    const std::size_t nl = mixed ? batch_size_ / 2 : batch_size_;
    for (std::size_t i = 0; i < nl; ++i) b.labeled.push_back(labeled_.draw(rng_));
    if (mixed)
      for (std::size_t i = 0; i < batch_size_ - nl; ++i) b.unlabeled.push_back(unlabeled_.draw(rng_));
    return b;
  }

 private:
  struct Pool {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    void resize(std::size_t n) {
      order.resize(n);
      cursor = n;  // forces a shuffle before the first draw
    }
    std::size_t draw(Rng& rng) {
      if (cursor >= order.size()) {
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      return order[cursor++];
    }
  };

  Rng rng_;
  std::size_t batch_size_;
  Pool labeled_, unlabeled_;
};

// ---------------------------------------------------------------------------
// Corpus directory: corpus/{id}.img, corpus/{id}.msk, manifest.txt, split.json

inline nlohmann::json split_to_json(const std::vector<SegSample>& samples, const Split& split, const SplitSpec& spec) {
  auto ids = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(samples[i].id);
    return out;
  };
  return {{"labeled", ids(split.labeled)},
          {"unlabeled", ids(split.unlabeled)},
          {"test", ids(split.test)},
          {"seed", spec.seed}};
}

inline void write_corpus(const std::filesystem::path& dir, const std::vector<SegSample>& samples,
                         const SplitSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "corpus");
  std::string manifest;
  for (const auto& s : samples) {
    io::write_raster(dir / "corpus" / (s.id + ".img"), s.image);
    if (s.mask) io::write_raster(dir / "corpus" / (s.id + ".msk"), *s.mask);
    manifest += s.id + "\n";
  }
  io::write_file_atomic(dir / "manifest.txt", manifest);
  const auto split = make_split(samples.size(), spec);
  io::write_file_atomic(dir / "split.json", split_to_json(samples, split, spec).dump(2) + "\n");
}

inline std::vector<SegSample> read_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto manifest_path = dir / "manifest.txt";
  if (!fs::exists(manifest_path)) throw IOError("missing corpus manifest " + manifest_path.string());
  std::ifstream in(manifest_path);
  std::vector<SegSample> out;
  for (std::string id; std::getline(in, id);) {
    if (id.empty()) continue;
    SegSample s{id, io::read_raster(dir / "corpus" / (id + ".img")), std::nullopt};
    const auto msk = dir / "corpus" / (id + ".msk");
    if (fs::exists(msk)) s.mask = io::read_raster(msk);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IOError("empty corpus at " + dir.string());
  return out;
}

}  // namespace spssl::data
