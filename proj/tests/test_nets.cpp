#include <gtest/gtest.h>

#include <cmath>

#include "spssl/nets.hpp"
#include "spssl/ops.hpp"

using namespace spssl;

namespace {

TensorF random_image(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  auto t = TensorF::zeros(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform());
  return t;
}

bool bit_equal(const TensorF& a, const TensorF& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

SegNetConfig small_seg() {
  SegNetConfig c;
  c.base_width = 4;
  c.depth = 3;
  return c;
}

}  // namespace

TEST(SegNet, OutputShape) {
  auto cfg = small_seg();
  Rng rng(1);
  auto p = init_segnet<float>(cfg, rng);
  auto y = seg_forward(cfg, p, random_image({2, 1, 16, 24}, 2), ForwardMode::Eval);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 16, 24}));
  EXPECT_TRUE(y.all_finite());
}

TEST(SegNet, IndivisibleInputIsShapeError) {
  auto cfg = small_seg();
  Rng rng(1);
  auto p = init_segnet<float>(cfg, rng);
  EXPECT_THROW(seg_forward(cfg, p, random_image({1, 1, 18, 16}, 2), ForwardMode::Eval), ShapeError);
}

TEST(SegNet, EvalIsDeterministic) {
  auto cfg = small_seg();
  Rng rng(1);
  auto p = init_segnet<float>(cfg, rng);
  auto x = random_image({1, 1, 16, 16}, 3);
  EXPECT_TRUE(bit_equal(seg_forward(cfg, p, x, ForwardMode::Eval), seg_forward(cfg, p, x, ForwardMode::Eval)));
}

TEST(SegNet, McDropoutDiffersAcrossRngStates) {
  auto cfg = small_seg();
  Rng rng(1);
  auto p = init_segnet<float>(cfg, rng);
  auto x = random_image({1, 1, 16, 16}, 3);
  Rng a(10), b(11);
  EXPECT_FALSE(bit_equal(seg_forward(cfg, p, x, ForwardMode::McDropout, &a),
                         seg_forward(cfg, p, x, ForwardMode::McDropout, &b)));
}

TEST(SegNet, DropoutModesNeedRng) {
  auto cfg = small_seg();
  Rng rng(1);
  auto p = init_segnet<float>(cfg, rng);
  EXPECT_THROW(seg_forward(cfg, p, random_image({1, 1, 16, 16}, 3), ForwardMode::Train), ConfigError);
}

TEST(Init, SameSeedSameParams) {
  auto cfg = small_seg();
  Rng a(5), b(5), c(6);
  auto pa = init_segnet<float>(cfg, a), pb = init_segnet<float>(cfg, b), pc = init_segnet<float>(cfg, c);
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(bit_equal(pa[i].second, pb[i].second)) << pa[i].first;
    any_diff |= !bit_equal(pa[i].second, pc[i].second);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Init, HeVarianceOnLargeLayers) {
  SegNetConfig cfg;  // default widths: deepest convs have fan_in 64*9
  Rng rng(9);
  auto p = init_segnet<float>(cfg, rng);
  int checked = 0;
  for (const auto& [name, t] : p) {
    if (t.rank() != 4 || t.numel() < 10000 || name.rfind("up", 0) == 0) continue;
    const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
    double m = 0, v = 0;
    for (float x : t.data()) m += x;
    m /= static_cast<double>(t.numel());
    for (float x : t.data()) v += (x - m) * (x - m);
    v /= static_cast<double>(t.numel());
    EXPECT_NEAR(v / (2.0 / fan_in), 1.0, 0.2) << name;
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(Init, BiasesZeroNormsIdentity) {
  auto cfg = small_seg();
  Rng rng(1);
  auto p = init_segnet<float>(cfg, rng);
  for (const auto& [name, t] : p) {
    const bool bias = name.ends_with(".bias") || name.ends_with(".beta");
    const bool gain = name.ends_with(".gamma");
    for (float v : t.data()) {
      if (bias) EXPECT_EQ(v, 0.f) << name;
      if (gain) EXPECT_EQ(v, 1.f) << name;
    }
  }
}

TEST(Dae, ShapeAndOpenUnitRange) {
  DaeConfig cfg;
  cfg.input_side = 32;
  cfg.depth = 3;
  cfg.latent_dim = 8;
  Rng rng(2);
  auto p = init_dae<float>(cfg, rng);
  auto y = dae_forward(cfg, p, random_image({3, 1, 32, 32}, 4));
  ASSERT_EQ(y.shape(), (Shape{3, 1, 32, 32}));
  for (float v : y.data()) {
    EXPECT_GT(v, 0.f);
    EXPECT_LT(v, 1.f);
  }
}

TEST(Dae, OutOfRangeInputIsDomainError) {
  DaeConfig cfg;
  cfg.input_side = 32;
  cfg.depth = 3;
  Rng rng(2);
  auto p = init_dae<float>(cfg, rng);
  auto x = TensorF::full({1, 1, 32, 32}, 0.5f);
  x[7] = 1.01f;
  EXPECT_THROW(dae_forward(cfg, p, x), DomainError);
  x[7] = 1.0f + 5e-7f;
  EXPECT_NO_THROW(dae_forward(cfg, p, x));
}

TEST(Dae, ZeroedBottleneckMakesOutputInputIndependent) {
  DaeConfig cfg;
  cfg.input_side = 32;
  cfg.depth = 3;
  cfg.latent_dim = 8;
  Rng rng(2);
  auto p = init_dae<float>(cfg, rng);
  LatentPatch<float> zero = [](const TensorF& z) { return TensorF::zeros(z.shape()); };
  auto a = dae_forward(cfg, p, random_image({1, 1, 32, 32}, 5), zero);
  auto b = dae_forward(cfg, p, random_image({1, 1, 32, 32}, 6), zero);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_FALSE(bit_equal(dae_forward(cfg, p, random_image({1, 1, 32, 32}, 5)),
                         dae_forward(cfg, p, random_image({1, 1, 32, 32}, 6))));
}

TEST(Dae, GradientReachesEveryParameter) {
  DaeConfig cfg;
  cfg.input_side = 16;
  cfg.depth = 2;
  cfg.latent_dim = 4;
  Rng rng(3);
  auto p = init_dae<float>(cfg, rng);
  p.set_requires_grad(true);
  auto loss = ops::mean(dae_forward(cfg, p, random_image({2, 1, 16, 16}, 7)));
  loss.backward();
  for (const auto& [name, t] : p) EXPECT_TRUE(t.has_grad()) << name;
}
