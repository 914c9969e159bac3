#include <gtest/gtest.h>

#include <filesystem>

#include "spssl/io.hpp"
#include "spssl/ops.hpp"
#include "spssl/params.hpp"
#include "spssl/rng.hpp"

using namespace spssl;

namespace {

ModelParams<double> one_weight(double w) {
  ModelParams<double> p;
  p.add("w", TensorD::full({1}, w)).set_requires_grad(true);
  return p;
}

void set_grad(ModelParams<double>& p, double g) {
  auto loss = ops::affine(ops::sum(p.at("w")), g);
  loss.backward();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "spssl_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Sgd, PlainStep) {
  auto p = one_weight(1.0);
  set_grad(p, 1.0);
  sgd_step(p, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(p.at("w")[0], 0.9);
}

TEST(Sgd, ZeroLearningRateLeavesWeights) {
  auto p = one_weight(0.37);
  set_grad(p, 5.0);
  sgd_step(p, 0.0, 0.9);
  EXPECT_EQ(p.at("w")[0], 0.37);
}

TEST(Sgd, MomentumRecurrence) {
  auto p = one_weight(0.0);
  set_grad(p, 1.0);
  sgd_step(p, 0.1, 0.9);
  EXPECT_NEAR(p.at("w")[0], -0.1, 1e-15);
  p.zero_grad();
  set_grad(p, 1.0);
  sgd_step(p, 0.1, 0.9);
  EXPECT_NEAR(p.momentum.at("w")[0], 1.9, 1e-15);
  EXPECT_NEAR(p.at("w")[0], -0.29, 1e-15);
}

TEST(Sgd, MissingGradIsStateError) {
  auto p = one_weight(1.0);
  EXPECT_THROW(sgd_step(p, 0.1, 0.9), StateError);
}

TEST(Params, DuplicateAndUnknownNames) {
  ModelParams<float> p;
  p.add("a", TensorF::zeros({2}));
  EXPECT_THROW(p.add("a", TensorF::zeros({2})), ConfigError);
  EXPECT_THROW(p.at("b"), ConfigError);
}

TEST(Params, CloneIsDeep) {
  ModelParams<float> p;
  p.add("a", TensorF::full({3}, 1.f));
  auto q = p.clone();
  q.at("a")[0] = 5.f;
  EXPECT_EQ(p.at("a")[0], 1.f);
}

TEST(Io, RasterRoundTripIsBitExact) {
  Rng rng(3);
  std::vector<float> v(2 * 5 * 7);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  auto t = TensorF::from({2, 5, 7}, v);
  const auto path = scratch("r.img");
  io::write_raster(path, t);
  auto back = io::read_raster(path);
  ASSERT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint32_t>(back[i]), std::bit_cast<std::uint32_t>(v[i]));
}

TEST(Io, RasterHeaderLayout) {
  auto bytes = io::encode_raster(TensorF::full({2, 3}, 1.f));
  EXPECT_EQ(bytes.substr(0, 6), "SPRAS1");
  EXPECT_EQ(bytes.size(), 6u + 4u + 2u * 4u + 6u * 4u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2u);  // rank, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 2u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 3u);
}

TEST(Io, BadMagicIsIOError) {
  EXPECT_THROW(io::decode_raster(std::string("NOPE00\0\0\0\0", 10)), IOError);
  EXPECT_THROW(io::decode_checkpoint(std::string("SPRAS1")), IOError);
}

TEST(Io, CheckpointRoundTripPreservesOrderAndValues) {
  ModelParams<float> p;
  p.add("z.last", TensorF::full({2, 2}, 0.5f));
  p.add("a.first", TensorF::full({3}, -1.25f));
  const auto path = scratch("p.ckpt");
  io::save_checkpoint(path, p);
  auto q = io::load_checkpoint<float>(path);
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q[0].first, "z.last");
  EXPECT_EQ(q[1].first, "a.first");
  EXPECT_EQ(q.at("a.first")[2], -1.25f);
  EXPECT_EQ(io::encode_checkpoint(q), io::encode_checkpoint(p));
}

TEST(Io, MissingCheckpointIsIOError) {
  EXPECT_THROW(io::load_checkpoint<float>(scratch("does_not_exist.ckpt")), IOError);
}

TEST(Io, LoadIntoChecksLayout) {
  ModelParams<float> p;
  p.add("w", TensorF::zeros({2}));
  const auto path = scratch("l.ckpt");
  io::save_checkpoint(path, p);
  ModelParams<float> q;
  q.add("w", TensorF::zeros({3}));
  EXPECT_THROW(io::load_into(path, q), ShapeError);
}
