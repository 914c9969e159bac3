#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "spssl/errors.hpp"
#include "spssl/ops.hpp"
#include "spssl/params.hpp"
#include "spssl/rng.hpp"
#include "spssl/tensor.hpp"

namespace spssl {

enum class ForwardMode { Train, Eval, McDropout };

/// 2-D V-net style encoder/decoder with additive skips.
struct SegNetConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::size_t base_width = 8;
  std::size_t depth = 4;
  double dropout_p = 0.5;
  std::size_t groups = 4;

  std::size_t width(std::size_t level) const { return base_width << level; }

  void validate() const {
    if (depth < 2) throw ConfigError("SegNetConfig: depth must be >= 2");
    if (num_classes < 2) throw ConfigError("SegNetConfig: num_classes must be >= 2");
    if (in_channels < 1 || base_width < 1) throw ConfigError("SegNetConfig: widths must be >= 1");
    if (base_width % groups != 0) throw ConfigError("SegNetConfig: base_width must be divisible by groups");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("SegNetConfig: dropout_p must be in [0,1)");
  }

  std::string architecture_id() const {
    return "segnet2d:in=" + std::to_string(in_channels) + ",classes=" + std::to_string(num_classes) +
           ",width=" + std::to_string(base_width) + ",depth=" + std::to_string(depth) +
           ",groups=" + std::to_string(groups);
  }
};

/// Denoising autoencoder over single-channel label maps. No skip
/// connections; a dense bottleneck of `latent_dim` units.
struct DaeConfig {
  std::size_t latent_dim = 64;
  std::size_t in_channels = 1;
  std::size_t depth = 4;
  std::size_t base_width = 8;
  std::size_t input_side = 64;
  std::size_t groups = 4;

  std::size_t width(std::size_t level) const { return base_width << level; }
  std::size_t bottom_side() const { return input_side >> (depth - 1); }
  std::size_t flat_dim() const { return width(depth - 1) * bottom_side() * bottom_side(); }

  void validate() const {
    if (latent_dim < 1) throw ConfigError("DaeConfig: latent_dim must be >= 1");
    if (depth < 2) throw ConfigError("DaeConfig: depth must be >= 2");
    if (base_width % groups != 0) throw ConfigError("DaeConfig: base_width must be divisible by groups");
    if (input_side % (std::size_t{1} << (depth - 1)) != 0) {
      throw ConfigError("DaeConfig: input_side must be divisible by 2^(depth-1)");
    }
  }

  std::string architecture_id() const {
    return "dae2d:in=" + std::to_string(in_channels) + ",latent=" + std::to_string(latent_dim) +
           ",width=" + std::to_string(base_width) + ",depth=" + std::to_string(depth) +
           ",side=" + std::to_string(input_side) + ",groups=" + std::to_string(groups);
  }
};

namespace nets_detail {

template <typename T>
Tensor<T> he_normal(Shape shape, double fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / fan_in);
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, sd));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
void add_conv(ModelParams<T>& p, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng) {
  p.add(name + ".weight", he_normal<T>({cout, cin, k, k}, static_cast<double>(cin * k * k), rng));
  p.add(name + ".bias", Tensor<T>::zeros({cout}, true));
}

// Transposed conv fan-in counts the inputs that actually reach one output pixel.
template <typename T>
void add_upconv(ModelParams<T>& p, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
  p.add(name + ".weight", he_normal<T>({cin, cout, 2, 2}, static_cast<double>(cin), rng));
  p.add(name + ".bias", Tensor<T>::zeros({cout}, true));
}

template <typename T>
void add_norm(ModelParams<T>& p, const std::string& name, std::size_t channels) {
  p.add(name + ".gamma", Tensor<T>::full({channels}, T(1), true));
  p.add(name + ".beta", Tensor<T>::zeros({channels}, true));
}

// conv3x3 + group norm + relu
template <typename T>
void add_block(ModelParams<T>& p, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
  add_conv(p, name + ".conv", cin, cout, 3, rng);
  add_norm<T>(p, name + ".norm", cout);
}

template <typename T>
Tensor<T> block(const ModelParams<T>& p, const std::string& name, const Tensor<T>& x, std::size_t groups) {
  auto y = ops::conv2d(x, p.at(name + ".conv.weight"), p.at(name + ".conv.bias"), 1, 1);
  y = ops::group_norm(y, p.at(name + ".norm.gamma"), p.at(name + ".norm.beta"), groups);
  return ops::relu(y);
}

template <typename T>
Tensor<T> down(const ModelParams<T>& p, const std::string& name, const Tensor<T>& x, std::size_t groups) {
  auto y = ops::conv2d(x, p.at(name + ".conv.weight"), p.at(name + ".conv.bias"), 2, 0);
  y = ops::group_norm(y, p.at(name + ".norm.gamma"), p.at(name + ".norm.beta"), groups);
  return ops::relu(y);
}

template <typename T>
Tensor<T> up(const ModelParams<T>& p, const std::string& name, const Tensor<T>& x, std::size_t groups) {
  auto y = ops::transposed_conv2d(x, p.at(name + ".conv.weight"), p.at(name + ".conv.bias"), 2);
  y = ops::group_norm(y, p.at(name + ".norm.gamma"), p.at(name + ".norm.beta"), groups);
  return ops::relu(y);
}

inline std::string lvl(const char* prefix, std::size_t l) { return prefix + std::to_string(l); }

}  // namespace nets_detail

/// He-initialized segmentation network parameters.
template <typename T = float>
ModelParams<T> init_segnet(const SegNetConfig& cfg, Rng& rng) {
  using namespace nets_detail;
  cfg.validate();
  ModelParams<T> p;
  p.architecture_id = cfg.architecture_id();
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t w = cfg.width(l);
    add_block(p, lvl("enc", l) + ".0", l == 0 ? cfg.in_channels : w, w, rng);
    add_block(p, lvl("enc", l) + ".1", w, w, rng);
    if (l + 1 < cfg.depth) {
      add_conv(p, lvl("down", l) + ".conv", w, cfg.width(l + 1), 2, rng);
      add_norm<T>(p, lvl("down", l) + ".norm", cfg.width(l + 1));
    }
  }
  for (std::size_t l = cfg.depth - 1; l-- > 0;) {
    const std::size_t w = cfg.width(l);
    add_upconv(p, lvl("up", l) + ".conv", cfg.width(l + 1), w, rng);
    add_norm<T>(p, lvl("up", l) + ".norm", w);
    add_block(p, lvl("dec", l) + ".0", w, w, rng);
    add_block(p, lvl("dec", l) + ".1", w, w, rng);
  }
  add_conv(p, "head", cfg.width(0), cfg.num_classes, 1, rng);
  return p;
}

/// Logits [B,C,H,W] for image [B,in,H,W]. Dropout (on the two deepest
/// encoder levels) is active in Train and McDropout modes and then requires
/// `rng`.
template <typename T>
Tensor<T> seg_forward(const SegNetConfig& cfg, const ModelParams<T>& p, const Tensor<T>& image,
                      ForwardMode mode, Rng* rng = nullptr) {
  using namespace nets_detail;
  if (image.rank() != 4 || image.dim(1) != cfg.in_channels) {
    throw ShapeError("seg_forward: expected [B," + std::to_string(cfg.in_channels) + ",H,W], got " +
                     to_string(image.shape()));
  }
  const std::size_t f = std::size_t{1} << (cfg.depth - 1);
  if (image.dim(2) % f != 0 || image.dim(3) % f != 0) {
    throw ShapeError("seg_forward: spatial dims must be divisible by " + std::to_string(f));
  }
  const bool drop = mode != ForwardMode::Eval && cfg.dropout_p > 0.0;
  if (drop && rng == nullptr) throw ConfigError("seg_forward: dropout mode requires an rng");

  std::vector<Tensor<T>> skips;
  Tensor<T> x = image;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    x = block(p, lvl("enc", l) + ".0", x, cfg.groups);
    x = block(p, lvl("enc", l) + ".1", x, cfg.groups);
    if (drop && l + 2 >= cfg.depth) x = ops::dropout(x, cfg.dropout_p, *rng, true);
    if (l + 1 < cfg.depth) {
      skips.push_back(x);
      x = down(p, lvl("down", l), x, cfg.groups);
    }
  }
  for (std::size_t l = cfg.depth - 1; l-- > 0;) {
    x = up(p, lvl("up", l), x, cfg.groups);
    x = ops::add(x, skips[l]);
    x = block(p, lvl("dec", l) + ".0", x, cfg.groups);
    x = block(p, lvl("dec", l) + ".1", x, cfg.groups);
  }
  return ops::conv2d(x, p.at("head.weight"), p.at("head.bias"), 1, 0);
}

template <typename T = float>
ModelParams<T> init_dae(const DaeConfig& cfg, Rng& rng) {
  using namespace nets_detail;
  cfg.validate();
  ModelParams<T> p;
  p.architecture_id = cfg.architecture_id();
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t w = cfg.width(l);
    add_block(p, lvl("enc", l) + ".0", l == 0 ? cfg.in_channels : w, w, rng);
    add_block(p, lvl("enc", l) + ".1", w, w, rng);
    if (l + 1 < cfg.depth) {
      add_conv(p, lvl("down", l) + ".conv", w, cfg.width(l + 1), 2, rng);
      add_norm<T>(p, lvl("down", l) + ".norm", cfg.width(l + 1));
    }
  }
  const auto flat = cfg.flat_dim();
  p.add("encode_fc.weight", he_normal<T>({cfg.latent_dim, flat}, static_cast<double>(flat), rng));
  p.add("encode_fc.bias", Tensor<T>::zeros({cfg.latent_dim}, true));
  p.add("decode_fc.weight", he_normal<T>({flat, cfg.latent_dim}, static_cast<double>(cfg.latent_dim), rng));
  p.add("decode_fc.bias", Tensor<T>::zeros({flat}, true));
  for (std::size_t l = cfg.depth - 1; l-- > 0;) {
    const std::size_t w = cfg.width(l);
    add_upconv(p, lvl("up", l) + ".conv", cfg.width(l + 1), w, rng);
    add_norm<T>(p, lvl("up", l) + ".norm", w);
    add_block(p, lvl("dec", l) + ".0", w, w, rng);
    add_block(p, lvl("dec", l) + ".1", w, w, rng);
  }
  add_conv(p, "head", cfg.width(0), cfg.in_channels, 1, rng);
  return p;
}

/// Encoder f_e: label map [B,1,S,S] in [0,1] -> latent [B,d].
template <typename T>
Tensor<T> dae_encode(const DaeConfig& cfg, const ModelParams<T>& p, const Tensor<T>& prob_map) {
  using namespace nets_detail;
  if (prob_map.rank() != 4 || prob_map.dim(1) != cfg.in_channels || prob_map.dim(2) != cfg.input_side ||
      prob_map.dim(3) != cfg.input_side) {
    throw ShapeError("dae_encode: expected [B," + std::to_string(cfg.in_channels) + "," +
                     std::to_string(cfg.input_side) + "," + std::to_string(cfg.input_side) + "], got " +
                     to_string(prob_map.shape()));
  }
  for (T v : prob_map.data()) {
    if (!(v >= T(-1e-6) && v <= T(1 + 1e-6))) throw DomainError("dae_forward: input outside [0,1]");
  }
  Tensor<T> x = prob_map;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    x = block(p, lvl("enc", l) + ".0", x, cfg.groups);
    x = block(p, lvl("enc", l) + ".1", x, cfg.groups);
    if (l + 1 < cfg.depth) x = down(p, lvl("down", l), x, cfg.groups);
  }
  x = ops::reshape(x, {prob_map.dim(0), cfg.flat_dim()});
  return ops::linear(x, p.at("encode_fc.weight"), p.at("encode_fc.bias"));
}

/// Decoder f_d: latent [B,d] -> reconstruction [B,1,S,S] in (0,1).
template <typename T>
Tensor<T> dae_decode(const DaeConfig& cfg, const ModelParams<T>& p, const Tensor<T>& latent) {
  using namespace nets_detail;
  if (latent.rank() != 2 || latent.dim(1) != cfg.latent_dim) throw ShapeError("dae_decode: latent must be [B,d]");
  const std::size_t B = latent.dim(0), s = cfg.bottom_side();
  auto x = ops::relu(ops::linear(latent, p.at("decode_fc.weight"), p.at("decode_fc.bias")));
  x = ops::reshape(x, {B, cfg.width(cfg.depth - 1), s, s});
  for (std::size_t l = cfg.depth - 1; l-- > 0;) {
    x = up(p, lvl("up", l), x, cfg.groups);
    x = block(p, lvl("dec", l) + ".0", x, cfg.groups);
    x = block(p, lvl("dec", l) + ".1", x, cfg.groups);
  }
  return ops::sigmoid(ops::conv2d(x, p.at("head.weight"), p.at("head.bias"), 1, 0));
}

/// Optional hook applied to the bottleneck activation (activation patching).
template <typename T>
using LatentPatch = std::function<Tensor<T>(const Tensor<T>&)>;

/// f_d(f_e(x)).
template <typename T>
Tensor<T> dae_forward(const DaeConfig& cfg, const ModelParams<T>& p, const Tensor<T>& prob_map,
                      const LatentPatch<T>& patch = {}) {
  auto z = dae_encode(cfg, p, prob_map);
  if (patch) z = patch(z);
  return dae_decode(cfg, p, z);
}

}  // namespace spssl
