#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "spssl/errors.hpp"
#include "spssl/rng.hpp"
#include "spssl/tensor.hpp"

namespace spssl::ops {

namespace detail {

using spssl::detail::make_result;
using spssl::detail::Node;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// col[(c*k + ky)*k + kx][oy*wo + ox] = img[c][oy*s + ky - p][ox*s + kx - p]
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* col) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* out = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          T* row = out + oy * wo;
          if (iy < 0 || iy >= H) {
            std::fill(row, row + wo, T(0));
            continue;
          }
          const T* src = img + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            row[ox] = (ix < 0 || ix >= W) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* img) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* in = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= H) continue;
          T* dst = img + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* row = in + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < W) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
bool is_pointwise(std::size_t k, std::size_t stride, std::size_t pad) {
  return k == 1 && stride == 1 && pad == 0;
}

}  // namespace detail

/// 2-D cross-correlation. input [B,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  using namespace detail;
  require(input.rank() == 4, "conv2d", "input must be [B,C,H,W]");
  require(weight.rank() == 4 && weight.dim(2) == weight.dim(3), "conv2d", "weight must be [Cout,Cin,k,k]");
  require(stride >= 1, "conv2d", "stride must be >= 1");
  const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == Ci, "conv2d", "weight expects " + std::to_string(weight.dim(1)) +
                                             " input channels, got " + std::to_string(Ci));
  require(bias.rank() == 1 && bias.dim(0) == Co, "conv2d", "bias must be [Cout]");
  require(H + 2 * padding >= k && W + 2 * padding >= k, "conv2d", "kernel larger than padded input");
  require_finite(input, "conv2d");
  const std::size_t Ho = (H + 2 * padding - k) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - k) / stride + 1;
  const std::size_t K = Ci * k * k, P = Ho * Wo;
  const bool pointwise = is_pointwise<T>(k, stride, padding);

  std::vector<T> out(B * Co * P);
  std::vector<T> col(pointwise ? 0 : K * P);
  ConstMatMap<T> wm(weight.ptr(), Co, K);
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = input.ptr() + b * Ci * H * W;
    if (!pointwise) im2col(src, Ci, H, W, k, stride, padding, Ho, Wo, col.data());
    ConstMatMap<T> cm(pointwise ? src : col.data(), K, P);
    MatMap<T> om(out.data() + b * Co * P, Co, P);
    om.noalias() = wm * cm;
    for (std::size_t c = 0; c < Co; ++c) om.row(static_cast<Eigen::Index>(c)).array() += bias[c];
  }

  auto xn = input.node(), wn = weight.node(), bn = bias.node();
  return make_result<T>(
      "conv2d", {B, Co, Ho, Wo}, std::move(out), {xn, wn, bn},
      [=](Node<T>& self) {
        std::vector<T> colb(pointwise ? 0 : K * P);
        std::vector<T> dcol(pointwise ? 0 : K * P);
        ConstMatMap<T> w(wn->value.data(), Co, K);
        for (std::size_t b = 0; b < B; ++b) {
          ConstMatMap<T> g(self.grad.data() + b * Co * P, Co, P);
          const T* src = xn->value.data() + b * Ci * H * W;
          if (wn->requires_grad) {
            if (!pointwise) im2col(src, Ci, H, W, k, stride, padding, Ho, Wo, colb.data());
            ConstMatMap<T> cm(pointwise ? src : colb.data(), K, P);
            MatMap<T> dw(wn->grad_buffer().data(), Co, K);
            dw.noalias() += g * cm.transpose();
          }
          if (bn->requires_grad) {
            auto& db = bn->grad_buffer();
            // Plain loop: Eigen's vectorized sum peels by address, which makes the
            // result depend on allocation alignment.
            const T* gp = self.grad.data() + b * Co * P;
            for (std::size_t c = 0; c < Co; ++c) {
              T s = 0;
              for (std::size_t i = 0; i < P; ++i) s += gp[c * P + i];
              db[c] += s;
            }
          }
          if (xn->requires_grad) {
            T* dx = xn->grad_buffer().data() + b * Ci * H * W;
            if (pointwise) {
              MatMap<T> dxm(dx, Ci, P);
              dxm.noalias() += w.transpose() * g;
            } else {
              MatMap<T> dc(dcol.data(), K, P);
              dc.noalias() = w.transpose() * g;
              col2im(dcol.data(), Ci, H, W, k, stride, padding, Ho, Wo, dx);
            }
          }
        }
      });
}

/// Transposed convolution without padding. input [B,Cin,H,W],
/// weight [Cin,Cout,k,k], bias [Cout]; output side is (H-1)*stride + k.
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                            std::size_t stride = 2) {
  using namespace detail;
  require(input.rank() == 4, "transposed_conv2d", "input must be [B,C,H,W]");
  require(weight.rank() == 4 && weight.dim(2) == weight.dim(3), "transposed_conv2d",
          "weight must be [Cin,Cout,k,k]");
  require(stride == 1 || stride == 2, "transposed_conv2d", "stride must be 1 or 2");
  const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = weight.dim(1), k = weight.dim(2);
  require(weight.dim(0) == Ci, "transposed_conv2d", "weight/input channel mismatch");
  require(bias.rank() == 1 && bias.dim(0) == Co, "transposed_conv2d", "bias must be [Cout]");
  require_finite(input, "transposed_conv2d");
  const std::size_t Ho = (H - 1) * stride + k, Wo = (W - 1) * stride + k;
  const std::size_t K = Co * k * k, P = H * W;

  std::vector<T> out(B * Co * Ho * Wo, T(0));
  std::vector<T> col(K * P);
  ConstMatMap<T> wm(weight.ptr(), Ci, K);
  for (std::size_t b = 0; b < B; ++b) {
    ConstMatMap<T> xm(input.ptr() + b * Ci * P, Ci, P);
    MatMap<T> cm(col.data(), K, P);
    cm.noalias() = wm.transpose() * xm;
    T* dst = out.data() + b * Co * Ho * Wo;
    col2im(col.data(), Co, Ho, Wo, k, stride, 0, H, W, dst);
    for (std::size_t c = 0; c < Co; ++c) {
      T* plane = dst + c * Ho * Wo;
      for (std::size_t i = 0; i < Ho * Wo; ++i) plane[i] += bias[c];
    }
  }

  auto xn = input.node(), wn = weight.node(), bn = bias.node();
  return make_result<T>(
      "transposed_conv2d", {B, Co, Ho, Wo}, std::move(out), {xn, wn, bn},
      [=](Node<T>& self) {
        std::vector<T> gcol(K * P);
        ConstMatMap<T> w(wn->value.data(), Ci, K);
        for (std::size_t b = 0; b < B; ++b) {
          const T* g = self.grad.data() + b * Co * Ho * Wo;
          im2col(g, Co, Ho, Wo, k, stride, 0, H, W, gcol.data());
          ConstMatMap<T> gc(gcol.data(), K, P);
          if (xn->requires_grad) {
            MatMap<T> dx(xn->grad_buffer().data() + b * Ci * P, Ci, P);
            dx.noalias() += w * gc;
          }
          if (wn->requires_grad) {
            ConstMatMap<T> xm(xn->value.data() + b * Ci * P, Ci, P);
            MatMap<T> dw(wn->grad_buffer().data(), Ci, K);
            dw.noalias() += xm * gc.transpose();
          }
          if (bn->requires_grad) {
            auto& db = bn->grad_buffer();
            for (std::size_t c = 0; c < Co; ++c) {
              T s = 0;
              for (std::size_t i = 0; i < Ho * Wo; ++i) s += g[c * Ho * Wo + i];
              db[c] += s;
            }
          }
        }
      });
}

/// input [B,In], weight [Out,In], bias [Out] -> [B,Out].
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  using namespace detail;
  require(input.rank() == 2 && weight.rank() == 2 && weight.dim(1) == input.dim(1), "linear",
          "expected input [B,In] and weight [Out,In]");
  const std::size_t B = input.dim(0), In = input.dim(1), Out = weight.dim(0);
  require(bias.rank() == 1 && bias.dim(0) == Out, "linear", "bias must be [Out]");
  require_finite(input, "linear");
  std::vector<T> out(B * Out);
  MatMap<T> om(out.data(), B, Out);
  om.noalias() = ConstMatMap<T>(input.ptr(), B, In) * ConstMatMap<T>(weight.ptr(), Out, In).transpose();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Out; ++o) out[b * Out + o] += bias[o];

  auto xn = input.node(), wn = weight.node(), bn = bias.node();
  return make_result<T>("linear", {B, Out}, std::move(out), {xn, wn, bn}, [=](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), B, Out);
    if (xn->requires_grad) {
      MatMap<T>(xn->grad_buffer().data(), B, In).noalias() += g * ConstMatMap<T>(wn->value.data(), Out, In);
    }
    if (wn->requires_grad) {
      MatMap<T>(wn->grad_buffer().data(), Out, In).noalias() +=
          g.transpose() * ConstMatMap<T>(xn->value.data(), B, In);
    }
    if (bn->requires_grad) {
      auto& db = bn->grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Out; ++o) db[o] += self.grad[b * Out + o];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  auto xn = x.node();
  return detail::make_result<T>("relu", x.shape(), std::move(out), {xn}, [xn](detail::Node<T>& self) {
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xn->value[i] > T(0)) dx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  auto xn = x.node();
  return detail::make_result<T>("sigmoid", x.shape(), std::move(out), {xn}, [xn](detail::Node<T>& self) {
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T y = self.value[i];
      dx[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

/// Softmax over axis 1 of a [B,C,...] tensor.
template <typename T>
Tensor<T> softmax_channel(const Tensor<T>& x) {
  detail::require(x.rank() >= 2, "softmax_channel", "need at least [B,C]");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.numel() / (B * C);
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = x.ptr() + b * C * S;
    T* dst = out.data() + b * C * S;
    for (std::size_t s = 0; s < S; ++s) {
      T m = src[s];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, src[c * S + s]);
      T z = 0;
      for (std::size_t c = 0; c < C; ++c) z += (dst[c * S + s] = std::exp(src[c * S + s] - m));
      for (std::size_t c = 0; c < C; ++c) dst[c * S + s] /= z;
    }
  }
  auto xn = x.node();
  return detail::make_result<T>("softmax_channel", x.shape(), std::move(out), {xn},
                                [xn, B, C, S](detail::Node<T>& self) {
                                  auto& dx = xn->grad_buffer();
                                  for (std::size_t b = 0; b < B; ++b) {
                                    const std::size_t o = b * C * S;
                                    for (std::size_t s = 0; s < S; ++s) {
                                      T dot = 0;
                                      for (std::size_t c = 0; c < C; ++c)
                                        dot += self.grad[o + c * S + s] * self.value[o + c * S + s];
                                      for (std::size_t c = 0; c < C; ++c) {
                                        const std::size_t i = o + c * S + s;
                                        dx[i] += self.value[i] * (self.grad[i] - dot);
                                      }
                                    }
                                  }
                                });
}

/// Log-softmax over axis 1.
template <typename T>
Tensor<T> log_softmax_channel(const Tensor<T>& x) {
  detail::require(x.rank() >= 2, "log_softmax_channel", "need at least [B,C]");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.numel() / (B * C);
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = x.ptr() + b * C * S;
    T* dst = out.data() + b * C * S;
    for (std::size_t s = 0; s < S; ++s) {
      T m = src[s];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, src[c * S + s]);
      T z = 0;
      for (std::size_t c = 0; c < C; ++c) z += std::exp(src[c * S + s] - m);
      const T lse = m + std::log(z);
      for (std::size_t c = 0; c < C; ++c) dst[c * S + s] = src[c * S + s] - lse;
    }
  }
  auto xn = x.node();
  return detail::make_result<T>("log_softmax_channel", x.shape(), std::move(out), {xn},
                                [xn, B, C, S](detail::Node<T>& self) {
                                  auto& dx = xn->grad_buffer();
                                  for (std::size_t b = 0; b < B; ++b) {
                                    const std::size_t o = b * C * S;
                                    for (std::size_t s = 0; s < S; ++s) {
                                      T gsum = 0;
                                      for (std::size_t c = 0; c < C; ++c) gsum += self.grad[o + c * S + s];
                                      for (std::size_t c = 0; c < C; ++c) {
                                        const std::size_t i = o + c * S + s;
                                        dx[i] += self.grad[i] - std::exp(self.value[i]) * gsum;
                                      }
                                    }
                                  }
                                });
}

/// Group normalization over [B,C,H,W] with per-channel affine parameters.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::size_t groups, T eps = T(1e-5)) {
  using namespace detail;
  require(x.rank() == 4, "group_norm", "input must be [B,C,H,W]");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  require(groups >= 1 && C % groups == 0, "group_norm", "channels not divisible by groups");
  require(gamma.numel() == C && beta.numel() == C, "group_norm", "affine params must be [C]");
  const std::size_t cg = C / groups, n = cg * S;

  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(B * groups);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (b * C + g * cg) * S;
      T mean = 0;
      for (std::size_t i = 0; i < n; ++i) mean += x[base + i];
      mean /= static_cast<T>(n);
      T var = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = x[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[b * groups + g] = is;
      for (std::size_t c = 0; c < cg; ++c) {
        const std::size_t ch = g * cg + c;
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t i = base + c * S + s;
          xhat[i] = (x[i] - mean) * is;
          out[i] = gamma[ch] * xhat[i] + beta[ch];
        }
      }
    }
  }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result<T>(
      "group_norm", x.shape(), std::move(out), {xn, gn, bn},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& dy = self.grad;
        if (gn->requires_grad) {
          auto& dg = gn->grad_buffer();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t s = 0; s < S; ++s) dg[c] += dy[(b * C + c) * S + s] * xhat[(b * C + c) * S + s];
        }
        if (bn->requires_grad) {
          auto& db = bn->grad_buffer();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t s = 0; s < S; ++s) db[c] += dy[(b * C + c) * S + s];
        }
        if (!xn->requires_grad) return;
        auto& dx = xn->grad_buffer();
        const auto& gam = gn->value;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = (b * C + g * cg) * S;
            T sum_d = 0, sum_dx = 0;
            for (std::size_t c = 0; c < cg; ++c)
              for (std::size_t s = 0; s < S; ++s) {
                const std::size_t i = base + c * S + s;
                const T d = dy[i] * gam[g * cg + c];
                sum_d += d;
                sum_dx += d * xhat[i];
              }
            const T is = inv_std[b * groups + g];
            const T inv_n = T(1) / static_cast<T>(n);
            for (std::size_t c = 0; c < cg; ++c)
              for (std::size_t s = 0; s < S; ++s) {
                const std::size_t i = base + c * S + s;
                const T d = dy[i] * gam[g * cg + c];
                dx[i] += is * (d - inv_n * sum_d - xhat[i] * inv_n * sum_dx);
              }
          }
        }
      });
}

/// Inverted dropout. When `active` is false this is the identity and draws
/// nothing from `rng`.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool active) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
  if (!active || p == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? T(0) : scale;
    out[i] = x[i] * mask[i];
  }
  auto xn = x.node();
  return detail::make_result<T>("dropout", x.shape(), std::move(out), {xn},
                                [xn, mask = std::move(mask)](detail::Node<T>& self) {
                                  auto& dx = xn->grad_buffer();
                                  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * mask[i];
                                });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>("add", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    for (auto* n : {an.get(), bn.get()}) {
      if (!n->requires_grad) continue;
      auto& d = n->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>("sub", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    if (an->requires_grad) {
      auto& d = an->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& d = bn->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>("mul", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    if (an->requires_grad) {
      auto& d = an->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& d = bn->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>("div", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    if (an->requires_grad) {
      auto& d = an->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] / bn->value[i];
    }
    if (bn->requires_grad) {
      auto& d = bn->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] -= self.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
    }
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  auto an = a.node();
  return detail::make_result<T>("square", a.shape(), std::move(out), {an}, [an](detail::Node<T>& self) {
    auto& d = an->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += T(2) * an->value[i] * self.grad[i];
  });
}

/// y = scale * a + shift
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T scale, T shift = T(0)) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * a[i] + shift;
  auto an = a.node();
  return detail::make_result<T>("affine", a.shape(), std::move(out), {an}, [an, scale](detail::Node<T>& self) {
    auto& d = an->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  auto an = a.node();
  return detail::make_result<T>("sum", {1}, {s}, {an}, [an](detail::Node<T>& self) {
    auto& d = an->grad_buffer();
    for (auto& v : d) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return affine(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Sums everything but axis 0: [B,...] -> [B].
template <typename T>
Tensor<T> sum_per_sample(const Tensor<T>& a) {
  const std::size_t B = a.dim(0), S = a.numel() / B;
  std::vector<T> out(B, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) out[b] += a[b * S + s];
  auto an = a.node();
  return detail::make_result<T>("sum_per_sample", {B}, std::move(out), {an}, [an, B, S](detail::Node<T>& self) {
    auto& d = an->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t s = 0; s < S; ++s) d[b * S + s] += self.grad[b];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel_of(shape) == a.numel(), "reshape",
                  to_string(a.shape()) + " -> " + to_string(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto an = a.node();
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {an}, [an](detail::Node<T>& self) {
    auto& d = an->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

/// [B,C,...] -> [B,1,...] holding channel `c`.
template <typename T>
Tensor<T> select_channel(const Tensor<T>& a, std::size_t c) {
  detail::require(a.rank() >= 2 && c < a.dim(1), "select_channel", "channel out of range");
  const std::size_t B = a.dim(0), C = a.dim(1), S = a.numel() / (B * C);
  Shape shape = a.shape();
  shape[1] = 1;
  std::vector<T> out(B * S);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(a.ptr() + (b * C + c) * S, S, out.data() + b * S);
  auto an = a.node();
  return detail::make_result<T>("select_channel", std::move(shape), std::move(out), {an},
                                [an, B, C, S, c](detail::Node<T>& self) {
                                  auto& d = an->grad_buffer();
                                  for (std::size_t b = 0; b < B; ++b)
                                    for (std::size_t s = 0; s < S; ++s) d[(b * C + c) * S + s] += self.grad[b * S + s];
                                });
}

/// Rows [begin, end) of axis 0.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require(begin < end && end <= a.dim(0), "slice_batch", "range out of bounds");
  const std::size_t S = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<T> out(a.ptr() + begin * S, a.ptr() + end * S);
  auto an = a.node();
  return detail::make_result<T>("slice_batch", std::move(shape), std::move(out), {an},
                                [an, begin, S](detail::Node<T>& self) {
                                  auto& d = an->grad_buffer();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) d[begin * S + i] += self.grad[i];
                                });
}

}  // namespace spssl::ops
