#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>

#include "rangeda/diffcore/var.hpp"

namespace rangeda {

// Differentiable operators over (N, C, H, W) tensors. Every op records onto
// the tape when an input is tracked and recording is enabled.

constexpr double kNormEps = 1e-8;

struct ConvPadding {
  // Wrap columns around (azimuth is periodic); rows are always zero padded.
  bool circular_width = false;
};

namespace detail {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMat<Scalar>>;

inline Index wrap_or_invalid(Index x, Index extent, bool circular) {
  if (x >= 0 && x < extent) return x;
  if (!circular) return -1;
  return ((x % extent) + extent) % extent;
}

// cols: (channels*k*k) x (h*w), row-major.
template <typename Scalar>
void im2col(const Scalar* img, Index channels, Index h, Index w, Index k, bool circular,
            Scalar* cols) {
  const Index half = k / 2;
  const Index hw = h * w;
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = img + c * hw;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = cols + ((c * k + ky) * k + kx) * hw;
        const Index dy = ky - half;
        const Index dx = kx - half;
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + dy;
          Scalar* out = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + sy * w;
          for (Index x = 0; x < w; ++x) {
            const Index sx = wrap_or_invalid(x + dx, w, circular);
            out[x] = sx < 0 ? Scalar(0) : src[sx];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index channels, Index h, Index w, Index k, bool circular,
            Scalar* img) {
  const Index half = k / 2;
  const Index hw = h * w;
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = img + c * hw;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = cols + ((c * k + ky) * k + kx) * hw;
        const Index dy = ky - half;
        const Index dx = kx - half;
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const Scalar* in = row + y * w;
          Scalar* dst = plane + sy * w;
          for (Index x = 0; x < w; ++x) {
            const Index sx = wrap_or_invalid(x + dx, w, circular);
            if (sx >= 0) dst[sx] += in[x];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2D convolution, stride 1, "same" padding. weight: (Cout, Cin, k, k), k odd;
/// bias: (Cout) or undefined.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   ConvPadding padding = {}) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const Index n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const Index cout = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != cin || weight.shape()[3] != k || k % 2 == 0) {
    throw ShapeError("conv2d: weight " + weight.shape().str() + " incompatible with input " +
                     x.shape().str());
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias " + bias.shape().str() + " vs weight " + weight.shape().str());
  }
  const Index hw = h * w;
  const Index kk = cin * k * k;
  const bool circ = padding.circular_width;

  Tensor<Scalar> out(Shape{n, cout, h, w});
  detail::ConstRowMap<Scalar> wm(weight.value().data(), cout, kk);
  detail::RowMat<Scalar> cols(kk, hw);
  for (Index b = 0; b < n; ++b) {
    const Scalar* xin = x.value().data() + b * cin * hw;
    detail::RowMap<Scalar> y(out.data() + b * cout * hw, cout, hw);
    if (k == 1) {
      y.noalias() = wm * detail::ConstRowMap<Scalar>(xin, cin, hw);
    } else {
      detail::im2col(xin, cin, h, w, k, circ, cols.data());
      y.noalias() = wm * cols;
    }
    if (bias.defined()) {
      y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.value().data(), cout);
    }
  }

  return detail::record<Scalar>(std::move(out), {x, weight, bias}, [=](Node<Scalar>& self) {
    const Tensor<Scalar>& gy = self.grad;
    Tensor<Scalar> gw(weight.shape());
    Tensor<Scalar> gb(Shape{cout});
    Tensor<Scalar> gx;
    if (x.requires_grad()) gx = Tensor<Scalar>(x.shape());
    detail::RowMap<Scalar> gwm(gw.data(), cout, kk);
    detail::ConstRowMap<Scalar> wmat(weight.value().data(), cout, kk);
    detail::RowMat<Scalar> c(kk, hw);
    for (Index b = 0; b < n; ++b) {
      detail::ConstRowMap<Scalar> dy(gy.data() + b * cout * hw, cout, hw);
      const Scalar* xin = x.value().data() + b * cin * hw;
      if (weight.requires_grad()) {
        if (k == 1) {
          gwm.noalias() += dy * detail::ConstRowMap<Scalar>(xin, cin, hw).transpose();
        } else {
          detail::im2col(xin, cin, h, w, k, circ, c.data());
          gwm.noalias() += dy * c.transpose();
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gb.data(), cout) += dy.rowwise().sum();
      }
      if (x.requires_grad()) {
        if (k == 1) {
          detail::RowMap<Scalar>(gx.data() + b * cin * hw, cin, hw).noalias() += wmat.transpose() * dy;
        } else {
          c.noalias() = wmat.transpose() * dy;
          detail::col2im(c.data(), cin, h, w, k, circ, gx.data() + b * cin * hw);
        }
      }
    }
    detail::accumulate(weight, gw);
    if (bias.defined()) detail::accumulate(bias, gb);
    if (x.requires_grad()) detail::accumulate(x, gx);
  });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope = Scalar(0.01)) {
  Tensor<Scalar> out(x.shape());
  out.array() = (x.value().array() > 0).select(x.value().array(), slope * x.value().array());
  return detail::record<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    Tensor<Scalar> g(x.shape());
    g.array() = (x.value().array() > 0).select(self.grad.array(), slope * self.grad.array());
    detail::accumulate(x, g);
  });
}

/// Batch-free channel normalization: each (sample, channel) plane is
/// standardized over its spatial extent, then scaled by gamma and shifted by
/// beta (both shape (C)).
template <typename Scalar>
Var<Scalar> channel_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta) {
  require_rank(x.shape(), 4, "channel_norm");
  const Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("channel_norm: affine " + gamma.shape().str() + " for input " + x.shape().str());
  }
  Tensor<Scalar> xhat(x.shape());
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std(n * c);
  Tensor<Scalar> out(x.shape());
  for (Index p = 0; p < n * c; ++p) {
    const Index ch = p % c;
    auto xs = x.value().array().segment(p * hw, hw);
    const Scalar mean = xs.mean();
    const Scalar var = (xs - mean).square().mean();
    inv_std[p] = Scalar(1) / std::sqrt(var + Scalar(kNormEps));
    xhat.array().segment(p * hw, hw) = (xs - mean) * inv_std[p];
    out.array().segment(p * hw, hw) =
        gamma.value()[ch] * xhat.array().segment(p * hw, hw) + beta.value()[ch];
  }
  return detail::record<Scalar>(std::move(out), {x, gamma, beta}, [=](Node<Scalar>& self) {
    Tensor<Scalar> gx(x.shape()), gg(Shape{c}), gbeta(Shape{c});
    for (Index p = 0; p < n * c; ++p) {
      const Index ch = p % c;
      auto dy = self.grad.array().segment(p * hw, hw);
      auto xh = xhat.array().segment(p * hw, hw);
      gg[ch] += (dy * xh).sum();
      gbeta[ch] += dy.sum();
      const Scalar mdy = dy.mean();
      const Scalar mdyx = (dy * xh).mean();
      gx.array().segment(p * hw, hw) = gamma.value()[ch] * inv_std[p] * (dy - mdy - xh * mdyx);
    }
    detail::accumulate(x, gx);
    detail::accumulate(gamma, gg);
    detail::accumulate(beta, gbeta);
  });
}

/// Non-overlapping average pooling by (fh, fw).
template <typename Scalar>
Var<Scalar> avg_pool2d(const Var<Scalar>& x, Index fh, Index fw) {
  require_rank(x.shape(), 4, "avg_pool2d");
  const Index n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (fh < 1 || fw < 1 || h % fh != 0 || w % fw != 0) {
    throw ShapeError("avg_pool2d: " + x.shape().str() + " not divisible by (" + std::to_string(fh) +
                     ", " + std::to_string(fw) + ")");
  }
  const Index oh = h / fh, ow = w / fw;
  const Scalar inv = Scalar(1) / Scalar(fh * fw);
  Tensor<Scalar> out(Shape{n, c, oh, ow});
  const auto& xv = x.value();
  for (Index p = 0; p < n * c; ++p) {
    const Scalar* src = xv.data() + p * h * w;
    Scalar* dst = out.data() + p * oh * ow;
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) dst[(y / fh) * ow + xx / fw] += src[y * w + xx];
    }
    for (Index i = 0; i < oh * ow; ++i) dst[i] *= inv;
  }
  return detail::record<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    Tensor<Scalar> gx(x.shape());
    for (Index p = 0; p < n * c; ++p) {
      const Scalar* g = self.grad.data() + p * oh * ow;
      Scalar* dst = gx.data() + p * h * w;
      for (Index y = 0; y < h; ++y) {
        for (Index xx = 0; xx < w; ++xx) dst[y * w + xx] = g[(y / fh) * ow + xx / fw] * inv;
      }
    }
    detail::accumulate(x, gx);
  });
}

/// Nearest-neighbour upsampling by (fh, fw): every value is duplicated.
template <typename Scalar>
Var<Scalar> nearest_upsample2d(const Var<Scalar>& x, Index fh, Index fw) {
  require_rank(x.shape(), 4, "nearest_upsample2d");
  if (fh < 1 || fw < 1) throw ShapeError("nearest_upsample2d: factor < 1");
  const Index n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const Index oh = h * fh, ow = w * fw;
  Tensor<Scalar> out(Shape{n, c, oh, ow});
  for (Index p = 0; p < n * c; ++p) {
    const Scalar* src = x.value().data() + p * h * w;
    Scalar* dst = out.data() + p * oh * ow;
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / fh) * w + xx / fw];
    }
  }
  return detail::record<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    Tensor<Scalar> gx(x.shape());
    for (Index p = 0; p < n * c; ++p) {
      const Scalar* g = self.grad.data() + p * oh * ow;
      Scalar* dst = gx.data() + p * h * w;
      for (Index y = 0; y < oh; ++y) {
        for (Index xx = 0; xx < ow; ++xx) dst[(y / fh) * w + xx / fw] += g[y * ow + xx];
      }
    }
    detail::accumulate(x, gx);
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_rank(a.shape(), 4, "concat_channels");
  require_rank(b.shape(), 4, "concat_channels");
  const Index n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  const Index hw = a.shape()[2] * a.shape()[3];
  if (b.shape()[0] != n || b.shape()[2] != a.shape()[2] || b.shape()[3] != a.shape()[3]) {
    throw ShapeError("concat_channels: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<Scalar> out(Shape{n, ca + cb, a.shape()[2], a.shape()[3]});
  for (Index i = 0; i < n; ++i) {
    out.array().segment(i * (ca + cb) * hw, ca * hw) = a.value().array().segment(i * ca * hw, ca * hw);
    out.array().segment((i * (ca + cb) + ca) * hw, cb * hw) =
        b.value().array().segment(i * cb * hw, cb * hw);
  }
  return detail::record<Scalar>(std::move(out), {a, b}, [=](Node<Scalar>& self) {
    Tensor<Scalar> ga(a.shape()), gb(b.shape());
    for (Index i = 0; i < n; ++i) {
      ga.array().segment(i * ca * hw, ca * hw) = self.grad.array().segment(i * (ca + cb) * hw, ca * hw);
      gb.array().segment(i * cb * hw, cb * hw) =
          self.grad.array().segment((i * (ca + cb) + ca) * hw, cb * hw);
    }
    detail::accumulate(a, ga);
    detail::accumulate(b, gb);
  });
}

/// Softmax across the channel axis at every pixel.
template <typename Scalar>
Var<Scalar> softmax_channels(const Var<Scalar>& x) {
  require_rank(x.shape(), 4, "softmax_channels");
  const Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor<Scalar> out(x.shape());
  for (Index b = 0; b < n; ++b) {
    detail::ConstRowMap<Scalar> in(x.value().data() + b * c * hw, c, hw);
    detail::RowMap<Scalar> o(out.data() + b * c * hw, c, hw);
    const auto mx = in.colwise().maxCoeff().eval();
    o = (in.rowwise() - mx).array().exp().matrix();
    const auto sum = o.colwise().sum().eval();
    o.array().rowwise() /= sum.array();
  }
  Tensor<Scalar> probs = out;
  return detail::record<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    Tensor<Scalar> gx(x.shape());
    for (Index b = 0; b < n; ++b) {
      detail::ConstRowMap<Scalar> p(probs.data() + b * c * hw, c, hw);
      detail::ConstRowMap<Scalar> g(self.grad.data() + b * c * hw, c, hw);
      const auto dot = (p.array() * g.array()).colwise().sum().eval();
      detail::RowMap<Scalar>(gx.data() + b * c * hw, c, hw).array() =
          p.array() * (g.array().rowwise() - dot);
    }
    detail::accumulate(x, gx);
  });
}

/// y = x / (||x|| + eps) with the norm taken over channels at every pixel.
template <typename Scalar>
Var<Scalar> l2_normalize_channels(const Var<Scalar>& x) {
  require_rank(x.shape(), 4, "l2_normalize_channels");
  const Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor<Scalar> out(x.shape());
  Eigen::Array<Scalar, Eigen::Dynamic, 1> norms(n * hw);
  for (Index b = 0; b < n; ++b) {
    detail::ConstRowMap<Scalar> in(x.value().data() + b * c * hw, c, hw);
    const auto nrm = in.colwise().norm().eval();
    norms.segment(b * hw, hw) = nrm.transpose().array();
    detail::RowMap<Scalar>(out.data() + b * c * hw, c, hw).array() =
        in.array().rowwise() / (nrm.array() + Scalar(kNormEps));
  }
  return detail::record<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    Tensor<Scalar> gx(x.shape());
    for (Index b = 0; b < n; ++b) {
      detail::ConstRowMap<Scalar> in(x.value().data() + b * c * hw, c, hw);
      detail::ConstRowMap<Scalar> g(self.grad.data() + b * c * hw, c, hw);
      detail::RowMap<Scalar> out_g(gx.data() + b * c * hw, c, hw);
      const auto xg = (in.array() * g.array()).colwise().sum().eval();
      for (Index p = 0; p < hw; ++p) {
        const Scalar nrm = norms[b * hw + p];
        const Scalar d = nrm + Scalar(kNormEps);
        const Scalar coeff = nrm > 0 ? xg(p) / (nrm * d * d) : Scalar(0);
        out_g.col(p) = g.col(p) / d - in.col(p) * coeff;
      }
    }
    detail::accumulate(x, gx);
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
  return detail::record<Scalar>(std::move(out), {a, b}, [=](Node<Scalar>& self) {
    detail::accumulate(a, self.grad);
    detail::accumulate(b, self.grad);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Scalar> out(a.shape(), a.value().array() - b.value().array());
  return detail::record<Scalar>(std::move(out), {a, b}, [=](Node<Scalar>& self) {
    detail::accumulate(a, self.grad);
    Tensor<Scalar> gb(b.shape(), -self.grad.array());
    detail::accumulate(b, gb);
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
  return detail::record<Scalar>(std::move(out), {a, b}, [=](Node<Scalar>& self) {
    if (a.requires_grad()) detail::accumulate(a, Tensor<Scalar>(a.shape(), self.grad.array() * b.value().array()));
    if (b.requires_grad()) detail::accumulate(b, Tensor<Scalar>(b.shape(), self.grad.array() * a.value().array()));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().array() * s);
  return detail::record<Scalar>(std::move(out), {a}, [=](Node<Scalar>& self) {
    detail::accumulate(a, Tensor<Scalar>(a.shape(), self.grad.array() * s));
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().array() + s);
  return detail::record<Scalar>(std::move(out), {a}, [=](Node<Scalar>& self) {
    detail::accumulate(a, self.grad);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.value().array().sum());
  return detail::record<Scalar>(std::move(out), {a}, [=](Node<Scalar>& self) {
    detail::accumulate(a, Tensor<Scalar>::constant(a.shape(), self.grad[0]));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / Scalar(a.size()));
}

/// (N, C, H, W) -> (N, 1, H, W) sum over channels.
template <typename Scalar>
Var<Scalar> sum_channels(const Var<Scalar>& x) {
  require_rank(x.shape(), 4, "sum_channels");
  const Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor<Scalar> out(Shape{n, 1, x.shape()[2], x.shape()[3]});
  for (Index b = 0; b < n; ++b) {
    detail::RowMap<Scalar>(out.data() + b * hw, 1, hw) =
        detail::ConstRowMap<Scalar>(x.value().data() + b * c * hw, c, hw).colwise().sum();
  }
  return detail::record<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    Tensor<Scalar> gx(x.shape());
    for (Index b = 0; b < n; ++b) {
      detail::RowMap<Scalar>(gx.data() + b * c * hw, c, hw).rowwise() =
          detail::ConstRowMap<Scalar>(self.grad.data() + b * hw, 1, hw).row(0);
    }
    detail::accumulate(x, gx);
  });
}

}  // namespace rangeda
