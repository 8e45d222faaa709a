#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "rangeda/diffcore/ops.hpp"
#include "rangeda/prototypes.hpp"

namespace rangeda {

/// Reciprocal class frequencies, normalized to mean 1 over present classes.
struct ClassWeights {
  std::vector<double> w;

  static ClassWeights uniform(Index num_classes) { return {std::vector<double>(static_cast<std::size_t>(num_classes), 1.0)}; }

  static ClassWeights from_counts(const std::vector<std::int64_t>& counts) {
    ClassWeights cw;
    cw.w.assign(counts.size(), 0.0);
    const double total = double(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}));
    if (total <= 0) throw DomainError("ClassWeights: empty histogram");
    double acc = 0.0;
    int present = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] < 0) throw DomainError("ClassWeights: negative count");
      if (counts[c] == 0) continue;
      cw.w[c] = total / double(counts[c]);
      acc += cw.w[c];
      ++present;
    }
    for (auto& v : cw.w) v *= double(present) / acc;
    return cw;
  }

  Index size() const { return static_cast<Index>(w.size()); }
};

/// Mean squared error over every element.
template <typename Scalar>
Var<Scalar> recon_loss(const Var<Scalar>& x, const Var<Scalar>& recon) {
  require_same_shape(x.shape(), recon.shape(), "recon_loss");
  const auto d = sub(recon, x);
  return mean(mul(d, d));
}

/// Mean over pixels of w_y * -log softmax(logits)_y.
template <typename Scalar>
Var<Scalar> wce_loss(const Var<Scalar>& logits, const LabelBatch& labels, const ClassWeights& weights) {
  require_rank(logits.shape(), 4, "wce_loss");
  const Index n = logits.shape()[0], k = logits.shape()[1], hw = logits.shape()[2] * logits.shape()[3];
  if (labels.batch != n || labels.height * labels.width != hw) {
    throw ShapeError("wce_loss: logits " + logits.shape().str() + " vs labels");
  }
  if (weights.size() != k) throw ShapeError("wce_loss: weight count does not match classes");
  const auto& x = logits.value();
  Tensor<Scalar> probs(logits.shape());
  double total = 0.0;
  for (Index b = 0; b < n; ++b) {
    for (Index p = 0; p < hw; ++p) {
      const std::int32_t y = labels.data[b * hw + p];
      if (y < 0 || y >= k) throw DomainError("wce_loss: label " + std::to_string(y) + " out of range");
      Scalar mx = x[(b * k) * hw + p];
      for (Index c = 1; c < k; ++c) mx = std::max(mx, x[(b * k + c) * hw + p]);
      Scalar z = 0;
      for (Index c = 0; c < k; ++c) {
        const Scalar e = std::exp(x[(b * k + c) * hw + p] - mx);
        probs[(b * k + c) * hw + p] = e;
        z += e;
      }
      for (Index c = 0; c < k; ++c) probs[(b * k + c) * hw + p] /= z;
      const double log_p = double(x[(b * k + y) * hw + p] - mx) - std::log(double(z));
      total -= weights.w[static_cast<std::size_t>(y)] * log_p;
    }
  }
  const Index pixels = n * hw;
  auto out = Tensor<Scalar>::scalar(Scalar(total / double(pixels)));
  LabelBatch lab = labels;
  std::vector<double> w = weights.w;
  return detail::record<Scalar>(std::move(out), {logits}, [=](Node<Scalar>& self) {
    Tensor<Scalar> g(logits.shape());
    const Scalar up = self.grad[0] / Scalar(pixels);
    for (Index b = 0; b < n; ++b) {
      for (Index p = 0; p < hw; ++p) {
        const std::int32_t y = lab.data[b * hw + p];
        const Scalar s = up * Scalar(w[static_cast<std::size_t>(y)]);
        for (Index c = 0; c < k; ++c) {
          const Index i = (b * k + c) * hw + p;
          g[i] = s * (probs[i] - (c == y ? Scalar(1) : Scalar(0)));
        }
      }
    }
    detail::accumulate(logits, g);
  });
}

/// Lovász extension of the Jaccard loss for one class. `errors` and `fg` are
/// per pixel; returns the loss and writes d loss / d errors into `grad`.
inline double lovasz_class_loss(const std::vector<double>& errors, const std::vector<std::uint8_t>& fg,
                                std::vector<double>& grad) {
  const std::size_t n = errors.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
  const double gts = double(std::count(fg.begin(), fg.end(), std::uint8_t{1}));
  grad.assign(n, 0.0);
  double loss = 0.0, prev = 0.0, cum_fg = 0.0, cum_bg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = order[i];
    cum_fg += fg[j];
    cum_bg += 1 - fg[j];
    const double inter = gts - cum_fg;
    const double uni = gts + cum_bg;
    const double jac = uni > 0 ? 1.0 - inter / uni : 0.0;
    grad[j] = jac - prev;
    prev = jac;
    loss += errors[j] * grad[j];
  }
  return loss;
}

/// Lovász-softmax over (N, K, H, W) probabilities, averaged over classes
/// present in the labels.
template <typename Scalar>
Var<Scalar> lovasz_softmax(const Var<Scalar>& probs, const LabelBatch& labels) {
  require_rank(probs.shape(), 4, "lovasz_softmax");
  const Index n = probs.shape()[0], k = probs.shape()[1], hw = probs.shape()[2] * probs.shape()[3];
  if (labels.batch != n || labels.height * labels.width != hw) {
    throw ShapeError("lovasz_softmax: probs " + probs.shape().str() + " vs labels");
  }
  const auto& pv = probs.value();
  for (Index i = 0; i < pv.size(); ++i) {
    if (!(pv[i] >= Scalar(0) && pv[i] <= Scalar(1))) throw DomainError("lovasz_softmax: probability outside [0, 1]");
  }
  const Index pixels = n * hw;
  std::vector<std::uint8_t> present(static_cast<std::size_t>(k), 0);
  for (Index i = 0; i < pixels; ++i) {
    const auto y = labels.data[i];
    if (y < 0 || y >= k) throw DomainError("lovasz_softmax: label out of range");
    present[static_cast<std::size_t>(y)] = 1;
  }
  const auto n_present = std::count(present.begin(), present.end(), std::uint8_t{1});
  Tensor<Scalar> grad_probs(probs.shape());
  double total = 0.0;
  std::vector<double> errors(static_cast<std::size_t>(pixels)), grad;
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(pixels));
  for (Index c = 0; c < k; ++c) {
    if (!present[static_cast<std::size_t>(c)]) continue;
    for (Index b = 0; b < n; ++b) {
      for (Index p = 0; p < hw; ++p) {
        const auto i = static_cast<std::size_t>(b * hw + p);
        fg[i] = labels.data[b * hw + p] == c ? 1 : 0;
        const double pc = double(pv[(b * k + c) * hw + p]);
        errors[i] = fg[i] ? 1.0 - pc : pc;
      }
    }
    total += lovasz_class_loss(errors, fg, grad);
    for (Index b = 0; b < n; ++b) {
      for (Index p = 0; p < hw; ++p) {
        const auto i = static_cast<std::size_t>(b * hw + p);
        grad_probs[(b * k + c) * hw + p] = Scalar(fg[i] ? -grad[i] : grad[i]) / Scalar(n_present);
      }
    }
  }
  auto out = Tensor<Scalar>::scalar(n_present > 0 ? Scalar(total / double(n_present)) : Scalar(0));
  return detail::record<Scalar>(std::move(out), {probs}, [=](Node<Scalar>& self) {
    detail::accumulate(probs, Tensor<Scalar>(probs.shape(), grad_probs.array() * self.grad[0]));
  });
}

/// Differentiable cosine similarity between each pixel feature and the
/// (constant) prototype of its pseudo label, shape (N, 1, H, W). Pass an
/// undefined feat_enc for F-only features.
template <typename Scalar>
Var<Scalar> assigned_similarity(const Var<Scalar>& feat_enc, const Var<Scalar>& feat_dec,
                                const PrototypeBank<Scalar>& bank, const LabelBatch& pseudo) {
  require_rank(feat_dec.shape(), 4, "assigned_similarity");
  const Index n = feat_dec.shape()[0], h = feat_dec.shape()[2], w = feat_dec.shape()[3], hw = h * w;
  if (pseudo.batch != n || pseudo.height != h || pseudo.width != w) {
    throw ShapeError("assigned_similarity: features " + feat_dec.shape().str() + " vs pseudo labels");
  }
  Var<Scalar> f = l2_normalize_channels(feat_dec);
  if (feat_enc.defined()) f = concat_channels(l2_normalize_channels(feat_enc), f);
  f = l2_normalize_channels(f);
  const Index d = f.shape()[1];
  if (d != bank.dim()) throw ShapeError("assigned_similarity: feature dim does not match the prototype bank");
  Tensor<Scalar> targets(f.shape());
  for (Index b = 0; b < n; ++b) {
    for (Index p = 0; p < hw; ++p) {
      const auto c = pseudo.data[b * hw + p];
      if (c < 0 || c >= bank.num_classes()) throw DomainError("assigned_similarity: pseudo label out of range");
      if (!bank.initialized[static_cast<std::size_t>(c)]) continue;
      const Scalar nrm = bank.proto.row(c).norm();
      if (nrm <= 0) continue;
      for (Index j = 0; j < d; ++j) targets[(b * d + j) * hw + p] = bank.proto(c, j) / nrm;
    }
  }
  return sum_channels(mul(f, Var<Scalar>::constant(std::move(targets))));
}

/// -sum(tau_y * M * sim) / count(M = 1); zero when nothing is selected.
template <typename Scalar>
Var<Scalar> epl_loss(const Var<Scalar>& sim, const LabelBatch& pseudo, const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>& mask,
                     const std::vector<double>& tau) {
  require_rank(sim.shape(), 4, "epl_loss");
  if (sim.shape()[1] != 1 || mask.size() != sim.size() || pseudo.pixels() != sim.size()) {
    throw ShapeError("epl_loss: sim " + sim.shape().str() + " vs mask/pseudo labels");
  }
  const Index selected = (mask != 0).count();
  Tensor<Scalar> weight(sim.shape());
  if (selected > 0) {
    for (Index i = 0; i < sim.size(); ++i) {
      if (mask[i]) weight[i] = Scalar(-tau.at(static_cast<std::size_t>(pseudo.data[i])) / double(selected));
    }
  }
  return sum(mul(sim, Var<Scalar>::constant(std::move(weight))));
}

/// wce + ls + lambda * epl. An undefined epl is treated as zero.
template <typename Scalar>
Var<Scalar> total_loss(const Var<Scalar>& wce, const Var<Scalar>& ls, const Var<Scalar>& epl, double lambda) {
  if (lambda < 0) throw DomainError("total_loss: lambda must be >= 0");
  Var<Scalar> out = add(wce, ls);
  if (epl.defined() && lambda > 0) out = add(out, scale(epl, Scalar(lambda)));
  return out;
}

}  // namespace rangeda
