#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "rangeda/diffcore/ops.hpp"

namespace rangeda {

/// Per-class enhanced prototypes [mean normalized F' ; mean normalized F],
/// maintained as exponential moving averages. With `enc_dim == 0` the bank
/// holds F-only prototypes.
template <typename Scalar>
struct PrototypeBank {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Index enc_dim = 0;
  Index dec_dim = 0;
  Matrix proto;                   // (num_classes, enc_dim + dec_dim)
  std::vector<bool> initialized;  // per class
  Scalar alpha = Scalar(0.99);

  PrototypeBank() = default;
  PrototypeBank(Index num_classes, Index enc, Index dec, Scalar a = Scalar(0.99))
      : enc_dim(enc), dec_dim(dec), proto(Matrix::Zero(num_classes, enc + dec)),
        initialized(static_cast<std::size_t>(num_classes), false), alpha(a) {}

  Index num_classes() const { return proto.rows(); }
  Index dim() const { return proto.cols(); }
  bool any_initialized() const { return std::find(initialized.begin(), initialized.end(), true) != initialized.end(); }
  void reset() {
    proto.setZero();
    std::fill(initialized.begin(), initialized.end(), false);
  }
};

template <typename Scalar>
struct BatchPrototypes {
  typename PrototypeBank<Scalar>::Matrix current;  // (num_classes, dim); zero rows for absent classes
  std::vector<Index> counts;
};

namespace detail {

// Writes [F'/(|F'|+eps) ; F/(|F|+eps)] of pixel (n, y, x) into out.
template <typename Scalar>
void pixel_feature(const Tensor<Scalar>* feat_enc, const Tensor<Scalar>& feat_dec, Index n, Index y, Index x,
                   Scalar* out) {
  auto normalize_into = [&](const Tensor<Scalar>& f, Scalar* dst) {
    const Index c = f.dim(1);
    Scalar sq = 0;
    for (Index k = 0; k < c; ++k) {
      const Scalar v = f.at(n, k, y, x);
      sq += v * v;
    }
    const Scalar denom = std::sqrt(sq) + Scalar(kNormEps);
    for (Index k = 0; k < c; ++k) dst[k] = f.at(n, k, y, x) / denom;
    return c;
  };
  Index offset = 0;
  if (feat_enc) offset = normalize_into(*feat_enc, out);
  normalize_into(feat_dec, out + offset);
}

template <typename Scalar>
void check_feature_shapes(const Tensor<Scalar>* feat_enc, const Tensor<Scalar>& feat_dec, Index n, Index h,
                          Index w, const char* op) {
  require_rank(feat_dec.shape(), 4, op);
  if (feat_dec.dim(0) != n || feat_dec.dim(2) != h || feat_dec.dim(3) != w) {
    throw ShapeError(std::string(op) + ": features " + feat_dec.shape().str() + " vs labels (" + std::to_string(n) +
                     ", " + std::to_string(h) + ", " + std::to_string(w) + ")");
  }
  if (feat_enc && (feat_enc->dim(0) != n || feat_enc->dim(2) != h || feat_enc->dim(3) != w)) {
    throw ShapeError(std::string(op) + ": encoder features " + feat_enc->shape().str() + " vs decoder " +
                     feat_dec.shape().str());
  }
}

}  // namespace detail

/// Class means of per-pixel normalized features over a labelled batch.
/// Pass feat_enc == nullptr for F-only prototypes.
template <typename Scalar>
BatchPrototypes<Scalar> batch_prototypes(const Tensor<Scalar>* feat_enc, const Tensor<Scalar>& feat_dec,
                                         const LabelBatch& labels, Index num_classes) {
  detail::check_feature_shapes(feat_enc, feat_dec, labels.batch, labels.height, labels.width, "batch_prototypes");
  const Index dim = (feat_enc ? feat_enc->dim(1) : 0) + feat_dec.dim(1);
  BatchPrototypes<Scalar> out;
  out.current = PrototypeBank<Scalar>::Matrix::Zero(num_classes, dim);
  out.counts.assign(static_cast<std::size_t>(num_classes), 0);
  std::vector<Scalar> f(static_cast<std::size_t>(dim));
  for (Index n = 0; n < labels.batch; ++n) {
    for (Index y = 0; y < labels.height; ++y) {
      for (Index x = 0; x < labels.width; ++x) {
        const std::int32_t c = labels(n, y, x);
        if (c < 0 || c >= num_classes) throw DomainError("batch_prototypes: label out of range");
        detail::pixel_feature(feat_enc, feat_dec, n, y, x, f.data());
        out.current.row(c) += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(f.data(), dim);
        ++out.counts[static_cast<std::size_t>(c)];
      }
    }
  }
  for (Index c = 0; c < num_classes; ++c) {
    if (out.counts[static_cast<std::size_t>(c)] > 0) out.current.row(c) /= Scalar(out.counts[static_cast<std::size_t>(c)]);
  }
  return out;
}

/// First observation copies; later ones blend alpha * old + (1 - alpha) * new.
template <typename Scalar>
void ema_update(PrototypeBank<Scalar>& bank, const BatchPrototypes<Scalar>& batch) {
  if (batch.current.rows() != bank.num_classes() || batch.current.cols() != bank.dim()) {
    throw ShapeError("ema_update: batch prototypes do not match the bank");
  }
  for (Index c = 0; c < bank.num_classes(); ++c) {
    if (batch.counts[static_cast<std::size_t>(c)] == 0) continue;
    if (!bank.initialized[static_cast<std::size_t>(c)]) {
      bank.proto.row(c) = batch.current.row(c);
      bank.initialized[static_cast<std::size_t>(c)] = true;
    } else {
      bank.proto.row(c) = bank.alpha * bank.proto.row(c) + (Scalar(1) - bank.alpha) * batch.current.row(c);
    }
  }
}

/// Cosine similarity of every pixel feature to every prototype, (N, K, H, W).
/// Uninitialized classes get -infinity.
template <typename Scalar>
Tensor<Scalar> similarity_map(const Tensor<Scalar>* feat_enc, const Tensor<Scalar>& feat_dec,
                              const PrototypeBank<Scalar>& bank) {
  if (!bank.any_initialized()) throw StateError("similarity_map: no initialized prototype");
  require_rank(feat_dec.shape(), 4, "similarity_map");
  const Index n = feat_dec.dim(0), h = feat_dec.dim(2), w = feat_dec.dim(3);
  detail::check_feature_shapes(feat_enc, feat_dec, n, h, w, "similarity_map");
  const Index dim = (feat_enc ? feat_enc->dim(1) : 0) + feat_dec.dim(1);
  if (dim != bank.dim()) {
    throw ShapeError("similarity_map: feature dim " + std::to_string(dim) + " vs prototype dim " +
                     std::to_string(bank.dim()));
  }
  const Index k = bank.num_classes();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> proto_norm = bank.proto.rowwise().norm();
  Tensor<Scalar> sim(Shape{n, k, h, w});
  std::vector<Scalar> f(static_cast<std::size_t>(dim));
  for (Index b = 0; b < n; ++b) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        detail::pixel_feature(feat_enc, feat_dec, b, y, x, f.data());
        const Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> fv(f.data(), dim);
        const Scalar fn = fv.norm();
        for (Index c = 0; c < k; ++c) {
          Scalar s = -std::numeric_limits<Scalar>::infinity();
          if (bank.initialized[static_cast<std::size_t>(c)]) {
            const Scalar denom = fn * proto_norm[c];
            s = denom > 0 ? Scalar(bank.proto.row(c).dot(fv.transpose()) / denom) : Scalar(0);
          }
          sim.at(b, c, y, x) = s;
        }
      }
    }
  }
  return sim;
}

/// Per-pixel argmax over classes; ties go to the smaller class index.
template <typename Scalar>
LabelBatch pseudo_label(const Tensor<Scalar>& sim) {
  require_rank(sim.shape(), 4, "pseudo_label");
  const Index n = sim.dim(0), k = sim.dim(1), h = sim.dim(2), w = sim.dim(3);
  LabelBatch out(n, h, w);
  for (Index b = 0; b < n; ++b) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        std::int32_t best = 0;
        Scalar best_val = sim.at(b, 0, y, x);
        for (Index c = 1; c < k; ++c) {
          if (sim.at(b, c, y, x) > best_val) {
            best_val = sim.at(b, c, y, x);
            best = static_cast<std::int32_t>(c);
          }
        }
        out(b, y, x) = best;
      }
    }
  }
  return out;
}

/// max over classes of the similarity map, flattened in (N, H, W) order.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> max_similarity(const Tensor<Scalar>& sim) {
  require_rank(sim.shape(), 4, "max_similarity");
  const Index n = sim.dim(0), k = sim.dim(1), hw = sim.dim(2) * sim.dim(3);
  Eigen::Array<Scalar, Eigen::Dynamic, 1> out(n * hw);
  for (Index b = 0; b < n; ++b) {
    for (Index p = 0; p < hw; ++p) {
      Scalar m = -std::numeric_limits<Scalar>::infinity();
      for (Index c = 0; c < k; ++c) m = std::max(m, sim[(b * k + c) * hw + p]);
      out[b * hw + p] = m;
    }
  }
  return out;
}

/// Pseudo-label filtering schedule and class-wise thresholds.
struct FilterState {
  double p_inc = 0.01;
  double p_pc = 0.0;
  double p_dw = 0.1;
  std::vector<double> tau;  // per class, starts at 1 (selects nothing)

  FilterState() = default;
  FilterState(Index num_classes, double inc, double dw)
      : p_inc(inc), p_dw(dw), tau(static_cast<std::size_t>(num_classes), 1.0) {}

  double p0() const { return p_pc * p_dw; }
  /// Selected fraction for class c: p_pc for c >= 1, p_pc * p_dw for class 0.
  double quantile_fraction(Index c) const { return c == 0 ? p0() : p_pc; }
  void set_epoch(Index epoch) {
    if (epoch < 1) throw UsageError("FilterState: epoch must be >= 1");
    p_pc = std::min(1.0, double(epoch) * p_inc);
  }
};

/// Recomputes tau_c as the nearest-rank (1 - q_c) quantile of the max
/// similarities of pixels pseudo-labelled c, clamped to [0, 1]. Classes with
/// no pixels keep their previous threshold.
template <typename Scalar>
void update_thresholds(FilterState& state, std::span<const Scalar> max_sim, std::span<const std::int32_t> pseudo) {
  if (max_sim.size() != pseudo.size()) throw ShapeError("update_thresholds: size mismatch");
  const auto k = static_cast<Index>(state.tau.size());
  std::vector<std::vector<double>> per_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < max_sim.size(); ++i) {
    const auto c = pseudo[i];
    if (c < 0 || c >= k || !std::isfinite(double(max_sim[i]))) continue;
    per_class[static_cast<std::size_t>(c)].push_back(double(max_sim[i]));
  }
  for (Index c = 0; c < k; ++c) {
    auto& v = per_class[static_cast<std::size_t>(c)];
    if (v.empty()) continue;
    const auto n = static_cast<Index>(v.size());
    // Number of values strictly above the threshold.
    const auto keep = static_cast<Index>(std::floor(state.quantile_fraction(c) * double(n) + 1e-9));
    double t = 0.0;
    if (keep <= 0) {
      t = *std::max_element(v.begin(), v.end());
    } else if (keep >= n) {
      t = -std::numeric_limits<double>::infinity();
    } else {
      std::nth_element(v.begin(), v.begin() + (n - keep - 1), v.end());
      t = v[static_cast<std::size_t>(n - keep - 1)];
    }
    state.tau[static_cast<std::size_t>(c)] = std::clamp(t, 0.0, 1.0);
  }
}

template <typename Scalar>
void update_thresholds(FilterState& state, const Tensor<Scalar>& sim, const LabelBatch& pseudo, Index epoch) {
  state.set_epoch(epoch);
  const auto ms = max_similarity(sim);
  update_thresholds<Scalar>(state, std::span<const Scalar>(ms.data(), static_cast<std::size_t>(ms.size())),
                            std::span<const std::int32_t>(pseudo.data.data(), static_cast<std::size_t>(pseudo.data.size())));
}

/// M = 1 where the pixel's max similarity exceeds tau of its pseudo label.
template <typename Scalar>
Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> filter_mask(const Eigen::Array<Scalar, Eigen::Dynamic, 1>& max_sim,
                                                         const LabelBatch& pseudo, const FilterState& state) {
  if (max_sim.size() != pseudo.pixels()) throw ShapeError("filter_mask: size mismatch");
  Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> m(max_sim.size());
  for (Index i = 0; i < max_sim.size(); ++i) {
    m[i] = double(max_sim[i]) > state.tau[static_cast<std::size_t>(pseudo.data[i])] ? 1 : 0;
  }
  return m;
}

template <typename Scalar>
Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> filter_mask(const Tensor<Scalar>& sim, const FilterState& state) {
  return filter_mask(max_similarity(sim), pseudo_label(sim), state);
}

/// Uniform fixed-size sample (algorithm R) of (max similarity, pseudo label)
/// pairs seen during an epoch.
class SimilarityReservoir {
 public:
  explicit SimilarityReservoir(std::size_t capacity = 200000, std::uint64_t seed = 0) : capacity_(capacity), rng_(seed) {}

  template <typename Scalar>
  void add(const Eigen::Array<Scalar, Eigen::Dynamic, 1>& max_sim, const LabelBatch& pseudo) {
    for (Index i = 0; i < max_sim.size(); ++i) {
      ++seen_;
      if (values_.size() < capacity_) {
        values_.push_back(double(max_sim[i]));
        labels_.push_back(pseudo.data[i]);
        continue;
      }
      const auto j = std::uniform_int_distribution<std::uint64_t>(0, seen_ - 1)(rng_);
      if (j < capacity_) {
        values_[j] = double(max_sim[i]);
        labels_[j] = pseudo.data[i];
      }
    }
  }

  bool empty() const { return values_.empty(); }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<const std::int32_t> labels() const { return labels_; }
  void clear() {
    values_.clear();
    labels_.clear();
    seen_ = 0;
  }

 private:
  std::size_t capacity_;
  std::mt19937_64 rng_;
  std::uint64_t seen_ = 0;
  std::vector<double> values_;
  std::vector<std::int32_t> labels_;
};

}  // namespace rangeda
