#include "rangeda/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "rangeda/diffcore/ops.hpp"
#include "rangeda/errors.hpp"

namespace rangeda {

namespace {

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

double SensorConfig::fov_up_rad() const { return deg2rad(fov_up_deg); }
double SensorConfig::fov_down_rad() const { return deg2rad(fov_down_deg); }

SensorConfig SensorConfig::with_resolution(Index h, Index w) const {
  SensorConfig s = *this;
  s.height = h;
  s.width = w;
  return s;
}

void SensorConfig::validate() const {
  if (beams < 1) throw ConfigError("sensor: beams must be >= 1");
  if (!(fov_up_deg > fov_down_deg)) throw ConfigError("sensor: fov_up must exceed fov_down");
  if (width < 1 || height < 1) throw ConfigError("sensor: width and height must be >= 1");
}

void PointCloud::validate() const {
  if (!points.allFinite()) throw DomainError("point cloud contains NaN/Inf coordinates");
  if (!labels.empty() && static_cast<Index>(labels.size()) != size()) {
    throw DomainError("point cloud: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(size()) + " points");
  }
}

RangeImage::RangeImage(Index h, Index w, bool with_labels) : height(h), width(w) {
  for (auto& c : channels) c = Plane::Zero(h, w);
  mask = MaskPlane::Zero(h, w);
  pixel_to_point = IndexPlane::Constant(h, w, kNoPoint);
  if (with_labels) labels = IndexPlane::Zero(h, w);
}

Index RangeImage::valid_pixels() const { return mask.cast<Index>().sum(); }

Tensor<float> RangeImage::to_tensor() const {
  Tensor<float> t(Shape{kNumChannels, height, width});
  const Index hw = height * width;
  for (int c = 0; c < kNumChannels; ++c) {
    t.array().segment(c * hw, hw) = Eigen::Map<const Eigen::ArrayXf>(channels[c].data(), hw);
  }
  return t;
}

RangeImage project(const PointCloud& cloud, const SensorConfig& sensor) {
  sensor.validate();
  cloud.validate();
  if (cloud.size() == 0) throw DomainError("project: empty point cloud");

  const Index h = sensor.height, w = sensor.width;
  RangeImage img(h, w, cloud.has_labels());
  img.point_to_pixel.assign(static_cast<std::size_t>(cloud.size()), PixelCoord{});

  const double fov_down_abs = std::abs(sensor.fov_down_rad());
  const double fov = sensor.fov_rad();
  // Exact ranges of the kept points; the float channel would round ties.
  Eigen::ArrayXXd kept_range = Eigen::ArrayXXd::Constant(h, w, std::numeric_limits<double>::infinity());
  for (Index i = 0; i < cloud.size(); ++i) {
    const double x = cloud.points(0, i), y = cloud.points(1, i), z = cloud.points(2, i);
    const double r = std::sqrt(x * x + y * y + z * z);
    if (!(r > 0.0)) {
      ++img.skipped_points;
      continue;
    }
    const double uf = 0.5 * (1.0 - std::atan2(y, x) / std::numbers::pi) * double(w);
    const double vf = (1.0 - (std::asin(z / r) + fov_down_abs) / fov) * double(h);
    const auto u = static_cast<std::int32_t>(std::clamp<double>(std::floor(uf), 0.0, double(w - 1)));
    const auto v = static_cast<std::int32_t>(std::clamp<double>(std::floor(vf), 0.0, double(h - 1)));
    img.point_to_pixel[static_cast<std::size_t>(i)] = {u, v};

    // Strict < keeps the lower index on equal range.
    if (!(r < kept_range(v, u))) continue;
    kept_range(v, u) = r;
    img.pixel_to_point(v, u) = static_cast<std::int32_t>(i);
    img.mask(v, u) = 1;
    img.channels[kRange](v, u) = static_cast<float>(r);
    img.channels[kX](v, u) = cloud.points(0, i);
    img.channels[kY](v, u) = cloud.points(1, i);
    img.channels[kZ](v, u) = cloud.points(2, i);
    if (cloud.has_labels()) img.labels(v, u) = cloud.labels[static_cast<std::size_t>(i)];
  }
  return img;
}

void NormStats::validate() const {
  for (double s : std) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("normalization: std must be > 0 per channel");
  }
}

NormStats compute_norm_stats(const std::vector<const RangeImage*>& images) {
  std::array<double, kNumChannels> sum{}, sq{};
  double count = 0.0;
  for (const auto* img : images) {
    for (Index v = 0; v < img->height; ++v) {
      for (Index u = 0; u < img->width; ++u) {
        if (!img->mask(v, u)) continue;
        count += 1.0;
        for (int c = 0; c < kNumChannels; ++c) {
          const double val = img->channels[c](v, u);
          sum[c] += val;
          sq[c] += val * val;
        }
      }
    }
  }
  if (count < 2.0) throw DomainError("compute_norm_stats: fewer than two valid pixels");
  NormStats stats;
  for (int c = 0; c < kNumChannels; ++c) {
    stats.mean[c] = sum[c] / count;
    stats.std[c] = std::sqrt(std::max(0.0, sq[c] / count - stats.mean[c] * stats.mean[c]));
  }
  stats.validate();
  return stats;
}

RangeImage normalize(const RangeImage& img, const NormStats& stats, bool deactivate_mask) {
  stats.validate();
  RangeImage out = img;
  for (int c = 0; c < kNumChannels; ++c) {
    const auto mean = static_cast<float>(stats.mean[c]);
    const auto inv = static_cast<float>(1.0 / stats.std[c]);
    out.channels[c] = (img.channels[c] - mean) * inv;
    if (!deactivate_mask) out.channels[c] *= img.mask.cast<float>();
  }
  return out;
}

RangeImage upsample_rows(const RangeImage& img, Index row_factor, Index col_factor) {
  if (row_factor < 1 || col_factor < 1) throw ConfigError("upsample_rows: factor must be >= 1");
  const Index h = img.height * row_factor, w = img.width * col_factor;
  RangeImage out(h, w, img.has_labels());
  out.skipped_points = img.skipped_points;
  for (Index v = 0; v < h; ++v) {
    for (Index u = 0; u < w; ++u) {
      const Index sv = v / row_factor, su = u / col_factor;
      for (int c = 0; c < kNumChannels; ++c) out.channels[c](v, u) = img.channels[c](sv, su);
      out.mask(v, u) = img.mask(sv, su);
      out.pixel_to_point(v, u) = img.pixel_to_point(sv, su);
      if (img.has_labels()) out.labels(v, u) = img.labels(sv, su);
    }
  }
  out.point_to_pixel = img.point_to_pixel;
  for (auto& p : out.point_to_pixel) {
    if (!p.valid()) continue;
    p.u = static_cast<std::int32_t>(p.u * col_factor);
    p.v = static_cast<std::int32_t>(p.v * row_factor);
  }
  return out;
}

Tensor<float> pool_predictions(const Tensor<float>& scores, Index row_factor, Index col_factor) {
  const bool batched = scores.shape().rank() == 4;
  if (!batched && scores.shape().rank() != 3) {
    throw ShapeError("pool_predictions: expected (C, h, w) or (N, C, h, w), got " + scores.shape().str());
  }
  if (row_factor == 1 && col_factor == 1) return scores;
  const Tensor<float> as4 =
      batched ? scores : scores.reshaped(Shape{1, scores.dim(0), scores.dim(1), scores.dim(2)});
  NoGradGuard guard;
  Tensor<float> pooled = avg_pool2d(Var<float>::constant(as4), row_factor, col_factor).value();
  if (batched) return pooled;
  return pooled.reshaped(Shape{pooled.dim(1), pooled.dim(2), pooled.dim(3)});
}

IndexPlane argmax_labels(const Tensor<float>& scores) {
  require_rank(scores.shape(), 3, "argmax_labels");
  const Index c = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
  IndexPlane out(h, w);
  for (Index v = 0; v < h; ++v) {
    for (Index u = 0; u < w; ++u) {
      std::int32_t best = 0;
      float best_val = scores[v * w + u];
      for (Index k = 1; k < c; ++k) {
        const float val = scores[(k * h + v) * w + u];
        if (val > best_val) {
          best_val = val;
          best = static_cast<std::int32_t>(k);
        }
      }
      out(v, u) = best;
    }
  }
  return out;
}

std::vector<std::int32_t> unproject_labels(const IndexPlane& pred_labels, const RangeImage& img) {
  std::vector<std::int32_t> out(img.point_to_pixel.size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto p = img.point_to_pixel[i];
    if (p.valid()) out[i] = pred_labels(p.v, p.u);
  }
  return out;
}

std::vector<std::int32_t> knn_postprocess(const IndexPlane& pred_labels, const RangeImage& img,
                                          const PointCloud& cloud, const KnnParams& params) {
  if (params.window < 1 || params.window % 2 == 0) throw ConfigError("knn: window S must be odd");
  if (params.k < 1 || params.k > params.window * params.window) {
    throw ConfigError("knn: k must lie in [1, S^2]");
  }
  if (!(params.sigma > 0.0)) throw ConfigError("knn: sigma must be positive");
  if (static_cast<Index>(img.point_to_pixel.size()) != cloud.size()) {
    throw DomainError("knn: image was projected from a different cloud (" +
                      std::to_string(img.point_to_pixel.size()) + " vs " +
                      std::to_string(cloud.size()) + " points)");
  }
  if (pred_labels.rows() != img.height || pred_labels.cols() != img.width) {
    throw DomainError("knn: prediction plane does not match image resolution");
  }

  const Index s = params.window, half = s / 2;
  // Normalized Gaussian over window offsets; ranking uses (1 - kernel).
  std::vector<double> rank_scale(static_cast<std::size_t>(s * s), 1.0);
  std::vector<double> vote_weight(static_cast<std::size_t>(s * s), 1.0);
  if (params.gaussian) {
    double total = 0.0;
    for (Index dy = -half; dy <= half; ++dy) {
      for (Index dx = -half; dx <= half; ++dx) {
        const double g = std::exp(-double(dy * dy + dx * dx) / (2.0 * params.sigma * params.sigma));
        vote_weight[static_cast<std::size_t>((dy + half) * s + dx + half)] = g;
        total += g;
      }
    }
    for (std::size_t i = 0; i < rank_scale.size(); ++i) rank_scale[i] = 1.0 - vote_weight[i] / total;
  }

  struct Candidate {
    double key;
    std::size_t slot;
    std::int32_t label;
  };
  std::vector<Candidate> cands;
  cands.reserve(rank_scale.size());
  std::int32_t max_label = pred_labels.size() > 0 ? pred_labels.maxCoeff() : 0;
  std::vector<double> votes(static_cast<std::size_t>(std::max(0, max_label) + 1));

  std::vector<std::int32_t> out(static_cast<std::size_t>(cloud.size()), 0);
  for (Index i = 0; i < cloud.size(); ++i) {
    const PixelCoord p = img.point_to_pixel[static_cast<std::size_t>(i)];
    if (!p.valid()) continue;
    const double r = cloud.points.col(i).cast<double>().norm();
    cands.clear();
    for (Index dy = -half; dy <= half; ++dy) {
      const Index v = p.v + dy;
      if (v < 0 || v >= img.height) continue;
      for (Index dx = -half; dx <= half; ++dx) {
        const Index u = ((p.u + dx) % img.width + img.width) % img.width;
        if (!img.mask(v, u)) continue;
        const double diff = std::abs(double(img.channels[kRange](v, u)) - r);
        if (diff > params.cutoff) continue;
        const auto slot = static_cast<std::size_t>((dy + half) * s + dx + half);
        cands.push_back({diff * rank_scale[slot], slot, pred_labels(v, u)});
      }
    }
    if (cands.empty()) {
      out[static_cast<std::size_t>(i)] = pred_labels(p.v, p.u);
      continue;
    }
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(params.k), cands.size());
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.key < b.key; });
    std::fill(votes.begin(), votes.end(), 0.0);
    for (std::size_t j = 0; j < take; ++j) {
      votes[static_cast<std::size_t>(cands[j].label)] += vote_weight[cands[j].slot];
    }
    const auto best = std::max_element(votes.begin(), votes.end());  // first max: smaller class
    out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best - votes.begin());
  }
  return out;
}

}  // namespace rangeda
