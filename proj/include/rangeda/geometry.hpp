#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "rangeda/diffcore/tensor.hpp"

namespace rangeda {

using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexPlane = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskPlane = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::int32_t kNoPoint = -1;

/// Vertical field of view plus the (height, width) grid the scan is projected to.
struct SensorConfig {
  Index beams = 64;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;
  Index width = 2048;
  Index height = 64;

  double fov_up_rad() const;
  double fov_down_rad() const;
  double fov_rad() const { return fov_up_rad() - fov_down_rad(); }
  // Same angles, different image grid.
  SensorConfig with_resolution(Index h, Index w) const;
  void validate() const;
};

/// Points stored column-wise (3 x N), meters, sensor frame.
struct PointCloud {
  Eigen::Matrix3Xf points;
  std::vector<std::int32_t> labels;  // empty, or one class id per point

  Index size() const { return points.cols(); }
  bool has_labels() const { return !labels.empty(); }
  void validate() const;
};

struct PixelCoord {
  std::int32_t u = -1;  // column
  std::int32_t v = -1;  // row
  bool valid() const { return u >= 0 && v >= 0; }
};

enum Channel : int { kRange = 0, kX = 1, kY = 2, kZ = 3 };
inline constexpr int kNumChannels = 4;

/// Multi-channel spherical projection of one scan.
struct RangeImage {
  Index height = 0;
  Index width = 0;
  std::array<Plane, kNumChannels> channels;  // range, x, y, z
  MaskPlane mask;
  IndexPlane labels;          // empty when the cloud carried no labels
  IndexPlane pixel_to_point;  // kNoPoint where mask == 0
  std::vector<PixelCoord> point_to_pixel;
  Index skipped_points = 0;   // points at the exact origin

  RangeImage() = default;
  RangeImage(Index h, Index w, bool with_labels);

  bool has_labels() const { return labels.size() > 0; }
  Index valid_pixels() const;
  /// (4, H, W) network input.
  Tensor<float> to_tensor() const;
};

/// Spherical projection. Colliding points keep the smallest range (ties: lower
/// index). Throws DomainError for an empty cloud; origin points are skipped.
RangeImage project(const PointCloud& cloud, const SensorConfig& sensor);

struct NormStats {
  std::array<double, kNumChannels> mean{};
  std::array<double, kNumChannels> std{1.0, 1.0, 1.0, 1.0};
  void validate() const;
};

/// Per-channel mean/std over masked pixels of a set of images.
NormStats compute_norm_stats(const std::vector<const RangeImage*>& images);

/// (value - mean) / std per channel. With deactivate_mask == false the result
/// is additionally multiplied by the validity mask.
RangeImage normalize(const RangeImage& img, const NormStats& stats, bool deactivate_mask);

/// Nearest-neighbour upsampling: rows duplicated `row_factor` times and
/// columns `col_factor` times in every plane.
RangeImage upsample_rows(const RangeImage& img, Index row_factor, Index col_factor = 1);

/// Non-overlapping average pooling of (C, h, w) or (N, C, h, w) scores.
Tensor<float> pool_predictions(const Tensor<float>& scores, Index row_factor, Index col_factor);
inline Tensor<float> pool_predictions(const Tensor<float>& scores, Index factor) {
  return pool_predictions(scores, factor, factor);
}

/// argmax over channels of (C, h, w) scores; ties to the smaller class.
IndexPlane argmax_labels(const Tensor<float>& scores);

struct KnnParams {
  Index window = 5;         // S, odd
  Index k = 5;
  double cutoff = 1.0;      // meters of |range difference|
  double sigma = 1.0;       // delta, Gaussian std over window offsets
  bool gaussian = true;     // false: uniform kernel
};

/// Propagates 2D predictions to every 3D point by a range-nearest vote in an
/// S x S window around the point's pixel.
std::vector<std::int32_t> knn_postprocess(const IndexPlane& pred_labels, const RangeImage& img,
                                          const PointCloud& cloud, const KnnParams& params);

/// Each point takes the prediction of the pixel it projected to.
std::vector<std::int32_t> unproject_labels(const IndexPlane& pred_labels, const RangeImage& img);

}  // namespace rangeda
