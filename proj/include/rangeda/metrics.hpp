#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rangeda/diffcore/tensor.hpp"

namespace rangeda {

/// (truth, prediction) point counts.
class ConfusionMatrix {
 public:
  using Counts = Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit ConfusionMatrix(Index num_classes = 7);

  void accumulate(std::span<const std::int32_t> truth, std::span<const std::int32_t> pred);
  void merge(const ConfusionMatrix& other);

  Index num_classes() const { return counts_.rows(); }
  const Counts& counts() const { return counts_; }
  std::int64_t total() const { return counts_.sum(); }

 private:
  Counts counts_;
};

struct IouReport {
  std::vector<std::optional<double>> per_class;  // nullopt: zero union
  double miou = 0.0;                              // mean over classes 1..C with a value
  Index classes_in_mean = 0;
};

/// IoU_c = TP / (TP + FP + FN). Class 0 gets a value but never enters the mean.
IouReport iou(const ConfusionMatrix& cm);

struct PseudoLabelReport {
  bool none_selected = true;
  std::vector<std::optional<double>> selected_precision;    // per pseudo class
  std::vector<std::optional<double>> unselected_precision;
  std::vector<std::int64_t> selected;                       // per pseudo class
  std::vector<std::int64_t> total;                          // per pseudo class
  double selected_fraction = 0.0;                           // overall
};

/// Precision of pseudo labels split by the filtering mask, against truth that
/// is only ever available for evaluation.
PseudoLabelReport pseudo_label_report(std::span<const std::int32_t> pseudo, std::span<const std::uint8_t> mask,
                                      std::span<const std::int32_t> truth, Index num_classes);

}  // namespace rangeda
