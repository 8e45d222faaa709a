#include "rangeda/metrics.hpp"

#include <string>

#include "rangeda/errors.hpp"

namespace rangeda {

ConfusionMatrix::ConfusionMatrix(Index num_classes) {
  if (num_classes < 1) throw UsageError("ConfusionMatrix: num_classes must be >= 1");
  counts_ = Counts::Zero(num_classes, num_classes);
}

void ConfusionMatrix::accumulate(std::span<const std::int32_t> truth, std::span<const std::int32_t> pred) {
  if (truth.size() != pred.size()) {
    throw ShapeError("ConfusionMatrix: " + std::to_string(truth.size()) + " truth vs " +
                     std::to_string(pred.size()) + " predicted labels");
  }
  const Index k = num_classes();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= k || pred[i] < 0 || pred[i] >= k) {
      throw DomainError("ConfusionMatrix: label out of range at point " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < truth.size(); ++i) ++counts_(truth[i], pred[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes() != num_classes()) throw ShapeError("ConfusionMatrix::merge: class count mismatch");
  counts_ += other.counts_;
}

IouReport iou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw StateError("iou: empty confusion matrix");
  const auto& m = cm.counts();
  IouReport r;
  r.per_class.resize(static_cast<std::size_t>(cm.num_classes()));
  double acc = 0.0;
  for (Index c = 0; c < cm.num_classes(); ++c) {
    const auto tp = m(c, c);
    const auto uni = m.row(c).sum() + m.col(c).sum() - tp;
    if (uni == 0) continue;
    const double v = double(tp) / double(uni);
    r.per_class[static_cast<std::size_t>(c)] = v;
    if (c >= 1) {
      acc += v;
      ++r.classes_in_mean;
    }
  }
  r.miou = r.classes_in_mean > 0 ? acc / double(r.classes_in_mean) : 0.0;
  return r;
}

PseudoLabelReport pseudo_label_report(std::span<const std::int32_t> pseudo, std::span<const std::uint8_t> mask,
                                      std::span<const std::int32_t> truth, Index num_classes) {
  if (pseudo.size() != mask.size() || pseudo.size() != truth.size()) {
    throw ShapeError("pseudo_label_report: input lengths differ");
  }
  const auto k = static_cast<std::size_t>(num_classes);
  PseudoLabelReport r;
  r.selected.assign(k, 0);
  r.total.assign(k, 0);
  r.selected_precision.assign(k, std::nullopt);
  r.unselected_precision.assign(k, std::nullopt);
  std::vector<std::int64_t> sel_ok(k, 0), unsel_ok(k, 0);
  std::int64_t n_sel = 0;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    const auto c = pseudo[i];
    if (c < 0 || c >= num_classes) throw DomainError("pseudo_label_report: label out of range");
    const auto cs = static_cast<std::size_t>(c);
    ++r.total[cs];
    if (mask[i]) {
      ++r.selected[cs];
      ++n_sel;
      sel_ok[cs] += truth[i] == c;
    } else {
      unsel_ok[cs] += truth[i] == c;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (r.selected[c] > 0) r.selected_precision[c] = double(sel_ok[c]) / double(r.selected[c]);
    const auto unsel = r.total[c] - r.selected[c];
    if (unsel > 0) r.unselected_precision[c] = double(unsel_ok[c]) / double(unsel);
  }
  r.none_selected = n_sel == 0;
  r.selected_fraction = pseudo.empty() ? 0.0 : double(n_sel) / double(pseudo.size());
  return r;
}

}  // namespace rangeda
