#include <algorithm>
#include <random>

#include "doctest.h"
#include "rangeda/errors.hpp"
#include "rangeda/metrics.hpp"

using namespace rangeda;

namespace {

std::vector<std::int32_t> random_labels(std::mt19937_64& rng, std::size_t n, int classes) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<std::int32_t> out(n);
  for (auto& v : out) v = d(rng);
  return out;
}

}  // namespace

TEST_CASE("confusion matrix accumulation") {
  SUBCASE("pred equals truth fills the diagonal only") {
    const std::vector<std::int32_t> t = {0, 1, 1, 2, 6, 6, 6};
    ConfusionMatrix cm;
    cm.accumulate(t, t);
    const auto& m = cm.counts();
    CHECK(m(1, 1) == 2);
    CHECK(m(6, 6) == 3);
    CHECK(m.matrix().diagonal().sum() == cm.total());
    CHECK(cm.total() == 7);
  }
  SUBCASE("one off-diagonal count") {
    ConfusionMatrix cm;
    const std::vector<std::int32_t> t = {2}, p = {3};
    cm.accumulate(t, p);
    CHECK(cm.counts()(2, 3) == 1);
    CHECK(cm.total() == 1);
  }
  SUBCASE("scalar loop oracle and merge") {
    std::mt19937_64 rng(3);
    const auto t = random_labels(rng, 5000, 7), p = random_labels(rng, 5000, 7);
    ConfusionMatrix whole, a, b;
    whole.accumulate(t, p);
    std::int64_t grid[7][7] = {};
    for (std::size_t i = 0; i < t.size(); ++i) ++grid[t[i]][p[i]];
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 7; ++c) CHECK(whole.counts()(r, c) == grid[r][c]);
    a.accumulate(std::span(t).first(1234), std::span(p).first(1234));
    b.accumulate(std::span(t).subspan(1234), std::span(p).subspan(1234));
    a.merge(b);
    CHECK((a.counts() == whole.counts()).all());
    // Rows sum to the ground-truth histogram.
    for (int r = 0; r < 7; ++r) CHECK(whole.counts().row(r).sum() == std::count(t.begin(), t.end(), r));
  }
  SUBCASE("errors") {
    ConfusionMatrix cm;
    const std::vector<std::int32_t> two = {1, 2}, one = {1}, bad = {7};
    CHECK_THROWS_AS(cm.accumulate(two, one), ShapeError);
    CHECK_THROWS_AS(cm.accumulate(bad, one), DomainError);
    CHECK_THROWS_AS(cm.merge(ConfusionMatrix(3)), ShapeError);
    CHECK_THROWS_AS(ConfusionMatrix(0), UsageError);
  }
}

TEST_CASE("iou values") {
  SUBCASE("perfect prediction") {
    const std::vector<std::int32_t> t = {0, 1, 2, 3, 4, 5, 6, 3};
    ConfusionMatrix cm;
    cm.accumulate(t, t);
    const auto r = iou(cm);
    CHECK(r.miou == 1.0);
    CHECK(r.classes_in_mean == 6);
    for (const auto& v : r.per_class) CHECK(*v == 1.0);
  }
  SUBCASE("TP 1 FP 1 FN 0 gives 0.5") {
    ConfusionMatrix cm(2);
    const std::vector<std::int32_t> t = {1, 0}, p = {1, 1};
    cm.accumulate(t, p);
    const auto r = iou(cm);
    CHECK(*r.per_class[1] == 0.5);
    CHECK(r.miou == 0.5);
    CHECK(r.classes_in_mean == 1);
  }
  SUBCASE("class 0 is scored but excluded; zero-union classes are absent") {
    ConfusionMatrix cm(4);
    const std::vector<std::int32_t> t = {0, 0, 1, 1}, p = {0, 1, 1, 1};
    cm.accumulate(t, p);
    const auto r = iou(cm);
    CHECK(*r.per_class[0] == 0.5);
    CHECK(*r.per_class[1] == doctest::Approx(2.0 / 3.0));
    CHECK_FALSE(r.per_class[2].has_value());
    CHECK_FALSE(r.per_class[3].has_value());
    CHECK(r.miou == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("empty matrix") { CHECK_THROWS_AS(iou(ConfusionMatrix()), StateError); }
}

TEST_CASE("miou is invariant to point order") {
  std::mt19937_64 rng(11);
  auto t = random_labels(rng, 2000, 7), p = random_labels(rng, 2000, 7);
  ConfusionMatrix a;
  a.accumulate(t, p);
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::int32_t> t2, p2;
  for (const auto i : order) {
    t2.push_back(t[i]);
    p2.push_back(p[i]);
  }
  ConfusionMatrix b;
  b.accumulate(t2, p2);
  CHECK(iou(a).miou == iou(b).miou);
}

TEST_CASE("pseudo label report") {
  SUBCASE("nothing selected") {
    const std::vector<std::int32_t> pseudo = {1, 2}, truth = {1, 1};
    const std::vector<std::uint8_t> mask = {0, 0};
    const auto r = pseudo_label_report(pseudo, mask, truth, 3);
    CHECK(r.none_selected);
    CHECK(r.selected_fraction == 0.0);
    for (const auto& v : r.selected_precision) CHECK_FALSE(v.has_value());
    CHECK(*r.unselected_precision[1] == 1.0);
    CHECK(*r.unselected_precision[2] == 0.0);
  }
  SUBCASE("perfect pseudo labels") {
    const std::vector<std::int32_t> pseudo = {0, 1, 1, 2, 2, 2};
    const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 0};
    const auto r = pseudo_label_report(pseudo, mask, pseudo, 3);
    CHECK_FALSE(r.none_selected);
    for (int c = 0; c < 3; ++c) CHECK(*r.selected_precision[static_cast<std::size_t>(c)] == 1.0);
    CHECK(r.selected == std::vector<std::int64_t>{1, 1, 2});
    CHECK(r.total == std::vector<std::int64_t>{1, 2, 3});
    CHECK(r.selected_fraction == doctest::Approx(4.0 / 6.0));
  }
  SUBCASE("mixed precision") {
    const std::vector<std::int32_t> pseudo = {1, 1, 1, 1}, truth = {1, 0, 1, 1};
    const std::vector<std::uint8_t> mask = {1, 1, 0, 0};
    const auto r = pseudo_label_report(pseudo, mask, truth, 2);
    CHECK(*r.selected_precision[1] == 0.5);
    CHECK(*r.unselected_precision[1] == 1.0);
  }
  SUBCASE("errors") {
    const std::vector<std::int32_t> a = {1}, b = {1, 1}, bad = {5};
    const std::vector<std::uint8_t> m1 = {1};
    CHECK_THROWS_AS(pseudo_label_report(b, m1, b, 2), ShapeError);
    CHECK_THROWS_AS(pseudo_label_report(bad, m1, a, 2), DomainError);
  }
}
