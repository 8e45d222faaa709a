// Acceptance suite: one PASS/FAIL line per criterion, with the measured values.
// Tolerances and run settings are fixed below.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "rangeda/dataset.hpp"
#include "rangeda/io_util.hpp"
#include "rangeda/losses.hpp"
#include "rangeda/prototypes.hpp"
#include "rangeda/scan_io.hpp"
#include "rangeda/trainer.hpp"

namespace fs = std::filesystem;
using namespace rangeda;

namespace {

// Criterion 1
constexpr double kGradSuiteSeconds = 120.0;
// Criterion 3
constexpr double kLovaszTol = 1e-6;
// Criterion 4
constexpr Index kFilterValues = 10000;
constexpr double kFilterTol = 0.001;
// Criterion 5
constexpr int kEmaTrials = 100;
// Criterion 6
constexpr Index kScenes = 50;
constexpr Index kEvalScenes = 20;
constexpr std::uint64_t kDataSeed = 7;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};
constexpr double kMinMedianGain = 0.02;  // mIoU as a fraction
constexpr double kBudgetSeconds = 30 * 60;
const std::vector<std::string> kBoldComponents = {"recon_pretrain", "enhanced_prototypes", "deactivate_mask",
                                                  "confidence_weighting"};
// Desk-scale settings shared by the training criteria.
const KeyValues kDeskK2n = {{"channel_divisor", "2"}, {"lr", "0.3"}, {"scale_divisor", "10"}};
const KeyValues kDeskN2k = {{"channel_divisor", "8"}, {"lr", "0.3"}, {"scale_divisor", "10"}};
constexpr Index kK2nWidthDivisor = 16;
constexpr Index kN2kWidthDivisor = 16;
// Criterion 7
constexpr double kKnnScanFraction = 0.9;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string pct(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << 100.0 * v;
  return o.str();
}

std::string num(double v, int digits = 3) {
  std::ostringstream o;
  o << std::setprecision(digits) << v;
  return o.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = false;
  std::string detail;
  std::vector<std::string> notes;  // printed indented under the verdict
};

struct Suite {
  fs::path work;
  fs::path unit_tests;
  bool verbose = false;

  LogFn log() const {
    if (!verbose) return {};
    return [](const std::string& line) { std::cerr << "    " << line << "\n"; };
  }

  // ---- shared k2n-like artifacts (criteria 6 and 7) ----
  std::optional<ScenarioData> k2n_data;
  std::optional<Settings> k2n_settings;

  const Settings& k2n() {
    if (!k2n_settings) {
      ScenarioDataSpec spec;
      spec.scenario = "k2n-like";
      spec.seed = kDataSeed;
      spec.scenes = kScenes;
      spec.eval_scenes = kEvalScenes;
      spec.width_divisor = kK2nWidthDivisor;
      k2n_data = emit_scenario_data(spec, work / "data" / "k2n");
      Settings s = resolve_settings(load_key_values(k2n_data->config), kDeskK2n);
      s.runs_dir = work / "runs";
      s.run_name = "k2n";
      k2n_settings = s;
    }
    return *k2n_settings;
  }

  fs::path k2n_adapted(std::uint64_t seed) {
    const Settings& base = k2n();
    const fs::path ckpt = base.run_dir() / ("seed" + std::to_string(seed) + "_full") / "checkpoints" / "adapt.ckpt";
    if (!fs::exists(ckpt)) {
      Settings s = base;
      s.train.seed = seed;
      s.runs_dir = base.run_dir();
      s.run_name = "seed" + std::to_string(seed) + "_full";
      run_variant(s, std::nullopt, log());
    }
    return ckpt;
  }
};

// 1. Finite-difference gradient suite, run through the unit-test binary.
Outcome gradient_suite(Suite& suite) {
  const auto t0 = Clock::now();
  const std::string cmd = "\"" + suite.unit_tests.string() + "\" --source-file='*test_gradients.cpp' --minimal > \"" +
                          (suite.work / "gradients.log").string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = rc == 0 && secs < kGradSuiteSeconds;
  o.detail = std::string(rc == 0 ? "all checks within 1e-3" : "checks failed (see gradients.log)") + ", " +
             num(secs, 3) + " s (limit " + num(kGradSuiteSeconds) + " s)";
  return o;
}

// 2. Projection against the scalar oracle, plus constructed collisions.
Outcome projection_oracle(Suite&) {
  const SensorConfig sensor = ScenarioConfig::preset("k2n-like").source_sensor;
  std::mt19937_64 rng(2024);
  const PointCloud cloud = oracle::random_cloud(rng, 10000, sensor);
  const RangeImage img = project(cloud, sensor);
  Index mismatches = 0;
  for (Index i = 0; i < cloud.size(); ++i) {
    const auto [u, v] = oracle::pixel_of(cloud.points.col(i), sensor);
    const auto px = img.point_to_pixel[static_cast<std::size_t>(i)];
    mismatches += px.u != u || px.v != v;
  }
  // Natural collisions: every kept point is the nearest of its pixel.
  Index wrong_keep = 0, collided = 0;
  std::map<std::pair<int, int>, std::vector<Index>> by_pixel;
  for (Index i = 0; i < cloud.size(); ++i) {
    const auto px = img.point_to_pixel[static_cast<std::size_t>(i)];
    by_pixel[{px.v, px.u}].push_back(i);
  }
  for (const auto& [pix, pts] : by_pixel) {
    if (pts.size() > 1) ++collided;
    Index best = pts.front();
    for (const auto p : pts) {
      if (cloud.points.col(p).norm() < cloud.points.col(best).norm()) best = p;
    }
    wrong_keep += img.pixel_to_point(pix.first, pix.second) != best;
  }
  // Constructed collisions: same direction at two ranges, in both orders, and an exact tie.
  PointCloud pairs;
  pairs.points.resize(3, 6);
  const Eigen::Vector3f dir = Eigen::Vector3f(0.6f, 0.3f, -0.05f).normalized();
  pairs.points.col(0) = 20.0f * dir;
  pairs.points.col(1) = 10.0f * dir;  // nearer, later index
  const Eigen::Vector3f dir2 = Eigen::Vector3f(-0.2f, 0.7f, 0.01f).normalized();
  pairs.points.col(2) = 5.0f * dir2;  // nearer, earlier index
  pairs.points.col(3) = 9.0f * dir2;
  const Eigen::Vector3f dir3 = Eigen::Vector3f(0.1f, -0.9f, -0.2f).normalized();
  pairs.points.col(4) = 7.0f * dir3;
  pairs.points.col(5) = 7.0f * dir3;  // tie: lower index wins
  const RangeImage pi = project(pairs, sensor);
  auto kept = [&](Index i) {
    const auto px = pi.point_to_pixel[static_cast<std::size_t>(i)];
    return pi.pixel_to_point(px.v, px.u);
  };
  const bool constructed_ok = kept(0) == 1 && kept(1) == 1 && kept(2) == 2 && kept(3) == 2 && kept(4) == 4 &&
                              kept(5) == 4 && pi.valid_pixels() == 3;
  Outcome o;
  o.pass = mismatches == 0 && wrong_keep == 0 && constructed_ok;
  o.detail = std::to_string(mismatches) + " of 10000 pixel mismatches, " + std::to_string(collided) +
             " natural collisions with " + std::to_string(wrong_keep) + " wrong keeps, constructed collisions " +
             (constructed_ok ? "resolved nearest-first" : "WRONG");
  return o;
}

// 3. Lovasz on hard binary predictions equals 1 - IoU, all 2^6 predictions.
Outcome lovasz_oracle(Suite&) {
  constexpr int n = 6;
  double worst = 0.0;
  int cases = 0;
  for (int tmask = 0; tmask < (1 << n); ++tmask) {
    LabelBatch y(1, 1, n);
    for (int i = 0; i < n; ++i) y.data[i] = (tmask >> i) & 1;
    for (int pmask = 0; pmask < (1 << n); ++pmask) {
      Tensor<double> p(Shape{1, 2, 1, n});
      for (int i = 0; i < n; ++i) p.at(0, (pmask >> i) & 1, 0, i) = 1.0;
      const double got = lovasz_softmax(Var<double>::constant(p), y).value()[0];
      // Mean over classes present in the truth of 1 - IoU.
      double expect = 0;
      int present = 0;
      for (int c = 0; c < 2; ++c) {
        int inter = 0, uni = 0, in_truth = 0;
        for (int i = 0; i < n; ++i) {
          const int t = (tmask >> i) & 1, q = (pmask >> i) & 1;
          inter += t == c && q == c;
          uni += t == c || q == c;
          in_truth += t == c;
        }
        if (!in_truth) continue;
        ++present;
        expect += 1.0 - double(inter) / double(uni);
      }
      expect /= present;
      worst = std::max(worst, std::abs(got - expect));
      ++cases;
    }
  }
  Outcome o;
  o.pass = worst <= kLovaszTol;
  o.detail = std::to_string(cases) + " (truth, prediction) pairs over 6 pixels, max |loss - (1 - IoU)| = " +
             num(worst) + " (tol " + num(kLovaszTol) + ")";
  return o;
}

// 4. Percentile filter hits the requested fractions.
Outcome percentile_filter(Suite&) {
  std::mt19937_64 rng(4);
  constexpr Index k = 3;
  std::vector<double> values;
  std::vector<std::int32_t> labels;
  for (Index c = 0; c < k; ++c) {
    std::vector<double> v(static_cast<std::size_t>(kFilterValues));
    for (Index i = 0; i < kFilterValues; ++i) v[static_cast<std::size_t>(i)] = (double(i) + 0.5) / double(kFilterValues);
    std::shuffle(v.begin(), v.end(), rng);
    for (const double x : v) {
      values.push_back(x);
      labels.push_back(static_cast<std::int32_t>(c));
    }
  }
  double worst = 0.0;
  std::ostringstream fr;
  for (const double q : {0.01, 0.1, 0.5}) {
    FilterState s(k, 0.01, 0.1);
    s.p_pc = q;
    update_thresholds<double>(s, values, labels);
    std::vector<Index> sel(k, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      sel[static_cast<std::size_t>(labels[i])] += values[i] > s.tau[static_cast<std::size_t>(labels[i])];
    }
    for (Index c = 0; c < k; ++c) {
      const double frac = double(sel[static_cast<std::size_t>(c)]) / double(kFilterValues);
      worst = std::max(worst, std::abs(frac - s.quantile_fraction(c)));
    }
    fr << " q=" << q << ":" << double(sel[1]) / double(kFilterValues) << "/class0 "
       << double(sel[0]) / double(kFilterValues);
  }
  Outcome o;
  o.pass = worst <= kFilterTol;
  o.detail = "max |fraction - target| = " + num(worst) + " (tol " + num(kFilterTol) + ");" + fr.str();
  return o;
}

// 5. Prototype construction and EMA properties on randomized trials.
Outcome ema_properties(Suite&) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Index> dim(1, 6), size(2, 6), steps(2, 12);
  std::uniform_real_distribution<double> u(-1, 1), scale(0.05, 20.0), alpha_d(0.5, 0.999);
  int init_ok = 0, hull_ok = 0, norm_ok = 0, scale_ok = 0;
  auto random = [&](Shape s) {
    Tensor<double> t(s);
    for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
  };
  for (int trial = 0; trial < kEmaTrials; ++trial) {
    const Index ce = dim(rng), cd = dim(rng), h = size(rng), w = size(rng), k = 4;
    const double alpha = alpha_d(rng);
    LabelBatch labels(1, h, w);
    for (Index i = 0; i < labels.pixels(); ++i) labels.data[i] = static_cast<std::int32_t>(rng() % 3);  // class 3 absent

    // Initialization: the first observation is copied, absent classes stay empty.
    PrototypeBank<double> bank(k, ce, cd, alpha);
    const Tensor<double> fe = random(Shape{1, ce, h, w}), fd = random(Shape{1, cd, h, w});
    const auto first = batch_prototypes(&fe, fd, labels, k);
    ema_update(bank, first);
    bool ok = true;
    for (Index c = 0; c < k; ++c) {
      const bool present = first.counts[static_cast<std::size_t>(c)] > 0;
      ok = ok && bank.initialized[static_cast<std::size_t>(c)] == present;
      ok = ok && (present ? bank.proto.row(c) == first.current.row(c) : bank.proto.row(c).isZero());
    }
    init_ok += ok;

    // Convex hull: every coordinate stays within the range of its observations.
    Eigen::MatrixXd lo = first.current, hi = first.current;
    const Index t = steps(rng);
    for (Index step = 0; step < t; ++step) {
      const Tensor<double> e = random(Shape{1, ce, h, w}), d = random(Shape{1, cd, h, w});
      const auto b = batch_prototypes(&e, d, labels, k);
      ema_update(bank, b);
      for (Index c = 0; c < 3; ++c) {
        if (b.counts[static_cast<std::size_t>(c)] == 0) continue;
        lo.row(c) = lo.row(c).cwiseMin(b.current.row(c));
        hi.row(c) = hi.row(c).cwiseMax(b.current.row(c));
      }
    }
    ok = true;
    for (Index c = 0; c < 3; ++c) {
      for (Index j = 0; j < bank.dim(); ++j) {
        ok = ok && bank.proto(c, j) >= lo(c, j) - 1e-12 && bank.proto(c, j) <= hi(c, j) + 1e-12;
      }
    }
    hull_ok += ok;

    // Per-half unit norm: a one-pixel prototype has unit encoder and decoder
    // halves, up to the 1e-8 guard in the normalization denominator.
    LabelBatch one(1, 1, 1);
    one.data[0] = 0;
    const Tensor<double> pe = random(Shape{1, ce, 1, 1}), pd = random(Shape{1, cd, 1, 1});
    const auto single = batch_prototypes(&pe, pd, one, 1);
    const double ne = single.current.row(0).head(ce).norm(), nd = single.current.row(0).tail(cd).norm();
    bool halves_bounded = true;
    for (Index c = 0; c < 3; ++c) {
      halves_bounded = halves_bounded && first.current.row(c).head(ce).norm() <= 1 + 1e-9 &&
                       first.current.row(c).tail(cd).norm() <= 1 + 1e-9;
    }
    const double te = 1e-8 / pe.array().matrix().norm() + 1e-12;
    const double td = 1e-8 / pd.array().matrix().norm() + 1e-12;
    norm_ok += std::abs(ne - 1) < te && std::abs(nd - 1) < td && halves_bounded;

    // Scale invariance of pseudo labels under positive rescaling of either half.
    Tensor<double> se = fe, sd = fd;
    for (Index p = 0; p < h * w; ++p) {
      const double a = scale(rng), b = scale(rng);
      for (Index c = 0; c < ce; ++c) se[c * h * w + p] *= a;
      for (Index c = 0; c < cd; ++c) sd[c * h * w + p] *= b;
    }
    const auto l1 = pseudo_label(similarity_map(&fe, fd, bank)), l2 = pseudo_label(similarity_map(&se, sd, bank));
    scale_ok += (l1.data == l2.data).all();
  }
  Outcome o;
  o.pass = init_ok == kEmaTrials && hull_ok == kEmaTrials && norm_ok == kEmaTrials && scale_ok == kEmaTrials;
  o.detail = "initialization " + std::to_string(init_ok) + "/100, convex hull " + std::to_string(hull_ok) +
             "/100, per-half unit norm " + std::to_string(norm_ok) + "/100, scale invariance " +
             std::to_string(scale_ok) + "/100";
  return o;
}

// 6. Desk-scale adaptation on the 64-beam -> 32-beam scenario.
Outcome adaptation(Suite& suite) {
  const auto t0 = Clock::now();
  const Settings& base = suite.k2n();
  const auto rows = ablate(base, kBoldComponents, kSeeds, suite.log());
  std::vector<double> full = rows.front().miou, source_only;
  for (const auto seed : kSeeds) {
    Settings s = base;
    s.train.seed = seed;
    s.train.lambda = 0.0;
    s.runs_dir = base.run_dir();
    s.run_name = "seed" + std::to_string(seed) + "_lambda0";
    const fs::path shared = base.run_dir() / ("seed" + std::to_string(seed) + "_full") / "checkpoints" / "pretrain.ckpt";
    const RunResult r = run_variant(s, shared, suite.log());
    source_only.push_back(r.final_eval ? r.final_eval->miou : 0.0);
  }
  const double secs = seconds_since(t0);

  int wins = 0;
  std::vector<double> gains;
  std::ostringstream per_seed;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    wins += full[i] > source_only[i];
    gains.push_back(full[i] - source_only[i]);
    per_seed << " seed " << kSeeds[i] << ": " << pct(full[i]) << " vs " << pct(source_only[i]) << ";";
  }
  const double gain = median(gains);
  const double full_median = median(full);
  bool directions = true;
  std::ostringstream abl;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const bool ok = full_median >= rows[i].median();
    directions = directions && ok;
    abl << " " << rows[i].variant << " off " << pct(rows[i].median()) << (ok ? "" : " (above full)") << ";";
  }
  Outcome o;
  o.pass = wins >= 2 && gain > kMinMedianGain && directions && secs < kBudgetSeconds;
  o.detail = "full beats lambda=0 on " + std::to_string(wins) + "/3 seeds, median gain " + pct(gain) +
             " points (need >= 2/3 and > " + pct(kMinMedianGain) + "); ablation directions " +
             (directions ? "hold" : "violated") + "; " + num(secs / 60.0, 3) + " min (limit 30)";
  o.notes.push_back("target mIoU full vs lambda=0:" + per_seed.str());
  o.notes.push_back("3-seed medians: full " + pct(full_median) + ";" + abl.str());
  return o;
}

// 7. KNN post-processing against plain unprojection, per held-out scan.
Outcome knn_vs_unprojection(Suite& suite) {
  suite.k2n();
  const Model model = load_model(suite.k2n_adapted(kSeeds.front()));
  Index better_or_equal = 0, scans = 0;
  double acc_knn = 0, acc_plain = 0;
  for (const auto& rec : load_scan_list(suite.k2n_data->held_out.eval_manifest)) {
    const PointCloud cloud = read_points(rec.points);
    const auto truth = read_labels(rec.labels);
    const auto knn = predict_points(model, cloud, Domain::target, true);
    const auto plain = predict_points(model, cloud, Domain::target, false);
    Index ck = 0, cp = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      ck += knn[i] == truth[i];
      cp += plain[i] == truth[i];
    }
    better_or_equal += ck >= cp;
    acc_knn += double(ck) / double(truth.size());
    acc_plain += double(cp) / double(truth.size());
    ++scans;
  }
  const double frac = double(better_or_equal) / double(scans);
  Outcome o;
  o.pass = frac >= kKnnScanFraction;
  o.detail = "KNN >= unprojection on " + std::to_string(better_or_equal) + "/" + std::to_string(scans) +
             " scans (need " + pct(kKnnScanFraction) + "%); mean point accuracy " + pct(acc_knn / double(scans)) +
             " vs " + pct(acc_plain / double(scans));
  return o;
}

// 8. Source-resolution re-projection against nearest-neighbour upsampling, 32-beam -> 64-beam.
Outcome source_first(Suite& suite) {
  ScenarioDataSpec spec;
  spec.scenario = "n2k-like";
  spec.seed = kDataSeed;
  spec.scenes = kScenes;
  spec.eval_scenes = kEvalScenes;
  spec.width_divisor = kN2kWidthDivisor;
  const ScenarioData data = emit_scenario_data(spec, suite.work / "data" / "n2k");
  Settings s = resolve_settings(load_key_values(data.config), kDeskN2k);
  s.runs_dir = suite.work / "runs";
  s.run_name = "n2k";
  const auto rows = ablate(s, {"source_first"}, kSeeds, suite.log());
  const double on = rows[0].median(), off = rows[1].median();
  std::ostringstream seeds;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    seeds << " seed " << kSeeds[i] << ": " << pct(rows[0].miou[i]) << " vs " << pct(rows[1].miou[i]) << ";";
  }
  Outcome o;
  o.pass = on > off;
  o.detail = "3-seed median target mIoU with re-projection " + pct(on) + " vs upsampled " + pct(off);
  o.notes.push_back("per seed:" + seeds.str());
  return o;
}

// 9. Two identical seeded pretrain + adapt runs give byte-identical metrics.csv.
Outcome determinism(Suite& suite) {
  Settings base = suite.k2n();
  base.scenario.channel_divisor = 4;
  base.train.pretrain_epochs = 10;
  base.train.joint_epochs = 10;
  base.train.seed = 11;
  std::vector<std::string> csv;
  for (const char* name : {"determinism_a", "determinism_b"}) {
    Settings s = base;
    s.run_name = name;
    fs::remove_all(s.run_dir());
    const RunResult pre = pretrain(s, suite.log());
    adapt(s, pre.checkpoint, suite.log());
    csv.push_back(read_text(s.run_dir() / "metrics.csv"));
  }
  Outcome o;
  o.pass = csv[0] == csv[1] && !csv[0].empty();
  o.detail = std::string("metrics.csv ") + (o.pass ? "byte-identical" : "differs") + " (" +
             std::to_string(csv[0].size()) + " bytes)";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Suite suite;
  std::string work = "acceptance_work", unit_tests = RANGEDA_UNIT_TESTS;
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for data and runs")->capture_default_str();
  app.add_option("--unit-tests", unit_tests, "unit test binary for the gradient suite")->capture_default_str();
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_flag("--verbose", suite.verbose, "stream training logs");
  CLI11_PARSE(app, argc, argv);

  suite.work = fs::absolute(work);
  suite.unit_tests = unit_tests;
  fs::create_directories(suite.work);

  const std::vector<std::pair<std::string, std::function<Outcome(Suite&)>>> criteria = {
      {"gradient suite", gradient_suite},
      {"projection oracle", projection_oracle},
      {"Lovasz oracle", lovasz_oracle},
      {"percentile filter", percentile_filter},
      {"prototype and EMA properties", ema_properties},
      {"desk-scale adaptation", adaptation},
      {"KNN post-processing", knn_vs_unprojection},
      {"source-resolution projection", source_first},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(suite);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
              << "): " << o.detail << " [" << num(seconds_since(t0), 3) << " s]\n";
    for (const auto& n : o.notes) std::cout << "     " << n << "\n";
    std::cout.flush();
  }
  std::cout << failures << " criterion(s) failed\n";
  return failures == 0 ? 0 : 1;
}
