#include <algorithm>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "rangeda/errors.hpp"
#include "rangeda/io_util.hpp"
#include "rangeda/scan_io.hpp"
#include "rangeda/trainer.hpp"

namespace fs = std::filesystem;
using namespace rangeda;

namespace {

// Tiny k2n-like world shared by every case: 4 source, 4 target and 2 held-out
// target scans at 64 x 128, 8-channel network, one epoch per stage.
struct World {
  fs::path root;
  fs::path alt_target;
  Settings base;

  World() {
    root = fs::temp_directory_path() / "rangeda_test_trainer";
    fs::remove_all(root);
    base.scenario.width_divisor = 16;
    base.scenario.channel_divisor = 4;
    DatasetSpec ds;
    ds.seed = 9;
    ds.n_scenes = 4;
    ds.sensor = base.scenario.source_sensor.with_resolution(64, base.scenario.source_sensor.width / 16);
    base.source_manifest = emit_dataset(ds, root, Domain::source).manifest;
    ds.sensor = base.scenario.target_sensor.with_resolution(32, base.scenario.target_sensor.width / 16);
    ds.sensor_height = 1.84;
    base.target_manifest = emit_dataset(ds, root, Domain::target).manifest;
    ds.seed = 11;
    alt_target = emit_dataset(ds, root, Domain::target, "target_alt").manifest;
    ds.seed = 10;
    ds.n_scenes = 2;
    base.eval_manifest = emit_dataset(ds, root, Domain::target, "target_eval").eval_manifest;
    base.runs_dir = root / "runs";
    base.train.batch_per_domain = 2;
    base.train.seed = 1;
    base.train.joint_epochs = 10;
    base.train.pretrain_epochs = 10;
  }

  Settings named(const std::string& name) const {
    Settings s = base;
    s.run_name = name;
    return s;
  }

  const fs::path& pretrained() {
    if (pretrain_ckpt.empty()) pretrain_ckpt = pretrain(named("pre")).checkpoint;
    return pretrain_ckpt;
  }

 private:
  fs::path pretrain_ckpt;
};

World& world() {
  static World w;
  return w;
}

Tensor<float> random_input(Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  Tensor<float> t(Shape{1, 4, h, w});
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = d(rng);
  return t;
}

bool same(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("pretrain: first-iteration lr, checkpoint reload") {
  World& w = world();
  Settings s = w.named("pre_lr");
  s.train.batch_per_domain = 8;  // one iteration per epoch
  const RunResult r = pretrain(s);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].iterations == 1);
  CHECK(r.rows[0].lr == doctest::Approx(1e-4));
  CHECK(std::isfinite(r.rows[0].recon));

  const Model a = load_model(r.checkpoint);
  const Model b = load_model(r.checkpoint);
  CHECK(a.stage == "pretrain");
  const auto x = Var<float>::constant(random_input(64, 128, 5));
  const auto oa = a.net.forward(x, ForwardMode::pretrain), ob = b.net.forward(x, ForwardMode::pretrain);
  CHECK(same(oa.logits.value(), ob.logits.value()));
  CHECK(same(oa.recon.value(), ob.recon.value()));
  CHECK(a.settings.to_text() == s.to_text());
}

TEST_CASE("adapt: lambda 0 never reads the target batch into the loss") {
  World& w = world();
  const fs::path ckpt = w.pretrained();
  Settings a = w.named("l0_a");
  a.train.lambda = 0.0;
  Settings b = w.named("l0_b");
  b.train.lambda = 0.0;
  b.target_manifest = w.alt_target;
  const RunResult ra = adapt(a, ckpt), rb = adapt(b, ckpt);
  REQUIRE(ra.rows.size() == rb.rows.size());
  for (std::size_t i = 0; i < ra.rows.size(); ++i) {
    CHECK(ra.rows[i].epl == 0.0);
    CHECK(ra.rows[i].wce == rb.rows[i].wce);
    CHECK(ra.rows[i].lovasz == rb.rows[i].lovasz);
  }
  const Model ma = load_model(ra.checkpoint), mb = load_model(rb.checkpoint);
  const auto ta = ma.net.to_tensors(), tb = mb.net.to_tensors();
  REQUIRE(ta.size() == tb.size());
  for (const auto& [name, t] : ta) CHECK(same(t, tb.at(name)));

  // With the alignment term the target does move the weights.
  Settings c = w.named("l1");
  const RunResult rc = adapt(c, ckpt);
  CHECK(rc.rows[0].epl < 0.0);
  const auto tc = load_model(rc.checkpoint).net.to_tensors();
  bool any_diff = false;
  for (const auto& [name, t] : ta) any_diff = any_diff || !same(t, tc.at(name));
  CHECK(any_diff);
}

TEST_CASE("adapt: p_pc follows the scaled schedule and eval is logged") {
  World& w = world();
  Settings s = w.named("sched");
  s.train.joint_epochs = 30;
  const RunResult r = adapt(s, w.pretrained());
  REQUIRE(r.rows.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) CHECK(r.rows[e].p_pc == doctest::Approx(0.1 * double(e + 1)));
  REQUIRE(r.final_eval.has_value());
  CHECK(r.final_eval->miou >= 0.0);
  CHECK(r.final_eval->miou <= 1.0);
  const std::string csv = read_text(w.base.runs_dir / "sched" / "metrics.csv");
  CHECK(csv.rfind("phase,epoch,", 0) == 0);
  CHECK(csv.find("\nadapt,3,") != std::string::npos);
}

TEST_CASE("adapt: checkpoint and config must agree") {
  World& w = world();
  Settings s = w.named("mismatch");
  s.scenario.channel_divisor = 2;
  CHECK_THROWS_AS(adapt(s, w.pretrained()), ConfigError);
  Settings t = w.named("missing");
  CHECK_THROWS_AS(adapt(t, w.root / "nope.ckpt"), IoError);
}

TEST_CASE("seeded runs are reproducible") {
  World& w = world();
  Settings a = w.named("rep_a"), b = w.named("rep_b");
  adapt(a, w.pretrained());
  adapt(b, w.pretrained());
  CHECK(read_text(w.base.runs_dir / "rep_a" / "metrics.csv") == read_text(w.base.runs_dir / "rep_b" / "metrics.csv"));
}

TEST_CASE("inference writes one label per point and is idempotent") {
  World& w = world();
  const Model m = load_model(adapt(w.named("infer"), w.pretrained()).checkpoint);
  const fs::path manifest = w.root / "target_eval" / "eval_manifest.txt";
  CHECK(infer_manifest(m, manifest, Domain::target, w.root / "pred_a") == 2);
  CHECK(infer_manifest(m, manifest, Domain::target, w.root / "pred_b") == 2);
  const auto scans = load_scan_list(manifest);
  for (const auto& rec : scans) {
    const auto name = rec.points.stem().string() + ".label";
    const auto labels = read_labels(w.root / "pred_a" / name);
    CHECK(labels.size() == static_cast<std::size_t>(read_points(rec.points).size()));
    CHECK(read_text(w.root / "pred_a" / name) == read_text(w.root / "pred_b" / name));
  }
  // Evaluating the predictions as ground truth gives a perfect score.
  ConfusionMatrix cm;
  for (const auto& rec : scans) {
    const auto pred = predict_points(m, read_points(rec.points), Domain::target);
    cm.accumulate(pred, pred);
  }
  CHECK(iou(cm).miou == 1.0);
}

TEST_CASE("deactivate_mask only changes empty pixels of the inputs") {
  World& w = world();
  const Model m = load_model(w.pretrained());
  const ImageSet set = load_images(w.base.target_manifest, m.plan().target, false);
  const TrainingSet on = prepare(set, m.stats, true), off = prepare(set, m.stats, false);
  REQUIRE(on.size() == off.size());
  Index changed = 0;
  for (Index n = 0; n < on.size(); ++n) {
    const auto& img = set.images[static_cast<std::size_t>(n)];
    const auto& a = on.inputs[static_cast<std::size_t>(n)];
    const auto& b = off.inputs[static_cast<std::size_t>(n)];
    const Index hw = img.height * img.width;
    for (Index c = 0; c < 4; ++c) {
      for (Index p = 0; p < hw; ++p) {
        const float va = a.data()[c * hw + p], vb = b.data()[c * hw + p];
        if (img.mask(p / img.width, p % img.width)) {
          CHECK(va == vb);
        } else {
          CHECK(vb == 0.0f);
          changed += va != vb;
        }
      }
    }
  }
  CHECK(changed > 0);
}
