#include "doctest.h"
#include "rangeda/config.hpp"
#include "rangeda/dataset.hpp"
#include "rangeda/errors.hpp"

using namespace rangeda;

TEST_CASE("presets") {
  const auto k2n = ScenarioConfig::preset("k2n-like");
  CHECK(k2n.source_sensor.beams == 64);
  CHECK(k2n.target_sensor.beams == 32);
  CHECK(k2n.source_height == 64);
  CHECK(k2n.source_width == 2048);
  CHECK(k2n.target_processing == TargetProcessing::upsample_then_pool);
  CHECK(k2n.base_channels == 32);

  const auto n2k = ScenarioConfig::preset("n2k-like");
  CHECK(n2k.source_sensor.beams == 32);
  CHECK(n2k.source_height == 32);
  CHECK(n2k.source_width == 1024);
  CHECK(n2k.target_processing == TargetProcessing::project_at_source_resolution);
  CHECK(n2k.base_channels == 128);

  CHECK_THROWS_AS(ScenarioConfig::preset("k2w"), ConfigError);
}

TEST_CASE("key value parsing") {
  const auto kv = parse_key_values("# comment\nlr = 0.05  # inline\n\n  seed=7\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("lr") == "0.05");
  CHECK(kv.at("seed") == "7");
  CHECK_THROWS_AS(parse_key_values("lr 0.05\n"), ConfigError);
}

TEST_CASE("flags override file which overrides defaults") {
  const Settings d = resolve_settings({}, {});
  CHECK(d.train.lr == 0.01);
  CHECK(d.train.lambda == 1.0);
  CHECK(d.train.alpha == 0.99);

  const Settings f = resolve_settings({{"lr", "0.05"}, {"seed", "3"}}, {});
  CHECK(f.train.lr == 0.05);
  CHECK(f.train.seed == 3);

  const Settings both = resolve_settings({{"lr", "0.05"}, {"seed", "3"}}, {{"lr", "0.2"}});
  CHECK(both.train.lr == 0.2);
  CHECK(both.train.seed == 3);
  CHECK(both.train.pretrain_lr == 0.01);
}

TEST_CASE("scenario key applies its preset before other keys") {
  const Settings s = resolve_settings({{"base_channels", "64"}, {"scenario", "n2k-like"}}, {});
  CHECK(s.scenario.name == "n2k-like");
  CHECK(s.scenario.source_height == 32);
  CHECK(s.scenario.base_channels == 64);
}

TEST_CASE("settings errors") {
  CHECK_THROWS_AS(resolve_settings({{"learning_rate", "0.1"}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_settings({{"lr", "fast"}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_settings({{"lr", "-1"}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_settings({{"pretrain_lr", "0"}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_settings({{"alpha", "1"}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_settings({{"knn_window", "4"}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_settings({{"width_divisor", "3"}}, {}), ConfigError);
  CHECK_THROWS_AS(resolve_settings({{"source_first", "maybe"}}, {}), ConfigError);
}

TEST_CASE("settings text round trip") {
  Settings s = resolve_settings({{"scenario", "n2k-like"}, {"lr", "0.123"}, {"deactivate_mask", "false"}}, {});
  const Settings r = resolve_settings(parse_key_values(s.to_text()), {});
  CHECK(r.to_text() == s.to_text());
  CHECK(r.train.lr == 0.123);
  CHECK_FALSE(r.train.switches.deactivate_mask);
}

TEST_CASE("switches by name") {
  Switches sw;
  for (const auto& n : Switches::names()) {
    CHECK(sw.by_name(n));
    sw.by_name(n) = false;
    CHECK_FALSE(static_cast<const Switches&>(sw).by_name(n));
  }
  CHECK(Switches::names().size() == 7);
  CHECK_THROWS_AS(sw.by_name("dropout"), ConfigError);
}

TEST_CASE("scaled schedule") {
  TrainConfig t;
  CHECK(t.scaled_pretrain_epochs() == 5);
  CHECK(t.scaled_joint_epochs() == 3);
  CHECK(t.scaled_p_inc() == doctest::Approx(0.1));
  t.scale_divisor = 1;
  CHECK(t.scaled_joint_epochs() == 30);
  t.scale_divisor = 100;
  CHECK(t.scaled_joint_epochs() == 1);
}

TEST_CASE("scenario plans") {
  ScenarioConfig k2n = ScenarioConfig::preset("k2n-like");
  k2n.width_divisor = 16;
  const auto p = plan_scenario(k2n, true);
  CHECK(p.height == 64);
  CHECK(p.width == 128);
  CHECK_FALSE(p.source.upsampled());
  CHECK(p.target.projection.height == 32);
  CHECK(p.target.row_factor == 2);
  CHECK(p.target.projection.width * p.target.col_factor == 128);

  const auto native = plan_scenario(k2n, false);
  CHECK(native.height == 32);

  ScenarioConfig n2k = ScenarioConfig::preset("n2k-like");
  n2k.width_divisor = 8;
  const auto q = plan_scenario(n2k, true);
  CHECK(q.height == 32);
  CHECK(q.width == 128);
  CHECK_FALSE(q.target.upsampled());
  CHECK(q.target.projection.height == 32);
  CHECK(q.target.projection.width == 128);

  // Without the principle the 32-beam source is upsampled to the 64-beam grid.
  const auto up = plan_scenario(n2k, false);
  CHECK(up.height == 64);
  CHECK(up.source.upsampled());
}
