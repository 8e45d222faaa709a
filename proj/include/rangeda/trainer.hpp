#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rangeda/config.hpp"
#include "rangeda/dataset.hpp"
#include "rangeda/losses.hpp"
#include "rangeda/metrics.hpp"
#include "rangeda/network.hpp"
#include "rangeda/prototypes.hpp"

namespace rangeda {

using LogFn = std::function<void(const std::string&)>;

/// A trained network plus everything inference and resumption need.
struct Model {
  Settings settings;
  std::string stage;  // "pretrain", "adapt" or "init"
  Index epoch = 0;
  SegNet<float> net;
  NormStats stats;
  PrototypeBank<float> bank;
  FilterState filter;

  explicit Model(const Settings& s);
  NetConfig net_config() const { return net.config(); }
  ScenarioPlan plan() const { return plan_scenario(settings.scenario, settings.train.switches.source_first); }
};

/// Writes `path` and a `path.meta` sidecar holding the stage and settings.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// One metrics.csv row.
struct EpochRow {
  std::string phase;
  Index epoch = 0;
  Index iterations = 0;
  double lr = 0.0;  // at the last iteration
  double recon = 0.0, wce = 0.0, lovasz = 0.0, epl = 0.0, total = 0.0;
  double p_pc = 0.0;
  std::vector<double> tau;
  std::vector<double> selected;  // per pseudo class: selected / pseudo-labelled
  std::optional<IouReport> eval;
};

struct RunResult {
  std::filesystem::path checkpoint;
  std::vector<EpochRow> rows;
  std::optional<IouReport> final_eval;
};

/// Reconstruction pretraining on mixed source + target batches.
RunResult pretrain(const Settings& settings, const LogFn& log = {});

/// Joint training. Without a checkpoint the network starts from random
/// weights (the recon_pretrain-off configuration).
RunResult adapt(const Settings& settings, const std::optional<std::filesystem::path>& pretrain_checkpoint,
                const LogFn& log = {});

/// Per-point labels for one scan of `domain`: projection per scenario,
/// forward, pooling back when upsampled, argmax, then KNN (or plain
/// unprojection with use_knn == false).
std::vector<std::int32_t> predict_points(const Model& model, const PointCloud& cloud, Domain domain,
                                         bool use_knn = true);

/// Confusion matrix over every labelled scan in a manifest.
ConfusionMatrix evaluate_manifest(const Model& model, const std::filesystem::path& manifest, Domain domain);

/// Writes one label file per scan of the manifest into out_dir. Returns the
/// number of scans processed.
Index infer_manifest(const Model& model, const std::filesystem::path& manifest, Domain domain,
                     const std::filesystem::path& out_dir);

struct AblationRow {
  std::string variant;  // "full" or the switched-off component
  std::vector<double> miou;  // per seed
  double median() const;
};

/// Runs the full method and one variant per switched-off component for each
/// seed; the eval manifest must be set. Writes ablation.csv in the run dir.
std::vector<AblationRow> ablate(const Settings& settings, const std::vector<std::string>& switches,
                                const std::vector<std::uint64_t>& seeds, const LogFn& log = {});

/// Full pipeline for one configuration: pretrain (unless recon_pretrain is off
/// or `shared_pretrain` is given), adapt, final evaluation.
RunResult run_variant(const Settings& settings, const std::optional<std::filesystem::path>& shared_pretrain,
                      const LogFn& log = {});

}  // namespace rangeda
