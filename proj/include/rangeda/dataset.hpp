#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rangeda/config.hpp"
#include "rangeda/geometry.hpp"
#include "rangeda/synthdata.hpp"

namespace rangeda {

struct ScanRecord {
  std::filesystem::path points;
  std::filesystem::path labels;  // empty when the manifest lists none
  bool has_labels() const { return !labels.empty(); }
};

/// Pairs each point file in a manifest with the label file listed right after
/// it, if any.
std::vector<ScanRecord> load_scan_list(const std::filesystem::path& manifest);

/// How one domain reaches the working resolution: project with `projection`,
/// then duplicate rows/columns by the factors.
struct DomainPlan {
  SensorConfig projection;
  Index row_factor = 1;
  Index col_factor = 1;
  bool upsampled() const { return row_factor > 1 || col_factor > 1; }
};

struct ScenarioPlan {
  Index height = 0;
  Index width = 0;
  DomainPlan source;
  DomainPlan target;
  const DomainPlan& domain(Domain d) const { return d == Domain::source ? source : target; }
};

/// Working resolution and per-domain processing. With source_first the source
/// grid is used and the target is upsampled or re-projected as configured;
/// without it the target's native grid is used and the source adapts.
ScenarioPlan plan_scenario(const ScenarioConfig& scenario, bool source_first);

/// Native-or-working projection of a cloud (before upsampling).
RangeImage project_for(const PointCloud& cloud, const DomainPlan& plan);
/// Projection followed by upsampling to the working grid.
RangeImage working_image(const PointCloud& cloud, const DomainPlan& plan);

/// Working-resolution images of a manifest. Labels are read only when
/// `with_labels` is set and the manifest lists them.
struct ImageSet {
  std::vector<RangeImage> images;
  Index size() const { return static_cast<Index>(images.size()); }
};
ImageSet load_images(const std::filesystem::path& manifest, const DomainPlan& plan, bool with_labels);

/// Normalized (4, H, W) inputs and (H, W) labels ready for batching.
struct TrainingSet {
  std::vector<Tensor<float>> inputs;
  std::vector<IndexPlane> labels;  // empty for unlabelled domains
  Index size() const { return static_cast<Index>(inputs.size()); }
};
TrainingSet prepare(const ImageSet& set, const NormStats& stats, bool deactivate_mask);

/// Stacks the selected (4, H, W) tensors into (N, 4, H, W).
Tensor<float> stack_inputs(const TrainingSet& set, const std::vector<Index>& indices);
LabelBatch stack_labels(const TrainingSet& set, const std::vector<Index>& indices);

/// Source, target and held-out target datasets for a scenario preset.
struct ScenarioDataSpec {
  std::string scenario = "k2n-like";
  std::uint64_t seed = 0;
  Index scenes = 50;       // per training domain
  Index eval_scenes = 20;  // held-out labelled target
  Index width_divisor = 1;
  double source_height = 1.73;
  double target_height = 1.84;
  double noise = 0.02;
};

struct ScenarioData {
  EmittedDataset source, target, held_out;
  std::filesystem::path config;  // data.cfg naming the scenario and manifests
};

/// Writes <out>/{source,target,target_eval} and <out>/data.cfg.
ScenarioData emit_scenario_data(const ScenarioDataSpec& spec, const std::filesystem::path& out);

/// Per-class pixel histogram of the labelled images.
std::vector<std::int64_t> class_histogram(const TrainingSet& set, Index num_classes);

}  // namespace rangeda
