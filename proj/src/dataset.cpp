#include "rangeda/dataset.hpp"

#include <cstring>
#include <sstream>

#include "rangeda/errors.hpp"
#include "rangeda/io_util.hpp"
#include "rangeda/scan_io.hpp"

namespace rangeda {

std::vector<ScanRecord> load_scan_list(const std::filesystem::path& manifest) {
  std::vector<ScanRecord> out;
  for (const auto& p : read_manifest(manifest)) {
    if (p.extension() == ".label") {
      if (out.empty() || out.back().has_labels()) {
        throw IoError(manifest.string() + ": label file " + p.string() + " does not follow a point file");
      }
      out.back().labels = p;
    } else {
      out.push_back({p, {}});
    }
  }
  if (out.empty()) throw IoError(manifest.string() + ": no scans listed");
  return out;
}

namespace {

DomainPlan domain_plan(const SensorConfig& sensor, Index divisor, Index h, Index w, bool allow_upsample) {
  DomainPlan p;
  const Index native_w = sensor.width / divisor;
  if (!allow_upsample || sensor.beams >= h) {
    p.projection = sensor.with_resolution(h, w);
    return p;
  }
  if (h % sensor.beams != 0 || w % native_w != 0) {
    throw ConfigError("cannot upsample a " + std::to_string(sensor.beams) + "x" + std::to_string(native_w) +
                      " grid to " + std::to_string(h) + "x" + std::to_string(w));
  }
  p.projection = sensor.with_resolution(sensor.beams, native_w);
  p.row_factor = h / sensor.beams;
  p.col_factor = w / native_w;
  return p;
}

}  // namespace

ScenarioPlan plan_scenario(const ScenarioConfig& scenario, bool source_first) {
  scenario.validate();
  const Index d = scenario.width_divisor;
  ScenarioPlan plan;
  if (source_first) {
    plan.height = scenario.source_height;
    plan.width = scenario.source_width / d;
    plan.source = domain_plan(scenario.source_sensor, d, plan.height, plan.width, true);
    plan.target = domain_plan(scenario.target_sensor, d, plan.height, plan.width,
                              scenario.target_processing == TargetProcessing::upsample_then_pool);
  } else {
    plan.height = scenario.target_sensor.beams;
    plan.width = scenario.target_sensor.width / d;
    plan.source = domain_plan(scenario.source_sensor, d, plan.height, plan.width, true);
    plan.target = domain_plan(scenario.target_sensor, d, plan.height, plan.width, true);
  }
  if (plan.height % 8 != 0 || plan.width % 8 != 0) {
    throw ConfigError("working resolution " + std::to_string(plan.height) + "x" + std::to_string(plan.width) +
                      " must be divisible by 8");
  }
  return plan;
}

RangeImage project_for(const PointCloud& cloud, const DomainPlan& plan) { return project(cloud, plan.projection); }

RangeImage working_image(const PointCloud& cloud, const DomainPlan& plan) {
  RangeImage img = project_for(cloud, plan);
  if (plan.upsampled()) img = upsample_rows(img, plan.row_factor, plan.col_factor);
  return img;
}

ImageSet load_images(const std::filesystem::path& manifest, const DomainPlan& plan, bool with_labels) {
  ImageSet set;
  for (const auto& rec : load_scan_list(manifest)) {
    PointCloud cloud = read_points(rec.points);
    if (with_labels) {
      if (!rec.has_labels()) throw IoError(manifest.string() + ": " + rec.points.string() + " has no label file");
      cloud.labels = read_labels(rec.labels);
      cloud.validate();
    }
    set.images.push_back(working_image(cloud, plan));
  }
  return set;
}

TrainingSet prepare(const ImageSet& set, const NormStats& stats, bool deactivate_mask) {
  TrainingSet out;
  for (const auto& img : set.images) {
    out.inputs.push_back(normalize(img, stats, deactivate_mask).to_tensor());
    if (img.has_labels()) out.labels.push_back(img.labels);
  }
  if (!out.labels.empty() && out.labels.size() != out.inputs.size()) {
    throw IoError("prepare: some scans are missing labels");
  }
  return out;
}

Tensor<float> stack_inputs(const TrainingSet& set, const std::vector<Index>& indices) {
  if (indices.empty()) throw UsageError("stack_inputs: empty batch");
  const Shape& s = set.inputs.at(static_cast<std::size_t>(indices[0])).shape();
  Tensor<float> out(Shape{static_cast<Index>(indices.size()), s[0], s[1], s[2]});
  const Index per = s.numel();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& t = set.inputs.at(static_cast<std::size_t>(indices[i]));
    require_same_shape(t.shape(), s, "stack_inputs");
    std::memcpy(out.data() + Index(i) * per, t.data(), sizeof(float) * std::size_t(per));
  }
  return out;
}

LabelBatch stack_labels(const TrainingSet& set, const std::vector<Index>& indices) {
  if (set.labels.empty()) throw StateError("stack_labels: set has no labels");
  const auto& first = set.labels.at(static_cast<std::size_t>(indices.at(0)));
  LabelBatch out(static_cast<Index>(indices.size()), first.rows(), first.cols());
  const Index per = first.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& l = set.labels.at(static_cast<std::size_t>(indices[i]));
    std::memcpy(out.data.data() + Index(i) * per, l.data(), sizeof(std::int32_t) * std::size_t(per));
  }
  return out;
}

std::vector<std::int64_t> class_histogram(const TrainingSet& set, Index num_classes) {
  std::vector<std::int64_t> h(static_cast<std::size_t>(num_classes), 0);
  for (const auto& l : set.labels) {
    for (Index i = 0; i < l.size(); ++i) {
      const auto c = l.data()[i];
      if (c < 0 || c >= num_classes) throw DomainError("class_histogram: label out of range");
      ++h[static_cast<std::size_t>(c)];
    }
  }
  return h;
}

ScenarioData emit_scenario_data(const ScenarioDataSpec& spec, const std::filesystem::path& out) {
  const ScenarioConfig sc = ScenarioConfig::preset(spec.scenario);
  if (spec.width_divisor < 1) throw ConfigError("width_divisor must be >= 1");
  auto make = [&](const SensorConfig& s, Index scenes, std::uint64_t seed, double height) {
    if (s.width % spec.width_divisor != 0) throw ConfigError("width_divisor must divide the sensor width");
    DatasetSpec d;
    d.n_scenes = scenes;
    d.seed = seed;
    d.sensor = s.with_resolution(s.beams, s.width / spec.width_divisor);
    d.raycast.range_noise = spec.noise;
    d.sensor_height = height;
    return d;
  };
  ScenarioData data;
  data.source = emit_dataset(make(sc.source_sensor, spec.scenes, spec.seed, spec.source_height), out, Domain::source);
  data.target = emit_dataset(make(sc.target_sensor, spec.scenes, spec.seed, spec.target_height), out, Domain::target);
  data.held_out = emit_dataset(make(sc.target_sensor, spec.eval_scenes, spec.seed + 1000003, spec.target_height), out,
                               Domain::target, "target_eval");
  std::ostringstream cfg;
  cfg << "scenario = " << spec.scenario << "\nwidth_divisor = " << spec.width_divisor
      << "\nsource_manifest = " << std::filesystem::absolute(data.source.manifest).string()
      << "\ntarget_manifest = " << std::filesystem::absolute(data.target.manifest).string()
      << "\neval_manifest = " << std::filesystem::absolute(data.held_out.eval_manifest).string() << "\n";
  data.config = out / "data.cfg";
  write_text_atomically(data.config, cfg.str());
  return data;
}

}  // namespace rangeda
