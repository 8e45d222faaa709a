#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rangeda/geometry.hpp"

namespace rangeda {

// Class palette of the synthetic world. Class 0 collects unlabeled clutter
// and, in range images, empty pixels.
enum SemanticClass : std::int32_t {
  kUnlabeled = 0,
  kDrivable = 1,
  kSidewalk = 2,
  kVehicle = 3,
  kPedestrian = 4,
  kPole = 5,
  kBuilding = 6,
};
inline constexpr Index kNumClasses = 7;  // C + 1
const char* class_name(std::int32_t c);

struct ObjectCounts {
  Index vehicles = 0;
  Index pedestrians = 0;
  Index poles = 0;
  Index buildings = 0;
  Index clutter = 0;  // class-0 boxes
};

struct SceneSpec {
  std::uint64_t seed = 0;
  double extent = 40.0;  // ground spans [-extent, extent]^2, meters
  ObjectCounts counts;
  bool sidewalks = false;
  void validate() const;
};

struct Box {
  Eigen::Vector2d center;
  Eigen::Vector2d half_size;  // along the box's local x / y
  double yaw = 0.0;
  double z_min = 0.0;
  double z_max = 1.0;
  std::int32_t label = kUnlabeled;
};

struct Cylinder {
  Eigen::Vector2d center;
  double radius = 0.1;
  double height = 1.0;
  std::int32_t label = kUnlabeled;
};

/// Analytic scene: ground plane z = 0 over the extent square plus solids.
struct Scene {
  double extent = 40.0;
  std::vector<Box> boxes;        // includes sidewalk strips
  std::vector<Cylinder> cylinders;
};

/// Deterministic for a fixed spec. Footprints are placed by rejection
/// sampling; throws Error if a placement fails after bounded retries.
Scene generate_scene(const SceneSpec& spec);

// 2D footprint overlap tests used by placement (exposed for testing).
bool footprints_overlap(const Box& a, const Box& b, double margin = 0.0);
bool footprints_overlap(const Box& a, const Cylinder& b, double margin = 0.0);
bool footprints_overlap(const Cylinder& a, const Cylinder& b, double margin = 0.0);

struct SensorPose {
  Eigen::Vector3d position{0.0, 0.0, 1.73};
  double yaw = 0.0;  // radians, world frame
};

struct RaycastOptions {
  double range_noise = 0.02;     // sigma, meters
  double azimuth_offset = 0.0;   // radians, added to every ray
  double max_range = 80.0;
  std::uint64_t noise_seed = 0;
};

struct VirtualScan {
  PointCloud cloud;  // sensor frame, labelled
  SensorConfig sensor;
  std::int64_t scene_id = 0;
};

/// Casts beams x width rays on the sensor's angular grid and keeps first hits.
VirtualScan raycast(const Scene& scene, const SensorConfig& sensor, const SensorPose& pose,
                    const RaycastOptions& options = {});

/// Per-surface first-hit query. Returns false on a miss.
bool intersect_scene(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                     double max_range, double& t_hit, std::int32_t& label);

enum class Domain { source, target };
const char* domain_name(Domain d);

struct DatasetSpec {
  Index n_scenes = 10;
  std::uint64_t seed = 0;
  SensorConfig sensor;
  RaycastOptions raycast;
  double extent = 40.0;
  double sensor_height = 1.73;  // meters above ground
};

/// Scene layout for index i of a dataset (counts randomized per scene).
SceneSpec dataset_scene_spec(const DatasetSpec& spec, Domain domain, Index i);

struct EmittedDataset {
  std::filesystem::path root;       // <out>/<domain name>
  std::filesystem::path manifest;   // what the trainer may read
  std::filesystem::path eval_manifest;
  Index scans = 0;
};

/// Writes <out>/<dir_name>/{velodyne,labels}/NNNNNN.{bin,label}, manifest.txt
/// (targets list point files only), eval_manifest.txt and sensor.txt.
EmittedDataset emit_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                            Domain domain, const std::string& dir_name = "");

/// Manifest file: one path per line, relative to the manifest's directory.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest);

std::string sensor_to_text(const SensorConfig& s);
SensorConfig sensor_from_text(const std::string& text);

}  // namespace rangeda
