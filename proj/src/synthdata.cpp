#include "rangeda/synthdata.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "rangeda/errors.hpp"
#include "rangeda/io_util.hpp"
#include "rangeda/scan_io.hpp"

namespace rangeda {

namespace {

constexpr double kRoadHalfWidth = 5.0;
constexpr double kSidewalkWidth = 3.0;
constexpr double kSidewalkHeight = 0.15;
constexpr double kSensorClearance = 3.5;
constexpr double kPlacementMargin = 0.3;
constexpr int kMaxPlacementTries = 2000;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::array<Eigen::Vector2d, 4> corners(const Box& b) {
  const Eigen::Rotation2Dd rot(b.yaw);
  const Eigen::Vector2d ax = rot * Eigen::Vector2d(b.half_size.x(), 0.0);
  const Eigen::Vector2d ay = rot * Eigen::Vector2d(0.0, b.half_size.y());
  return {b.center + ax + ay, b.center - ax + ay, b.center - ax - ay, b.center + ax - ay};
}

bool inside_extent(const Box& b, double extent) {
  for (const auto& c : corners(b)) {
    if (std::abs(c.x()) > extent || std::abs(c.y()) > extent) return false;
  }
  return true;
}

bool inside_extent(const Cylinder& c, double extent) {
  return std::abs(c.center.x()) + c.radius <= extent && std::abs(c.center.y()) + c.radius <= extent;
}

// Slab test in the box frame; returns entry distance along dir.
bool intersect_box(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& t_out) {
  const double c = std::cos(-b.yaw), s = std::sin(-b.yaw);
  const Eigen::Vector2d po = o.head<2>() - b.center;
  const Eigen::Vector3d lo(c * po.x() - s * po.y(), s * po.x() + c * po.y(), o.z());
  const Eigen::Vector3d ld(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
  const Eigen::Vector3d mn(-b.half_size.x(), -b.half_size.y(), b.z_min);
  const Eigen::Vector3d mx(b.half_size.x(), b.half_size.y(), b.z_max);
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ld[a]) < 1e-12) {
      if (lo[a] < mn[a] || lo[a] > mx[a]) return false;
      continue;
    }
    double ta = (mn[a] - lo[a]) / ld[a];
    double tb = (mx[a] - lo[a]) / ld[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (t0 <= 0.0) return false;  // origin inside or box behind
  t_out = t0;
  return true;
}

bool intersect_cylinder(const Cylinder& cyl, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& t_out) {
  double best = std::numeric_limits<double>::infinity();
  const Eigen::Vector2d oc = o.head<2>() - cyl.center;
  const Eigen::Vector2d dxy = d.head<2>();
  const double a = dxy.squaredNorm();
  if (a > 1e-12) {
    const double b = 2.0 * oc.dot(dxy);
    const double c = oc.squaredNorm() - cyl.radius * cyl.radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / (2.0 * a);
      const double z = o.z() + t * d.z();
      if (t > 0.0 && z >= 0.0 && z <= cyl.height) best = t;
    }
  }
  // Top cap.
  if (std::abs(d.z()) > 1e-12) {
    const double t = (cyl.height - o.z()) / d.z();
    if (t > 0.0 && t < best && (oc + t * dxy).squaredNorm() <= cyl.radius * cyl.radius) best = t;
  }
  if (!std::isfinite(best)) return false;
  t_out = best;
  return true;
}

Box make_box(double cx, double cy, double hx, double hy, double yaw, double height, std::int32_t label) {
  Box b;
  b.center = {cx, cy};
  b.half_size = {hx, hy};
  b.yaw = yaw;
  b.z_min = 0.0;
  b.z_max = height;
  b.label = label;
  return b;
}

double side(Rng& rng) { return uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0; }

struct Placer {
  const SceneSpec& spec;
  Scene& scene;
  std::vector<Box> solids;  // boxes excluding sidewalk strips

  bool clear(const Box& b) const {
    if (!inside_extent(b, spec.extent)) return false;
    const Cylinder sensor{{0.0, 0.0}, kSensorClearance, 0.0, 0};
    if (footprints_overlap(b, sensor)) return false;
    for (const auto& o : solids) {
      if (footprints_overlap(o, b, kPlacementMargin)) return false;
    }
    for (const auto& o : scene.cylinders) {
      if (footprints_overlap(b, o, kPlacementMargin)) return false;
    }
    return true;
  }

  bool clear(const Cylinder& c) const {
    if (!inside_extent(c, spec.extent)) return false;
    if (c.center.norm() < kSensorClearance + c.radius) return false;
    for (const auto& o : solids) {
      if (footprints_overlap(o, c, kPlacementMargin)) return false;
    }
    for (const auto& o : scene.cylinders) {
      if (footprints_overlap(o, c, kPlacementMargin)) return false;
    }
    return true;
  }

  template <typename Sampler>
  void place_boxes(Index count, Sampler&& sample, const char* what) {
    for (Index i = 0; i < count; ++i) {
      bool placed = false;
      for (int t = 0; t < kMaxPlacementTries && !placed; ++t) {
        Box b = sample();
        if (clear(b)) {
          solids.push_back(b);
          scene.boxes.push_back(b);
          placed = true;
        }
      }
      if (!placed) throw Error(std::string("generate_scene: could not place ") + what);
    }
  }

  template <typename Sampler>
  void place_cylinders(Index count, Sampler&& sample, const char* what) {
    for (Index i = 0; i < count; ++i) {
      bool placed = false;
      for (int t = 0; t < kMaxPlacementTries && !placed; ++t) {
        Cylinder c = sample();
        if (clear(c)) {
          scene.cylinders.push_back(c);
          placed = true;
        }
      }
      if (!placed) throw Error(std::string("generate_scene: could not place ") + what);
    }
  }
};

}  // namespace

const char* class_name(std::int32_t c) {
  switch (c) {
    case kUnlabeled: return "unlabeled";
    case kDrivable: return "drivable";
    case kSidewalk: return "sidewalk";
    case kVehicle: return "vehicle";
    case kPedestrian: return "pedestrian";
    case kPole: return "pole";
    case kBuilding: return "building";
    default: return "unknown";
  }
}

void SceneSpec::validate() const {
  if (!(extent > 0.0)) throw ConfigError("scene: extent must be positive");
  if (extent < 2.0 * (kRoadHalfWidth + kSidewalkWidth)) {
    throw ConfigError("scene: extent too small for the street layout");
  }
  if (counts.vehicles < 0 || counts.pedestrians < 0 || counts.poles < 0 || counts.buildings < 0 ||
      counts.clutter < 0) {
    throw ConfigError("scene: object counts must be >= 0");
  }
}

bool footprints_overlap(const Box& a, const Box& b, double margin) {
  // Separating axis test on the two oriented rectangles, each inflated by margin/2.
  const auto ca = corners(a), cb = corners(b);
  const std::array<Eigen::Vector2d, 4> axes = {
      Eigen::Vector2d(std::cos(a.yaw), std::sin(a.yaw)), Eigen::Vector2d(-std::sin(a.yaw), std::cos(a.yaw)),
      Eigen::Vector2d(std::cos(b.yaw), std::sin(b.yaw)), Eigen::Vector2d(-std::sin(b.yaw), std::cos(b.yaw))};
  for (const auto& ax : axes) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin, bmin = amin, bmax = -amin;
    for (const auto& p : ca) {
      amin = std::min(amin, p.dot(ax));
      amax = std::max(amax, p.dot(ax));
    }
    for (const auto& p : cb) {
      bmin = std::min(bmin, p.dot(ax));
      bmax = std::max(bmax, p.dot(ax));
    }
    if (amax + margin <= bmin || bmax + margin <= amin) return false;
  }
  return true;
}

bool footprints_overlap(const Box& a, const Cylinder& b, double margin) {
  const double c = std::cos(-a.yaw), s = std::sin(-a.yaw);
  const Eigen::Vector2d p = b.center - a.center;
  const Eigen::Vector2d local(c * p.x() - s * p.y(), s * p.x() + c * p.y());
  const Eigen::Vector2d closest(std::clamp(local.x(), -a.half_size.x(), a.half_size.x()),
                                std::clamp(local.y(), -a.half_size.y(), a.half_size.y()));
  return (local - closest).norm() < b.radius + margin;
}

bool footprints_overlap(const Cylinder& a, const Cylinder& b, double margin) {
  return (a.center - b.center).norm() < a.radius + b.radius + margin;
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Scene scene;
  scene.extent = spec.extent;
  const double e = spec.extent;

  if (spec.sidewalks) {
    for (double sgn : {-1.0, 1.0}) {
      Box strip;
      strip.center = {0.0, sgn * (kRoadHalfWidth + 0.5 * kSidewalkWidth)};
      strip.half_size = {e, 0.5 * kSidewalkWidth};
      strip.z_max = kSidewalkHeight;
      strip.label = kSidewalk;
      scene.boxes.push_back(strip);
    }
  }

  Placer placer{spec, scene, {}};
  const double curb = kRoadHalfWidth + kSidewalkWidth;

  placer.place_boxes(spec.counts.buildings, [&] {
    const double hx = uniform(rng, 4.0, 10.0), hy = uniform(rng, 1.5, 4.0);
    const double cy = side(rng) * uniform(rng, curb + 1.5 + hy, std::max(curb + 2.0 + hy, e - hy - 0.5));
    return make_box(uniform(rng, -e + hx, e - hx), cy, hx, hy, uniform(rng, -0.08, 0.08),
                      uniform(rng, 5.0, 14.0), kBuilding);
  }, "building");

  placer.place_boxes(spec.counts.vehicles, [&] {
    const double hx = uniform(rng, 1.9, 2.4), hy = uniform(rng, 0.8, 1.0);
    const double cy = side(rng) * uniform(rng, 1.0 + hy, kRoadHalfWidth - hy - 0.2);
    const double yaw = uniform(rng, -0.15, 0.15) + (uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : std::numbers::pi);
    return make_box(uniform(rng, -e + 3.0, e - 3.0), cy, hx, hy, yaw, uniform(rng, 1.4, 1.9), kVehicle);
  }, "vehicle");

  placer.place_cylinders(spec.counts.poles, [&] {
    Cylinder c;
    c.center = {uniform(rng, -e + 1.0, e - 1.0), side(rng) * uniform(rng, kRoadHalfWidth + 0.2, kRoadHalfWidth + 0.6)};
    c.radius = uniform(rng, 0.08, 0.16);
    c.height = uniform(rng, 4.0, 8.0);
    c.label = kPole;
    return c;
  }, "pole");

  placer.place_cylinders(spec.counts.pedestrians, [&] {
    Cylinder c;
    const double y = uniform(rng, 0.0, 1.0) < 0.7
                         ? side(rng) * uniform(rng, kRoadHalfWidth + 0.8, curb - 0.4)
                         : uniform(rng, -kRoadHalfWidth + 0.5, kRoadHalfWidth - 0.5);
    c.center = {uniform(rng, -e + 1.0, e - 1.0), y};
    c.radius = uniform(rng, 0.22, 0.35);
    c.height = uniform(rng, 1.55, 1.9);
    c.label = kPedestrian;
    return c;
  }, "pedestrian");

  placer.place_boxes(spec.counts.clutter, [&] {
    const double hx = uniform(rng, 0.3, 1.0), hy = uniform(rng, 0.3, 1.0);
    const double cy = side(rng) * uniform(rng, curb + 0.5 + hy, std::max(curb + 1.0 + hy, e - hy - 0.5));
    return make_box(uniform(rng, -e + 1.0, e - 1.0), cy, hx, hy, uniform(rng, -std::numbers::pi, std::numbers::pi),
                      uniform(rng, 0.4, 2.2), kUnlabeled);
  }, "clutter");

  return scene;
}

bool intersect_scene(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                     double max_range, double& t_hit, std::int32_t& label) {
  double best = max_range;
  std::int32_t best_label = -1;
  if (dir.z() < -1e-12) {
    const double t = -origin.z() / dir.z();
    const Eigen::Vector3d p = origin + t * dir;
    if (t > 0.0 && t < best && std::abs(p.x()) <= scene.extent && std::abs(p.y()) <= scene.extent) {
      best = t;
      best_label = kDrivable;
    }
  }
  double t = 0.0;
  for (const auto& b : scene.boxes) {
    if (intersect_box(b, origin, dir, t) && t < best) {
      best = t;
      best_label = b.label;
    }
  }
  for (const auto& c : scene.cylinders) {
    if (intersect_cylinder(c, origin, dir, t) && t < best) {
      best = t;
      best_label = c.label;
    }
  }
  if (best_label < 0) return false;
  t_hit = best;
  label = best_label;
  return true;
}

VirtualScan raycast(const Scene& scene, const SensorConfig& sensor, const SensorPose& pose,
                    const RaycastOptions& options) {
  sensor.validate();
  Rng rng(options.noise_seed);
  std::normal_distribution<double> noise(0.0, options.range_noise > 0.0 ? options.range_noise : 1.0);
  const double fov_up = sensor.fov_up_rad(), fov = sensor.fov_rad();
  const double cy = std::cos(pose.yaw), sy = std::sin(pose.yaw);

  std::vector<float> xyz;
  std::vector<std::int32_t> labels;
  xyz.reserve(static_cast<std::size_t>(3 * sensor.beams * sensor.width));
  for (Index i = 0; i < sensor.beams; ++i) {
    const double elevation = fov_up - (double(i) + 0.5) * fov / double(sensor.beams);
    for (Index j = 0; j < sensor.width; ++j) {
      const double azimuth = std::numbers::pi - (double(j) + 0.5) * 2.0 * std::numbers::pi / double(sensor.width) +
                             options.azimuth_offset;
      const Eigen::Vector3d d_sensor(std::cos(elevation) * std::cos(azimuth),
                                     std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
      const Eigen::Vector3d d_world(cy * d_sensor.x() - sy * d_sensor.y(), sy * d_sensor.x() + cy * d_sensor.y(),
                                    d_sensor.z());
      double t = 0.0;
      std::int32_t label = 0;
      if (!intersect_scene(scene, pose.position, d_world, options.max_range, t, label)) continue;
      double r = t;
      if (options.range_noise > 0.0) r = std::max(0.05, t + noise(rng));
      const Eigen::Vector3d p = r * d_sensor;
      xyz.push_back(static_cast<float>(p.x()));
      xyz.push_back(static_cast<float>(p.y()));
      xyz.push_back(static_cast<float>(p.z()));
      labels.push_back(label);
    }
  }
  VirtualScan scan;
  scan.sensor = sensor;
  scan.cloud.points = Eigen::Map<const Eigen::Matrix3Xf>(xyz.data(), 3, static_cast<Index>(labels.size()));
  scan.cloud.labels = std::move(labels);
  return scan;
}

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

SceneSpec dataset_scene_spec(const DatasetSpec& spec, Domain domain, Index i) {
  Rng rng(mix_seed(mix_seed(spec.seed, domain == Domain::source ? 11 : 23), static_cast<std::uint64_t>(i)));
  auto pick = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  SceneSpec s;
  s.seed = rng();
  s.extent = spec.extent;
  s.sidewalks = true;
  s.counts.vehicles = pick(3, 8);
  s.counts.pedestrians = pick(3, 7);
  s.counts.poles = pick(3, 7);
  s.counts.buildings = pick(2, 5);
  s.counts.clutter = pick(3, 7);
  return s;
}

std::string sensor_to_text(const SensorConfig& s) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "beams = " << s.beams << "\n"
      << "fov_up = " << s.fov_up_deg << "\n"
      << "fov_down = " << s.fov_down_deg << "\n"
      << "width = " << s.width << "\n"
      << "height = " << s.height << "\n";
  return out.str();
}

SensorConfig sensor_from_text(const std::string& text) {
  SensorConfig s;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t"));
      v.erase(v.find_last_not_of(" \t\r") + 1);
      return v;
    };
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key == "beams") s.beams = std::stol(val);
    else if (key == "fov_up") s.fov_up_deg = std::stod(val);
    else if (key == "fov_down") s.fov_down_deg = std::stod(val);
    else if (key == "width") s.width = std::stol(val);
    else if (key == "height") s.height = std::stol(val);
  }
  s.validate();
  return s;
}

EmittedDataset emit_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir, Domain domain,
                            const std::string& dir_name) {
  namespace fs = std::filesystem;
  if (spec.n_scenes < 0) throw ConfigError("emit_dataset: n_scenes must be >= 0");
  if (!(spec.sensor_height > 0.0)) throw ConfigError("emit_dataset: sensor_height must be > 0");
  EmittedDataset ds;
  ds.root = out_dir / (dir_name.empty() ? std::string(domain_name(domain)) : dir_name);
  std::error_code ec;
  fs::create_directories(ds.root / "velodyne", ec);
  if (!ec) fs::create_directories(ds.root / "labels", ec);
  if (ec) throw IoError("cannot create " + ds.root.string() + ": " + ec.message());

  std::ostringstream manifest, eval_manifest;
  for (Index i = 0; i < spec.n_scenes; ++i) {
    const SceneSpec scene_spec = dataset_scene_spec(spec, domain, i);
    const Scene scene = generate_scene(scene_spec);
    RaycastOptions opts = spec.raycast;
    opts.noise_seed = mix_seed(scene_spec.seed, 97);
    SensorPose pose;
    pose.position.z() = spec.sensor_height;
    VirtualScan scan = raycast(scene, spec.sensor, pose, opts);
    scan.scene_id = i;

    std::ostringstream stem;
    stem << std::setw(6) << std::setfill('0') << i;
    const std::string bin = "velodyne/" + stem.str() + ".bin";
    const std::string lab = "labels/" + stem.str() + ".label";
    write_points(ds.root / bin, scan.cloud);
    write_labels(ds.root / lab, scan.cloud.labels);
    manifest << bin << "\n";
    if (domain == Domain::source) manifest << lab << "\n";
    eval_manifest << bin << "\n" << lab << "\n";
  }
  ds.manifest = ds.root / "manifest.txt";
  ds.eval_manifest = ds.root / "eval_manifest.txt";
  write_text_atomically(ds.manifest, manifest.str());
  write_text_atomically(ds.eval_manifest, eval_manifest.str());
  write_text_atomically(ds.root / "sensor.txt", sensor_to_text(spec.sensor));
  ds.scans = spec.n_scenes;
  return ds;
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest) {
  std::istringstream in(read_text(manifest));
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.push_back(manifest.parent_path() / line);
  }
  return out;
}

}  // namespace rangeda
