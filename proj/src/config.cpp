#include "rangeda/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "rangeda/errors.hpp"
#include "rangeda/io_util.hpp"

namespace rangeda {

const char* target_processing_name(TargetProcessing p) {
  return p == TargetProcessing::upsample_then_pool ? "upsample_then_pool" : "project_at_source_resolution";
}

namespace {

SensorConfig sensor(Index beams, double up, double down, Index width) {
  SensorConfig s;
  s.beams = beams;
  s.fov_up_deg = up;
  s.fov_down_deg = down;
  s.height = beams;
  s.width = width;
  return s;
}

const SensorConfig kSixtyFour = sensor(64, 3.0, -25.0, 2048);
const SensorConfig kThirtyTwo = sensor(32, 10.0, -30.0, 1024);

std::string trim(std::string v) {
  v.erase(0, v.find_first_not_of(" \t\r"));
  const auto end = v.find_last_not_of(" \t\r");
  v.erase(end == std::string::npos ? 0 : end + 1);
  return v;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + key + "': cannot parse '" + raw + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("'" + key + "': expected true/false, got '" + raw + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}
std::string fmt(Index v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct KeyDef {
  Settings::Key key;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

#define RANGEDA_INT(NAME, HELP, FIELD)                                                        \
  KeyDef {                                                                                    \
    {NAME, HELP}, [](Settings& s, const std::string& v) { s.FIELD = parse_number<Index>(NAME, v); }, \
        [](const Settings& s) { return fmt(Index(s.FIELD)); }                                \
  }
#define RANGEDA_REAL(NAME, HELP, FIELD)                                                        \
  KeyDef {                                                                                     \
    {NAME, HELP}, [](Settings& s, const std::string& v) { s.FIELD = parse_number<double>(NAME, v); }, \
        [](const Settings& s) { return fmt(double(s.FIELD)); }                                \
  }
#define RANGEDA_BOOL(NAME, HELP, FIELD)                                                                   \
  KeyDef {                                                                                                \
    {NAME, HELP}, [](Settings& s, const std::string& v) { s.FIELD = parse_bool(NAME, v); },                \
        [](const Settings& s) { return fmt(bool(s.FIELD)); }                                              \
  }
#define RANGEDA_PATH(NAME, HELP, FIELD)                                                                   \
  KeyDef {                                                                                                \
    {NAME, HELP}, [](Settings& s, const std::string& v) { s.FIELD = trim(v); },                            \
        [](const Settings& s) { return s.FIELD.string(); }                                                \
  }

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      KeyDef{{"scenario", "preset: k2n-like or n2k-like"},
             [](Settings& s, const std::string& v) { s.scenario = ScenarioConfig::preset(trim(v)); },
             [](const Settings& s) { return s.scenario.name; }},
      RANGEDA_INT("source_beams", "source sensor beam count", scenario.source_sensor.beams),
      RANGEDA_REAL("source_fov_up", "source sensor upper FOV, degrees", scenario.source_sensor.fov_up_deg),
      RANGEDA_REAL("source_fov_down", "source sensor lower FOV, degrees", scenario.source_sensor.fov_down_deg),
      RANGEDA_INT("source_width", "source sensor native image width", scenario.source_sensor.width),
      RANGEDA_INT("target_beams", "target sensor beam count", scenario.target_sensor.beams),
      RANGEDA_REAL("target_fov_up", "target sensor upper FOV, degrees", scenario.target_sensor.fov_up_deg),
      RANGEDA_REAL("target_fov_down", "target sensor lower FOV, degrees", scenario.target_sensor.fov_down_deg),
      RANGEDA_INT("target_width", "target sensor native image width", scenario.target_sensor.width),
      RANGEDA_INT("resolution_height", "working image height", scenario.source_height),
      RANGEDA_INT("resolution_width", "working image width before width_divisor", scenario.source_width),
      KeyDef{{"target_processing", "upsample_then_pool or project_at_source_resolution"},
             [](Settings& s, const std::string& v) {
               const std::string t = trim(v);
               if (t == "upsample_then_pool") s.scenario.target_processing = TargetProcessing::upsample_then_pool;
               else if (t == "project_at_source_resolution")
                 s.scenario.target_processing = TargetProcessing::project_at_source_resolution;
               else throw ConfigError("'target_processing': unknown value '" + v + "'");
             },
             [](const Settings& s) { return std::string(target_processing_name(s.scenario.target_processing)); }},
      RANGEDA_INT("base_channels", "full-scale network channels", scenario.base_channels),
      RANGEDA_INT("width_divisor", "divides every image width", scenario.width_divisor),
      RANGEDA_INT("channel_divisor", "divides base_channels", scenario.channel_divisor),
      RANGEDA_INT("pretrain_epochs", "reconstruction epochs before scale_divisor", train.pretrain_epochs),
      RANGEDA_INT("joint_epochs", "joint epochs before scale_divisor", train.joint_epochs),
      RANGEDA_INT("batch_per_domain", "scans per domain per iteration", train.batch_per_domain),
      RANGEDA_REAL("alpha", "prototype EMA coefficient", train.alpha),
      RANGEDA_REAL("p_inc", "per-epoch selected fraction increment before scale_divisor", train.p_inc),
      RANGEDA_REAL("p_dw", "class-0 selection down-weight", train.p_dw),
      RANGEDA_REAL("lambda", "weight of the prototype alignment loss", train.lambda),
      RANGEDA_REAL("lr", "joint training base learning rate", train.lr),
      RANGEDA_REAL("pretrain_lr", "reconstruction pretraining base learning rate", train.pretrain_lr),
      RANGEDA_REAL("momentum", "SGD momentum", train.momentum),
      RANGEDA_REAL("weight_decay", "SGD weight decay", train.weight_decay),
      RANGEDA_INT("scale_divisor", "divides epoch counts, multiplies p_inc", train.scale_divisor),
      KeyDef{{"seed", "run seed"},
             [](Settings& s, const std::string& v) { s.train.seed = parse_number<std::uint64_t>("seed", v); },
             [](const Settings& s) { return fmt(s.train.seed); }},
      RANGEDA_INT("reservoir", "similarity samples kept per epoch for thresholds", train.reservoir),
      RANGEDA_INT("knn_window", "KNN window size (odd)", train.knn.window),
      RANGEDA_INT("knn_k", "KNN neighbours", train.knn.k),
      RANGEDA_REAL("knn_cutoff", "KNN range cutoff, meters", train.knn.cutoff),
      RANGEDA_REAL("knn_sigma", "KNN Gaussian std over window offsets", train.knn.sigma),
      RANGEDA_BOOL("knn_gaussian", "Gaussian (true) or uniform (false) KNN kernel", train.knn.gaussian),
      RANGEDA_BOOL("source_first", "project at the source resolution", train.switches.source_first),
      RANGEDA_BOOL("recon_pretrain", "run reconstruction pretraining", train.switches.recon_pretrain),
      RANGEDA_BOOL("enhanced_prototypes", "concatenate encoder features into prototypes",
                   train.switches.enhanced_prototypes),
      RANGEDA_BOOL("averaged_prototypes", "keep EMA prototypes across iterations", train.switches.averaged_prototypes),
      RANGEDA_BOOL("deactivate_mask", "skip the validity-mask multiply after normalization",
                   train.switches.deactivate_mask),
      RANGEDA_BOOL("confidence_weighting", "weight the alignment loss by tau", train.switches.confidence_weighting),
      RANGEDA_BOOL("background_down_weighting", "apply p_dw to class 0", train.switches.background_down_weighting),
      RANGEDA_PATH("source_manifest", "labelled source manifest", source_manifest),
      RANGEDA_PATH("target_manifest", "unlabelled target manifest", target_manifest),
      RANGEDA_PATH("eval_manifest", "labelled held-out target manifest (optional)", eval_manifest),
      RANGEDA_PATH("runs_dir", "parent of run directories", runs_dir),
      KeyDef{{"name", "run name"},
             [](Settings& s, const std::string& v) { s.run_name = trim(v); },
             [](const Settings& s) { return s.run_name; }},
  };
  return defs;
}

#undef RANGEDA_INT
#undef RANGEDA_REAL
#undef RANGEDA_BOOL
#undef RANGEDA_PATH

const KeyDef& find_key(const std::string& key) {
  for (const auto& d : key_defs()) {
    if (d.key.name == key) return d;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

ScenarioConfig ScenarioConfig::preset(const std::string& name) {
  ScenarioConfig s;
  s.name = name;
  if (name == "k2n-like") {
    s.source_sensor = kSixtyFour;
    s.target_sensor = kThirtyTwo;
    s.source_height = 64;
    s.source_width = 2048;
    s.target_processing = TargetProcessing::upsample_then_pool;
    s.base_channels = 32;
  } else if (name == "n2k-like") {
    s.source_sensor = kThirtyTwo;
    s.target_sensor = kSixtyFour;
    s.source_height = 32;
    s.source_width = 1024;
    s.target_processing = TargetProcessing::project_at_source_resolution;
    s.base_channels = 128;
  } else {
    throw ConfigError("unknown scenario '" + name + "' (expected k2n-like or n2k-like)");
  }
  return s;
}

void ScenarioConfig::validate() const {
  if (width_divisor < 1 || channel_divisor < 1) throw ConfigError("width_divisor and channel_divisor must be >= 1");
  for (const auto* s : {&source_sensor, &target_sensor}) {
    if (s->beams < 1 || s->width < 1 || !(s->fov_up_deg > s->fov_down_deg)) {
      throw ConfigError("sensor needs beams >= 1, width >= 1 and fov_up > fov_down");
    }
    if (s->width % width_divisor != 0) throw ConfigError("sensor width must be divisible by width_divisor");
  }
  if (source_height < 1 || source_width < 1 || source_width % width_divisor != 0) {
    throw ConfigError("source resolution must be positive with width divisible by width_divisor");
  }
  if (target_processing == TargetProcessing::upsample_then_pool && source_height % target_sensor.beams != 0) {
    throw ConfigError("upsample_then_pool needs the source height to be a multiple of the target beam count");
  }
  if (base_channels % channel_divisor != 0 || network_channels() < 8) {
    throw ConfigError("base_channels / channel_divisor must be an integer >= 8");
  }
}

const std::vector<std::string>& Switches::names() {
  static const std::vector<std::string> n = {"source_first",    "recon_pretrain",       "enhanced_prototypes",
                                             "averaged_prototypes", "deactivate_mask", "confidence_weighting",
                                             "background_down_weighting"};
  return n;
}

bool& Switches::by_name(const std::string& name) {
  if (name == "source_first") return source_first;
  if (name == "recon_pretrain") return recon_pretrain;
  if (name == "enhanced_prototypes") return enhanced_prototypes;
  if (name == "averaged_prototypes") return averaged_prototypes;
  if (name == "deactivate_mask") return deactivate_mask;
  if (name == "confidence_weighting") return confidence_weighting;
  if (name == "background_down_weighting") return background_down_weighting;
  throw ConfigError("unknown switch '" + name + "'");
}

bool Switches::by_name(const std::string& name) const { return const_cast<Switches*>(this)->by_name(name); }

void TrainConfig::validate() const {
  if (pretrain_epochs < 1 || joint_epochs < 1 || batch_per_domain < 1) {
    throw ConfigError("epoch counts and batch_per_domain must be >= 1");
  }
  if (scale_divisor < 1) throw ConfigError("scale_divisor must be >= 1");
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(p_inc > 0) || !(p_dw > 0 && p_dw <= 1)) throw ConfigError("p_inc must be > 0 and p_dw in (0, 1]");
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (!(lr > 0) || !(pretrain_lr > 0) || momentum < 0 || weight_decay < 0) throw ConfigError("invalid optimizer settings");
  if (reservoir < 1) throw ConfigError("reservoir must be >= 1");
  if (knn.window < 1 || knn.window % 2 == 0) throw ConfigError("knn_window must be odd");
  if (knn.k < 1 || knn.k > knn.window * knn.window) throw ConfigError("knn_k must lie in [1, knn_window^2]");
  if (!(knn.cutoff > 0) || !(knn.sigma > 0)) throw ConfigError("knn_cutoff and knn_sigma must be > 0");
}

Index TrainConfig::scaled_pretrain_epochs() const {
  return std::max<Index>(1, (pretrain_epochs + scale_divisor - 1) / scale_divisor);
}

Index TrainConfig::scaled_joint_epochs() const {
  return std::max<Index>(1, (joint_epochs + scale_divisor - 1) / scale_divisor);
}

const std::vector<Settings::Key>& Settings::keys() {
  static const std::vector<Key> k = [] {
    std::vector<Key> out;
    for (const auto& d : key_defs()) out.push_back(d.key);
    return out;
  }();
  return k;
}

void Settings::set(const std::string& key, const std::string& value) { find_key(key).set(*this, value); }

std::string Settings::get(const std::string& key) const { return find_key(key).get(*this); }

std::string Settings::to_text() const {
  std::ostringstream out;
  for (const auto& d : key_defs()) out << d.key.name << " = " << d.get(*this) << "\n";
  return out.str();
}

void Settings::validate() const {
  scenario.validate();
  train.validate();
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) { return parse_key_values(read_text(path)); }

Settings resolve_settings(const KeyValues& file, const KeyValues& flags) {
  KeyValues merged = file;
  for (const auto& [k, v] : flags) merged[k] = v;
  Settings s;
  if (const auto it = merged.find("scenario"); it != merged.end()) s.set("scenario", it->second);
  for (const auto& [k, v] : merged) {
    if (k != "scenario") s.set(k, v);
  }
  s.validate();
  return s;
}

}  // namespace rangeda
