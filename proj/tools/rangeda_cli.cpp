// rangeda: command-line front end for data generation, training, evaluation
// and inference.

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rangeda/config.hpp"
#include "rangeda/dataset.hpp"
#include "rangeda/errors.hpp"
#include "rangeda/io_util.hpp"
#include "rangeda/scan_io.hpp"
#include "rangeda/synthdata.hpp"
#include "rangeda/trainer.hpp"

namespace fs = std::filesystem;
using namespace rangeda;

namespace {

// Exit codes.
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

class UsageFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Registers --config plus one --<key> option per settings key.
struct SettingsFlags {
  std::string config;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value settings file");
    for (const auto& k : Settings::keys()) app->add_option("--" + k.name, values[k.name], k.help);
  }

  Settings resolve(CLI::App* app) const {
    KeyValues flags;
    for (const auto& k : Settings::keys()) {
      if (app->count("--" + k.name) > 0) flags[k.name] = values.at(k.name);
    }
    return resolve_settings(config.empty() ? KeyValues{} : load_key_values(config), flags);
  }
};

LogFn stderr_log() {
  return [](const std::string& line) { std::cerr << line << std::endl; };
}

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw UsageFailure("--domain must be 'source' or 'target', got '" + s + "'");
}

std::string percent(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << 100.0 * v;
  return o.str();
}

void print_iou(const IouReport& r) {
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    std::cout << std::setw(12) << class_name(static_cast<std::int32_t>(c)) << "  "
              << (r.per_class[c] ? percent(*r.per_class[c]) : std::string("absent")) << (c == 0 ? "  (not in mean)" : "")
              << "\n";
  }
  std::cout << std::setw(12) << "mIoU" << "  " << percent(r.miou) << "\n";
}

void append_eval_csv(const fs::path& path, const std::string& what, const IouReport& r) {
  std::string text;
  if (fs::exists(path)) text = read_text(path);
  else {
    text = "source";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) text += ",iou_" + std::to_string(c);
    text += ",miou\n";
  }
  std::ostringstream row;
  row << what << std::fixed << std::setprecision(6);
  for (const auto& v : r.per_class) {
    row << ",";
    if (v) row << *v;
  }
  row << "," << r.miou << "\n";
  write_text_atomically(path, text + row.str());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based domain adaptation for range-image LiDAR segmentation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write synthetic source, target and held-out target datasets");
  std::string gen_out = "data", gen_scenario = "k2n-like";
  std::uint64_t gen_seed = 0;
  Index gen_scenes = 50, gen_eval_scenes = 20, gen_divisor = 1;
  double gen_target_height = 1.84, gen_noise = 0.02;
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();
  gen->add_option("--seed", gen_seed, "dataset seed")->capture_default_str();
  gen->add_option("--scenes", gen_scenes, "scenes per training domain")->capture_default_str();
  gen->add_option("--eval-scenes", gen_eval_scenes, "held-out labelled target scenes")->capture_default_str();
  gen->add_option("--scenario", gen_scenario, "sensor pair: k2n-like or n2k-like")->capture_default_str();
  gen->add_option("--width-divisor", gen_divisor, "divide sensor azimuth resolution")->capture_default_str();
  gen->add_option("--target-height", gen_target_height, "target sensor mount height, meters")->capture_default_str();
  gen->add_option("--noise", gen_noise, "range noise sigma, meters")->capture_default_str();

  // stats
  auto* stats = app.add_subcommand("stats", "Compute normalization statistics and class weights");
  SettingsFlags stats_flags;
  stats_flags.attach(stats);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Reconstruction pretraining");
  SettingsFlags pre_flags;
  pre_flags.attach(pre);

  // adapt
  auto* ad = app.add_subcommand("adapt", "Joint training with prototype alignment");
  SettingsFlags ad_flags;
  ad_flags.attach(ad);
  std::string ad_ckpt;
  bool ad_scratch = false;
  ad->add_option("--checkpoint", ad_ckpt, "pretrain checkpoint (default: <run>/checkpoints/pretrain.ckpt)");
  ad->add_flag("--from-scratch", ad_scratch, "start from random weights instead of a pretrain checkpoint");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Run the full method and single-component-off variants");
  SettingsFlags abl_flags;
  abl_flags.attach(abl);
  std::string abl_switches, abl_seeds = "1,2,3";
  abl->add_option("--switches", abl_switches, "comma-separated components to switch off (default: all)");
  abl->add_option("--seeds", abl_seeds, "comma-separated seeds")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Per-class IoU and mIoU over a labelled manifest");
  std::string ev_ckpt, ev_manifest, ev_domain = "target", ev_pred, ev_csv;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint");
  ev->add_option("--predictions", ev_pred, "directory of predicted .label files instead of a checkpoint");
  ev->add_option("--manifest", ev_manifest, "labelled manifest")->required();
  ev->add_option("--domain", ev_domain, "source or target")->capture_default_str();
  ev->add_option("--csv", ev_csv, "append the result to this CSV (default: <run>/eval.csv)");

  // infer
  auto* inf = app.add_subcommand("infer", "Write per-point label files");
  std::string inf_ckpt, inf_manifest, inf_scan, inf_domain = "target", inf_out;
  inf->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required();
  inf->add_option("--manifest", inf_manifest, "manifest of scans");
  inf->add_option("--scan", inf_scan, "single point file");
  inf->add_option("--domain", inf_domain, "source or target")->capture_default_str();
  inf->add_option("--out", inf_out, "output directory")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "Time forward pass and KNN per scan");
  std::string bench_ckpt, bench_manifest, bench_domain = "target";
  Index bench_repeat = 3;
  bench->add_option("--checkpoint", bench_ckpt, "model checkpoint")->required();
  bench->add_option("--manifest", bench_manifest, "manifest of scans")->required();
  bench->add_option("--domain", bench_domain, "source or target")->capture_default_str();
  bench->add_option("--repeat", bench_repeat, "passes over the manifest")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (gen_divisor < 1) throw UsageFailure("--width-divisor must be >= 1");
      if (!(gen_target_height > 0)) throw UsageFailure("--target-height must be > 0");
      ScenarioDataSpec spec;
      spec.scenario = gen_scenario;
      spec.seed = gen_seed;
      spec.scenes = gen_scenes;
      spec.eval_scenes = gen_eval_scenes;
      spec.width_divisor = gen_divisor;
      spec.target_height = gen_target_height;
      spec.noise = gen_noise;
      const fs::path out(gen_out);
      const ScenarioData data = emit_scenario_data(spec, out);
      const auto& src = data.source;
      const auto& tgt = data.target;
      const auto& held = data.held_out;
      std::cout << "wrote " << src.scans << " source, " << tgt.scans << " target and " << held.scans
                << " held-out target scans to " << out.string() << "\nsettings: " << data.config.string()
                << "\n";
      return 0;
    }

    if (stats->parsed()) {
      const Settings s = stats_flags.resolve(stats);
      if (s.source_manifest.empty()) throw UsageFailure("stats needs --source_manifest (or a --config naming it)");
      const ScenarioPlan plan = plan_scenario(s.scenario, s.train.switches.source_first);
      const ImageSet images = load_images(s.source_manifest, plan.source, true);
      std::vector<const RangeImage*> ptrs;
      for (const auto& img : images.images) ptrs.push_back(&img);
      const NormStats ns = compute_norm_stats(ptrs);
      const TrainingSet set = prepare(images, ns, s.train.switches.deactivate_mask);
      const auto hist = class_histogram(set, kNumClasses);
      const ClassWeights w = ClassWeights::from_counts(hist);
      std::ostringstream out;
      out << std::setprecision(9);
      const char* names[] = {"range", "x", "y", "z"};
      for (int c = 0; c < kNumChannels; ++c) {
        out << "mean_" << names[c] << " = " << ns.mean[c] << "\nstd_" << names[c] << " = " << ns.std[c] << "\n";
      }
      for (std::size_t c = 0; c < hist.size(); ++c) {
        out << "pixels_" << c << " = " << hist[c] << "\nweight_" << c << " = " << w.w[c] << "\n";
      }
      write_text_atomically(s.run_dir() / "stats.txt", out.str());
      std::cout << out.str();
      return 0;
    }

    if (pre->parsed()) {
      const Settings s = pre_flags.resolve(pre);
      const auto r = pretrain(s, stderr_log());
      std::cout << "checkpoint: " << r.checkpoint.string() << "\n";
      return 0;
    }

    if (ad->parsed()) {
      const Settings s = ad_flags.resolve(ad);
      std::optional<fs::path> ckpt;
      if (!ad_ckpt.empty()) {
        if (ad_scratch) throw UsageFailure("--checkpoint and --from-scratch are mutually exclusive");
        ckpt = fs::path(ad_ckpt);
      } else if (!ad_scratch) {
        const fs::path def = s.run_dir() / "checkpoints" / "pretrain.ckpt";
        if (!fs::exists(def)) {
          throw UsageFailure("no pretrain checkpoint at " + def.string() +
                             ". Run 'rangeda pretrain' with the same --name first, pass --checkpoint PATH, "
                             "or pass --from-scratch to train from random weights.");
        }
        ckpt = def;
      }
      const auto r = adapt(s, ckpt, stderr_log());
      if (r.final_eval) std::cout << "target mIoU: " << percent(r.final_eval->miou) << "\n";
      std::cout << "checkpoint: " << r.checkpoint.string() << "\n";
      return 0;
    }

    if (abl->parsed()) {
      const Settings s = abl_flags.resolve(abl);
      std::vector<std::string> sw = abl_switches.empty() ? Switches::names() : split_list(abl_switches);
      std::vector<std::uint64_t> seeds;
      for (const auto& t : split_list(abl_seeds)) {
        try {
          seeds.push_back(std::stoull(t));
        } catch (const std::exception&) {
          throw UsageFailure("--seeds: '" + t + "' is not an unsigned integer");
        }
      }
      const auto rows = ablate(s, sw, seeds, stderr_log());
      std::cout << std::left << std::setw(28) << "variant" << "median mIoU\n";
      for (const auto& r : rows) std::cout << std::setw(28) << r.variant << percent(r.median()) << "\n";
      std::cout << "table: " << (s.run_dir() / "ablation.csv").string() << "\n";
      return 0;
    }

    if (ev->parsed()) {
      const Domain domain = parse_domain(ev_domain);
      if (ev_ckpt.empty() == ev_pred.empty()) throw UsageFailure("eval needs exactly one of --checkpoint or --predictions");
      ConfusionMatrix cm(kNumClasses);
      fs::path csv = ev_csv;
      if (!ev_ckpt.empty()) {
        const Model m = load_model(ev_ckpt);
        cm = evaluate_manifest(m, ev_manifest, domain);
        if (csv.empty()) csv = m.settings.run_dir() / "eval.csv";
      } else {
        for (const auto& rec : load_scan_list(ev_manifest)) {
          if (!rec.has_labels()) throw IoError(ev_manifest + ": " + rec.points.string() + " has no label file");
          const auto truth = read_labels(rec.labels);
          const auto pred = read_labels(fs::path(ev_pred) / (rec.points.stem().string() + ".label"));
          cm.accumulate(truth, pred);
        }
        if (csv.empty()) csv = fs::path(ev_pred) / "eval.csv";
      }
      const IouReport r = iou(cm);
      print_iou(r);
      append_eval_csv(csv, ev_ckpt.empty() ? ev_pred : ev_ckpt, r);
      return 0;
    }

    if (inf->parsed()) {
      const Domain domain = parse_domain(inf_domain);
      if (inf_manifest.empty() == inf_scan.empty()) throw UsageFailure("infer needs exactly one of --manifest or --scan");
      const Model m = load_model(inf_ckpt);
      Index n = 0;
      if (!inf_manifest.empty()) {
        n = infer_manifest(m, inf_manifest, domain, inf_out);
      } else {
        const PointCloud cloud = read_points(inf_scan);
        write_labels(fs::path(inf_out) / (fs::path(inf_scan).stem().string() + ".label"), predict_points(m, cloud, domain));
        n = 1;
      }
      std::cout << "wrote " << n << " label file(s) to " << inf_out << "\n";
      return 0;
    }

    if (bench->parsed()) {
      const Domain domain = parse_domain(bench_domain);
      if (bench_repeat < 1) throw UsageFailure("--repeat must be >= 1");
      const Model m = load_model(bench_ckpt);
      std::vector<PointCloud> clouds;
      for (const auto& rec : load_scan_list(bench_manifest)) clouds.push_back(read_points(rec.points));
      using clock = std::chrono::steady_clock;
      double cnn = 0, knn = 0;
      Index scans = 0;
      for (Index rep = 0; rep < bench_repeat; ++rep) {
        for (const auto& c : clouds) {
          const auto t0 = clock::now();
          const auto plain = predict_points(m, c, domain, false);
          const auto t1 = clock::now();
          const auto full = predict_points(m, c, domain, true);
          const auto t2 = clock::now();
          const double a = std::chrono::duration<double, std::milli>(t1 - t0).count();
          const double b = std::chrono::duration<double, std::milli>(t2 - t1).count();
          cnn += a;
          knn += std::max(0.0, b - a);
          ++scans;
        }
      }
      std::cout << std::fixed << std::setprecision(2) << "scans: " << scans << "\nprojection+CNN: " << cnn / double(scans)
                << " ms/scan\nKNN: " << knn / double(scans) << " ms/scan\nthroughput: "
                << 1000.0 * double(scans) / (cnn + knn) << " scans/s\n";
      return 0;
    }
  } catch (const UsageFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const rangeda::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
