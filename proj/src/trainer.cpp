#include "rangeda/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "rangeda/errors.hpp"
#include "rangeda/io_util.hpp"
#include "rangeda/scan_io.hpp"

namespace rangeda {

namespace fs = std::filesystem;

namespace {

constexpr Index kClasses = kNumClasses;

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

NetConfig net_config_for(const Settings& s) {
  NetConfig cfg;
  cfg.base_channels = s.scenario.network_channels();
  cfg.num_classes = kClasses;
  cfg.seed = mix(s.train.seed, 1);
  return cfg;
}

// Keys whose values must agree between a pretrain checkpoint and an adapt run.
const std::vector<std::string> kCompatKeys = {
    "source_beams",  "source_fov_up", "source_fov_down",   "source_width",   "target_beams",
    "target_fov_up", "target_fov_down", "target_width",    "resolution_height", "resolution_width",
    "target_processing", "base_channels", "width_divisor", "channel_divisor", "source_first",
    "deactivate_mask"};

class RunLog {
 public:
  RunLog(const fs::path& file, LogFn sink) : sink_(std::move(sink)) {
    fs::create_directories(file.parent_path());
    out_.open(file, std::ios::app);
    if (!out_) throw IoError("cannot open log file " + file.string());
  }
  void operator()(const std::string& line) {
    out_ << line << "\n";
    out_.flush();
    if (sink_) sink_(line);
  }

 private:
  std::ofstream out_;
  LogFn sink_;
};

std::string csv_header() {
  std::ostringstream h;
  h << "phase,epoch,iterations,lr,loss_recon,loss_wce,loss_lovasz,loss_epl,loss_total,p_pc";
  for (Index c = 0; c < kClasses; ++c) h << ",tau_" << c;
  for (Index c = 0; c < kClasses; ++c) h << ",selected_" << c;
  for (Index c = 0; c < kClasses; ++c) h << ",iou_" << c;
  h << ",miou";
  return h.str();
}

std::string csv_row(const EpochRow& r) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(6);
  o << r.phase << "," << r.epoch << "," << r.iterations << "," << std::setprecision(8) << r.lr
    << std::setprecision(6) << "," << r.recon << "," << r.wce << "," << r.lovasz << "," << r.epl << ","
    << r.total << "," << r.p_pc;
  for (Index c = 0; c < kClasses; ++c) {
    o << ",";
    if (static_cast<std::size_t>(c) < r.tau.size()) o << r.tau[static_cast<std::size_t>(c)];
  }
  for (Index c = 0; c < kClasses; ++c) {
    o << ",";
    if (static_cast<std::size_t>(c) < r.selected.size()) o << r.selected[static_cast<std::size_t>(c)];
  }
  for (Index c = 0; c < kClasses; ++c) {
    o << ",";
    if (r.eval && r.eval->per_class[static_cast<std::size_t>(c)]) o << *r.eval->per_class[static_cast<std::size_t>(c)];
  }
  o << ",";
  if (r.eval) o << r.eval->miou;
  return o.str();
}

// Rewrites metrics.csv keeping the rows of other phases.
void write_metrics(const fs::path& run_dir, const std::string& phase, const std::vector<EpochRow>& rows) {
  const fs::path path = run_dir / "metrics.csv";
  std::vector<std::string> kept;
  if (fs::exists(path)) {
    std::istringstream in(read_text(path));
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        if (line != csv_header()) break;  // foreign layout: start over
        continue;
      }
      if (!line.empty() && line.rfind(phase + ",", 0) != 0) kept.push_back(line);
    }
  }
  std::ostringstream out;
  out << csv_header() << "\n";
  for (const auto& l : kept) out << l << "\n";
  for (const auto& r : rows) out << csv_row(r) << "\n";
  write_text_atomically(path, out.str());
}

std::vector<Index> shuffled(Index n, std::mt19937_64& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

std::vector<Index> batch_indices(const std::vector<Index>& perm, Index it, Index batch) {
  std::vector<Index> out;
  const auto n = static_cast<Index>(perm.size());
  for (Index j = 0; j < batch; ++j) out.push_back(perm[static_cast<std::size_t>((it * batch + j) % n)]);
  return out;
}

NormStats float_rounded(NormStats s) {
  for (int c = 0; c < kNumChannels; ++c) {
    s.mean[c] = double(float(s.mean[c]));
    s.std[c] = double(float(s.std[c]));
  }
  return s;
}

NormStats source_stats(const ImageSet& source) {
  std::vector<const RangeImage*> ptrs;
  for (const auto& img : source.images) ptrs.push_back(&img);
  return float_rounded(compute_norm_stats(ptrs));
}

void require_manifests(const Settings& s) {
  if (s.source_manifest.empty() || s.target_manifest.empty()) {
    throw ConfigError("source_manifest and target_manifest must be set");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt_double(double v, int prec = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(prec) << v;
  return o.str();
}

}  // namespace

Model::Model(const Settings& s) : settings(s), net(net_config_for(s)) {
  const Index c = net.config().base_channels;
  bank = PrototypeBank<float>(kClasses, s.train.switches.enhanced_prototypes ? c : 0, c, float(s.train.alpha));
  filter = FilterState(kClasses, s.train.scaled_p_inc(), s.train.switches.background_down_weighting ? s.train.p_dw : 1.0);
}

void save_model(const Model& model, const fs::path& path) {
  TensorMap t = model.net.to_tensors();
  const Index k = model.bank.num_classes(), d = model.bank.dim();
  Tensor<float> bank(Shape{k, d});
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < d; ++j) bank[i * d + j] = model.bank.proto(i, j);
  }
  Tensor<float> init(Shape{k}), tau(Shape{k});
  for (Index i = 0; i < k; ++i) {
    init[i] = model.bank.initialized[static_cast<std::size_t>(i)] ? 1.0f : 0.0f;
    tau[i] = static_cast<std::size_t>(i) < model.filter.tau.size() ? float(model.filter.tau[static_cast<std::size_t>(i)]) : 1.0f;
  }
  Tensor<float> mean(Shape{kNumChannels}), stdv(Shape{kNumChannels});
  for (int c = 0; c < kNumChannels; ++c) {
    mean[c] = float(model.stats.mean[c]);
    stdv[c] = float(model.stats.std[c]);
  }
  t.emplace("proto.bank", std::move(bank));
  t.emplace("proto.initialized", std::move(init));
  t.emplace("proto.tau", std::move(tau));
  t.emplace("norm.mean", std::move(mean));
  t.emplace("norm.std", std::move(stdv));
  save_tensors(path, t);
  std::ostringstream meta;
  meta << "stage = " << model.stage << "\nepoch = " << model.epoch << "\n" << model.settings.to_text();
  write_text_atomically(fs::path(path.string() + ".meta"), meta.str());
}

Model load_model(const fs::path& path) {
  const fs::path meta_path(path.string() + ".meta");
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  if (!fs::exists(meta_path)) throw IoError("checkpoint metadata not found: " + meta_path.string());
  KeyValues meta = load_key_values(meta_path);
  const std::string stage = meta.count("stage") ? meta["stage"] : "";
  const Index epoch = meta.count("epoch") ? std::stol(meta["epoch"]) : 0;
  meta.erase("stage");
  meta.erase("epoch");
  Model m(resolve_settings(meta, {}));
  m.stage = stage;
  m.epoch = epoch;
  const TensorMap t = load_tensors(path);
  m.net.load_tensors(t);
  const auto& mean = t.at("norm.mean");
  const auto& stdv = t.at("norm.std");
  for (int c = 0; c < kNumChannels; ++c) {
    m.stats.mean[c] = mean[c];
    m.stats.std[c] = stdv[c];
  }
  const auto& bank = t.at("proto.bank");
  if (bank.dim(0) != m.bank.num_classes() || bank.dim(1) != m.bank.dim()) {
    throw ConfigError("checkpoint prototype bank " + bank.shape().str() + " does not match the network");
  }
  const auto& init = t.at("proto.initialized");
  const auto& tau = t.at("proto.tau");
  for (Index i = 0; i < m.bank.num_classes(); ++i) {
    for (Index j = 0; j < m.bank.dim(); ++j) m.bank.proto(i, j) = bank[i * m.bank.dim() + j];
    m.bank.initialized[static_cast<std::size_t>(i)] = init[i] > 0.5f;
    m.filter.tau[static_cast<std::size_t>(i)] = tau[i];
  }
  return m;
}

RunResult pretrain(const Settings& settings, const LogFn& sink) {
  settings.validate();
  require_manifests(settings);
  const fs::path run_dir = settings.run_dir();
  RunLog log(run_dir / "logs" / "pretrain.log", sink);
  const auto t0 = std::chrono::steady_clock::now();

  Model model(settings);
  model.stage = "pretrain";
  const ScenarioPlan plan = model.plan();
  const ImageSet src_images = load_images(settings.source_manifest, plan.source, false);
  const ImageSet tgt_images = load_images(settings.target_manifest, plan.target, false);
  model.stats = source_stats(src_images);
  const bool deact = settings.train.switches.deactivate_mask;
  const TrainingSet src = prepare(src_images, model.stats, deact);
  const TrainingSet tgt = prepare(tgt_images, model.stats, deact);

  const Index b = settings.train.batch_per_domain;
  const Index iters = (std::min(src.size(), tgt.size()) + b - 1) / b;
  const Index epochs = settings.train.scaled_pretrain_epochs();
  log("pretrain: " + std::to_string(src.size()) + " source / " + std::to_string(tgt.size()) + " target scans at " +
      std::to_string(plan.height) + "x" + std::to_string(plan.width) + ", " + std::to_string(epochs) + " epochs x " +
      std::to_string(iters) + " iterations");

  auto params = model.net.parameters();
  SgdState sgd;
  sgd.momentum = settings.train.momentum;
  sgd.weight_decay = settings.train.weight_decay;
  std::mt19937_64 rng(mix(settings.train.seed, 3));
  RunResult result;
  for (Index epoch = 1; epoch <= epochs; ++epoch) {
    const auto ps = shuffled(src.size(), rng);
    const auto pt = shuffled(tgt.size(), rng);
    EpochRow row;
    row.phase = "pretrain";
    row.epoch = epoch;
    row.iterations = iters;
    for (Index it = 0; it < iters; ++it) {
      const Tensor<float> xs = stack_inputs(src, batch_indices(ps, it, b));
      const Tensor<float> xt = stack_inputs(tgt, batch_indices(pt, it, b));
      Tensor<float> x(Shape{2 * b, xs.dim(1), xs.dim(2), xs.dim(3)});
      x.array().head(xs.size()) = xs.array();
      x.array().tail(xt.size()) = xt.array();
      const auto input = Var<float>::constant(std::move(x));
      const auto out = model.net.forward(input, ForwardMode::pretrain);
      const auto loss = recon_loss(input, out.recon);
      zero_grad(params);
      backward(loss);
      sgd.lr = schedule_pretrain(epoch, it, iters) * settings.train.pretrain_lr / kBaseLr;
      sgd_step(sgd, params);
      row.recon += loss.value()[0];
      row.lr = sgd.lr;
    }
    row.recon /= double(iters);
    row.total = row.recon;
    model.epoch = epoch;
    std::ostringstream name;
    name << "pretrain_e" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
    save_model(model, run_dir / "checkpoints" / name.str());
    result.rows.push_back(row);
    write_metrics(run_dir, "pretrain", result.rows);
    log("pretrain epoch " + std::to_string(epoch) + ": recon " + fmt_double(row.recon, 5) + " (" +
        fmt_double(seconds_since(t0), 1) + " s)");
  }
  result.checkpoint = run_dir / "checkpoints" / "pretrain.ckpt";
  save_model(model, result.checkpoint);
  return result;
}

RunResult adapt(const Settings& settings, const std::optional<fs::path>& pretrain_checkpoint, const LogFn& sink) {
  settings.validate();
  require_manifests(settings);
  const fs::path run_dir = settings.run_dir();
  RunLog log(run_dir / "logs" / "adapt.log", sink);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& tc = settings.train;
  const Switches& sw = tc.switches;

  Model model(settings);
  model.stage = "adapt";
  const ScenarioPlan plan = model.plan();
  const ImageSet src_images = load_images(settings.source_manifest, plan.source, true);
  const ImageSet tgt_images = load_images(settings.target_manifest, plan.target, false);
  if (pretrain_checkpoint) {
    Model pre = load_model(*pretrain_checkpoint);
    for (const auto& key : kCompatKeys) {
      if (pre.settings.get(key) != settings.get(key)) {
        throw ConfigError("checkpoint " + pretrain_checkpoint->string() + " was trained with " + key + " = " +
                          pre.settings.get(key) + ", this run uses " + settings.get(key));
      }
    }
    model.net.load_tensors(pre.net.to_tensors());
    model.stats = pre.stats;
    log("adapt: starting from " + pretrain_checkpoint->string());
  } else {
    model.stats = source_stats(src_images);
    log("adapt: starting from random weights");
  }
  model.net.strip_pretrain_heads(mix(tc.seed, 2));

  const TrainingSet src = prepare(src_images, model.stats, sw.deactivate_mask);
  const TrainingSet tgt = prepare(tgt_images, model.stats, sw.deactivate_mask);
  const ClassWeights weights = ClassWeights::from_counts(class_histogram(src, kClasses));

  const Index b = tc.batch_per_domain;
  const Index iters = (std::min(src.size(), tgt.size()) + b - 1) / b;
  const Index epochs = tc.scaled_joint_epochs();
  const Index total_iters = epochs * iters;
  const bool use_epl = tc.lambda > 0;
  log("adapt: " + std::to_string(epochs) + " epochs x " + std::to_string(iters) + " iterations, lambda " +
      fmt_double(tc.lambda, 2));

  auto params = model.net.parameters();
  SgdState sgd;
  sgd.momentum = tc.momentum;
  sgd.weight_decay = tc.weight_decay;
  std::mt19937_64 rng(mix(tc.seed, 3));
  SimilarityReservoir reservoir(static_cast<std::size_t>(tc.reservoir), mix(tc.seed, 4));
  const std::vector<double> unit_tau(static_cast<std::size_t>(kClasses), 1.0);

  RunResult result;
  Index global = 0;
  for (Index epoch = 1; epoch <= epochs; ++epoch) {
    model.filter.set_epoch(epoch);
    if (!reservoir.empty()) {
      update_thresholds<double>(model.filter, reservoir.values(), reservoir.labels());
      reservoir.clear();
    }
    const auto ps = shuffled(src.size(), rng);
    const auto pt = shuffled(tgt.size(), rng);
    EpochRow row;
    row.phase = "adapt";
    row.epoch = epoch;
    row.iterations = iters;
    std::vector<std::int64_t> pseudo_count(static_cast<std::size_t>(kClasses), 0), sel_count = pseudo_count;

    for (Index it = 0; it < iters; ++it, ++global) {
      // Source forward and prototype update.
      const auto bs = batch_indices(ps, it, b);
      const LabelBatch ys = stack_labels(src, bs);
      const auto out_s = model.net.forward(Var<float>::constant(stack_inputs(src, bs)), ForwardMode::adapt);
      const auto current = batch_prototypes(sw.enhanced_prototypes ? &out_s.feat_enc.value() : nullptr,
                                            out_s.feat_dec.value(), ys, kClasses);
      if (!sw.averaged_prototypes) model.bank.reset();
      ema_update(model.bank, current);

      // Target forward, pseudo labels and mask.
      const Tensor<float> xt = stack_inputs(tgt, batch_indices(pt, it, b));
      ForwardOutputs<float> out_t;
      {
        std::optional<NoGradGuard> guard;
        if (!use_epl) guard.emplace();
        out_t = model.net.forward(Var<float>::constant(xt), ForwardMode::adapt);
      }
      const Tensor<float> sim = similarity_map(sw.enhanced_prototypes ? &out_t.feat_enc.value() : nullptr,
                                               out_t.feat_dec.value(), model.bank);
      const LabelBatch pseudo = pseudo_label(sim);
      const auto max_sim = max_similarity(sim);
      if (epoch == 1) {
        update_thresholds<float>(model.filter, std::span<const float>(max_sim.data(), std::size_t(max_sim.size())),
                                 std::span<const std::int32_t>(pseudo.data.data(), std::size_t(pseudo.data.size())));
      }
      reservoir.add(max_sim, pseudo);
      const auto mask = filter_mask(max_sim, pseudo, model.filter);
      for (Index i = 0; i < pseudo.pixels(); ++i) {
        ++pseudo_count[static_cast<std::size_t>(pseudo.data[i])];
        sel_count[static_cast<std::size_t>(pseudo.data[i])] += mask[i];
      }

      // Optimize.
      const auto wce = wce_loss(out_s.logits, ys, weights);
      const auto ls = lovasz_softmax(softmax_channels(out_s.logits), ys);
      Var<float> epl;
      if (use_epl) {
        const auto assigned = assigned_similarity(sw.enhanced_prototypes ? out_t.feat_enc : Var<float>(),
                                                  out_t.feat_dec, model.bank, pseudo);
        epl = epl_loss(assigned, pseudo, mask, sw.confidence_weighting ? model.filter.tau : unit_tau);
      }
      const auto loss = total_loss(wce, ls, epl, tc.lambda);
      zero_grad(params);
      backward(loss);
      const double progress = total_iters > 1 ? double(global) / double(total_iters - 1) : 0.0;
      sgd.lr = schedule_joint(progress, tc.lr);
      sgd_step(sgd, params);

      row.wce += wce.value()[0];
      row.lovasz += ls.value()[0];
      if (use_epl) row.epl += epl.value()[0];
      row.total += loss.value()[0];
      row.lr = sgd.lr;
    }
    row.wce /= double(iters);
    row.lovasz /= double(iters);
    row.epl /= double(iters);
    row.total /= double(iters);
    row.p_pc = model.filter.p_pc;
    row.tau = model.filter.tau;
    for (Index c = 0; c < kClasses; ++c) {
      const auto n = pseudo_count[static_cast<std::size_t>(c)];
      row.selected.push_back(n > 0 ? double(sel_count[static_cast<std::size_t>(c)]) / double(n) : 0.0);
    }
    model.epoch = epoch;
    if (!settings.eval_manifest.empty()) row.eval = iou(evaluate_manifest(model, settings.eval_manifest, Domain::target));
    std::ostringstream name;
    name << "adapt_e" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
    save_model(model, run_dir / "checkpoints" / name.str());
    result.rows.push_back(row);
    write_metrics(run_dir, "adapt", result.rows);
    log("adapt epoch " + std::to_string(epoch) + ": wce " + fmt_double(row.wce) + " lovasz " +
        fmt_double(row.lovasz) + " epl " + fmt_double(row.epl) + " p_pc " + fmt_double(row.p_pc, 3) +
        (row.eval ? " target mIoU " + fmt_double(100.0 * row.eval->miou, 2) : std::string()) + " (" +
        fmt_double(seconds_since(t0), 1) + " s)");
  }
  result.checkpoint = run_dir / "checkpoints" / "adapt.ckpt";
  save_model(model, result.checkpoint);
  if (!result.rows.empty()) result.final_eval = result.rows.back().eval;
  return result;
}

std::vector<std::int32_t> predict_points(const Model& model, const PointCloud& cloud, Domain domain, bool use_knn) {
  const ScenarioPlan plan = model.plan();
  const DomainPlan& dp = plan.domain(domain);
  const RangeImage img = project_for(cloud, dp);
  const RangeImage work = dp.upsampled() ? upsample_rows(img, dp.row_factor, dp.col_factor) : img;
  Tensor<float> x = normalize(work, model.stats, model.settings.train.switches.deactivate_mask).to_tensor();
  x = x.reshaped(Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  NoGradGuard guard;
  const auto out = model.net.forward(Var<float>::constant(std::move(x)), ForwardMode::adapt);
  Tensor<float> scores = out.logits.value();
  scores = scores.reshaped(Shape{scores.dim(1), scores.dim(2), scores.dim(3)});
  if (dp.upsampled()) scores = pool_predictions(scores, dp.row_factor, dp.col_factor);
  const IndexPlane pred = argmax_labels(scores);
  return use_knn ? knn_postprocess(pred, img, cloud, model.settings.train.knn) : unproject_labels(pred, img);
}

ConfusionMatrix evaluate_manifest(const Model& model, const fs::path& manifest, Domain domain) {
  ConfusionMatrix cm(kClasses);
  for (const auto& rec : load_scan_list(manifest)) {
    if (!rec.has_labels()) throw IoError(manifest.string() + ": " + rec.points.string() + " has no label file");
    PointCloud cloud = read_points(rec.points);
    cloud.labels = read_labels(rec.labels);
    cloud.validate();
    const auto pred = predict_points(model, cloud, domain);
    cm.accumulate(cloud.labels, pred);
  }
  return cm;
}

Index infer_manifest(const Model& model, const fs::path& manifest, Domain domain, const fs::path& out_dir) {
  Index n = 0;
  for (const auto& rec : load_scan_list(manifest)) {
    const PointCloud cloud = read_points(rec.points);
    const auto pred = predict_points(model, cloud, domain);
    write_labels(out_dir / (rec.points.stem().string() + ".label"), pred);
    ++n;
  }
  return n;
}

double AblationRow::median() const {
  if (miou.empty()) return 0.0;
  std::vector<double> v = miou;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

RunResult run_variant(const Settings& settings, const std::optional<fs::path>& shared_pretrain, const LogFn& log) {
  std::optional<fs::path> ckpt = shared_pretrain;
  if (settings.train.switches.recon_pretrain && !ckpt) ckpt = pretrain(settings, log).checkpoint;
  if (!settings.train.switches.recon_pretrain) ckpt.reset();
  return adapt(settings, ckpt, log);
}

std::vector<AblationRow> ablate(const Settings& settings, const std::vector<std::string>& switches,
                                const std::vector<std::uint64_t>& seeds, const LogFn& log) {
  settings.validate();
  if (settings.eval_manifest.empty()) throw ConfigError("ablate needs eval_manifest for target mIoU");
  for (const auto& s : switches) (void)settings.train.switches.by_name(s);
  if (seeds.empty()) throw ConfigError("ablate needs at least one seed");

  std::vector<AblationRow> rows;
  rows.push_back({"full", {}});
  for (const auto& s : switches) rows.push_back({s, {}});
  const fs::path root = settings.run_dir();
  for (const auto seed : seeds) {
    Settings base = settings;
    base.train.seed = seed;
    base.runs_dir = root;
    base.run_name = "seed" + std::to_string(seed) + "_full";
    const RunResult full = run_variant(base, std::nullopt, log);
    rows[0].miou.push_back(full.final_eval ? full.final_eval->miou : 0.0);
    const fs::path shared = base.run_dir() / "checkpoints" / "pretrain.ckpt";
    for (std::size_t i = 0; i < switches.size(); ++i) {
      Settings v = base;
      v.train.switches.by_name(switches[i]) = false;
      v.run_name = "seed" + std::to_string(seed) + "_no_" + switches[i];
      // Input-changing components need their own pretraining.
      const bool own_pretrain = switches[i] == "source_first" || switches[i] == "deactivate_mask";
      const RunResult r = run_variant(v, own_pretrain ? std::nullopt : std::optional<fs::path>(shared), log);
      rows[i + 1].miou.push_back(r.final_eval ? r.final_eval->miou : 0.0);
    }
  }

  std::ostringstream csv;
  csv << "variant";
  for (const auto seed : seeds) csv << ",seed_" << seed;
  csv << ",median\n" << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    csv << r.variant;
    for (const auto v : r.miou) csv << "," << v;
    csv << "," << r.median() << "\n";
  }
  write_text_atomically(root / "ablation.csv", csv.str());
  return rows;
}

}  // namespace rangeda
