#pragma once

// Training, evaluation and sampling loops built on the config, data, model,
// optimizer and checkpoint pieces.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ukan/checkpoint.hpp"
#include "ukan/config.hpp"
#include "ukan/data.hpp"
#include "ukan/diffusion.hpp"
#include "ukan/losses.hpp"
#include "ukan/metrics.hpp"
#include "ukan/model.hpp"
#include "ukan/optim.hpp"

namespace ukan {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

// RNG stream ids: a tag in the high bits, the epoch in the low bits.
constexpr std::uint64_t kAugmentStream = 0x617567ull << 32;
constexpr std::uint64_t kNoiseStream = 0x6e6f6973ull << 32;

}  // namespace detail

/// Loads the manifest named by the config, building and saving it from
/// data.root when the file does not exist yet.
inline data::Manifest open_manifest(const TrainConfig& cfg, std::ostream* log = nullptr) {
  if (cfg.data.manifest.empty()) throw ConfigError("config: data.root or data.manifest is required");
  const std::filesystem::path path(cfg.data.manifest);
  if (std::filesystem::exists(path)) return data::load_manifest(path);
  if (cfg.data.root.empty())
    throw ConfigError("config: manifest '" + path.string() + "' does not exist and data.root is empty");
  auto m = data::build_manifest(cfg.data.root, cfg.data.split_ratio, cfg.run.seed, !cfg.diffuse());
  for (const auto& w : m.warnings)
    if (log) *log << "warning: " << w << '\n';
  data::save_manifest(m, path);
  m.root = path.parent_path();
  return m;
}

/// Builds a model from the config and fills it from a checkpoint.
template <class T>
UKan<T> load_model(const TrainConfig& cfg, const Checkpoint& ck) {
  auto model = UKan<T>::init(cfg.model_config(), cfg.run.seed);
  std::size_t expected = 0;
  for (auto& p : model.parameters()) {
    ck.load_into("model." + p.name, p.tensor);
    ++expected;
  }
  std::size_t stored = 0;
  for (const auto& r : ck.tensors) stored += r.name.rfind("model.", 0) == 0 ? 1 : 0;
  if (stored != expected) {
    throw CheckpointError("checkpoint/config mismatch: checkpoint holds " + std::to_string(stored) +
                          " model tensors, config builds " + std::to_string(expected));
  }
  return model;
}

struct EvalResult {
  SegMetrics metrics;
  std::vector<std::string> ids;
};

/// Eval-mode forward over samples; per-image IoU/F1 of the thresholded output.
template <class T>
EvalResult evaluate_samples(const UKan<T>& model, const std::vector<data::Sample<T>>& samples,
                            std::size_t batch_size, double threshold) {
  EvalResult r;
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t nb = std::min(batch_size, samples.size() - start);
    std::vector<data::Sample<T>> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                       samples.begin() + static_cast<std::ptrdiff_t>(start + nb));
    auto batch = data::stack(chunk);
    auto logits = model.forward(batch.images, false);
    const std::size_t per = logits.numel() / nb;
    const auto lv = logits.data();
    const auto mv = batch.masks.data();
    for (std::size_t i = 0; i < nb; ++i) {
      auto pred = binarize<T>(lv.subspan(i * per, per), threshold);
      auto counts = overlap_counts<std::uint8_t, T>(pred, mv.subspan(i * per, per));
      r.metrics.iou.push_back(iou(counts));
      r.metrics.f1.push_back(f1(counts));
      r.ids.push_back(chunk[i].id);
    }
  }
  double si = 0, sf = 0;
  for (std::size_t i = 0; i < r.metrics.iou.size(); ++i) {
    si += r.metrics.iou[i];
    sf += r.metrics.f1[i];
  }
  if (!r.metrics.iou.empty()) {
    r.metrics.mean_iou = si / static_cast<double>(r.metrics.iou.size());
    r.metrics.mean_f1 = sf / static_cast<double>(r.metrics.f1.size());
  }
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double val_iou = std::numeric_limits<double>::quiet_NaN();
  double val_f1 = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t steps = 0;  // optimizer steps so far
};

template <class T>
class Trainer {
 public:
  /// `cfg` is resolved here. Configuration and data errors surface before the
  /// model is built.
  explicit Trainer(TrainConfig cfg, std::ostream* log = nullptr) : cfg_(std::move(cfg)), log_(log) {
    cfg_.resolve();
    manifest_ = open_manifest(cfg_, log_);
    train_ = data::load_split<T>(manifest_, data::Split::train, cfg_.load_options());
    if (!cfg_.diffuse()) val_ = data::load_split<T>(manifest_, data::Split::val, cfg_.load_options());
    if (train_.size() < 2)
      throw TrainingError("training split has " + std::to_string(train_.size()) +
                          " samples; BatchNorm needs at least 2");
    if (cfg_.diffuse()) {
      for (auto& s : train_) s.image = add_scalar(scale(s.image, T{2}), T{-1});  // [0,1] -> [-1,1]
    }
    model_ = UKan<T>::init(cfg_.model_config(), cfg_.run.seed);
    opt_ = Adam<T>(model_.parameters(), {cfg_.optim.beta1, cfg_.optim.beta2, cfg_.optim.eps});
    schedule_ = NoiseSchedule::linear(cfg_.diffusion.timesteps, cfg_.diffusion.beta_start,
                                      cfg_.diffusion.beta_end);
  }

  const TrainConfig& config() const { return cfg_; }
  const UKan<T>& model() const { return model_; }
  UKan<T>& model() { return model_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  std::size_t epochs_done() const { return epoch_; }
  std::uint64_t steps_done() const { return step_; }
  const std::vector<data::Sample<T>>& train_samples() const { return train_; }
  const std::vector<data::Sample<T>>& val_samples() const { return val_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  std::filesystem::path output_dir() const { return cfg_.run.output_dir; }
  std::filesystem::path metrics_path() const { return output_dir() / "metrics.tsv"; }
  std::filesystem::path last_path() const { return output_dir() / "last.ukan"; }
  std::filesystem::path best_path() const { return output_dir() / "best.ukan"; }

  /// Trains until run.epochs, writing metrics.tsv, last.ukan and best.ukan
  /// after every epoch. Resumes first when run.resume is set.
  void run() {
    std::filesystem::create_directories(output_dir());
    detail::write_text(output_dir() / "config.resolved.ini", cfg_.to_ini());
    if (!cfg_.run.resume.empty()) load_state(cfg_.run.resume);
    while (epoch_ < cfg_.run.epochs) step_epoch();
  }

  /// One epoch: training, validation, logs and checkpoints.
  EpochRecord step_epoch() {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec = train_epoch(epoch_);
    if (!cfg_.diffuse() && !val_.empty()) {
      auto ev = evaluate_samples(model_, val_, cfg_.optim.batch_size, cfg_.eval.threshold);
      rec.val_iou = ev.metrics.mean_iou;
      rec.val_f1 = ev.metrics.mean_f1;
    }
    ++epoch_;
    history_.push_back(rec);
    const bool use_val = !cfg_.diffuse() && !val_.empty();
    const double score = use_val ? rec.val_iou : -rec.train_loss;
    const bool improved = history_.size() == 1 || score > best_score_;
    if (improved) best_score_ = score;
    detail::write_text(metrics_path(), metrics_tsv());
    save_state(last_path());
    if (improved) save_state(best_path());
    if (log_) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *log_ << "epoch " << rec.epoch << "/" << cfg_.run.epochs << " lr " << rec.lr << " loss "
            << rec.train_loss;
      if (use_val) *log_ << " val_iou " << rec.val_iou << " val_f1 " << rec.val_f1;
      *log_ << " (" << secs << " s)\n";
    }
    return rec;
  }

  /// Optimizer steps over one shuffled pass of the training split. A
  /// trailing batch of one sample is dropped (BatchNorm needs two).
  EpochRecord train_epoch(std::size_t epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = cosine_lr(epoch, cfg_.run.epochs, cfg_.optim.lr, cfg_.optim.lr_min);
    const auto order = data::epoch_order(train_.size(), cfg_.run.seed, epoch);
    Rng aug_rng = make_rng(cfg_.run.seed, detail::kAugmentStream | epoch);
    Rng noise_rng = make_rng(cfg_.run.seed, detail::kNoiseStream | epoch);
    const auto aug = cfg_.augment_options();
    const BceDiceWeights weights{cfg_.loss.bce_weight, cfg_.loss.dice_weight, cfg_.loss.dice_smooth};
    NoisePredictor<T> predictor = [this](const Tensor<T>& x, const std::vector<std::size_t>& t) {
      return model_.forward(x, true, t);
    };
    double total = 0;
    std::size_t batches = 0;
    const std::size_t bs = cfg_.optim.batch_size;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t nb = std::min(bs, order.size() - start);
      if (nb < 2) break;
      std::vector<data::Sample<T>> chunk;
      for (std::size_t i = start; i < start + nb; ++i)
        chunk.push_back(data::augment(train_[order[i]], aug_rng, aug));
      auto batch = data::stack(chunk);
      clear_tape<T>();
      opt_.zero_grad();
      Tensor<T> loss = cfg_.diffuse()
                           ? diffusion_loss<T>(schedule_, predictor, batch.images, noise_rng)
                           : bce_dice_loss(model_.forward(batch.images, true), batch.masks, weights);
      const double lv = static_cast<double>(loss.item());
      const std::string where = "epoch " + std::to_string(epoch + 1) + " step " + std::to_string(step_ + 1);
      if (!std::isfinite(lv)) abort_run("non-finite loss (" + detail::format_g17(lv) + ") at " + where);
      backward(loss);
      try {
        opt_.step(rec.lr);
      } catch (const NonFiniteError& e) {
        abort_run(std::string(e.what()) + " at " + where);
      }
      clear_tape<T>();
      ++step_;
      total += lv;
      ++batches;
    }
    rec.train_loss = batches ? total / static_cast<double>(batches) : 0.0;
    rec.steps = step_;
    return rec;
  }

  std::string metrics_tsv() const {
    std::ostringstream out;
    const bool seg = !cfg_.diffuse();
    out << "epoch\tlr\ttrain_loss" << (seg ? "\tval_iou\tval_f1" : "") << "\tsteps\n";
    for (const auto& r : history_) {
      out << r.epoch << '\t' << detail::format_g17(r.lr) << '\t' << detail::format_g17(r.train_loss);
      if (seg) out << '\t' << detail::format_g17(r.val_iou) << '\t' << detail::format_g17(r.val_f1);
      out << '\t' << r.steps << '\n';
    }
    return out.str();
  }

  Checkpoint make_checkpoint() const {
    Checkpoint ck;
    ck.meta["config"] = cfg_.to_ini();
    ck.meta["task"] = cfg_.run.task;
    ck.meta["dtype"] = dtype_name(dtype_of<T>());
    ck.meta["epoch"] = std::to_string(epoch_);
    ck.meta["step"] = std::to_string(step_);
    ck.meta["adam_steps"] = std::to_string(opt_.steps());
    ck.meta["best_score"] = detail::format_config_value(best_score_);
    ck.meta["history"] = history_text();
    for (const auto& p : model_.parameters()) ck.put("model." + p.name, p.tensor);
    for (std::size_t i = 0; i < opt_.names().size(); ++i) {
      ck.put("adam.m." + opt_.names()[i], opt_.first_moments()[i]);
      ck.put("adam.v." + opt_.names()[i], opt_.second_moments()[i]);
    }
    return ck;
  }

  void save_state(const std::filesystem::path& path) const { make_checkpoint().save(path); }

  /// Restores model, optimizer, epoch counter and history.
  void load_state(const std::filesystem::path& path) {
    const auto ck = Checkpoint::load(path);
    if (ck.meta_at("task") != cfg_.run.task)
      throw CheckpointError("checkpoint/config mismatch: checkpoint task is " + ck.meta_at("task"));
    auto loaded = load_model<T>(cfg_, ck);
    auto dst = model_.parameters();
    auto src = loaded.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto d = dst[i].tensor.data();
      const auto s = src[i].tensor.data();
      std::copy(s.begin(), s.end(), d.begin());
    }
    for (std::size_t i = 0; i < opt_.names().size(); ++i) {
      auto m = opt_.first_moments()[i];
      auto v = opt_.second_moments()[i];
      ck.load_into("adam.m." + opt_.names()[i], m);
      ck.load_into("adam.v." + opt_.names()[i], v);
    }
    opt_.set_steps(std::stoull(ck.meta_at("adam_steps")));
    epoch_ = std::stoull(ck.meta_at("epoch"));
    step_ = std::stoull(ck.meta_at("step"));
    best_score_ = detail::parse_config_value<double>(ck.meta_at("best_score"));
    parse_history(ck.meta_at("history"));
  }

 private:
  [[noreturn]] void abort_run(const std::string& msg) {
    clear_tape<T>();
    detail::write_text(output_dir() / "abort.txt", msg + "\n");
    throw TrainingError(msg);
  }

  // Exact text form of the history for checkpoints.
  std::string history_text() const {
    std::ostringstream out;
    for (const auto& r : history_) {
      out << r.epoch << ' ' << detail::format_config_value(r.lr) << ' '
          << detail::format_config_value(r.train_loss) << ' ' << detail::format_config_value(r.val_iou)
          << ' ' << detail::format_config_value(r.val_f1) << ' ' << r.steps << '\n';
    }
    return out.str();
  }

  void parse_history(const std::string& text) {
    history_.clear();
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string f[6];
      for (auto& s : f) ls >> s;
      EpochRecord r;
      r.epoch = std::stoull(f[0]);
      r.lr = parse_double(f[1]);
      r.train_loss = parse_double(f[2]);
      r.val_iou = parse_double(f[3]);
      r.val_f1 = parse_double(f[4]);
      r.steps = std::stoull(f[5]);
      history_.push_back(r);
    }
  }

  static double parse_double(const std::string& s) {
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    return detail::parse_config_value<double>(s);
  }

  TrainConfig cfg_;
  std::ostream* log_ = nullptr;
  UKan<T> model_;
  Adam<T> opt_;
  NoiseSchedule schedule_;
  data::Manifest manifest_;
  std::vector<data::Sample<T>> train_, val_;
  std::vector<EpochRecord> history_;
  std::size_t epoch_ = 0;
  std::uint64_t step_ = 0;
  double best_score_ = -std::numeric_limits<double>::infinity();
};

/// Evaluates cfg.run.checkpoint on cfg.eval.split and writes
/// eval_<split>.tsv (per image) into the output directory.
template <class T>
EvalResult evaluate_checkpoint(const TrainConfig& cfg_in, std::ostream* log = nullptr) {
  TrainConfig cfg = cfg_in;
  cfg.resolve();
  if (cfg.diffuse()) throw ConfigError("eval: needs run.task = segment");
  const auto ck = Checkpoint::load(cfg.run.checkpoint);
  if (ck.meta_at("task") != cfg.run.task)
    throw CheckpointError("checkpoint/config mismatch: checkpoint task is " + ck.meta_at("task"));
  auto model = load_model<T>(cfg, ck);
  auto manifest = open_manifest(cfg, log);
  const auto split = data::parse_split(cfg.eval.split);
  auto samples = data::load_split<T>(manifest, split, cfg.load_options());
  if (samples.empty()) throw TrainingError("eval: split '" + cfg.eval.split + "' is empty");
  auto r = evaluate_samples(model, samples, cfg.optim.batch_size, cfg.eval.threshold);
  std::ostringstream out;
  out << "id\tiou\tf1\n";
  for (std::size_t i = 0; i < r.ids.size(); ++i)
    out << r.ids[i] << '\t' << detail::format_g17(r.metrics.iou[i]) << '\t'
        << detail::format_g17(r.metrics.f1[i]) << '\n';
  out << "mean\t" << detail::format_g17(r.metrics.mean_iou) << '\t'
      << detail::format_g17(r.metrics.mean_f1) << '\n';
  const std::filesystem::path dir(cfg.run.output_dir);
  detail::write_text(dir / ("eval_" + cfg.eval.split + ".tsv"), out.str());
  detail::write_text(dir / "config.resolved.ini", cfg.to_ini());
  return r;
}

/// Samples cfg.generate.num_samples images from cfg.run.checkpoint and
/// writes sample_0000.png, sample_0001.png, ... into cfg.generate.out_dir.
template <class T>
std::vector<std::filesystem::path> generate_samples(const TrainConfig& cfg_in, std::ostream* log = nullptr) {
  TrainConfig cfg = cfg_in;
  cfg.resolve();
  if (!cfg.diffuse()) throw ConfigError("generate: needs run.task = diffuse");
  const auto ck = Checkpoint::load(cfg.run.checkpoint);
  if (ck.meta_at("task") != cfg.run.task)
    throw CheckpointError("checkpoint/config mismatch: checkpoint task is " + ck.meta_at("task"));
  auto model = load_model<T>(cfg, ck);
  const auto schedule = NoiseSchedule::linear(cfg.diffusion.timesteps, cfg.diffusion.beta_start,
                                              cfg.diffusion.beta_end);
  NoisePredictor<T> predictor = [&model](const Tensor<T>& x, const std::vector<std::size_t>& t) {
    return model.forward(x, false, t);
  };
  const std::filesystem::path dir(cfg.generate.out_dir);
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "config.resolved.ini", cfg.to_ini());
  std::vector<std::filesystem::path> files;
  // Chunks of one sampling batch keep memory flat for large n; per-image
  // streams make the split irrelevant to the result.
  const std::size_t chunk = cfg.generate.batch_size;
  for (std::size_t start = 0; start < cfg.generate.num_samples; start += chunk) {
    const std::size_t n = std::min(chunk, cfg.generate.num_samples - start);
    auto imgs = ddpm_sample<T>(schedule, predictor, n,
                               {cfg.data.channels, cfg.data.height, cfg.data.width},
                               cfg.generate.seed, {cfg.generate.batch_size, true, start});
    for (std::size_t i = 0; i < n; ++i) {
      auto unit = add_scalar(scale(imgs[i], T{0.5}), T{0.5});  // [-1,1] -> [0,1]
      char name[32];
      std::snprintf(name, sizeof name, "sample_%04zu.png", start + i);
      data::write_png(dir / name, data::to_image8(unit));
      files.push_back(dir / name);
    }
    if (log) *log << "generated " << start + n << "/" << cfg.generate.num_samples << '\n';
  }
  return files;
}

}  // namespace ukan
