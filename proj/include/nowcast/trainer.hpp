#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nowcast/dataset.hpp"
#include "nowcast/losses.hpp"
#include "nowcast/models/checkpoint.hpp"
#include "nowcast/models/objective.hpp"
#include "nowcast/nn/optim.hpp"
#include "nowcast/verify.hpp"

namespace nowcast::train {

struct TrainConfig {
  double learning_rate = 2e-4;
  int batch_size = 4;
  int max_steps = 500;
  int eval_interval = 50;
  int patience = 0;          // evaluations without validation improvement before stopping; 0 disables
  int max_eval_samples = 32; // validation samples per evaluation (evenly spaced, fixed)
  double clip_norm = 0.0;    // global gradient-norm clip; 0 disables
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;

  void validate() const {
    detail::require_config(learning_rate >= 0.0, "learning rate must be non-negative");
    detail::require_config(batch_size >= 1, "batch size must be at least 1");
    detail::require_config(max_steps >= 1, "max_steps must be at least 1");
    detail::require_config(eval_interval >= 1, "eval_interval must be at least 1");
    detail::require_config(patience >= 0, "patience must be non-negative");
    detail::require_config(max_eval_samples >= 1, "max_eval_samples must be at least 1");
    detail::require_config(clip_norm >= 0.0, "clip_norm must be non-negative");
    detail::require_config(!out_dir.empty(), "training needs an output directory");
  }
};

struct CurveRow {
  long step = 0;
  std::string split;  // train or val
  double loss_total = 0.0;
  double loss_wssim = 0.0;  // mean 1 - (W)SSIM
  double loss_wmse = 0.0;

  friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

struct TrainResult {
  std::vector<CurveRow> curve;
  long steps_run = 0;
  long best_step = -1;
  double best_val = std::numeric_limits<double>::infinity();
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path curve_csv;
};

inline std::string format_curve(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << "step,split,loss_total,loss_wssim,loss_wmse\n" << std::setprecision(9);
  for (const auto& r : rows) {
    os << r.step << ',' << r.split << ',' << r.loss_total << ',' << r.loss_wssim << ',' << r.loss_wmse << '\n';
  }
  return os.str();
}

inline std::vector<CurveRow> read_curve(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  std::vector<CurveRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CurveRow r;
    std::string cell;
    std::getline(ls, cell, ',');
    r.step = std::stol(cell);
    std::getline(ls, r.split, ',');
    std::getline(ls, cell, ',');
    r.loss_total = std::stod(cell);
    std::getline(ls, cell, ',');
    r.loss_wssim = std::stod(cell);
    std::getline(ls, cell, ',');
    r.loss_wmse = std::stod(cell);
    rows.push_back(r);
  }
  return rows;
}

/// Objective of one batch in model units. The L2 term is added as a number; its gradient is applied
/// separately by add_l2_gradient.
struct BatchLoss {
  nn::Var objective;  // image loss + model auxiliary term
  double total = 0.0;
  double wssim = 0.0;
  double wmse = 0.0;
};

inline BatchLoss batch_loss(models::Model& model, const models::Batch& batch, models::Phase phase,
                            const loss::LossConfig& lcfg) {
  const auto out = model.forward(batch, phase);
  const auto il = models::image_loss(out.prediction, batch.target(), lcfg);
  BatchLoss b;
  b.objective = out.aux_loss ? nn::add(il.value, out.aux_loss) : il.value;
  b.total = b.objective->value[0] + lcfg.beta * model.params().decay_sum_squares();
  b.wssim = il.ssim_loss;
  b.wmse = il.wmse;
  return b;
}

/// Evenly spaced, order-preserving subset of at most `n` samples.
inline std::vector<data::Sample> spaced_subset(const std::vector<data::Sample>& all, int n) {
  if (static_cast<int>(all.size()) <= n) return all;
  std::vector<data::Sample> out;
  for (int k = 0; k < n; ++k) out.push_back(all[all.size() * static_cast<std::size_t>(k) / static_cast<std::size_t>(n)]);
  return out;
}

/// Mean losses in evaluation mode over fixed samples, in batches.
inline CurveRow evaluate_loss(models::Model& model, const data::Views& views, const std::vector<data::Sample>& samples,
                              const data::FrameGuard& guard, const loss::LossConfig& lcfg, int batch_size) {
  nn::NoGradGuard no_grad;
  CurveRow row;
  double frames = 0.0;
  for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::vector<data::Sample> chunk(samples.begin() + static_cast<long>(i),
                                          samples.begin() + static_cast<long>(std::min(samples.size(), i + batch_size)));
    const auto bl = batch_loss(model, views.batch(chunk, guard, true), models::Phase::eval, lcfg);
    const double n = static_cast<double>(chunk.size());
    row.loss_total += bl.objective->value[0] * n;
    row.loss_wssim += bl.wssim * n;
    row.loss_wmse += bl.wmse * n;
    frames += n;
  }
  row.loss_total = row.loss_total / frames + lcfg.beta * model.params().decay_sum_squares();
  row.loss_wssim /= frames;
  row.loss_wmse /= frames;
  return row;
}

/// Optimises `model` on the train split; validation loss picks the best checkpoint. Reads no test frames.
/// `lcfg.threshold` is in mm/h and is converted to model units here.
inline TrainResult train(models::Model& model, const data::Views& views, const partition::SplitPlan& plan,
                         const partition::WindowConfig& wc, loss::LossConfig lcfg, const TrainConfig& cfg,
                         const std::function<void(const CurveRow&)>& on_row = {}) {
  cfg.validate();
  lcfg.validate();
  lcfg.threshold = data::transformed_threshold(lcfg.threshold, views.norm());
  const data::FrameGuard guard(plan, {partition::Split::train, partition::Split::val});

  auto train_samples = data::enumerate_samples(plan, partition::Split::train, wc, views.count());
  const auto val_all = data::enumerate_samples(plan, partition::Split::val, wc, views.count());
  detail::require(!train_samples.empty(), "the train split yields no windows");
  const auto val_samples = spaced_subset(val_all.empty() ? train_samples : val_all, cfg.max_eval_samples);

  std::filesystem::create_directories(cfg.out_dir);
  TrainResult res;
  res.best_checkpoint = cfg.out_dir / "best.ckpt";
  res.last_checkpoint = cfg.out_dir / "last.ckpt";
  res.curve_csv = cfg.out_dir / "curve.csv";

  nn::Adam adam(model.params(), {cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(train_samples.begin(), train_samples.end(), rng);
  std::size_t cursor = 0;
  int stale = 0;
  double acc_total = 0.0, acc_wssim = 0.0, acc_wmse = 0.0;
  int acc_n = 0;
  auto emit = [&](CurveRow row) {
    res.curve.push_back(row);
    if (on_row) on_row(row);
  };
  auto extra = [&](long step) { return nlohmann::json{{"step", step}, {"view", data::to_json(views.config())}}; };

  for (long step = 1; step <= cfg.max_steps; ++step) {
    std::vector<data::Sample> chunk;
    while (static_cast<int>(chunk.size()) < cfg.batch_size) {
      if (cursor == train_samples.size()) {
        std::shuffle(train_samples.begin(), train_samples.end(), rng);
        cursor = 0;
      }
      chunk.push_back(train_samples[cursor++]);
    }
    const auto batch = views.batch(chunk, guard, true);
    model.params().zero_grad();
    BatchLoss bl;
    try {
      bl = batch_loss(model, batch, models::Phase::train, lcfg);
    } catch (const UsageError&) {
      throw;
    } catch (const Error& e) {
      throw Error("training step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(bl.total)) throw Error("non-finite training loss at step " + std::to_string(step));
    nn::backward(bl.objective);
    nn::add_l2_gradient(model.params(), lcfg.beta);
    if (cfg.clip_norm > 0.0) nn::clip_grad_norm(model.params(), cfg.clip_norm);
    adam.step(model.params());
    res.steps_run = step;

    if (step == 1) emit({0, "train", bl.total, bl.wssim, bl.wmse});
    acc_total += bl.total;
    acc_wssim += bl.wssim;
    acc_wmse += bl.wmse;
    ++acc_n;

    if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
      emit({step, "train", acc_total / acc_n, acc_wssim / acc_n, acc_wmse / acc_n});
      acc_total = acc_wssim = acc_wmse = 0.0;
      acc_n = 0;
      CurveRow val = evaluate_loss(model, views, val_samples, guard, lcfg, cfg.batch_size);
      val.step = step;
      val.split = "val";
      if (!std::isfinite(val.loss_total)) throw Error("non-finite validation loss at step " + std::to_string(step));
      emit(val);
      if (val.loss_total < res.best_val) {
        res.best_val = val.loss_total;
        res.best_step = step;
        stale = 0;
        models::save_checkpoint(res.best_checkpoint, model, views.norm(), extra(step));
      } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
        break;
      }
    }
  }
  models::save_checkpoint(res.last_checkpoint, model, views.norm(), extra(res.steps_run));
  io::write_text_atomic(res.curve_csv, format_curve(res.curve));
  return res;
}

/// Runs the model over every view of each window and reassembles full maps in mm/h.
inline std::vector<verify::Forecast> predict(models::Model& model, const data::Views& views,
                                     const std::vector<partition::WindowSample>& windows,
                                     const data::FrameGuard& guard) {
  nn::NoGradGuard no_grad;
  const auto& scene = views.scene();
  const auto& cfg = model.config();
  detail::require(cfg.spatial == views.side() && cfg.frame_channels == scene.frame_channels() &&
                      cfg.static_channels == scene.static_channels(),
                  "checkpoint does not match the data view (spatial " + std::to_string(cfg.spatial) + " vs " +
                      std::to_string(views.side()) + ")");
  std::vector<verify::Forecast> out;
  for (const auto& w : windows) {
    detail::require(w.s_in == cfg.in_frames && w.s_out == cfg.out_frames, "window length does not match the model");
    std::vector<std::vector<Field>> per_view;
    for (int v = 0; v < views.count(); ++v) {
      const auto batch = views.batch({{w, v}}, guard, false);
      const auto result = model.forward(batch, models::Phase::eval);
      const auto& pred = result.prediction->value;
      const auto S = static_cast<std::size_t>(cfg.spatial);
      std::vector<Field> frames;
      for (int t = 0; t < cfg.out_frames; ++t) {
        const float* src = pred.ptr() + static_cast<std::size_t>(t) * S * S;
        frames.emplace_back(S, S, std::vector<float>(src, src + S * S));
      }
      per_view.push_back(std::move(frames));
    }
    verify::Forecast f;
    f.window = w;
    f.issue_time = w.issue_time(scene.t0(), scene.cadence_min);
    for (int t = 1; t <= cfg.out_frames; ++t) f.valid_times.push_back(f.issue_time + t * scene.cadence_min);
    f.frames = views.to_full_maps(per_view);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace nowcast::train
