#pragma once

// Turns an aligned multi-channel scene into model batches: one sample is a (window, view) pair,
// where a view is a patch location (ring or crop mode) or the whole map resized (resize mode).

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "nowcast/grid_store.hpp"
#include "nowcast/models/config.hpp"
#include "nowcast/partition.hpp"
#include "nowcast/patchwork.hpp"
#include "nowcast/synthgen.hpp"
#include "nowcast/transform.hpp"

namespace nowcast::data {

enum class ViewMode { ring, crop, resize };

inline std::string_view to_string(ViewMode m) {
  switch (m) {
    case ViewMode::ring: return "ring";
    case ViewMode::crop: return "crop";
    case ViewMode::resize: return "resize";
  }
  return "?";
}

/// "patch" is accepted as an alias of "ring".
inline ViewMode parse_view_mode(std::string_view s) {
  if (s == "ring" || s == "patch") return ViewMode::ring;
  if (s == "crop") return ViewMode::crop;
  if (s == "resize") return ViewMode::resize;
  throw UsageError("unknown mode '" + std::string(s) + "' (expected ring, patch, crop or resize)");
}

struct ViewConfig {
  ViewMode mode = ViewMode::ring;
  int isize = 64;
  int tsize = 32;
  int step = 1;
  int freq = 20;
  int resize_side = 64;

  int side() const { return mode == ViewMode::resize ? resize_side : isize; }

  patch::PatchSpec spec() const {
    patch::PatchSpec s;
    s.isize = isize;
    s.tsize = tsize;
    s.step = step;
    s.freq = freq;
    return s;
  }

  void validate() const {
    if (mode == ViewMode::resize) {
      detail::require_config(resize_side >= 16, "resize side must be at least 16");
    } else {
      spec().validate();
    }
  }

  friend bool operator==(const ViewConfig&, const ViewConfig&) = default;
};

inline nlohmann::json to_json(const ViewConfig& v) {
  return {{"mode", std::string(to_string(v.mode))}, {"isize", v.isize}, {"tsize", v.tsize},
          {"step", v.step},  {"freq", v.freq},   {"resize_side", v.resize_side}};
}

inline ViewConfig view_config_from_json(const nlohmann::json& j) {
  ViewConfig v;
  v.mode = parse_view_mode(j.at("mode").get<std::string>());
  v.isize = j.at("isize").get<int>();
  v.tsize = j.at("tsize").get<int>();
  v.step = j.at("step").get<int>();
  v.freq = j.at("freq").get<int>();
  v.resize_side = j.at("resize_side").get<int>();
  v.validate();
  return v;
}

/// All channels on the precipitation time axis, in physical units.
struct Scene {
  GridGeometry geometry;
  std::int64_t cadence_min = 15;
  std::vector<EpochMinutes> times;
  std::vector<Field> precip;  // mm/h
  std::vector<Field> temp;    // temperature-profile category codes; empty when the channel is absent
  Field relief;               // metres; empty when absent
  int temp_categories = synth::kTempProfileCategories;

  int frames() const { return static_cast<int>(precip.size()); }
  std::size_t rows() const { return geometry.rows; }
  std::size_t cols() const { return geometry.cols; }
  EpochMinutes t0() const { return times.empty() ? 0 : times.front(); }
  int frame_channels() const { return 1 + (temp.empty() ? 0 : temp_categories); }
  int static_channels() const { return relief.empty() ? 0 : 1; }
};

/// Aligns the auxiliary channels to the precipitation cadence (nearest earlier sample for finer products).
inline Scene scene_from_channels(const ChannelSet& channels, int temp_categories = synth::kTempProfileCategories) {
  auto it = channels.find(Channel::precip_mm_per_h);
  if (it == channels.end()) throw Error("dataset has no precipitation channel");
  const FrameSequence& p = it->second;
  p.validate();
  Scene s;
  s.geometry = p.geometry;
  s.cadence_min = p.cadence_min;
  s.temp_categories = temp_categories;
  for (const auto& f : p.frames) {
    s.times.push_back(f.timestamp);
    s.precip.push_back(f.values);
  }
  if (auto t = channels.find(Channel::temp_profile_type); t != channels.end()) {
    const FrameSequence aligned =
        t->second.cadence_min == p.cadence_min ? t->second : resample_to_cadence(t->second, p.cadence_min);
    std::map<EpochMinutes, const Field*> by_time;
    for (const auto& f : aligned.frames) by_time[f.timestamp] = &f.values;
    for (EpochMinutes ts : s.times) {
      auto hit = by_time.find(ts);
      if (hit == by_time.end()) throw Error("no temperature-profile frame at t=" + std::to_string(ts));
      s.temp.push_back(*hit->second);
    }
  }
  if (auto r = channels.find(Channel::relief_m); r != channels.end()) s.relief = r->second.frames.front().values;
  return s;
}

/// Rejects reads of frames outside the permitted splits.
class FrameGuard {
 public:
  FrameGuard() = default;
  FrameGuard(const partition::SplitPlan& plan, std::initializer_list<partition::Split> allowed)
      : allowed_(static_cast<std::size_t>(plan.total_frames), 0) {
    for (auto split : allowed) {
      for (int f : plan.frames(split)) allowed_[static_cast<std::size_t>(f)] = 1;
    }
  }

  static FrameGuard all(int frames) {
    FrameGuard g;
    g.allowed_.assign(static_cast<std::size_t>(frames), 1);
    return g;
  }

  bool allows(int frame) const {
    return frame >= 0 && static_cast<std::size_t>(frame) < allowed_.size() && allowed_[static_cast<std::size_t>(frame)];
  }

  void check(int frame) const {
    if (!allows(frame)) {
      throw Error("frame " + std::to_string(frame) + " is outside the splits this stage may read");
    }
  }

 private:
  std::vector<char> allowed_;
};

/// Precipitation from train frames (after log1p); relief over the whole static map.
inline transform::NormStats fit_norm(const Scene& scene, const std::vector<int>& train_frames) {
  detail::require(!train_frames.empty(), "no training frames to fit normalisation on");
  std::vector<Field> sel;
  sel.reserve(train_frames.size());
  for (int f : train_frames) sel.push_back(scene.precip.at(static_cast<std::size_t>(f)));
  transform::NormStats n;
  n.channels[Channel::precip_mm_per_h] = transform::fit_precip_moments(std::span<const Field>(sel));
  if (!scene.relief.empty()) {
    const auto v = scene.relief.values();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    n.channels[Channel::relief_m] = *lo == *hi ? transform::Moments{*lo, 1.0}
                                               : transform::fit_moments(std::span<const Field>(&scene.relief, 1));
  }
  return n;
}

/// Rain threshold in mm/h expressed in the model's standardised log units.
inline double transformed_threshold(double mm_per_h, const transform::NormStats& norm) {
  const auto& m = norm.at(Channel::precip_mm_per_h);
  return (std::log1p(mm_per_h) - m.mean) / m.stdev;
}

struct Sample {
  partition::WindowSample window;
  int view = 0;
};

/// Extracts model inputs for (window, view) samples and maps predictions back to full maps.
class Views {
 public:
  Views(const Scene& scene, ViewConfig cfg, transform::NormStats norm)
      : scene_(&scene), cfg_(cfg), norm_(std::move(norm)) {
    cfg_.validate();
    if (cfg_.mode != ViewMode::resize) slots_ = patch::tile_layout(scene.rows(), scene.cols(), cfg_.spec());
    if (!scene.relief.empty()) {
      const auto& m = norm_.at(Channel::relief_m);
      for (int v = 0; v < count(); ++v) relief_.push_back(transform::zscore(view_of(scene.relief, v), m));
    }
  }

  int count() const { return cfg_.mode == ViewMode::resize ? 1 : static_cast<int>(slots_.size()); }
  int side() const { return cfg_.side(); }
  const ViewConfig& config() const { return cfg_; }
  const transform::NormStats& norm() const { return norm_; }
  const Scene& scene() const { return *scene_; }

  models::ModelConfig model_shape(models::ModelConfig base) const {
    base.spatial = side();
    base.frame_channels = scene_->frame_channels();
    base.static_channels = scene_->static_channels();
    return base;
  }

  /// A full-map grid as seen through view v (side x side).
  Field view_of(const Field& full, int v) const {
    switch (cfg_.mode) {
      case ViewMode::ring: return patch::extract_patch(full, slots_.at(static_cast<std::size_t>(v)).spec).values;
      case ViewMode::crop: return patch::crop_patch(full, slots_.at(static_cast<std::size_t>(v)).spec).values;
      case ViewMode::resize: {
        const auto n = static_cast<std::size_t>(cfg_.resize_side);
        return patch::resize_full_map(full, n, n);
      }
    }
    return {};
  }

  /// Batch of samples; the future part is filled only when `with_future`.
  models::Batch batch(const std::vector<Sample>& samples, const FrameGuard& guard, bool with_future) const {
    detail::require(!samples.empty(), "empty batch");
    const int N = static_cast<int>(samples.size());
    const int Tin = samples.front().window.s_in, Tout = samples.front().window.s_out;
    const int C = scene_->frame_channels(), S = side();
    models::Batch b;
    b.past = nn::Tensor({N, Tin, C, S, S});
    if (with_future) b.future = nn::Tensor({N, Tout, C, S, S});
    b.statics = nn::Tensor({N, scene_->static_channels(), S, S});
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    for (int n = 0; n < N; ++n) {
      const auto& s = samples[static_cast<std::size_t>(n)];
      auto put = [&](nn::Tensor& dst, int T, int t, int frame) {
        guard.check(frame);
        float* out = dst.ptr() + ((static_cast<std::size_t>(n) * T + t) * C) * plane;
        write_frame(frame, s.view, out);
      };
      for (int t = 0; t < Tin; ++t) put(b.past, Tin, t, s.window.start + t);
      if (with_future) {
        for (int t = 0; t < Tout; ++t) put(b.future, Tout, t, s.window.start + Tin + t);
      }
      if (!relief_.empty()) {
        const auto r = relief_[static_cast<std::size_t>(s.view)].values();
        std::copy(r.begin(), r.end(), b.statics.ptr() + static_cast<std::size_t>(n) * plane);
      }
    }
    return b;
  }

  /// Model-unit prediction maps of every view of one window -> full-map mm/h frames.
  /// `per_view[v]` holds out_frames grids of side x side.
  std::vector<Field> to_full_maps(const std::vector<std::vector<Field>>& per_view) const {
    detail::require(static_cast<int>(per_view.size()) == count(), "one prediction per view is required");
    const auto& m = norm_.at(Channel::precip_mm_per_h);
    const std::size_t T = per_view.front().size();
    std::vector<Field> out;
    for (std::size_t t = 0; t < T; ++t) {
      if (cfg_.mode == ViewMode::resize) {
        const Field mm = transform::precip_inverse(per_view[0][t], m);
        Field full = patch::resize_full_map(mm, scene_->rows(), scene_->cols());
        for (auto& v : full.values()) v = std::max(v, 0.0f);
        out.push_back(std::move(full));
        continue;
      }
      std::vector<std::pair<patch::Rect, Field>> tiles;
      for (int v = 0; v < count(); ++v) {
        const Field centre = patch::center_block(per_view[static_cast<std::size_t>(v)][t], cfg_.isize, cfg_.tsize);
        tiles.emplace_back(slots_[static_cast<std::size_t>(v)].target, transform::precip_inverse(centre, m));
      }
      out.push_back(patch::reassemble(tiles, scene_->rows(), scene_->cols()));
    }
    return out;
  }

 private:
  void write_frame(int frame, int view, float* out) const {
    const std::size_t plane = static_cast<std::size_t>(side()) * side();
    const auto f = static_cast<std::size_t>(frame);
    const Field p = transform::precip_forward(view_of(scene_->precip.at(f), view), norm_.at(Channel::precip_mm_per_h));
    std::copy(p.values().begin(), p.values().end(), out);
    if (scene_->temp.empty()) return;
    const auto planes = transform::one_hot(scene_->temp.at(f), scene_->temp_categories);
    for (std::size_t k = 0; k < planes.size(); ++k) {
      const Field v = view_of(planes[k], view);
      std::copy(v.values().begin(), v.values().end(), out + (k + 1) * plane);
    }
  }

  const Scene* scene_;
  ViewConfig cfg_;
  transform::NormStats norm_;
  std::vector<patch::TileSlot> slots_;
  std::vector<Field> relief_;
};

/// Every (window, view) pair of a split, window-major.
inline std::vector<Sample> enumerate_samples(const partition::SplitPlan& plan, partition::Split split,
                                             const partition::WindowConfig& wc, int views) {
  std::vector<Sample> out;
  for (const auto& w : partition::enumerate_windows(plan, split, wc)) {
    for (int v = 0; v < views; ++v) out.push_back({w, v});
  }
  return out;
}

}  // namespace nowcast::data
