#pragma once

// Synthetic radar scenes: Gaussian rain cells advected by a (possibly sheared) velocity field,
// growing or decaying geometrically, respawning when they expire or leave the domain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/grid_store.hpp"

namespace nowcast::synth {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SceneConfig {
  std::uint64_t seed = 1;
  int n_cells = 12;
  // Velocity in cells per 15-minute step: (u, v) = (column, row) displacement. The shear terms
  // add u_shear * (row - rows/2) / rows to u and v_shear * (col - cols/2) / cols to v.
  double u = 1.0;
  double v = 0.5;
  double u_shear = 0.0;
  double v_shear = 0.0;
  Range growth_rate{0.99, 1.01};
  Range cell_amplitude{2.0, 25.0};
  Range cell_radius{2.5, 6.0};
  Range lifetime{30.0, 90.0};  // frames; {0, 0} keeps cells alive forever
  int fade_frames = 3;
  int frame_count = 288;
  int rows = 64;
  int cols = 64;
  int aux_cadence_min = 15;  // temp-profile cadence; 5 mimics the finer HYDRE product
  EpochMinutes start_time = 25246080;  // 2018-01-01T00:00Z
  GridGeometry geometry_for() const {
    return GridGeometry::from_extent(45.0, 45.0 + rows * 0.01, 0.0, cols * 0.01, 0.01);
  }

  void validate() const {
    detail::require_config(n_cells >= 0, "n_cells must be non-negative");
    detail::require_config(cell_amplitude.lo >= 0.0 && cell_amplitude.hi >= cell_amplitude.lo,
                           "cell amplitudes must be a non-negative range");
    detail::require_config(cell_radius.lo > 0.0 && cell_radius.hi >= cell_radius.lo,
                           "cell radii must be positive");
    detail::require_config(growth_rate.lo > 0.0 && growth_rate.hi >= growth_rate.lo,
                           "growth rate range must be positive");
    detail::require_config(lifetime.lo >= 0.0 && lifetime.hi >= lifetime.lo, "bad lifetime range");
    detail::require_config(frame_count >= 12, "frame_count must cover one 6+6 window");
    detail::require_config(rows > 0 && cols > 0, "scene needs a positive size");
    detail::require_config(aux_cadence_min > 0 && 15 % aux_cadence_min == 0,
                           "aux cadence must divide 15 minutes");
    detail::require_config(fade_frames >= 0, "fade_frames must be non-negative");
  }
};

/// Temperature-profile category bands on precipitation (mm/h): [0,0.1) [0.1,1) [1,5) [5,inf).
inline constexpr int kTempProfileCategories = 4;

inline float temp_profile_category(float precip) {
  if (precip < 0.1f) return 0.0f;
  if (precip < 1.0f) return 1.0f;
  if (precip < 5.0f) return 2.0f;
  return 3.0f;
}

struct RainCell {
  double row = 0.0;
  double col = 0.0;
  double amplitude = 0.0;
  double radius = 1.0;
  double growth = 1.0;
  double age = 0.0;
  double lifetime = 0.0;  // 0 = immortal
};

namespace detail_synth {

inline double draw(std::mt19937_64& rng, const Range& r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

inline RainCell spawn(std::mt19937_64& rng, const SceneConfig& cfg, bool initial) {
  RainCell c;
  // Spawn over the domain plus a band one lifetime-of-travel wide upstream so rain keeps entering.
  const double pad_r = 8.0 + 8.0 * std::abs(cfg.v);
  const double pad_c = 8.0 + 8.0 * std::abs(cfg.u);
  c.row = std::uniform_real_distribution<double>(-pad_r, cfg.rows + pad_r)(rng);
  c.col = std::uniform_real_distribution<double>(-pad_c, cfg.cols + pad_c)(rng);
  c.amplitude = draw(rng, cfg.cell_amplitude);
  c.radius = draw(rng, cfg.cell_radius);
  c.growth = draw(rng, cfg.growth_rate);
  c.lifetime = std::round(draw(rng, cfg.lifetime));
  c.age = 0.0;
  if (initial && c.lifetime > 0.0) {
    c.age = std::floor(std::uniform_real_distribution<double>(0.0, c.lifetime)(rng));
  }
  return c;
}

inline double envelope(const RainCell& c, int fade) {
  double a = c.amplitude * std::pow(c.growth, c.age);
  if (fade > 0 && c.lifetime > 0.0) {
    const double in = (c.age + 1.0) / fade;
    const double out = (c.lifetime - c.age) / fade;
    a *= std::clamp(std::min(in, out), 0.0, 1.0);
  }
  return a;
}

inline std::pair<double, double> velocity(const SceneConfig& cfg, double row, double col) {
  const double u = cfg.u + cfg.u_shear * (row - cfg.rows / 2.0) / cfg.rows;
  const double v = cfg.v + cfg.v_shear * (col - cfg.cols / 2.0) / cfg.cols;
  return {u, v};
}

inline void render(const std::vector<RainCell>& cells, const SceneConfig& cfg, Field& out) {
  std::fill(out.values().begin(), out.values().end(), 0.0f);
  for (const auto& c : cells) {
    const double a = envelope(c, cfg.fade_frames);
    if (a <= 0.0) continue;
    const double reach = 4.0 * c.radius;
    const auto r0 = std::max<long>(0, static_cast<long>(std::floor(c.row - reach)));
    const auto r1 = std::min<long>(cfg.rows - 1, static_cast<long>(std::ceil(c.row + reach)));
    const auto c0 = std::max<long>(0, static_cast<long>(std::floor(c.col - reach)));
    const auto c1 = std::min<long>(cfg.cols - 1, static_cast<long>(std::ceil(c.col + reach)));
    const double inv = 1.0 / (2.0 * c.radius * c.radius);
    for (long r = r0; r <= r1; ++r) {
      const double dr = static_cast<double>(r) - c.row;
      for (long col = c0; col <= c1; ++col) {
        const double dc = static_cast<double>(col) - c.col;
        out(static_cast<std::size_t>(r), static_cast<std::size_t>(col)) +=
            static_cast<float>(a * std::exp(-(dr * dr + dc * dc) * inv));
      }
    }
  }
  for (auto& v : out.values()) v = std::max(v, 0.0f);
}

inline bool expired(const RainCell& c, const SceneConfig& cfg) {
  if (c.lifetime > 0.0 && c.age >= c.lifetime) return true;
  const double pad = 12.0 + 12.0 * std::max(std::abs(cfg.u), std::abs(cfg.v)) + 4.0 * c.radius;
  return c.row < -pad || c.row > cfg.rows + pad || c.col < -pad || c.col > cfg.cols + pad;
}

}  // namespace detail_synth

/// Relief: a smooth ridge running diagonally across the scene.
inline Field ridge_relief(int rows, int cols) {
  Field relief(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  const double width = 0.15 * std::max(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const double ridge_col = 0.3 * cols + 0.4 * cols * r / std::max(1, rows - 1);
    for (int c = 0; c < cols; ++c) {
      const double d = (c - ridge_col) / width;
      relief(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) =
          static_cast<float>(200.0 + 1300.0 * std::exp(-0.5 * d * d));
    }
  }
  return relief;
}

/// Deterministic function of the config: same seed, bit-identical frames.
inline ChannelSet generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  const GridGeometry geo = cfg.geometry_for();
  std::mt19937_64 rng(cfg.seed);

  std::vector<RainCell> cells;
  cells.reserve(static_cast<std::size_t>(cfg.n_cells));
  for (int i = 0; i < cfg.n_cells; ++i) cells.push_back(detail_synth::spawn(rng, cfg, true));

  const int substeps = 15 / cfg.aux_cadence_min;
  const double dt = 1.0 / substeps;

  FrameSequence precip{Channel::precip_mm_per_h, geo, 15, {}};
  FrameSequence temp{Channel::temp_profile_type, geo, cfg.aux_cadence_min, {}};
  Field field(geo.rows, geo.cols);

  for (int t = 0; t < cfg.frame_count; ++t) {
    for (int s = 0; s < substeps; ++s) {
      if (t == cfg.frame_count - 1 && s > 0) break;
      detail_synth::render(cells, cfg, field);
      const EpochMinutes ts = cfg.start_time + 15 * t + cfg.aux_cadence_min * s;
      if (s == 0) precip.frames.push_back({ts, Channel::precip_mm_per_h, field});
      Field category(geo.rows, geo.cols);
      std::transform(field.values().begin(), field.values().end(), category.values().begin(),
                     temp_profile_category);
      temp.frames.push_back({ts, Channel::temp_profile_type, std::move(category)});

      for (auto& c : cells) {
        const auto [u, v] = detail_synth::velocity(cfg, c.row, c.col);
        c.col += u * dt;
        c.row += v * dt;
        c.age += dt;
      }
    }
    for (auto& c : cells) {
      c.age = std::round(c.age);
      if (detail_synth::expired(c, cfg)) c = detail_synth::spawn(rng, cfg, false);
    }
  }

  FrameSequence relief{Channel::relief_m, geo, 0, {{0, Channel::relief_m, ridge_relief(cfg.rows, cfg.cols)}}};

  ChannelSet out;
  out.emplace(Channel::precip_mm_per_h, std::move(precip));
  out.emplace(Channel::temp_profile_type, std::move(temp));
  out.emplace(Channel::relief_m, std::move(relief));
  return out;
}

}  // namespace nowcast::synth
