#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"

namespace nowcast::transform {

template <typename T>
Grid<T> log1p_forward(const Grid<T>& x) {
  Grid<T> out(x.rows(), x.cols());
  auto src = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!(src[i] >= T(0))) {
      throw Error("log1p transform needs non-negative precipitation, got " + std::to_string(src[i]));
    }
    dst[i] = static_cast<T>(std::log1p(static_cast<double>(src[i])));
  }
  return out;
}

/// Inverse of log1p_forward; negative results clamp to zero rain.
template <typename T>
Grid<T> log1p_inverse(const Grid<T>& y) {
  Grid<T> out(y.rows(), y.cols());
  auto src = y.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<T>(std::max(0.0, std::expm1(static_cast<double>(src[i]))));
  }
  return out;
}

struct Moments {
  double mean = 0.0;
  double stdev = 1.0;

  friend bool operator==(const Moments&, const Moments&) = default;
};

/// Per-channel standardisation constants, fitted on the training split and then frozen.
struct NormStats {
  std::map<Channel, Moments> channels;

  const Moments& at(Channel c) const {
    auto it = channels.find(c);
    if (it == channels.end()) throw Error("no normalisation statistics for " + std::string(to_string(c)));
    return it->second;
  }

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Population mean and standard deviation over every cell of every grid (two-pass, in double).
template <typename T>
Moments fit_moments(std::span<const Grid<T>> grids) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : grids) {
    for (T v : g.values()) sum += static_cast<double>(v);
    n += g.size();
  }
  detail::require(n > 0, "cannot fit statistics on empty data");
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& g : grids) {
    for (T v : g.values()) {
      const double d = static_cast<double>(v) - mean;
      sq += d * d;
    }
  }
  const double stdev = std::sqrt(sq / static_cast<double>(n));
  if (!(stdev > 0.0)) throw Error("channel has zero standard deviation; cannot z-score it");
  return {mean, stdev};
}

template <typename T>
Grid<T> zscore(const Grid<T>& x, const Moments& m) {
  if (!(m.stdev > 0.0)) throw Error("z-score with zero standard deviation");
  Grid<T> out(x.rows(), x.cols());
  auto src = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<T>((static_cast<double>(src[i]) - m.mean) / m.stdev);
  }
  return out;
}

template <typename T>
Grid<T> zscore_inverse(const Grid<T>& z, const Moments& m) {
  if (!(m.stdev > 0.0)) throw Error("z-score with zero standard deviation");
  Grid<T> out(z.rows(), z.cols());
  auto src = z.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<T>(static_cast<double>(src[i]) * m.stdev + m.mean);
  }
  return out;
}

/// mm/h -> standardised log space.
template <typename T>
Grid<T> precip_forward(const Grid<T>& mm_per_h, const Moments& m) {
  return zscore(log1p_forward(mm_per_h), m);
}

/// Standardised log space -> mm/h, composed in double and clamped at zero.
template <typename T>
Grid<T> precip_inverse(const Grid<T>& z, const Moments& m) {
  if (!(m.stdev > 0.0)) throw Error("z-score with zero standard deviation");
  Grid<T> out(z.rows(), z.cols());
  auto src = z.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double logv = static_cast<double>(src[i]) * m.stdev + m.mean;
    dst[i] = static_cast<T>(std::max(0.0, std::expm1(logv)));
  }
  return out;
}

/// Fit the precipitation statistics (after log1p) on the given training frames.
template <typename T>
Moments fit_precip_moments(std::span<const Grid<T>> mm_per_h) {
  std::vector<Grid<T>> logged;
  logged.reserve(mm_per_h.size());
  for (const auto& g : mm_per_h) logged.push_back(log1p_forward(g));
  return fit_moments(std::span<const Grid<T>>(logged));
}

/// Categorical codes -> one indicator plane per category. Codes outside [0, n) are rejected.
template <typename T>
std::vector<Grid<T>> one_hot(const Grid<T>& codes, int n_categories) {
  std::vector<Grid<T>> planes(static_cast<std::size_t>(n_categories), Grid<T>(codes.rows(), codes.cols()));
  auto src = codes.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto k = static_cast<long>(std::lround(static_cast<double>(src[i])));
    if (k < 0 || k >= n_categories) throw Error("category code " + std::to_string(k) + " out of range");
    planes[static_cast<std::size_t>(k)].values()[i] = T(1);
  }
  return planes;
}

inline nlohmann::json to_json(const NormStats& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [c, m] : s.channels) {
    j[std::string(to_string(c))] = {{"mean", m.mean}, {"stdev", m.stdev}};
  }
  return j;
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  for (const auto& [name, m] : j.items()) {
    s.channels[parse_channel(name)] = {m.at("mean").get<double>(), m.at("stdev").get<double>()};
  }
  return s;
}

}  // namespace nowcast::transform
