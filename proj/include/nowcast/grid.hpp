#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nowcast/error.hpp"

namespace nowcast {

/// Dense row-major 2D array.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    detail::require(data_.size() == rows_ * cols_,
                    "grid payload has " + std::to_string(data_.size()) + " values, expected " +
                        std::to_string(rows_ * cols_));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  T& at(std::size_t r, std::size_t c) {
    check(r, c);
    return (*this)(r, c);
  }
  const T& at(std::size_t r, std::size_t c) const {
    check(r, c);
    return (*this)(r, c);
  }

  /// Zero outside the grid; used wherever a neighbourhood leaves the domain.
  T value_or_zero(std::ptrdiff_t r, std::ptrdiff_t c) const {
    if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(rows_) ||
        c >= static_cast<std::ptrdiff_t>(cols_)) {
      return T{};
    }
    return data_[static_cast<std::size_t>(r) * cols_ + static_cast<std::size_t>(c)];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const Grid& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  template <typename U>
  Grid<U> cast() const {
    Grid<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.values().begin(),
                   [](const T& v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void check(std::size_t r, std::size_t c) const {
    if (r >= rows_ || c >= cols_) {
      throw Error("grid index (" + std::to_string(r) + ", " + std::to_string(c) +
                  ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Field = Grid<float>;

/// Regular latitude/longitude raster. Row 0 is the northern edge, column 0 the western edge.
struct GridGeometry {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;
  double resolution = 0.0;

  static GridGeometry from_extent(double lat_min, double lat_max, double lon_min, double lon_max,
                                  double resolution) {
    GridGeometry g{0, 0, lat_min, lat_max, lon_min, lon_max, resolution};
    detail::require_config(resolution > 0.0, "geometry resolution must be positive");
    g.rows = static_cast<std::size_t>(std::llround((lat_max - lat_min) / resolution));
    g.cols = static_cast<std::size_t>(std::llround((lon_max - lon_min) / resolution));
    g.validate();
    return g;
  }

  void validate() const {
    detail::require(resolution > 0.0, "geometry resolution must be positive");
    detail::require(lat_max > lat_min, "geometry requires lat_max > lat_min");
    detail::require(lon_max > lon_min, "geometry requires lon_max > lon_min");
    const auto expect_rows = std::llround((lat_max - lat_min) / resolution);
    const auto expect_cols = std::llround((lon_max - lon_min) / resolution);
    detail::require(static_cast<long long>(rows) == expect_rows,
                    "geometry rows " + std::to_string(rows) + " inconsistent with extent (" +
                        std::to_string(expect_rows) + ")");
    detail::require(static_cast<long long>(cols) == expect_cols,
                    "geometry cols " + std::to_string(cols) + " inconsistent with extent (" +
                        std::to_string(expect_cols) + ")");
  }

  double cell_center_lat(double row) const { return lat_max - (row + 0.5) * resolution; }
  double cell_center_lon(double col) const { return lon_min + (col + 0.5) * resolution; }

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Map extent of the reference radar composite: 41N..51.5N, 10.5W..6E at 0.01 degrees.
inline GridGeometry reference_geometry() {
  return GridGeometry::from_extent(41.0, 51.5, -10.5, 6.0, 0.01);
}

enum class Channel { precip_mm_per_h, temp_profile_type, relief_m };

inline std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::precip_mm_per_h: return "precip_mm_per_h";
    case Channel::temp_profile_type: return "temp_profile_type";
    case Channel::relief_m: return "relief_m";
  }
  return "unknown";
}

inline Channel parse_channel(std::string_view name) {
  for (auto c : {Channel::precip_mm_per_h, Channel::temp_profile_type, Channel::relief_m}) {
    if (to_string(c) == name) return c;
  }
  throw Error("unknown channel '" + std::string(name) + "'");
}

inline std::string_view default_units(Channel c) {
  switch (c) {
    case Channel::precip_mm_per_h: return "mm/h";
    case Channel::temp_profile_type: return "category";
    case Channel::relief_m: return "m";
  }
  return "";
}

inline bool is_categorical(Channel c) { return c == Channel::temp_profile_type; }

/// Minutes since 1970-01-01T00:00Z.
using EpochMinutes = std::int64_t;

struct RasterFrame {
  EpochMinutes timestamp = 0;
  Channel channel = Channel::precip_mm_per_h;
  Field values;
};

inline void validate_frame_values(const RasterFrame& frame) {
  if (frame.channel == Channel::precip_mm_per_h) {
    for (float v : frame.values.values()) {
      detail::require(v >= 0.0f, "negative precipitation at t=" + std::to_string(frame.timestamp));
    }
  } else if (frame.channel == Channel::temp_profile_type) {
    for (float v : frame.values.values()) {
      detail::require(v >= 0.0f && v == std::floor(v) && v < 256.0f,
                      "temp_profile_type values must be small non-negative integers (t=" +
                          std::to_string(frame.timestamp) + ")");
    }
  }
}

/// Frames of one channel at a fixed cadence. A cadence of 0 marks a static channel (one frame).
struct FrameSequence {
  Channel channel = Channel::precip_mm_per_h;
  GridGeometry geometry;
  std::int64_t cadence_min = 15;
  std::vector<RasterFrame> frames;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  const RasterFrame& operator[](std::size_t i) const { return frames[i]; }

  void validate() const {
    detail::require(!frames.empty(), "no frames");
    detail::require(cadence_min >= 0, "negative cadence");
    if (cadence_min == 0) {
      detail::require(frames.size() == 1, "static channel " + std::string(to_string(channel)) +
                                               " must hold exactly one frame");
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& f = frames[i];
      detail::require(f.channel == channel, "frame channel does not match sequence channel");
      detail::require(f.values.rows() == geometry.rows && f.values.cols() == geometry.cols,
                      "frame at t=" + std::to_string(f.timestamp) + " does not match geometry");
      if (i > 0 && cadence_min > 0) {
        const auto dt = f.timestamp - frames[i - 1].timestamp;
        if (dt != cadence_min) {
          throw Error("cadence violation in " + std::string(to_string(channel)) + ": t=" +
                      std::to_string(frames[i - 1].timestamp) + " -> t=" +
                      std::to_string(f.timestamp) + " (expected step " +
                      std::to_string(cadence_min) + " min)");
        }
      }
    }
  }
};

}  // namespace nowcast
