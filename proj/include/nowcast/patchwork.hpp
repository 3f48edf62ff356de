#pragma once

// Patch extraction with ring-compressed neighbourhoods, plain crops, tiling, reassembly, and the
// full-map bilinear resize alternative.
//
// A patch of side iSize holds the tSize target block verbatim in its centre. Each of the `margin`
// one-cell rings around it summarises a band of the source image whose width starts at 1 and grows
// by `step` after every `freq` rings, so far-away context is compressed harder than near context.
// Source indices advance by the width consumed in the current ring before the width grows, which
// keeps the source bands contiguous. Cells outside the source image read as zero (no rain).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/grid_store.hpp"

namespace nowcast::patch {

struct PatchSpec {
  int isize = 256;
  int tsize = 128;
  int step = 1;
  int freq = 20;
  long origin_row = 0;  // source row of the patch's top-left corner (plain-crop convention)
  long origin_col = 0;

  int margin() const { return (isize - tsize) / 2; }

  void validate() const {
    detail::require_config(isize >= 8 && tsize >= 8, "patch sizes must be at least 8");
    detail::require_config(isize >= tsize, "input patch must not be smaller than the target patch");
    detail::require_config((isize - tsize) % 2 == 0, "iSize - tSize must be even");
    detail::require_config(step >= 0, "width increment must be non-negative");
    detail::require_config(freq >= 1, "increment frequency must be positive");
  }
};

/// Half-open rectangle in some grid's index space.
struct Rect {
  long row0 = 0;
  long col0 = 0;
  long rows = 0;
  long cols = 0;

  long row1() const { return row0 + rows; }
  long col1() const { return col0 + cols; }
  long area() const { return rows * cols; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

enum class Resample { area, nearest };

enum class Side { upper = 0, lower = 1, left = 2, right = 3 };

struct RingRecord {
  int ring = 0;          // 1..margin
  int source_width = 0;  // width of the source band consumed by this ring
  std::array<Rect, 4> source{};  // indexed by Side
  std::array<Rect, 4> target{};
  std::array<std::vector<double>, 4> resampled{};  // values written, before any later overwrite
};

/// Optional bookkeeping filled by extract_patch for verification.
struct PatchTrace {
  Grid<int> writes;  // number of writes per patch cell
  Grid<int> owner;   // 0 = centre copy, else 4 * (ring - 1) + side + 1 of the last write
  std::vector<RingRecord> rings;
};

template <typename T>
struct Patch {
  Grid<T> values;
  PatchSpec spec;
  Rect footprint;  // source rectangle actually consumed
};

/// Per-ring source band widths under the contiguous schedule; their sum is the reach per side.
inline std::vector<int> ring_widths(const PatchSpec& spec) {
  spec.validate();
  std::vector<int> widths;
  int w = 1;
  for (int k = 1; k <= spec.margin(); ++k) {
    widths.push_back(w);
    if (k % spec.freq == 0) w += spec.step;
  }
  return widths;
}

inline long reach(const PatchSpec& spec) {
  long total = 0;
  for (int w : ring_widths(spec)) total += w;
  return total;
}

namespace detail_patch {

template <typename T>
Grid<double> read_rect(const Grid<T>& src, const Rect& r) {
  Grid<double> out(static_cast<std::size_t>(r.rows), static_cast<std::size_t>(r.cols));
  for (long i = 0; i < r.rows; ++i) {
    for (long j = 0; j < r.cols; ++j) {
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          static_cast<double>(src.value_or_zero(r.row0 + i, r.col0 + j));
    }
  }
  return out;
}

/// Overlap weights for box-averaging n_in unit cells into n_out equal bins.
inline std::vector<std::vector<std::pair<std::size_t, double>>> box_weights(std::size_t n_in,
                                                                            std::size_t n_out) {
  std::vector<std::vector<std::pair<std::size_t, double>>> w(n_out);
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t j = 0; j < n_out; ++j) {
    const double lo = static_cast<double>(j) * scale;
    const double hi = static_cast<double>(j + 1) * scale;
    for (auto u = static_cast<std::size_t>(std::floor(lo)); u < n_in && static_cast<double>(u) < hi; ++u) {
      const double overlap = std::min(hi, static_cast<double>(u + 1)) - std::max(lo, static_cast<double>(u));
      if (overlap > 0.0) w[j].push_back({u, overlap / scale});
    }
  }
  return w;
}

}  // namespace detail_patch

/// Area-weighted (box) resampling; conserves the mean of the input.
inline Grid<double> area_resample(const Grid<double>& src, std::size_t rows, std::size_t cols) {
  detail::require(rows > 0 && cols > 0 && !src.empty(), "area resample needs non-empty shapes");
  const auto wr = detail_patch::box_weights(src.rows(), rows);
  const auto wc = detail_patch::box_weights(src.cols(), cols);
  Grid<double> tmp(src.rows(), cols);
  for (std::size_t i = 0; i < src.rows(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (const auto& [u, w] : wc[j]) acc += w * src(i, u);
      tmp(i, j) = acc;
    }
  }
  Grid<double> out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (const auto& [u, w] : wr[i]) acc += w * tmp(u, j);
      out(i, j) = acc;
    }
  }
  return out;
}

/// Nearest-cell resampling (bin centres); used for categorical fields.
inline Grid<double> nearest_resample(const Grid<double>& src, std::size_t rows, std::size_t cols) {
  detail::require(rows > 0 && cols > 0 && !src.empty(), "nearest resample needs non-empty shapes");
  Grid<double> out(rows, cols);
  const double sr = static_cast<double>(src.rows()) / static_cast<double>(rows);
  const double sc = static_cast<double>(src.cols()) / static_cast<double>(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto u = std::min(src.rows() - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) * sr));
    for (std::size_t j = 0; j < cols; ++j) {
      const auto v = std::min(src.cols() - 1, static_cast<std::size_t>((static_cast<double>(j) + 0.5) * sc));
      out(i, j) = src(u, v);
    }
  }
  return out;
}

template <typename T>
Patch<T> extract_patch(const Grid<T>& image, const PatchSpec& spec, Resample mode = Resample::area,
                       PatchTrace* trace = nullptr) {
  spec.validate();
  const long margin = spec.margin();
  const long t = spec.tsize;
  const auto n = static_cast<std::size_t>(spec.isize);

  Patch<T> patch{Grid<T>(n, n), spec, {}};
  if (trace) {
    trace->writes = Grid<int>(n, n, 0);
    trace->owner = Grid<int>(n, n, -1);
    trace->rings.clear();
  }

  // Source band edges (exclusive of the band still to be consumed) and patch ring edges.
  long up_src = spec.origin_row + margin;
  long down_src = spec.origin_row + margin + t;
  long left_src = spec.origin_col + margin;
  long right_src = spec.origin_col + margin + t;
  long up_p = margin, down_p = margin + t, left_p = margin, right_p = margin + t;

  for (long i = 0; i < t; ++i) {
    for (long j = 0; j < t; ++j) {
      patch.values(static_cast<std::size_t>(up_p + i), static_cast<std::size_t>(left_p + j)) =
          image.value_or_zero(up_src + i, left_src + j);
      if (trace) {
        trace->writes(static_cast<std::size_t>(up_p + i), static_cast<std::size_t>(left_p + j)) += 1;
        trace->owner(static_cast<std::size_t>(up_p + i), static_cast<std::size_t>(left_p + j)) = 0;
      }
    }
  }

  const auto widths = ring_widths(spec);
  for (long k = 1; k <= margin; ++k) {
    const long w = widths[static_cast<std::size_t>(k - 1)];
    const std::array<Rect, 4> src_rects{
        Rect{up_src - w, left_src - w, w, right_src - left_src + 2 * w},
        Rect{down_src, left_src - w, w, right_src - left_src + 2 * w},
        Rect{up_src - w, left_src - w, down_src - up_src + 2 * w, w},
        Rect{up_src - w, right_src, down_src - up_src + 2 * w, w}};
    const std::array<Rect, 4> dst_rects{
        Rect{up_p - 1, left_p - 1, 1, right_p - left_p + 2},
        Rect{down_p, left_p - 1, 1, right_p - left_p + 2},
        Rect{up_p - 1, left_p - 1, down_p - up_p + 2, 1},
        Rect{up_p - 1, right_p, down_p - up_p + 2, 1}};

    RingRecord record;
    record.ring = static_cast<int>(k);
    record.source_width = static_cast<int>(w);
    record.source = src_rects;
    record.target = dst_rects;
    for (int s = 0; s < 4; ++s) {
      const Rect& dst = dst_rects[static_cast<std::size_t>(s)];
      const auto band = detail_patch::read_rect(image, src_rects[static_cast<std::size_t>(s)]);
      const auto rows = static_cast<std::size_t>(dst.rows);
      const auto cols = static_cast<std::size_t>(dst.cols);
      const auto squeezed = mode == Resample::area ? area_resample(band, rows, cols)
                                                   : nearest_resample(band, rows, cols);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          const auto pr = static_cast<std::size_t>(dst.row0) + i;
          const auto pc = static_cast<std::size_t>(dst.col0) + j;
          patch.values(pr, pc) = static_cast<T>(squeezed(i, j));
          if (trace) {
            trace->writes(pr, pc) += 1;
            trace->owner(pr, pc) = static_cast<int>(4 * (k - 1) + s + 1);
          }
        }
      }
      if (trace) record.resampled[static_cast<std::size_t>(s)] = squeezed.storage();
    }
    if (trace) trace->rings.push_back(std::move(record));

    up_src -= w;
    down_src += w;
    left_src -= w;
    right_src += w;
    --up_p;
    ++down_p;
    --left_p;
    ++right_p;
  }
  patch.footprint = Rect{up_src, left_src, down_src - up_src, right_src - left_src};
  return patch;
}

/// Plain iSize x iSize crop at the PatchSpec origin (raw neighbourhood of `margin` cells).
template <typename T>
Patch<T> crop_patch(const Grid<T>& image, const PatchSpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(spec.isize);
  Patch<T> patch{Grid<T>(n, n), spec, Rect{spec.origin_row, spec.origin_col, spec.isize, spec.isize}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      patch.values(i, j) = image.value_or_zero(spec.origin_row + static_cast<long>(i),
                                               spec.origin_col + static_cast<long>(j));
    }
  }
  return patch;
}

/// Position of one target tile in the full map (may overhang the map edge).
struct TileSlot {
  int tile_row = 0;
  int tile_col = 0;
  Rect target;
  PatchSpec spec;  // origin set so the patch centre is the target tile
};

/// Non-overlapping tsize x tsize cover of a rows x cols map, row-major.
inline std::vector<TileSlot> tile_layout(std::size_t rows, std::size_t cols, const PatchSpec& spec) {
  spec.validate();
  const long t = spec.tsize;
  const long n_r = (static_cast<long>(rows) + t - 1) / t;
  const long n_c = (static_cast<long>(cols) + t - 1) / t;
  std::vector<TileSlot> out;
  for (long i = 0; i < n_r; ++i) {
    for (long j = 0; j < n_c; ++j) {
      TileSlot slot;
      slot.tile_row = static_cast<int>(i);
      slot.tile_col = static_cast<int>(j);
      slot.target = Rect{i * t, j * t, t, t};
      slot.spec = spec;
      slot.spec.origin_row = i * t - spec.margin();
      slot.spec.origin_col = j * t - spec.margin();
      out.push_back(slot);
    }
  }
  return out;
}

template <typename T>
struct Tile {
  Patch<T> patch;
  TileSlot slot;
};

enum class PatchMode { ring, crop };

template <typename T>
std::vector<Tile<T>> tile_map(const Grid<T>& image, const PatchSpec& spec, PatchMode mode = PatchMode::ring,
                              Resample resample = Resample::area) {
  std::vector<Tile<T>> out;
  for (const auto& slot : tile_layout(image.rows(), image.cols(), spec)) {
    auto p = mode == PatchMode::ring ? extract_patch(image, slot.spec, resample) : crop_patch(image, slot.spec);
    out.push_back({std::move(p), slot});
  }
  return out;
}

/// Centre tsize x tsize block of a patch-sized grid.
template <typename T>
Grid<T> center_block(const Grid<T>& patch_grid, int isize, int tsize) {
  detail::require(patch_grid.rows() == static_cast<std::size_t>(isize) &&
                      patch_grid.cols() == static_cast<std::size_t>(isize),
                  "centre_block: grid is not iSize x iSize");
  const auto m = static_cast<std::size_t>((isize - tsize) / 2);
  const auto t = static_cast<std::size_t>(tsize);
  Grid<T> out(t, t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) out(i, j) = patch_grid(m + i, m + j);
  }
  return out;
}

/// Paste per-tile target predictions into a rows x cols map; overhang beyond the map is dropped.
/// Every map cell must be covered exactly once.
template <typename T>
Grid<T> reassemble(const std::vector<std::pair<Rect, Grid<T>>>& tiles, std::size_t rows, std::size_t cols) {
  Grid<T> out(rows, cols);
  Grid<int> hits(rows, cols, 0);
  for (const auto& [rect, values] : tiles) {
    detail::require(values.rows() == static_cast<std::size_t>(rect.rows) &&
                        values.cols() == static_cast<std::size_t>(rect.cols),
                    "tile prediction does not match its target rectangle");
    for (long i = 0; i < rect.rows; ++i) {
      const long r = rect.row0 + i;
      if (r < 0 || r >= static_cast<long>(rows)) continue;
      for (long j = 0; j < rect.cols; ++j) {
        const long c = rect.col0 + j;
        if (c < 0 || c >= static_cast<long>(cols)) continue;
        const auto rr = static_cast<std::size_t>(r);
        const auto cc = static_cast<std::size_t>(c);
        if (hits(rr, cc)++ > 0) {
          throw Error("overlapping tiles at (" + std::to_string(r) + ", " + std::to_string(c) + ")");
        }
        out(rr, cc) = values(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (hits(r, c) == 0) {
        throw Error("missing tile covering (" + std::to_string(r) + ", " + std::to_string(c) + ")");
      }
    }
  }
  return out;
}

/// Bilinear resize with corner-aligned sampling; exact on affine fields and the identity for
/// equal shapes.
template <typename T>
Grid<T> resize_full_map(const Grid<T>& image, std::size_t rows, std::size_t cols) {
  detail::require(!image.empty() && rows > 0 && cols > 0, "resize needs non-empty shapes");
  Grid<T> out(rows, cols);
  const double sr = rows > 1 ? static_cast<double>(image.rows() - 1) / static_cast<double>(rows - 1) : 0.0;
  const double sc = cols > 1 ? static_cast<double>(image.cols() - 1) / static_cast<double>(cols - 1) : 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out(i, j) = static_cast<T>(bilinear_sample(image, static_cast<double>(i) * sr, static_cast<double>(j) * sc));
    }
  }
  return out;
}

/// Nearest-neighbour resize on the same corner-aligned lattice; for categorical fields.
template <typename T>
Grid<T> resize_nearest(const Grid<T>& image, std::size_t rows, std::size_t cols) {
  detail::require(!image.empty() && rows > 0 && cols > 0, "resize needs non-empty shapes");
  Grid<T> out(rows, cols);
  const double sr = rows > 1 ? static_cast<double>(image.rows() - 1) / static_cast<double>(rows - 1) : 0.0;
  const double sc = cols > 1 ? static_cast<double>(image.cols() - 1) / static_cast<double>(cols - 1) : 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto u = static_cast<std::size_t>(std::lround(static_cast<double>(i) * sr));
    for (std::size_t j = 0; j < cols; ++j) {
      out(i, j) = image(u, static_cast<std::size_t>(std::lround(static_cast<double>(j) * sc)));
    }
  }
  return out;
}

}  // namespace nowcast::patch
