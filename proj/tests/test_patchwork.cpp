#include <gtest/gtest.h>

#include <random>

#include "nowcast/patchwork.hpp"
#include "test_helpers.hpp"

using namespace nowcast;
using namespace nowcast::patch;
using nowcast::testing::random_grid;

namespace {

PatchSpec small_spec(long origin_row = 0, long origin_col = 0) {
  PatchSpec s;
  s.isize = 32;
  s.tsize = 16;
  s.step = 1;
  s.freq = 2;
  s.origin_row = origin_row;
  s.origin_col = origin_col;
  return s;
}

// Literal index arithmetic of the ring loop: walk k = 1..margin, consume the current width, then
// grow it after every freq-th ring. Returns how far the source indices moved away from the target.
long simulate_reach(int isize, int tsize, int step, int freq) {
  const int margin = (isize - tsize) / 2;
  long up = 0;  // source row just above the consumed region, relative to the target's top row
  int w = 1;
  for (int k = 1; k <= margin; ++k) {
    up -= w;
    if (k % freq == 0) w += step;
  }
  return -up;
}

double mean_of(const Grid<double>& g) {
  double s = 0.0;
  for (double v : g.values()) s += v;
  return s / static_cast<double>(g.size());
}

}  // namespace

TEST(Reach, DefaultsGive136CellsPerSide) {
  EXPECT_EQ(simulate_reach(256, 128, 1, 20), 20 * 1 + 20 * 2 + 20 * 3 + 4 * 4);
  EXPECT_EQ(simulate_reach(256, 128, 1, 20), 136);
  EXPECT_EQ(reach(PatchSpec{}), 136);
}

TEST(Reach, MatchesSimulationForManySpecs) {
  for (int isize : {16, 32, 40, 64, 256}) {
    for (int tsize : {8, 16, 32}) {
      if (tsize > isize || (isize - tsize) % 2) continue;
      for (int step : {0, 1, 2, 3}) {
        for (int freq : {1, 2, 5, 20}) {
          PatchSpec s;
          s.isize = isize;
          s.tsize = tsize;
          s.step = step;
          s.freq = freq;
          EXPECT_EQ(reach(s), simulate_reach(isize, tsize, step, freq));
          const auto w = ring_widths(s);
          EXPECT_TRUE(std::is_sorted(w.begin(), w.end()));
        }
      }
    }
  }
}

TEST(ExtractPatch, FootprintSpansTargetPlusTwiceTheReach) {
  const Field image(600, 600, 1.0f);
  PatchSpec s;
  s.origin_row = 100;
  s.origin_col = 150;
  const auto p = extract_patch(image, s);
  EXPECT_EQ(p.footprint, (Rect{100 + 64 - 136, 150 + 64 - 136, 128 + 2 * 136, 128 + 2 * 136}));
}

TEST(ExtractPatch, CentreIsBitExactForRandomOrigins) {
  std::mt19937_64 rng(1);
  const auto image = random_grid(rng, 300, 340, 0.0, 50.0);
  for (int trial = 0; trial < 10; ++trial) {
    PatchSpec s;
    s.origin_row = static_cast<long>(rng() % 200) - 60;
    s.origin_col = static_cast<long>(rng() % 250) - 60;
    const auto p = extract_patch(image, s);
    for (long i = 64; i < 192; ++i) {
      for (long j = 64; j < 192; ++j) {
        ASSERT_EQ(p.values(static_cast<std::size_t>(i), static_cast<std::size_t>(j)),
                  image.value_or_zero(s.origin_row + i, s.origin_col + j));
      }
    }
  }
}

TEST(ExtractPatch, ConstantSourceGivesConstantPatch) {
  const Field image(80, 80, 3.25f);
  const auto s = small_spec(12, 12);
  ASSERT_EQ(reach(s), 20);
  const auto p = extract_patch(image, s);
  for (float v : p.values.values()) EXPECT_FLOAT_EQ(v, 3.25f);
}

TEST(ExtractPatch, EveryCellEndsWithExactlyOneSurvivingWrite) {
  std::mt19937_64 rng(2);
  const auto image = random_grid(rng, 90, 90);
  PatchTrace trace;
  const auto s = small_spec(5, 9);
  extract_patch(image, s, Resample::area, &trace);
  const int n = s.isize;
  const int m = s.margin();
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const auto rr = static_cast<std::size_t>(r), cc = static_cast<std::size_t>(c);
      const int ring = std::max({m - r, r - (n - 1 - m), m - c, c - (n - 1 - m), 0});
      const bool corner = ring > 0 && (r == m - ring || r == n - 1 - m + ring) &&
                          (c == m - ring || c == n - 1 - m + ring);
      ASSERT_GE(trace.owner(rr, cc), 0) << r << "," << c;
      if (ring == 0) {
        ASSERT_EQ(trace.writes(rr, cc), 1);
        ASSERT_EQ(trace.owner(rr, cc), 0);
      } else if (corner) {
        // Written by the upper/lower strip first, then overwritten by the left/right strip.
        ASSERT_EQ(trace.writes(rr, cc), 2);
        const int side = (trace.owner(rr, cc) - 1) % 4;
        ASSERT_EQ((trace.owner(rr, cc) - 1) / 4, ring - 1);
        ASSERT_EQ(side, c < m ? static_cast<int>(Side::left) : static_cast<int>(Side::right));
      } else {
        ASSERT_EQ(trace.writes(rr, cc), 1) << r << "," << c;
        ASSERT_EQ((trace.owner(rr, cc) - 1) / 4, ring - 1);
      }
    }
  }
}

TEST(ExtractPatch, RingStripsConserveSourceMeans) {
  std::mt19937_64 rng(3);
  const auto image = random_grid<double>(rng, 420, 420, 0.0, 80.0);
  PatchTrace trace;
  PatchSpec s;
  s.origin_row = 10;
  s.origin_col = 20;
  extract_patch(image, s, Resample::area, &trace);
  ASSERT_EQ(trace.rings.size(), 64u);
  for (const auto& ring : trace.rings) {
    for (int side = 0; side < 4; ++side) {
      const auto& src = ring.source[static_cast<std::size_t>(side)];
      double sum = 0.0;
      for (long i = 0; i < src.rows; ++i) {
        for (long j = 0; j < src.cols; ++j) sum += image.value_or_zero(src.row0 + i, src.col0 + j);
      }
      const double src_mean = sum / static_cast<double>(src.area());
      const auto& vals = ring.resampled[static_cast<std::size_t>(side)];
      double dst = 0.0;
      for (double v : vals) dst += v;
      EXPECT_NEAR(dst / static_cast<double>(vals.size()), src_mean, 1e-5)
          << "ring " << ring.ring << " side " << side;
      EXPECT_EQ(std::min(src.rows, src.cols), ring.source_width);
    }
  }
}

TEST(ExtractPatch, SourceBandsAreContiguous) {
  const Field image(600, 600, 0.0f);
  PatchTrace trace;
  PatchSpec s;
  s.origin_row = 100;
  s.origin_col = 100;
  extract_patch(image, s, Resample::area, &trace);
  long edge = 100 + 64;
  for (const auto& ring : trace.rings) {
    const auto& up = ring.source[static_cast<std::size_t>(Side::upper)];
    EXPECT_EQ(up.row1(), edge) << "gap or overlap before ring " << ring.ring;
    edge = up.row0;
  }
  EXPECT_EQ(100 + 64 - edge, 136);
}

TEST(ExtractPatch, OutsideTheMapReadsAsZero) {
  const Field image(16, 16, 5.0f);
  PatchSpec s = small_spec(-8, -8);  // target exactly covers the 16 x 16 map
  const auto p = extract_patch(image, s);
  for (int k = 0; k < 8; ++k) EXPECT_EQ(p.values(static_cast<std::size_t>(k), 3), 0.0f);
  EXPECT_EQ(p.values(8, 8), 5.0f);
}

TEST(ExtractPatch, NearestModeKeepsCategories) {
  std::mt19937_64 rng(4);
  Field codes(90, 90);
  for (auto& v : codes.values()) v = static_cast<float>(rng() % 4);
  const auto p = extract_patch(codes, small_spec(20, 20), Resample::nearest);
  for (float v : p.values.values()) {
    EXPECT_EQ(v, std::round(v));
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 3.0f);
  }
}

TEST(ExtractPatch, InvalidSpecsAreRejected) {
  const Field image(10, 10);
  PatchSpec s;
  s.isize = 33;
  s.tsize = 16;
  EXPECT_THROW(extract_patch(image, s), UsageError);
  s.isize = 16;
  s.tsize = 32;
  EXPECT_THROW(extract_patch(image, s), UsageError);
  s.isize = 4;
  s.tsize = 4;
  EXPECT_THROW(extract_patch(image, s), UsageError);
}

TEST(AreaResample, ConservesMeanOnRandomShapes) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_grid<double>(rng, 1 + rng() % 20, 1 + rng() % 20, -3.0, 9.0);
    const auto out = area_resample(g, 1 + rng() % 7, 1 + rng() % 25);
    EXPECT_NEAR(mean_of(out), mean_of(g), 1e-10);
  }
}

TEST(TileLayout, ReferenceMapNeeds117Tiles) {
  PatchSpec s;
  const auto tiles = tile_layout(1050, 1650, s);
  EXPECT_EQ(tiles.size(), 9u * 13u);
  EXPECT_EQ(tiles.size(), 117u);
  EXPECT_EQ(tile_layout(128, 128, s).size(), 1u);
}

TEST(TileMap, RoundTripThroughReassemble) {
  std::mt19937_64 rng(6);
  const auto image = random_grid(rng, 50, 70, 0.0, 10.0);
  for (PatchMode mode : {PatchMode::ring, PatchMode::crop}) {
    const auto s = small_spec();
    const auto tiles = tile_map(image, s, mode);
    EXPECT_EQ(tiles.size(), 4u * 5u);
    std::vector<std::pair<Rect, Field>> preds;
    for (const auto& t : tiles) preds.push_back({t.slot.target, center_block(t.patch.values, s.isize, s.tsize)});
    EXPECT_EQ(reassemble(preds, image.rows(), image.cols()), image);
  }
}

TEST(TileMap, CropAndRingAgreeOnTheCentre) {
  std::mt19937_64 rng(7);
  const auto image = random_grid(rng, 40, 40);
  const auto s = small_spec(3, 4);
  const auto ring = extract_patch(image, s);
  const auto crop = crop_patch(image, s);
  EXPECT_EQ(center_block(ring.values, 32, 16), center_block(crop.values, 32, 16));
  // The crop's first margin ring is the raw neighbour row.
  EXPECT_EQ(crop.values(7, 10), image(3 + 7, 4 + 10));
}

TEST(Reassemble, DetectsOverlapsAndHoles) {
  const Field block(2, 2, 1.0f);
  std::vector<std::pair<Rect, Field>> tiles{{Rect{0, 0, 2, 2}, block}, {Rect{0, 1, 2, 2}, block}};
  EXPECT_THROW(reassemble(tiles, 2, 3), Error);
  tiles.pop_back();
  EXPECT_THROW(reassemble(tiles, 2, 3), Error);
  EXPECT_EQ(reassemble(tiles, 2, 2), block);
}

TEST(ResizeFullMap, ConstantRampAndIdentity) {
  const Field c(105, 165, 2.5f);
  const auto resized = resize_full_map(c, 64, 64);
  for (float v : resized.values()) EXPECT_FLOAT_EQ(v, 2.5f);

  Grid<double> ramp(105, 165);
  for (std::size_t i = 0; i < ramp.rows(); ++i) {
    for (std::size_t j = 0; j < ramp.cols(); ++j) ramp(i, j) = 3.0 + 0.5 * i - 0.25 * j;
  }
  const auto small = resize_full_map(ramp, 64, 64);
  for (std::size_t i = 0; i < 64; ++i) {
    for (std::size_t j = 0; j < 64; ++j) {
      const double r = i * 104.0 / 63.0, cc = j * 164.0 / 63.0;
      EXPECT_NEAR(small(i, j), 3.0 + 0.5 * r - 0.25 * cc, 1e-9);
    }
  }
  std::mt19937_64 rng(8);
  const auto g = random_grid(rng, 64, 64);
  const auto same = resize_full_map(g, 64, 64);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(same.values()[i], g.values()[i], 1e-6);
}

TEST(ResizeNearest, KeepsCodes) {
  Field codes(20, 30);
  for (std::size_t i = 0; i < codes.size(); ++i) codes.values()[i] = static_cast<float>(i % 4);
  const auto out = resize_nearest(codes, 7, 11);
  for (float v : out.values()) EXPECT_EQ(v, std::round(v));
  EXPECT_EQ(out(0, 0), codes(0, 0));
  EXPECT_EQ(out(6, 10), codes(19, 29));
}
