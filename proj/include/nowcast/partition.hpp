#pragma once

// Block-sequence split: the frame stream is cut into sequences of `blocks_per_sequence` blocks of
// `block_size` frames; inside each sequence the blocks are randomly given train/val/test roles.
// Model samples are sliding windows that never leave their block.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/grid_store.hpp"

namespace nowcast::partition {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

inline Split parse_split(std::string_view name) {
  for (auto s : {Split::train, Split::val, Split::test}) {
    if (to_string(s) == name) return s;
  }
  throw UsageError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

inline constexpr int kBlocksPerSequence = 6;

struct SplitPlan {
  int block_size = 47;
  int total_frames = 0;
  int discarded = 0;
  std::uint64_t seed = 0;
  std::vector<std::array<Split, kBlocksPerSequence>> assignment;

  int n_sequences() const { return static_cast<int>(assignment.size()); }
  int sequence_frames() const { return block_size * kBlocksPerSequence; }
  int used_frames() const { return n_sequences() * sequence_frames(); }

  /// Global block id = sequence * 6 + position; first frame index of that block.
  int block_start(int block_id) const { return block_id * block_size; }
  Split role(int block_id) const {
    return assignment.at(static_cast<std::size_t>(block_id / kBlocksPerSequence))
        .at(static_cast<std::size_t>(block_id % kBlocksPerSequence));
  }

  /// Sorted frame indices belonging to `split`.
  std::vector<int> frames(Split split) const {
    std::vector<int> out;
    for (int b = 0; b < n_sequences() * kBlocksPerSequence; ++b) {
      if (role(b) != split) continue;
      for (int i = 0; i < block_size; ++i) out.push_back(block_start(b) + i);
    }
    return out;
  }

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

struct WindowConfig {
  int s_in = 6;
  int s_out = 6;
  int stride = 1;

  int length() const { return s_in + s_out; }
};

struct WindowSample {
  int start = 0;  // frame index of the first input frame
  int s_in = 6;
  int s_out = 6;
  int block_id = 0;
  Split split = Split::train;

  std::vector<int> input_frames() const {
    std::vector<int> out;
    for (int i = 0; i < s_in; ++i) out.push_back(start + i);
    return out;
  }
  std::vector<int> target_frames() const {
    std::vector<int> out;
    for (int i = 0; i < s_out; ++i) out.push_back(start + s_in + i);
    return out;
  }
  EpochMinutes timestamp(int frame, EpochMinutes t0, std::int64_t cadence = 15) const {
    return t0 + cadence * frame;
  }
  /// Timestamp of the last observed frame; forecasts are issued from it.
  EpochMinutes issue_time(EpochMinutes t0, std::int64_t cadence = 15) const {
    return t0 + cadence * (start + s_in - 1);
  }

  friend bool operator==(const WindowSample&, const WindowSample&) = default;
};

namespace detail_partition {

/// Uniform integer in [0, n) by rejection; independent of the standard library's distributions.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
  std::uint64_t x = 0;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace detail_partition

inline SplitPlan build_split(int total_frames, int block_size, std::uint64_t seed) {
  detail::require_config(block_size >= 1, "block size must be positive");
  const int per_sequence = block_size * kBlocksPerSequence;
  if (total_frames < per_sequence) {
    throw UsageError("need at least " + std::to_string(per_sequence) + " frames for one block sequence (" +
                     std::to_string(kBlocksPerSequence) + " x " + std::to_string(block_size) + "), got " +
                     std::to_string(total_frames));
  }
  SplitPlan plan;
  plan.block_size = block_size;
  plan.total_frames = total_frames;
  plan.seed = seed;
  const int n = total_frames / per_sequence;
  plan.discarded = total_frames - n * per_sequence;

  std::mt19937_64 rng(seed);
  for (int s = 0; s < n; ++s) {
    std::array<Split, kBlocksPerSequence> roles{Split::train, Split::train, Split::train,
                                                Split::train, Split::val,   Split::test};
    for (std::size_t i = roles.size() - 1; i > 0; --i) {
      std::swap(roles[i], roles[detail_partition::bounded(rng, i + 1)]);
    }
    plan.assignment.push_back(roles);
  }
  return plan;
}

inline std::vector<WindowSample> enumerate_windows(const SplitPlan& plan, Split split,
                                                   const WindowConfig& cfg = {}) {
  detail::require_config(cfg.s_in >= 1 && cfg.s_out >= 1, "window sizes must be positive");
  detail::require_config(cfg.stride >= 1, "window stride must be positive");
  std::vector<WindowSample> out;
  const int len = cfg.length();
  for (int b = 0; b < plan.n_sequences() * kBlocksPerSequence; ++b) {
    if (plan.role(b) != split) continue;
    const int first = plan.block_start(b);
    for (int s = first; s + len <= first + plan.block_size; s += cfg.stride) {
      out.push_back({s, cfg.s_in, cfg.s_out, b, split});
    }
  }
  return out;
}

inline nlohmann::json to_json(const SplitPlan& plan) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& roles : plan.assignment) {
    nlohmann::json r = nlohmann::json::array();
    for (auto s : roles) r.push_back(std::string(to_string(s)));
    seqs.push_back(r);
  }
  return {{"block_size", plan.block_size},
          {"blocks_per_sequence", kBlocksPerSequence},
          {"total_frames", plan.total_frames},
          {"discarded", plan.discarded},
          {"seed", plan.seed},
          {"assignment", seqs}};
}

inline SplitPlan plan_from_json(const nlohmann::json& j) {
  SplitPlan plan;
  plan.block_size = j.at("block_size").get<int>();
  plan.total_frames = j.at("total_frames").get<int>();
  plan.discarded = j.at("discarded").get<int>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  if (j.at("blocks_per_sequence").get<int>() != kBlocksPerSequence) {
    throw Error("split plan uses an unsupported blocks_per_sequence");
  }
  for (const auto& seq : j.at("assignment")) {
    std::array<Split, kBlocksPerSequence> roles{};
    detail::require(seq.size() == kBlocksPerSequence, "split plan sequence has wrong block count");
    int n_train = 0, n_val = 0, n_test = 0;
    for (std::size_t i = 0; i < roles.size(); ++i) {
      roles[i] = parse_split(seq[i].get<std::string>());
      n_train += roles[i] == Split::train;
      n_val += roles[i] == Split::val;
      n_test += roles[i] == Split::test;
    }
    detail::require(n_train == 4 && n_val == 1 && n_test == 1,
                    "split plan sequence must hold 4 train, 1 val and 1 test block");
    plan.assignment.push_back(roles);
  }
  detail::require(plan.used_frames() + plan.discarded == plan.total_frames,
                  "split plan frame counts are inconsistent");
  return plan;
}

inline void save_plan(const SplitPlan& plan, const std::filesystem::path& path) {
  io::write_text_atomic(path, to_json(plan).dump(1) + "\n");
}

inline SplitPlan load_plan(const std::filesystem::path& path) {
  try {
    return plan_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed split plan " + path.string() + ": " + e.what());
  }
}

}  // namespace nowcast::partition
