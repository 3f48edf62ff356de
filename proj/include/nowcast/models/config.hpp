#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "nowcast/error.hpp"
#include "nowcast/nn/tensor.hpp"

namespace nowcast::models {

enum class ModelKind { unet, convlstm, svglp };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::unet: return "unet";
    case ModelKind::convlstm: return "convlstm";
    case ModelKind::svglp: return "svglp";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "unet") return ModelKind::unet;
  if (s == "convlstm") return ModelKind::convlstm;
  if (s == "svglp") return ModelKind::svglp;
  throw UsageError("unknown model '" + std::string(s) + "' (expected unet, convlstm or svglp)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::unet;
  int in_frames = 6;
  int out_frames = 6;
  int frame_channels = 5;   // per frame: precipitation + one-hot temperature profile
  int static_channels = 1;  // relief
  double base_width = 1.0;  // 1.0 = full-size filter counts
  int spatial = 256;
  // SVG-LP sizes at base_width 1; 0 means "full size scaled by base_width".
  int h_dim = 0;
  int g_dim = 0;
  int z_dim = 0;
  int lstm_cells = 0;
  double kl_weight = 1e-4;
  bool deterministic_latent = false;  // SVG-LP: use the latent mean instead of sampling
  std::uint64_t seed = 1;

  /// Full-size filter count scaled by base_width, at least 1.
  int width(int full) const { return std::max(1, static_cast<int>(std::lround(full * base_width))); }
  int h() const { return h_dim > 0 ? h_dim : width(512); }
  int g() const { return g_dim > 0 ? g_dim : width(512); }
  int z() const { return z_dim > 0 ? z_dim : width(256); }
  int cells() const { return lstm_cells > 0 ? lstm_cells : width(256); }

  void validate() const {
    detail::require_config(spatial >= 16 && spatial % 16 == 0,
                           "spatial size must be a positive multiple of 16, got " + std::to_string(spatial));
    detail::require_config(in_frames >= 1 && out_frames >= 1, "frame counts must be positive");
    detail::require_config(frame_channels >= 1 && static_channels >= 0, "bad channel counts");
    detail::require_config(base_width > 0.0, "base_width must be positive");
    detail::require_config(kl_weight >= 0.0, "kl_weight must be non-negative");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"in_frames", c.in_frames},
          {"out_frames", c.out_frames},
          {"frame_channels", c.frame_channels},
          {"static_channels", c.static_channels},
          {"base_width", c.base_width},
          {"spatial", c.spatial},
          {"h_dim", c.h_dim},
          {"g_dim", c.g_dim},
          {"z_dim", c.z_dim},
          {"lstm_cells", c.lstm_cells},
          {"kl_weight", c.kl_weight},
          {"deterministic_latent", c.deterministic_latent},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.in_frames = j.at("in_frames").get<int>();
  c.out_frames = j.at("out_frames").get<int>();
  c.frame_channels = j.at("frame_channels").get<int>();
  c.static_channels = j.at("static_channels").get<int>();
  c.base_width = j.at("base_width").get<double>();
  c.spatial = j.at("spatial").get<int>();
  c.h_dim = j.at("h_dim").get<int>();
  c.g_dim = j.at("g_dim").get<int>();
  c.z_dim = j.at("z_dim").get<int>();
  c.lstm_cells = j.at("lstm_cells").get<int>();
  c.kl_weight = j.at("kl_weight").get<double>();
  c.deterministic_latent = j.at("deterministic_latent").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

/// Model inputs and targets in transformed units. Channel 0 of each frame is precipitation.
struct Batch {
  nn::Tensor past;     // (N, in_frames, C, S, S)
  nn::Tensor future;   // (N, out_frames, C, S, S); only needed for training and scoring
  nn::Tensor statics;  // (N, Cs, S, S)

  int size() const { return past.dim(0); }

  /// Precipitation channel of the future frames: (N, out_frames, S, S).
  nn::Tensor target() const {
    const int N = future.dim(0), T = future.dim(1), C = future.dim(2), S = future.dim(3);
    nn::Tensor out({N, T, S, S});
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    for (int n = 0; n < N; ++n) {
      for (int t = 0; t < T; ++t) {
        const float* src = future.ptr() + ((static_cast<std::size_t>(n) * T + t) * C) * plane;
        std::copy_n(src, plane, out.ptr() + (static_cast<std::size_t>(n) * T + t) * plane);
      }
    }
    return out;
  }

  void check(const ModelConfig& cfg, bool need_future) const {
    const nn::Shape want_past{past.empty() ? 0 : past.dim(0), cfg.in_frames, cfg.frame_channels, cfg.spatial,
                              cfg.spatial};
    if (past.shape != want_past) {
      throw Error("batch input has shape " + nn::to_string(past.shape) + ", model expects " + nn::to_string(want_past));
    }
    const nn::Shape want_static{past.dim(0), cfg.static_channels, cfg.spatial, cfg.spatial};
    if (statics.shape != want_static) {
      throw Error("batch statics have shape " + nn::to_string(statics.shape) + ", model expects " +
                  nn::to_string(want_static));
    }
    if (need_future) {
      const nn::Shape want_future{past.dim(0), cfg.out_frames, cfg.frame_channels, cfg.spatial, cfg.spatial};
      if (future.shape != want_future) {
        throw Error("batch targets have shape " + nn::to_string(future.shape) + ", model expects " +
                    nn::to_string(want_future));
      }
    }
  }
};

}  // namespace nowcast::models
