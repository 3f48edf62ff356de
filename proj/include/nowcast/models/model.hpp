#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nowcast/models/config.hpp"
#include "nowcast/nn/layers.hpp"

namespace nowcast::models {

enum class Phase { train, eval };

struct Output {
  nn::Var prediction;  // (N, out_frames, S, S), transformed precipitation
  nn::Var aux_loss;    // extra scalar objective (SVG-LP divergence), may be null
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), store_(cfg.seed) { cfg_.validate(); }
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  virtual Output forward(const Batch& batch, Phase phase) = 0;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

 protected:
  ModelConfig cfg_;
  nn::ParameterStore store_;
};

/// Repeated 3x3 convolution (no bias) + batch norm + leaky rectifier.
struct ConvBlock {
  std::string name;
  std::vector<nn::Conv2d> convs;
  std::vector<nn::BatchNorm> norms;

  static ConvBlock make(nn::ParameterStore& store, const std::string& name, int in, int out, int count) {
    ConvBlock b;
    b.name = name;
    for (int i = 0; i < count; ++i) {
      const std::string layer = name + "." + std::to_string(i);
      b.convs.push_back(nn::Conv2d::make(store, layer + ".conv", i == 0 ? in : out, out, 3, 1, 1, false));
      b.norms.push_back(nn::BatchNorm::make(store, layer + ".bn", out));
    }
    return b;
  }

  int out_channels() const { return convs.back().weight->value.dim(0); }

  nn::Var operator()(nn::Var x, bool training) const {
    for (std::size_t i = 0; i < convs.size(); ++i) x = nn::leaky_relu(norms[i](convs[i](x), training), nn::kLeakySlope);
    return nn::check_finite(x, name);
  }
};

inline constexpr int kEncoderWidths[5] = {64, 128, 256, 512, 512};
inline constexpr int kEncoderConvs[5] = {2, 2, 3, 3, 3};
inline constexpr int kDecoderWidths[4] = {256, 128, 64, 64};
inline constexpr int kDecoderConvs[4] = {3, 3, 2, 3};

/// Frame t of a (N, T, C, S, S) tensor as a (N, C, S, S) constant.
inline nn::Tensor frame_of(const nn::Tensor& seq, int t) {
  const int N = seq.dim(0), T = seq.dim(1), C = seq.dim(2), H = seq.dim(3), W = seq.dim(4);
  nn::Tensor out({N, C, H, W});
  const std::size_t frame = static_cast<std::size_t>(C) * H * W;
  for (int n = 0; n < N; ++n) {
    std::copy_n(seq.ptr() + (static_cast<std::size_t>(n) * T + t) * frame, frame, out.ptr() + n * frame);
  }
  return out;
}

/// Stack (N, T, S, S) per-step predictions from a list of (N, 1, S, S) maps.
inline nn::Var stack_steps(const std::vector<nn::Var>& steps) { return nn::concat(steps, 1); }

}  // namespace nowcast::models
