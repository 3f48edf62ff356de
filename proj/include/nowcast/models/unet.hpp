#pragma once

#include <array>
#include <vector>

#include "nowcast/models/model.hpp"

namespace nowcast::models {

/// Contracting path; each of the first `pooled` blocks is followed by a 2x2 max pool.
struct UnetEncoder {
  std::vector<ConvBlock> blocks;

  static UnetEncoder make(nn::ParameterStore& store, const ModelConfig& cfg, int in_channels, int depth) {
    UnetEncoder e;
    int in = in_channels;
    for (int i = 0; i < depth; ++i) {
      const int out = cfg.width(kEncoderWidths[i]);
      e.blocks.push_back(ConvBlock::make(store, "enc" + std::to_string(i), in, out, kEncoderConvs[i]));
      in = out;
    }
    return e;
  }

  /// Returns the pre-pool output of every block; `bottom` receives the last (pooled if requested) map.
  std::vector<nn::Var> operator()(nn::Var x, bool training, bool pool_last, nn::Var& bottom) const {
    std::vector<nn::Var> skips;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      x = blocks[i](x, training);
      skips.push_back(x);
      if (i + 1 < blocks.size() || pool_last) x = nn::max_pool2(x);
    }
    bottom = x;
    return skips;
  }
};

/// Expanding path: upsample, concatenate the matching skip, convolve.
struct UnetDecoder {
  std::vector<ConvBlock> blocks;

  /// `skip_channels` lists the encoder outputs from the finest to the coarsest level.
  static UnetDecoder make(nn::ParameterStore& store, const ModelConfig& cfg, int bottom_channels,
                          const std::array<int, 4>& skip_channels) {
    UnetDecoder d;
    int in = bottom_channels;
    for (int i = 0; i < 4; ++i) {
      const int out = cfg.width(kDecoderWidths[i]);
      d.blocks.push_back(ConvBlock::make(store, "dec" + std::to_string(i), in + skip_channels[3 - i], out,
                                         kDecoderConvs[i]));
      in = out;
    }
    return d;
  }

  nn::Var operator()(nn::Var x, const std::vector<nn::Var>& skips, bool training) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      x = nn::concat({nn::upsample2(x), skips[3 - i]}, 1);
      x = blocks[i](x, training);
    }
    return x;
  }
};

/// Direct multi-output U-net: all input frames and statics stacked on channels, all lead times at once.
class Unet final : public Model {
 public:
  explicit Unet(const ModelConfig& cfg) : Model(cfg) {
    const int in = cfg_.in_frames * cfg_.frame_channels + cfg_.static_channels;
    encoder_ = UnetEncoder::make(store_, cfg_, in, 5);
    std::array<int, 4> skips{};
    for (int i = 0; i < 4; ++i) skips[i] = cfg_.width(kEncoderWidths[i]);
    decoder_ = UnetDecoder::make(store_, cfg_, cfg_.width(kEncoderWidths[4]), skips);
    head_ = nn::Conv2d::make(store_, "head", cfg_.width(kDecoderWidths[3]), cfg_.out_frames, 1, 1, 0, true, 1.0);
  }

  Output forward(const Batch& batch, Phase phase) override {
    batch.check(cfg_, phase == Phase::train);
    const bool training = phase == Phase::train;
    const int N = batch.size(), S = cfg_.spatial;
    nn::Tensor past = batch.past.reshaped({N, cfg_.in_frames * cfg_.frame_channels, S, S});
    nn::Var x = nn::constant(std::move(past));
    if (cfg_.static_channels > 0) x = nn::concat({x, nn::constant(batch.statics)}, 1);
    nn::Var bottom;
    const auto skips = encoder_(x, training, false, bottom);
    const nn::Var y = decoder_(bottom, skips, training);
    return {nn::check_finite(head_(y), "unet output"), nullptr};
  }

 private:
  UnetEncoder encoder_;
  UnetDecoder decoder_;
  nn::Conv2d head_;
};

}  // namespace nowcast::models
