#pragma once

#include <array>
#include <vector>

#include "nowcast/models/model.hpp"

namespace nowcast::models {

/// Encoder-forecaster ConvLSTM. Three strided encoder layers summarise the input sequence; their final
/// states initialise three forecaster layers that unroll over the output lead times without external input.
class ConvLstm final : public Model {
 public:
  explicit ConvLstm(const ModelConfig& cfg) : Model(cfg) {
    const int in = cfg_.frame_channels + cfg_.static_channels;
    const int d1 = cfg_.width(16), h1 = cfg_.width(64), h2 = cfg_.width(192), h3 = cfg_.width(192);
    down1_ = nn::Conv2d::make(store_, "down1", in, d1, 4, 2, 1, true);
    enc1_ = nn::ConvLstmCell::make(store_, "enc1", d1, h1);
    down2_ = nn::Conv2d::make(store_, "down2", h1, h1, 4, 2, 1, true);
    enc2_ = nn::ConvLstmCell::make(store_, "enc2", h1, h2);
    down3_ = nn::Conv2d::make(store_, "down3", h2, h2, 4, 2, 1, true);
    enc3_ = nn::ConvLstmCell::make(store_, "enc3", h2, h3);

    dec1_ = nn::ConvLstmCell::make(store_, "dec1", 0, h3);
    up1_ = nn::ConvTranspose2d::make(store_, "up1", h3, h3, 4, 2, 1, true);
    dec2_ = nn::ConvLstmCell::make(store_, "dec2", h3, h2);
    up2_ = nn::ConvTranspose2d::make(store_, "up2", h2, h2, 4, 2, 1, true);
    dec3_ = nn::ConvLstmCell::make(store_, "dec3", h2, h1);
    up3_ = nn::ConvTranspose2d::make(store_, "up3", h1, h1, 4, 2, 1, true);
    refine_ = nn::Conv2d::make(store_, "refine", h1, h1, 3, 1, 1, true);
    head_ = nn::Conv2d::make(store_, "head", h1, 1, 1, 1, 0, true, 1.0);
  }

  Output forward(const Batch& batch, Phase phase) override {
    batch.check(cfg_, phase == Phase::train);
    const int N = batch.size(), S = cfg_.spatial;
    const nn::Var statics = cfg_.static_channels > 0 ? nn::constant(batch.statics) : nullptr;

    std::array<nn::LstmState, 3> enc{enc1_.zero_state(N, S / 2, S / 2), enc2_.zero_state(N, S / 4, S / 4),
                                     enc3_.zero_state(N, S / 8, S / 8)};
    for (int t = 0; t < cfg_.in_frames; ++t) {
      nn::Var x = nn::constant(frame_of(batch.past, t));
      if (statics) x = nn::concat({x, statics}, 1);
      x = nn::leaky_relu(down1_(x), nn::kLeakySlope);
      enc[0] = enc1_(x, enc[0]);
      x = nn::leaky_relu(down2_(enc[0].h), nn::kLeakySlope);
      enc[1] = enc2_(x, enc[1]);
      x = nn::leaky_relu(down3_(enc[1].h), nn::kLeakySlope);
      enc[2] = enc3_(x, enc[2]);
    }
    encoder_final_.assign(enc.begin(), enc.end());

    // Forecaster layer k starts from the state of the encoder layer at the same resolution.
    std::array<nn::LstmState, 3> dec{enc[2], enc[1], enc[0]};
    decoder_initial_.assign(dec.begin(), dec.end());

    std::vector<nn::Var> steps;
    for (int t = 0; t < cfg_.out_frames; ++t) {
      dec[0] = dec1_(nullptr, dec[0]);
      nn::Var y = nn::leaky_relu(up1_(dec[0].h), nn::kLeakySlope);
      dec[1] = dec2_(y, dec[1]);
      y = nn::leaky_relu(up2_(dec[1].h), nn::kLeakySlope);
      dec[2] = dec3_(y, dec[2]);
      y = nn::leaky_relu(up3_(dec[2].h), nn::kLeakySlope);
      y = nn::leaky_relu(refine_(y), nn::kLeakySlope);
      steps.push_back(head_(y));
    }
    return {nn::check_finite(stack_steps(steps), "convlstm output"), nullptr};
  }

  /// Final encoder states (finest first) and initial forecaster states (coarsest first) of the last forward.
  const std::vector<nn::LstmState>& encoder_final() const { return encoder_final_; }
  const std::vector<nn::LstmState>& decoder_initial() const { return decoder_initial_; }

 private:
  nn::Conv2d down1_, down2_, down3_, refine_, head_;
  nn::ConvLstmCell enc1_, enc2_, enc3_, dec1_, dec2_, dec3_;
  nn::ConvTranspose2d up1_, up2_, up3_;
  std::vector<nn::LstmState> encoder_final_, decoder_initial_;
};

}  // namespace nowcast::models
