#pragma once

#include <array>
#include <vector>

#include "nowcast/models/unet.hpp"

namespace nowcast::models {

struct Gaussian {
  nn::Var mu;
  nn::Var logvar;
};

/// KL(q || p) for diagonal Gaussians, summed over latent dimensions and averaged over the batch.
inline nn::Var gaussian_kl(const Gaussian& q, const Gaussian& p) {
  const nn::Var dlv = nn::sub(p.logvar, q.logvar);
  nn::Var terms = nn::add(dlv, nn::exp(nn::scale(dlv, -1.0f)));
  terms = nn::add(terms, nn::mul(nn::square(nn::sub(q.mu, p.mu)), nn::exp(nn::scale(p.logvar, -1.0f))));
  terms = nn::add_scalar(terms, -1.0f);
  return nn::scale(nn::sum(terms), 0.5f / static_cast<float>(q.mu->value.dim(0)));
}

/// Embedding, one LSTM layer and (mean, log-variance) heads.
struct GaussianLstm {
  nn::Linear embed, mu, logvar;
  nn::LstmCell cell;

  static GaussianLstm make(nn::ParameterStore& store, const std::string& name, int in, int cells, int z) {
    GaussianLstm g;
    g.embed = nn::Linear::make(store, name + ".embed", in, cells, true);
    g.cell = nn::LstmCell::make(store, name + ".lstm", cells, cells);
    g.mu = nn::Linear::make(store, name + ".mu", cells, z, true);
    g.logvar = nn::Linear::make(store, name + ".logvar", cells, z, true);
    return g;
  }

  Gaussian operator()(const nn::Var& h, nn::LstmState& state) const {
    state = cell(embed(h), state);
    return {mu(state.h), logvar(state.h)};
  }
};

/// Stochastic video generation with a learned prior. Frames are encoded by the U-net contracting path
/// ending in a full-extent convolution to a vector; a two-layer LSTM predictor maps (h, z) to a vector
/// that the U-net expanding path decodes, with skips from the last observed frame.
class SvgLp final : public Model {
 public:
  explicit SvgLp(const ModelConfig& cfg) : Model(cfg) {
    const int in = cfg_.frame_channels + cfg_.static_channels;
    const int k = cfg_.spatial / 16;
    const int bottom = cfg_.width(kEncoderWidths[3]);
    encoder_ = UnetEncoder::make(store_, cfg_, in, 4);
    to_h_ = nn::Conv2d::make(store_, "enc_h.conv", bottom, cfg_.h(), k, 1, 0, false, 1.0);
    h_norm_ = nn::BatchNorm::make(store_, "enc_h.bn", cfg_.h());

    from_g_ = nn::ConvTranspose2d::make(store_, "dec_g.deconv", cfg_.g(), bottom, k, 1, 0, false);
    g_norm_ = nn::BatchNorm::make(store_, "dec_g.bn", bottom);
    std::array<int, 4> skips{};
    for (int i = 0; i < 4; ++i) skips[i] = cfg_.width(kEncoderWidths[i]);
    decoder_ = UnetDecoder::make(store_, cfg_, bottom, skips);
    head_ = nn::Conv2d::make(store_, "head", cfg_.width(kDecoderWidths[3]), 1, 1, 1, 0, true, 1.0);

    pred_embed_ = nn::Linear::make(store_, "predictor.embed", cfg_.h() + cfg_.z(), cfg_.cells(), true);
    pred_lstm_[0] = nn::LstmCell::make(store_, "predictor.lstm0", cfg_.cells(), cfg_.cells());
    pred_lstm_[1] = nn::LstmCell::make(store_, "predictor.lstm1", cfg_.cells(), cfg_.cells());
    pred_out_ = nn::Linear::make(store_, "predictor.out", cfg_.cells(), cfg_.g(), true);
    posterior_ = GaussianLstm::make(store_, "posterior", cfg_.h(), cfg_.cells(), cfg_.z());
    prior_ = GaussianLstm::make(store_, "prior", cfg_.h(), cfg_.cells(), cfg_.z());
  }

  Output forward(const Batch& batch, Phase phase) override {
    batch.check(cfg_, phase == Phase::train);
    return phase == Phase::train ? train_forward(batch) : generate(batch);
  }

  /// Latent distributions of the last forward: posterior and prior per step.
  const std::vector<Gaussian>& last_posteriors() const { return posteriors_; }
  const std::vector<Gaussian>& last_priors() const { return priors_; }

 private:
  struct Encoded {
    nn::Var h;                   // (B, h)
    std::vector<nn::Var> skips;  // finest first
  };

  Encoded encode(const nn::Var& x, bool training) const {
    nn::Var bottom;
    Encoded e;
    e.skips = encoder_(x, training, true, bottom);
    const nn::Var h = nn::tanh(h_norm_(to_h_(bottom), training));
    e.h = nn::check_finite(nn::reshape(h, {h->value.dim(0), cfg_.h()}), "svglp encoder");
    return e;
  }

  nn::Var decode(const nn::Var& g, const std::vector<nn::Var>& skips, bool training) const {
    const nn::Var g4 = nn::reshape(g, {g->value.dim(0), cfg_.g(), 1, 1});
    const nn::Var x = nn::leaky_relu(g_norm_(from_g_(g4), training), nn::kLeakySlope);
    return nn::check_finite(head_(decoder_(x, skips, training)), "svglp decoder");
  }

  nn::Var sample(const Gaussian& d) {
    if (cfg_.deterministic_latent) return d.mu;
    const nn::Var eps = nn::constant(store_.normal(d.mu->value.shape, 1.0));
    return nn::add(d.mu, nn::mul(nn::exp(nn::scale(d.logvar, 0.5f)), eps));
  }

  nn::Var predict(const nn::Var& h, const nn::Var& z, std::array<nn::LstmState, 2>& state) const {
    nn::Var x = pred_embed_(nn::concat({h, z}, 1));
    for (int l = 0; l < 2; ++l) {
      state[l] = pred_lstm_[l](x, state[l]);
      x = state[l].h;
    }
    return nn::tanh(pred_out_(x));
  }

  nn::Var frame_input(const nn::Tensor& frame, const nn::Var& statics) const {
    const nn::Var x = nn::constant(frame);
    return statics ? nn::concat({x, statics}, 1) : x;
  }

  void reset(int N, nn::LstmState& post, nn::LstmState& prior, std::array<nn::LstmState, 2>& pred) {
    post = posterior_.cell.zero_state(N);
    prior = prior_.cell.zero_state(N);
    pred = {pred_lstm_[0].zero_state(N), pred_lstm_[1].zero_state(N)};
    posteriors_.clear();
    priors_.clear();
  }

  /// Teacher-forced pass over all in_frames + out_frames frames with posterior latents.
  Output train_forward(const Batch& batch) {
    const int N = batch.size(), Tin = cfg_.in_frames, T = Tin + cfg_.out_frames;
    const nn::Var statics = cfg_.static_channels > 0 ? nn::constant(batch.statics) : nullptr;
    // All frames go through the encoder together so batch statistics see N * T samples.
    std::vector<nn::Var> frames;
    for (int t = 0; t < T; ++t) {
      frames.push_back(frame_input(t < Tin ? frame_of(batch.past, t) : frame_of(batch.future, t - Tin), statics));
    }
    const Encoded all = encode(nn::concat(frames, 0), true);
    auto h_at = [&](int t) { return nn::slice(all.h, 0, t * N, N); };

    nn::LstmState post, prior;
    std::array<nn::LstmState, 2> pred;
    reset(N, post, prior, pred);
    std::vector<nn::Var> gs;
    nn::Var kl;
    for (int t = 1; t < T; ++t) {
      const nn::Var h_prev = h_at(t - 1);
      const Gaussian q = posterior_(h_at(t), post);
      const Gaussian p = prior_(h_prev, prior);
      posteriors_.push_back(q);
      priors_.push_back(p);
      const nn::Var step_kl = gaussian_kl(q, p);
      kl = kl ? nn::add(kl, step_kl) : step_kl;
      const nn::Var g = predict(h_prev, sample(q), pred);
      if (t >= Tin) gs.push_back(g);
    }

    std::vector<nn::Var> skips;
    for (const auto& s : all.skips) {
      const nn::Var last = nn::slice(s, 0, (Tin - 1) * N, N);
      skips.push_back(nn::concat(std::vector<nn::Var>(gs.size(), last), 0));
    }
    const nn::Var decoded = decode(nn::concat(gs, 0), skips, true);
    std::vector<nn::Var> steps;
    for (std::size_t k = 0; k < gs.size(); ++k) steps.push_back(nn::slice(decoded, 0, static_cast<int>(k) * N, N));
    const nn::Var aux = nn::scale(kl, static_cast<float>(cfg_.kl_weight / (T - 1)));
    return {nn::check_finite(stack_steps(steps), "svglp output"), aux};
  }

  /// Posterior latents while frames are observed, then the learned prior with predictions fed back.
  Output generate(const Batch& batch) {
    const int N = batch.size(), Tin = cfg_.in_frames;
    const nn::Var statics = cfg_.static_channels > 0 ? nn::constant(batch.statics) : nullptr;
    const nn::Tensor last = frame_of(batch.past, Tin - 1);

    nn::LstmState post, prior;
    std::array<nn::LstmState, 2> pred;
    reset(N, post, prior, pred);
    Encoded prev = encode(frame_input(frame_of(batch.past, 0), statics), false);
    for (int t = 1; t < Tin; ++t) {
      Encoded cur = encode(frame_input(frame_of(batch.past, t), statics), false);
      const Gaussian q = posterior_(cur.h, post);
      const Gaussian p = prior_(prev.h, prior);
      posteriors_.push_back(q);
      priors_.push_back(p);
      predict(prev.h, sample(q), pred);
      prev = std::move(cur);
    }
    const std::vector<nn::Var> skips = prev.skips;

    std::vector<nn::Var> steps;
    for (int t = 0; t < cfg_.out_frames; ++t) {
      const Gaussian p = prior_(prev.h, prior);
      priors_.push_back(p);
      const nn::Var y = decode(predict(prev.h, sample(p), pred), skips, false);
      steps.push_back(y);
      if (t + 1 == cfg_.out_frames) break;
      // Feed back the prediction with the last observed auxiliary channels.
      std::vector<nn::Var> parts{y};
      if (cfg_.frame_channels > 1) parts.push_back(nn::slice(nn::constant(last), 1, 1, cfg_.frame_channels - 1));
      if (statics) parts.push_back(statics);
      prev = encode(nn::concat(parts, 1), false);
    }
    return {nn::check_finite(stack_steps(steps), "svglp output"), nullptr};
  }

  UnetEncoder encoder_;
  nn::Conv2d to_h_, head_;
  nn::BatchNorm h_norm_, g_norm_;
  nn::ConvTranspose2d from_g_;
  UnetDecoder decoder_;
  nn::Linear pred_embed_, pred_out_;
  std::array<nn::LstmCell, 2> pred_lstm_;
  GaussianLstm posterior_, prior_;
  std::vector<Gaussian> posteriors_, priors_;
};

}  // namespace nowcast::models
