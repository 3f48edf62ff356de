#pragma once

#include "nowcast/losses.hpp"
#include "nowcast/nn/autograd.hpp"

namespace nowcast::models {

struct ImageLoss {
  nn::Var value;            // mean combined frame loss, differentiable
  double ssim_loss = 0.0;   // mean 1 - (W)SSIM over frames
  double wmse = 0.0;        // mean WMSE over frames
};

/// Mean per-frame combined loss over all (sample, lead time) frames of a (N, T, S, S) prediction.
inline ImageLoss image_loss(const nn::Var& pred, const nn::Tensor& target, const loss::LossConfig& cfg) {
  if (pred->value.shape != target.shape || target.shape.size() != 4) {
    throw Error("loss shapes differ: prediction " + nn::to_string(pred->value.shape) + ", target " +
                nn::to_string(target.shape));
  }
  const int N = target.dim(0), T = target.dim(1), H = target.dim(2), W = target.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const bool want_grad = pred->requires_grad && nn::grad_enabled();
  nn::Tensor grad = want_grad ? nn::Tensor(pred->value.shape) : nn::Tensor();
  ImageLoss out;
  double combined = 0.0;
  const double frames = static_cast<double>(N) * T;
  for (int f = 0; f < N * T; ++f) {
    Grid<float> ref(H, W), cand(H, W);
    std::copy_n(target.ptr() + f * plane, plane, ref.values().begin());
    std::copy_n(pred->value.ptr() + f * plane, plane, cand.values().begin());
    const auto fl = loss::frame_loss(ref, cand, cfg, want_grad);
    combined += fl.combined;
    out.ssim_loss += fl.ssim_loss;
    out.wmse += fl.wmse;
    if (want_grad) {
      const auto g = fl.grad.values();
      for (std::size_t i = 0; i < plane; ++i) grad.data[f * plane + i] = static_cast<float>(g[i] / frames);
    }
  }
  out.ssim_loss /= frames;
  out.wmse /= frames;
  nn::Tensor value({1}, static_cast<float>(combined / frames));
  out.value = nn::make_result("image_loss", std::move(value), {pred}, [g = std::move(grad)](nn::Node& node) {
    auto& pg = node.inputs[0]->grad_buffer();
    const float s = node.grad.data[0];
    for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += s * g.data[i];
  });
  return out;
}

}  // namespace nowcast::models
