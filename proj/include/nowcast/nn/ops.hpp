#pragma once

// Differentiable tensor operations. Convolutions lower to im2col + GEMM (Eigen); everything else
// is written out directly.

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <optional>

#include "nowcast/nn/autograd.hpp"

namespace nowcast::nn {

namespace detail_ops {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

inline void check_same(const Var& a, const Var& b, const char* op) {
  if (a->shape() != b->shape()) {
    throw Error(std::string(op) + ": shape mismatch " + to_string(a->shape()) + " vs " + to_string(b->shape()));
  }
}

inline std::size_t outer_size(const Shape& s, int axis) {
  std::size_t n = 1;
  for (int i = 0; i < axis; ++i) n *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  return n;
}

inline std::size_t inner_size(const Shape& s, int axis) {
  std::size_t n = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

inline int norm_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  detail::require(a >= 0 && a < rank, "axis out of range");
  return a;
}

struct ConvGeom {
  int channels, height, width, k, stride, pad, out_h, out_w;
};

/// Unfold one (C, H, W) image into a (C k k, out_h out_w) matrix.
inline void im2col(const float* x, const ConvGeom& g, float* col) {
  const int P = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        float* dst = col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * P;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          float* row = dst + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(row, row + g.out_w, 0.0f);
            continue;
          }
          const float* src = x + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            row[ow] = (iw >= 0 && iw < g.width) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add columns back onto a (C, H, W) image.
inline void col2im(const float* col, const ConvGeom& g, float* x) {
  const int P = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const float* src = col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * P;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          float* dst = x + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
          const float* row = src + static_cast<std::size_t>(oh) * g.out_w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += row[ow];
          }
        }
      }
    }
  }
}

template <typename F, typename DF>
Var unary(const char* name, const Var& a, F f, DF df) {
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
  return make_result(name, std::move(out), {a}, [df](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

}  // namespace detail_ops

inline Var add(const Var& a, const Var& b) {
  detail_ops::check_same(a, b, "add");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_result("add", std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail_ops::check_same(a, b, "sub");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  return make_result("sub", std::move(out), {a, b}, [](Node& self) {
    const float sign[2] = {1.0f, -1.0f};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail_ops::check_same(a, b, "mul");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_result("mul", std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

inline Var scale(const Var& a, float s) {
  return detail_ops::unary("scale", a, [s](float x) { return s * x; }, [s](float, float) { return s; });
}

inline Var add_scalar(const Var& a, float s) {
  return detail_ops::unary("add_scalar", a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

inline Var leaky_relu(const Var& a, float slope = 0.2f) {
  return detail_ops::unary(
      "leaky_relu", a, [slope](float x) { return x > 0.0f ? x : slope * x; },
      [slope](float x, float) { return x > 0.0f ? 1.0f : slope; });
}

inline Var tanh(const Var& a) {
  return detail_ops::unary("tanh", a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail_ops::unary(
      "sigmoid", a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
      [](float, float y) { return y * (1.0f - y); });
}

inline Var exp(const Var& a) {
  return detail_ops::unary("exp", a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

inline Var square(const Var& a) {
  return detail_ops::unary("square", a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

inline Var reshape(const Var& a, Shape s) {
  return make_result("reshape", a->value.reshaped(std::move(s)), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Sum of every element, as a one-element tensor.
inline Var sum(const Var& a) {
  double s = 0.0;
  for (float v : a->value.data) s += v;
  return make_result("sum", Tensor({1}, static_cast<float>(s)), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (auto& v : g.data) v += self.grad[0];
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0f / static_cast<float>(a->value.size())); }

inline Var concat(const std::vector<Var>& parts, int axis) {
  detail::require(!parts.empty(), "concat of nothing");
  const Shape& first = parts[0]->shape();
  const int ax = detail_ops::norm_axis(axis, static_cast<int>(first.size()));
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const auto& p : parts) {
    const Shape& s = p->shape();
    detail::require(s.size() == first.size(), "concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != ax && s[i] != first[i]) {
        throw Error("concat: shape mismatch " + to_string(s) + " vs " + to_string(first));
      }
    }
    out_shape[static_cast<std::size_t>(ax)] += s[static_cast<std::size_t>(ax)];
  }
  const std::size_t outer = detail_ops::outer_size(first, ax);
  const std::size_t inner = detail_ops::inner_size(first, ax);
  const std::size_t out_stride = static_cast<std::size_t>(out_shape[static_cast<std::size_t>(ax)]) * inner;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = static_cast<std::size_t>(p->shape()[static_cast<std::size_t>(ax)]) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p->value.ptr() + o * chunk, chunk, out.ptr() + o * out_stride + offset);
    }
    offset += chunk;
  }
  return make_result("concat", std::move(out), parts, [ax, outer, inner, out_stride](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.inputs) {
      const std::size_t chunk = static_cast<std::size_t>(p->shape()[static_cast<std::size_t>(ax)]) * inner;
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const float* src = self.grad.ptr() + o * out_stride + off;
          float* dst = g.ptr() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      off += chunk;
    }
  });
}

inline Var slice(const Var& a, int axis, int start, int length) {
  const Shape& s = a->shape();
  const int ax = detail_ops::norm_axis(axis, static_cast<int>(s.size()));
  detail::require(start >= 0 && length >= 0 && start + length <= s[static_cast<std::size_t>(ax)],
                  "slice out of range");
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(ax)] = length;
  const std::size_t outer = detail_ops::outer_size(s, ax);
  const std::size_t inner = detail_ops::inner_size(s, ax);
  const std::size_t in_stride = static_cast<std::size_t>(s[static_cast<std::size_t>(ax)]) * inner;
  const std::size_t chunk = static_cast<std::size_t>(length) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a->value.ptr() + o * in_stride + off, chunk, out.ptr() + o * chunk);
  }
  return make_result("slice", std::move(out), {a}, [outer, in_stride, chunk, off](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      const float* src = self.grad.ptr() + o * chunk;
      float* dst = g.ptr() + o * in_stride + off;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

/// 2D convolution. x: (N, C, H, W); w: (O, C, k, k); bias: (O) or null.
inline Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  using namespace detail_ops;
  const Shape& xs = x->shape();
  const Shape& ws = w->shape();
  detail::require(xs.size() == 4 && ws.size() == 4, "conv2d expects 4D input and weight");
  if (xs[1] != ws[1]) {
    throw Error("conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " + std::to_string(ws[1]));
  }
  const int N = xs[0], O = ws[0], k = ws[2];
  const ConvGeom g{xs[1], xs[2], xs[3], k, stride, pad, (xs[2] + 2 * pad - k) / stride + 1,
                   (xs[3] + 2 * pad - k) / stride + 1};
  detail::require(g.out_h > 0 && g.out_w > 0, "conv2d: kernel larger than padded input");
  const int K = g.channels * k * k;
  const int P = g.out_h * g.out_w;
  Tensor out({N, O, g.out_h, g.out_w});
  Buffer col(static_cast<std::size_t>(K) * P);
  CMapR W(w->value.ptr(), O, K);
  for (int n = 0; n < N; ++n) {
    im2col(x->value.ptr() + static_cast<std::size_t>(n) * g.channels * g.height * g.width, g, col.data());
    MapR Y(out.ptr() + static_cast<std::size_t>(n) * O * P, O, P);
    Y.noalias() = W * CMapR(col.data(), K, P);
    if (bias) {
      for (int o = 0; o < O; ++o) Y.row(o).array() += bias->value[static_cast<std::size_t>(o)];
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(bias);
  return make_result("conv2d", std::move(out), std::move(inputs), [g, N, O, K, P](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    Buffer col(static_cast<std::size_t>(K) * P);
    Buffer dcol(static_cast<std::size_t>(K) * P);
    CMapR W(wn.value.ptr(), O, K);
    for (int n = 0; n < N; ++n) {
      CMapR G(self.grad.ptr() + static_cast<std::size_t>(n) * O * P, O, P);
      if (wn.requires_grad) {
        im2col(xn.value.ptr() + static_cast<std::size_t>(n) * g.channels * g.height * g.width, g, col.data());
        MapR(wn.grad_buffer().ptr(), O, K).noalias() += G * CMapR(col.data(), K, P).transpose();
      }
      if (xn.requires_grad) {
        MapR(dcol.data(), K, P).noalias() = W.transpose() * G;
        col2im(dcol.data(), g, xn.grad_buffer().ptr() + static_cast<std::size_t>(n) * g.channels * g.height * g.width);
      }
      if (bn && bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (int o = 0; o < O; ++o) {
          double acc = 0.0;
          for (int p = 0; p < P; ++p) acc += G(o, p);
          gb[static_cast<std::size_t>(o)] += static_cast<float>(acc);
        }
      }
    }
  });
}

/// Transposed convolution (adjoint of conv2d in x). x: (N, C, H, W); w: (C, O, k, k); bias: (O) or null.
/// Output side (H - 1) stride - 2 pad + k.
inline Var conv_transpose2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  using namespace detail_ops;
  const Shape& xs = x->shape();
  const Shape& ws = w->shape();
  detail::require(xs.size() == 4 && ws.size() == 4, "conv_transpose2d expects 4D input and weight");
  if (xs[1] != ws[0]) {
    throw Error("conv_transpose2d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                std::to_string(ws[0]));
  }
  const int N = xs[0], C = xs[1], O = ws[1], k = ws[2];
  const int H = xs[2], Wd = xs[3];
  const int out_h = (H - 1) * stride - 2 * pad + k;
  const int out_w = (Wd - 1) * stride - 2 * pad + k;
  detail::require(out_h > 0 && out_w > 0, "conv_transpose2d: empty output");
  // Geometry of the equivalent forward convolution from the output back to the input grid.
  const ConvGeom g{O, out_h, out_w, k, stride, pad, H, Wd};
  const int K = O * k * k;
  const int P = H * Wd;
  Tensor out({N, O, out_h, out_w});
  Buffer col(static_cast<std::size_t>(K) * P);
  CMapR W(w->value.ptr(), C, K);
  for (int n = 0; n < N; ++n) {
    MapR(col.data(), K, P).noalias() = W.transpose() * CMapR(x->value.ptr() + static_cast<std::size_t>(n) * C * P, C, P);
    float* y = out.ptr() + static_cast<std::size_t>(n) * O * out_h * out_w;
    col2im(col.data(), g, y);
    if (bias) {
      for (int o = 0; o < O; ++o) {
        const float b = bias->value[static_cast<std::size_t>(o)];
        float* plane = y + static_cast<std::size_t>(o) * out_h * out_w;
        for (int i = 0; i < out_h * out_w; ++i) plane[i] += b;
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(bias);
  return make_result("conv_transpose2d", std::move(out), std::move(inputs), [g, N, C, O, K, P](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    Buffer col(static_cast<std::size_t>(K) * P);
    CMapR W(wn.value.ptr(), C, K);
    const std::size_t out_plane = static_cast<std::size_t>(g.height) * g.width;
    for (int n = 0; n < N; ++n) {
      const float* gy = self.grad.ptr() + static_cast<std::size_t>(n) * O * out_plane;
      im2col(gy, g, col.data());
      CMapR Gc(col.data(), K, P);
      if (xn.requires_grad) {
        MapR(xn.grad_buffer().ptr() + static_cast<std::size_t>(n) * C * P, C, P).noalias() += W * Gc;
      }
      if (wn.requires_grad) {
        MapR(wn.grad_buffer().ptr(), C, K).noalias() +=
            CMapR(xn.value.ptr() + static_cast<std::size_t>(n) * C * P, C, P) * Gc.transpose();
      }
      if (bn && bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (int o = 0; o < O; ++o) {
          double s = 0.0;
          const float* plane = gy + static_cast<std::size_t>(o) * out_plane;
          for (std::size_t i = 0; i < out_plane; ++i) s += plane[i];
          gb[static_cast<std::size_t>(o)] += static_cast<float>(s);
        }
      }
    }
  });
}

/// y = x W^T + b. x: (N, in); w: (out, in); bias: (out) or null.
inline Var linear(const Var& x, const Var& w, const Var& bias) {
  using namespace detail_ops;
  const Shape& xs = x->shape();
  const Shape& ws = w->shape();
  detail::require(xs.size() == 2 && ws.size() == 2, "linear expects 2D input and weight");
  if (xs[1] != ws[1]) {
    throw Error("linear: input width " + std::to_string(xs[1]) + " but weight expects " + std::to_string(ws[1]));
  }
  const int N = xs[0], I = xs[1], O = ws[0];
  Tensor out({N, O});
  MapR Y(out.ptr(), N, O);
  Y.noalias() = CMapR(x->value.ptr(), N, I) * CMapR(w->value.ptr(), O, I).transpose();
  if (bias) {
    for (int n = 0; n < N; ++n) {
      for (int o = 0; o < O; ++o) Y(n, o) += bias->value[static_cast<std::size_t>(o)];
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(bias);
  return make_result("linear", std::move(out), std::move(inputs), [N, I, O](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    CMapR G(self.grad.ptr(), N, O);
    if (xn.requires_grad) MapR(xn.grad_buffer().ptr(), N, I).noalias() += G * CMapR(wn.value.ptr(), O, I);
    if (wn.requires_grad) MapR(wn.grad_buffer().ptr(), O, I).noalias() += G.transpose() * CMapR(xn.value.ptr(), N, I);
    if (bn && bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (int o = 0; o < O; ++o) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) acc += G(n, o);
        gb[static_cast<std::size_t>(o)] += static_cast<float>(acc);
      }
    }
  });
}

/// Batch normalisation over every axis but 1. Training mode uses (biased) batch statistics and
/// updates the running buffers; evaluation mode uses the buffers.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                      bool training, float momentum = 0.1f, float eps = 1e-5f) {
  const Shape& s = x->shape();
  detail::require(s.size() >= 2, "batch_norm expects at least 2D input");
  const int N = s[0], C = s[1];
  const std::size_t spatial = detail_ops::inner_size(s, 1);
  const double M = static_cast<double>(N) * static_cast<double>(spatial);
  std::vector<float> mean(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    double mu, var;
    if (training) {
      double acc = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x->value.ptr() + (static_cast<std::size_t>(n) * C + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) acc += p[i];
      }
      mu = acc / M;
      double sq = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x->value.ptr() + (static_cast<std::size_t>(n) * C + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      var = sq / M;
      const double unbiased = M > 1 ? sq / (M - 1) : var;
      auto& rm = running_mean[static_cast<std::size_t>(c)];
      auto& rv = running_var[static_cast<std::size_t>(c)];
      rm = static_cast<float>((1.0 - momentum) * rm + momentum * mu);
      rv = static_cast<float>((1.0 - momentum) * rv + momentum * unbiased);
    } else {
      mu = running_mean[static_cast<std::size_t>(c)];
      var = running_var[static_cast<std::size_t>(c)];
    }
    mean[static_cast<std::size_t>(c)] = static_cast<float>(mu);
    invstd[static_cast<std::size_t>(c)] = static_cast<float>(1.0 / std::sqrt(var + eps));
  }
  Tensor out(s);
  Tensor xhat(s);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * spatial;
      const float m = mean[static_cast<std::size_t>(c)], is = invstd[static_cast<std::size_t>(c)];
      const float ga = gamma->value[static_cast<std::size_t>(c)], be = beta->value[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < spatial; ++i) {
        const float h = (x->value[base + i] - m) * is;
        xhat[base + i] = h;
        out[base + i] = ga * h + be;
      }
    }
  }
  return make_result(
      "batch_norm", std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), invstd = std::move(invstd), N, C, spatial, M, training](Node& self) {
        Node& xn = *self.inputs[0];
        Node& gn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        for (int c = 0; c < C; ++c) {
          double sg = 0.0, sgh = 0.0;
          for (int n = 0; n < N; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              sg += self.grad[base + i];
              sgh += static_cast<double>(self.grad[base + i]) * xhat[base + i];
            }
          }
          if (gn.requires_grad) gn.grad_buffer()[static_cast<std::size_t>(c)] += static_cast<float>(sgh);
          if (bn.requires_grad) bn.grad_buffer()[static_cast<std::size_t>(c)] += static_cast<float>(sg);
          if (!xn.requires_grad) continue;
          auto& gx = xn.grad_buffer();
          const double k = static_cast<double>(gn.value[static_cast<std::size_t>(c)]) * invstd[static_cast<std::size_t>(c)];
          for (int n = 0; n < N; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              const double g = self.grad[base + i];
              const double d = training ? k * (g - sg / M - xhat[base + i] * sgh / M) : k * g;
              gx[base + i] += static_cast<float>(d);
            }
          }
        }
      });
}

/// 2x2 max pooling with stride 2 (even spatial sides required).
inline Var max_pool2(const Var& x) {
  const Shape& s = x->shape();
  detail::require(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, "max_pool2 needs even spatial sides");
  const int N = s[0], C = s[1], H = s[2], W = s[3], Ho = H / 2, Wo = W / 2;
  Tensor out({N, C, Ho, Wo});
  std::vector<std::uint32_t> arg(out.size());
  for (int p = 0; p < N * C; ++p) {
    const float* src = x->value.ptr() + static_cast<std::size_t>(p) * H * W;
    for (int i = 0; i < Ho; ++i) {
      for (int j = 0; j < Wo; ++j) {
        std::uint32_t best = static_cast<std::uint32_t>((2 * i) * W + 2 * j);
        for (int di = 0; di < 2; ++di) {
          for (int dj = 0; dj < 2; ++dj) {
            const auto idx = static_cast<std::uint32_t>((2 * i + di) * W + 2 * j + dj);
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * Ho + i) * Wo + j;
        out[o] = src[best];
        arg[o] = best;
      }
    }
  }
  return make_result("max_pool2", std::move(out), {x}, [arg = std::move(arg), H, W, Ho, Wo](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    const std::size_t plane_out = static_cast<std::size_t>(Ho) * Wo;
    const std::size_t plane_in = static_cast<std::size_t>(H) * W;
    for (std::size_t o = 0; o < self.grad.size(); ++o) {
      g[(o / plane_out) * plane_in + arg[o]] += self.grad[o];
    }
  });
}

/// Nearest-neighbour x2 upsampling.
inline Var upsample2(const Var& x) {
  const Shape& s = x->shape();
  detail::require(s.size() == 4, "upsample2 expects 4D input");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor out({N, C, 2 * H, 2 * W});
  for (int p = 0; p < N * C; ++p) {
    const float* src = x->value.ptr() + static_cast<std::size_t>(p) * H * W;
    float* dst = out.ptr() + static_cast<std::size_t>(p) * 4 * H * W;
    for (int i = 0; i < 2 * H; ++i) {
      for (int j = 0; j < 2 * W; ++j) dst[i * 2 * W + j] = src[(i / 2) * W + j / 2];
    }
  }
  return make_result("upsample2", std::move(out), {x}, [N, C, H, W](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (int p = 0; p < N * C; ++p) {
      const float* src = self.grad.ptr() + static_cast<std::size_t>(p) * 4 * H * W;
      float* dst = g.ptr() + static_cast<std::size_t>(p) * H * W;
      for (int i = 0; i < 2 * H; ++i) {
        for (int j = 0; j < 2 * W; ++j) dst[(i / 2) * W + j / 2] += src[i * 2 * W + j];
      }
    }
  });
}

/// Fails with the layer name when any activation is NaN or infinite.
inline const Var& check_finite(const Var& v, const std::string& where) {
  if (!v->value.all_finite()) throw Error("non-finite activation in " + where);
  return v;
}

}  // namespace nowcast::nn
