#pragma once

// Structural-similarity and weighted squared-error training objectives with analytic gradients
// with respect to the prediction.
//
// Windowed SSIM uses luminance l, contrast c and structure s (exponents 1) with
// C1 = (k1 L)^2, C2 = (k2 L)^2, C3 = C2 / 2. With that C3 the product c * s collapses to
// (2 sxy + C2) / (sx^2 + sy^2 + C2), which is what is evaluated: it avoids square roots of
// variances and is smooth everywhere.
//
// WSSIM weights window j by (1 + sigma_x_j) / sum_i (1 + sigma_x_i), using the reference image only.
// WMSE weights pixel i by 1 below the rain threshold T and by `rain_weight` at or above it, and is
// normalised by the weight sum.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <ranges>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"

namespace nowcast::loss {

enum class WindowKernel { gaussian, uniform };

struct LossConfig {
  double alpha = 0.84;          // weight of the SSIM term
  double beta = 1e-3;           // L2 penalty on model weights
  double threshold = 0.1;       // rain/no-rain threshold, in the units of the loss inputs
  double rain_weight = 3.0;     // WMSE weight of pixels >= threshold
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;   // L
  int window = 11;
  double window_sigma = 1.5;
  WindowKernel kernel = WindowKernel::gaussian;
  bool weighted_ssim = true;    // false: uniform window weights (mean SSIM)

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  double c3() const { return c2() / 2.0; }

  void validate() const {
    detail::require_config(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    detail::require_config(beta >= 0.0, "beta must be non-negative");
    detail::require_config(std::isfinite(threshold), "rain threshold must be finite");
    detail::require_config(rain_weight > 0.0, "rain weight must be positive");
    detail::require_config(k1 > 0.0 && k2 > 0.0, "k1 and k2 must be positive");
    detail::require_config(dynamic_range > 0.0, "dynamic range L must be positive");
    detail::require_config(window >= 1, "SSIM window must be at least 1");
    detail::require_config(window_sigma > 0.0, "SSIM window sigma must be positive");
  }

  /// Named objectives used in the loss ablation: total, wssim, ssim, wmse, mse.
  static LossConfig preset(std::string_view name) {
    LossConfig c;
    if (name == "total") return c;
    if (name == "wssim") {
      c.alpha = 1.0;
    } else if (name == "ssim") {
      c.alpha = 1.0;
      c.weighted_ssim = false;
    } else if (name == "wmse") {
      c.alpha = 0.0;
    } else if (name == "mse") {
      c.alpha = 0.0;
      c.rain_weight = 1.0;
    } else {
      throw UsageError("unknown loss preset '" + std::string(name) +
                       "' (expected total, wssim, ssim, wmse or mse)");
    }
    return c;
  }
};

struct WindowStats {
  double mu_x = 0.0;
  double mu_y = 0.0;
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  double sigma_xy = 0.0;
};

/// Normalised 1D window profile.
inline std::vector<double> window_profile(int n, const LossConfig& cfg) {
  std::vector<double> g(static_cast<std::size_t>(n));
  const double center = (n - 1) / 2.0;
  for (int i = 0; i < n; ++i) {
    const double d = i - center;
    g[static_cast<std::size_t>(i)] =
        cfg.kernel == WindowKernel::gaussian ? std::exp(-d * d / (2.0 * cfg.window_sigma * cfg.window_sigma)) : 1.0;
  }
  const double s = std::accumulate(g.begin(), g.end(), 0.0);
  for (auto& v : g) v /= s;
  return g;
}

/// Separable 2D window weights for a rows x cols window (sums to 1).
inline Grid<double> window_kernel(std::size_t rows, std::size_t cols, const LossConfig& cfg) {
  const auto gr = window_profile(static_cast<int>(rows), cfg);
  const auto gc = window_profile(static_cast<int>(cols), cfg);
  Grid<double> k(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) k(i, j) = gr[i] * gc[j];
  }
  return k;
}

namespace detail_loss {

struct RawMoments {
  double mx = 0, my = 0, vx = 0, vy = 0, cxy = 0;
};

template <typename T>
RawMoments raw_moments(const Grid<T>& x, const Grid<T>& y, const LossConfig& cfg) {
  if (!x.same_shape(y)) throw Error("SSIM windows differ in shape");
  const auto k = window_kernel(x.rows(), x.cols(), cfg);
  double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = k.values()[i];
    const double a = static_cast<double>(x.values()[i]);
    const double b = static_cast<double>(y.values()[i]);
    mx += w * a;
    my += w * b;
    xx += w * a * a;
    yy += w * b * b;
    xy += w * a * b;
  }
  return {mx, my, xx - mx * mx, yy - my * my, xy - mx * my};
}

}  // namespace detail_loss

template <typename T>
WindowStats window_stats(const Grid<T>& x, const Grid<T>& y, const LossConfig& cfg) {
  const auto m = detail_loss::raw_moments(x, y, cfg);
  return {m.mx, m.my, std::sqrt(std::max(0.0, m.vx)), std::sqrt(std::max(0.0, m.vy)), m.cxy};
}

namespace detail_loss {

/// l * c * s from window moments (variances, not deviations).
inline double ssim_from_moments(double mx, double my, double vx, double vy, double cxy, const LossConfig& cfg) {
  // Denominators written as numerator + gap, the gap vanishing exactly when x == y, so that
  // SSIM(x, x) == 1 holds bit-for-bit even with fused multiply-add contraction.
  const double a1 = 2.0 * mx * my + cfg.c1();
  const double b1 = a1 + (mx - my) * (mx - my);
  const double a2 = 2.0 * cxy + cfg.c2();
  const double b2 = a2 + ((vx - cxy) + (vy - cxy));
  return (a1 * a2) / (b1 * b2);
}

/// Correlate with the separable window over every valid position.
inline Grid<double> filter_valid(const Grid<double>& src, const std::vector<double>& g) {
  const std::size_t w = g.size();
  const std::size_t out_r = src.rows() - w + 1;
  const std::size_t out_c = src.cols() - w + 1;
  Grid<double> tmp(src.rows(), out_c);
  for (std::size_t i = 0; i < src.rows(); ++i) {
    for (std::size_t j = 0; j < out_c; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < w; ++k) acc += g[k] * src(i, j + k);
      tmp(i, j) = acc;
    }
  }
  Grid<double> out(out_r, out_c);
  for (std::size_t i = 0; i < out_r; ++i) {
    for (std::size_t j = 0; j < out_c; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < w; ++k) acc += g[k] * tmp(i + k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

/// Adjoint of filter_valid: scatter window-position values back onto the image.
inline Grid<double> filter_valid_adjoint(const Grid<double>& a, const std::vector<double>& g, std::size_t rows,
                                         std::size_t cols) {
  const std::size_t w = g.size();
  Grid<double> tmp(rows, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double v = a(i, j);
      for (std::size_t k = 0; k < w; ++k) tmp(i + k, j) += g[k] * v;
    }
  }
  Grid<double> out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double v = tmp(i, j);
      for (std::size_t k = 0; k < w; ++k) out(i, j + k) += g[k] * v;
    }
  }
  return out;
}

template <typename T>
Grid<double> as_double(const Grid<T>& g) {
  if constexpr (std::same_as<T, double>) {
    return g;
  } else {
    return g.template cast<double>();
  }
}

inline Grid<double> product(const Grid<double>& a, const Grid<double>& b) {
  Grid<double> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  return out;
}

/// Per-window moments over the whole image.
struct SsimField {
  Grid<double> mu_x, mu_y, var_x, var_y, cov_xy, ssim;
};

inline SsimField ssim_field(const Grid<double>& x, const Grid<double>& y, const LossConfig& cfg) {
  const auto w = static_cast<std::size_t>(cfg.window);
  if (!x.same_shape(y)) throw Error("SSIM images differ in shape");
  if (x.rows() < w || x.cols() < w) {
    throw Error("image " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                " is smaller than the SSIM window " + std::to_string(w));
  }
  const auto g = window_profile(cfg.window, cfg);
  SsimField f;
  f.mu_x = filter_valid(x, g);
  f.mu_y = filter_valid(y, g);
  const auto exx = filter_valid(product(x, x), g);
  const auto eyy = filter_valid(product(y, y), g);
  const auto exy = filter_valid(product(x, y), g);
  const std::size_t m = f.mu_x.size();
  f.var_x = Grid<double>(f.mu_x.rows(), f.mu_x.cols());
  f.var_y = f.var_x;
  f.cov_xy = f.var_x;
  f.ssim = f.var_x;
  for (std::size_t j = 0; j < m; ++j) {
    const double mx = f.mu_x.values()[j];
    const double my = f.mu_y.values()[j];
    f.var_x.values()[j] = exx.values()[j] - mx * mx;
    f.var_y.values()[j] = eyy.values()[j] - my * my;
    f.cov_xy.values()[j] = exy.values()[j] - mx * my;
    f.ssim.values()[j] = ssim_from_moments(mx, my, f.var_x.values()[j], f.var_y.values()[j], f.cov_xy.values()[j], cfg);
  }
  return f;
}

/// Unnormalised window weights 1 + sigma_x (or 1 when weighting is off).
inline Grid<double> raw_weights(const Grid<double>& var_x, bool weighted) {
  Grid<double> w(var_x.rows(), var_x.cols());
  for (std::size_t j = 0; j < w.size(); ++j) {
    w.values()[j] = weighted ? 1.0 + std::sqrt(std::max(0.0, var_x.values()[j])) : 1.0;
  }
  return w;
}

inline Grid<double> weights_from_variance(const Grid<double>& var_x, bool weighted) {
  auto w = raw_weights(var_x, weighted);
  double total = 0.0;
  for (double v : w.values()) total += v;
  for (auto& v : w.values()) v /= total;
  return w;
}

/// sum_j w_j s_j / sum_j w_j; dividing last keeps the result exactly 1 when every s_j is 1.
inline double weighted_average(const Grid<double>& raw_w, const Grid<double>& s) {
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < raw_w.size(); ++j) {
    num += raw_w.values()[j] * s.values()[j];
    den += raw_w.values()[j];
  }
  return num / den;
}

}  // namespace detail_loss

/// SSIM of one pair of windows, weighted by the configured kernel sized to the window.
template <typename T>
double ssim_window(const Grid<T>& x, const Grid<T>& y, const LossConfig& cfg) {
  const auto m = detail_loss::raw_moments(x, y, cfg);
  return detail_loss::ssim_from_moments(m.mx, m.my, m.vx, m.vy, m.cxy, cfg);
}

/// Normalised WSSIM window weights of the reference image (uniform when weighting is off).
template <typename T>
Grid<double> window_weights(const Grid<T>& reference, const LossConfig& cfg) {
  const auto x = detail_loss::as_double(reference);
  const auto f = detail_loss::ssim_field(x, x, cfg);
  return detail_loss::weights_from_variance(f.var_x, cfg.weighted_ssim);
}

template <typename T>
double mean_ssim(const Grid<T>& reference, const Grid<T>& candidate, const LossConfig& cfg) {
  const auto f = detail_loss::ssim_field(detail_loss::as_double(reference), detail_loss::as_double(candidate), cfg);
  double sum = 0.0;
  for (double v : f.ssim.values()) sum += v;
  return sum / static_cast<double>(f.ssim.size());
}

template <typename T>
double weighted_ssim(const Grid<T>& reference, const Grid<T>& candidate, const LossConfig& cfg) {
  const auto f = detail_loss::ssim_field(detail_loss::as_double(reference), detail_loss::as_double(candidate), cfg);
  return detail_loss::weighted_average(detail_loss::raw_weights(f.var_x, true), f.ssim);
}

template <typename T>
double weighted_mse(const Grid<T>& reference, const Grid<T>& candidate, const LossConfig& cfg) {
  if (!reference.same_shape(candidate)) throw Error("WMSE images differ in shape");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double p = static_cast<double>(reference.values()[i]);
    const double q = static_cast<double>(candidate.values()[i]);
    const double w = p < cfg.threshold ? 1.0 : cfg.rain_weight;
    num += w * (p - q) * (p - q);
    den += w;
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Per-frame objective and, on request, its gradient with respect to the candidate.
struct FrameLoss {
  double ssim_loss = 0.0;  // 1 - (W)SSIM
  double wmse = 0.0;
  double combined = 0.0;   // alpha * ssim_loss + (1 - alpha) * wmse
  Grid<double> grad;       // d combined / d candidate (empty when not requested)
};

template <typename T>
FrameLoss frame_loss(const Grid<T>& reference, const Grid<T>& candidate, const LossConfig& cfg, bool want_grad) {
  const auto x = detail_loss::as_double(reference);
  const auto y = detail_loss::as_double(candidate);
  FrameLoss out;
  if (want_grad) out.grad = Grid<double>(y.rows(), y.cols());

  const auto f = detail_loss::ssim_field(x, y, cfg);
  const auto w = detail_loss::weights_from_variance(f.var_x, cfg.weighted_ssim);
  out.ssim_loss = 1.0 - detail_loss::weighted_average(detail_loss::raw_weights(f.var_x, cfg.weighted_ssim), f.ssim);

  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = x.values()[i];
    const double q = y.values()[i];
    const double wi = p < cfg.threshold ? 1.0 : cfg.rain_weight;
    num += wi * (p - q) * (p - q);
    den += wi;
  }
  out.wmse = num / den;
  out.combined = cfg.alpha * out.ssim_loss + (1.0 - cfg.alpha) * out.wmse;
  if (!want_grad) return out;

  if (cfg.alpha > 0.0) {
    // d/dy_k sum_j w_j S_j = adj(P - Q mu_x - R mu_y) + x * adj(Q) + y * adj(R)
    Grid<double> base(w.rows(), w.cols()), q_map(w.rows(), w.cols()), r_map(w.rows(), w.cols());
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double mx = f.mu_x.values()[j];
      const double my = f.mu_y.values()[j];
      const double a1 = 2.0 * mx * my + cfg.c1();
      const double b1 = mx * mx + my * my + cfg.c1();
      const double a2 = 2.0 * f.cov_xy.values()[j] + cfg.c2();
      const double b2 = f.var_x.values()[j] + f.var_y.values()[j] + cfg.c2();
      const double sj = f.ssim.values()[j];
      const double wj = w.values()[j];
      const double p = wj * (2.0 * mx * a2 / (b1 * b2) - 2.0 * my * sj / b1);
      const double q = wj * 2.0 * a1 / (b1 * b2);
      const double r = -wj * 2.0 * sj / b2;
      base.values()[j] = p - q * mx - r * my;
      q_map.values()[j] = q;
      r_map.values()[j] = r;
    }
    const auto g = window_profile(cfg.window, cfg);
    const auto adj_base = detail_loss::filter_valid_adjoint(base, g, y.rows(), y.cols());
    const auto adj_q = detail_loss::filter_valid_adjoint(q_map, g, y.rows(), y.cols());
    const auto adj_r = detail_loss::filter_valid_adjoint(r_map, g, y.rows(), y.cols());
    for (std::size_t k = 0; k < y.size(); ++k) {
      const double ds = adj_base.values()[k] + x.values()[k] * adj_q.values()[k] + y.values()[k] * adj_r.values()[k];
      out.grad.values()[k] -= cfg.alpha * ds;
    }
  }
  if (cfg.alpha < 1.0) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double p = x.values()[i];
      const double wi = p < cfg.threshold ? 1.0 : cfg.rain_weight;
      out.grad.values()[i] += (1.0 - cfg.alpha) * (-2.0 * wi * (p - y.values()[i]) / den);
    }
  }
  return out;
}

/// Sum of squares over a collection of parameter tensors (any range of ranges of numbers).
template <typename Params>
double sum_of_squares(const Params& params) {
  double s = 0.0;
  for (const auto& tensor : params) {
    for (auto v : tensor) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return s;
}

/// Objective of one sample: mean per-frame combined loss over the output frames plus beta * sum theta^2.
template <typename T>
double total_loss(std::span<const Grid<T>> reference, std::span<const Grid<T>> candidate, double params_sum_sq,
                  const LossConfig& cfg) {
  detail::require(reference.size() == candidate.size() && !reference.empty(),
                  "total_loss needs matching, non-empty frame lists");
  double acc = 0.0;
  for (std::size_t f = 0; f < reference.size(); ++f) {
    acc += frame_loss(reference[f], candidate[f], cfg, false).combined;
  }
  return acc / static_cast<double>(reference.size()) + cfg.beta * params_sum_sq;
}

template <typename T, typename Params>
  requires std::ranges::range<Params>
double total_loss(std::span<const Grid<T>> reference, std::span<const Grid<T>> candidate, const Params& params,
                  const LossConfig& cfg) {
  return total_loss(reference, candidate, sum_of_squares(params), cfg);
}

}  // namespace nowcast::loss
