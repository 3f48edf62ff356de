#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "nowcast/nn/optim.hpp"

using namespace nowcast;
using namespace nowcast::nn;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.data) v = static_cast<float>(u(rng));
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Compares the backward pass against central differences of <f(inputs), R> for a fixed random
// projection R. Returns the worst norm-relative error over the inputs.
double grad_check(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Tensor> inputs,
                  std::uint64_t seed = 7, double h = 1e-2) {
  std::mt19937_64 rng(seed);
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(leaf(t));
  Var out = f(vars);
  const Tensor R = random_tensor(rng, out->shape());
  backward(out, &R);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto probe = [&](float delta) {
        std::vector<Var> vs;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == k) t[i] += delta;
          vs.push_back(constant(std::move(t)));
        }
        return dot(f(vs)->value, R);
      };
      const double fd = (probe(static_cast<float>(h)) - probe(static_cast<float>(-h))) / (2 * h);
      const double an = vars[k]->grad.empty() ? 0.0 : vars[k]->grad[i];
      diff += (fd - an) * (fd - an);
      norm += fd * fd;
    }
    worst = std::max(worst, norm > 0 ? std::sqrt(diff / norm) : std::sqrt(diff));
  }
  return worst;
}

// Direct 7-loop convolution used as the oracle for the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), k = w.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Tensor out({N, O, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double acc = b ? (*b)[static_cast<std::size_t>(o)] : 0.0;
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int r = i * stride - pad + ki, s = j * stride - pad + kj;
                if (r < 0 || r >= H || s < 0 || s >= W) continue;
                acc += static_cast<double>(x.at4(n, c, r, s)) * w.at4(o, c, ki, kj);
              }
          out.at4(n, o, i, j) = static_cast<float>(acc);
        }
  return out;
}

}  // namespace

TEST(Conv2d, MatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  for (auto [stride, pad, k] : std::vector<std::array<int, 3>>{{1, 1, 3}, {2, 1, 4}, {1, 0, 1}, {2, 0, 3}}) {
    const auto x = random_tensor(rng, {2, 3, 9, 8});
    const auto w = random_tensor(rng, {4, 3, k, k});
    const auto b = random_tensor(rng, {4});
    const auto got = conv2d(constant(x), constant(w), constant(b), stride, pad)->value;
    const auto want = naive_conv(x, w, &b, stride, pad);
    ASSERT_EQ(got.shape, want.shape);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
  }
}

TEST(ConvTranspose2d, IsTheAdjointOfConv2d) {
  std::mt19937_64 rng(2);
  for (auto [stride, pad, k] : std::vector<std::array<int, 3>>{{2, 1, 4}, {1, 1, 3}, {1, 0, 5}}) {
    const auto x = random_tensor(rng, {2, 3, 8, 8});
    const auto w = random_tensor(rng, {5, 3, k, k});
    const auto y = conv2d(constant(x), constant(w), nullptr, stride, pad)->value;
    const auto r = random_tensor(rng, y.shape);
    const auto back = conv_transpose2d(constant(r), constant(w), nullptr, stride, pad)->value;
    ASSERT_EQ(back.shape, x.shape);
    EXPECT_NEAR(dot(y, r), dot(x, back), 1e-4 * (1.0 + std::abs(dot(y, r))));
  }
}

TEST(ConvTranspose2d, FourByFourStrideTwoDoublesTheSide) {
  const auto y = conv_transpose2d(constant(Tensor({1, 2, 5, 7})), constant(Tensor({2, 3, 4, 4})), nullptr, 2, 1);
  EXPECT_EQ(y->shape(), (Shape{1, 3, 10, 14}));
  const auto z = conv_transpose2d(constant(Tensor({1, 2, 1, 1})), constant(Tensor({2, 3, 4, 4})), nullptr, 1, 0);
  EXPECT_EQ(z->shape(), (Shape{1, 3, 4, 4}));
}

TEST(Gradients, Elementwise) {
  std::mt19937_64 rng(3);
  const auto a = random_tensor(rng, {2, 3, 4});
  const auto b = random_tensor(rng, {2, 3, 4});
  EXPECT_LT(grad_check([](auto& v) { return add(v[0], v[1]); }, {a, b}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return sub(v[0], v[1]); }, {a, b}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return mul(v[0], v[1]); }, {a, b}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return scale(v[0], -1.5f); }, {a}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return add_scalar(v[0], 2.0f); }, {a}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return tanh(v[0]); }, {a}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return sigmoid(v[0]); }, {a}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return exp(v[0]); }, {a}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return square(v[0]); }, {a}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return leaky_relu(v[0]); }, {a}, 7, 1e-3), 1e-2);
  EXPECT_LT(grad_check([](auto& v) { return mean(v[0]); }, {a}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return reshape(v[0], {6, 4}); }, {a}), 1e-3);
}

TEST(Gradients, ConcatAndSlice) {
  std::mt19937_64 rng(4);
  const auto a = random_tensor(rng, {2, 3, 4});
  const auto b = random_tensor(rng, {2, 2, 4});
  EXPECT_LT(grad_check([](auto& v) { return concat({v[0], v[1]}, 1); }, {a, b}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return slice(v[0], 1, 1, 2); }, {a}), 1e-3);
  EXPECT_LT(grad_check([](auto& v) { return slice(v[0], -1, 2, 2); }, {a}), 1e-3);
  const auto c = concat({constant(a), constant(b)}, 1);
  EXPECT_EQ(c->shape(), (Shape{2, 5, 4}));
  EXPECT_EQ(slice(c, 1, 3, 2)->value, b);
  EXPECT_THROW(concat({constant(a), constant(random_tensor(rng, {2, 3, 5}))}, 1), Error);
}

TEST(Gradients, ConvolutionsAndLinear) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor(rng, {2, 3, 6, 6});
  const auto w = random_tensor(rng, {4, 3, 3, 3});
  const auto b = random_tensor(rng, {4});
  EXPECT_LT(grad_check([](auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); }, {x, w, b}), 1e-3);
  const auto w4 = random_tensor(rng, {4, 3, 4, 4});
  EXPECT_LT(grad_check([](auto& v) { return conv2d(v[0], v[1], v[2], 2, 1); }, {x, w4, b}), 1e-3);
  const auto wt = random_tensor(rng, {3, 4, 4, 4});
  EXPECT_LT(grad_check([](auto& v) { return conv_transpose2d(v[0], v[1], v[2], 2, 1); }, {x, wt, b}), 1e-3);
  const auto xl = random_tensor(rng, {3, 5});
  const auto wl = random_tensor(rng, {4, 5});
  EXPECT_LT(grad_check([](auto& v) { return linear(v[0], v[1], v[2]); }, {xl, wl, b}), 1e-3);
}

TEST(Gradients, PoolingUpsamplingAndBatchNorm) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor(rng, {2, 3, 4, 6});
  EXPECT_LT(grad_check([](auto& v) { return max_pool2(v[0]); }, {x}, 7, 1e-3), 1e-2);
  EXPECT_LT(grad_check([](auto& v) { return upsample2(v[0]); }, {x}), 1e-3);
  const auto g = random_tensor(rng, {3}, 0.5, 1.5);
  const auto b = random_tensor(rng, {3});
  EXPECT_LT(grad_check(
                [](auto& v) {
                  Tensor rm({3}), rv({3}, 1.0f);
                  return batch_norm(v[0], v[1], v[2], rm, rv, true);
                },
                {x, g, b}),
            1e-2);
  const auto x2 = random_tensor(rng, {5, 3});
  EXPECT_LT(grad_check(
                [](auto& v) {
                  Tensor rm({3}), rv({3}, 1.0f);
                  return batch_norm(v[0], v[1], v[2], rm, rv, true);
                },
                {x2, g, b}),
            1e-2);
}

TEST(BatchNorm, TrainingOutputIsStandardised) {
  std::mt19937_64 rng(7);
  const auto x = random_tensor(rng, {4, 2, 5, 5}, 3.0, 9.0);
  Tensor rm({2}), rv({2}, 1.0f);
  const auto y = batch_norm(constant(x), constant(Tensor({2}, 1.0f)), constant(Tensor({2})), rm, rv, true)->value;
  for (int c = 0; c < 2; ++c) {
    double s = 0, sq = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        const double v = y[(static_cast<std::size_t>(n) * 2 + c) * 25 + i];
        s += v;
        sq += v * v;
      }
    EXPECT_NEAR(s / 100, 0.0, 1e-5);
    EXPECT_NEAR(sq / 100, 1.0, 1e-3);
    EXPECT_GT(rm[static_cast<std::size_t>(c)], 0.3f);  // moved 10% toward a mean near 6
  }
}

TEST(MaxPoolAndUpsample, Values) {
  const Tensor x({1, 1, 2, 4}, std::vector<float>{1, 5, -1, -2, 3, 2, -3, -4});
  EXPECT_EQ(max_pool2(constant(x))->value.to_vector(), (std::vector<float>{5, -1}));
  const Tensor y({1, 1, 1, 2}, std::vector<float>{1, 2});
  EXPECT_EQ(upsample2(constant(y))->value.to_vector(), (std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2}));
}

TEST(Autograd, SharedSubgraphAccumulates) {
  auto x = leaf(Tensor({1}, 3.0f));
  auto y = mul(x, x);           // x^2
  auto z = add(y, scale(x, 2));  // x^2 + 2x
  backward(z);
  EXPECT_FLOAT_EQ(x->grad[0], 8.0f);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  auto x = leaf(Tensor({2}, 1.0f));
  Var y;
  {
    NoGradGuard guard;
    y = tanh(x);
  }
  EXPECT_FALSE(y->requires_grad);
  EXPECT_TRUE(y->inputs.empty());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore store(1);
  auto p = store.add("p", Tensor({3}, std::vector<float>{1, 2, 3}), true);
  Adam opt(store, {0.1, 0.9, 0.999, 1e-8});
  p->grad = Tensor({3}, std::vector<float>{0.5f, -2.0f, 0.0f});
  opt.step(store);
  EXPECT_NEAR(p->value[0], 0.9, 1e-6);
  EXPECT_NEAR(p->value[1], 2.1, 1e-6);
  EXPECT_NEAR(p->value[2], 3.0, 1e-6);
}

TEST(Adam, ZeroLearningRateLeavesParametersUnchanged) {
  ParameterStore store(1);
  auto p = store.add("p", Tensor({2}, std::vector<float>{1, -1}), true);
  Adam opt(store, {0.0});
  for (int i = 0; i < 5; ++i) {
    p->grad = Tensor({2}, std::vector<float>{0.3f, 7.0f});
    opt.step(store);
  }
  EXPECT_EQ(p->value.to_vector(), (std::vector<float>{1, -1}));
}

TEST(L2AndClipping, GradientHelpers) {
  ParameterStore store(1);
  auto w = store.add("w", Tensor({2}, std::vector<float>{1, -2}), true);
  auto b = store.add("b", Tensor({1}, 5.0f), false);
  EXPECT_DOUBLE_EQ(store.decay_sum_squares(), 5.0);
  add_l2_gradient(store, 0.5);
  EXPECT_EQ(w->grad.to_vector(), (std::vector<float>{1, -2}));
  EXPECT_TRUE(b->grad.empty());
  w->grad = Tensor({2}, std::vector<float>{3, 4});
  b->grad = Tensor({1}, 0.0f);
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_NEAR(w->grad[0], 0.6, 1e-6);
  EXPECT_NEAR(w->grad[1], 0.8, 1e-6);
}

TEST(Layers, LstmCellForgetBiasAndShapes) {
  ParameterStore store(3);
  const auto cell = LstmCell::make(store, "lstm", 5, 4);
  EXPECT_EQ(cell.gates.bias->value[4], 1.0f);
  EXPECT_EQ(cell.gates.bias->value[0], 0.0f);
  std::mt19937_64 rng(1);
  const auto s = cell(constant(random_tensor(rng, {2, 5})), cell.zero_state(2));
  EXPECT_EQ(s.h->shape(), (Shape{2, 4}));
  const auto conv = ConvLstmCell::make(store, "clstm", 3, 2);
  const auto cs = conv(constant(random_tensor(rng, {1, 3, 6, 6})), conv.zero_state(1, 6, 6));
  EXPECT_EQ(cs.c->shape(), (Shape{1, 2, 6, 6}));
  EXPECT_EQ(store.count(), (9u * 16 + 16) + (5u * 8 * 9 + 8));
}
