#pragma once

// Named parameter storage and the layer building blocks used by the models.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "nowcast/nn/ops.hpp"

namespace nowcast::nn {

inline constexpr float kLeakySlope = 0.2f;

struct Parameter {
  std::string name;
  Var var;
  bool decay = true;  // included in the L2 penalty
};

class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Var add(const std::string& name, Tensor init, bool decay) {
    if (index_.count(name)) throw Error("duplicate parameter name " + name);
    index_[name] = params_.size();
    params_.push_back({name, leaf(std::move(init)), decay});
    return params_.back().var;
  }

  Tensor& add_buffer(const std::string& name, Tensor init) {
    auto [it, inserted] = buffers_.emplace(name, std::move(init));
    if (!inserted) throw Error("duplicate buffer name " + name);
    return it->second;
  }

  const std::vector<Parameter>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  const Parameter& param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named " + name);
    return params_[it->second];
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var->grad = Tensor();
  }

  double decay_sum_squares() const {
    double s = 0.0;
    for (const auto& p : params_) {
      if (p.decay) s += p.var->value.sum_squares();
    }
    return s;
  }

  std::mt19937_64& rng() { return rng_; }

  Tensor normal(Shape shape, double stdev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stdev);
    for (auto& v : t.data) v = static_cast<float>(dist(rng_));
    return t;
  }

  Tensor uniform(Shape shape, double bound) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data) v = static_cast<float>(dist(rng_));
    return t;
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, Tensor> buffers_;
  std::mt19937_64 rng_;
};

/// He initialisation gain for a leaky-rectified layer.
inline double leaky_gain() { return std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope)); }

struct Conv2d {
  Var weight;
  Var bias;  // may be null
  int stride = 1;
  int pad = 0;

  static Conv2d make(ParameterStore& store, const std::string& name, int in, int out, int k, int stride, int pad,
                     bool with_bias, double gain = leaky_gain()) {
    Conv2d c;
    c.weight = store.add(name + ".weight", store.normal({out, in, k, k}, gain / std::sqrt(double(in) * k * k)), true);
    if (with_bias) c.bias = store.add(name + ".bias", Tensor({out}), false);
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }
};

struct ConvTranspose2d {
  Var weight;
  Var bias;
  int stride = 1;
  int pad = 0;

  static ConvTranspose2d make(ParameterStore& store, const std::string& name, int in, int out, int k, int stride,
                              int pad, bool with_bias, double gain = leaky_gain()) {
    ConvTranspose2d c;
    // Each output cell receives about in * (k / stride)^2 contributions.
    const double fan = double(in) * k * k / (double(stride) * stride);
    c.weight = store.add(name + ".weight", store.normal({in, out, k, k}, gain / std::sqrt(fan)), true);
    if (with_bias) c.bias = store.add(name + ".bias", Tensor({out}), false);
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Var operator()(const Var& x) const { return conv_transpose2d(x, weight, bias, stride, pad); }
};

struct BatchNorm {
  Var gamma;
  Var beta;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;

  static BatchNorm make(ParameterStore& store, const std::string& name, int channels) {
    BatchNorm b;
    b.gamma = store.add(name + ".gamma", Tensor({channels}, 1.0f), false);
    b.beta = store.add(name + ".beta", Tensor({channels}), false);
    b.running_mean = &store.add_buffer(name + ".running_mean", Tensor({channels}));
    b.running_var = &store.add_buffer(name + ".running_var", Tensor({channels}, 1.0f));
    return b;
  }

  Var operator()(const Var& x, bool training) const {
    return batch_norm(x, gamma, beta, *running_mean, *running_var, training);
  }
};

struct Linear {
  Var weight;
  Var bias;

  static Linear make(ParameterStore& store, const std::string& name, int in, int out, bool with_bias,
                     double gain = 1.0) {
    Linear l;
    l.weight = store.add(name + ".weight", store.normal({out, in}, gain / std::sqrt(double(in))), true);
    if (with_bias) l.bias = store.add(name + ".bias", Tensor({out}), false);
    return l;
  }

  Var operator()(const Var& x) const { return linear(x, weight, bias); }
};

struct LstmState {
  Var h;
  Var c;
};

namespace detail_layers {

/// Split fused gate pre-activations (i, f, g, o along axis 1) and apply the LSTM update.
inline LstmState lstm_update(const Var& gates, const Var& c_prev, int hidden) {
  const Var i = sigmoid(slice(gates, 1, 0, hidden));
  const Var f = sigmoid(slice(gates, 1, hidden, hidden));
  const Var g = tanh(slice(gates, 1, 2 * hidden, hidden));
  const Var o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  const Var c = add(mul(f, c_prev), mul(i, g));
  return {mul(o, tanh(c)), c};
}

inline void set_forget_bias(const Var& bias, int hidden, float value) {
  for (int k = hidden; k < 2 * hidden; ++k) bias->value[static_cast<std::size_t>(k)] = value;
}

}  // namespace detail_layers

/// Fully connected LSTM cell with fused gates over [x, h].
struct LstmCell {
  Linear gates;
  int input = 0;
  int hidden = 0;

  static LstmCell make(ParameterStore& store, const std::string& name, int input, int hidden) {
    LstmCell l;
    l.input = input;
    l.hidden = hidden;
    l.gates = Linear::make(store, name + ".gates", input + hidden, 4 * hidden, true);
    detail_layers::set_forget_bias(l.gates.bias, hidden, 1.0f);
    return l;
  }

  LstmState zero_state(int batch) const {
    return {constant(Tensor({batch, hidden})), constant(Tensor({batch, hidden}))};
  }

  LstmState operator()(const Var& x, const LstmState& s) const {
    return detail_layers::lstm_update(gates(concat({x, s.h}, 1)), s.c, hidden);
  }
};

/// Convolutional LSTM cell: 3x3 gate convolution over [x, h], same spatial size.
struct ConvLstmCell {
  Conv2d gates;
  int input = 0;
  int hidden = 0;

  static ConvLstmCell make(ParameterStore& store, const std::string& name, int input, int hidden, int k = 3) {
    ConvLstmCell l;
    l.input = input;
    l.hidden = hidden;
    l.gates = Conv2d::make(store, name + ".gates", input + hidden, 4 * hidden, k, 1, k / 2, true, 1.0);
    detail_layers::set_forget_bias(l.gates.bias, hidden, 1.0f);
    return l;
  }

  LstmState zero_state(int batch, int h, int w) const {
    return {constant(Tensor({batch, hidden, h, w})), constant(Tensor({batch, hidden, h, w}))};
  }

  LstmState operator()(const Var& x, const LstmState& s) const {
    const Var in = x ? concat({x, s.h}, 1) : s.h;
    return detail_layers::lstm_update(gates(in), s.c, hidden);
  }
};

}  // namespace nowcast::nn
