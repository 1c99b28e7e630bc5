#pragma once
// Minimal reverse-mode autodiff over [batch, channel, time] tensors.
//
// A Var is a node in a dynamically built graph. Parameters are persistent leaf
// nodes with requires_grad set; every op creates a fresh node whose backward
// closure accumulates into the gradients of its inputs. The graph is released
// together with the last Var referencing it.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace jtss::nn {

struct Tensor {
  int b = 0, c = 0, t = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int b_, int c_, int t_, double fill = 0.0)
      : b(b_), c(c_), t(t_), data(static_cast<std::size_t>(b_) * c_ * t_, fill) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor& o) const { return b == o.b && c == o.c && t == o.t; }
  std::string shape_str() const;

  double* row(int bi, int ci) { return data.data() + (static_cast<std::size_t>(bi) * c + ci) * t; }
  const double* row(int bi, int ci) const {
    return data.data() + (static_cast<std::size_t>(bi) * c + ci) * t;
  }
  double& at(int bi, int ci, int ti) { return row(bi, ci)[ti]; }
  double at(int bi, int ci, int ti) const { return row(bi, ci)[ti]; }
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer, allocated as zeros on first use.
  Tensor& grad_buffer();
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Builds an op node; requires_grad is inherited from the inputs.
Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Reverse sweep from a scalar root (shape 1x1x1), seeding d(root) = seed.
void backward(const Var& root, double seed = 1.0);

// ---------------------------------------------------------------------------
// Ops. Shapes are [B, C, T] unless stated.

/// Dilated 1-D convolution. w is [C_out, C_in, K]; bias is [1, C_out, 1] or null.
/// Output length is T + 2 * pad - dilation * (K - 1).
Var conv1d(const Var& x, const Var& w, const Var& bias, int dilation, int pad);

Var add(const Var& a, const Var& b);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization. Training mode uses statistics over (B, T) and
/// updates the running estimates; inference mode uses the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

/// x[B, C, T] * s[B, C, 1], broadcast over time.
Var scale_channels(const Var& x, const Var& s);

/// Mean over time -> [B, C, 1].
Var mean_time(const Var& x);

/// [B, C, 1] -> [B, C, T] by repetition.
Var repeat_time(const Var& x, int t);

Var slice_channels(const Var& x, int begin, int end);
Var concat_channels(const std::vector<Var>& xs);

/// Softmax over the time axis, independently per (batch, channel).
Var softmax_time(const Var& x);

/// Weighted mean and standard deviation over time with per-channel weights
/// w[B, C, T] summing to one along time. Output [B, 2C, 1] = mean || std.
Var weighted_stats(const Var& x, const Var& w);

/// weighted_stats with uniform weights 1/T.
Var uniform_stats(const Var& x);

/// Adaptive temporal max-pooling to t_out bins; bin i covers
/// [floor(i T / t_out), floor((i + 1) T / t_out)). Requires T >= t_out >= 1.
Var max_pool_time(const Var& x, int t_out);

// ---------------------------------------------------------------------------
// Parameter bookkeeping

struct NamedParam {
  std::string name;
  Var var;
};

struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

/// Initializers for a [C_out, C_in, K] convolution: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_fan_in(int c_out, int c_in, int k, std::mt19937_64& rng);
Tensor uniform_bias(int c_out, int fan_in, std::mt19937_64& rng);

}  // namespace jtss::nn
