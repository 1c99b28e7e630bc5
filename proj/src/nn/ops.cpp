#include <algorithm>
#include <cmath>
#include <memory>

#include "jtss/common.hpp"
#include "jtss/nn.hpp"
#include "jtss/simd/kernels.hpp"

namespace jtss::nn {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw Error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// out[cols x rows] = in[rows x cols]^T
void transpose(const double* in, std::size_t rows, std::size_t cols, double* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock)
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = std::min(rows, r0 + kBlock), c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
    }
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv_from_output) {
  Tensor y = x->value;
  for (double& v : y.data) v = fwd(v);
  return make_node(std::move(y), {x}, [x, deriv_from_output](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = x->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx.data[i] += self.grad.data[i] * deriv_from_output(self.value.data[i], x->value.data[i]);
  });
}

}  // namespace

Var conv1d(const Var& x, const Var& w, const Var& bias, int dilation, int pad) {
  const Tensor& X = x->value;
  const Tensor& W = w->value;
  if (W.c != X.c)
    throw Error("conv1d: input has " + std::to_string(X.c) + " channels, kernel expects " +
                std::to_string(W.c));
  const int batch = X.b, c_in = X.c, t_in = X.t, c_out = W.b, k = W.t;
  const int t_out = t_in + 2 * pad - dilation * (k - 1);
  if (t_out < 1)
    throw Error("conv1d: input of " + std::to_string(t_in) + " frames is too short for the kernel context");
  if (bias && (bias->value.c != c_out)) throw Error("conv1d: bias size mismatch");

  const std::size_t rows = static_cast<std::size_t>(c_in) * k;
  const std::size_t ncols = static_cast<std::size_t>(batch) * t_out;
  auto cols = std::make_shared<std::vector<double>>(rows * ncols, 0.0);
  for (int ci = 0; ci < c_in; ++ci)
    for (int kk = 0; kk < k; ++kk) {
      const int offset = kk * dilation - pad;
      const int lo = std::max(0, -offset), hi = std::min(t_out, t_in - offset);
      for (int bb = 0; bb < batch; ++bb) {
        double* dst = cols->data() + (static_cast<std::size_t>(ci) * k + kk) * ncols +
                      static_cast<std::size_t>(bb) * t_out;
        const double* src = X.row(bb, ci);
        for (int to = lo; to < hi; ++to) dst[to] = src[to + offset];
      }
    }

  std::vector<double> y2(static_cast<std::size_t>(c_out) * ncols);
  simd::gemm(c_out, ncols, rows, W.data.data(), rows, cols->data(), ncols, y2.data(), ncols, false);
  Tensor Y(batch, c_out, t_out);
  for (int bb = 0; bb < batch; ++bb)
    for (int co = 0; co < c_out; ++co) {
      const double b0 = bias ? bias->value.data[co] : 0.0;
      const double* src = y2.data() + static_cast<std::size_t>(co) * ncols + static_cast<std::size_t>(bb) * t_out;
      double* dst = Y.row(bb, co);
      for (int to = 0; to < t_out; ++to) dst[to] = src[to] + b0;
    }

  return make_node(std::move(Y), {x, w, bias}, [=](Node& self) {
    const Tensor& G = self.grad;
    std::vector<double> dy2(static_cast<std::size_t>(c_out) * ncols);
    for (int bb = 0; bb < batch; ++bb)
      for (int co = 0; co < c_out; ++co)
        std::copy(G.row(bb, co), G.row(bb, co) + t_out,
                  dy2.data() + static_cast<std::size_t>(co) * ncols + static_cast<std::size_t>(bb) * t_out);

    if (bias && bias->requires_grad) {
      Tensor& gb = bias->grad_buffer();
      for (int co = 0; co < c_out; ++co) {
        double s = 0.0;
        const double* r = dy2.data() + static_cast<std::size_t>(co) * ncols;
        for (std::size_t j = 0; j < ncols; ++j) s += r[j];
        gb.data[co] += s;
      }
    }
    if (w->requires_grad) {
      std::vector<double> cols_t(rows * ncols);
      transpose(cols->data(), rows, ncols, cols_t.data());
      simd::gemm(c_out, rows, ncols, dy2.data(), ncols, cols_t.data(), rows,
                 w->grad_buffer().data.data(), rows, true);
    }
    if (x->requires_grad) {
      std::vector<double> w_t(rows * c_out);
      transpose(w->value.data.data(), c_out, rows, w_t.data());
      std::vector<double> dcols(rows * ncols);
      simd::gemm(rows, ncols, c_out, w_t.data(), c_out, dy2.data(), ncols, dcols.data(), ncols, false);
      Tensor& gx = x->grad_buffer();
      for (int ci = 0; ci < c_in; ++ci)
        for (int kk = 0; kk < k; ++kk) {
          const int offset = kk * dilation - pad;
          const int lo = std::max(0, -offset), hi = std::min(t_out, t_in - offset);
          for (int bb = 0; bb < batch; ++bb) {
            const double* src = dcols.data() + (static_cast<std::size_t>(ci) * k + kk) * ncols +
                                static_cast<std::size_t>(bb) * t_out;
            double* dst = gx.row(bb, ci);
            for (int to = lo; to < hi; ++to) dst[to + offset] += src[to];
          }
        }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor y = a->value;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += b->value.data[i];
  return make_node(std::move(y), {a, b}, [a, b](Node& self) {
    for (const Var& in : {a, b}) {
      if (!in->requires_grad) continue;
      Tensor& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i];
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double, double in) { return in > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double out, double) { return out * (1.0 - out); });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double out, double) { return 1.0 - out * out; });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
  const Tensor& X = x->value;
  const int batch = X.b, ch = X.c, len = X.t;
  if (gamma->value.c != ch || beta->value.c != ch) throw Error("batch_norm: parameter size mismatch");
  if (state.running_mean.empty()) {
    state.running_mean.assign(ch, 0.0);
    state.running_var.assign(ch, 1.0);
  }
  const std::size_t n = static_cast<std::size_t>(batch) * len;
  if (training && n < 2) throw Error("batch_norm: training mode needs more than one value per channel");

  auto xhat = std::make_shared<Tensor>(batch, ch, len);
  auto inv_std = std::make_shared<std::vector<double>>(ch);
  Tensor Y(batch, ch, len);
  for (int c = 0; c < ch; ++c) {
    double mean, var;
    if (training) {
      double s = 0.0;
      for (int bb = 0; bb < batch; ++bb)
        for (int t = 0; t < len; ++t) s += X.at(bb, c, t);
      mean = s / static_cast<double>(n);
      double ss = 0.0;
      for (int bb = 0; bb < batch; ++bb)
        for (int t = 0; t < len; ++t) {
          const double d = X.at(bb, c, t) - mean;
          ss += d * d;
        }
      var = ss / static_cast<double>(n);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                             state.momentum * var * static_cast<double>(n) / static_cast<double>(n - 1);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[c] = is;
    const double g = gamma->value.data[c], b0 = beta->value.data[c];
    for (int bb = 0; bb < batch; ++bb)
      for (int t = 0; t < len; ++t) {
        const double xh = (X.at(bb, c, t) - mean) * is;
        xhat->at(bb, c, t) = xh;
        Y.at(bb, c, t) = g * xh + b0;
      }
  }

  return make_node(std::move(Y), {x, gamma, beta}, [=](Node& self) {
    const Tensor& G = self.grad;
    for (int c = 0; c < ch; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int bb = 0; bb < batch; ++bb)
        for (int t = 0; t < len; ++t) {
          sum_g += G.at(bb, c, t);
          sum_gx += G.at(bb, c, t) * xhat->at(bb, c, t);
        }
      if (gamma->requires_grad) gamma->grad_buffer().data[c] += sum_gx;
      if (beta->requires_grad) beta->grad_buffer().data[c] += sum_g;
      if (!x->requires_grad) continue;
      Tensor& gx = x->grad_buffer();
      const double gam = gamma->value.data[c], is = (*inv_std)[c];
      if (training) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (int bb = 0; bb < batch; ++bb)
          for (int t = 0; t < len; ++t)
            gx.at(bb, c, t) += gam * is * inv_n *
                               (static_cast<double>(n) * G.at(bb, c, t) - sum_g - xhat->at(bb, c, t) * sum_gx);
      } else {
        for (int bb = 0; bb < batch; ++bb)
          for (int t = 0; t < len; ++t) gx.at(bb, c, t) += gam * is * G.at(bb, c, t);
      }
    }
  });
}

Var scale_channels(const Var& x, const Var& s) {
  const Tensor& X = x->value;
  const Tensor& S = s->value;
  if (S.b != X.b || S.c != X.c || S.t != 1) throw Error("scale_channels: scale must be [B, C, 1]");
  Tensor Y = X;
  for (int bb = 0; bb < X.b; ++bb)
    for (int c = 0; c < X.c; ++c) {
      double* r = Y.row(bb, c);
      const double f = S.at(bb, c, 0);
      for (int t = 0; t < X.t; ++t) r[t] *= f;
    }
  return make_node(std::move(Y), {x, s}, [x, s](Node& self) {
    const Tensor& X = x->value;
    for (int bb = 0; bb < X.b; ++bb)
      for (int c = 0; c < X.c; ++c) {
        const double* g = self.grad.row(bb, c);
        if (x->requires_grad) simd::axpy(s->value.at(bb, c, 0), g, x->grad_buffer().row(bb, c), X.t);
        if (s->requires_grad) s->grad_buffer().at(bb, c, 0) += simd::dot(g, X.row(bb, c), X.t);
      }
  });
}

Var mean_time(const Var& x) {
  const Tensor& X = x->value;
  Tensor Y(X.b, X.c, 1);
  for (int bb = 0; bb < X.b; ++bb)
    for (int c = 0; c < X.c; ++c) {
      double s = 0.0;
      for (int t = 0; t < X.t; ++t) s += X.at(bb, c, t);
      Y.at(bb, c, 0) = s / X.t;
    }
  return make_node(std::move(Y), {x}, [x](Node& self) {
    Tensor& gx = x->grad_buffer();
    for (int bb = 0; bb < gx.b; ++bb)
      for (int c = 0; c < gx.c; ++c) {
        const double g = self.grad.at(bb, c, 0) / gx.t;
        for (int t = 0; t < gx.t; ++t) gx.at(bb, c, t) += g;
      }
  });
}

Var repeat_time(const Var& x, int t_len) {
  const Tensor& X = x->value;
  if (X.t != 1) throw Error("repeat_time: input must have a single frame");
  Tensor Y(X.b, X.c, t_len);
  for (int bb = 0; bb < X.b; ++bb)
    for (int c = 0; c < X.c; ++c) std::fill(Y.row(bb, c), Y.row(bb, c) + t_len, X.at(bb, c, 0));
  return make_node(std::move(Y), {x}, [x, t_len](Node& self) {
    Tensor& gx = x->grad_buffer();
    for (int bb = 0; bb < gx.b; ++bb)
      for (int c = 0; c < gx.c; ++c) {
        double s = 0.0;
        const double* g = self.grad.row(bb, c);
        for (int t = 0; t < t_len; ++t) s += g[t];
        gx.at(bb, c, 0) += s;
      }
  });
}

Var slice_channels(const Var& x, int begin, int end) {
  const Tensor& X = x->value;
  if (begin < 0 || end > X.c || begin >= end) throw Error("slice_channels: invalid range");
  Tensor Y(X.b, end - begin, X.t);
  for (int bb = 0; bb < X.b; ++bb)
    std::copy(X.row(bb, begin), X.row(bb, begin) + static_cast<std::size_t>(end - begin) * X.t, Y.row(bb, 0));
  return make_node(std::move(Y), {x}, [x, begin, end](Node& self) {
    Tensor& gx = x->grad_buffer();
    const std::size_t n = static_cast<std::size_t>(end - begin) * gx.t;
    for (int bb = 0; bb < gx.b; ++bb) {
      const double* g = self.grad.row(bb, 0);
      double* dst = gx.row(bb, begin);
      for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
    }
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("concat_channels: no inputs");
  const int batch = xs[0]->value.b, len = xs[0]->value.t;
  int total = 0;
  for (const auto& x : xs) {
    if (x->value.b != batch || x->value.t != len) throw Error("concat_channels: shape mismatch");
    total += x->value.c;
  }
  Tensor Y(batch, total, len);
  int offset = 0;
  for (const auto& x : xs) {
    for (int bb = 0; bb < batch; ++bb)
      std::copy(x->value.row(bb, 0), x->value.row(bb, 0) + static_cast<std::size_t>(x->value.c) * len,
                Y.row(bb, offset));
    offset += x->value.c;
  }
  return make_node(std::move(Y), xs, [xs](Node& self) {
    int off = 0;
    for (const auto& x : xs) {
      const int c = x->value.c;
      if (x->requires_grad) {
        Tensor& gx = x->grad_buffer();
        const std::size_t n = static_cast<std::size_t>(c) * gx.t;
        for (int bb = 0; bb < gx.b; ++bb) {
          const double* g = self.grad.row(bb, off);
          double* dst = gx.row(bb, 0);
          for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
        }
      }
      off += c;
    }
  });
}

Var softmax_time(const Var& x) {
  const Tensor& X = x->value;
  Tensor Y(X.b, X.c, X.t);
  for (int bb = 0; bb < X.b; ++bb)
    for (int c = 0; c < X.c; ++c) {
      const double* in = X.row(bb, c);
      double* out = Y.row(bb, c);
      const double mx = *std::max_element(in, in + X.t);
      double s = 0.0;
      for (int t = 0; t < X.t; ++t) s += out[t] = std::exp(in[t] - mx);
      for (int t = 0; t < X.t; ++t) out[t] /= s;
    }
  return make_node(std::move(Y), {x}, [x](Node& self) {
    Tensor& gx = x->grad_buffer();
    for (int bb = 0; bb < gx.b; ++bb)
      for (int c = 0; c < gx.c; ++c) {
        const double* y = self.value.row(bb, c);
        const double* g = self.grad.row(bb, c);
        const double inner = simd::dot(g, y, gx.t);
        double* dst = gx.row(bb, c);
        for (int t = 0; t < gx.t; ++t) dst[t] += y[t] * (g[t] - inner);
      }
  });
}

namespace {

// Shared kernel for weighted and uniform statistics pooling. weights == nullptr
// means uniform 1/T.
Var stats_pool_impl(const Var& x, const Var& w) {
  const Tensor& X = x->value;
  if (w) require_same_shape(X, w->value, "weighted_stats");
  const int batch = X.b, ch = X.c, len = X.t;
  if (len < 1) throw Error("stats pooling needs at least one frame");
  const double uniform = 1.0 / len;
  Tensor Y(batch, 2 * ch, 1);
  for (int bb = 0; bb < batch; ++bb)
    for (int c = 0; c < ch; ++c) {
      const double* xr = X.row(bb, c);
      const double* wr = w ? w->value.row(bb, c) : nullptr;
      double mu = 0.0;
      for (int t = 0; t < len; ++t) mu += (wr ? wr[t] : uniform) * xr[t];
      double var = 0.0;
      for (int t = 0; t < len; ++t) {
        const double d = xr[t] - mu;
        var += (wr ? wr[t] : uniform) * d * d;
      }
      Y.at(bb, c, 0) = mu;
      Y.at(bb, ch + c, 0) = std::sqrt(std::max(var, 0.0));
    }
  return make_node(std::move(Y), {x, w}, [x, w, batch, ch, len, uniform](Node& self) {
    const Tensor& X = x->value;
    for (int bb = 0; bb < batch; ++bb)
      for (int c = 0; c < ch; ++c) {
        const double* xr = X.row(bb, c);
        const double* wr = w ? w->value.row(bb, c) : nullptr;
        const double mu = self.value.at(bb, c, 0);
        const double sd = self.value.at(bb, ch + c, 0);
        const double g_mu = self.grad.at(bb, c, 0);
        // d std / d var; zero-variance channels get the zero subgradient.
        const double g_var = sd > 0.0 ? self.grad.at(bb, ch + c, 0) * 0.5 / sd : 0.0;
        double s1 = 0.0;
        for (int t = 0; t < len; ++t) s1 += (wr ? wr[t] : uniform) * (xr[t] - mu);
        if (x->requires_grad) {
          double* gx = x->grad_buffer().row(bb, c);
          for (int t = 0; t < len; ++t) {
            const double wt = wr ? wr[t] : uniform;
            gx[t] += g_mu * wt + g_var * (2.0 * wt * (xr[t] - mu) - 2.0 * s1 * wt);
          }
        }
        if (w && w->requires_grad) {
          double* gw = w->grad_buffer().row(bb, c);
          for (int t = 0; t < len; ++t) {
            const double d = xr[t] - mu;
            gw[t] += g_mu * xr[t] + g_var * (d * d - 2.0 * s1 * xr[t]);
          }
        }
      }
  });
}

}  // namespace

Var weighted_stats(const Var& x, const Var& w) {
  if (!w) throw Error("weighted_stats: weights required");
  return stats_pool_impl(x, w);
}

Var uniform_stats(const Var& x) { return stats_pool_impl(x, nullptr); }

Var max_pool_time(const Var& x, int t_out) {
  const Tensor& X = x->value;
  if (t_out < 1 || X.t < t_out)
    throw Error("max_pool_time: cannot pool " + std::to_string(X.t) + " frames into " +
                std::to_string(t_out) + " (student shorter than teacher)");
  const int batch = X.b, ch = X.c, t_in = X.t;
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(batch) * ch * t_out);
  Tensor Y(batch, ch, t_out);
  for (int bb = 0; bb < batch; ++bb)
    for (int c = 0; c < ch; ++c) {
      const double* in = X.row(bb, c);
      for (int i = 0; i < t_out; ++i) {
        const int start = static_cast<int>(static_cast<long long>(i) * t_in / t_out);
        const int stop = static_cast<int>(static_cast<long long>(i + 1) * t_in / t_out);
        int best = start;
        for (int t = start + 1; t < stop; ++t)
          if (in[t] > in[best]) best = t;
        Y.at(bb, c, i) = in[best];
        (*argmax)[(static_cast<std::size_t>(bb) * ch + c) * t_out + i] = best;
      }
    }
  return make_node(std::move(Y), {x}, [x, argmax, batch, ch, t_out](Node& self) {
    Tensor& gx = x->grad_buffer();
    for (int bb = 0; bb < batch; ++bb)
      for (int c = 0; c < ch; ++c) {
        const double* g = self.grad.row(bb, c);
        double* dst = gx.row(bb, c);
        const int* am = argmax->data() + (static_cast<std::size_t>(bb) * ch + c) * t_out;
        for (int i = 0; i < t_out; ++i) dst[am[i]] += g[i];
      }
  });
}

}  // namespace jtss::nn
