#include "jtss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "jtss/simd/kernels.hpp"

namespace jtss::losses {
namespace {

double norm(std::span<const double> v) { return std::sqrt(simd::dot(v.data(), v.data(), v.size())); }

}  // namespace

Matrix Affine::apply(const Matrix& x) const {
  if (x.cols() != in_dim() || bias.size() != out_dim())
    throw Error("projection expects " + std::to_string(in_dim()) + "-dim frames, got " + std::to_string(x.cols()));
  Matrix out(x.rows(), out_dim());
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t o = 0; o < out_dim(); ++o)
      out(t, o) = bias[o] + simd::dot(weight.row(o).data(), x.row(t).data(), in_dim());
  return out;
}

Matrix max_pool_frames(const Matrix& x, std::size_t t_target, std::vector<std::size_t>* argmax) {
  const std::size_t t_in = x.rows(), dim = x.cols();
  if (t_target < 1) throw Error("align: target length must be >= 1");
  if (t_in < t_target)
    throw Error("align: student has " + std::to_string(t_in) + " frames, fewer than the teacher's " +
                std::to_string(t_target));
  Matrix out(t_target, dim);
  if (argmax) argmax->assign(t_target * dim, 0);
  for (std::size_t i = 0; i < t_target; ++i) {
    const std::size_t start = i * t_in / t_target, stop = (i + 1) * t_in / t_target;
    for (std::size_t d = 0; d < dim; ++d) {
      std::size_t best = start;
      for (std::size_t t = start + 1; t < stop; ++t)
        if (x(t, d) > x(best, d)) best = t;
      out(i, d) = x(best, d);
      if (argmax) (*argmax)[i * dim + d] = best;
    }
  }
  return out;
}

Matrix max_pool_backward(const Matrix& grad_pooled, const std::vector<std::size_t>& argmax, std::size_t t_in) {
  Matrix g(t_in, grad_pooled.cols());
  for (std::size_t i = 0; i < grad_pooled.rows(); ++i)
    for (std::size_t d = 0; d < grad_pooled.cols(); ++d) g(argmax[i * grad_pooled.cols() + d], d) += grad_pooled(i, d);
  return g;
}

AffineGrad affine_backward(const Affine& map, const Matrix& input, const Matrix& grad_output) {
  AffineGrad g{Matrix(input.rows(), map.in_dim()), Matrix(map.out_dim(), map.in_dim()),
               std::vector<double>(map.out_dim(), 0.0)};
  for (std::size_t t = 0; t < input.rows(); ++t)
    for (std::size_t o = 0; o < map.out_dim(); ++o) {
      const double go = grad_output(t, o);
      g.bias[o] += go;
      simd::axpy(go, input.row(t).data(), g.weight.row(o).data(), map.in_dim());
      simd::axpy(go, map.weight.row(o).data(), g.input.row(t).data(), map.in_dim());
    }
  return g;
}

AlignedSequence align(const backbones::FrameMap& x, std::size_t t_target, const Affine* projection) {
  AlignedSequence out;
  out.source_tap = x.tap_layer;
  out.vectors = max_pool_frames(x.frames, t_target);
  if (projection) out.vectors = projection->apply(out.vectors);
  return out;
}

SpeechLoss speech_loss(const Matrix& z, const Matrix& v) {
  if (z.rows() != v.rows() || z.cols() != v.cols())
    throw Error("speech_loss: aligned student (" + std::to_string(z.rows()) + "x" + std::to_string(z.cols()) +
                ") and teacher (" + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) + ") differ in shape");
  SpeechLoss out;
  out.grad_z = Matrix(z.rows(), z.cols());
  std::vector<double> cosines(z.rows(), 0.0);
  std::vector<char> valid(z.rows(), 0);
  std::size_t used = 0;
  double sum = 0.0;
  for (std::size_t t = 0; t < z.rows(); ++t) {
    const double nz = norm(z.row(t)), nv = norm(v.row(t));
    if (nz == 0.0 || nv == 0.0) {
      ++out.skipped_frames;
      continue;
    }
    cosines[t] = simd::dot(z.row(t).data(), v.row(t).data(), z.cols()) / (nz * nv);
    valid[t] = 1;
    sum += cosines[t];
    ++used;
  }
  if (used == 0) return out;
  out.value = 1.0 - sum / static_cast<double>(used);
  const double scale = -1.0 / static_cast<double>(used);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    if (!valid[t]) continue;
    const double nz = norm(z.row(t)), nv = norm(v.row(t));
    auto g = out.grad_z.row(t);
    // d cos / d z = v / (|z||v|) - cos * z / |z|^2
    for (std::size_t d = 0; d < z.cols(); ++d)
      g[d] = scale * (v(t, d) / (nz * nv) - cosines[t] * z(t, d) / (nz * nz));
  }
  return out;
}

double batch_speech_loss(std::span<const double> per_utterance) {
  if (per_utterance.empty()) throw Error("batch_speech_loss: empty batch");
  double s = 0.0;
  for (double v : per_utterance) s += v;
  return s / static_cast<double>(per_utterance.size());
}

void validate(const AamConfig& cfg) {
  if (!(cfg.margin >= 0.0 && cfg.margin < std::numbers::pi / 2)) throw Error("AAM margin must lie in [0, pi/2)");
  if (!(cfg.scale > 0.0)) throw Error("AAM scale must be positive");
  if (cfg.num_classes < 1) throw Error("AAM needs at least one class");
}

AamLoss aam_softmax_loss(const Matrix& embeddings, std::span<const int> labels, const Matrix& weights,
                         const AamConfig& cfg) {
  validate(cfg);
  const std::size_t batch = embeddings.rows(), dim = embeddings.cols(), classes = weights.rows();
  if (batch == 0) throw Error("aam_softmax_loss: empty batch");
  if (labels.size() != batch) throw Error("aam_softmax_loss: one label per embedding required");
  if (classes != static_cast<std::size_t>(cfg.num_classes) || weights.cols() != dim)
    throw Error("aam_softmax_loss: class weight matrix shape does not match the configuration");

  std::vector<double> w_norm(classes);
  Matrix w_hat(classes, dim);
  for (std::size_t j = 0; j < classes; ++j) {
    w_norm[j] = norm(weights.row(j));
    if (w_norm[j] == 0.0) throw Error("aam_softmax_loss: class weight " + std::to_string(j) + " has zero norm");
    for (std::size_t d = 0; d < dim; ++d) w_hat(j, d) = weights(j, d) / w_norm[j];
  }

  const double cos_m = std::cos(cfg.margin), sin_m = std::sin(cfg.margin);
  const double threshold = std::cos(std::numbers::pi - cfg.margin);
  const double inv_batch = 1.0 / static_cast<double>(batch);

  AamLoss out{0.0, Matrix(batch, dim), Matrix(classes, dim)};
  Matrix grad_w_hat(classes, dim);
  std::vector<double> cosine(classes), logits(classes), dcos(classes);
  std::vector<double> e_hat(dim), grad_e_hat(dim);
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw Error("aam_softmax_loss: label " + std::to_string(y) + " outside 0.." + std::to_string(classes - 1));
    const double e_norm = norm(embeddings.row(i));
    if (e_norm == 0.0) throw Error("aam_softmax_loss: embedding " + std::to_string(i) + " has zero norm");
    for (std::size_t d = 0; d < dim; ++d) e_hat[d] = embeddings(i, d) / e_norm;

    for (std::size_t j = 0; j < classes; ++j) {
      cosine[j] = std::clamp(simd::dot(e_hat.data(), w_hat.row(j).data(), dim), -1.0, 1.0);
      logits[j] = cfg.scale * cosine[j];
    }
    const double c = cosine[y];
    const double sine = std::sqrt(std::max(0.0, 1.0 - c * c));
    double phi, dphi;
    if (c > threshold) {
      phi = c * cos_m - sine * sin_m;
      dphi = cos_m + c * sin_m / std::max(sine, 1e-6);
    } else {
      phi = c - cfg.margin * sin_m;
      dphi = 1.0;
    }
    logits[y] = cfg.scale * phi;

    const std::size_t top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    const double mx = logits[top];
    double rest = 0.0;
    for (std::size_t j = 0; j < classes; ++j)
      if (j != top) rest += std::exp(logits[j] - mx);
    out.value += ((mx - logits[y]) + std::log1p(rest)) * inv_batch;

    const double denom = 1.0 + rest;
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logits[j] - mx) / denom;
      const double dlogit = (p - (static_cast<int>(j) == y ? 1.0 : 0.0)) * inv_batch;
      dcos[j] = cfg.scale * dlogit * (static_cast<int>(j) == y ? dphi : 1.0);
    }

    std::fill(grad_e_hat.begin(), grad_e_hat.end(), 0.0);
    for (std::size_t j = 0; j < classes; ++j) {
      simd::axpy(dcos[j], w_hat.row(j).data(), grad_e_hat.data(), dim);
      simd::axpy(dcos[j], e_hat.data(), grad_w_hat.row(j).data(), dim);
    }
    const double radial = simd::dot(grad_e_hat.data(), e_hat.data(), dim);
    for (std::size_t d = 0; d < dim; ++d) out.grad_embeddings(i, d) = (grad_e_hat[d] - radial * e_hat[d]) / e_norm;
  }
  for (std::size_t j = 0; j < classes; ++j) {
    const double radial = simd::dot(grad_w_hat.row(j).data(), w_hat.row(j).data(), dim);
    for (std::size_t d = 0; d < dim; ++d)
      out.grad_weights(j, d) = (grad_w_hat(j, d) - radial * w_hat(j, d)) / w_norm[j];
  }
  return out;
}

double total_loss(double l_speaker, double l_speech, const LossWeights& w) { return l_speaker + w.lambda * l_speech; }

nn::Var speech_loss_node(const nn::Var& z, const std::vector<Matrix>& teacher, std::size_t* skipped) {
  const nn::Tensor& Z = z->value;
  if (teacher.size() != static_cast<std::size_t>(Z.b)) throw Error("speech_loss_node: one teacher sequence per utterance");
  std::vector<double> values(Z.b);
  auto grads = std::make_shared<std::vector<Matrix>>();
  for (int b = 0; b < Z.b; ++b) {
    Matrix zb(Z.t, Z.c);
    for (int c = 0; c < Z.c; ++c)
      for (int t = 0; t < Z.t; ++t) zb(t, c) = Z.at(b, c, t);
    SpeechLoss r = speech_loss(zb, teacher[b]);
    values[b] = r.value;
    if (skipped) *skipped += r.skipped_frames;
    grads->push_back(std::move(r.grad_z));
  }
  nn::Tensor out(1, 1, 1, batch_speech_loss(values));
  return nn::make_node(std::move(out), {z}, [z, grads](nn::Node& self) {
    nn::Tensor& gz = z->grad_buffer();
    const double g = self.grad.data[0] / gz.b;
    for (int b = 0; b < gz.b; ++b)
      for (int c = 0; c < gz.c; ++c)
        for (int t = 0; t < gz.t; ++t) gz.at(b, c, t) += g * (*grads)[b](t, c);
  });
}

nn::Var aam_loss_node(const nn::Var& embeddings, const nn::Var& weights, std::span<const int> labels,
                      const AamConfig& cfg) {
  const nn::Tensor& E = embeddings->value;
  const nn::Tensor& W = weights->value;
  Matrix e(E.b, E.c), w(W.b, W.c);
  for (int b = 0; b < E.b; ++b)
    for (int c = 0; c < E.c; ++c) e(b, c) = E.at(b, c, 0);
  for (int j = 0; j < W.b; ++j)
    for (int c = 0; c < W.c; ++c) w(j, c) = W.at(j, c, 0);
  auto r = std::make_shared<AamLoss>(aam_softmax_loss(e, labels, w, cfg));
  nn::Tensor out(1, 1, 1, r->value);
  return nn::make_node(std::move(out), {embeddings, weights}, [embeddings, weights, r](nn::Node& self) {
    const double g = self.grad.data[0];
    if (embeddings->requires_grad) {
      nn::Tensor& ge = embeddings->grad_buffer();
      for (int b = 0; b < ge.b; ++b)
        for (int c = 0; c < ge.c; ++c) ge.at(b, c, 0) += g * r->grad_embeddings(b, c);
    }
    if (weights->requires_grad) {
      nn::Tensor& gw = weights->grad_buffer();
      for (int j = 0; j < gw.b; ++j)
        for (int c = 0; c < gw.c; ++c) gw.at(j, c, 0) += g * r->grad_weights(j, c);
    }
  });
}

}  // namespace jtss::losses
