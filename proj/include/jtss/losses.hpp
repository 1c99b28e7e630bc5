#pragma once
// Joint objective: L_total = L_speaker + lambda * L_speech, where L_speaker is
// the additive angular margin softmax over utterance embeddings and L_speech
// is one minus the mean per-frame cosine between the max-pooled (and
// projected) student frame map and the frozen teacher sequence.

#include <cstddef>
#include <span>
#include <vector>

#include "jtss/backbones.hpp"
#include "jtss/matrix.hpp"
#include "jtss/nn.hpp"

namespace jtss::losses {

/// Z = {z_t}: student frames pooled (and projected) to the teacher's length.
struct AlignedSequence {
  Matrix vectors;  // T x D~
  int source_tap = 0;
};

/// Trainable bridge D -> D~ applied per frame: z = W x + b, W is D~ x D.
struct Affine {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  /// T x D -> T x D~
  Matrix apply(const Matrix& x) const;
};

/// Adaptive max-pooling over time: output row i is the elementwise max of input
/// rows [floor(i T_x / T), floor((i + 1) T_x / T)). argmax (optional) receives
/// the winning input row for every output element (first row on ties).
Matrix max_pool_frames(const Matrix& x, std::size_t t_target, std::vector<std::size_t>* argmax = nullptr);

/// Scatter of grad_pooled back onto the rows selected by max_pool_frames.
Matrix max_pool_backward(const Matrix& grad_pooled, const std::vector<std::size_t>& argmax, std::size_t t_in);

struct AffineGrad {
  Matrix input;
  Matrix weight;
  std::vector<double> bias;
};
AffineGrad affine_backward(const Affine& map, const Matrix& input, const Matrix& grad_output);

/// Pools X to t_target frames; applies `projection` when given. Throws if the
/// student has fewer frames than the teacher or the projection does not fit.
AlignedSequence align(const backbones::FrameMap& x, std::size_t t_target, const Affine* projection);

struct SpeechLoss {
  double value = 0.0;
  Matrix grad_z;  // d value / d Z
  std::size_t skipped_frames = 0;
};

/// 1 - mean_t cos(z_t, v_t). Frames where either vector has zero norm are
/// skipped and the mean is taken over the remaining frames; if every frame is
/// skipped the loss is 0 with zero gradient.
SpeechLoss speech_loss(const Matrix& z, const Matrix& v);

/// Mean of per-utterance losses (frame mean first, then utterance mean).
double batch_speech_loss(std::span<const double> per_utterance);

struct AamConfig {
  double margin = 0.2;
  double scale = 30.0;
  int num_classes = 0;
};

void validate(const AamConfig& cfg);

struct AamLoss {
  double value = 0.0;
  Matrix grad_embeddings;  // B x E
  Matrix grad_weights;     // C x E
};

/// Additive angular margin softmax, averaged over the batch. embeddings is
/// B x E, weights is C x E; both are length-normalized internally. The target
/// logit uses cos(theta + m), replaced by cos(theta) - m sin(m) once
/// theta + m would exceed pi.
AamLoss aam_softmax_loss(const Matrix& embeddings, std::span<const int> labels, const Matrix& weights,
                         const AamConfig& cfg);

struct LossWeights {
  double lambda = 0.1;
};

/// l_speaker + lambda * l_speech.
double total_loss(double l_speaker, double l_speech, const LossWeights& w);

// ---------------------------------------------------------------------------
// Graph nodes used by the trainer.

/// Z: [B, D~, T]. teacher[b] is T x D~. Returns the batch-mean speech loss as
/// a scalar node; skipped frames are added to *skipped when given.
nn::Var speech_loss_node(const nn::Var& z, const std::vector<Matrix>& teacher, std::size_t* skipped = nullptr);

/// embeddings: [B, E, 1], weights: [C, E, 1] parameter.
nn::Var aam_loss_node(const nn::Var& embeddings, const nn::Var& weights, std::span<const int> labels,
                      const AamConfig& cfg);

}  // namespace jtss::losses
