#pragma once

#include <functional>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "linecolor/extractors.hpp"

namespace linecolor::losses {

struct LossWeights {
  double lambda1 = 1e-4;   // adversarial term in the generator objective
  double lambda2 = 10.0;   // gradient penalty
  double eps_drift = 1e-3; // drift penalty on real scores

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
  static LossWeights from_json(const nlohmann::json& j, const LossWeights& defaults);
};

/// Scalar parts of one training step. `grad_penalty` and `drift` are stored
/// already weighted, so total_d = critic + grad_penalty + drift.
struct LossReport {
  double content = 0.0;
  double adv_g = 0.0;
  double critic = 0.0;
  double grad_penalty = 0.0;
  double drift = 0.0;
  double total_g = 0.0;
  double total_d = 0.0;

  nlohmann::json to_json() const;
  static LossReport from_json(const nlohmann::json& j);
  bool all_finite() const;
};

/// Mean squared distance between two feature maps, normalized by the number
/// of feature elements (c*h*w per item, averaged over the batch).
torch::Tensor feature_distance(const torch::Tensor& a, const torch::Tensor& b);

/// Perceptual content loss: feature_distance(F2(generated), F2(truth)).
torch::Tensor content_loss(const features::PerceptualFeatures& f2, const torch::Tensor& generated,
                           const torch::Tensor& truth);

/// -mean(fake_scores). Throws ArgumentError on an empty batch.
torch::Tensor adversarial_loss_g(const torch::Tensor& fake_scores);

/// mean(fake_scores) - mean(real_scores). Batch sizes must match.
torch::Tensor critic_loss(const torch::Tensor& fake_scores, const torch::Tensor& real_scores);

/// eps*fake + (1-eps)*real. `eps` is a scalar or one value per batch item.
torch::Tensor interpolate(const torch::Tensor& fake, const torch::Tensor& real, const torch::Tensor& eps);
torch::Tensor interpolate(const torch::Tensor& fake, const torch::Tensor& real, double eps);

/// Scores a batch of images given conditioning features, returning (N).
using Critic = std::function<torch::Tensor(const torch::Tensor& image, const torch::Tensor& features)>;

struct PenaltyTerms {
  torch::Tensor gradient_penalty;  // lambda2 * E[(||grad||_2 - 1)^2]
  torch::Tensor drift;             // eps_drift * E[real_scores^2]
  torch::Tensor total() const { return gradient_penalty + drift; }
};

/// Gradient penalty at `interp` (gradient taken w.r.t. the image only, with a
/// differentiable graph so it can be backpropagated into the critic) plus the
/// drift term on real scores. Throws NonFiniteError for a non-finite gradient.
PenaltyTerms penalty_terms(const Critic& critic, const torch::Tensor& interp,
                           const torch::Tensor& features, const torch::Tensor& real_scores,
                           const LossWeights& weights);

torch::Tensor penalty_loss(const Critic& critic, const torch::Tensor& interp,
                           const torch::Tensor& features, const torch::Tensor& real_scores,
                           const LossWeights& weights);

/// content + lambda1 * adv. Throws NonFiniteError on non-finite parts.
double generator_total(double content, double adv_g, const LossWeights& weights);
/// critic + grad_penalty + drift. Throws NonFiniteError on non-finite parts.
double discriminator_total(double critic, double grad_penalty, double drift);

/// Fills both totals from the parts.
LossReport finalize(LossReport parts, const LossWeights& weights);

}  // namespace linecolor::losses
