#include "linecolor/losses.hpp"

#include <cmath>
#include <string>

#include <torch/torch.h>

#include "linecolor/errors.hpp"

namespace linecolor::losses {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && eps_drift >= 0.0)) {
    throw ArgumentError("loss weights must be non-negative");
  }
}

nlohmann::json LossWeights::to_json() const {
  return {{"lambda1", lambda1}, {"lambda2", lambda2}, {"eps_drift", eps_drift}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) { return from_json(j, LossWeights{}); }

LossWeights LossWeights::from_json(const nlohmann::json& j, const LossWeights& d) {
  LossWeights w{j.value("lambda1", d.lambda1), j.value("lambda2", d.lambda2),
                j.value("eps_drift", d.eps_drift)};
  w.validate();
  return w;
}

nlohmann::json LossReport::to_json() const {
  return {{"content", content},   {"adv_g", adv_g},       {"critic", critic},
          {"grad_penalty", grad_penalty}, {"drift", drift}, {"total_g", total_g},
          {"total_d", total_d}};
}

LossReport LossReport::from_json(const nlohmann::json& j) {
  LossReport r;
  r.content = j.at("content").get<double>();
  r.adv_g = j.at("adv_g").get<double>();
  r.critic = j.at("critic").get<double>();
  r.grad_penalty = j.at("grad_penalty").get<double>();
  r.drift = j.at("drift").get<double>();
  r.total_g = j.at("total_g").get<double>();
  r.total_d = j.at("total_d").get<double>();
  return r;
}

bool LossReport::all_finite() const {
  for (double v : {content, adv_g, critic, grad_penalty, drift, total_g, total_d}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

torch::Tensor feature_distance(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw ArgumentError("feature maps differ in shape");
  }
  return (a - b).pow(2).mean();
}

torch::Tensor content_loss(const features::PerceptualFeatures& f2, const torch::Tensor& generated,
                           const torch::Tensor& truth) {
  if (generated.sizes() != truth.sizes()) {
    throw ArgumentError("content_loss: generated and ground-truth images differ in shape");
  }
  return feature_distance(f2(generated), f2(truth));
}

torch::Tensor adversarial_loss_g(const torch::Tensor& fake_scores) {
  if (fake_scores.numel() == 0) {
    throw ArgumentError("adversarial_loss_g: empty score batch");
  }
  return -fake_scores.mean();
}

torch::Tensor critic_loss(const torch::Tensor& fake_scores, const torch::Tensor& real_scores) {
  if (fake_scores.numel() == 0 || fake_scores.numel() != real_scores.numel()) {
    throw ArgumentError("critic_loss: fake and real batches must be non-empty and equal in size (" +
                        std::to_string(fake_scores.numel()) + " vs " +
                        std::to_string(real_scores.numel()) + ")");
  }
  return fake_scores.mean() - real_scores.mean();
}

torch::Tensor interpolate(const torch::Tensor& fake, const torch::Tensor& real, const torch::Tensor& eps) {
  if (fake.sizes() != real.sizes()) {
    throw ArgumentError("interpolate: fake and real images differ in shape");
  }
  auto e = eps;
  if (e.dim() == 1 && fake.dim() >= 2) {
    std::vector<std::int64_t> shape(fake.dim(), 1);
    shape[0] = e.size(0);
    e = e.reshape(shape);
  }
  e = e.to(fake.scalar_type());
  return e * fake + (1.0 - e) * real;
}

torch::Tensor interpolate(const torch::Tensor& fake, const torch::Tensor& real, double eps) {
  return interpolate(fake, real, torch::full({}, eps, fake.options()));
}

PenaltyTerms penalty_terms(const Critic& critic, const torch::Tensor& interp,
                           const torch::Tensor& features, const torch::Tensor& real_scores,
                           const LossWeights& weights) {
  auto x = interp.detach().requires_grad_(true);
  auto scores = critic(x, features.detach());
  auto grad = torch::autograd::grad({scores.sum()}, {x}, {}, /*retain_graph=*/true,
                                    /*create_graph=*/true)[0];
  if (!torch::isfinite(grad).all().item<bool>()) {
    throw NonFiniteError("gradient penalty: critic gradient is not finite");
  }
  auto norms = grad.flatten(1).norm(2, 1);
  PenaltyTerms terms;
  terms.gradient_penalty = weights.lambda2 * (norms - 1.0).pow(2).mean();
  terms.drift = weights.eps_drift * real_scores.pow(2).mean();
  return terms;
}

torch::Tensor penalty_loss(const Critic& critic, const torch::Tensor& interp,
                           const torch::Tensor& features, const torch::Tensor& real_scores,
                           const LossWeights& weights) {
  return penalty_terms(critic, interp, features, real_scores, weights).total();
}

double generator_total(double content, double adv_g, const LossWeights& weights) {
  if (!std::isfinite(content) || !std::isfinite(adv_g)) {
    throw NonFiniteError("generator loss has a non-finite part");
  }
  return content + weights.lambda1 * adv_g;
}

double discriminator_total(double critic, double grad_penalty, double drift) {
  if (!std::isfinite(critic) || !std::isfinite(grad_penalty) || !std::isfinite(drift)) {
    throw NonFiniteError("discriminator loss has a non-finite part");
  }
  return critic + grad_penalty + drift;
}

LossReport finalize(LossReport parts, const LossWeights& weights) {
  parts.total_g = generator_total(parts.content, parts.adv_g, weights);
  parts.total_d = discriminator_total(parts.critic, parts.grad_penalty, parts.drift);
  return parts;
}

}  // namespace linecolor::losses
