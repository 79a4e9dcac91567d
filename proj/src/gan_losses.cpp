#include "cpgan/gan_losses.hpp"

#include <cmath>

namespace cpgan {

namespace {

torch::Tensor scalar_tensor(double v) { return torch::tensor(v, torch::kFloat64); }

torch::Tensor zeros_like_batch(const torch::Tensor& ref) {
  return torch::zeros({ref.size(0)}, ref.options().requires_grad(false));
}

torch::Tensor per_sample_mean(const torch::Tensor& t) { return t.reshape({t.size(0), -1}).mean(1); }

}  // namespace

torch::Tensor bce(const torch::Tensor& prediction, const torch::Tensor& label) {
  auto p = prediction.clamp(kProbEpsilon, 1.0 - kProbEpsilon);
  return -(label * torch::log(p) + (1.0 - label) * torch::log(1.0 - p));
}

torch::Tensor bce(const torch::Tensor& prediction, double label) {
  auto p = prediction.clamp(kProbEpsilon, 1.0 - kProbEpsilon);
  return -(label * torch::log(p) + (1.0 - label) * torch::log(1.0 - p));
}

double bce(double prediction, double label) { return bce(scalar_tensor(prediction), label).item<double>(); }

torch::Tensor d_real_loss(const torch::Tensor& score) { return bce(score, kRealLabel); }
torch::Tensor d_fake_loss(const torch::Tensor& score) { return bce(score, 0.0); }

torch::Tensor g_fake_loss(const torch::Tensor& score, bool non_saturating) {
  return non_saturating ? bce(score, 1.0) : -bce(score, 0.0);
}

torch::Tensor g_anti_shortcut_loss(const torch::Tensor& score) { return bce(score, 0.0); }

double d_real_loss(double score) { return d_real_loss(scalar_tensor(score)).item<double>(); }
double d_fake_loss(double score) { return d_fake_loss(scalar_tensor(score)).item<double>(); }
double g_fake_loss(double score, bool non_saturating) {
  return g_fake_loss(scalar_tensor(score), non_saturating).item<double>();
}
double g_anti_shortcut_loss(double score) { return g_anti_shortcut_loss(scalar_tensor(score)).item<double>(); }

torch::Tensor mask_loss(const torch::Tensor& predicted, const torch::Tensor& target) {
  CPGAN_EXPECT(predicted.sizes() == target.sizes(), "mask_loss: shape mismatch");
  CPGAN_EXPECT(predicted.dim() >= 2, "mask_loss: expected a leading batch dimension");
  auto direct = per_sample_mean(bce(predicted, target));
  auto flipped = per_sample_mean(bce(predicted, 1.0 - target));
  return torch::minimum(direct, flipped);
}

double mask_loss(const CopyMask& predicted, const CopyMask& target) {
  CPGAN_EXPECT(predicted.height() == target.height() && predicted.width() == target.width(),
               "mask_loss: shape mismatch");
  auto p = to_tensor(predicted).to(torch::kFloat64).unsqueeze(0);
  auto t = to_tensor(target).to(torch::kFloat64).unsqueeze(0);
  return mask_loss(p, t).item<double>();
}

torch::Tensor LossTerms::g_total_per_sample() const { return g_fake + g_anti_shortcut; }

torch::Tensor LossTerms::d_total_per_sample() const {
  auto aux = mask_real + mask_fake + mask_anti_shortcut + mask_grounded_fake;
  return d_real + d_fake + d_grounded_fake + aux_weight * aux;
}

LossBundle LossTerms::bundle() const {
  auto m = [](const torch::Tensor& t) { return t.detach().mean().item<double>(); };
  LossBundle b;
  b.d_real = m(d_real);
  b.d_fake = m(d_fake);
  b.d_grounded_fake = m(d_grounded_fake);
  b.g_fake = m(g_fake);
  b.g_anti_shortcut = m(g_anti_shortcut);
  b.mask_real = m(mask_real);
  b.mask_fake = m(mask_fake);
  b.mask_anti_shortcut = m(mask_anti_shortcut);
  b.mask_grounded_fake = m(mask_grounded_fake);
  b.g_total = b.g_fake + b.g_anti_shortcut;
  b.d_total = b.d_real + b.d_fake + b.d_grounded_fake +
              aux_weight * (b.mask_real + b.mask_fake + b.mask_anti_shortcut + b.mask_grounded_fake);
  return b;
}

LossTerms assemble_losses(const BranchOutputs& o, const LossOptions& options) {
  CPGAN_EXPECT(o.real_score.defined() && o.fake_score.defined(), "assemble_losses: real and fake scores required");
  const auto zero = zeros_like_batch(o.fake_score);
  LossTerms t;
  t.aux_weight = options.aux_weight;
  t.d_real = d_real_loss(o.real_score);
  t.d_fake = d_fake_loss(o.fake_score);
  t.g_fake = g_fake_loss(o.fake_score, options.non_saturating);

  if (options.anti_shortcut) {
    CPGAN_EXPECT(o.anti_score.defined(), "assemble_losses: anti-shortcut score missing");
    t.g_anti_shortcut = g_anti_shortcut_loss(o.anti_score);
  } else {
    t.g_anti_shortcut = zero;
  }

  if (options.grounded_fakes) {
    CPGAN_EXPECT(o.grounded_score.defined(), "assemble_losses: grounded-fake score missing");
    t.d_grounded_fake = d_fake_loss(o.grounded_score);
  } else {
    t.d_grounded_fake = zero;
  }

  t.mask_real = t.mask_fake = t.mask_anti_shortcut = t.mask_grounded_fake = zero;
  if (options.mask_prediction) {
    CPGAN_EXPECT(o.real_mask.defined() && o.fake_mask.defined() && o.generator_mask.defined(),
                 "assemble_losses: mask predictions missing");
    const auto gen_target = o.generator_mask.detach();
    t.mask_real = mask_loss(o.real_mask, torch::zeros_like(o.real_mask).detach());
    t.mask_fake = mask_loss(o.fake_mask, gen_target);
    if (options.anti_shortcut) {
      CPGAN_EXPECT(o.anti_mask.defined(), "assemble_losses: anti-shortcut mask missing");
      t.mask_anti_shortcut = mask_loss(o.anti_mask, gen_target);
    }
    if (options.grounded_fakes) {
      CPGAN_EXPECT(o.grounded_mask.defined() && o.polygon_mask.defined(), "assemble_losses: grounded mask missing");
      t.mask_grounded_fake = mask_loss(o.grounded_mask, o.polygon_mask.detach());
    }
  }
  return t;
}

bool all_finite(const LossBundle& b) {
  for (double v : {b.d_real, b.d_fake, b.d_grounded_fake, b.g_fake, b.g_anti_shortcut, b.mask_real, b.mask_fake,
                   b.mask_anti_shortcut, b.mask_grounded_fake, b.g_total, b.d_total}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace cpgan
