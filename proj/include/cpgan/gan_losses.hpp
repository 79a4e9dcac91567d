#pragma once

#include <torch/torch.h>

#include "cpgan/imaging.hpp"

namespace cpgan {

/// Predictions are clamped to [eps, 1 - eps] before any logarithm.
inline constexpr double kProbEpsilon = 1e-7;
/// Smoothed target for real images (discriminator real branch only).
inline constexpr double kRealLabel = 0.75;
inline constexpr double kDefaultAuxWeight = 0.1;

/// Element-wise cross entropy -l*log(p) - (1-l)*log(1-p).
torch::Tensor bce(const torch::Tensor& prediction, const torch::Tensor& label);
torch::Tensor bce(const torch::Tensor& prediction, double label);
double bce(double prediction, double label);

torch::Tensor d_real_loss(const torch::Tensor& score);
torch::Tensor d_fake_loss(const torch::Tensor& score);
/// Negated discriminator fake loss; with `non_saturating` the generator
/// instead minimizes bce(score, 1).
torch::Tensor g_fake_loss(const torch::Tensor& score, bool non_saturating = false);
torch::Tensor g_anti_shortcut_loss(const torch::Tensor& score);

double d_real_loss(double score);
double d_fake_loss(double score);
double g_fake_loss(double score, bool non_saturating = false);
double g_anti_shortcut_loss(double score);

/// Complement-invariant mask loss, one value per sample: the smaller of the
/// mean pixel-wise cross entropies against `target` and `1 - target`.
/// Shapes N x 1 x H x W (or N x H x W).
torch::Tensor mask_loss(const torch::Tensor& predicted, const torch::Tensor& target);
double mask_loss(const CopyMask& predicted, const CopyMask& target);

struct LossOptions {
  double aux_weight = kDefaultAuxWeight;
  bool anti_shortcut = true;
  bool grounded_fakes = true;
  bool mask_prediction = true;
  bool non_saturating = false;
};

/// Batch means of every named loss.
struct LossBundle {
  double d_real = 0.0;
  double d_fake = 0.0;
  double d_grounded_fake = 0.0;
  double g_fake = 0.0;
  double g_anti_shortcut = 0.0;
  double mask_real = 0.0;
  double mask_fake = 0.0;
  double mask_anti_shortcut = 0.0;
  double mask_grounded_fake = 0.0;
  double g_total = 0.0;
  double d_total = 0.0;
};

/// Discriminator outputs for each branch. Scores are N, mask predictions are
/// N x 1 x H x W. Branch tensors may be left undefined when the branch is
/// disabled in LossOptions.
struct BranchOutputs {
  torch::Tensor real_score, fake_score, anti_score, grounded_score;
  torch::Tensor real_mask, fake_mask, anti_mask, grounded_mask;
  torch::Tensor generator_mask;  // m_theta(source): target of fake and anti-shortcut masks
  torch::Tensor polygon_mask;    // target of the grounded-fake mask
};

/// Per-sample loss terms (shape N each). Disabled terms are zeros.
struct LossTerms {
  torch::Tensor d_real, d_fake, d_grounded_fake;
  torch::Tensor g_fake, g_anti_shortcut;
  torch::Tensor mask_real, mask_fake, mask_anti_shortcut, mask_grounded_fake;
  double aux_weight = kDefaultAuxWeight;

  torch::Tensor g_total_per_sample() const;
  torch::Tensor d_total_per_sample() const;
  torch::Tensor g_total() const { return g_total_per_sample().mean(); }
  torch::Tensor d_total() const { return d_total_per_sample().mean(); }
  LossBundle bundle() const;
};

LossTerms assemble_losses(const BranchOutputs& outputs, const LossOptions& options = {});

bool all_finite(const LossBundle& bundle);

}  // namespace cpgan
