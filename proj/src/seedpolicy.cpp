#include "cpgan/seedpolicy.hpp"

#include <cmath>

#include "cpgan/rng.hpp"

namespace cpgan {

torch::Tensor seediness_softmax(const torch::Tensor& logits) {
  CPGAN_EXPECT(logits.dim() == 3, "seediness_softmax: expected N x H x W");
  const auto n = logits.size(0);
  return torch::softmax(logits.reshape({n, -1}), 1).view_as(logits);
}

int dropout_square_side(int height, int width) {
  return static_cast<int>(std::lround(std::min(height, width) / 3.0));
}

torch::Tensor structured_dropout(const torch::Tensor& policy, std::uint64_t rng_seed) {
  CPGAN_EXPECT(policy.dim() == 3, "structured_dropout: expected N x H x W");
  const int n = static_cast<int>(policy.size(0));
  const int h = static_cast<int>(policy.size(1));
  const int w = static_cast<int>(policy.size(2));
  const int side = dropout_square_side(h, w);
  auto keep = torch::ones({n, h, w}, policy.options().requires_grad(false));
  if (side > 0) {
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed(rng_seed, {static_cast<std::uint64_t>(i)}));
      const int top = std::uniform_int_distribution<int>(0, h - side)(rng);
      const int left = std::uniform_int_distribution<int>(0, w - side)(rng);
      keep[i].slice(0, top, top + side).slice(1, left, left + side).fill_(0.0);
    }
  }
  auto kept = policy * keep;
  auto mass = kept.sum({1, 2}, /*keepdim=*/true);
  auto degenerate = mass < kDegenerateMass;
  return torch::where(degenerate, policy, kept / mass.clamp_min(kDegenerateMass));
}

SeedDecision pick_seed(const torch::Tensor& policy, SeedMode mode, std::uint64_t rng_seed,
                       const torch::Tensor& value_map) {
  CPGAN_EXPECT(policy.dim() == 3, "pick_seed: expected N x H x W");
  const auto n = policy.size(0), h = policy.size(1), w = policy.size(2);
  auto flat = policy.detach().reshape({n, -1}).to(torch::kFloat64).contiguous();
  auto acc = flat.accessor<double, 2>();
  SeedDecision d;
  std::vector<std::int64_t> chosen;
  for (std::int64_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::int64_t k = 0; k < h * w; ++k) total += acc[i][k];
    CPGAN_EXPECT(total > 0.0, "pick_seed: policy has no probability mass");
    std::int64_t pick = 0;
    if (mode == SeedMode::argmax) {
      for (std::int64_t k = 1; k < h * w; ++k)
        if (acc[i][k] > acc[i][pick]) pick = k;
    } else {
      Rng rng(derive_seed(rng_seed, {static_cast<std::uint64_t>(i)}));
      const double u = uniform01(rng) * total;
      double cum = 0.0;
      pick = -1;
      for (std::int64_t k = 0; k < h * w; ++k) {
        if (acc[i][k] <= 0.0) continue;
        cum += acc[i][k];
        pick = k;
        if (u < cum) break;
      }
    }
    chosen.push_back(pick);
    d.seeds.push_back({static_cast<int>(pick / w), static_cast<int>(pick % w)});
  }
  auto idx = torch::tensor(chosen, torch::kInt64).view({n, 1});
  d.policy = policy;
  d.log_prob = torch::log(policy.reshape({n, -1}).gather(1, idx).squeeze(1));
  if (value_map.defined()) {
    CPGAN_EXPECT(value_map.sizes() == policy.sizes(), "pick_seed: value map shape mismatch");
    d.value_at_seed = value_map.reshape({n, -1}).gather(1, idx).squeeze(1);
  }
  return d;
}

torch::Tensor policy_entropy(const torch::Tensor& policy) {
  const auto n = policy.size(0);
  auto p = policy.reshape({n, -1});
  // p * log p -> 0 at p = 0; the clamp keeps the gradient finite there.
  return -(p * torch::log(p.clamp_min(1e-30))).sum(1);
}

PolicyGradTerms policy_grad_terms(const torch::Tensor& reward, const SeedDecision& decision, double entropy_weight) {
  CPGAN_EXPECT(decision.log_prob.defined(), "policy_grad_terms: decision has no log_prob");
  PolicyGradTerms t;
  t.reward = reward.detach();
  const auto value = decision.value_at_seed.defined() ? decision.value_at_seed : torch::zeros_like(t.reward);
  t.advantage = (t.reward - value.detach()).detach();
  t.policy_term = -t.advantage * decision.log_prob;
  t.entropy_term = -entropy_weight * policy_entropy(decision.policy);
  t.critic_term = (value - t.reward).pow(2);
  return t;
}

}  // namespace cpgan
