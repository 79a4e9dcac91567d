#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "cpgan/nets.hpp"

namespace cpgan {

inline constexpr double kEntropyWeight = 0.01;
inline constexpr double kDegenerateMass = 1e-12;

/// Joint softmax over all H*W positions of each map. N x H x W -> N x H x W.
torch::Tensor seediness_softmax(const torch::Tensor& logits);

/// Side of the vetoed square: min(H, W) / 3, rounded.
int dropout_square_side(int height, int width);

/// Zeroes a random square of each probability map and renormalizes. A map
/// whose remaining mass is below kDegenerateMass is passed through unchanged.
/// Square n is placed with seed derive_seed(rng_seed, {n}).
torch::Tensor structured_dropout(const torch::Tensor& policy, std::uint64_t rng_seed);

enum class SeedMode { sample, argmax };

struct SeedDecision {
  std::vector<Pixel> seeds;      // one per map
  torch::Tensor log_prob;        // N, log policy[seed], differentiable
  torch::Tensor policy;          // N x H x W, the distribution the seeds came from
  torch::Tensor value_at_seed;   // N, undefined when no value map is given
};

/// Sample mode draws seed n with seed derive_seed(rng_seed, {n}); argmax mode
/// breaks ties by the first row-major position.
SeedDecision pick_seed(const torch::Tensor& policy, SeedMode mode, std::uint64_t rng_seed,
                       const torch::Tensor& value_map = {});

/// Per-sample policy-gradient terms. Reward and advantage carry no gradient.
struct PolicyGradTerms {
  torch::Tensor reward;
  torch::Tensor advantage;
  torch::Tensor policy_term;   // -(r - v) * log pi(a)
  torch::Tensor entropy_term;  // -w * H(pi)
  torch::Tensor critic_term;   // (v - r)^2
};

/// Entropy of each map, N.
torch::Tensor policy_entropy(const torch::Tensor& policy);

PolicyGradTerms policy_grad_terms(const torch::Tensor& reward, const SeedDecision& decision,
                                  double entropy_weight = kEntropyWeight);

}  // namespace cpgan
