#include <doctest.h>

#include <cmath>

#include "cpgan/seedpolicy.hpp"
#include "oracles.hpp"
#include "stats.hpp"

using namespace cpgan;

namespace {

const std::vector<oracle::Real> kToyReward{0.1L, 0.9L, 0.3L, 0.5L, 0.2L, 0.8L, 0.0L, 0.6L, 0.4L};

// Monte Carlo estimate of the expected-reward gradient from the policy term:
// minus the gradient of its batch mean, with the exact mean reward as baseline.
std::vector<double> mc_gradient(const std::vector<double>& logits, int samples, std::uint64_t seed) {
  auto l = torch::tensor(logits, torch::kFloat64).view({1, 3, 3}).requires_grad_(true);
  auto policy = seediness_softmax(l).expand({samples, 3, 3});
  std::vector<oracle::Real> ll(logits.begin(), logits.end());
  const double baseline = static_cast<double>(oracle::expected_reward(ll, kToyReward));
  auto value = torch::full({samples, 3, 3}, baseline, torch::kFloat64);
  const auto d = pick_seed(policy, SeedMode::sample, seed, value);
  std::vector<double> r;
  for (const auto& s : d.seeds) r.push_back(static_cast<double>(kToyReward[s.y * 3 + s.x]));
  const auto terms = policy_grad_terms(torch::tensor(r, torch::kFloat64), d, 0.0);
  terms.policy_term.mean().backward();
  auto g = (-l.grad()).flatten().contiguous();
  return {g.data_ptr<double>(), g.data_ptr<double>() + 9};
}

}  // namespace

TEST_SUITE("seedpolicy") {
  TEST_CASE("softmax is joint over all positions") {
    auto u = seediness_softmax(torch::zeros({2, 4, 5}, torch::kFloat64));
    CHECK(torch::allclose(u, torch::full_like(u, 1.0 / 20)));
    auto logits = torch::randn({3, 4, 4}, torch::kFloat64);
    auto p = seediness_softmax(logits);
    CHECK(torch::allclose(p.sum({1, 2}), torch::ones({3}, torch::kFloat64)));
    CHECK(torch::allclose(p, seediness_softmax(logits + 7.5)));
    auto spike = torch::zeros({1, 4, 4}, torch::kFloat64);
    spike[0][2][1] = 1000.0;
    CHECK(seediness_softmax(spike)[0][2][1].item<double>() == doctest::Approx(1.0));
  }

  TEST_CASE("dropout square side is a third of the smaller dimension") {
    CHECK(dropout_square_side(33, 33) == 11);
    CHECK(dropout_square_side(24, 24) == 8);
    CHECK(dropout_square_side(32, 64) == 11);
    CHECK(dropout_square_side(2, 2) == 1);
  }

  TEST_CASE("dropout on a uniform map") {
    const int s = 33, side = 11;
    auto u = torch::full({4, s, s}, 1.0 / (s * s), torch::kFloat64);
    auto out = structured_dropout(u, 9);
    for (int n = 0; n < 4; ++n) {
      const auto m = out[n];
      CHECK(m.sum().item<double>() == doctest::Approx(1.0).epsilon(1e-12));
      const int zeros = (m == 0.0).sum().item<int>();
      CHECK(zeros == side * side);
      const double outside = 1.0 / (s * s - side * side);
      CHECK(((m - outside).abs() < 1e-15).sum().item<int>() == s * s - side * side);
      // The zeroed region is a single side x side square.
      auto rows = (m == 0.0).any(1).nonzero(), cols = (m == 0.0).any(0).nonzero();
      CHECK(rows.size(0) == side);
      CHECK(cols.size(0) == side);
      CHECK(rows[side - 1].item<int>() - rows[0].item<int>() == side - 1);
      CHECK(cols[side - 1].item<int>() - cols[0].item<int>() == side - 1);
    }
    CHECK(torch::equal(out, structured_dropout(u, 9)));
  }

  TEST_CASE("dropout keeps ratios outside the square and passes degenerate maps through") {
    auto p = seediness_softmax(torch::randn({2, 12, 12}, torch::kFloat64));
    auto out = structured_dropout(p, 3);
    auto kept = out > 0;
    auto ratio = out.masked_select(kept) / p.masked_select(kept);
    CHECK(torch::allclose(ratio.slice(0, 0, 10), torch::full({10}, ratio[0].item<double>(), torch::kFloat64)));

    // All mass inside every possible 4x4 square position is impossible, so use
    // a single-pixel spike and find a seed whose square covers it.
    auto spike = torch::zeros({1, 12, 12}, torch::kFloat64);
    spike[0][6][6] = 1.0;
    bool covered = false;
    for (std::uint64_t seed = 0; seed < 200 && !covered; ++seed) {
      auto d = structured_dropout(spike, seed);
      CHECK(d.sum().item<double>() == doctest::Approx(1.0));
      covered = torch::equal(d, spike);
    }
    CHECK(covered);
  }

  TEST_CASE("dropout square positions are uniform") {
    const int s = 9;  // side 3, 7 x 7 positions
    std::vector<double> counts(49, 0.0);
    auto u = torch::full({4000, s, s}, 1.0 / (s * s), torch::kFloat64);
    auto out = structured_dropout(u, 21);
    for (int n = 0; n < 4000; ++n) {
      auto z = (out[n] == 0.0).nonzero();
      counts[z[0][0].item<int>() * 7 + z[0][1].item<int>()] += 1;
    }
    CHECK(stats::chi_squared_p(counts, std::vector<double>(49, 1.0 / 49)) > 1e-3);
  }

  TEST_CASE("argmax picks the unique maximum and breaks ties row-major") {
    auto p = torch::full({2, 3, 4}, 1.0 / 12, torch::kFloat64);
    p[0][1][2] = 0.5;
    const auto d = pick_seed(p, SeedMode::argmax, 0);
    CHECK(d.seeds[0] == Pixel{1, 2});
    CHECK(d.seeds[1] == Pixel{0, 0});
    CHECK(d.log_prob[0].item<double>() == doctest::Approx(std::log(0.5)));
    CHECK(d.log_prob[1].item<double>() == doctest::Approx(std::log(1.0 / 12)));
    auto tie = torch::zeros({1, 3, 3}, torch::kFloat64);
    tie[0][2][0] = tie[0][1][1] = 0.5;
    CHECK(pick_seed(tie, SeedMode::argmax, 0).seeds[0] == Pixel{1, 1});
    CHECK_THROWS_AS(pick_seed(torch::zeros({1, 3, 3}), SeedMode::argmax, 0), ContractViolation);
  }

  TEST_CASE("sampling frequencies follow the policy") {
    const int n = 100000;
    auto logits = torch::tensor({0.0, 1.0, -1.0, 0.5, 2.0, 0.0, -0.5, 0.3, 1.2}, torch::kFloat64).view({1, 3, 3});
    auto p = seediness_softmax(logits);
    const auto d = pick_seed(p.expand({n, 3, 3}), SeedMode::sample, 77);
    std::vector<double> counts(9, 0.0), probs(9);
    for (const auto& s : d.seeds) counts[s.y * 3 + s.x] += 1;
    for (int k = 0; k < 9; ++k) {
      probs[k] = p.flatten()[k].item<double>();
      const double sigma = std::sqrt(n * probs[k] * (1 - probs[k]));
      CHECK(std::abs(counts[k] - n * probs[k]) < 3 * sigma);
    }
    CHECK(stats::chi_squared_p(counts, probs) > 1e-3);
    // Zero-probability positions are never drawn.
    auto sparse = torch::zeros({1000, 2, 2}, torch::kFloat64);
    sparse.select(1, 1).select(1, 0).fill_(1.0);
    for (const auto& s : pick_seed(sparse, SeedMode::sample, 5).seeds) CHECK(s == Pixel{1, 0});
  }

  TEST_CASE("log prob and value are read at the seed") {
    auto p = seediness_softmax(torch::randn({3, 4, 4}, torch::kFloat64));
    auto v = torch::randn({3, 4, 4}, torch::kFloat64);
    const auto d = pick_seed(p, SeedMode::sample, 12, v);
    for (int i = 0; i < 3; ++i) {
      const auto [y, x] = d.seeds[i];
      CHECK(d.log_prob[i].item<double>() == doctest::Approx(std::log(p[i][y][x].item<double>())).epsilon(1e-12));
      CHECK(d.value_at_seed[i].item<double>() == v[i][y][x].item<double>());
    }
    CHECK((pick_seed(p, SeedMode::sample, 12).seeds == d.seeds));
  }

  TEST_CASE("entropy of a uniform policy is ln(HW)") {
    CHECK(policy_entropy(torch::full({1, 5, 7}, 1.0 / 35, torch::kFloat64))[0].item<double>() ==
          doctest::Approx(std::log(35.0)).epsilon(1e-12));
    auto onehot = torch::zeros({1, 3, 3}, torch::kFloat64);
    onehot[0][0][0] = 1.0;
    CHECK(policy_entropy(onehot)[0].item<double>() == 0.0);
  }

  TEST_CASE("policy-gradient terms") {
    auto l = torch::randn({2, 3, 3}, torch::kFloat64).requires_grad_(true);
    auto v = torch::randn({2, 3, 3}, torch::kFloat64).requires_grad_(true);
    const auto d = pick_seed(seediness_softmax(l), SeedMode::sample, 4, v);
    auto reward = d.value_at_seed.detach().clone();
    auto t = policy_grad_terms(reward, d);
    CHECK(torch::equal(t.policy_term, torch::zeros({2}, torch::kFloat64)));
    CHECK(t.critic_term.abs().max().item<double>() == 0.0);

    reward = torch::tensor({1.5, -0.5}, torch::kFloat64).requires_grad_(true);
    t = policy_grad_terms(reward, d, 0.01);
    CHECK_FALSE(t.reward.requires_grad());
    CHECK_FALSE(t.advantage.requires_grad());
    CHECK(torch::allclose(t.advantage, reward.detach() - d.value_at_seed.detach()));
    CHECK(torch::allclose(t.policy_term, -t.advantage * d.log_prob));
    CHECK(torch::allclose(t.entropy_term, -0.01 * policy_entropy(d.policy)));
    CHECK(torch::allclose(t.critic_term, (d.value_at_seed - reward).pow(2)));
    (t.policy_term.sum() + t.entropy_term.sum() + t.critic_term.sum()).backward();
    CHECK_FALSE(reward.grad().defined());
    // The critic gradient reaches the value map only at the seeds.
    CHECK((v.grad() != 0).sum().item<int>() == 2);
    CHECK(torch::isfinite(l.grad()).all().item<bool>());
  }

  TEST_CASE("Monte Carlo policy gradient matches the exact expected-reward gradient") {
    const std::vector<double> logits{0.2, -0.4, 0.0, 0.7, -0.1, 0.3, -0.6, 0.5, 0.1};
    const auto mc = mc_gradient(logits, 100000, 2024);
    std::vector<oracle::Real> ll(logits.begin(), logits.end());
    const auto fd = oracle::expected_reward_grad_fd(ll, kToyReward);
    double err = 0, norm = 0;
    for (int k = 0; k < 9; ++k) {
      err += (mc[k] - static_cast<double>(fd[k])) * (mc[k] - static_cast<double>(fd[k]));
      norm += static_cast<double>(fd[k] * fd[k]);
    }
    CHECK(std::sqrt(err / norm) < 0.05);
  }

  TEST_CASE("ascending the estimated gradient increases expected reward every step") {
    std::vector<double> logits(9, 0.0);
    auto exact = [&] {
      std::vector<oracle::Real> ll(logits.begin(), logits.end());
      return oracle::expected_reward(ll, kToyReward);
    };
    auto prev = exact();
    int increases = 0;
    for (int step = 0; step < 50; ++step) {
      const auto g = mc_gradient(logits, 20000, 500 + step);
      for (int k = 0; k < 9; ++k) logits[k] += 1.0 * g[k];
      const auto now = exact();
      increases += now > prev;
      prev = now;
    }
    CHECK(increases == 50);
    CHECK(static_cast<double>(prev) > 0.8);
  }
}
