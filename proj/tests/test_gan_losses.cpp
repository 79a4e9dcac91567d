#include <doctest.h>

#include <cmath>
#include <random>

#include "cpgan/gan_losses.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cpgan;

namespace {

constexpr double kLn2 = 0.69314718055994530942;

torch::Tensor dbl(std::vector<double> v) { return torch::tensor(v, torch::kFloat64); }

// Random branch outputs for a batch of n samples on h x w masks.
BranchOutputs random_outputs(int n, int h, int w, std::uint64_t seed, bool binary_targets) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto r = [&](at::IntArrayRef shape) { return torch::rand(shape, gen, torch::kFloat64); };
  BranchOutputs o;
  o.real_score = r({n});
  o.fake_score = r({n});
  o.anti_score = r({n});
  o.grounded_score = r({n});
  o.real_mask = r({n, 1, h, w});
  o.fake_mask = r({n, 1, h, w});
  o.anti_mask = r({n, 1, h, w});
  o.grounded_mask = r({n, 1, h, w});
  o.generator_mask = r({n, 1, h, w});
  o.polygon_mask = binary_targets ? (r({n, 1, h, w}) > 0.5).to(torch::kFloat64) : r({n, 1, h, w});
  return o;
}

std::vector<oracle::Real> flat(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous().flatten();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

std::vector<oracle::Sample> to_samples(const BranchOutputs& o) {
  std::vector<oracle::Sample> out;
  for (int i = 0; i < o.real_score.size(0); ++i) {
    oracle::Sample s;
    s.real_score = o.real_score[i].item<double>();
    s.fake_score = o.fake_score[i].item<double>();
    s.anti_score = o.anti_score[i].item<double>();
    s.gf_score = o.grounded_score[i].item<double>();
    s.real_mask = flat(o.real_mask[i]);
    s.fake_mask = flat(o.fake_mask[i]);
    s.anti_mask = flat(o.anti_mask[i]);
    s.gf_mask = flat(o.grounded_mask[i]);
    s.gen_mask = flat(o.generator_mask[i]);
    s.polygon = flat(o.polygon_mask[i]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_SUITE("gan_losses") {
  TEST_CASE("cross entropy worked values") {
    CHECK(bce(0.5, 0.0) == doctest::Approx(kLn2).epsilon(1e-12));
    CHECK(bce(0.75, 0.75) == doctest::Approx(0.562335144618808).epsilon(1e-9));
    CHECK(bce(kProbEpsilon, 0.0) < 1e-6);
    CHECK(bce(1.0 - kProbEpsilon, 1.0) < 1e-6);
    // Clamping keeps saturated predictions finite.
    CHECK(std::isfinite(bce(0.0, 1.0)));
    CHECK(std::isfinite(bce(1.0, 0.0)));
    CHECK(bce(0.0, 1.0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
  }

  TEST_CASE("cross entropy matches the oracle on random inputs") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
      const double p = u(rng), l = u(rng);
      CHECK(std::abs(bce(p, l) - static_cast<double>(oracle::xent(p, l))) < 1e-9);
    }
  }

  TEST_CASE("discriminator real loss is minimized at the smoothed label") {
    CHECK(d_real_loss(0.75) == doctest::Approx(0.562335144618808).epsilon(1e-9));
    CHECK(d_real_loss(0.5) == doctest::Approx(kLn2).epsilon(1e-12));
    CHECK(d_real_loss(0.74) > d_real_loss(0.75));
    CHECK(d_real_loss(0.76) > d_real_loss(0.75));
    auto s = dbl({0.75}).requires_grad_(true);
    d_real_loss(s).sum().backward();
    CHECK(std::abs(s.grad().item<double>()) < 1e-9);
  }

  TEST_CASE("generator fake loss is the negated discriminator fake loss") {
    for (double s : {1e-9, 0.01, 0.3, 0.5, 0.9, 1.0}) CHECK(g_fake_loss(s) + d_fake_loss(s) == 0.0);
    CHECK(d_fake_loss(0.5) == doctest::Approx(kLn2).epsilon(1e-12));
    CHECK(d_fake_loss(kProbEpsilon) < 1e-6);
    CHECK(g_fake_loss(0.3, true) == doctest::Approx(bce(0.3, 1.0)).epsilon(1e-12));
  }

  TEST_CASE("anti-shortcut loss pushes the score down") {
    CHECK(g_anti_shortcut_loss(1e-9) < 1e-6);
    CHECK(g_anti_shortcut_loss(0.5) == doctest::Approx(kLn2).epsilon(1e-12));
    auto s = dbl({0.4}).requires_grad_(true);
    g_anti_shortcut_loss(s).sum().backward();
    CHECK(s.grad().item<double>() > 0.0);  // gradient descent lowers the score
  }

  TEST_CASE("mask loss is complement invariant and equals the two-branch oracle") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    for (int trial = 0; trial < 50; ++trial) {
      auto pred = torch::rand({2, 1, 5, 6}, gen, torch::kFloat64);
      auto target = torch::rand({2, 1, 5, 6}, gen, torch::kFloat64);
      auto a = mask_loss(pred, target);
      auto b = mask_loss(pred, 1.0 - target);
      CHECK(torch::equal(a, b));
      for (int i = 0; i < 2; ++i) {
        const double want = static_cast<double>(oracle::mask_loss(flat(pred[i]), flat(target[i])));
        CHECK(a[i].item<double>() == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("mask loss worked values") {
    CopyMask target(4, 4);
    target.at(1, 1) = target.at(2, 3) = 1.0f;
    CHECK(mask_loss(target, target) < 1e-6);
    CHECK(mask_loss(complement(target), target) < 1e-6);
    CHECK(mask_loss(CopyMask(4, 4, 0.5f), target) == doctest::Approx(kLn2).epsilon(1e-9));
    CHECK_THROWS_AS(mask_loss(CopyMask(4, 4), CopyMask(4, 5)), ContractViolation);
  }

  TEST_CASE("all-0.5 bundle worked example") {
    const int n = 3, h = 4, w = 4;
    BranchOutputs o;
    o.real_score = o.fake_score = o.anti_score = o.grounded_score = torch::full({n}, 0.5, torch::kFloat64);
    o.real_mask = o.fake_mask = o.anti_mask = o.grounded_mask = torch::full({n, 1, h, w}, 0.5, torch::kFloat64);
    o.generator_mask = torch::rand({n, 1, h, w}, torch::kFloat64);
    o.polygon_mask = torch::zeros({n, 1, h, w}, torch::kFloat64);
    const auto b = assemble_losses(o).bundle();
    // 3 ln2 + 0.1 * 4 ln2 = 3.4 ln2 = 2.3567004...
    CHECK(std::abs(b.d_total - 3.4 * kLn2) < 1e-6);
    CHECK(std::abs(b.d_total - 2.3567004139) < 1e-6);
    CHECK(std::abs(b.g_total) < 1e-12);
  }

  TEST_CASE("assembled bundle matches the straight-line oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto o = random_outputs(4, 5, 5, seed, seed % 2 == 0);
      const auto b = assemble_losses(o).bundle();
      const auto t = oracle::totals(to_samples(o));
      CHECK(b.d_real == doctest::Approx(static_cast<double>(t.d_real)).epsilon(1e-10));
      CHECK(b.d_fake == doctest::Approx(static_cast<double>(t.d_fake)).epsilon(1e-10));
      CHECK(b.d_grounded_fake == doctest::Approx(static_cast<double>(t.d_gf)).epsilon(1e-10));
      CHECK(b.g_fake == doctest::Approx(static_cast<double>(t.g_fake)).epsilon(1e-10));
      CHECK(b.g_anti_shortcut == doctest::Approx(static_cast<double>(t.g_anti)).epsilon(1e-10));
      CHECK(b.mask_real == doctest::Approx(static_cast<double>(t.m_real)).epsilon(1e-10));
      CHECK(b.mask_fake == doctest::Approx(static_cast<double>(t.m_fake)).epsilon(1e-10));
      CHECK(b.mask_anti_shortcut == doctest::Approx(static_cast<double>(t.m_anti)).epsilon(1e-10));
      CHECK(b.mask_grounded_fake == doctest::Approx(static_cast<double>(t.m_gf)).epsilon(1e-10));
      CHECK(b.g_total == doctest::Approx(static_cast<double>(t.g_total)).epsilon(1e-10));
      CHECK(b.d_total == doctest::Approx(static_cast<double>(t.d_total)).epsilon(1e-10));
    }
  }

  TEST_CASE("bundle totals equal recomputation from parts") {
    const auto b = assemble_losses(random_outputs(6, 4, 4, 11, true)).bundle();
    CHECK(std::abs(b.g_total - (b.g_fake + b.g_anti_shortcut)) < 1e-9);
    CHECK(std::abs(b.d_total - (b.d_real + b.d_fake + b.d_grounded_fake +
                                0.1 * (b.mask_real + b.mask_fake + b.mask_anti_shortcut + b.mask_grounded_fake))) <
          1e-9);
  }

  TEST_CASE("zero aux weight drops the mask terms from d_total") {
    LossOptions opt;
    opt.aux_weight = 0.0;
    const auto b = assemble_losses(random_outputs(3, 4, 4, 12, true), opt).bundle();
    CHECK(b.d_total == doctest::Approx(b.d_real + b.d_fake + b.d_grounded_fake).epsilon(1e-12));
    CHECK(b.mask_fake > 0.0);
  }

  TEST_CASE("disabled branches contribute exactly zero loss and zero gradient") {
    auto o = random_outputs(3, 4, 4, 13, true);
    for (auto* t : {&o.real_score, &o.fake_score, &o.anti_score, &o.grounded_score, &o.anti_mask, &o.grounded_mask,
                    &o.real_mask, &o.fake_mask})
      t->requires_grad_(true);
    LossOptions opt;
    opt.anti_shortcut = false;
    opt.grounded_fakes = false;
    opt.mask_prediction = false;
    const auto terms = assemble_losses(o, opt);
    const auto b = terms.bundle();
    CHECK(b.g_anti_shortcut == 0.0);
    CHECK(b.d_grounded_fake == 0.0);
    CHECK(b.mask_real == 0.0);
    CHECK(b.mask_fake == 0.0);
    CHECK(b.mask_anti_shortcut == 0.0);
    CHECK(b.mask_grounded_fake == 0.0);
    (terms.d_total() + terms.g_total()).backward();
    for (auto* t : {&o.anti_score, &o.grounded_score, &o.anti_mask, &o.grounded_mask, &o.real_mask, &o.fake_mask}) {
      CHECK((!t->grad().defined() || t->grad().abs().sum().item<double>() == 0.0));
    }
  }

  TEST_CASE("mask targets are not differentiated") {
    auto o = random_outputs(2, 4, 4, 14, false);
    o.generator_mask.requires_grad_(true);
    o.fake_mask.requires_grad_(true);
    assemble_losses(o).d_total().backward();
    CHECK_FALSE(o.generator_mask.grad().defined());
    CHECK(o.fake_mask.grad().defined());
  }

  TEST_CASE("loss gradients match central finite differences") {
    auto o = random_outputs(3, 4, 4, 16, true);
    // Keep scores and masks away from the clamp bounds where gradients vanish.
    for (auto* t : {&o.real_score, &o.fake_score, &o.anti_score, &o.grounded_score, &o.real_mask, &o.fake_mask,
                    &o.anti_mask, &o.grounded_mask}) {
      *t = (0.05 + 0.9 * *t).requires_grad_(true);
    }
    auto d = [&] { return assemble_losses(o).d_total(); };
    auto g = [&] { return assemble_losses(o).g_total(); };
    for (auto* t : {&o.real_score, &o.fake_score, &o.grounded_score, &o.real_mask, &o.fake_mask, &o.anti_mask,
                    &o.grounded_mask}) {
      CHECK(gradcheck::max_relative_error(d, *t) < 1e-4);
    }
    CHECK(gradcheck::max_relative_error(g, o.fake_score) < 1e-4);
    CHECK(gradcheck::max_relative_error(g, o.anti_score) < 1e-4);
    LossOptions ns;
    ns.non_saturating = true;
    CHECK(gradcheck::max_relative_error([&] { return assemble_losses(o, ns).g_total(); }, o.fake_score) < 1e-4);
  }

  TEST_CASE("losses stay finite on extreme inputs") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> extremes{0.0, 1.0, 1e-300, 1.0 - 1e-16};
    for (int i = 0; i < 100000; ++i) {
      const double s = i < 4 ? extremes[i] : u(rng);
      CHECK_FALSE(!std::isfinite(d_real_loss(s) + d_fake_loss(s) + g_fake_loss(s) + g_anti_shortcut_loss(s)));
    }
    LossBundle b;
    CHECK(all_finite(b));
    b.d_fake = std::nan("");
    CHECK_FALSE(all_finite(b));
  }
}
