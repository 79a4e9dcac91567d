#include "cpgan/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cpgan {

BinaryMask BinaryMask::from(const CopyMask& mask, float threshold) {
  BinaryMask out(mask.height(), mask.width());
  const auto v = mask.values();
  for (std::size_t i = 0; i < v.size(); ++i) out.bits_[i] = v[i] > threshold ? 1 : 0;
  return out;
}

std::int64_t BinaryMask::count() const noexcept {
  return std::accumulate(bits_.begin(), bits_.end(), std::int64_t{0});
}

BinaryMask BinaryMask::operator|(const BinaryMask& o) const {
  CPGAN_EXPECT(same_shape(o), "BinaryMask: shape mismatch");
  BinaryMask out = *this;
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] |= o.bits_[i];
  return out;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  CPGAN_EXPECT(a.same_shape(b), "iou: shape mismatch");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] & b[i];
    uni += a[i] | b[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

EvalCase make_eval_case(const CopyMask& predicted, const std::vector<CopyMask>& gt_masks) {
  EvalCase c;
  c.predicted = BinaryMask::from(predicted);
  for (const auto& m : gt_masks) c.gt_masks.push_back(BinaryMask::from(m));
  return c;
}

namespace {

void check_case(const EvalCase& c) {
  CPGAN_EXPECT(!c.gt_masks.empty(), "evaluation case needs at least one ground-truth mask");
  CPGAN_EXPECT(static_cast<int>(c.gt_masks.size()) <= kMaxObjects, "evaluation case has too many objects");
  for (const auto& m : c.gt_masks) CPGAN_EXPECT(m.same_shape(c.predicted), "evaluation case shape mismatch");
}

}  // namespace

MatchResult exhaustive_match(const EvalCase& c) {
  check_case(c);
  const int k = static_cast<int>(c.gt_masks.size());
  CPGAN_EXPECT(k <= kMaxObjects, "exhaustive_match: too many objects");
  const std::size_t n = c.predicted.size();
  // Per-pixel object membership bits, so every subset is scored in one pass.
  std::vector<std::uint32_t> member(n, 0);
  for (int o = 0; o < k; ++o)
    for (std::size_t i = 0; i < n; ++i)
      if (c.gt_masks[o][i]) member[i] |= 1u << o;

  MatchResult best{-1.0, {}};
  std::uint32_t best_subset = 0;
  for (std::uint32_t s = 1; s < (1u << k); ++s) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool g = (member[i] & s) != 0;
      inter += g && c.predicted[i];
      uni += g || c.predicted[i];
    }
    const double v = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    if (v > best.best_iou) {
      best.best_iou = v;
      best_subset = s;
    }
  }
  for (int o = 0; o < k; ++o)
    if (best_subset & (1u << o)) best.subset.push_back(o);
  return best;
}

MatchResult greedy_match(const EvalCase& c) {
  check_case(c);
  const int k = static_cast<int>(c.gt_masks.size());
  std::vector<bool> used(k, false);
  BinaryMask current(c.predicted.height(), c.predicted.width());
  MatchResult result{-1.0, {}};
  while (true) {
    int best_obj = -1;
    double best_val = result.best_iou;
    for (int o = 0; o < k; ++o) {
      if (used[o]) continue;
      const double v = iou(c.predicted, current | c.gt_masks[o]);
      if (v > best_val) {
        best_val = v;
        best_obj = o;
      }
    }
    if (best_obj < 0) break;
    used[best_obj] = true;
    current = current | c.gt_masks[best_obj];
    result.best_iou = best_val;
    result.subset.push_back(best_obj);
  }
  if (result.subset.empty()) {
    // Nothing overlaps: report the single best (zero-IOU) object.
    result.best_iou = iou(c.predicted, c.gt_masks[0]);
    result.subset = {0};
  }
  std::sort(result.subset.begin(), result.subset.end());
  return result;
}

MatchResult best_valid_match(const EvalCase& c) {
  return static_cast<int>(c.gt_masks.size()) <= kExhaustiveMaxObjects ? exhaustive_match(c) : greedy_match(c);
}

EvalSummary odp(const std::vector<EvalCase>& cases) {
  CPGAN_EXPECT(!cases.empty(), "odp: no cases");
  EvalSummary s;
  std::size_t hits = 0;
  for (const auto& c : cases) {
    auto m = best_valid_match(c);
    const bool ok = m.best_iou > kDiscoveryIou;
    hits += ok;
    s.success.push_back(ok);
    s.matches.push_back(std::move(m));
  }
  s.odp = 100.0 * static_cast<double>(hits) / static_cast<double>(cases.size());
  return s;
}

bool is_stable(double final_odp, double max_odp) { return final_odp >= 0.1 * max_odp; }

Aggregate aggregate_runs(const std::vector<RunOutcome>& runs) {
  CPGAN_EXPECT(!runs.empty(), "aggregate_runs: no runs");
  Aggregate a;
  double sum = 0.0;
  int stable = 0;
  for (const auto& r : runs) {
    sum += r.early_stopping_odp;
    stable += is_stable(r.final_odp, r.early_stopping_odp);
  }
  a.mean = sum / runs.size();
  double var = 0.0;
  for (const auto& r : runs) var += (r.early_stopping_odp - a.mean) * (r.early_stopping_odp - a.mean);
  a.std = std::sqrt(var / runs.size());
  a.stability_rate = 100.0 * stable / runs.size();
  return a;
}

}  // namespace cpgan
