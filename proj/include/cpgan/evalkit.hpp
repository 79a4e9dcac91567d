#pragma once

#include <cstdint>
#include <vector>

#include "cpgan/imaging.hpp"

namespace cpgan {

/// Flat {0,1} mask used for evaluation.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width) : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width) {}
  /// Thresholds a soft mask: value > threshold -> 1.
  static BinaryMask from(const CopyMask& mask, float threshold = 0.5f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  std::uint8_t& operator[](std::size_t i) { return bits_[i]; }
  std::int64_t count() const noexcept;
  bool same_shape(const BinaryMask& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }

  BinaryMask operator|(const BinaryMask& o) const;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// |a & b| / |a | b|, 0 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

struct EvalCase {
  BinaryMask predicted;
  std::vector<BinaryMask> gt_masks;
};

EvalCase make_eval_case(const CopyMask& predicted, const std::vector<CopyMask>& gt_masks);

struct MatchResult {
  double best_iou = 0.0;
  std::vector<int> subset;  // ascending object indices
};

inline constexpr int kExhaustiveMaxObjects = 10;
inline constexpr int kMaxObjects = 20;
inline constexpr double kDiscoveryIou = 0.5;

/// Best IOU against any union of ground-truth objects: exhaustive up to
/// kExhaustiveMaxObjects objects, greedy beyond.
MatchResult best_valid_match(const EvalCase& c);
MatchResult exhaustive_match(const EvalCase& c);
MatchResult greedy_match(const EvalCase& c);

struct EvalSummary {
  double odp = 0.0;  // percent
  std::vector<bool> success;
  std::vector<MatchResult> matches;
};

/// A case succeeds when its best IOU is strictly above 0.5.
EvalSummary odp(const std::vector<EvalCase>& cases);

/// Collapse rule: a run is stable when final >= 0.1 * max.
bool is_stable(double final_odp, double max_odp);

struct RunOutcome {
  double early_stopping_odp = 0.0;  // best validation ODP over the run
  double final_odp = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double stability_rate = 0.0;  // percent
};

Aggregate aggregate_runs(const std::vector<RunOutcome>& runs);

}  // namespace cpgan
