#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "cpgan/imaging.hpp"
#include "cpgan/nets.hpp"

namespace cpgan {

/// Dense displacement field, row-major (u, v) per pixel.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> uv;  // 2 * height * width

  FlowField() = default;
  FlowField(int h, int w) : height(h), width(w), uv(static_cast<std::size_t>(2) * h * w, 0.0f) {}
  float u(int y, int x) const { return uv[2 * (static_cast<std::size_t>(y) * width + x)]; }
  float v(int y, int x) const { return uv[2 * (static_cast<std::size_t>(y) * width + x) + 1]; }
  void set(int y, int x, float du, float dv) {
    uv[2 * (static_cast<std::size_t>(y) * width + x)] = du;
    uv[2 * (static_cast<std::size_t>(y) * width + x) + 1] = dv;
  }
};

inline constexpr float kFloMagic = 202021.25f;

FlowField read_flo(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const FlowField& flow);

/// (u, v) = A * (x, y, 1); row 0 predicts u, row 1 predicts v. Pixel
/// coordinates: x = column, y = row.
struct AffineModel {
  std::array<double, 6> a{};  // a00 a01 a02 a10 a11 a12

  std::array<double, 2> apply(double x, double y) const {
    return {a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5]};
  }
};

struct PatchFit {
  AffineModel model;
  double residual = std::numeric_limits<double>::infinity();  // RMS displacement error; +inf if degenerate
  bool degenerate() const { return !std::isfinite(residual); }
};

/// Least-squares affine fit over the (2*half+1)^2 patch centred on `center`.
PatchFit fit_patch_affine(const FlowField& flow, Pixel center, int patch = 3);

struct ClusterOptions {
  double residual_threshold = 0.1;  // px
  double merge_threshold = 0.5;     // px RMS
  int grid = 16;                    // disagreement sample grid per side
};

/// RMS difference of the two models' predicted flow over a grid x grid
/// lattice spanning the image.
double model_disagreement(const AffineModel& a, const AffineModel& b, int height, int width, int grid = 16);

struct LocatedFit {
  PatchFit fit;
  Pixel pixel;
};

/// Per-pixel cluster labels; 0 means unassigned.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;
  std::vector<AffineModel> cluster_models;  // model of label k at index k - 1
};

/// Drops fits whose residual exceeds residual_threshold, grows spatially
/// connected regions of mutually consistent patches (each region keeps a
/// pooled least-squares affine), then merges region models closest-pair-first
/// while the closest pair disagrees by less than merge_threshold. Labels are
/// numbered in order of first appearance (row-major).
LabelMap cluster_affines(const FlowField& flow, const std::vector<LocatedFit>& fits,
                         const ClusterOptions& options = {});

/// Fits every full 3x3 patch of the field.
std::vector<LocatedFit> fit_all_patches(const FlowField& flow);

/// Assigns unlabelled pixels to the best-explaining cluster among their
/// labelled 8-neighbours when that cluster predicts the pixel's flow within
/// `tolerance`; repeats until nothing changes.
void fill_unassigned(LabelMap& labels, const FlowField& flow, double tolerance);

/// Removes 4-connected components smaller than min_area, then drops the
/// largest remaining cluster (background). One mask per surviving cluster.
std::vector<CopyMask> postprocess(const LabelMap& labels, int min_area);

struct FlowGtOptions {
  ClusterOptions cluster;
  double min_area_fraction = 0.001;
};

/// fit_all_patches -> cluster_affines -> fill_unassigned -> postprocess.
std::vector<CopyMask> segment_flow(const FlowField& flow, const FlowGtOptions& options = {});

}  // namespace cpgan
