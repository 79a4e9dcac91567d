#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cpgan/imaging.hpp"

namespace cpgan {

struct PolarVertex {
  double radius = 0.0;
  double angle = 0.0;  // radians in [0, 2*pi)
};

/// Random star-shaped polygon in normalized image coordinates (x right, y down).
struct PolygonSpec {
  double center_x = 0.5;
  double center_y = 0.5;
  std::vector<PolarVertex> vertices;
};

inline constexpr double kPolygonCenterMin = 0.1;
inline constexpr double kPolygonCenterMax = 0.9;
inline constexpr int kPolygonMinVertices = 4;
inline constexpr int kPolygonMaxVertices = 6;
inline constexpr double kPolygonRadiusMin = 0.1;
inline constexpr double kPolygonRadiusMax = 0.5;

PolygonSpec sample_polygon(std::uint64_t rng_seed);

/// Binary mask of pixels whose centres fall inside the polygon (even-odd
/// rule). Vertices are visited in angular order, so the outline is simple.
CopyMask rasterize_polygon(const PolygonSpec& spec, int height, int width);

struct GroundedFake {
  Image image;
  CopyMask mask;
};

GroundedFake make_grounded_fake(const Image& source, const Image& destination, std::uint64_t rng_seed);

/// Polygon masks for a whole batch; mask i uses seed derive_seed(rng_seed, {i}).
/// Returns N x 1 x H x W.
torch::Tensor grounded_fake_masks(int batch, int height, int width, std::uint64_t rng_seed);

}  // namespace cpgan
