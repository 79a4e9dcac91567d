#include "cpgan/groundedfakes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cpgan/rng.hpp"

namespace cpgan {

PolygonSpec sample_polygon(std::uint64_t rng_seed) {
  Rng rng(derive_seed(rng_seed, {0x706f6c79}));
  std::uniform_real_distribution<double> centre(kPolygonCenterMin, kPolygonCenterMax);
  std::uniform_int_distribution<int> count(kPolygonMinVertices, kPolygonMaxVertices);
  std::uniform_real_distribution<double> radius(kPolygonRadiusMin, kPolygonRadiusMax);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  PolygonSpec spec;
  spec.center_x = centre(rng);
  spec.center_y = centre(rng);
  const int v = count(rng);
  for (int i = 0; i < v; ++i) {
    const double r = radius(rng);
    spec.vertices.push_back({r, angle(rng)});
  }
  return spec;
}

CopyMask rasterize_polygon(const PolygonSpec& spec, int height, int width) {
  CPGAN_EXPECT(spec.vertices.size() >= 3, "rasterize_polygon: need at least 3 vertices");
  auto ordered = spec.vertices;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const PolarVertex& a, const PolarVertex& b) { return a.angle < b.angle; });
  // Vertex positions in pixel units; pixel (y, x) has its centre at (x + 0.5, y + 0.5).
  std::vector<std::pair<double, double>> pts;
  for (const auto& v : ordered) {
    pts.emplace_back((spec.center_x + v.radius * std::cos(v.angle)) * width,
                     (spec.center_y + v.radius * std::sin(v.angle)) * height);
  }
  CopyMask mask(height, width);
  const std::size_t n = pts.size();
  for (int y = 0; y < height; ++y) {
    const double py = y + 0.5;
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5;
      bool inside = false;
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto [xi, yi] = pts[i];
        const auto [xj, yj] = pts[j];
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
      }
      if (inside) mask.at(y, x) = 1.0f;
    }
  }
  return mask;
}

GroundedFake make_grounded_fake(const Image& source, const Image& destination, std::uint64_t rng_seed) {
  auto mask = rasterize_polygon(sample_polygon(rng_seed), source.height(), source.width());
  auto image = composite(source, destination, mask);
  return {std::move(image), std::move(mask)};
}

torch::Tensor grounded_fake_masks(int batch, int height, int width, std::uint64_t rng_seed) {
  std::vector<CopyMask> masks;
  masks.reserve(batch);
  for (int i = 0; i < batch; ++i) {
    masks.push_back(rasterize_polygon(sample_polygon(derive_seed(rng_seed, {static_cast<std::uint64_t>(i)})),
                                      height, width));
  }
  return stack_masks(masks);
}

}  // namespace cpgan
