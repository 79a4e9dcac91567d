#include "cpgan/flowgt.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

#include <Eigen/Dense>

namespace cpgan {

static_assert(std::endian::native == std::endian::little, ".flo I/O assumes a little-endian host");

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open flow file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw ParseError("flow file too short for magic", bytes.size());
  float magic = 0.0f;
  std::memcpy(&magic, bytes.data(), 4);
  if (magic != kFloMagic) throw ParseError("bad .flo magic in " + path.string(), 0);
  if (bytes.size() < 12) throw ParseError("flow file truncated in header", bytes.size());
  std::int32_t w = 0, h = 0;
  std::memcpy(&w, bytes.data() + 4, 4);
  std::memcpy(&h, bytes.data() + 8, 4);
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16)) throw ParseError("implausible .flo dimensions", 4);
  const std::size_t expected = 12 + 8 * static_cast<std::size_t>(w) * h;
  if (bytes.size() < expected) throw ParseError("flow payload truncated", bytes.size());
  if (bytes.size() > expected) throw ParseError("trailing bytes after flow payload", expected);
  FlowField f(h, w);
  std::memcpy(f.uv.data(), bytes.data() + 12, expected - 12);
  return f;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write flow file " + path.string());
  const std::int32_t w = flow.width, h = flow.height;
  out.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(flow.uv.data()), static_cast<std::streamsize>(flow.uv.size() * 4));
  if (!out) throw IoError("failed writing flow file " + path.string());
}

namespace {

// Normal equations of the two 3-unknown least-squares problems
// u = [x y 1] . a_u and v = [x y 1] . a_v (coordinates relative to an origin).
struct AffineAccumulator {
  Eigen::Matrix3d xtx = Eigen::Matrix3d::Zero();
  Eigen::Vector3d xtu = Eigen::Vector3d::Zero();
  Eigen::Vector3d xtv = Eigen::Vector3d::Zero();
  std::size_t count = 0;

  void add(double x, double y, double u, double v) {
    const Eigen::Vector3d r(x, y, 1.0);
    xtx.noalias() += r * r.transpose();
    xtu += r * u;
    xtv += r * v;
    ++count;
  }
  void merge(const AffineAccumulator& o) {
    xtx += o.xtx;
    xtu += o.xtu;
    xtv += o.xtv;
    count += o.count;
  }
  bool solve(AffineModel& model) const {
    Eigen::ColPivHouseholderQR<Eigen::Matrix3d> qr(xtx);
    if (qr.rank() < 3) return false;
    const Eigen::Vector3d au = qr.solve(xtu), av = qr.solve(xtv);
    model.a = {au(0), au(1), au(2), av(0), av(1), av(2)};
    return true;
  }
};

double patch_rms(const FlowField& flow, const AffineModel& m, Pixel c, int half) {
  double sq = 0.0;
  int n = 0;
  for (int y = c.y - half; y <= c.y + half; ++y) {
    for (int x = c.x - half; x <= c.x + half; ++x) {
      const auto p = m.apply(x, y);
      const double du = p[0] - flow.u(y, x), dv = p[1] - flow.v(y, x);
      sq += du * du + dv * dv;
      ++n;
    }
  }
  return std::sqrt(sq / n);
}

double pixel_error(const FlowField& flow, const AffineModel& m, int y, int x) {
  const auto p = m.apply(x, y);
  return std::hypot(p[0] - flow.u(y, x), p[1] - flow.v(y, x));
}

}  // namespace

PatchFit fit_patch_affine(const FlowField& flow, Pixel center, int patch) {
  CPGAN_EXPECT(patch >= 3 && patch % 2 == 1, "fit_patch_affine: patch must be odd and >= 3");
  const int half = patch / 2;
  CPGAN_EXPECT(center.y - half >= 0 && center.x - half >= 0 && center.y + half < flow.height &&
                   center.x + half < flow.width,
               "fit_patch_affine: patch not fully inside the field");
  const int n = patch * patch;
  Eigen::MatrixXd design(n, 3);
  Eigen::MatrixXd rhs(n, 2);
  int row = 0;
  for (int y = center.y - half; y <= center.y + half; ++y) {
    for (int x = center.x - half; x <= center.x + half; ++x, ++row) {
      design.row(row) << x - center.x, y - center.y, 1.0;
      rhs(row, 0) = flow.u(y, x);
      rhs(row, 1) = flow.v(y, x);
    }
  }
  PatchFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < 3) return fit;
  const Eigen::MatrixXd sol = qr.solve(rhs);  // 3 x 2, in patch-centred coordinates
  const double cx = center.x, cy = center.y;
  fit.model.a = {sol(0, 0), sol(1, 0), sol(2, 0) - sol(0, 0) * cx - sol(1, 0) * cy,
                 sol(0, 1), sol(1, 1), sol(2, 1) - sol(0, 1) * cx - sol(1, 1) * cy};
  fit.residual = std::sqrt((design * sol - rhs).rowwise().squaredNorm().sum() / n);
  return fit;
}

double model_disagreement(const AffineModel& a, const AffineModel& b, int height, int width, int grid) {
  double sq = 0.0;
  for (int j = 0; j < grid; ++j) {
    const double y = (j + 0.5) * height / grid;
    for (int i = 0; i < grid; ++i) {
      const double x = (i + 0.5) * width / grid;
      const auto pa = a.apply(x, y), pb = b.apply(x, y);
      sq += (pa[0] - pb[0]) * (pa[0] - pb[0]) + (pa[1] - pb[1]) * (pa[1] - pb[1]);
    }
  }
  return std::sqrt(sq / (grid * grid));
}

std::vector<LocatedFit> fit_all_patches(const FlowField& flow) {
  std::vector<LocatedFit> fits;
  for (int y = 1; y + 1 < flow.height; ++y)
    for (int x = 1; x + 1 < flow.width; ++x) fits.push_back({fit_patch_affine(flow, {y, x}), {y, x}});
  return fits;
}

LabelMap cluster_affines(const FlowField& flow, const std::vector<LocatedFit>& fits, const ClusterOptions& options) {
  const int h = flow.height, w = flow.width;
  LabelMap out{h, w, std::vector<int>(static_cast<std::size_t>(h) * w, 0), {}};
  const double grow_tolerance = 2.0 * options.residual_threshold;

  // Index of the kept fit centred at each pixel, or -1.
  std::vector<int> at(static_cast<std::size_t>(h) * w, -1);
  for (std::size_t i = 0; i < fits.size(); ++i) {
    const auto& f = fits[i];
    if (f.fit.degenerate() || f.fit.residual > options.residual_threshold) continue;
    at[static_cast<std::size_t>(f.pixel.y) * w + f.pixel.x] = static_cast<int>(i);
  }
  if (std::none_of(at.begin(), at.end(), [](int i) { return i >= 0; })) {
    std::cerr << "warning: every patch was rejected as inconsistent\n";
    return out;
  }

  // Region growing over 4-connected consistent patches with a pooled model.
  std::vector<int> region(at.size(), -1);
  std::vector<AffineAccumulator> acc;
  std::vector<AffineModel> models;
  auto add_patch = [&](AffineAccumulator& a, Pixel c) {
    for (int y = c.y - 1; y <= c.y + 1; ++y)
      for (int x = c.x - 1; x <= c.x + 1; ++x) a.add(x, y, flow.u(y, x), flow.v(y, x));
  };
  for (std::size_t start = 0; start < at.size(); ++start) {
    if (at[start] < 0 || region[start] >= 0) continue;
    const int r = static_cast<int>(acc.size());
    const Pixel seed = fits[at[start]].pixel;
    acc.emplace_back();
    models.push_back(fits[at[start]].fit.model);
    add_patch(acc.back(), seed);
    region[start] = r;
    std::deque<Pixel> frontier{seed};
    while (!frontier.empty()) {
      const Pixel p = frontier.front();
      frontier.pop_front();
      constexpr int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const Pixel q{p.y + dy[k], p.x + dx[k]};
        if (q.y < 0 || q.x < 0 || q.y >= h || q.x >= w) continue;
        const auto qi = static_cast<std::size_t>(q.y) * w + q.x;
        if (at[qi] < 0 || region[qi] >= 0) continue;
        if (patch_rms(flow, models[r], q, 1) >= grow_tolerance) continue;
        region[qi] = r;
        add_patch(acc[r], q);
        acc[r].solve(models[r]);
        frontier.push_back(q);
      }
    }
  }

  // Agglomerative merging of region models, closest pair first; ties go to
  // the lowest (i, j) index pair.
  const int n = static_cast<int>(acc.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<bool> alive(n, true);
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      dist[i][j] = dist[j][i] = model_disagreement(models[i], models[j], h, w, options.grid);
  while (true) {
    int bi = -1, bj = -1;
    double best = options.merge_threshold;
    for (int i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (int j = i + 1; j < n; ++j) {
        if (alive[j] && dist[i][j] < best) {
          best = dist[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) break;
    acc[bi].merge(acc[bj]);
    acc[bi].solve(models[bi]);
    alive[bj] = false;
    parent[bj] = bi;
    for (int k = 0; k < n; ++k)
      if (alive[k] && k != bi) dist[bi][k] = dist[k][bi] = model_disagreement(models[bi], models[k], h, w, options.grid);
  }
  auto root = [&](int r) {
    while (parent[r] != r) r = parent[r];
    return r;
  };

  std::map<int, int> label_of_root;
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (region[i] < 0) continue;
    const int rt = root(region[i]);
    auto [it, inserted] = label_of_root.try_emplace(rt, static_cast<int>(label_of_root.size()) + 1);
    if (inserted) out.cluster_models.push_back(models[rt]);
    out.labels[i] = it->second;
  }
  return out;
}

void fill_unassigned(LabelMap& lm, const FlowField& flow, double tolerance) {
  const int h = lm.height, w = lm.width;
  bool changed = true;
  while (changed) {
    changed = false;
    auto next = lm.labels;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (lm.labels[static_cast<std::size_t>(y) * w + x] != 0) continue;
        int best_label = 0;
        double best_err = tolerance;
        for (int yy = std::max(0, y - 1); yy <= std::min(h - 1, y + 1); ++yy) {
          for (int xx = std::max(0, x - 1); xx <= std::min(w - 1, x + 1); ++xx) {
            const int l = lm.labels[static_cast<std::size_t>(yy) * w + xx];
            if (l == 0) continue;
            const double e = pixel_error(flow, lm.cluster_models[l - 1], y, x);
            if (e < best_err || (e == best_err && l < best_label)) {
              best_err = e;
              best_label = l;
            }
          }
        }
        if (best_label != 0) {
          next[static_cast<std::size_t>(y) * w + x] = best_label;
          changed = true;
        }
      }
    }
    lm.labels = std::move(next);
  }
}

std::vector<CopyMask> postprocess(const LabelMap& lm, int min_area) {
  const int h = lm.height, w = lm.width;
  auto labels = lm.labels;
  std::vector<bool> seen(labels.size(), false);
  for (std::size_t start = 0; start < labels.size(); ++start) {
    if (labels[start] == 0 || seen[start]) continue;
    const int l = labels[start];
    std::vector<std::size_t> comp{start};
    seen[start] = true;
    for (std::size_t k = 0; k < comp.size(); ++k) {
      const int y = static_cast<int>(comp[k] / w), x = static_cast<int>(comp[k] % w);
      constexpr int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        const int ny = y + dy[d], nx = x + dx[d];
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        const auto ni = static_cast<std::size_t>(ny) * w + nx;
        if (!seen[ni] && labels[ni] == l) {
          seen[ni] = true;
          comp.push_back(ni);
        }
      }
    }
    if (static_cast<int>(comp.size()) < min_area)
      for (auto i : comp) labels[i] = 0;
  }

  std::map<int, std::int64_t> area;
  for (int l : labels)
    if (l != 0) ++area[l];
  if (area.empty()) return {};
  int background = area.begin()->first;
  for (const auto& [l, a] : area)
    if (a > area[background]) background = l;

  std::vector<CopyMask> masks;
  for (const auto& [l, a] : area) {
    if (l == background) continue;
    CopyMask m(h, w);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == l) m.values()[i] = 1.0f;
    masks.push_back(std::move(m));
  }
  return masks;
}

std::vector<CopyMask> segment_flow(const FlowField& flow, const FlowGtOptions& options) {
  auto labels = cluster_affines(flow, fit_all_patches(flow), options.cluster);
  fill_unassigned(labels, flow, 2.0 * options.cluster.residual_threshold);
  const int min_area = std::max(1, static_cast<int>(std::lround(options.min_area_fraction * flow.height * flow.width)));
  return postprocess(labels, min_area);
}

}  // namespace cpgan
