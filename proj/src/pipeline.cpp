#include "mpec/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <tuple>

#include "mpec/rng.hpp"

namespace mpec::pipeline {

namespace {

constexpr std::size_t kNone = static_cast<std::size_t>(-1);

using CellKey = std::tuple<long long, long long, long long>;

CellKey cell_key(const Vec3& p, double cell) {
  return {static_cast<long long>(std::floor(p[0] / cell)),
          static_cast<long long>(std::floor(p[1] / cell)),
          static_cast<long long>(std::floor(p[2] / cell))};
}

void clamp_color(Vec3& c) {
  for (double& x : c) x = std::clamp(x, 0.0, 1.0);
}

Vec3 rgb_to_hsv(const Vec3& c) {
  const double mx = std::max({c[0], c[1], c[2]});
  const double mn = std::min({c[0], c[1], c[2]});
  const double d = mx - mn;
  double h = 0.0;
  if (d > 0.0) {
    if (mx == c[0]) {
      h = std::fmod((c[1] - c[2]) / d, 6.0);
    } else if (mx == c[1]) {
      h = (c[2] - c[0]) / d + 2.0;
    } else {
      h = (c[0] - c[1]) / d + 4.0;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
  }
  const double s = mx > 0.0 ? d / mx : 0.0;
  return {h, s, mx};
}

Vec3 hsv_to_rgb(const Vec3& hsv) {
  double h = std::fmod(hsv[0], 1.0);
  if (h < 0.0) h += 1.0;
  const double s = hsv[1], v = hsv[2];
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

void rotate_about(View& view, int axis, double angle) {
  Vec3 lo = view.points.front(), hi = lo;
  for (const Vec3& p : view.points) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const Vec3 c{0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])};
  const double cs = std::cos(angle), sn = std::sin(angle);
  // Rotation in the plane of the two axes other than `axis`.
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  for (Vec3& p : view.points) {
    const double x = p[a] - c[a], y = p[b] - c[b];
    p[a] = c[a] + cs * x - sn * y;
    p[b] = c[b] + sn * x + cs * y;
  }
}

void keep_positions(View& view, const std::vector<std::size_t>& keep) {
  View out;
  out.points.reserve(keep.size());
  for (std::size_t i : keep) {
    out.points.push_back(view.points[i]);
    out.colors.push_back(view.colors[i]);
    out.entity_mask.push_back(view.entity_mask[i]);
    out.origin_index.push_back(view.origin_index[i]);
    out.masked_flags.push_back(view.masked_flags[i]);
  }
  view = std::move(out);
}

}  // namespace

std::size_t View::masked_count() const {
  return static_cast<std::size_t>(std::count(masked_flags.begin(), masked_flags.end(), 1));
}

AugmentationConfig AugmentationConfig::disabled() {
  AugmentationConfig c;
  c.rotate_x_p = c.rotate_y_p = 0.0;
  c.flip_p = 0.0;
  c.jitter_p = 0.0;
  c.brightness_p = c.contrast_p = c.saturation_p = c.hue_p = 0.0;
  c.color_gauss_p = 0.0;
  c.grid_sample = false;
  c.crop = false;
  return c;
}

void AugmentationConfig::validate() const {
  for (double p : {rotate_x_p, rotate_y_p, flip_p, jitter_p, brightness_p, contrast_p,
                   saturation_p, hue_p, color_gauss_p}) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError("augmentation probabilities must lie in [0,1]");
    }
  }
  if (!(grid_sample_cell > 0.0)) throw ValidationError("grid sample cell must be > 0");
  if (!(crop_ratio > 0.0 && crop_ratio <= 1.0)) {
    throw ValidationError("crop ratio must lie in (0,1]");
  }
  if (jitter_sigma < 0 || jitter_clip < 0 || color_gauss_std < 0 || rotate_angle < 0 ||
      brightness_ratio < 0 || contrast_ratio < 0 || saturation_ratio < 0 || hue_ratio < 0) {
    throw ValidationError("augmentation magnitudes must be >= 0");
  }
}

void GridMaskConfig::validate() const {
  if (!(cell_size > 0.0)) throw ValidationError("mask cell size must be > 0");
  if (!(ratio >= 0.0 && ratio <= 0.5)) {
    throw ValidationError("mask ratio " + std::to_string(ratio) +
                          " outside [0, 0.5]: two exclusive masks cannot each exceed half");
  }
}

View augment_view(const scene::Scene& scene, const AugmentationConfig& config,
                  std::uint64_t seed) {
  config.validate();
  if (scene.points.empty()) throw ValidationError("cannot augment an empty scene");
  Rng rng(seed);
  View v;
  v.points = scene.points;
  v.colors = scene.colors;
  v.entity_mask = scene.entity_mask;
  v.origin_index.resize(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) v.origin_index[i] = i;
  v.masked_flags.assign(scene.size(), 0);

  // Spatial.
  const double max_angle = config.rotate_angle * std::numbers::pi;
  if (rng.bernoulli(config.rotate_x_p)) rotate_about(v, 0, rng.uniform(-max_angle, max_angle));
  if (rng.bernoulli(config.rotate_y_p)) rotate_about(v, 1, rng.uniform(-max_angle, max_angle));
  if (rng.bernoulli(config.flip_p)) {
    for (Vec3& p : v.points) p[0] = -p[0];
  }
  if (rng.bernoulli(config.flip_p)) {
    for (Vec3& p : v.points) p[1] = -p[1];
  }

  // Photometric.
  if (rng.bernoulli(config.jitter_p)) {
    for (Vec3& p : v.points) {
      for (double& x : p) {
        x += std::clamp(rng.normal(0.0, config.jitter_sigma), -config.jitter_clip,
                        config.jitter_clip);
      }
    }
  }
  if (rng.bernoulli(config.brightness_p)) {
    const double f = 1.0 + rng.uniform(-config.brightness_ratio, config.brightness_ratio);
    for (Vec3& c : v.colors) {
      for (double& x : c) x *= f;
      clamp_color(c);
    }
  }
  if (rng.bernoulli(config.contrast_p)) {
    const double f = 1.0 + rng.uniform(-config.contrast_ratio, config.contrast_ratio);
    Vec3 mean{0, 0, 0};
    for (const Vec3& c : v.colors) {
      for (int a = 0; a < 3; ++a) mean[a] += c[a];
    }
    for (double& m : mean) m /= static_cast<double>(v.colors.size());
    for (Vec3& c : v.colors) {
      for (int a = 0; a < 3; ++a) c[a] = (c[a] - mean[a]) * f + mean[a];
      clamp_color(c);
    }
  }
  if (rng.bernoulli(config.saturation_p)) {
    const double f = 1.0 + rng.uniform(-config.saturation_ratio, config.saturation_ratio);
    for (Vec3& c : v.colors) {
      const double gray = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
      for (double& x : c) x = gray + (x - gray) * f;
      clamp_color(c);
    }
  }
  if (rng.bernoulli(config.hue_p)) {
    const double shift = rng.uniform(-config.hue_ratio, config.hue_ratio);
    for (Vec3& c : v.colors) {
      Vec3 hsv = rgb_to_hsv(c);
      hsv[0] += shift;
      c = hsv_to_rgb(hsv);
      clamp_color(c);
    }
  }
  if (rng.bernoulli(config.color_gauss_p)) {
    for (Vec3& c : v.colors) {
      for (double& x : c) x += rng.normal(0.0, config.color_gauss_std);
      clamp_color(c);
    }
  }

  // Sampling.
  if (config.grid_sample) {
    std::map<CellKey, std::vector<std::size_t>> voxels;
    std::vector<CellKey> order;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const CellKey key = cell_key(v.points[i], config.grid_sample_cell);
      auto [it, inserted] = voxels.try_emplace(key);
      if (inserted) order.push_back(key);
      it->second.push_back(i);
    }
    std::vector<std::size_t> keep;
    keep.reserve(order.size());
    for (const CellKey& key : order) {
      const auto& members = voxels[key];
      keep.push_back(members[rng.below(members.size())]);
    }
    std::sort(keep.begin(), keep.end());
    keep_positions(v, keep);
  }
  if (config.crop) {
    const std::size_t n = v.size();
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(config.crop_ratio * static_cast<double>(n) + 1e-9)));
    const Vec3 anchor = v.points[rng.below(n)];
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      for (int a = 0; a < 3; ++a) d += (v.points[i][a] - anchor[a]) * (v.points[i][a] - anchor[a]);
      dist[i] = {d, i};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(count - 1),
                     dist.end());
    std::vector<std::size_t> keep;
    keep.reserve(count);
    for (std::size_t i = 0; i < count; ++i) keep.push_back(dist[i].second);
    std::sort(keep.begin(), keep.end());
    keep_positions(v, keep);
  }
  if (v.points.empty()) throw ValidationError("augmentation left an empty view");

  if (config.center_shift) {
    double mx = 0.0, my = 0.0, mz = v.points.front()[2];
    for (const Vec3& p : v.points) {
      mx += p[0];
      my += p[1];
      mz = std::min(mz, p[2]);
    }
    mx /= static_cast<double>(v.size());
    my /= static_cast<double>(v.size());
    for (Vec3& p : v.points) {
      p[0] -= mx;
      p[1] -= my;
      p[2] -= mz;
    }
  }
  if (config.color_normalize) {
    for (Vec3& c : v.colors) {
      for (double& x : c) x = (x - 0.5) / 0.5;
    }
  }
  return v;
}

View identity_view(const scene::Scene& scene) {
  return augment_view(scene, AugmentationConfig::disabled(), 0);
}

GridPartition partition_grids(std::span<const Vec3> points, double cell_size) {
  if (!(cell_size > 0.0)) throw ValidationError("grid cell size must be > 0");
  GridPartition g;
  g.cell_of_point.resize(points.size());
  std::map<CellKey, std::size_t> dense;
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto [it, inserted] = dense.try_emplace(cell_key(points[i], cell_size), dense.size());
    g.cell_of_point[i] = it->second;
  }
  g.num_cells = dense.size();
  return g;
}

ExclusiveMasks sample_exclusive_masks(std::size_t num_cells, double ratio,
                                      std::uint64_t seed) {
  GridMaskConfig{0.1, ratio}.validate();
  if (num_cells < 2) throw ValidationError("exclusive masks need at least 2 occupied cells");
  const auto m = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_cells)));
  std::vector<std::size_t> cells(num_cells);
  for (std::size_t i = 0; i < num_cells; ++i) cells[i] = i;
  Rng rng(seed);
  rng.shuffle(cells);
  ExclusiveMasks out;
  out.cells_u.assign(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(m));
  out.cells_v.assign(cells.begin() + static_cast<std::ptrdiff_t>(m),
                     cells.begin() + static_cast<std::ptrdiff_t>(2 * m));
  std::sort(out.cells_u.begin(), out.cells_u.end());
  std::sort(out.cells_v.begin(), out.cells_v.end());
  return out;
}

ViewPair make_view_pair(const scene::Scene& scene, const AugmentationConfig& aug,
                        const GridMaskConfig& mask, std::uint64_t seed,
                        bool allow_missing_entities) {
  mask.validate();
  ViewPair pair;
  pair.u = augment_view(scene, aug, derive_seed(seed, {1}));
  pair.v = augment_view(scene, aug, derive_seed(seed, {2}));

  // Union of surviving originals, gridded on original coordinates.
  std::vector<std::uint8_t> present(scene.size(), 0);
  for (std::size_t o : pair.u.origin_index) present[o] = 1;
  for (std::size_t o : pair.v.origin_index) present[o] = 1;
  std::vector<std::size_t> union_ids;
  std::vector<Vec3> union_points;
  for (std::size_t o = 0; o < scene.size(); ++o) {
    if (present[o]) {
      union_ids.push_back(o);
      union_points.push_back(scene.points[o]);
    }
  }
  const GridPartition grid = partition_grids(union_points, mask.cell_size);
  std::vector<std::size_t> cell_of_origin(scene.size(), kNone);
  for (std::size_t i = 0; i < union_ids.size(); ++i) {
    cell_of_origin[union_ids[i]] = grid.cell_of_point[i];
  }
  const ExclusiveMasks masks =
      sample_exclusive_masks(grid.num_cells, mask.ratio, derive_seed(seed, {3}));
  pair.occupied_cells = grid.num_cells;
  pair.masked_cells_u = masks.cells_u;
  pair.masked_cells_v = masks.cells_v;

  auto apply = [&](View& view, const std::vector<std::size_t>& cells) {
    std::vector<std::uint8_t> selected(grid.num_cells, 0);
    for (std::size_t c : cells) selected[c] = 1;
    for (std::size_t i = 0; i < view.size(); ++i) {
      view.masked_flags[i] = selected[cell_of_origin[view.origin_index[i]]];
    }
  };
  apply(pair.u, masks.cells_u);
  apply(pair.v, masks.cells_v);

  std::vector<std::size_t> pos_in_v(scene.size(), kNone);
  for (std::size_t j = 0; j < pair.v.size(); ++j) pos_in_v[pair.v.origin_index[j]] = j;
  for (std::size_t i = 0; i < pair.u.size(); ++i) {
    const std::size_t j = pos_in_v[pair.u.origin_index[i]];
    if (j != kNone) pair.correspondence.emplace_back(i, j);
  }

  std::vector<std::uint8_t> seen(scene.num_entities() + 1, 0);
  for (std::uint32_t l : pair.u.entity_mask) seen[l] = 1;
  for (std::uint32_t l : pair.v.entity_mask) seen[l] = 1;
  for (std::size_t k = 1; k <= scene.num_entities(); ++k) {
    if (!seen[k] && !allow_missing_entities) {
      throw EntityMissingError("entity " + std::to_string(k) + " of " + scene.scene_id +
                               " absent from both views");
    }
  }
  return pair;
}

ViewPair make_shared_view_pair(const scene::Scene& scene, const AugmentationConfig& aug,
                               std::uint64_t seed, bool allow_missing_entities) {
  ViewPair pair;
  pair.u = augment_view(scene, aug, derive_seed(seed, {1}));
  pair.v = pair.u;
  pair.correspondence.reserve(pair.u.size());
  for (std::size_t i = 0; i < pair.u.size(); ++i) pair.correspondence.emplace_back(i, i);
  std::vector<std::uint8_t> seen(scene.num_entities() + 1, 0);
  for (std::uint32_t l : pair.u.entity_mask) seen[l] = 1;
  for (std::size_t k = 1; k <= scene.num_entities(); ++k) {
    if (!seen[k] && !allow_missing_entities) {
      throw EntityMissingError("entity " + std::to_string(k) + " of " + scene.scene_id +
                               " absent from the shared view");
    }
  }
  return pair;
}

}  // namespace mpec::pipeline
