#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mpec/errors.hpp"
#include "mpec/pipeline.hpp"
#include "mpec/rng.hpp"
#include "mpec/scene.hpp"

using namespace mpec;
using namespace mpec::pipeline;

namespace {

scene::Scene cloud(std::size_t n, double extent, std::uint64_t seed) {
  Rng rng(seed);
  scene::Scene s;
  s.scene_id = "cloud";
  for (std::size_t i = 0; i < n; ++i) {
    s.points.push_back({rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(0, extent)});
    s.colors.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    s.entity_mask.push_back(scene::kBackground);
  }
  return s;
}

AugmentationConfig only_crop() {
  AugmentationConfig c = AugmentationConfig::disabled();
  c.crop = true;
  return c;
}

void check_view_invariants(const scene::Scene& s, const View& v) {
  std::set<std::size_t> seen(v.origin_index.begin(), v.origin_index.end());
  CHECK(seen.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(v.entity_mask[i] == s.entity_mask[v.origin_index[i]]);
  }
}

}  // namespace

TEST_CASE("disabled augmentation is centering and color normalisation only") {
  const scene::Scene s = scene::generate_scene(scene::SceneSetConfig{}, 0);
  const View v = augment_view(s, AugmentationConfig::disabled(), 5);
  REQUIRE(v.size() == s.size());
  double mx = 0, my = 0, mz = s.points[0][2];
  for (const auto& p : s.points) {
    mx += p[0];
    my += p[1];
    mz = std::min(mz, p[2]);
  }
  mx /= static_cast<double>(s.size());
  my /= static_cast<double>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(v.origin_index[i] == i);
    CHECK(v.points[i][0] == doctest::Approx(s.points[i][0] - mx).epsilon(1e-12));
    CHECK(v.points[i][1] == doctest::Approx(s.points[i][1] - my).epsilon(1e-12));
    CHECK(v.points[i][2] == doctest::Approx(s.points[i][2] - mz).epsilon(1e-12));
    for (int a = 0; a < 3; ++a) CHECK(v.colors[i][a] == (s.colors[i][a] - 0.5) / 0.5);
  }
  CHECK(identity_view(s) == v);
}

TEST_CASE("crop keeps exactly 60 percent") {
  const scene::Scene s = cloud(1000, 1.0, 3);
  const View v = augment_view(s, only_crop(), 9);
  CHECK(v.size() == 600);
  check_view_invariants(s, v);
}

TEST_CASE("grid sampling a single voxel keeps one point") {
  const scene::Scene s = cloud(50, 0.019, 4);
  AugmentationConfig c = AugmentationConfig::disabled();
  c.grid_sample = true;
  CHECK(augment_view(s, c, 1).size() == 1);
}

TEST_CASE("default augmentation preserves labels and provenance") {
  const scene::Scene s = scene::generate_scene(scene::SceneSetConfig{}, 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const View v = augment_view(s, AugmentationConfig{}, seed);
    check_view_invariants(s, v);
    for (const auto& c : v.colors) {
      for (double x : c) {
        CHECK(x >= -1.0);
        CHECK(x <= 1.0);
      }
    }
  }
  CHECK(augment_view(s, AugmentationConfig{}, 3) == augment_view(s, AugmentationConfig{}, 3));
}

TEST_CASE("augmentation config validation") {
  AugmentationConfig c;
  c.flip_p = 1.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = AugmentationConfig{};
  c.crop_ratio = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = AugmentationConfig{};
  c.grid_sample_cell = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS((GridMaskConfig{0.1, 0.6}.validate()), ValidationError);
  CHECK_NOTHROW((GridMaskConfig{0.1, 0.5}.validate()));
}

TEST_CASE("grid partition") {
  const std::vector<Vec3> two = {{0.05, 0.05, 0.05}, {0.15, 0.05, 0.05}};
  const GridPartition g2 = partition_grids(two, 0.1);
  CHECK(g2.num_cells == 2);
  CHECK(g2.cell_of_point[0] != g2.cell_of_point[1]);
  const std::vector<Vec3> inside = {{0.0, 0.0, 0.0}, {0.099, 0.05, 0.01}, {0.03, 0.099, 0.099}};
  CHECK(partition_grids(inside, 0.1).num_cells == 1);
  const std::vector<Vec3> boundary = {{0.05, 0.05, 0.05}, {0.1, 0.05, 0.05}};
  CHECK(partition_grids(boundary, 0.1).num_cells == 2);
  CHECK_THROWS_AS(partition_grids(two, 0.0), ValidationError);
}

TEST_CASE("exclusive masks") {
  const ExclusiveMasks m = sample_exclusive_masks(20, 0.4, 1);
  CHECK(m.cells_u.size() == 8);
  CHECK(m.cells_v.size() == 8);
  std::vector<std::size_t> both;
  std::set_intersection(m.cells_u.begin(), m.cells_u.end(), m.cells_v.begin(), m.cells_v.end(),
                        std::back_inserter(both));
  CHECK(both.empty());
  const ExclusiveMasks zero = sample_exclusive_masks(20, 0.0, 1);
  CHECK(zero.cells_u.empty());
  CHECK(zero.cells_v.empty());
  CHECK_THROWS_AS(sample_exclusive_masks(1, 0.4, 1), ValidationError);
  CHECK_THROWS_AS(sample_exclusive_masks(20, 0.51, 1), ValidationError);
}

TEST_CASE("exclusive masks never overlap over 1000 seeds") {
  Rng rng(77);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const std::size_t cells = 2 + rng.below(300);
    const double ratio = rng.uniform(0.0, 0.5);
    const ExclusiveMasks m = sample_exclusive_masks(cells, ratio, seed);
    const auto expect = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(cells)));
    CHECK(m.cells_u.size() == expect);
    CHECK(m.cells_v.size() == expect);
    std::set<std::size_t> u(m.cells_u.begin(), m.cells_u.end());
    for (std::size_t c : m.cells_v) CHECK(u.count(c) == 0);
  }
}

TEST_CASE("disabled augmentation gives a total correspondence") {
  const scene::Scene s = scene::generate_scene(scene::SceneSetConfig{}, 2);
  const ViewPair p = make_view_pair(s, AugmentationConfig::disabled(), GridMaskConfig{}, 4);
  CHECK(p.correspondence.size() == s.size());
  CHECK(p.u.size() == s.size());
  CHECK(p.v.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(p.correspondence[i] == PointPair{i, i});
    CHECK_FALSE((p.u.masked_flags[i] && p.v.masked_flags[i]));
  }
}

TEST_CASE("view pair invariants under default augmentation") {
  const scene::SceneSetConfig cfg;
  double masked = 0.0, total = 0.0;
  for (std::size_t idx = 0; idx < 100; ++idx) {
    const scene::Scene s = scene::generate_scene(cfg, idx);
    ViewPair p;
    try {
      p = make_view_pair(s, AugmentationConfig{}, GridMaskConfig{}, idx);
    } catch (const EntityMissingError&) {
      p = make_view_pair(s, AugmentationConfig{}, GridMaskConfig{}, idx, true);
    }
    check_view_invariants(s, p.u);
    check_view_invariants(s, p.v);
    CHECK(p.correspondence.size() <= std::min(p.u.size(), p.v.size()));
    std::set<std::size_t> is, js;
    for (const auto& [i, j] : p.correspondence) {
      CHECK(p.u.origin_index[i] == p.v.origin_index[j]);
      is.insert(i);
      js.insert(j);
    }
    CHECK(is.size() == p.correspondence.size());
    CHECK(js.size() == p.correspondence.size());
    const auto expect = static_cast<std::size_t>(std::floor(0.4 * static_cast<double>(p.occupied_cells)));
    CHECK(p.masked_cells_u.size() == expect);
    CHECK(p.masked_cells_v.size() == expect);
    std::set<std::size_t> masked_u;
    for (std::size_t i = 0; i < p.u.size(); ++i) {
      if (p.u.masked_flags[i]) masked_u.insert(p.u.origin_index[i]);
    }
    for (std::size_t j = 0; j < p.v.size(); ++j) {
      if (p.v.masked_flags[j]) CHECK(masked_u.count(p.v.origin_index[j]) == 0);
    }
    masked += static_cast<double>(p.u.masked_count() + p.v.masked_count());
    total += static_cast<double>(p.u.size() + p.v.size());
  }
  CHECK(std::abs(masked / total - 0.4) <= 0.05);
}

TEST_CASE("view pairs are deterministic") {
  const scene::Scene s = scene::generate_scene(scene::SceneSetConfig{}, 5);
  const auto a = make_view_pair(s, AugmentationConfig{}, GridMaskConfig{}, 8, true);
  const auto b = make_view_pair(s, AugmentationConfig{}, GridMaskConfig{}, 8, true);
  CHECK(a == b);
}

TEST_CASE("shared view pair matches every point to itself and masks nothing") {
  const scene::Scene s = scene::generate_scene(scene::SceneSetConfig{}, 6);
  const ViewPair p = make_shared_view_pair(s, AugmentationConfig{}, 3, true);
  CHECK(p.u == p.v);
  CHECK(p.correspondence.size() == p.u.size());
  CHECK(p.u.masked_count() == 0);
}
