#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mpec/errors.hpp"
#include "mpec/scene.hpp"

namespace mpec::pipeline {

using scene::Vec3;

// One augmented copy of a scene. origin_index maps every surviving point back
// to its index in the source scene.
struct View {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;
  std::vector<std::uint32_t> entity_mask;
  std::vector<std::size_t> origin_index;
  std::vector<std::uint8_t> masked_flags;

  std::size_t size() const { return points.size(); }
  std::size_t masked_count() const;
  bool operator==(const View&) const = default;
};

using PointPair = std::pair<std::size_t, std::size_t>;

struct ViewPair {
  View u;
  View v;
  // (i, j) with u.origin_index[i] == v.origin_index[j], sorted by i.
  std::vector<PointPair> correspondence;
  std::size_t occupied_cells = 0;
  std::vector<std::size_t> masked_cells_u;
  std::vector<std::size_t> masked_cells_v;

  bool operator==(const ViewPair&) const = default;
};

// Defaults reproduce the two-view generation recipe: small x/y tilts, flips,
// coordinate and photometric jitter, 2 cm grid sampling, a 60% crop, then
// centering and color normalisation.
struct AugmentationConfig {
  double rotate_angle = 1.0 / 64.0;  // in multiples of pi, symmetric range
  double rotate_x_p = 1.0;
  double rotate_y_p = 1.0;
  double flip_p = 0.5;
  double jitter_sigma = 0.005;
  double jitter_clip = 0.02;
  double jitter_p = 1.0;
  double brightness_ratio = 0.4;
  double brightness_p = 0.8;
  double contrast_ratio = 0.4;
  double contrast_p = 0.8;
  double saturation_ratio = 0.2;
  double saturation_p = 0.8;
  double hue_ratio = 0.02;
  double hue_p = 0.8;
  double color_gauss_std = 0.05;
  double color_gauss_p = 0.95;
  bool grid_sample = true;
  double grid_sample_cell = 0.02;
  bool crop = true;
  double crop_ratio = 0.6;
  bool center_shift = true;
  bool color_normalize = true;

  // Every random step off; only centering and color normalisation remain.
  static AugmentationConfig disabled();
  void validate() const;
};

struct GridMaskConfig {
  double cell_size = 0.1;
  double ratio = 0.4;

  void validate() const;
};

// Thrown when an entity survives in neither view; callers resample.
class EntityMissingError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

View augment_view(const scene::Scene& scene, const AugmentationConfig& config,
                  std::uint64_t seed);

// Unaugmented, unmasked view used at inference time.
View identity_view(const scene::Scene& scene);

struct GridPartition {
  std::vector<std::size_t> cell_of_point;  // dense cell id per input point
  std::size_t num_cells = 0;
};

// Cells are floor(coordinate / cell_size) per axis, numbered densely in order
// of first occurrence.
GridPartition partition_grids(std::span<const Vec3> points, double cell_size);

struct ExclusiveMasks {
  std::vector<std::size_t> cells_u;
  std::vector<std::size_t> cells_v;
};

// Shuffles the occupied cells and takes two disjoint prefixes of
// floor(ratio * num_cells) cells each.
ExclusiveMasks sample_exclusive_masks(std::size_t num_cells, double ratio,
                                      std::uint64_t seed);

// Two independently augmented views with mutually exclusive grid masks
// computed on the original coordinates of their union. Throws
// EntityMissingError when an entity survives in neither view, unless
// `allow_missing_entities` is set.
ViewPair make_view_pair(const scene::Scene& scene, const AugmentationConfig& aug,
                        const GridMaskConfig& mask, std::uint64_t seed,
                        bool allow_missing_entities = false);

// Single augmented view used for both sides, nothing masked. Stands in for
// the pair when cross-view augmentation is switched off.
ViewPair make_shared_view_pair(const scene::Scene& scene, const AugmentationConfig& aug,
                               std::uint64_t seed, bool allow_missing_entities = false);

}  // namespace mpec::pipeline
