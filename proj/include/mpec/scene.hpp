#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mpec::scene {

using Vec3 = std::array<double, 3>;

// Label used for floor and wall points.
inline constexpr std::uint32_t kBackground = 0;
// Every generated entity carries at least this many points.
inline constexpr std::size_t kMinEntityPoints = 20;

enum class ShapeKind { kBox, kSphere, kCylinder };

const char* shape_name(ShapeKind kind);
ShapeKind shape_from_name(const std::string& name);

struct EntityRecord {
  std::uint32_t entity_id = 0;  // 1..K
  std::uint32_t category_id = 0;
  Vec3 centroid{};
  Vec3 extents{};
  ShapeKind shape = ShapeKind::kBox;

  bool operator==(const EntityRecord&) const = default;
};

struct Scene {
  std::string scene_id;
  std::uint64_t seed = 0;
  std::vector<Vec3> points;   // meters
  std::vector<Vec3> colors;   // [0,1]
  std::vector<std::uint32_t> entity_mask;  // kBackground or 1..K
  std::vector<EntityRecord> entities;      // entities[k-1].entity_id == k
  std::vector<std::string> category_names;

  std::size_t size() const { return points.size(); }
  std::size_t num_entities() const { return entities.size(); }
  // Category of point i, or -1 for background.
  int point_category(std::size_t i) const;

  bool operator==(const Scene&) const = default;
};

struct SceneSetConfig {
  std::size_t num_scenes = 250;
  double room_size_min = 3.0;  // side length range of the square-ish room
  double room_size_max = 4.0;
  double room_height = 2.0;    // z extent of the bounding box
  double wall_height = 1.0;
  std::size_t num_walls = 2;   // 0..4
  std::size_t entities_min = 4;
  std::size_t entities_max = 10;
  std::size_t num_categories = 8;
  std::size_t points_per_entity_min = 40;
  std::size_t points_per_entity_max = 70;
  std::size_t background_points = 180;
  double entity_color_jitter = 0.1;
  double point_color_noise = 0.02;
  std::size_t max_placement_attempts = 500;
  std::uint64_t seed = 20240601;

  void validate() const;
};

std::vector<std::string> default_category_names(std::size_t count);

// Deterministic in (config.seed, scene_index). Throws ValidationError when
// entities cannot be placed without overlap.
Scene generate_scene(const SceneSetConfig& config, std::size_t scene_index);

// Checks the Scene invariants; throws ValidationError naming the violation.
void validate_scene(const Scene& scene);

void save_scene(const Scene& scene, const std::filesystem::path& path);
Scene load_scene(const std::filesystem::path& path);

// Encoded form of the scene file, exposed for byte-level tests.
std::string encode_scene(const Scene& scene);
Scene decode_scene(const std::string& bytes);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Seeded shuffle of 0..count-1, cut by the two fractions (which must sum to
// one). Both parts are returned sorted. Throws when either part is empty.
DatasetSplit split_dataset(std::size_t count, double train_fraction,
                           double val_fraction, std::uint64_t seed);

}  // namespace mpec::scene
