#include "mpec/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "json.hpp"

#include "binary_io.hpp"
#include "file_util.hpp"
#include "mpec/errors.hpp"
#include "mpec/rng.hpp"

namespace mpec::scene {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Vec3 f32(const Vec3& v) { return {f32(v[0]), f32(v[1]), f32(v[2])}; }

Vec3 clamp01(Vec3 c) {
  for (double& v : c) v = std::clamp(v, 0.0, 1.0);
  return c;
}

Vec3 hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
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

// Category-conditioned appearance and size priors.
struct CategoryPrior {
  Vec3 base_color;
  double footprint;  // nominal width/depth (m)
  double height;     // nominal height (m)
  ShapeKind shape;
};

CategoryPrior category_prior(std::size_t category, std::size_t num_categories) {
  CategoryPrior p;
  const double hue = static_cast<double>(category) / static_cast<double>(num_categories);
  const double sat = category % 2 == 0 ? 0.75 : 0.55;
  const double val = category % 4 < 2 ? 0.85 : 0.65;
  p.base_color = hsv_to_rgb(hue, sat, val);
  p.footprint = 0.3 + 0.08 * static_cast<double>(category % 5);
  p.height = 0.3 + 0.1 * static_cast<double>((category * 3) % 7);
  p.shape = static_cast<ShapeKind>(category % 3);
  return p;
}

Vec3 sample_box_surface(Rng& rng, const Vec3& c, const Vec3& e) {
  // Top face plus four sides; the bottom rests on the floor and is unseen.
  const double top = e[0] * e[1];
  const double sx = e[1] * e[2], sy = e[0] * e[2];
  const double total = top + 2 * sx + 2 * sy;
  double r = rng.uniform() * total;
  const double u = rng.uniform() - 0.5, v = rng.uniform() - 0.5;
  if ((r -= top) < 0) return {c[0] + u * e[0], c[1] + v * e[1], c[2] + 0.5 * e[2]};
  if ((r -= sx) < 0) return {c[0] - 0.5 * e[0], c[1] + u * e[1], c[2] + v * e[2]};
  if ((r -= sx) < 0) return {c[0] + 0.5 * e[0], c[1] + u * e[1], c[2] + v * e[2]};
  if ((r -= sy) < 0) return {c[0] + u * e[0], c[1] - 0.5 * e[1], c[2] + v * e[2]};
  return {c[0] + u * e[0], c[1] + 0.5 * e[1], c[2] + v * e[2]};
}

Vec3 sample_sphere_surface(Rng& rng, const Vec3& c, double radius) {
  double x, y, z, n;
  do {
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    n = std::sqrt(x * x + y * y + z * z);
  } while (n < 1e-9);
  return {c[0] + radius * x / n, c[1] + radius * y / n, c[2] + radius * z / n};
}

Vec3 sample_cylinder_surface(Rng& rng, const Vec3& c, double radius, double height) {
  const double side = 2.0 * std::numbers::pi * radius * height;
  const double top = std::numbers::pi * radius * radius;
  if (rng.uniform() * (side + top) < side) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return {c[0] + radius * std::cos(a), c[1] + radius * std::sin(a),
            c[2] + (rng.uniform() - 0.5) * height};
  }
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double rr = radius * std::sqrt(rng.uniform());
  return {c[0] + rr * std::cos(a), c[1] + rr * std::sin(a), c[2] + 0.5 * height};
}

bool footprints_overlap(const EntityRecord& a, const EntityRecord& b, double gap) {
  return std::abs(a.centroid[0] - b.centroid[0]) < 0.5 * (a.extents[0] + b.extents[0]) + gap &&
         std::abs(a.centroid[1] - b.centroid[1]) < 0.5 * (a.extents[1] + b.extents[1]) + gap;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("scene invariant violated: " + what);
}

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Vec3 vec_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("expected 3-vector in scene header");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kBox: return "box";
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kCylinder: return "cylinder";
  }
  return "box";
}

ShapeKind shape_from_name(const std::string& name) {
  if (name == "box") return ShapeKind::kBox;
  if (name == "sphere") return ShapeKind::kSphere;
  if (name == "cylinder") return ShapeKind::kCylinder;
  throw IoError("unknown shape kind '" + name + "'");
}

int Scene::point_category(std::size_t i) const {
  const std::uint32_t label = entity_mask[i];
  if (label == kBackground) return -1;
  return static_cast<int>(entities[label - 1].category_id);
}

void SceneSetConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("scene config: ") + what);
  };
  need(num_scenes >= 1, "num_scenes must be >= 1");
  need(room_size_min > 0 && room_size_min <= room_size_max, "room size range is empty");
  need(room_height > 0 && wall_height >= 0 && wall_height <= room_height,
       "wall_height must lie in [0, room_height]");
  need(num_walls <= 4, "num_walls must be <= 4");
  need(entities_min >= 1 && entities_min <= entities_max, "entity count range is empty");
  need(num_categories >= 2, "num_categories must be >= 2");
  need(points_per_entity_min >= kMinEntityPoints &&
           points_per_entity_min <= points_per_entity_max,
       "points per entity range must be non-empty with min >= 20");
  need(entity_color_jitter >= 0 && point_color_noise >= 0, "color noise must be >= 0");
  need(max_placement_attempts >= 1, "max_placement_attempts must be >= 1");
}

std::vector<std::string> default_category_names(std::size_t count) {
  static const char* kNames[] = {"chair", "table", "sofa", "bed",
                                 "cabinet", "lamp", "desk", "bookshelf"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    names.push_back(i < std::size(kNames) ? kNames[i]
                                          : "category_" + std::to_string(i));
  }
  return names;
}

Scene generate_scene(const SceneSetConfig& config, std::size_t scene_index) {
  config.validate();
  if (scene_index >= config.num_scenes) {
    throw ValidationError("scene index " + std::to_string(scene_index) +
                          " >= num_scenes " + std::to_string(config.num_scenes));
  }
  Scene s;
  s.seed = derive_seed(config.seed, {scene_index});
  char id_buf[32];
  std::snprintf(id_buf, sizeof(id_buf), "scene_%04zu", scene_index);
  s.scene_id = id_buf;
  s.category_names = default_category_names(config.num_categories);
  Rng rng(s.seed);

  const double room_x = f32(rng.uniform(config.room_size_min, config.room_size_max));
  const double room_y = f32(rng.uniform(config.room_size_min, config.room_size_max));
  const double margin = 0.05, gap = 0.08;

  const auto num_entities =
      static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(config.entities_min),
                                         static_cast<std::int64_t>(config.entities_max)));
  for (std::size_t k = 0; k < num_entities; ++k) {
    EntityRecord e;
    e.entity_id = static_cast<std::uint32_t>(k + 1);
    e.category_id = static_cast<std::uint32_t>(rng.below(config.num_categories));
    const CategoryPrior prior = category_prior(e.category_id, config.num_categories);
    e.shape = prior.shape;
    const double w = prior.footprint * rng.uniform(0.85, 1.15);
    const double d = prior.footprint * rng.uniform(0.85, 1.15);
    const double h = std::min(prior.height * rng.uniform(0.85, 1.15), config.room_height);
    switch (e.shape) {
      case ShapeKind::kBox: e.extents = {w, d, h}; break;
      case ShapeKind::kSphere: e.extents = {w, w, w}; break;
      case ShapeKind::kCylinder: e.extents = {w, w, h}; break;
    }
    e.extents = f32(e.extents);
    bool placed = false;
    for (std::size_t attempt = 0; attempt < config.max_placement_attempts; ++attempt) {
      const double lo_x = margin + 0.5 * e.extents[0], hi_x = room_x - lo_x;
      const double lo_y = margin + 0.5 * e.extents[1], hi_y = room_y - lo_y;
      if (hi_x <= lo_x || hi_y <= lo_y) break;
      e.centroid = f32(Vec3{rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y),
                            0.5 * e.extents[2]});
      const bool clash = std::any_of(s.entities.begin(), s.entities.end(),
                                     [&](const EntityRecord& o) {
                                       return footprints_overlap(e, o, gap);
                                     });
      if (!clash) {
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw ValidationError("entity placement failed for " + s.scene_id + " entity " +
                            std::to_string(k + 1) + " after " +
                            std::to_string(config.max_placement_attempts) +
                            " attempts (room too small)");
    }
    s.entities.push_back(e);
  }

  auto push_point = [&](Vec3 p, Vec3 c, std::uint32_t label) {
    p[0] = std::clamp(p[0], 0.0, room_x);
    p[1] = std::clamp(p[1], 0.0, room_y);
    p[2] = std::clamp(p[2], 0.0, config.room_height);
    s.points.push_back(f32(p));
    s.colors.push_back(f32(clamp01(c)));
    s.entity_mask.push_back(label);
  };
  auto noisy = [&](const Vec3& base, double sigma) {
    return Vec3{base[0] + rng.normal(0.0, sigma), base[1] + rng.normal(0.0, sigma),
                base[2] + rng.normal(0.0, sigma)};
  };

  // Background: floor plus up to four walls, split by area.
  const double wall_len[4] = {room_x, room_y, room_x, room_y};
  const double floor_area = room_x * room_y;
  double wall_area = 0.0;
  for (std::size_t w = 0; w < config.num_walls; ++w) wall_area += wall_len[w] * config.wall_height;
  const Vec3 floor_color{0.55, 0.52, 0.48}, wall_color{0.82, 0.82, 0.80};
  for (std::size_t i = 0; i < config.background_points; ++i) {
    double r = rng.uniform() * (floor_area + wall_area);
    if (r < floor_area) {
      push_point({rng.uniform(0.0, room_x), rng.uniform(0.0, room_y), 0.0},
                 noisy(floor_color, config.point_color_noise), kBackground);
      continue;
    }
    r -= floor_area;
    std::size_t w = 0;
    while (w + 1 < config.num_walls && r >= wall_len[w] * config.wall_height) {
      r -= wall_len[w] * config.wall_height;
      ++w;
    }
    const double t = rng.uniform(0.0, wall_len[w]);
    const double z = rng.uniform(0.0, config.wall_height);
    Vec3 p;
    switch (w) {
      case 0: p = {t, 0.0, z}; break;
      case 1: p = {0.0, t, z}; break;
      case 2: p = {t, room_y, z}; break;
      default: p = {room_x, t, z}; break;
    }
    push_point(p, noisy(wall_color, config.point_color_noise), kBackground);
  }

  for (const EntityRecord& e : s.entities) {
    const CategoryPrior prior = category_prior(e.category_id, config.num_categories);
    Vec3 color = prior.base_color;
    for (double& c : color) {
      c = std::clamp(c + rng.uniform(-config.entity_color_jitter, config.entity_color_jitter),
                     0.0, 1.0);
    }
    const auto n = static_cast<std::size_t>(
        rng.range(static_cast<std::int64_t>(config.points_per_entity_min),
                  static_cast<std::int64_t>(config.points_per_entity_max)));
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 p;
      switch (e.shape) {
        case ShapeKind::kBox: p = sample_box_surface(rng, e.centroid, e.extents); break;
        case ShapeKind::kSphere:
          p = sample_sphere_surface(rng, e.centroid, 0.5 * e.extents[0]);
          break;
        case ShapeKind::kCylinder:
          p = sample_cylinder_surface(rng, e.centroid, 0.5 * e.extents[0], e.extents[2]);
          break;
      }
      push_point(p, noisy(color, config.point_color_noise), e.entity_id);
    }
  }
  validate_scene(s);
  return s;
}

void validate_scene(const Scene& s) {
  const std::size_t n = s.points.size();
  check(s.colors.size() == n, "colors length differs from points");
  check(s.entity_mask.size() == n, "entity_mask length differs from points");
  const std::size_t k = s.entities.size();
  std::vector<std::size_t> counts(k + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t label = s.entity_mask[i];
    check(label <= k, "point " + std::to_string(i) + " has entity label " +
                          std::to_string(label) + " > K=" + std::to_string(k));
    ++counts[label];
    for (double c : s.colors[i]) check(c >= 0.0 && c <= 1.0, "color outside [0,1]");
    for (double v : s.points[i]) check(std::isfinite(v), "non-finite coordinate");
  }
  for (std::size_t e = 0; e < k; ++e) {
    const EntityRecord& rec = s.entities[e];
    check(rec.entity_id == e + 1, "entity ids must be 1..K in order");
    check(rec.category_id < s.category_names.size(),
          "entity " + std::to_string(e + 1) + " category out of range");
    for (double x : rec.extents) check(x > 0.0, "non-positive entity extent");
    check(counts[e + 1] >= kMinEntityPoints,
          "entity " + std::to_string(e + 1) + " has " + std::to_string(counts[e + 1]) +
              " points, fewer than " + std::to_string(kMinEntityPoints));
  }
}

std::string encode_scene(const Scene& s) {
  json header;
  header["version"] = kFormatVersion;
  header["scene_id"] = s.scene_id;
  header["n_points"] = s.points.size();
  header["n_entities"] = s.entities.size();
  header["categories"] = s.category_names;
  header["seed"] = s.seed;
  json ents = json::array();
  for (const EntityRecord& e : s.entities) {
    ents.push_back({{"id", e.entity_id},
                    {"category_id", e.category_id},
                    {"centroid", vec_json(e.centroid)},
                    {"extents", vec_json(e.extents)},
                    {"shape", shape_name(e.shape)}});
  }
  header["entities"] = ents;
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 28 * s.points.size());
  for (const Vec3& p : s.points) {
    for (double v : p) detail::put_f32(out, static_cast<float>(v));
  }
  for (const Vec3& c : s.colors) {
    for (double v : c) detail::put_f32(out, static_cast<float>(v));
  }
  for (std::uint32_t l : s.entity_mask) detail::put_u32(out, l);
  return out;
}

Scene decode_scene(const std::string& bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) {
    throw IoError("malformed scene file: no header terminator before byte offset " +
                  std::to_string(bytes.size()));
  }
  json header;
  try {
    header = json::parse(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(nl));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed scene header: ") + e.what());
  }
  Scene s;
  std::size_t n = 0;
  try {
    const int version = header.at("version").get<int>();
    if (version != kFormatVersion) {
      throw IoError("scene file version mismatch: got " + std::to_string(version) +
                    ", expected " + std::to_string(kFormatVersion));
    }
    s.scene_id = header.at("scene_id").get<std::string>();
    s.seed = header.at("seed").get<std::uint64_t>();
    s.category_names = header.at("categories").get<std::vector<std::string>>();
    n = header.at("n_points").get<std::size_t>();
    const auto k = header.at("n_entities").get<std::size_t>();
    for (const json& je : header.at("entities")) {
      EntityRecord e;
      e.entity_id = je.at("id").get<std::uint32_t>();
      e.category_id = je.at("category_id").get<std::uint32_t>();
      e.centroid = vec_from_json(je.at("centroid"));
      e.extents = vec_from_json(je.at("extents"));
      e.shape = shape_from_name(je.at("shape").get<std::string>());
      s.entities.push_back(e);
    }
    if (s.entities.size() != k) throw IoError("n_entities does not match entity list");
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed scene header: ") + e.what());
  }
  const std::size_t body = nl + 1;
  const std::size_t expected = body + 28 * n;
  if (bytes.size() < expected) {
    throw IoError("truncated scene file: body ends at byte offset " +
                  std::to_string(bytes.size()) + ", expected " + std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw IoError("trailing data in scene file after byte offset " + std::to_string(expected));
  }
  const char* p = bytes.data() + body;
  s.points.resize(n);
  s.colors.resize(n);
  s.entity_mask.resize(n);
  for (auto& v : s.points) {
    for (double& x : v) {
      x = detail::get_f32(p);
      p += 4;
    }
  }
  for (auto& v : s.colors) {
    for (double& x : v) {
      x = detail::get_f32(p);
      p += 4;
    }
  }
  for (auto& l : s.entity_mask) {
    l = detail::get_u32(p);
    p += 4;
  }
  validate_scene(s);
  return s;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  detail::write_file(path, encode_scene(scene));
}

Scene load_scene(const std::filesystem::path& path) {
  return decode_scene(detail::read_file(path));
}

DatasetSplit split_dataset(std::size_t count, double train_fraction,
                           double val_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 ||
      std::abs(train_fraction + val_fraction - 1.0) > 1e-9) {
    throw ValidationError("split fractions must be non-negative and sum to 1");
  }
  std::vector<std::size_t> ids(count);
  for (std::size_t i = 0; i < count; ++i) ids[i] = i;
  Rng rng(derive_seed(seed, {0x5B117}));
  rng.shuffle(ids);
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(count)));
  DatasetSplit split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  if (split.train.empty() || split.val.empty()) {
    throw ValidationError("dataset split produced an empty part (" +
                          std::to_string(split.train.size()) + " train, " +
                          std::to_string(split.val.size()) + " val)");
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

}  // namespace mpec::scene
