#include "mpec/config.hpp"

#include <cstdlib>

#include "file_util.hpp"
#include "mpec/errors.hpp"

using nlohmann::json;

namespace mpec::scene {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SceneSetConfig, num_scenes, room_size_min, room_size_max,
                                   room_height, wall_height, num_walls, entities_min,
                                   entities_max, num_categories, points_per_entity_min,
                                   points_per_entity_max, background_points,
                                   entity_color_jitter, point_color_noise,
                                   max_placement_attempts, seed)
}  // namespace mpec::scene

namespace mpec::pipeline {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AugmentationConfig, rotate_angle, rotate_x_p, rotate_y_p,
                                   flip_p, jitter_sigma, jitter_clip, jitter_p,
                                   brightness_ratio, brightness_p, contrast_ratio, contrast_p,
                                   saturation_ratio, saturation_p, hue_ratio, hue_p,
                                   color_gauss_std, color_gauss_p, grid_sample,
                                   grid_sample_cell, crop, crop_ratio, center_shift,
                                   color_normalize)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GridMaskConfig, cell_size, ratio)
}  // namespace mpec::pipeline

namespace mpec::model {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EncoderConfig, hidden, out_dim, blocks, k)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AdapterConfig, hidden, out_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelConfig, encoder, adapter, init_seed)
}  // namespace mpec::model

namespace mpec::losses {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossConfig, tau, alpha, beta, max_background, e2t_use_tau,
                                   pool_features)
}  // namespace mpec::losses

namespace mpec::trainer {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, lr, epochs, warmup_steps, batch_size,
                                   texts_per_scene, weight_decay, beta1, beta2, eps, use_p2e,
                                   use_e2l, cross_view_aug, use_captions, use_referrals, seed,
                                   checkpoint_every, view_attempts)
}  // namespace mpec::trainer

namespace mpec::config {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SplitConfig, train_fraction, val_fraction, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(VocabularyConfig, dim, num_relations, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalConfig, split)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PathsConfig, data_dir, out_dir)

namespace {

bool compatible(const json& def, const json& v) {
  switch (def.type()) {
    case json::value_t::number_unsigned:
    case json::value_t::number_integer:
      return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    case json::value_t::number_float:
      return v.is_number();
    case json::value_t::boolean:
      return v.is_boolean();
    case json::value_t::string:
      return v.is_string();
    default:
      return false;
  }
}

// Copies `in` over `base`, which holds the defaults and so defines the schema.
void merge_strict(json& base, const json& in, const std::string& prefix) {
  if (!in.is_object()) {
    throw ValidationError("config section " + (prefix.empty() ? "<root>" : prefix) +
                          " must be an object");
  }
  for (const auto& [key, value] : in.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ValidationError("unknown config key: " + path);
    json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, path);
    } else if (!compatible(slot, value)) {
      throw ValidationError("config key " + path + " expects " + slot.type_name() +
                            ", got " + value.dump());
    } else {
      slot = value;
    }
  }
}

}  // namespace

void RunConfig::validate() const {
  scene.validate();
  if (!(split.train_fraction > 0.0) || !(split.val_fraction > 0.0) ||
      std::abs(split.train_fraction + split.val_fraction - 1.0) > 1e-9) {
    throw ValidationError("split fractions must be positive and sum to 1");
  }
  if (vocabulary.dim == 0) throw ValidationError("vocabulary.dim must be >= 1");
  augmentation.validate();
  masking.validate();
  model.validate();
  loss.validate();
  train.validate();
  if (model.adapter.out_dim != vocabulary.dim) {
    throw ValidationError("model.adapter.out_dim (" + std::to_string(model.adapter.out_dim) +
                          ") must equal vocabulary.dim (" + std::to_string(vocabulary.dim) + ")");
  }
  if (eval.split != "train" && eval.split != "val") {
    throw ValidationError("eval.split must be \"train\" or \"val\"");
  }
}

json to_json(const RunConfig& c) {
  return json{{"scene", c.scene},   {"split", c.split},     {"vocabulary", c.vocabulary},
              {"augmentation", c.augmentation},            {"masking", c.masking},
              {"model", c.model},   {"loss", c.loss},       {"train", c.train},
              {"eval", c.eval},     {"paths", c.paths}};
}

RunConfig from_json(const json& j) {
  json merged = to_json(RunConfig{});
  merge_strict(merged, j, "");
  RunConfig c;
  c.scene = merged["scene"].get<scene::SceneSetConfig>();
  c.split = merged["split"].get<SplitConfig>();
  c.vocabulary = merged["vocabulary"].get<VocabularyConfig>();
  c.augmentation = merged["augmentation"].get<pipeline::AugmentationConfig>();
  c.masking = merged["masking"].get<pipeline::GridMaskConfig>();
  c.model = merged["model"].get<model::ModelConfig>();
  c.loss = merged["loss"].get<losses::LossConfig>();
  c.train = merged["train"].get<trainer::TrainConfig>();
  c.eval = merged["eval"].get<EvalConfig>();
  c.paths = merged["paths"].get<PathsConfig>();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override must look like section.key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ValidationError("malformed override key: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    json& child = (*node)[part];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ValidationError("override path is not a section: " + key);
    node = &child;
    start = dot + 1;
  }
}

RunConfig resolve(const std::optional<std::filesystem::path>& file,
                  const std::vector<std::string>& overrides) {
  json j = json::object();
  if (file) {
    const std::string text = detail::read_file(*file);
    j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ValidationError("config file is not valid JSON: " + file->string());
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = from_json(j);
  if (const char* env = std::getenv("MPEC_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ValidationError(std::string("MPEC_SEED is not an integer: ") + env);
    c.train.seed = s;
  }
  c.validate();
  return c;
}

json training_view(const RunConfig& config) {
  json j = to_json(config);
  j.erase("paths");
  j.erase("eval");
  return j;
}

trainer::TrainSetup train_setup(const RunConfig& c) {
  trainer::TrainSetup s;
  s.model = c.model;
  s.augmentation = c.augmentation;
  s.masking = c.masking;
  s.loss = c.loss;
  s.train = c.train;
  s.resolved = training_view(c);
  return s;
}

}  // namespace mpec::config
