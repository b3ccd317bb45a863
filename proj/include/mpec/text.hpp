#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mpec/num/tensor.hpp"
#include "mpec/scene.hpp"

namespace mpec::text {

// Frozen stand-in for a pretrained text encoder: one unit anchor per
// category and one unit vector per spatial relation, orthogonal to the
// anchor span. Immutable once built.
struct Vocabulary {
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  num::Tensor anchors;    // C x dim
  num::Tensor relations;  // R x dim
  std::vector<std::string> category_names;

  std::size_t num_categories() const { return anchors.rows(); }
  std::size_t num_relations() const { return relations.rows(); }
  bool operator==(const Vocabulary&) const = default;
};

inline constexpr double kMaxAnchorCosine = 0.3;
inline constexpr std::size_t kMaxVocabularyAttempts = 10000;
inline constexpr double kCaptionNoise = 0.25;
inline constexpr double kReferralNoise = 0.15;
inline constexpr double kReferralRelationWeight = 0.3;

Vocabulary build_vocabulary(std::size_t num_categories, std::size_t num_relations,
                            std::size_t dim, std::uint64_t seed,
                            std::vector<std::string> category_names = {});

std::string encode_vocabulary(const Vocabulary& vocab);
Vocabulary decode_vocabulary(const std::string& json_text);
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

enum class TextKind { kCaption, kReferral };

struct TextDescription {
  std::size_t text_id = 0;
  TextKind kind = TextKind::kCaption;
  std::vector<std::uint32_t> target_entity_ids;   // non-empty
  std::vector<std::uint32_t> context_entity_ids;  // referrals only
  std::optional<std::size_t> relation_id;
  std::vector<double> embedding;                  // unit norm, dim
};

struct TextEmbeddingSet {
  std::vector<TextDescription> texts;

  std::size_t size() const { return texts.size(); }
  // N_T x dim matrix of embeddings, row order = texts order.
  num::Tensor embeddings() const;
};

// Nearest anchor by cosine; ties go to the lowest category id.
std::size_t nearest_anchor(const Vocabulary& vocab, const std::vector<double>& v);

// Noise is isotropic Gaussian with per-coordinate variance sigma^2/dim, so
// sigma is the expected noise norm. Draws are resampled until the nearest
// anchor is the entity's own category.
TextDescription embed_caption(const Vocabulary& vocab, const scene::EntityRecord& entity,
                              std::uint64_t noise_seed, double sigma = kCaptionNoise);

TextDescription embed_referral(const Vocabulary& vocab, const scene::EntityRecord& target,
                               const scene::EntityRecord& context, std::size_t relation_id,
                               std::uint64_t noise_seed, double sigma = kReferralNoise,
                               double relation_weight = kReferralRelationWeight);

// The anchor itself; the evaluation-time query for a category name.
std::vector<double> embed_category(const Vocabulary& vocab, std::size_t category_id);

struct TextTypes {
  bool captions = true;
  bool referrals = true;
};

// n_texts descriptions, targets drawn with replacement. With both types
// enabled each draw is a caption or a referral with equal probability. A
// referral needs a second entity as context, so single-entity scenes only
// receive captions.
TextEmbeddingSet sample_texts(const scene::Scene& scene, const Vocabulary& vocab,
                              std::size_t n_texts, std::uint64_t seed,
                              TextTypes types = {});

}  // namespace mpec::text
