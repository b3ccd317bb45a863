#include "mpec/text.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "json.hpp"

#include "file_util.hpp"
#include "mpec/errors.hpp"
#include "mpec/rng.hpp"

namespace mpec::text {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr std::size_t kMaxEmbedRetries = 1000;

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (n == 0.0) throw NumericalError("cannot normalize a zero embedding");
  for (double& x : v) x /= n;
}

std::vector<double> gaussian(Rng& rng, std::size_t dim, double stddev) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal(0.0, stddev);
  return v;
}

std::vector<double> row_vec(const num::Tensor& t, std::size_t r) {
  auto row = t.row(r);
  return {row.begin(), row.end()};
}

json tensor_rows(const num::Tensor& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) rows.push_back(row_vec(t, r));
  return rows;
}

num::Tensor tensor_from_rows(const json& j, std::size_t dim) {
  num::Tensor t(j.size(), dim);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (row.size() != dim) throw IoError("vocabulary row has wrong dimension");
    std::copy(row.begin(), row.end(), t.row(r).begin());
  }
  return t;
}

// Resamples `draw` until its nearest anchor is `category`.
template <typename Draw>
std::vector<double> accept_nearest(const Vocabulary& vocab, std::size_t category,
                                   Draw&& draw) {
  for (std::size_t attempt = 0; attempt < kMaxEmbedRetries; ++attempt) {
    std::vector<double> v = draw();
    normalize(v);
    if (nearest_anchor(vocab, v) == category) return v;
  }
  throw ValidationError("text embedding retries exhausted for category " +
                        std::to_string(category));
}

}  // namespace

Vocabulary build_vocabulary(std::size_t num_categories, std::size_t num_relations,
                            std::size_t dim, std::uint64_t seed,
                            std::vector<std::string> category_names) {
  if (num_categories < 1) throw ValidationError("vocabulary needs >= 1 category");
  if (dim < num_categories + num_relations) {
    throw ValidationError("vocabulary dim " + std::to_string(dim) +
                          " < categories + relations");
  }
  if (category_names.empty()) category_names = scene::default_category_names(num_categories);
  if (category_names.size() != num_categories) {
    throw ValidationError("category name count differs from category count");
  }
  Vocabulary v;
  v.dim = dim;
  v.seed = seed;
  v.category_names = std::move(category_names);
  v.anchors = num::Tensor(num_categories, dim);
  Rng rng(derive_seed(seed, {0xA4C}));
  std::size_t attempts = 0;
  for (std::size_t c = 0; c < num_categories; ++c) {
    while (true) {
      if (++attempts > kMaxVocabularyAttempts) {
        throw ValidationError("could not place anchors with |cos| <= 0.3 within " +
                              std::to_string(kMaxVocabularyAttempts) + " attempts");
      }
      std::vector<double> a = gaussian(rng, dim, 1.0);
      normalize(a);
      bool ok = true;
      for (std::size_t p = 0; p < c && ok; ++p) {
        ok = std::abs(dot(a, v.anchors.row(p))) <= kMaxAnchorCosine;
      }
      if (ok) {
        std::copy(a.begin(), a.end(), v.anchors.row(c).begin());
        break;
      }
    }
  }
  // Orthonormal basis of the anchor span, then relations projected off it.
  std::vector<std::vector<double>> basis;
  for (std::size_t c = 0; c < num_categories; ++c) {
    std::vector<double> b = row_vec(v.anchors, c);
    for (const auto& q : basis) {
      const double d = dot(b, q);
      for (std::size_t i = 0; i < dim; ++i) b[i] -= d * q[i];
    }
    normalize(b);
    basis.push_back(std::move(b));
  }
  v.relations = num::Tensor(num_relations, dim);
  for (std::size_t r = 0; r < num_relations; ++r) {
    std::vector<double> x = gaussian(rng, dim, 1.0);
    for (const auto& q : basis) {
      const double d = dot(x, q);
      for (std::size_t i = 0; i < dim; ++i) x[i] -= d * q[i];
    }
    normalize(x);
    std::copy(x.begin(), x.end(), v.relations.row(r).begin());
  }
  return v;
}

std::string encode_vocabulary(const Vocabulary& vocab) {
  json j;
  j["version"] = kFormatVersion;
  j["dim"] = vocab.dim;
  j["seed"] = vocab.seed;
  j["anchors"] = tensor_rows(vocab.anchors);
  j["relations"] = tensor_rows(vocab.relations);
  j["category_names"] = vocab.category_names;
  return j.dump(1) + "\n";
}

Vocabulary decode_vocabulary(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    if (j.at("version").get<int>() != kFormatVersion) {
      throw IoError("vocabulary version mismatch");
    }
    Vocabulary v;
    v.dim = j.at("dim").get<std::size_t>();
    v.seed = j.at("seed").get<std::uint64_t>();
    v.anchors = tensor_from_rows(j.at("anchors"), v.dim);
    v.relations = tensor_from_rows(j.at("relations"), v.dim);
    v.category_names = j.at("category_names").get<std::vector<std::string>>();
    if (v.category_names.size() != v.anchors.rows()) {
      throw IoError("vocabulary category names do not match anchors");
    }
    return v;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed vocabulary file: ") + e.what());
  }
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  detail::write_file(path, encode_vocabulary(vocab));
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  return decode_vocabulary(detail::read_file(path));
}

num::Tensor TextEmbeddingSet::embeddings() const {
  if (texts.empty()) return num::Tensor(0, 0);
  num::Tensor t(texts.size(), texts.front().embedding.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::copy(texts[i].embedding.begin(), texts[i].embedding.end(), t.row(i).begin());
  }
  return t;
}

std::size_t nearest_anchor(const Vocabulary& vocab, const std::vector<double>& v) {
  const double vn = std::sqrt(dot(v, v));
  std::size_t best = 0;
  double best_cos = -2.0;
  for (std::size_t c = 0; c < vocab.num_categories(); ++c) {
    const auto a = vocab.anchors.row(c);
    const double cosv = dot(v, a) / (vn * std::sqrt(dot(a, a)));
    if (cosv > best_cos) {
      best_cos = cosv;
      best = c;
    }
  }
  return best;
}

TextDescription embed_caption(const Vocabulary& vocab, const scene::EntityRecord& entity,
                              std::uint64_t noise_seed, double sigma) {
  const std::size_t cat = entity.category_id;
  if (cat >= vocab.num_categories()) throw ValidationError("caption category out of range");
  Rng rng(noise_seed);
  const double per_coord = sigma / std::sqrt(static_cast<double>(vocab.dim));
  TextDescription d;
  d.kind = TextKind::kCaption;
  d.target_entity_ids = {entity.entity_id};
  d.embedding = accept_nearest(vocab, cat, [&] {
    std::vector<double> v = row_vec(vocab.anchors, cat);
    if (sigma > 0.0) {
      for (double& x : v) x += rng.normal(0.0, per_coord);
    }
    return v;
  });
  return d;
}

TextDescription embed_referral(const Vocabulary& vocab, const scene::EntityRecord& target,
                               const scene::EntityRecord& context, std::size_t relation_id,
                               std::uint64_t noise_seed, double sigma,
                               double relation_weight) {
  const std::size_t cat = target.category_id;
  if (cat >= vocab.num_categories()) throw ValidationError("referral category out of range");
  if (relation_id >= vocab.num_relations()) {
    throw ValidationError("relation id " + std::to_string(relation_id) + " out of range");
  }
  Rng rng(noise_seed);
  const double per_coord = sigma / std::sqrt(static_cast<double>(vocab.dim));
  TextDescription d;
  d.kind = TextKind::kReferral;
  d.target_entity_ids = {target.entity_id};
  d.context_entity_ids = {context.entity_id};
  d.relation_id = relation_id;
  d.embedding = accept_nearest(vocab, cat, [&] {
    std::vector<double> v(vocab.dim);
    const auto a = vocab.anchors.row(cat);
    const auto r = vocab.relations.row(relation_id);
    for (std::size_t i = 0; i < vocab.dim; ++i) {
      v[i] = (1.0 - relation_weight) * a[i] + relation_weight * r[i];
      if (sigma > 0.0) v[i] += rng.normal(0.0, per_coord);
    }
    return v;
  });
  return d;
}

std::vector<double> embed_category(const Vocabulary& vocab, std::size_t category_id) {
  if (category_id >= vocab.num_categories()) {
    throw ValidationError("category id " + std::to_string(category_id) + " out of range");
  }
  return row_vec(vocab.anchors, category_id);
}

TextEmbeddingSet sample_texts(const scene::Scene& scene, const Vocabulary& vocab,
                              std::size_t n_texts, std::uint64_t seed, TextTypes types) {
  if (n_texts < 1) throw ValidationError("n_texts must be >= 1");
  if (scene.entities.empty()) throw ValidationError("scene has no entities to describe");
  if (!types.captions && !types.referrals) {
    throw ValidationError("at least one text type must be enabled");
  }
  const std::size_t k = scene.entities.size();
  Rng rng(derive_seed(seed, {0x7E47}));
  TextEmbeddingSet out;
  out.texts.reserve(n_texts);
  for (std::size_t i = 0; i < n_texts; ++i) {
    const bool want_referral = types.captions && types.referrals ? rng.bernoulli(0.5)
                                                                 : types.referrals;
    const std::size_t target = rng.below(k);
    const std::uint64_t noise_seed = derive_seed(seed, {i, 0x401});
    TextDescription d;
    if (want_referral && k > 1 && vocab.num_relations() > 0) {
      std::size_t ctx = rng.below(k - 1);
      if (ctx >= target) ++ctx;
      const std::size_t rel = rng.below(vocab.num_relations());
      d = embed_referral(vocab, scene.entities[target], scene.entities[ctx], rel, noise_seed);
    } else {
      d = embed_caption(vocab, scene.entities[target], noise_seed);
    }
    d.text_id = i;
    out.texts.push_back(std::move(d));
  }
  return out;
}

}  // namespace mpec::text
