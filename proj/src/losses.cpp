#include "mpec/losses.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "mpec/rng.hpp"

namespace mpec::losses {

using num::Tensor;

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ValidationError("loss.tau must be > 0");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ValidationError("loss.alpha and loss.beta must be >= 0");
  if (max_background == 0) throw ValidationError("loss.max_background must be >= 1");
}

namespace {

std::vector<std::size_t> sample_background(std::span<const std::uint32_t> mask,
                                           std::size_t cap, Rng& rng) {
  std::vector<std::size_t> bg;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == scene::kBackground) bg.push_back(i);
  }
  if (bg.size() > cap) {
    rng.shuffle(bg);
    bg.resize(cap);
    std::sort(bg.begin(), bg.end());
  }
  return bg;
}

// Pooled entity directions: mean of unit rows (equal to pooling cosines), or
// the unit mean feature when pooling features.
struct Pooled {
  Var columns;                       // entities x D
  std::vector<std::uint32_t> ids;
};

Pooled pool_entities(Var features, Var unit, std::span<const std::uint32_t> mask,
                     bool pool_features) {
  std::map<std::uint32_t, std::size_t> group;
  for (std::uint32_t id : mask) {
    if (id != scene::kBackground) group.emplace(id, 0);
  }
  Pooled out;
  for (auto& [id, g] : group) {
    g = out.ids.size();
    out.ids.push_back(id);
  }
  if (out.ids.empty()) return out;
  std::vector<std::size_t> rows, segments;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == scene::kBackground) continue;
    rows.push_back(i);
    segments.push_back(group[mask[i]]);
  }
  const Var source = pool_features ? features : unit;
  Var pooled = num::segment_mean(num::gather_rows(source, rows), segments, out.ids.size());
  if (pool_features) pooled = num::l2_normalize_rows(pooled);
  out.columns = pooled;
  return out;
}

long column_of(const std::vector<std::uint32_t>& ids, std::uint32_t id) {
  const auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return -1;
  return static_cast<long>(it - ids.begin());
}

}  // namespace

P2eTargets p2e_targets(const pipeline::ViewPair& pair, std::size_t max_background,
                       std::uint64_t seed) {
  P2eTargets t;
  t.mask_u = pair.u.entity_mask;
  t.mask_v = pair.v.entity_mask;
  t.match_u.assign(pair.u.size(), -1);
  t.match_v.assign(pair.v.size(), -1);
  for (const auto& [i, j] : pair.correspondence) {
    t.match_u[i] = static_cast<long>(j);
    t.match_v[j] = static_cast<long>(i);
  }
  Rng rng_u(derive_seed(seed, {1}));
  Rng rng_v(derive_seed(seed, {2}));
  t.bg_sample_u = sample_background(t.mask_u, max_background, rng_u);
  t.bg_sample_v = sample_background(t.mask_v, max_background, rng_v);
  return t;
}

SimilarityBlock point_entity_similarities(Var src, Var tgt,
                                          std::span<const std::uint32_t> mask_src,
                                          std::span<const std::uint32_t> mask_tgt,
                                          std::span<const long> match_src,
                                          std::span<const std::size_t> bg_sample_tgt,
                                          bool pool_features) {
  if (mask_src.size() != src.rows() || match_src.size() != src.rows() ||
      mask_tgt.size() != tgt.rows()) {
    throw ShapeError("point_entity_similarities: mask or match length differs from features");
  }
  if (src.cols() != tgt.cols()) throw ShapeError("point_entity_similarities: feature dims differ");

  const Var tgt_unit = num::l2_normalize_rows(tgt);
  const Pooled pooled = pool_entities(tgt, tgt_unit, mask_tgt, pool_features);

  SimilarityBlock block;
  block.entity_columns = pooled.ids;
  block.num_background = bg_sample_tgt.size();
  std::vector<long> bg_column(tgt.rows(), -1);
  for (std::size_t b = 0; b < bg_sample_tgt.size(); ++b) {
    const std::size_t row = bg_sample_tgt[b];
    if (row >= tgt.rows() || mask_tgt[row] != scene::kBackground) {
      throw ValidationError("background sample is not a background row of the target");
    }
    bg_column[row] = static_cast<long>(pooled.ids.size() + b);
  }

  for (std::size_t i = 0; i < mask_src.size(); ++i) {
    long col = -1;
    if (mask_src[i] != scene::kBackground) {
      col = column_of(pooled.ids, mask_src[i]);
      if (col < 0) ++block.dropped_entity_points;
    } else {
      const long j = match_src[i];
      if (j >= 0) col = bg_column[static_cast<std::size_t>(j)];
      if (col < 0) ++block.dropped_background_points;
    }
    if (col < 0) continue;
    block.source_rows.push_back(i);
    block.target_column.push_back(static_cast<std::size_t>(col));
  }
  if (block.source_rows.empty()) return block;

  std::vector<Var> parts;
  if (!pooled.ids.empty()) parts.push_back(pooled.columns);
  if (!bg_sample_tgt.empty()) parts.push_back(num::gather_rows(tgt_unit, bg_sample_tgt));
  const Var columns = num::concat_rows(parts);
  const Var src_unit = num::l2_normalize_rows(num::gather_rows(src, block.source_rows));
  block.sims = num::matmul(src_unit, num::transpose(columns));
  return block;
}

Var p2e_direction_loss(const SimilarityBlock& block, double tau) {
  if (block.source_rows.empty()) throw DegenerateError("p2e: no includable source points");
  return num::cross_entropy_from_logits(num::scale(block.sims, 1.0 / tau), block.target_column);
}

Var p2e_loss(Var f_u, Var f_v, const P2eTargets& t, const LossConfig& config,
             P2eDiagnostics* diag) {
  const SimilarityBlock uv = point_entity_similarities(
      f_u, f_v, t.mask_u, t.mask_v, t.match_u, t.bg_sample_v, config.pool_features);
  const SimilarityBlock vu = point_entity_similarities(
      f_v, f_u, t.mask_v, t.mask_u, t.match_v, t.bg_sample_u, config.pool_features);
  if (diag != nullptr) {
    diag->included_points = uv.source_rows.size() + vu.source_rows.size();
    diag->dropped_entity_points = uv.dropped_entity_points + vu.dropped_entity_points;
    diag->dropped_background_points = uv.dropped_background_points + vu.dropped_background_points;
  }
  if (uv.source_rows.empty() || vu.source_rows.empty()) {
    throw DegenerateError("p2e: a view direction has no includable points");
  }
  return num::scale(num::add(p2e_direction_loss(uv, config.tau), p2e_direction_loss(vu, config.tau)),
                    0.5);
}

SimilarityBlock text_entity_similarities(Var texts, Var f_vl,
                                         std::span<const std::uint32_t> mask,
                                         bool pool_features) {
  if (mask.size() != f_vl.rows()) throw ShapeError("text_entity_similarities: mask length differs");
  if (texts.cols() != f_vl.cols()) {
    throw ShapeError("text_entity_similarities: text dim " + std::to_string(texts.cols()) +
                     " differs from feature dim " + std::to_string(f_vl.cols()));
  }
  const Var unit = num::l2_normalize_rows(f_vl);
  const Pooled pooled = pool_entities(f_vl, unit, mask, pool_features);
  SimilarityBlock block;
  block.entity_columns = pooled.ids;
  if (pooled.ids.empty()) return block;
  for (std::size_t t = 0; t < texts.rows(); ++t) block.source_rows.push_back(t);
  block.sims = num::matmul(num::l2_normalize_rows(texts), num::transpose(pooled.columns));
  return block;
}

Var t2e_loss(const SimilarityBlock& block, std::span<const std::uint32_t> text_targets,
             double tau) {
  if (text_targets.size() != block.source_rows.size() || text_targets.empty()) {
    throw ValidationError("t2e: need one target per text and at least one text");
  }
  std::vector<std::size_t> cols;
  cols.reserve(text_targets.size());
  for (std::uint32_t id : text_targets) {
    const long c = column_of(block.entity_columns, id);
    if (c < 0) throw ValidationError("t2e: target entity " + std::to_string(id) + " has no column");
    cols.push_back(static_cast<std::size_t>(c));
  }
  return num::cross_entropy_from_logits(num::scale(block.sims, 1.0 / tau), cols);
}

Var e2t_loss(const SimilarityBlock& block,
             const std::vector<std::vector<std::uint32_t>>& text_targets,
             double logit_scale, std::size_t* skipped) {
  const std::size_t k = block.entity_columns.size(), n = text_targets.size();
  if (n != block.source_rows.size() || n == 0) {
    throw ValidationError("e2t: need one target set per text and at least one text");
  }
  Tensor labels(k, n);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::uint32_t id : text_targets[t]) {
      const long c = column_of(block.entity_columns, id);
      if (c >= 0) labels(static_cast<std::size_t>(c), t) = 1.0;
    }
  }
  std::vector<std::size_t> keep;
  for (std::size_t e = 0; e < k; ++e) {
    for (std::size_t t = 0; t < n; ++t) {
      if (labels(e, t) != 0.0) {
        keep.push_back(e);
        break;
      }
    }
  }
  if (skipped != nullptr) *skipped = k - keep.size();
  if (keep.empty()) throw ValidationError("e2t: no entity has a positive text");
  Tensor kept_labels(keep.size(), n);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    for (std::size_t t = 0; t < n; ++t) kept_labels(r, t) = labels(keep[r], t);
  }
  Var logits = num::gather_rows(num::transpose(block.sims), keep);
  if (logit_scale != 1.0) logits = num::scale(logits, logit_scale);
  return num::binary_cross_entropy_from_logits(logits, kept_labels);
}

Var e2l_loss(Var t2e, Var e2t, double alpha, double beta) {
  return num::add(num::scale(t2e, alpha), num::scale(e2t, beta));
}

Var overall_loss(Var p2e, Var e2l) { return num::add(p2e, e2l); }

}  // namespace mpec::losses
