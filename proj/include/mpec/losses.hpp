#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mpec/errors.hpp"
#include "mpec/num/autograd.hpp"
#include "mpec/pipeline.hpp"

namespace mpec::losses {

using num::Var;

struct LossConfig {
  double tau = 0.07;
  double alpha = 1.0;
  double beta = 6.0;
  std::size_t max_background = 256;  // background columns per view per step
  bool e2t_use_tau = false;          // divide entity-to-text logits by tau
  bool pool_features = false;        // cosine to the mean feature instead of mean cosine

  void validate() const;
};

// No point of a pair can be placed in the point-entity loss.
class DegenerateError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Everything the point-entity loss needs besides the two feature matrices.
struct P2eTargets {
  std::vector<std::uint32_t> mask_u;
  std::vector<std::uint32_t> mask_v;
  std::vector<long> match_u;  // row of v matched to each row of u, or -1
  std::vector<long> match_v;  // row of u matched to each row of v, or -1
  std::vector<std::size_t> bg_sample_u;  // background rows of u used as columns, ascending
  std::vector<std::size_t> bg_sample_v;
};

// Background columns are all background points of a view, or a seeded
// uniform subset of max_background of them.
P2eTargets p2e_targets(const pipeline::ViewPair& pair, std::size_t max_background,
                       std::uint64_t seed);

// Similarities of source rows against pooled entity columns (ascending id,
// entities present in the target only) followed by background columns.
struct SimilarityBlock {
  Var sims;                                  // rows x (entities + background)
  std::vector<std::uint32_t> entity_columns;
  std::vector<std::size_t> source_rows;      // source row of every sims row
  std::vector<std::size_t> target_column;    // p2e only: column each row is pulled to
  std::size_t num_background = 0;
  std::size_t dropped_entity_points = 0;     // entity absent from the target
  std::size_t dropped_background_points = 0; // no sampled match
};

SimilarityBlock point_entity_similarities(Var src, Var tgt,
                                          std::span<const std::uint32_t> mask_src,
                                          std::span<const std::uint32_t> mask_tgt,
                                          std::span<const long> match_src,
                                          std::span<const std::size_t> bg_sample_tgt,
                                          bool pool_features = false);

// Mean over included rows of -log softmax(sims / tau)[target_column].
Var p2e_direction_loss(const SimilarityBlock& block, double tau);

struct P2eDiagnostics {
  std::size_t included_points = 0;
  std::size_t dropped_entity_points = 0;
  std::size_t dropped_background_points = 0;
};

// Half the sum of the u->v and v->u direction losses.
Var p2e_loss(Var f_u, Var f_v, const P2eTargets& targets, const LossConfig& config,
             P2eDiagnostics* diag = nullptr);

// Rows are texts, columns the entities with at least one point (ascending).
SimilarityBlock text_entity_similarities(Var texts, Var f_vl,
                                         std::span<const std::uint32_t> mask,
                                         bool pool_features = false);

// Each text's target entity must be a column of the block.
Var t2e_loss(const SimilarityBlock& block, std::span<const std::uint32_t> text_targets,
             double tau);

// Entity-major binary cross-entropy: label (k, t) is 1 when entity k is in
// text t's target set. Entities without a positive text are skipped and
// counted in `skipped`. Logits are raw similarities times `logit_scale`.
Var e2t_loss(const SimilarityBlock& block,
             const std::vector<std::vector<std::uint32_t>>& text_targets,
             double logit_scale = 1.0, std::size_t* skipped = nullptr);

Var e2l_loss(Var t2e, Var e2t, double alpha, double beta);
Var overall_loss(Var p2e, Var e2l);

}  // namespace mpec::losses
