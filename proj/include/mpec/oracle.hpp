#pragma once

#include <cstdint>
#include <vector>

// Brute-force references written with plain loops over std::vector. They
// deliberately avoid the tensor and autograd code they are checked against.
namespace mpec::oracle {

using Matrix = std::vector<std::vector<double>>;

// A small two-view instance plus the merged-feature/text half, sized for
// exhaustive evaluation: at most 32 points per view, 4 entities, 8 texts and
// 8 background samples per view.
struct OracleInstance {
  std::size_t dim = 0;
  Matrix f_u, f_v;
  std::vector<std::uint32_t> mask_u, mask_v;
  std::vector<long> match_u, match_v;
  std::vector<std::size_t> bg_u, bg_v;  // background rows of u / v used as columns

  std::size_t text_dim = 0;
  Matrix texts;
  Matrix f_vl;
  std::vector<std::uint32_t> mask_vl;
  std::vector<std::vector<std::uint32_t>> text_targets;  // first entry is the CE target
};

// Every direction has an includable point and every text target has points.
OracleInstance random_instance(std::uint64_t seed);

double naive_p2e(const OracleInstance& inst, double tau, bool pool_features = false);
double naive_t2e(const OracleInstance& inst, double tau, bool pool_features = false);
double naive_e2t(const OracleInstance& inst, double logit_scale = 1.0, bool pool_features = false);
double naive_e2l(const OracleInstance& inst, double tau, double alpha, double beta);

// Row i: i itself, then its k nearest other points by (squared distance,
// index).
std::vector<std::vector<std::size_t>> naive_knn(const Matrix& points, std::size_t k);

}  // namespace mpec::oracle
