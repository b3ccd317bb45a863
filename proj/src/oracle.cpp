#include "mpec/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "mpec/rng.hpp"

namespace mpec::oracle {

namespace {

constexpr double kEps = 1e-12;

double norm(const std::vector<double>& a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = std::max(norm(a), kEps), nb = std::max(norm(b), kEps);
  double dot = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) dot += (a[d] / na) * (b[d] / nb);
  return dot;
}

// Similarity of `src` to entity e of (features, mask): the mean of the
// per-point cosines, or the cosine to the mean feature.
double entity_similarity(const std::vector<double>& src, const Matrix& features,
                         const std::vector<std::uint32_t>& mask, std::uint32_t e,
                         bool pool_features) {
  std::size_t count = 0;
  if (pool_features) {
    std::vector<double> mean(src.size(), 0.0);
    for (std::size_t j = 0; j < features.size(); ++j) {
      if (mask[j] != e) continue;
      for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += features[j][d];
      ++count;
    }
    for (double& m : mean) m /= static_cast<double>(count);
    return cosine(src, mean);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (mask[j] != e) continue;
    total += cosine(src, features[j]);
    ++count;
  }
  return total / static_cast<double>(count);
}

std::vector<std::uint32_t> entities_of(const std::vector<std::uint32_t>& mask) {
  std::vector<std::uint32_t> ids;
  for (std::uint32_t m : mask) {
    if (m != 0 && std::find(ids.begin(), ids.end(), m) == ids.end()) ids.push_back(m);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

double neg_log_softmax(const std::vector<double>& logits, std::size_t target) {
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double s = 0.0;
  for (double l : logits) s += std::exp(l - mx);
  return -(logits[target] - mx - std::log(s));
}

double direction(const Matrix& src, const std::vector<std::uint32_t>& mask_src,
                 const std::vector<long>& match, const Matrix& tgt,
                 const std::vector<std::uint32_t>& mask_tgt, const std::vector<std::size_t>& bg,
                 double tau, bool pool_features) {
  const std::vector<std::uint32_t> ids = entities_of(mask_tgt);
  double total = 0.0;
  std::size_t included = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::size_t target = 0;
    bool ok = false;
    if (mask_src[i] != 0) {
      for (std::size_t c = 0; c < ids.size(); ++c) {
        if (ids[c] == mask_src[i]) {
          target = c;
          ok = true;
        }
      }
    } else if (match[i] >= 0) {
      for (std::size_t b = 0; b < bg.size(); ++b) {
        if (bg[b] == static_cast<std::size_t>(match[i])) {
          target = ids.size() + b;
          ok = true;
        }
      }
    }
    if (!ok) continue;
    std::vector<double> logits;
    for (std::uint32_t e : ids) {
      logits.push_back(entity_similarity(src[i], tgt, mask_tgt, e, pool_features) / tau);
    }
    for (std::size_t b : bg) logits.push_back(cosine(src[i], tgt[b]) / tau);
    total += neg_log_softmax(logits, target);
    ++included;
  }
  return total / static_cast<double>(included);
}

bool has_includable(const std::vector<std::uint32_t>& mask_src, const std::vector<long>& match,
                    const std::vector<std::uint32_t>& mask_tgt, const std::vector<std::size_t>& bg) {
  const std::vector<std::uint32_t> ids = entities_of(mask_tgt);
  for (std::size_t i = 0; i < mask_src.size(); ++i) {
    if (mask_src[i] != 0 && std::find(ids.begin(), ids.end(), mask_src[i]) != ids.end()) return true;
    if (mask_src[i] == 0 && match[i] >= 0 &&
        std::find(bg.begin(), bg.end(), static_cast<std::size_t>(match[i])) != bg.end()) {
      return true;
    }
  }
  return false;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, std::vector<double>(cols));
  for (auto& r : m) {
    for (double& x : r) x = rng.normal();
  }
  return m;
}

}  // namespace

OracleInstance random_instance(std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, {attempt}));
    OracleInstance inst;
    const auto k = static_cast<std::uint32_t>(rng.range(1, 4));
    const auto n0 = static_cast<std::size_t>(rng.range(8, 24));
    std::vector<std::uint32_t> labels(n0);
    for (std::size_t i = 0; i < n0; ++i) {
      labels[i] = i < k ? static_cast<std::uint32_t>(i + 1) : static_cast<std::uint32_t>(rng.range(0, k));
    }
    auto pick_view = [&](std::vector<std::size_t>& origin) {
      std::vector<std::size_t> all(n0);
      for (std::size_t i = 0; i < n0; ++i) all[i] = i;
      rng.shuffle(all);
      all.resize(static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(n0 / 2),
                                                    static_cast<std::int64_t>(n0))));
      origin = all;
    };
    std::vector<std::size_t> ou, ov;
    pick_view(ou);
    pick_view(ov);
    inst.dim = static_cast<std::size_t>(rng.range(3, 6));
    inst.f_u = random_matrix(rng, ou.size(), inst.dim);
    inst.f_v = random_matrix(rng, ov.size(), inst.dim);
    for (std::size_t o : ou) inst.mask_u.push_back(labels[o]);
    for (std::size_t o : ov) inst.mask_v.push_back(labels[o]);
    inst.match_u.assign(ou.size(), -1);
    inst.match_v.assign(ov.size(), -1);
    for (std::size_t i = 0; i < ou.size(); ++i) {
      for (std::size_t j = 0; j < ov.size(); ++j) {
        if (ou[i] == ov[j]) {
          inst.match_u[i] = static_cast<long>(j);
          inst.match_v[j] = static_cast<long>(i);
        }
      }
    }
    auto pick_bg = [&](const std::vector<std::uint32_t>& mask) {
      std::vector<std::size_t> bg;
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0) bg.push_back(i);
      }
      rng.shuffle(bg);
      bg.resize(std::min<std::size_t>(bg.size(), static_cast<std::size_t>(rng.range(0, 8))));
      std::sort(bg.begin(), bg.end());
      return bg;
    };
    inst.bg_u = pick_bg(inst.mask_u);
    inst.bg_v = pick_bg(inst.mask_v);
    if (!has_includable(inst.mask_u, inst.match_u, inst.mask_v, inst.bg_v) ||
        !has_includable(inst.mask_v, inst.match_v, inst.mask_u, inst.bg_u)) {
      continue;
    }

    inst.text_dim = static_cast<std::size_t>(rng.range(3, 6));
    const auto nm = static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(k) + 2, 32));
    for (std::size_t i = 0; i < nm; ++i) {
      inst.mask_vl.push_back(i < k ? static_cast<std::uint32_t>(i + 1)
                                   : static_cast<std::uint32_t>(rng.range(0, k)));
    }
    rng.shuffle(inst.mask_vl);
    inst.f_vl = random_matrix(rng, nm, inst.text_dim);
    const auto nt = static_cast<std::size_t>(rng.range(1, 8));
    inst.texts = random_matrix(rng, nt, inst.text_dim);
    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<std::uint32_t> targets{static_cast<std::uint32_t>(rng.range(1, k))};
      if (k > 1 && rng.bernoulli(0.2)) {
        const auto extra = static_cast<std::uint32_t>(rng.range(1, k));
        if (extra != targets[0]) targets.push_back(extra);
      }
      inst.text_targets.push_back(targets);
    }
    return inst;
  }
}

double naive_p2e(const OracleInstance& inst, double tau, bool pool_features) {
  const double uv = direction(inst.f_u, inst.mask_u, inst.match_u, inst.f_v, inst.mask_v,
                              inst.bg_v, tau, pool_features);
  const double vu = direction(inst.f_v, inst.mask_v, inst.match_v, inst.f_u, inst.mask_u,
                              inst.bg_u, tau, pool_features);
  return 0.5 * (uv + vu);
}

double naive_t2e(const OracleInstance& inst, double tau, bool pool_features) {
  const std::vector<std::uint32_t> ids = entities_of(inst.mask_vl);
  double total = 0.0;
  for (std::size_t t = 0; t < inst.texts.size(); ++t) {
    std::vector<double> logits;
    std::size_t target = 0;
    for (std::size_t c = 0; c < ids.size(); ++c) {
      logits.push_back(entity_similarity(inst.texts[t], inst.f_vl, inst.mask_vl, ids[c], pool_features) / tau);
      if (ids[c] == inst.text_targets[t][0]) target = c;
    }
    total += neg_log_softmax(logits, target);
  }
  return total / static_cast<double>(inst.texts.size());
}

double naive_e2t(const OracleInstance& inst, double logit_scale, bool pool_features) {
  const std::vector<std::uint32_t> ids = entities_of(inst.mask_vl);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::uint32_t e : ids) {
    bool any = false;
    for (const auto& targets : inst.text_targets) {
      for (std::uint32_t id : targets) any = any || id == e;
    }
    if (!any) continue;
    double entity_total = 0.0;
    for (std::size_t t = 0; t < inst.texts.size(); ++t) {
      double y = 0.0;
      for (std::uint32_t id : inst.text_targets[t]) {
        if (id == e) y = 1.0;
      }
      const double s =
          logit_scale * entity_similarity(inst.texts[t], inst.f_vl, inst.mask_vl, e, pool_features);
      // -[y log sigma(s) + (1-y) log(1 - sigma(s))]
      const double log_p = s >= 0 ? -std::log1p(std::exp(-s)) : s - std::log1p(std::exp(s));
      const double log_q = s >= 0 ? -s - std::log1p(std::exp(-s)) : -std::log1p(std::exp(s));
      entity_total += -(y * log_p + (1.0 - y) * log_q);
    }
    total += entity_total / static_cast<double>(inst.texts.size());
    ++counted;
  }
  return total / static_cast<double>(counted);
}

double naive_e2l(const OracleInstance& inst, double tau, double alpha, double beta) {
  return alpha * naive_t2e(inst, tau) + beta * naive_e2t(inst);
}

std::vector<std::vector<std::size_t>> naive_knn(const Matrix& points, std::size_t k) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<bool> taken(n, false);
    taken[i] = true;
    out[i].push_back(i);
    for (std::size_t round = 0; round < k && round + 1 < n; ++round) {
      std::size_t best = n;
      double best_d = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (taken[j]) continue;
        double d = 0.0;
        for (std::size_t a = 0; a < points[i].size(); ++a) {
          d += (points[j][a] - points[i][a]) * (points[j][a] - points[i][a]);
        }
        if (best == n || d < best_d) {
          best = j;
          best_d = d;
        }
      }
      taken[best] = true;
      out[i].push_back(best);
    }
  }
  return out;
}

}  // namespace mpec::oracle
