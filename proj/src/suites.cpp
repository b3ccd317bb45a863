#include "mpec/suites.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>

#include "mpec/errors.hpp"
#include "mpec/losses.hpp"
#include "mpec/model.hpp"
#include "mpec/num/gradcheck.hpp"
#include "mpec/oracle.hpp"
#include "mpec/pipeline.hpp"
#include "mpec/rng.hpp"
#include "mpec/scene.hpp"

namespace mpec::suites {

using nlohmann::json;
using num::Tape;
using num::Tensor;
using num::Var;

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<std::string> SuiteReport::failures() const {
  std::vector<std::string> out;
  for (const auto& c : checks) {
    if (!c.passed) out.push_back(c.name);
  }
  return out;
}

json SuiteReport::to_json() const {
  json checks_json = json::array();
  for (const auto& c : checks) {
    checks_json.push_back({{"name", c.name},
                           {"instances", c.instances},
                           {"max_error", c.max_error},
                           {"tolerance", c.tolerance},
                           {"passed", c.passed}});
  }
  return json{{"suite", suite}, {"passed", passed()}, {"seconds", seconds}, {"checks", checks_json}};
}

namespace {

using Clock = std::chrono::steady_clock;

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t(r, c);
  for (double& x : t.data()) x = scale * rng.normal();
  return t;
}

// Keeps values at least `gap` away from zero so ReLU kinks stay outside the
// finite-difference stencil.
Tensor away_from_zero(Rng& rng, std::size_t r, std::size_t c, double gap = 1e-2) {
  Tensor t(r, c);
  for (double& x : t.data()) {
    do {
      x = rng.normal();
    } while (std::abs(x) < gap);
  }
  return t;
}

Tensor to_tensor(const oracle::Matrix& m) {
  Tensor t(m.size(), m.empty() ? 0 : m[0].size());
  for (std::size_t r = 0; r < m.size(); ++r) {
    for (std::size_t c = 0; c < m[r].size(); ++c) t(r, c) = m[r][c];
  }
  return t;
}

losses::P2eTargets targets_of(const oracle::OracleInstance& inst) {
  return {inst.mask_u, inst.mask_v, inst.match_u, inst.match_v, inst.bg_u, inst.bg_v};
}

// Scalar reduction with fixed random weights, so every output element
// contributes a distinct gradient.
Var reduce(Tape& tape, Var out, const Tensor& weights) {
  return num::sum(num::mul(out, tape.constant(weights)));
}

struct Accumulator {
  CheckResult result;
  Accumulator(std::string name, double tol) {
    result.name = std::move(name);
    result.tolerance = tol;
  }
  void add(double err) {
    ++result.instances;
    if (!(err <= result.max_error)) result.max_error = err;  // NaN sticks
  }
  CheckResult finish() {
    // A zero tolerance demands exact agreement.
    result.passed = std::isfinite(result.max_error) &&
                    (result.tolerance > 0.0 ? result.max_error < result.tolerance
                                            : result.max_error == 0.0);
    return result;
  }
};

double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) {
    if (!(x <= m)) m = x;
  }
  return m;
}

using InstanceFn = std::function<double(Rng&)>;

CheckResult run_check(const std::string& name, std::size_t instances, std::uint64_t seed,
                      double tol, const InstanceFn& fn) {
  Accumulator acc(name, tol);
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, {i}));
    try {
      acc.add(fn(rng));
    } catch (const Error&) {
      acc.add(std::numeric_limits<double>::infinity());
    }
  }
  return acc.finish();
}

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ull;
  return derive_seed(seed, {h});
}

// ---- gradient checks ------------------------------------------------------

using Builder = std::function<Var(Tape&, std::span<const Var>)>;

double check_fn(const Builder& f, const std::vector<Tensor>& inputs) {
  return max_of(num::grad_check_many(f, inputs));
}

pipeline::View random_view(Rng& rng, std::size_t n, double mask_p) {
  pipeline::View v;
  std::vector<std::size_t> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = i;
  rng.shuffle(keys);
  for (std::size_t i = 0; i < n; ++i) {
    v.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1)});
    v.colors.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    v.entity_mask.push_back(0);
    v.origin_index.push_back(keys[i]);
    v.masked_flags.push_back(rng.bernoulli(mask_p) ? 1 : 0);
  }
  v.masked_flags[0] = 1;  // the token always has a path
  return v;
}

model::ModelConfig small_model(std::size_t blocks) {
  model::ModelConfig c;
  c.encoder.hidden = 8;
  c.encoder.out_dim = 6;
  c.encoder.blocks = blocks;
  c.encoder.k = 4;
  c.adapter.hidden = 7;
  c.adapter.out_dim = 5;
  return c;
}

// Random parameters with biases away from zero; He-uniform weights alone
// give exact zero biases and larger kink risk.
num::ParameterSet random_params(Rng& rng, const model::ModelConfig& config) {
  num::ParameterSet p = model::init_params(config);
  for (auto& item : p.items()) {
    for (double& x : item.value.data()) x = 0.6 * rng.normal();
  }
  return p;
}

std::vector<Tensor> values_of(const num::ParameterSet& p) {
  std::vector<Tensor> out;
  for (const auto& item : p.items()) out.push_back(item.value);
  return out;
}

// Max error over parameters whose name starts with `prefix`.
double param_group_error(const std::vector<double>& errors, const num::ParameterSet& p,
                         const std::string& prefix) {
  double m = 0.0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (p.items()[i].name.starts_with(prefix) && !(errors[i] <= m)) m = errors[i];
  }
  return m;
}

void gradcheck_ops(SuiteReport& rep, std::uint64_t seed, std::size_t n) {
  const double tol = kGradTolerance;
  auto add = [&](const std::string& name, const InstanceFn& fn) {
    rep.checks.push_back(run_check("op:" + name, n, name_seed(seed, name), tol, fn));
  };
  auto binary = [&](const std::string& name, Var (*op)(Var, Var)) {
    add(name, [op](Rng& rng) {
      const std::size_t r = rng.range(1, 5), c = rng.range(1, 5);
      const Tensor w = random_tensor(rng, r, c);
      return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, op(v[0], v[1]), w); },
                      {random_tensor(rng, r, c), random_tensor(rng, r, c)});
    });
  };
  binary("add", num::add);
  binary("sub", num::sub);
  binary("mul", num::mul);
  add("scale", [](Rng& rng) {
    const std::size_t r = rng.range(1, 5), c = rng.range(1, 5);
    const Tensor w = random_tensor(rng, r, c);
    const double f = rng.uniform(-3, 3);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::scale(v[0], f), w); },
                    {random_tensor(rng, r, c)});
  });
  add("add_bias", [](Rng& rng) {
    const std::size_t r = rng.range(1, 6), c = rng.range(1, 5);
    const Tensor w = random_tensor(rng, r, c);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::add_bias(v[0], v[1]), w); },
                    {random_tensor(rng, r, c), random_tensor(rng, 1, c)});
  });
  add("relu", [](Rng& rng) {
    const std::size_t r = rng.range(1, 6), c = rng.range(1, 5);
    const Tensor w = random_tensor(rng, r, c);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::relu(v[0]), w); },
                    {away_from_zero(rng, r, c)});
  });
  add("matmul", [](Rng& rng) {
    const std::size_t m = rng.range(1, 5), k = rng.range(1, 5), c = rng.range(1, 5);
    const Tensor w = random_tensor(rng, m, c);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::matmul(v[0], v[1]), w); },
                    {random_tensor(rng, m, k), random_tensor(rng, k, c)});
  });
  add("transpose", [](Rng& rng) {
    const std::size_t r = rng.range(1, 5), c = rng.range(1, 5);
    const Tensor w = random_tensor(rng, c, r);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::transpose(v[0]), w); },
                    {random_tensor(rng, r, c)});
  });
  add("concat_rows", [](Rng& rng) {
    const std::size_t a = rng.range(1, 4), b = rng.range(1, 4), c = rng.range(1, 4);
    const Tensor w = random_tensor(rng, a + b, c);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::concat_rows(v), w); },
                    {random_tensor(rng, a, c), random_tensor(rng, b, c)});
  });
  add("concat_cols", [](Rng& rng) {
    const std::size_t r = rng.range(1, 4), a = rng.range(1, 4), b = rng.range(1, 4);
    const Tensor w = random_tensor(rng, r, a + b);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::concat_cols(v[0], v[1]), w); },
                    {random_tensor(rng, r, a), random_tensor(rng, r, b)});
  });
  add("gather_rows", [](Rng& rng) {
    const std::size_t r = rng.range(1, 5), c = rng.range(1, 4), m = rng.range(1, 8);
    std::vector<std::size_t> rows(m);
    for (auto& x : rows) x = rng.below(r);  // repeats exercise accumulation
    const Tensor w = random_tensor(rng, m, c);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::gather_rows(v[0], rows), w); },
                    {random_tensor(rng, r, c)});
  });
  add("sum", [](Rng& rng) {
    const std::size_t r = rng.range(1, 5), c = rng.range(1, 5);
    return check_fn([](Tape&, std::span<const Var> v) { return num::sum(v[0]); },
                    {random_tensor(rng, r, c)});
  });
  add("mean", [](Rng& rng) {
    const std::size_t r = rng.range(1, 5), c = rng.range(1, 5);
    return check_fn([](Tape&, std::span<const Var> v) { return num::mean(v[0]); },
                    {random_tensor(rng, r, c)});
  });
  add("l2_normalize_rows", [](Rng& rng) {
    const std::size_t r = rng.range(1, 5), c = rng.range(1, 5);
    const Tensor w = random_tensor(rng, r, c);
    return check_fn([&](Tape& t, std::span<const Var> v) { return reduce(t, num::l2_normalize_rows(v[0]), w); },
                    {random_tensor(rng, r, c)});
  });
  add("segment_mean", [](Rng& rng) {
    const std::size_t r = rng.range(1, 8), c = rng.range(1, 4), g = rng.range(1, 4);
    std::vector<std::size_t> seg(r);
    for (auto& s : seg) s = rng.below(g);
    const Tensor w = random_tensor(rng, g, c);
    return check_fn(
        [&](Tape& t, std::span<const Var> v) { return reduce(t, num::segment_mean(v[0], seg, g), w); },
        {random_tensor(rng, r, c)});
  });
  add("neighbor_mean", [](Rng& rng) {
    const std::size_t r = rng.range(2, 8), c = rng.range(1, 4);
    num::Neighborhoods nb;
    for (std::size_t i = 0; i < r; ++i) {
      nb.indices.push_back(i);
      const std::size_t extra = rng.below(r);
      for (std::size_t e = 0; e < extra; ++e) nb.indices.push_back(rng.below(r));
      nb.offsets.push_back(nb.indices.size());
    }
    const Tensor w = random_tensor(rng, r, c);
    return check_fn(
        [&](Tape& t, std::span<const Var> v) { return reduce(t, num::neighbor_mean(v[0], nb), w); },
        {random_tensor(rng, r, c)});
  });
  add("row_pair_mean", [](Rng& rng) {
    const std::size_t a = rng.range(1, 6), b = rng.range(1, 6), c = rng.range(1, 4);
    std::vector<std::pair<long, long>> pairs;
    for (std::size_t i = 0; i < a; ++i) pairs.emplace_back(static_cast<long>(i), rng.bernoulli(0.6) ? static_cast<long>(rng.below(b)) : -1L);
    for (std::size_t j = 0; j < b; ++j) {
      if (rng.bernoulli(0.4)) pairs.emplace_back(-1L, static_cast<long>(j));
    }
    const Tensor w = random_tensor(rng, pairs.size(), c);
    return check_fn(
        [&](Tape& t, std::span<const Var> v) { return reduce(t, num::row_pair_mean(v[0], v[1], pairs), w); },
        {random_tensor(rng, a, c), random_tensor(rng, b, c)});
  });
  add("cross_entropy", [](Rng& rng) {
    const std::size_t r = rng.range(1, 6), c = rng.range(2, 8);
    std::vector<std::size_t> tg(r);
    for (auto& x : tg) x = rng.below(c);
    return check_fn(
        [&](Tape&, std::span<const Var> v) { return num::cross_entropy_from_logits(v[0], tg); },
        {random_tensor(rng, r, c, 3.0)});
  });
  add("binary_cross_entropy", [](Rng& rng) {
    const std::size_t r = rng.range(1, 6), c = rng.range(1, 6);
    Tensor y(r, c);
    for (double& x : y.data()) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
    return check_fn(
        [&](Tape&, std::span<const Var> v) { return num::binary_cross_entropy_from_logits(v[0], y); },
        {random_tensor(rng, r, c, 3.0)});
  });
}

void gradcheck_losses(SuiteReport& rep, std::uint64_t seed, std::size_t n) {
  const double taus[] = {0.05, 0.07, 0.2};
  auto add = [&](const std::string& name, const InstanceFn& fn) {
    rep.checks.push_back(run_check("loss:" + name, n, name_seed(seed, name), kGradTolerance, fn));
  };
  auto instance = [](Rng& rng) { return oracle::random_instance(rng.next_u64()); };
  auto tau_of = [&](Rng& rng) { return taus[rng.below(3)]; };

  add("p2e", [&](Rng& rng) {
    const auto inst = instance(rng);
    losses::LossConfig cfg;
    cfg.tau = tau_of(rng);
    const auto tg = targets_of(inst);
    return check_fn([&](Tape&, std::span<const Var> v) { return losses::p2e_loss(v[0], v[1], tg, cfg); },
                    {to_tensor(inst.f_u), to_tensor(inst.f_v)});
  });
  add("t2e", [&](Rng& rng) {
    const auto inst = instance(rng);
    const double tau = tau_of(rng);
    std::vector<std::uint32_t> first;
    for (const auto& t : inst.text_targets) first.push_back(t[0]);
    return check_fn(
        [&](Tape&, std::span<const Var> v) {
          return losses::t2e_loss(losses::text_entity_similarities(v[0], v[1], inst.mask_vl), first, tau);
        },
        {to_tensor(inst.texts), to_tensor(inst.f_vl)});
  });
  add("e2t", [&](Rng& rng) {
    const auto inst = instance(rng);
    return check_fn(
        [&](Tape&, std::span<const Var> v) {
          return losses::e2t_loss(losses::text_entity_similarities(v[0], v[1], inst.mask_vl),
                                  inst.text_targets);
        },
        {to_tensor(inst.texts), to_tensor(inst.f_vl)});
  });
  auto e2l_of = [](const oracle::OracleInstance& inst, Var texts, Var f_vl, double tau) {
    std::vector<std::uint32_t> first;
    for (const auto& t : inst.text_targets) first.push_back(t[0]);
    const auto block = losses::text_entity_similarities(texts, f_vl, inst.mask_vl);
    return losses::e2l_loss(losses::t2e_loss(block, first, tau),
                            losses::e2t_loss(block, inst.text_targets), 1.0, 6.0);
  };
  add("e2l", [&](Rng& rng) {
    const auto inst = instance(rng);
    const double tau = tau_of(rng);
    return check_fn([&](Tape&, std::span<const Var> v) { return e2l_of(inst, v[0], v[1], tau); },
                    {to_tensor(inst.texts), to_tensor(inst.f_vl)});
  });
  add("overall", [&](Rng& rng) {
    const auto inst = instance(rng);
    losses::LossConfig cfg;
    cfg.tau = tau_of(rng);
    const auto tg = targets_of(inst);
    return check_fn(
        [&](Tape&, std::span<const Var> v) {
          return losses::overall_loss(losses::p2e_loss(v[0], v[1], tg, cfg),
                                      e2l_of(inst, v[2], v[3], cfg.tau));
        },
        {to_tensor(inst.f_u), to_tensor(inst.f_v), to_tensor(inst.texts), to_tensor(inst.f_vl)});
  });
}

void gradcheck_model(SuiteReport& rep, std::uint64_t seed, std::size_t n) {
  // One encoder gradient check per instance, reported per parameter group.
  const model::ModelConfig cfg = small_model(2);
  const std::vector<std::string> groups = {
      model::kInputWeight, model::kInputBias, "encoder.block0.", "encoder.block1.",
      "encoder.head.", model::kMaskToken};
  const std::vector<std::string> names = {"input_projection.weight", "input_projection.bias",
                                          "aggregation_block0", "aggregation_block1", "head",
                                          "mask_token"};
  std::vector<Accumulator> accs;
  for (const auto& nm : names) accs.emplace_back("model:" + nm, kGradTolerance);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {0xE0C, i}));
    const num::ParameterSet params = random_params(rng, cfg);
    const pipeline::View view = random_view(rng, rng.range(6, 12), 0.4);
    const Tensor w = random_tensor(rng, view.size(), cfg.encoder.out_dim);
    std::vector<double> errors;
    try {
      errors = num::grad_check_many(
          [&](Tape& t, std::span<const Var> v) {
            const num::BoundParameters bound(params, std::vector<Var>(v.begin(), v.end()));
            return reduce(t, model::encode_view(bound, cfg, view), w);
          },
          values_of(params));
    } catch (const Error&) {
      errors.assign(params.size(), std::numeric_limits<double>::infinity());
    }
    for (std::size_t g = 0; g < groups.size(); ++g) accs[g].add(param_group_error(errors, params, groups[g]));
  }
  for (auto& a : accs) rep.checks.push_back(a.finish());

  rep.checks.push_back(run_check("model:adapter", n, name_seed(seed, "adapter"), kGradTolerance, [&](Rng& rng) {
    const num::ParameterSet params = random_params(rng, cfg);
    const std::size_t rows = rng.range(2, 10);
    const Tensor feats = random_tensor(rng, rows, cfg.encoder.out_dim);
    const Tensor w = random_tensor(rng, rows, cfg.adapter.out_dim);
    std::vector<Tensor> inputs = values_of(params);
    inputs.push_back(feats);
    const std::vector<double> errors = num::grad_check_many(
        [&](Tape& t, std::span<const Var> v) {
          const num::BoundParameters bound(params, std::vector<Var>(v.begin(), v.end() - 1));
          return reduce(t, model::project_vl(bound, v.back()), w);
        },
        inputs);
    double m = errors.back();
    for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
      if (params.items()[i].name.starts_with("adapter.") && !(errors[i] <= m)) m = errors[i];
    }
    return m;
  }));

  rep.checks.push_back(run_check("model:merge", n, name_seed(seed, "merge"), kGradTolerance, [&](Rng& rng) {
    const std::size_t n0 = rng.range(4, 12);
    pipeline::ViewPair pair;
    for (std::size_t o = 0; o < n0; ++o) {
      const bool in_u = rng.bernoulli(0.7), in_v = !in_u || rng.bernoulli(0.6);
      if (in_u) {
        pair.u.origin_index.push_back(o);
        pair.u.entity_mask.push_back(0);
      }
      if (in_v) {
        pair.v.origin_index.push_back(o);
        pair.v.entity_mask.push_back(0);
      }
    }
    pair.u.points.resize(pair.u.origin_index.size());
    pair.v.points.resize(pair.v.origin_index.size());
    if (pair.u.size() == 0 || pair.v.size() == 0) return 0.0;
    const std::size_t d = rng.range(1, 4);
    const Tensor w = random_tensor(rng, n0, d);
    return check_fn(
        [&](Tape& t, std::span<const Var> v) {
          const model::MergedFeatures m = model::merge_features(v[0], v[1], pair);
          return reduce(t, m.features, w);
        },
        {random_tensor(rng, pair.u.size(), d), random_tensor(rng, pair.v.size(), d)});
  }));
}

// ---- oracle checks --------------------------------------------------------

void oracle_losses(SuiteReport& rep, std::uint64_t seed, std::size_t n) {
  const double taus[] = {0.05, 0.07, 0.2};
  auto add = [&](const std::string& name, double tol, const InstanceFn& fn) {
    rep.checks.push_back(run_check(name, n, name_seed(seed, name), tol, fn));
  };
  auto value = [](Var v) { return v.value().item(); };
  auto first_targets = [](const oracle::OracleInstance& inst) {
    std::vector<std::uint32_t> first;
    for (const auto& t : inst.text_targets) first.push_back(t[0]);
    return first;
  };

  for (bool pool : {false, true}) {
    add(pool ? "oracle:p2e_pooled_features" : "oracle:p2e", kOracleTolerance, [&, pool](Rng& rng) {
      const auto inst = oracle::random_instance(rng.next_u64());
      losses::LossConfig cfg;
      cfg.tau = taus[rng.below(3)];
      cfg.pool_features = pool;
      Tape t;
      const Var l = losses::p2e_loss(t.constant(to_tensor(inst.f_u)), t.constant(to_tensor(inst.f_v)),
                                     targets_of(inst), cfg);
      return std::abs(value(l) - oracle::naive_p2e(inst, cfg.tau, pool));
    });
  }
  add("oracle:t2e", kOracleTolerance, [&](Rng& rng) {
    const auto inst = oracle::random_instance(rng.next_u64());
    const double tau = taus[rng.below(3)];
    Tape t;
    const auto block = losses::text_entity_similarities(t.constant(to_tensor(inst.texts)),
                                                        t.constant(to_tensor(inst.f_vl)), inst.mask_vl);
    return std::abs(value(losses::t2e_loss(block, first_targets(inst), tau)) -
                    oracle::naive_t2e(inst, tau));
  });
  add("oracle:e2t", kOracleTolerance, [&](Rng& rng) {
    const auto inst = oracle::random_instance(rng.next_u64());
    Tape t;
    const auto block = losses::text_entity_similarities(t.constant(to_tensor(inst.texts)),
                                                        t.constant(to_tensor(inst.f_vl)), inst.mask_vl);
    return std::abs(value(losses::e2t_loss(block, inst.text_targets)) - oracle::naive_e2t(inst));
  });
  add("oracle:e2l", kOracleTolerance, [&](Rng& rng) {
    const auto inst = oracle::random_instance(rng.next_u64());
    const double tau = taus[rng.below(3)];
    Tape t;
    const auto block = losses::text_entity_similarities(t.constant(to_tensor(inst.texts)),
                                                        t.constant(to_tensor(inst.f_vl)), inst.mask_vl);
    const Var l = losses::e2l_loss(losses::t2e_loss(block, first_targets(inst), tau),
                                   losses::e2t_loss(block, inst.text_targets), 1.0, 6.0);
    return std::abs(value(l) - oracle::naive_e2l(inst, tau, 1.0, 6.0));
  });
  add("oracle:knn", 0.0, [&](Rng& rng) {
    const std::size_t np = rng.range(2, 32), k = rng.range(1, 20);
    oracle::Matrix pts(np, std::vector<double>(3));
    std::vector<scene::Vec3> vec(np);
    std::vector<std::size_t> keys(np);
    for (std::size_t i = 0; i < np; ++i) {
      // Coarse coordinates produce duplicates and distance ties.
      if (i > 0 && rng.bernoulli(0.2)) {
        pts[i] = pts[rng.below(i)];
      } else {
        for (double& x : pts[i]) x = static_cast<double>(rng.range(0, 3));
      }
      vec[i] = {pts[i][0], pts[i][1], pts[i][2]};
      keys[i] = i;
    }
    const auto expected = oracle::naive_knn(pts, k);
    const num::Neighborhoods got = model::knn_neighborhoods(vec, k, keys);
    for (std::size_t i = 0; i < np; ++i) {
      const std::vector<std::size_t> row(got.indices.begin() + static_cast<std::ptrdiff_t>(got.offsets[i]),
                                         got.indices.begin() + static_cast<std::ptrdiff_t>(got.offsets[i + 1]));
      if (row != expected[i]) return 1.0;
    }
    return 0.0;
  });
  add("symmetry:p2e_view_swap", 0.0, [&](Rng& rng) {
    const auto inst = oracle::random_instance(rng.next_u64());
    losses::LossConfig cfg;
    cfg.tau = taus[rng.below(3)];
    Tape t;
    const Var fu = t.constant(to_tensor(inst.f_u)), fv = t.constant(to_tensor(inst.f_v));
    const losses::P2eTargets a = targets_of(inst);
    const losses::P2eTargets b{inst.mask_v, inst.mask_u, inst.match_v, inst.match_u, inst.bg_v, inst.bg_u};
    return std::abs(value(losses::p2e_loss(fu, fv, a, cfg)) - value(losses::p2e_loss(fv, fu, b, cfg)));
  });
  add("invariance:feature_scale", 1e-10, [&](Rng& rng) {
    const auto inst = oracle::random_instance(rng.next_u64());
    losses::LossConfig cfg;
    const double su = rng.uniform(0.1, 10.0), sv = rng.uniform(0.1, 10.0), sl = rng.uniform(0.1, 10.0);
    Tape t;
    const Var fu = t.constant(to_tensor(inst.f_u)), fv = t.constant(to_tensor(inst.f_v));
    const Var texts = t.constant(to_tensor(inst.texts)), fvl = t.constant(to_tensor(inst.f_vl));
    const auto tg = targets_of(inst);
    auto all = [&](Var a, Var b, Var c) {
      const auto block = losses::text_entity_similarities(texts, c, inst.mask_vl);
      return std::vector<double>{value(losses::p2e_loss(a, b, tg, cfg)),
                                 value(losses::t2e_loss(block, first_targets(inst), cfg.tau)),
                                 value(losses::e2t_loss(block, inst.text_targets))};
    };
    const auto base = all(fu, fv, fvl);
    const auto scaled = all(num::scale(fu, su), num::scale(fv, sv), num::scale(fvl, sl));
    double m = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) m = std::max(m, std::abs(base[i] - scaled[i]));
    return m;
  });
}

void oracle_baselines(SuiteReport& rep) {
  // Identical features everywhere: every similarity is 1.
  for (const auto& [entities, background] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 5}, {4, 13}}) {
    const std::size_t cols = entities + background;
    Accumulator acc("baseline:p2e_uniform_" + std::to_string(cols), 1e-9);
    losses::P2eTargets tg;
    for (std::size_t e = 1; e <= entities; ++e) {
      tg.mask_u.push_back(static_cast<std::uint32_t>(e));
    }
    for (std::size_t b = 0; b < background; ++b) tg.mask_u.push_back(0);
    tg.mask_v = tg.mask_u;
    for (std::size_t i = 0; i < tg.mask_u.size(); ++i) {
      tg.match_u.push_back(static_cast<long>(i));
      if (tg.mask_u[i] == 0) tg.bg_sample_u.push_back(i);
    }
    tg.match_v = tg.match_u;
    tg.bg_sample_v = tg.bg_sample_u;
    for (double tau : {0.05, 0.07, 0.2}) {
      Tape t;
      const Var f = t.constant(Tensor(tg.mask_u.size(), 4, 0.5));
      losses::LossConfig cfg;
      cfg.tau = tau;
      acc.add(std::abs(losses::p2e_loss(f, f, tg, cfg).value().item() - std::log(static_cast<double>(cols))));
    }
    rep.checks.push_back(acc.finish());
  }
  for (std::size_t k : {2u, 8u, 17u}) {
    Accumulator acc("baseline:t2e_uniform_" + std::to_string(k), 1e-9);
    std::vector<std::uint32_t> mask;
    for (std::size_t e = 1; e <= k; ++e) mask.push_back(static_cast<std::uint32_t>(e));
    for (double tau : {0.05, 0.07, 0.2}) {
      Tape t;
      const auto block = losses::text_entity_similarities(t.constant(Tensor(3, 4, 1.0)),
                                                          t.constant(Tensor(k, 4, -2.0)), mask);
      const std::vector<std::uint32_t> targets = {1, static_cast<std::uint32_t>(k), 2};
      acc.add(std::abs(losses::t2e_loss(block, targets, tau).value().item() - std::log(static_cast<double>(k))));
    }
    rep.checks.push_back(acc.finish());
  }
  {
    Accumulator acc("baseline:bce_zero_logits", 1e-12);
    // Texts along e0, point features along e1: every similarity is 0.
    Tensor texts(4, 3), feats(5, 3);
    for (std::size_t r = 0; r < 4; ++r) texts(r, 0) = 1.0 + static_cast<double>(r);
    for (std::size_t r = 0; r < 5; ++r) feats(r, 1) = 0.5 + static_cast<double>(r);
    const std::vector<std::uint32_t> mask = {1, 2, 2, 3, 0};
    const std::vector<std::vector<std::uint32_t>> targets = {{1}, {2, 3}, {3}, {1}};
    Tape t;
    const auto block = losses::text_entity_similarities(t.constant(texts), t.constant(feats), mask);
    acc.add(std::abs(losses::e2t_loss(block, targets).value().item() - std::log(2.0)));
    num::Tape t2;
    Tensor zeros(3, 7);
    Tensor labels(3, 7);
    for (std::size_t i = 0; i < labels.size(); ++i) labels.data()[i] = (i % 3 == 0) ? 1.0 : 0.0;
    acc.add(std::abs(num::binary_cross_entropy_from_logits(t2.constant(zeros), labels).value().item() -
                     std::log(2.0)));
    rep.checks.push_back(acc.finish());
  }
}

void oracle_masks(SuiteReport& rep, std::uint64_t seed, std::size_t pairs,
                  const pipeline::AugmentationConfig& aug, const pipeline::GridMaskConfig& mask) {
  scene::SceneSetConfig sc;
  sc.seed = derive_seed(seed, {0x5CE});
  std::vector<scene::Scene> scenes;
  for (std::size_t i = 0; i < 8; ++i) scenes.push_back(scene::generate_scene(sc, i));
  Accumulator overlap("masks:exclusive", 0.0);
  Accumulator fraction("masks:cell_fraction", 0.0);
  for (std::size_t p = 0; p < pairs; ++p) {
    const scene::Scene& s = scenes[p % scenes.size()];
    const pipeline::ViewPair vp =
        pipeline::make_view_pair(s, aug, mask, derive_seed(seed, {0x3A5, p}), true);
    std::vector<std::uint8_t> mu(s.size(), 0);
    for (std::size_t i = 0; i < vp.u.size(); ++i) mu[vp.u.origin_index[i]] = vp.u.masked_flags[i];
    std::size_t both = 0;
    for (std::size_t j = 0; j < vp.v.size(); ++j) {
      if (vp.v.masked_flags[j] && mu[vp.v.origin_index[j]]) ++both;
    }
    std::vector<std::size_t> shared;
    std::set_intersection(vp.masked_cells_u.begin(), vp.masked_cells_u.end(),
                          vp.masked_cells_v.begin(), vp.masked_cells_v.end(), std::back_inserter(shared));
    overlap.add(static_cast<double>(both + shared.size()));
    // Masked cell count per view must be exactly floor(ratio * occupied).
    const auto expected = static_cast<std::size_t>(std::floor(mask.ratio * static_cast<double>(vp.occupied_cells)));
    const bool exact = vp.masked_cells_u.size() == expected && vp.masked_cells_v.size() == expected;
    fraction.add(exact ? 0.0 : 1.0);
  }
  rep.checks.push_back(overlap.finish());
  rep.checks.push_back(fraction.finish());

  Accumulator reject("config:mask_ratio_above_half_rejected", 0.0);
  try {
    pipeline::GridMaskConfig{0.1, 0.6}.validate();
    reject.add(1.0);
  } catch (const ValidationError&) {
    reject.add(0.0);
  }
  rep.checks.push_back(reject.finish());
}

}  // namespace

SuiteReport run_gradcheck_suite(std::uint64_t seed, std::size_t instances) {
  const auto t0 = Clock::now();
  SuiteReport rep;
  rep.suite = "gradcheck";
  gradcheck_ops(rep, seed, instances);
  gradcheck_losses(rep, seed, instances);
  gradcheck_model(rep, seed, instances);
  rep.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return rep;
}

SuiteReport run_oracle_suite(std::uint64_t seed, std::size_t instances, std::size_t mask_pairs,
                             const pipeline::AugmentationConfig& augmentation,
                             const pipeline::GridMaskConfig& masking) {
  const auto t0 = Clock::now();
  SuiteReport rep;
  rep.suite = "oracle";
  oracle_losses(rep, seed, instances);
  oracle_baselines(rep);
  oracle_masks(rep, seed, mask_pairs, augmentation, masking);
  rep.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return rep;
}

}  // namespace mpec::suites
