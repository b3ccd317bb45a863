#include <cmath>

#include "doctest.h"
#include "mpec/errors.hpp"
#include "mpec/losses.hpp"
#include "mpec/num/gradcheck.hpp"
#include "mpec/oracle.hpp"
#include "mpec/pipeline.hpp"
#include "mpec/rng.hpp"

using namespace mpec;
using namespace mpec::losses;
using num::Tape;
using num::Tensor;

namespace {

// Three entities of two points each plus five background points, matched
// one-to-one across two identical views.
P2eTargets mirrored_targets() {
  P2eTargets t;
  t.mask_u = {1, 1, 2, 2, 3, 3, 0, 0, 0, 0, 0};
  t.mask_v = t.mask_u;
  for (long i = 0; i < 11; ++i) {
    t.match_u.push_back(i);
    t.match_v.push_back(i);
  }
  t.bg_sample_u = {6, 7, 8, 9, 10};
  t.bg_sample_v = t.bg_sample_u;
  return t;
}

SimilarityBlock block_from(Tape& tape, const Tensor& sims, std::vector<std::uint32_t> entities) {
  SimilarityBlock b;
  b.sims = tape.constant(sims);
  b.entity_columns = std::move(entities);
  for (std::size_t r = 0; r < sims.rows(); ++r) b.source_rows.push_back(r);
  return b;
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (double& x : t.data()) x = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("equal similarities over 3 entity and 5 background columns give ln 8") {
  Tape tape;
  const Var f = tape.constant(Tensor(11, 4, 0.5));
  const double loss = p2e_loss(f, f, mirrored_targets(), LossConfig{}).value().item();
  CHECK(loss == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("point-entity similarity columns") {
  Tape tape;
  const Var src = tape.constant(Tensor::from_rows({{1, 0}}));
  const std::vector<std::uint32_t> ms = {1}, mt = {1, 1};
  const std::vector<long> match = {-1};
  const std::vector<std::size_t> none;
  SUBCASE("identical features give column 1") {
    const Var tgt = tape.constant(Tensor::from_rows({{2, 0}, {0.5, 0}}));
    const SimilarityBlock b = point_entity_similarities(src, tgt, ms, mt, match, none);
    CHECK(b.sims.value()(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("cosines 1 and 0 give column 0.5") {
    const Var tgt = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
    const SimilarityBlock b = point_entity_similarities(src, tgt, ms, mt, match, none);
    CHECK(b.sims.value()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(b.entity_columns == std::vector<std::uint32_t>{1});
    CHECK(b.target_column == std::vector<std::size_t>{0});
  }
}

TEST_CASE("entity absent from the target view drops its points") {
  Tape tape;
  const Var src = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}}));
  const Var tgt = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  const std::vector<std::uint32_t> ms = {1, 2, 0}, mt = {1, 0};
  const std::vector<long> match = {-1, -1, -1};
  const std::vector<std::size_t> bg = {1};
  const SimilarityBlock b = point_entity_similarities(src, tgt, ms, mt, match, bg);
  CHECK(b.source_rows == std::vector<std::size_t>{0});
  CHECK(b.dropped_entity_points == 1);
  CHECK(b.dropped_background_points == 1);
  CHECK(b.num_background == 1);
}

TEST_CASE("p2e saturates on perfectly clustered similarities") {
  Tape tape;
  Tensor sims(8, 8, -1.0);
  SimilarityBlock b = block_from(tape, sims, {1, 2, 3});
  for (std::size_t r = 0; r < 8; ++r) {
    b.target_column.push_back(r);
  }
  Tensor s2(8, 8, -1.0);
  for (std::size_t r = 0; r < 8; ++r) s2(r, r) = 1.0;
  b.sims = tape.constant(s2);
  CHECK(p2e_direction_loss(b, 0.07).value().item() < 1e-10);
}

TEST_CASE("p2e on a pair with no includable points is degenerate") {
  Tape tape;
  P2eTargets t;
  t.mask_u = {1, 1};
  t.mask_v = {2, 2};
  t.match_u = {-1, -1};
  t.match_v = {-1, -1};
  const Var f = tape.constant(Tensor(2, 3, 1.0));
  CHECK_THROWS_AS(p2e_loss(f, f, t, LossConfig{}), DegenerateError);
}

TEST_CASE("p2e agrees with the brute-force reference and finite differences") {
  Rng rng(12);
  P2eTargets t;
  t.mask_u = {1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 0, 0, 0, 0, 0, 0};
  t.mask_v = t.mask_u;
  for (long i = 0; i < 16; ++i) {
    t.match_u.push_back(i);
    t.match_v.push_back(i);
  }
  t.bg_sample_u = {10, 11, 12, 13, 14, 15};
  t.bg_sample_v = {10, 12, 14};
  const Tensor fu = random_tensor(rng, 16, 5), fv = random_tensor(rng, 16, 5);

  oracle::OracleInstance inst;
  auto rows = [](const Tensor& x) {
    std::vector<std::vector<double>> r(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) r[i].assign(x.row(i).begin(), x.row(i).end());
    return r;
  };
  inst.dim = 5;
  inst.f_u = rows(fu);
  inst.f_v = rows(fv);
  inst.mask_u = t.mask_u;
  inst.mask_v = t.mask_v;
  inst.match_u = t.match_u;
  inst.match_v = t.match_v;
  inst.bg_u = t.bg_sample_u;
  inst.bg_v = t.bg_sample_v;

  Tape tape;
  const double got = p2e_loss(tape.constant(fu), tape.constant(fv), t, LossConfig{}).value().item();
  CHECK(std::abs(got - oracle::naive_p2e(inst, 0.07, false)) <= 1e-12);

  const auto errs = num::grad_check_many(
      [&](Tape&, std::span<const Var> v) { return p2e_loss(v[0], v[1], t, LossConfig{}); }, {fu, fv});
  CHECK(errs[0] < 1e-4);
  CHECK(errs[1] < 1e-4);
}

TEST_CASE("text-entity similarities") {
  Tape tape;
  const Var f = tape.constant(Tensor::from_rows({{1, 0, 0}, {1, 0, 0}, {0, 1, 0}}));
  const std::vector<std::uint32_t> mask = {4, 4, 2};
  const Var texts = tape.constant(Tensor::from_rows({{3, 0, 0}, {0, 0, 1}}));
  const SimilarityBlock b = text_entity_similarities(texts, f, mask);
  CHECK(b.entity_columns == std::vector<std::uint32_t>{2, 4});
  const Tensor s = b.sims.value();
  CHECK(s(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s(0, 0) == 0.0);
  CHECK(s(1, 0) == 0.0);
  CHECK(s(1, 1) == 0.0);
  CHECK_THROWS_AS(text_entity_similarities(tape.constant(Tensor(1, 2)), f, mask), ShapeError);
}

TEST_CASE("t2e values") {
  Tape tape;
  const std::vector<std::uint32_t> targets = {3, 1};
  const SimilarityBlock uniform = block_from(tape, Tensor(2, 4, 0.2), {1, 2, 3, 4});
  CHECK(t2e_loss(uniform, targets, 0.07).value().item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  Tensor sat(2, 4, -1.0);
  sat(0, 2) = 1.0;
  sat(1, 0) = 1.0;
  CHECK(t2e_loss(block_from(tape, sat, {1, 2, 3, 4}), targets, 0.07).value().item() < 1e-10);
  const std::vector<std::uint32_t> missing = {9, 1};
  CHECK_THROWS_AS(t2e_loss(uniform, missing, 0.07), ValidationError);
}

TEST_CASE("e2t values") {
  Tape tape;
  const std::vector<std::vector<std::uint32_t>> targets = {{1}, {2}};
  CHECK(e2t_loss(block_from(tape, Tensor(2, 2), {1, 2}), targets).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const Tensor pm = Tensor::from_rows({{1, -1}, {-1, 1}});
  CHECK(e2t_loss(block_from(tape, pm, {1, 2}), targets).value().item() ==
        doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  CHECK(std::log1p(std::exp(-1.0)) == doctest::Approx(0.3133).epsilon(1e-4));

  for (double s : {-2.0, 0.0, 2.0}) {
    const std::vector<std::vector<std::uint32_t>> one = {{1}};
    const double got = e2t_loss(block_from(tape, Tensor(1, 1, s), {1}), one).value().item();
    CHECK(got == doctest::Approx(std::max(-s, 0.0) + std::log1p(std::exp(-std::abs(s)))).epsilon(1e-12));
  }

  std::size_t skipped = 0;
  const std::vector<std::vector<std::uint32_t>> only_first = {{1}, {1}};
  e2t_loss(block_from(tape, pm, {1, 2}), only_first, 1.0, &skipped);
  CHECK(skipped == 1);
}

TEST_CASE("e2l and overall combinations") {
  Tape tape;
  const Var t2e = tape.constant(Tensor::scalar(std::log(4.0)));
  const Var e2t = tape.constant(Tensor::scalar(std::log(2.0)));
  CHECK(e2l_loss(t2e, e2t, 1.0, 6.0).value().item() == doctest::Approx(5.5452).epsilon(1e-4));
  CHECK(e2l_loss(t2e, e2t, 1.0, 0.0).value().item() == t2e.value().item());
  CHECK(e2l_loss(t2e, e2t, 2.0, 3.0).value().item() ==
        doctest::Approx(2.0 * std::log(4.0) + 3.0 * std::log(2.0)).epsilon(1e-15));
  const Var zero = tape.constant(Tensor::scalar(0.0));
  const Var one = tape.constant(Tensor::scalar(1.0));
  CHECK(overall_loss(zero, e2t).value().item() == e2t.value().item());
  CHECK(overall_loss(one, one).value().item() == 2.0);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK_NOTHROW(c.validate());
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = LossConfig{};
  c.max_background = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("background sampling is capped, sorted and seeded") {
  pipeline::ViewPair pair;
  for (std::size_t i = 0; i < 600; ++i) {
    pair.u.points.push_back({0.0, 0.0, 0.0});
    pair.u.entity_mask.push_back(i % 3 == 0 ? 1 : 0);
    pair.u.origin_index.push_back(i);
  }
  pair.v = pair.u;
  for (std::size_t i = 0; i < 600; ++i) pair.correspondence.emplace_back(i, i);
  const P2eTargets t = p2e_targets(pair, 256, 9);
  CHECK(t.bg_sample_u.size() == 256);
  CHECK(std::is_sorted(t.bg_sample_u.begin(), t.bg_sample_u.end()));
  for (std::size_t r : t.bg_sample_u) CHECK(t.mask_u[r] == 0u);
  CHECK(p2e_targets(pair, 256, 9).bg_sample_v == t.bg_sample_v);
  CHECK(t.match_u[5] == 5);
  CHECK(p2e_targets(pair, 1000, 9).bg_sample_u.size() == 400);
}

TEST_CASE("gradient descent on features lowers the point-entity loss") {
  Rng rng(21);
  const P2eTargets t = mirrored_targets();
  Tensor fu = random_tensor(rng, 11, 6), fv = random_tensor(rng, 11, 6);
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 30; ++it) {
    Tape tape;
    const Var u = tape.leaf(fu), v = tape.leaf(fv);
    const Var loss = p2e_loss(u, v, t, LossConfig{});
    const double l = loss.value().item();
    if (it == 0) first = l;
    last = l;
    tape.backward(loss);
    for (std::size_t i = 0; i < fu.size(); ++i) {
      fu.data()[i] -= 0.05 * u.grad().data()[i];
      fv.data()[i] -= 0.05 * v.grad().data()[i];
    }
  }
  CHECK(last < first);
}
