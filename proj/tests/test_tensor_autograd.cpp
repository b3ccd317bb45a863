#include <cmath>
#include <vector>

#include "doctest.h"
#include "mpec/errors.hpp"
#include "mpec/num/autograd.hpp"
#include "mpec/num/gradcheck.hpp"
#include "mpec/rng.hpp"

using namespace mpec;
using namespace mpec::num;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (double& x : t.data()) x = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("tensor construction checks data length") {
  CHECK_THROWS_AS(Tensor(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  const Tensor t = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(t(1, 0) == 3);
  CHECK(t.shape_str() == "[2x2]");
  CHECK_THROWS_AS(Tensor(2, 1).item(), ShapeError);
}

TEST_CASE("matmul values") {
  Tape tape;
  const Var eye = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  const Var m = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  // Copy out: value() references are invalidated when the tape grows.
  const Tensor prod = matmul(eye, m).value();
  CHECK(prod == m.value());
  const Var zero = tape.constant(Tensor(2, 1));
  const Tensor zprod = matmul(eye, zero).value();
  CHECK(zprod == Tensor(2, 1));
  CHECK_THROWS_AS(matmul(m, tape.constant(Tensor(3, 1))), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(3);
  const Tensor b = random_tensor(rng, 4, 2);
  const Tensor w = random_tensor(rng, 3, 2);
  const double err = grad_check(
      [&](Tape& t, Var a) { return sum(mul(matmul(a, t.constant(b)), t.constant(w))); },
      random_tensor(rng, 3, 4));
  CHECK(err < 1e-6);
}

TEST_CASE("l2_normalize_rows") {
  Tape tape;
  const Var x = tape.constant(Tensor::from_rows({{3, 4}, {0.6, 0.8}, {0, 0}}));
  const Tensor y = l2_normalize_rows(x, 1e-12).value();
  CHECK(y(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(y(1, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y(2, 0) == 0.0);
  CHECK(y(2, 1) == 0.0);
}

TEST_CASE("l2_normalize_rows passes zero gradient through a zero row") {
  Tape tape;
  const Var x = tape.leaf(Tensor::from_rows({{0, 0}, {1, 2}}));
  tape.backward(sum(l2_normalize_rows(x)));
  CHECK(x.grad()(0, 0) == 0.0);
  CHECK(x.grad()(0, 1) == 0.0);
}

TEST_CASE("normalized rows have unit norm") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    Tensor t = random_tensor(rng, 5, 7);
    for (double& v : t.data()) v *= std::pow(10.0, rng.uniform(-5, 5));
    const Tensor y = l2_normalize_rows(tape.constant(t)).value();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double sq = 0.0;
      for (double v : y.row(r)) sq += v * v;
      CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("segment_mean") {
  Tape tape;
  const Var x = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}, {5, 7}}));
  const std::vector<std::size_t> seg = {0, 0, 1};
  std::vector<std::size_t> empty;
  const Tensor y = segment_mean(x, seg, 3, &empty).value();
  CHECK(y(0, 0) == 0.5);
  CHECK(y(0, 1) == 0.5);
  CHECK(y(1, 0) == 5);
  CHECK(y(1, 1) == 7);
  CHECK(y(2, 0) == 0);
  CHECK(empty == std::vector<std::size_t>{2});
  const std::vector<std::size_t> bad = {0, 3, 1};
  CHECK_THROWS_AS(segment_mean(x, bad, 3), ValidationError);
}

TEST_CASE("segment_mean equals a naive per-group loop bit for bit") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, 10, 4);
    std::vector<std::size_t> seg(10);
    for (auto& s : seg) s = rng.below(3);
    Tape tape;
    const Tensor y = segment_mean(tape.constant(x), seg, 3).value();
    for (std::size_t g = 0; g < 3; ++g) {
      for (std::size_t c = 0; c < 4; ++c) {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < 10; ++r) {
          if (seg[r] == g) {
            s += x(r, c);
            ++n;
          }
        }
        CHECK(y(g, c) == (n ? s / static_cast<double>(n) : 0.0));
      }
    }
  }
}

TEST_CASE("segment_mean of a single-row group is that row") {
  Tape tape;
  const Var x = tape.constant(Tensor::from_rows({{0.1, -2.5, 3.0}, {1, 1, 1}}));
  const std::vector<std::size_t> seg = {1, 0};
  const Tensor y = segment_mean(x, seg, 2).value();
  CHECK(y(1, 0) == 0.1);
  CHECK(y(1, 1) == -2.5);
  CHECK(y(1, 2) == 3.0);
}

TEST_CASE("cross entropy values") {
  Tape tape;
  const std::vector<std::size_t> t0 = {2};
  CHECK(cross_entropy_from_logits(tape.constant(Tensor(1, 5, 0.3)), t0).value().item() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  Tensor sat(1, 3);
  sat(0, 2) = 1000;
  CHECK(cross_entropy_from_logits(tape.constant(sat), t0).value().item() < 1e-12);
  const std::vector<std::size_t> oob = {3};
  CHECK_THROWS_AS(cross_entropy_from_logits(tape.constant(Tensor(1, 3)), oob), ValidationError);
}

TEST_CASE("cross entropy matches direct summation") {
  Rng rng(4);
  const Tensor l = random_tensor(rng, 4, 3);
  const std::vector<std::size_t> tg = {0, 2, 1, 1};
  double expected = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(l(r, c));
    expected += -std::log(std::exp(l(r, tg[r])) / z);
  }
  expected /= 4.0;
  Tape tape;
  const double got = cross_entropy_from_logits(tape.constant(l), tg).value().item();
  CHECK(std::abs(got - expected) / expected < 1e-12);
  const double err = grad_check([&](Tape&, Var x) { return cross_entropy_from_logits(x, tg); }, l);
  CHECK(err < 1e-6);
}

TEST_CASE("binary cross entropy values") {
  Tape tape;
  CHECK(binary_cross_entropy_from_logits(tape.constant(Tensor(1, 1)), Tensor(1, 1, 1.0)).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(binary_cross_entropy_from_logits(tape.constant(Tensor(1, 1)), Tensor(1, 1)).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(binary_cross_entropy_from_logits(tape.constant(Tensor::scalar(50)), Tensor(1, 1, 1.0))
            .value()
            .item() < 1e-20);
  CHECK(binary_cross_entropy_from_logits(tape.constant(Tensor::scalar(-3)), Tensor(1, 1, 1.0))
            .value()
            .item() == doctest::Approx(3.0485873515737420).epsilon(1e-12));
  CHECK_THROWS_AS(binary_cross_entropy_from_logits(tape.constant(Tensor(1, 1)), Tensor(1, 1, 0.5)),
                  ValidationError);
}

TEST_CASE("backward rules") {
  SUBCASE("sum gives ones") {
    Tape tape;
    const Var x = tape.leaf(Tensor(2, 3, 4.0));
    tape.backward(sum(x));
    for (double g : x.grad().data()) CHECK(g == 1.0);
  }
  SUBCASE("zero scale gives zeros") {
    Tape tape;
    const Var x = tape.leaf(Tensor(2, 2, 1.5));
    tape.backward(sum(scale(x, 0.0)));
    for (double g : x.grad().data()) CHECK(g == 0.0);
  }
  SUBCASE("fan-out accumulates") {
    Tape tape;
    const Var x = tape.leaf(Tensor::scalar(3.0));
    tape.backward(add(mul(x, x), x));
    CHECK(x.grad().item() == 7.0);
  }
  SUBCASE("non-scalar loss and second pass are errors") {
    Tape tape;
    const Var x = tape.leaf(Tensor(2, 2, 1.0));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
    const Var s = sum(x);
    tape.backward(s);
    CHECK_THROWS_AS(tape.backward(s), ValidationError);
  }
}

TEST_CASE("non-finite values are rejected when recorded") {
  Tape tape;
  const Var x = tape.leaf(Tensor::scalar(1e308));
  CHECK_THROWS_AS(scale(x, 1e10), NumericalError);
}

TEST_CASE("grad_check basics") {
  Rng rng(2);
  const Tensor x = random_tensor(rng, 3, 2);
  CHECK(grad_check([](Tape&, Var v) { return scale(sum(mul(v, v)), 0.5); }, x) < 1e-8);
  CHECK(grad_check([](Tape& t, Var) { return t.constant(Tensor::scalar(2.0)); }, x) == 0.0);
  int calls = 0;
  CHECK_THROWS_AS(grad_check(
                      [&](Tape& t, Var v) {
                        ++calls;
                        return add(sum(v), t.constant(Tensor::scalar(calls)));
                      },
                      x),
                  NumericalError);
}

TEST_CASE("injected backward sign fault is detected") {
  Rng rng(6);
  const Tensor a = random_tensor(rng, 3, 3), b = random_tensor(rng, 3, 2);
  auto f = [&](Tape& t, Var x) { return sum(matmul(x, t.constant(b))); };
  CHECK(grad_check(f, a) < 1e-8);
  testing::inject_backward_sign_fault("matmul");
  const double err = grad_check(f, a);
  testing::clear_backward_faults();
  CHECK(err > 1e-2);
}

TEST_CASE("parameter sets") {
  ParameterSet p;
  p.add("w", Tensor(2, 2, 1.0));
  p.add("b", Tensor(1, 2));
  CHECK_THROWS_AS(p.add("w", Tensor(1, 1)), ValidationError);
  CHECK(p.index_of("b") == 1);
  CHECK(p.total_elements() == 6);
  Tape tape;
  const BoundParameters bound(tape, p);
  tape.backward(sum(bound["w"]));
  const auto grads = bound.grads();
  CHECK(grads[0] == Tensor(2, 2, 1.0));
  CHECK(grads[1] == Tensor(1, 2));
}

TEST_CASE("row_pair_mean splits gradient evenly for matched rows") {
  Tape tape;
  const Var a = tape.leaf(Tensor::from_rows({{1, 0}, {2, 2}}));
  const Var b = tape.leaf(Tensor::from_rows({{0, 1}}));
  const std::vector<std::pair<long, long>> pairs = {{0, 0}, {1, -1}};
  const Var m = row_pair_mean(a, b, pairs);
  CHECK(m.value() == Tensor::from_rows({{0.5, 0.5}, {2, 2}}));
  tape.backward(sum(m));
  CHECK(a.grad() == Tensor::from_rows({{0.5, 0.5}, {1, 1}}));
  CHECK(b.grad() == Tensor::from_rows({{0.5, 0.5}}));
}
