#include "mpec/num/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mpec/errors.hpp"

namespace mpec::num {

namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  const Var out = f(tape, vars);
  if (!out.value().is_scalar()) {
    throw ShapeError("grad_check: function is not scalar-valued");
  }
  return out.value().item();
}

}  // namespace

std::vector<double> grad_check_many(const MultiScalarFn& f,
                                    const std::vector<Tensor>& inputs,
                                    double h) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  const Var out = f(tape, vars);
  const double base = out.value().item();
  tape.backward(out);

  const double again = evaluate(f, inputs);
  if (again != base) {
    throw NumericalError("grad_check: function is not deterministic");
  }

  std::vector<double> errors(inputs.size(), 0.0);
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& g = vars[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double analytic = g.empty() ? 0.0 : g.data()[i];
      const double x0 = inputs[k].data()[i];
      probe[k].data()[i] = x0 + h;
      const double fp = evaluate(f, probe);
      probe[k].data()[i] = x0 - h;
      const double fm = evaluate(f, probe);
      probe[k].data()[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err =
          std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      errors[k] = std::max(errors[k], err);
    }
  }
  return errors;
}

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  const MultiScalarFn wrapped = [&f](Tape& t, std::span<const Var> v) {
    return f(t, v[0]);
  };
  return grad_check_many(wrapped, {x}, h)[0];
}

}  // namespace mpec::num
