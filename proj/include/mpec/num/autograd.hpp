#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mpec/num/tensor.hpp"

namespace mpec::num {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the gradient of the op output and accumulates input gradients.
using BackwardFn = std::function<void(const Tensor& grad_out, Tape& tape)>;

// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
// is already topologically sorted. A tape supports exactly one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  // Records an op output. `inputs` decide whether the output requires grad;
  // `backward` is dropped when none of them do.
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs,
             BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient accumulator of node `id`, allocated on first use; nullptr when
  // the node does not require grad.
  Tensor* grad_sink(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  bool used() const { return used_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::string op;
  };
  std::vector<Node> nodes_;
  bool used_ = false;
};

// Named learnable tensor.
struct Parameter {
  std::string name;
  Tensor value;
};

// Ordered parameter collection with unique names.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  std::size_t index_of(std::string_view name) const;

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<Parameter> params_;
};

// Parameters bound to one tape, in ParameterSet order: as gradient-carrying
// leaves, or as constants for inference.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params, bool trainable = true);
  // Adopts already recorded vars, one per parameter in order.
  BoundParameters(const ParameterSet& params, std::vector<Var> vars);
  Var operator[](std::string_view name) const;
  const std::vector<Var>& vars() const { return vars_; }
  // Gradients after backward, in ParameterSet order; zero tensors for
  // parameters that the loss does not reach.
  std::vector<Tensor> grads() const;

 private:
  const ParameterSet* params_;
  std::vector<Var> vars_;
};

// ---- ops ------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// Adds row vector `bias` (1xC) to every row of `x` (NxC).
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var matmul(Var a, Var b);
Var transpose(Var x);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(Var a, Var b);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var sum(Var x);
Var mean(Var x);

// Rows scaled to unit Euclidean norm; rows with norm < eps are divided by
// eps instead and pass zero gradient.
Var l2_normalize_rows(Var x, double eps = 1e-12);

// Row g of the result is the mean of the rows of `x` whose segment id is g.
// Groups without members produce zero rows and are listed in `empty_groups`
// when provided.
Var segment_mean(Var x, std::span<const std::size_t> segments,
                 std::size_t num_groups,
                 std::vector<std::size_t>* empty_groups = nullptr);

// CSR adjacency: neighbours of row i are indices[offsets[i] .. offsets[i+1]).
struct Neighborhoods {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;
  std::size_t size() const { return offsets.size() - 1; }
};

// out[i] = mean of x over the listed neighbourhood of i.
Var neighbor_mean(Var x, const Neighborhoods& nbrs);

// Output row r is the mean of a[pairs[r].first] and b[pairs[r].second]; a
// negative index marks the side as absent, in which case the other row is
// passed through.
Var row_pair_mean(Var a, Var b,
                  std::span<const std::pair<long, long>> pairs);

// Mean over rows of -log softmax(logits)[target], max-shifted.
Var cross_entropy_from_logits(Var logits,
                              std::span<const std::size_t> targets);

// Mean over all elements of the numerically stable logistic loss
// max(s,0) - s*y + log(1 + exp(-|s|)). Labels must be 0 or 1.
Var binary_cross_entropy_from_logits(Var logits, const Tensor& labels);

namespace testing {
// Negates the incoming gradient of every op named `op` during backward.
// Used to verify that the gradient checker catches broken backward rules.
void inject_backward_sign_fault(std::string_view op);
void clear_backward_faults();
}  // namespace testing

}  // namespace mpec::num
