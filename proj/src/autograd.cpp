#include "mpec/num/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mpec/errors.hpp"

namespace mpec::num {

namespace {

std::set<std::string, std::less<>>& fault_ops() {
  static std::set<std::string, std::less<>> ops;
  return ops;
}

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ValidationError("vars from different tapes");
  return a.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  auto& yd = y.data();
  const auto& xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += alpha * xd[i];
}

// c += a * b for row-major a (MxK), b (KxN).
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = &b(p, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a * b^T for a (MxK), b (NxK).
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b(j, 0);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) += acc;
    }
  }
}

// c += a^T * b for a (KxM), b (KxN).
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = &b(p, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      double* crow = &c(i, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

// ---- Var / Tape -----------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  return record("constant", std::move(value), {}, nullptr);
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericalError("leaf: non-finite value");
  nodes_.push_back(Node{std::move(value), Tensor(), true, nullptr, "leaf"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs,
                 BackwardFn backward) {
  if (used_) throw ValidationError("tape already consumed by backward");
  if (!value.all_finite()) {
    throw NumericalError(std::string(op) + ": produced non-finite value");
  }
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ValidationError("input from another tape");
    needs = needs || in.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs,
                        needs ? std::move(backward) : BackwardFn{},
                        std::string(op)});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  static const Tensor kEmpty;
  return nodes_[id].grad.empty() ? kEmpty : nodes_[id].grad;
}

Tensor* Tape::grad_sink(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ValidationError("loss is not on this tape");
  if (used_) throw ValidationError("second backward pass on the same tape");
  if (!loss.value().is_scalar()) {
    throw ShapeError("backward requires a scalar loss, got " +
                     loss.value().shape_str());
  }
  used_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  *grad_sink(loss.id()) = Tensor::scalar(1.0);
  const auto& faults = fault_ops();
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    if (!faults.empty() && faults.count(n.op)) {
      Tensor flipped = n.grad;
      for (double& v : flipped.data()) v = -v;
      n.backward(flipped, *this);
    } else {
      n.backward(n.grad, *this);
    }
    if (!n.grad.all_finite()) {
      throw NumericalError(n.op + ": non-finite gradient");
    }
  }
}

// ---- parameters -----------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  params_.push_back(Parameter{std::move(name), std::move(value)});
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ValidationError("unknown parameter: " + std::string(name));
}

const Tensor& ParameterSet::get(std::string_view name) const {
  return params_[index_of(name)].value;
}

Tensor& ParameterSet::get(std::string_view name) {
  return params_[index_of(name)].value;
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name ||
        !(params_[i].value == other.params_[i].value)) {
      return false;
    }
  }
  return true;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params, bool trainable)
    : params_(&params) {
  vars_.reserve(params.size());
  for (const auto& p : params.items()) {
    vars_.push_back(trainable ? tape.leaf(p.value) : tape.constant(p.value));
  }
}

BoundParameters::BoundParameters(const ParameterSet& params, std::vector<Var> vars)
    : params_(&params), vars_(std::move(vars)) {
  if (vars_.size() != params.size()) throw ValidationError("bound parameter count mismatch");
}

Var BoundParameters::operator[](std::string_view name) const {
  return vars_[params_->index_of(name)];
}

std::vector<Tensor> BoundParameters::grads() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const Tensor& g = vars_[i].grad();
    if (g.empty()) {
      const Tensor& v = vars_[i].value();
      out.emplace_back(v.rows(), v.cols());
    } else {
      out.push_back(g);
    }
  }
  return out;
}

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  axpy(1.0, b.value(), out);
  const Var in[] = {a, b};
  return t.record("add", std::move(out), in,
                  [ia = a.id(), ib = b.id()](const Tensor& g, Tape& tp) {
                    if (Tensor* s = tp.grad_sink(ia)) axpy(1.0, g, *s);
                    if (Tensor* s = tp.grad_sink(ib)) axpy(1.0, g, *s);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  axpy(-1.0, b.value(), out);
  const Var in[] = {a, b};
  return t.record("sub", std::move(out), in,
                  [ia = a.id(), ib = b.id()](const Tensor& g, Tape& tp) {
                    if (Tensor* s = tp.grad_sink(ia)) axpy(1.0, g, *s);
                    if (Tensor* s = tp.grad_sink(ib)) axpy(-1.0, g, *s);
                  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] *= b.value().data()[i];
  }
  const Var in[] = {a, b};
  return t.record("mul", std::move(out), in,
                  [ia = a.id(), ib = b.id()](const Tensor& g, Tape& tp) {
                    const Tensor& av = tp.value(ia);
                    const Tensor& bv = tp.value(ib);
                    if (Tensor* s = tp.grad_sink(ia)) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        s->data()[i] += g.data()[i] * bv.data()[i];
                      }
                    }
                    if (Tensor* s = tp.grad_sink(ib)) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        s->data()[i] += g.data()[i] * av.data()[i];
                      }
                    }
                  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const Var in[] = {a};
  return a.tape().record("scale", std::move(out), in,
                         [ia = a.id(), factor](const Tensor& g, Tape& tp) {
                           if (Tensor* s = tp.grad_sink(ia)) axpy(factor, g, *s);
                         });
}

Var add_bias(Var x, Var bias) {
  Tape& t = same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_bias: bias " + bv.shape_str() + " for input " +
                     xv.shape_str());
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  }
  const Var in[] = {x, bias};
  return t.record("add_bias", std::move(out), in,
                  [ix = x.id(), ib = bias.id()](const Tensor& g, Tape& tp) {
                    if (Tensor* s = tp.grad_sink(ix)) axpy(1.0, g, *s);
                    if (Tensor* s = tp.grad_sink(ib)) {
                      for (std::size_t r = 0; r < g.rows(); ++r) {
                        for (std::size_t c = 0; c < g.cols(); ++c) {
                          (*s)(0, c) += g(r, c);
                        }
                      }
                    }
                  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const Var in[] = {x};
  return x.tape().record("relu", std::move(out), in,
                         [ix = x.id()](const Tensor& g, Tape& tp) {
                           Tensor* s = tp.grad_sink(ix);
                           if (!s) return;
                           const Tensor& xv = tp.value(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (xv.data()[i] > 0.0) s->data()[i] += g.data()[i];
                           }
                         });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + av.shape_str() +
                     " x " + bv.shape_str());
  }
  Tensor out(av.rows(), bv.cols());
  gemm_acc(av, bv, out);
  const Var in[] = {a, b};
  return t.record("matmul", std::move(out), in,
                  [ia = a.id(), ib = b.id()](const Tensor& g, Tape& tp) {
                    if (Tensor* s = tp.grad_sink(ia)) {
                      gemm_nt_acc(g, tp.value(ib), *s);
                    }
                    if (Tensor* s = tp.grad_sink(ib)) {
                      gemm_tn_acc(tp.value(ia), g, *s);
                    }
                  });
}

Var transpose(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.cols(), xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < xv.cols(); ++c) out(c, r) = xv(r, c);
  }
  const Var in[] = {x};
  return x.tape().record("transpose", std::move(out), in,
                         [ix = x.id()](const Tensor& g, Tape& tp) {
                           Tensor* s = tp.grad_sink(ix);
                           if (!s) return;
                           for (std::size_t r = 0; r < g.rows(); ++r) {
                             for (std::size_t c = 0; c < g.cols(); ++c) {
                               (*s)(c, r) += g(r, c);
                             }
                           }
                         });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw ValidationError("vars from different tapes");
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column count mismatch");
    }
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t r0 = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(r0 * cols));
    ids.push_back(p.id());
    offsets.push_back(r0);
    r0 += p.rows();
  }
  return t.record("concat_rows", std::move(out), parts,
                  [ids, offsets](const Tensor& g, Tape& tp) {
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      Tensor* s = tp.grad_sink(ids[k]);
                      if (!s) continue;
                      const std::size_t begin = offsets[k] * g.cols();
                      for (std::size_t i = 0; i < s->size(); ++i) {
                        s->data()[i] += g.data()[begin + i];
                      }
                    }
                  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row count mismatch");
  const std::size_t ca = av.cols(), cb = bv.cols();
  Tensor out(av.rows(), ca + cb);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < ca; ++c) out(r, c) = av(r, c);
    for (std::size_t c = 0; c < cb; ++c) out(r, ca + c) = bv(r, c);
  }
  const Var in[] = {a, b};
  return t.record("concat_cols", std::move(out), in,
                  [ia = a.id(), ib = b.id(), ca, cb](const Tensor& g, Tape& tp) {
                    if (Tensor* s = tp.grad_sink(ia)) {
                      for (std::size_t r = 0; r < g.rows(); ++r) {
                        for (std::size_t c = 0; c < ca; ++c) (*s)(r, c) += g(r, c);
                      }
                    }
                    if (Tensor* s = tp.grad_sink(ib)) {
                      for (std::size_t r = 0; r < g.rows(); ++r) {
                        for (std::size_t c = 0; c < cb; ++c) {
                          (*s)(r, c) += g(r, ca + c);
                        }
                      }
                    }
                  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  Tensor out(rows.size(), xv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(xv.row(rows[r]).begin(), xv.row(rows[r]).end(), out.row(r).begin());
  }
  const Var in[] = {x};
  return x.tape().record(
      "gather_rows", std::move(out), in,
      [ix = x.id(), idx = std::vector<std::size_t>(rows.begin(), rows.end())](
          const Tensor& g, Tape& tp) {
        Tensor* s = tp.grad_sink(ix);
        if (!s) return;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          auto dst = s->row(idx[r]);
          auto src = g.row(r);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
      });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const Var in[] = {x};
  return x.tape().record("sum", Tensor::scalar(acc), in,
                         [ix = x.id()](const Tensor& g, Tape& tp) {
                           Tensor* s = tp.grad_sink(ix);
                           if (!s) return;
                           for (double& v : s->data()) v += g.item();
                         });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const Var in[] = {x};
  return x.tape().record("mean", Tensor::scalar(acc / static_cast<double>(n)), in,
                         [ix = x.id(), n](const Tensor& g, Tape& tp) {
                           Tensor* s = tp.grad_sink(ix);
                           if (!s) return;
                           const double gv = g.item() / static_cast<double>(n);
                           for (double& v : s->data()) v += gv;
                         });
}

// ---- normalisation and pooling --------------------------------------------

Var l2_normalize_rows(Var x, double eps) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double sq = 0.0;
    for (double v : xv.row(r)) sq += v * v;
    const double n = std::sqrt(sq);
    norms[r] = n;
    const double denom = n < eps ? eps : n;
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) / denom;
  }
  const Var in[] = {x};
  // record() appends exactly one node, so the output id is known up front.
  const std::size_t yid = x.tape().size();
  return x.tape().record(
      "l2_normalize_rows", std::move(out), in,
      [ix = x.id(), norms = std::move(norms), eps, yid](
          const Tensor& g, Tape& tp) {
        Tensor* s = tp.grad_sink(ix);
        if (!s) return;
        const Tensor& yv = tp.value(yid);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          if (norms[r] < eps) continue;
          double dot = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) dot += yv(r, c) * g(r, c);
          for (std::size_t c = 0; c < g.cols(); ++c) {
            (*s)(r, c) += (g(r, c) - yv(r, c) * dot) / norms[r];
          }
        }
      });
}

Var segment_mean(Var x, std::span<const std::size_t> segments,
                 std::size_t num_groups, std::vector<std::size_t>* empty_groups) {
  const Tensor& xv = x.value();
  if (segments.size() != xv.rows()) {
    throw ShapeError("segment_mean: segment list length differs from rows");
  }
  std::vector<std::size_t> counts(num_groups, 0);
  for (std::size_t s : segments) {
    if (s >= num_groups) {
      throw ValidationError("segment_mean: group id " + std::to_string(s) +
                            " out of range " + std::to_string(num_groups));
    }
    ++counts[s];
  }
  Tensor out(num_groups, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto dst = out.row(segments[r]);
    auto src = xv.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
  }
  if (empty_groups) empty_groups->clear();
  for (std::size_t gi = 0; gi < num_groups; ++gi) {
    if (counts[gi] == 0) {
      if (empty_groups) empty_groups->push_back(gi);
      continue;
    }
    const double n = static_cast<double>(counts[gi]);
    for (double& v : out.row(gi)) v /= n;
  }
  const Var in[] = {x};
  return x.tape().record(
      "segment_mean", std::move(out), in,
      [ix = x.id(), seg = std::vector<std::size_t>(segments.begin(), segments.end()),
       counts](const Tensor& g, Tape& tp) {
        Tensor* s = tp.grad_sink(ix);
        if (!s) return;
        for (std::size_t r = 0; r < seg.size(); ++r) {
          const double inv = 1.0 / static_cast<double>(counts[seg[r]]);
          auto dst = s->row(r);
          auto src = g.row(seg[r]);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c] * inv;
        }
      });
}

Var neighbor_mean(Var x, const Neighborhoods& nbrs) {
  const Tensor& xv = x.value();
  if (nbrs.size() != xv.rows()) {
    throw ShapeError("neighbor_mean: neighbourhood count differs from rows");
  }
  const std::size_t d = xv.cols();
  Tensor out(xv.rows(), d);
  for (std::size_t i = 0; i < nbrs.size(); ++i) {
    const std::size_t b = nbrs.offsets[i], e = nbrs.offsets[i + 1];
    if (e == b) throw ValidationError("neighbor_mean: empty neighbourhood");
    double* dst = &out(i, 0);
    for (std::size_t k = b; k < e; ++k) {
      const double* src = &xv(nbrs.indices[k], 0);
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    const double n = static_cast<double>(e - b);
    for (std::size_t c = 0; c < d; ++c) dst[c] /= n;
  }
  const Var in[] = {x};
  return x.tape().record("neighbor_mean", std::move(out), in,
                         [ix = x.id(), nbrs](const Tensor& g, Tape& tp) {
                           Tensor* s = tp.grad_sink(ix);
                           if (!s) return;
                           const std::size_t d = g.cols();
                           for (std::size_t i = 0; i < nbrs.size(); ++i) {
                             const std::size_t b = nbrs.offsets[i];
                             const std::size_t e = nbrs.offsets[i + 1];
                             const double inv = 1.0 / static_cast<double>(e - b);
                             const double* src = &g(i, 0);
                             for (std::size_t k = b; k < e; ++k) {
                               double* dst = &(*s)(nbrs.indices[k], 0);
                               for (std::size_t c = 0; c < d; ++c) {
                                 dst[c] += src[c] * inv;
                               }
                             }
                           }
                         });
}

Var row_pair_mean(Var a, Var b, std::span<const std::pair<long, long>> pairs) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) throw ShapeError("row_pair_mean: column mismatch");
  const std::size_t d = av.cols();
  Tensor out(pairs.size(), d);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const auto [ia, ib] = pairs[r];
    if ((ia < 0 && ib < 0) || ia >= static_cast<long>(av.rows()) ||
        ib >= static_cast<long>(bv.rows())) {
      throw ValidationError("row_pair_mean: invalid pair at row " +
                            std::to_string(r));
    }
    for (std::size_t c = 0; c < d; ++c) {
      if (ia >= 0 && ib >= 0) {
        out(r, c) = (av(ia, c) + bv(ib, c)) * 0.5;
      } else if (ia >= 0) {
        out(r, c) = av(ia, c);
      } else {
        out(r, c) = bv(ib, c);
      }
    }
  }
  const Var in[] = {a, b};
  return t.record(
      "row_pair_mean", std::move(out), in,
      [iaid = a.id(), ibid = b.id(),
       p = std::vector<std::pair<long, long>>(pairs.begin(), pairs.end())](
          const Tensor& g, Tape& tp) {
        Tensor* sa = tp.grad_sink(iaid);
        Tensor* sb = tp.grad_sink(ibid);
        for (std::size_t r = 0; r < p.size(); ++r) {
          const auto [ia, ib] = p[r];
          const double w = (ia >= 0 && ib >= 0) ? 0.5 : 1.0;
          for (std::size_t c = 0; c < g.cols(); ++c) {
            if (sa && ia >= 0) (*sa)(ia, c) += w * g(r, c);
            if (sb && ib >= 0) (*sb)(ib, c) += w * g(r, c);
          }
        }
      });
}

// ---- losses ---------------------------------------------------------------

Var cross_entropy_from_logits(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows(), c = lv.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: target count differs from rows");
  }
  if (n == 0) throw ShapeError("cross_entropy: no rows");
  Tensor probs(n, c);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= c) {
      throw ValidationError("cross_entropy: target " + std::to_string(targets[r]) +
                            " out of range for " + std::to_string(c) + " classes");
    }
    auto row = lv.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double e = std::exp(row[k] - m);
      probs(r, k) = e;
      z += e;
    }
    for (std::size_t k = 0; k < c; ++k) probs(r, k) /= z;
    total += (m + std::log(z)) - row[targets[r]];
  }
  const Var in[] = {logits};
  return logits.tape().record(
      "cross_entropy", Tensor::scalar(total / static_cast<double>(n)), in,
      [il = logits.id(), probs = std::move(probs),
       tg = std::vector<std::size_t>(targets.begin(), targets.end())](
          const Tensor& g, Tape& tp) {
        Tensor* s = tp.grad_sink(il);
        if (!s) return;
        const double w = g.item() / static_cast<double>(probs.rows());
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          for (std::size_t k = 0; k < probs.cols(); ++k) {
            const double onehot = (k == tg[r]) ? 1.0 : 0.0;
            (*s)(r, k) += w * (probs(r, k) - onehot);
          }
        }
      });
}

Var binary_cross_entropy_from_logits(Var logits, const Tensor& labels) {
  const Tensor& lv = logits.value();
  require_same_shape("binary_cross_entropy", lv, labels);
  if (lv.empty()) throw ShapeError("binary_cross_entropy: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const double y = labels.data()[i];
    if (y != 0.0 && y != 1.0) {
      throw ValidationError("binary_cross_entropy: non-binary label " +
                            std::to_string(y));
    }
    const double s = lv.data()[i];
    total += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
  }
  const std::size_t n = lv.size();
  const Var in[] = {logits};
  return logits.tape().record(
      "binary_cross_entropy", Tensor::scalar(total / static_cast<double>(n)), in,
      [il = logits.id(), labels](const Tensor& g, Tape& tp) {
        Tensor* s = tp.grad_sink(il);
        if (!s) return;
        const Tensor& lv = tp.value(il);
        const double w = g.item() / static_cast<double>(lv.size());
        for (std::size_t i = 0; i < lv.size(); ++i) {
          const double x = lv.data()[i];
          const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                      : std::exp(x) / (1.0 + std::exp(x));
          s->data()[i] += w * (sig - labels.data()[i]);
        }
      });
}

namespace testing {

void inject_backward_sign_fault(std::string_view op) {
  fault_ops().insert(std::string(op));
}

void clear_backward_faults() { fault_ops().clear(); }

}  // namespace testing

}  // namespace mpec::num
