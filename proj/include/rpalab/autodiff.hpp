#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "rpalab/tensor.hpp"

namespace rpalab {

/// Trainable array owned by a model. Tapes reference parameters; backward adds into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  // decoupled weight decay applies

  Parameter(std::string n, Tensor v, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0), decay(wd) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a forward computation and replays it in reverse. One tape per forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Free leaf that requires grad; its gradient is read back with grad().
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; backward accumulates into p.grad.
  Var param(Parameter& p);

  /// Appends a node. `fn` is stored only when some parent requires grad.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool needs(const Var& v) const { return v.tape() == this && nodes_[v.id()].requires_grad; }
  /// Gradient slot of a node, allocated as zeros on first use.
  Tensor& grad_slot(std::size_t id);
  /// Gradient of a node after backward (zeros if nothing flowed into it).
  Tensor grad(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

/// Same value, cut from the graph.
Var detach(const Var& x);

// Elementwise with right-aligned broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add(const Var& a, double c);
Var mul(const Var& a, double c);
Var neg(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);
/// Gradient passes where lo <= x <= hi.
Var clamp(const Var& a, double lo, double hi);
Var clamp_min(const Var& a, double lo);
/// Gradient passes through finite entries only.
Var nan_to_num(const Var& a, double nan, double posinf, double neginf);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis(const Var& a, std::size_t axis, bool keepdim);
Var mean_axis(const Var& a, std::size_t axis, bool keepdim);
/// Unbiased standard deviation over all entries (n >= 2).
Var stddev(const Var& a);

/// a[..., k] x w[k, m]
Var matmul(const Var& a, const Var& w);
/// a[..., n, k] x b[..., k, m] with equal leading dims.
Var bmm(const Var& a, const Var& b);
Var transpose_last2(const Var& a);
Var permute(const Var& a, const std::vector<std::size_t>& perm);
Var reshape(const Var& a, Shape shape);
/// Slice index `i` of the last axis, keeping the axis (extent 1).
Var slice_last(const Var& a, std::size_t i);

Var contract(const Var& a, const Var& b, std::string_view spec);

/// Softmax over the last axis after subtracting the rowwise max. With `causal`,
/// the trailing [T,T] block is lower-triangular masked: entries j > i get weight 0.
Var softmax_last(const Var& a, bool causal = false);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var embedding(const Var& table, const std::vector<std::size_t>& ids, Shape lead_shape);
/// out[n, r] = ||z[n,:] - c[r,:]||^2
Var sq_dist(const Var& z, const Var& centers);

/// Summed cross-entropy over rows of logits [N,V] with optional label smoothing
/// (target distribution (1-eps)*onehot + eps/V).
Var cross_entropy_sum(const Var& logits, const std::vector<std::size_t>& targets, double smoothing = 0.0);

}  // namespace rpalab
