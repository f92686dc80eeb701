#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rpalab {

using Shape = std::vector<std::size_t>;

constexpr std::size_t kMaxRank = 4;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major f64 array of rank 0..4. Value semantics; copying copies data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty() && !shape_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);

  bool all_finite() const;
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Plain (non-recording) kernels. The differentiable counterparts live in autodiff.hpp.

/// Index-summed product of two tensors described by an einsum-style spec such as
/// "btr,tk->rk". Every output index must appear in an input; repeated indices
/// must agree in extent.
Tensor contract(const Tensor& a, const Tensor& b, std::string_view spec);

/// Softmax over the last axis with the rowwise max subtracted first.
Tensor softmax_rows(const Tensor& x);

/// a[..., n, k] x b[k, m]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose2d(const Tensor& a);

/// Replaces NaN / +Inf / -Inf by the given values.
Tensor nan_to_num(const Tensor& x, double nan, double posinf, double neginf);

double sum(const Tensor& x);
double mean(const Tensor& x);
/// Unbiased (n-1) standard deviation over all entries.
double stddev(const Tensor& x);
double max_abs(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Summed cross-entropy of logits [N,V] against targets with label smoothing eps
/// (target distribution (1-eps)*onehot + eps/V). Targets are assumed in range.
double cross_entropy_sum(const Tensor& logits, const std::vector<std::size_t>& targets, double smoothing = 0.0);

/// Per-row sums of a 2-D tensor.
std::vector<double> row_sums(const Tensor& m);
std::vector<double> col_sums(const Tensor& m);

}  // namespace rpalab
