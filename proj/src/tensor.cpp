#include "rpalab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rpalab {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > kMaxRank) throw std::invalid_argument("tensor rank > 4: " + shape_str(shape_));
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > kMaxRank) throw std::invalid_argument("tensor rank > 4: " + shape_str(shape_));
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

namespace {

struct ContractPlan {
  std::string a_idx, b_idx, out_idx;
  std::string letters;              // every distinct index letter
  std::vector<std::size_t> extent;  // per letter
};

ContractPlan plan_contract(const Shape& sa, const Shape& sb, std::string_view spec) {
  ContractPlan p;
  auto arrow = spec.find("->");
  auto comma = spec.find(',');
  if (arrow == std::string_view::npos || comma == std::string_view::npos || comma > arrow) {
    throw std::invalid_argument("contraction spec must look like 'ab,bc->ac': " + std::string(spec));
  }
  p.a_idx = std::string(spec.substr(0, comma));
  p.b_idx = std::string(spec.substr(comma + 1, arrow - comma - 1));
  p.out_idx = std::string(spec.substr(arrow + 2));
  if (p.a_idx.size() != sa.size() || p.b_idx.size() != sb.size()) {
    throw std::invalid_argument("contraction '" + std::string(spec) + "' does not match operand shapes " +
                                shape_str(sa) + " and " + shape_str(sb));
  }
  auto bind = [&](const std::string& idx, const Shape& s) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto pos = p.letters.find(idx[i]);
      if (pos == std::string::npos) {
        p.letters.push_back(idx[i]);
        p.extent.push_back(s[i]);
      } else if (p.extent[pos] != s[i]) {
        throw std::invalid_argument(std::string("contraction index '") + idx[i] + "' has extents " +
                                    std::to_string(p.extent[pos]) + " and " + std::to_string(s[i]));
      }
    }
  };
  bind(p.a_idx, sa);
  bind(p.b_idx, sb);
  for (char c : p.out_idx) {
    if (p.letters.find(c) == std::string::npos) {
      throw std::invalid_argument(std::string("output index '") + c + "' not present in operands");
    }
  }
  return p;
}

std::vector<std::size_t> letter_strides(const std::string& letters, const std::string& idx,
                                        const std::vector<std::size_t>& extent) {
  // stride of each letter inside the operand whose index string is idx (0 if absent)
  std::vector<std::size_t> stride(letters.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = idx.size(); i-- > 0;) {
    auto pos = letters.find(idx[i]);
    stride[pos] += s;  // repeated letters (diagonals) add up
    s *= extent[pos];
  }
  return stride;
}

}  // namespace

Tensor contract(const Tensor& a, const Tensor& b, std::string_view spec) {
  const auto p = plan_contract(a.shape(), b.shape(), spec);
  Shape out_shape;
  for (char c : p.out_idx) out_shape.push_back(p.extent[p.letters.find(c)]);
  Tensor out(out_shape, 0.0);
  const std::size_t n = p.letters.size();
  const auto sa = letter_strides(p.letters, p.a_idx, p.extent);
  const auto sb = letter_strides(p.letters, p.b_idx, p.extent);
  const auto so = letter_strides(p.letters, p.out_idx, p.extent);
  std::size_t total = 1;
  for (auto e : p.extent) total *= e;
  if (total == 0) return out;

  std::vector<std::size_t> ctr(n, 0);
  std::size_t ia = 0, ib = 0, io = 0;
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t it = 0; it < total; ++it) {
    po[io] += pa[ia] * pb[ib];
    for (std::size_t d = n; d-- > 0;) {
      if (++ctr[d] < p.extent[d]) {
        ia += sa[d];
        ib += sb[d];
        io += so[d];
        break;
      }
      ctr[d] = 0;
      ia -= sa[d] * (p.extent[d] - 1);
      ib -= sb[d] * (p.extent[d] - 1);
      io -= so[d] * (p.extent[d] - 1);
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw std::invalid_argument("softmax_rows needs a non-empty last axis");
  Tensor y(x.shape());
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double* out = y.data().data() + r * n;
    double m = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(in[j] - m);
      z += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw std::invalid_argument("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0), m = b.dim(1);
  const std::size_t rows = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = m;
  Tensor out(out_shape, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    double* orow = po + i * m;
    const double* arow = pa + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose2d expects rank 2");
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor nan_to_num(const Tensor& x, double nan, double posinf, double neginf) {
  Tensor y = x;
  for (auto& v : y.data()) {
    if (std::isnan(v)) v = nan;
    else if (v == std::numeric_limits<double>::infinity()) v = posinf;
    else if (v == -std::numeric_limits<double>::infinity()) v = neginf;
  }
  return y;
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

double mean(const Tensor& x) { return x.numel() ? sum(x) / static_cast<double>(x.numel()) : 0.0; }

double stddev(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x.data()) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(n - 1));
}

double max_abs(const Tensor& x) {
  double m = 0.0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> row_sums(const Tensor& m) {
  if (m.rank() != 2) throw std::invalid_argument("row_sums expects rank 2");
  std::vector<double> s(m.dim(0), 0.0);
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) s[i] += m.at(i, j);
  return s;
}

std::vector<double> col_sums(const Tensor& m) {
  if (m.rank() != 2) throw std::invalid_argument("col_sums expects rank 2");
  std::vector<double> s(m.dim(1), 0.0);
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) s[j] += m.at(i, j);
  return s;
}

double cross_entropy_sum(const Tensor& logits, const std::vector<std::size_t>& targets, double smoothing) {
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * v;
    double m = row[0];
    for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    double mean_nll = 0.0;
    if (smoothing != 0.0) {
      for (std::size_t j = 0; j < v; ++j) mean_nll += lse - row[j];
      mean_nll /= static_cast<double>(v);
    }
    loss += (1.0 - smoothing) * (lse - row[targets[i]]) + smoothing * mean_nll;
  }
  return loss;
}

}  // namespace rpalab
