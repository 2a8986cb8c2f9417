#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle. Operations record onto the tape made active by a
// TapeScope on the calling thread, and only when at least one input requires a
// gradient; without an active tape every op is a plain forward computation.
// Broadcasting is limited to a shared right-hand matrix in `matmul`; anything
// else goes through `expand`.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vgd/rng.hpp"

namespace vgd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  double* ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return {node_->ensure_grad(), node_->data.size()}; }
  void zero_grad();

  double item() const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Copy of the values without gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape shape, std::vector<double> values);
  std::shared_ptr<detail::TensorNode> node_;
};

Tensor make_result(Shape shape, std::vector<double> values);

class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string_view op;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string_view op, std::vector<std::shared_ptr<detail::TensorNode>> inputs,
              std::shared_ptr<detail::TensorNode> output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule once in reverse order.
  /// Returns the number of rules invoked.
  std::size_t backward(const Tensor& loss);

  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

/// Makes `tape` the recording target of the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
/// Natural log of max(a, floor).
Tensor log(const Tensor& a, double floor = 0.0);
Tensor square(const Tensor& a);

/// Repeats `a` over leading axes; `a.shape()` must be a suffix of `target`.
Tensor expand(const Tensor& a, const Shape& target);
Tensor reshape(const Tensor& a, Shape shape);

/// [..., m, k] x [k, n] (shared right operand) or [..., m, k] x [..., k, n] (same leading axes).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1);
/// Concatenation along the last axis.
Tensor concat(const std::vector<Tensor>& parts);
/// Columns [begin, end) of the last axis.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over `axis`, which is removed from the shape.
Tensor sum_axis(const Tensor& a, std::size_t axis);

Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Rows of `table` ([vocab, d]) selected by `indices`; result [indices.size(), d].
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices);

/// out[b,i,j,:] = a[b,i,:] + c[b,j,:] for [B,n,d] inputs.
Tensor outer_add(const Tensor& a, const Tensor& c);
/// out[b,i,j,:] = a[b,i,:] * c[b,j,:].
Tensor outer_mul(const Tensor& a, const Tensor& c);

/// Multi-head attention for q,k,v of shape [B, n, heads*dh]. `bias` is [B, n, n, heads]
/// added to the logits (query i, key j); `key_mask` is [B, n] with 1 for real nodes.
/// Masked keys get zero weight; rows for masked queries are zero.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const Tensor& bias = {}, const Tensor& key_mask = {});

/// Relaxed categorical sample over the last axis. With `hard`, the forward value is the
/// one-hot argmax of the perturbed logits and the gradient is that of the relaxed sample.
Tensor gumbel_softmax(const Tensor& logits, double temperature, bool hard, Rng& rng);

/// Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|) using central differences.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-6);

/// grad_check over model parameters: `loss` rebuilds the scalar from the current parameter
/// values. Checks at most `max_coords_per_param` coordinates of each parameter (evenly spaced).
double grad_check_params(const std::function<Tensor()>& loss, std::span<Tensor> params, double eps = 1e-6,
                         std::size_t max_coords_per_param = 8);

}  // namespace vgd
