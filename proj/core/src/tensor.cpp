#include "vgd/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "vgd/error.hpp"

namespace vgd {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

namespace {

thread_local Tape* g_active_tape = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " " + why);
}

bool needs_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// Records `out` as the product of `inputs` when any of them is tracked.
template <typename Fn>
void record(std::string_view op, std::initializer_list<const Tensor*> inputs, Tensor& out, Fn&& backward) {
  if (!needs_record(inputs)) return;
  std::vector<NodePtr> nodes;
  for (const Tensor* t : inputs)
    if (t->defined()) nodes.push_back(t->node());
  out.set_requires_grad(true);
  g_active_tape->record(op, std::move(nodes), out.node(), std::forward<Fn>(backward));
}

// Gradient of the output, or nullptr when nothing downstream reached it.
const double* out_grad(const TensorNode* out) { return out->grad.empty() ? nullptr : out->grad.data(); }

double* in_grad(TensorNode* in) { return in->requires_grad ? in->ensure_grad() : nullptr; }

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<TensorNode>()) {
  if (shape.size() > 4) throw ShapeError("tensor rank " + std::to_string(shape.size()) + " exceeds 4");
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor make_result(Shape shape, std::vector<double> values) { return Tensor(std::move(shape), std::move(values)); }

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data); }

// ---------------------------------------------------------------------------
// Tape

void Tape::record(std::string_view op, std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward) {
  records_.push_back({op, std::move(inputs), std::move(output), std::move(backward)});
}

std::size_t Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  loss.node()->ensure_grad()[0] = 1.0;
  std::size_t invoked = 0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->backward();
    ++invoked;
  }
  return invoked;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

// ---------------------------------------------------------------------------
// Elementwise

namespace {

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

template <typename Fwd, typename Dfdx>
Tensor unary(std::string_view op, const Tensor& a, Fwd fwd, Dfdx dfdx) {
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  Tensor out = make_result(a.shape(), std::move(y));
  TensorNode* an = a.node().get();
  TensorNode* on = out.node().get();
  record(op, {&a}, out, [an, on, dfdx] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t i = 0; i < an->data.size(); ++i) ga[i] += go[i] * dfdx(an->data[i], on->data[i]);
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  Tensor out = make_result(a.shape(), std::move(y));
  TensorNode *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
  record("add", {&a, &b}, out, [an, bn, on] {
    const double* go = out_grad(on);
    if (!go) return;
    const std::size_t n = on->data.size();
    if (double* ga = in_grad(an))
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    if (double* gb = in_grad(bn))
      for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  Tensor out = make_result(a.shape(), std::move(y));
  TensorNode *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
  record("sub", {&a, &b}, out, [an, bn, on] {
    const double* go = out_grad(on);
    if (!go) return;
    const std::size_t n = on->data.size();
    if (double* ga = in_grad(an))
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    if (double* gb = in_grad(bn))
      for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i];
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  Tensor out = make_result(a.shape(), std::move(y));
  TensorNode *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
  record("mul", {&a, &b}, out, [an, bn, on] {
    const double* go = out_grad(on);
    if (!go) return;
    const std::size_t n = on->data.size();
    if (double* ga = in_grad(an))
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * bn->data[i];
    if (double* gb = in_grad(bn))
      for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * an->data[i];
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a, double floor) {
  return unary("log", a, [floor](double x) { return std::log(std::max(x, floor)); },
               [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor expand(const Tensor& a, const Shape& target) {
  const Shape& s = a.shape();
  if (s.size() > target.size() || !std::equal(s.begin(), s.end(), target.end() - s.size()))
    shape_fail("expand", s, target);
  const std::size_t inner = a.numel();
  const std::size_t reps = shape_numel(target) / std::max<std::size_t>(inner, 1);
  std::vector<double> y(shape_numel(target));
  for (std::size_t r = 0; r < reps; ++r) std::copy(a.data().begin(), a.data().end(), y.begin() + r * inner);
  Tensor out = make_result(target, std::move(y));
  TensorNode *an = a.node().get(), *on = out.node().get();
  record("expand", {&a}, out, [an, on, inner, reps] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t r = 0; r < reps; ++r)
      for (std::size_t i = 0; i < inner; ++i) ga[i] += go[r * inner + i];
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  Tensor out = make_result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  TensorNode *an = a.node().get(), *on = out.node().get();
  record("reshape", {&a}, out, [an, on] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t i = 0; i < an->data.size(); ++i) ga[i] += go[i];
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) shape_fail("matmul", sa, sb);
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) shape_fail("matmul", sa, sb);
  const bool shared = sb.size() == 2;
  if (!shared && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())))
    shape_fail("matmul", sa, sb);
  const std::size_t batches = a.numel() / (m * k == 0 ? 1 : m * k);

  Shape so(sa.begin(), sa.end() - 1);
  so.push_back(n);
  std::vector<double> y(shape_numel(so));
  if (shared) {
    MapMat(y.data(), batches * m, n).noalias() =
        ConstMapMat(a.data().data(), batches * m, k) * ConstMapMat(b.data().data(), k, n);
  } else {
    for (std::size_t bi = 0; bi < batches; ++bi)
      MapMat(y.data() + bi * m * n, m, n).noalias() =
          ConstMapMat(a.data().data() + bi * m * k, m, k) * ConstMapMat(b.data().data() + bi * k * n, k, n);
  }
  Tensor out = make_result(std::move(so), std::move(y));
  TensorNode *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
  record("matmul", {&a, &b}, out, [an, bn, on, m, k, n, batches, shared] {
    const double* go = out_grad(on);
    if (!go) return;
    double* ga = in_grad(an);
    double* gb = in_grad(bn);
    if (shared) {
      ConstMapMat G(go, batches * m, n);
      if (ga) MapMat(ga, batches * m, k).noalias() += G * ConstMapMat(bn->data.data(), k, n).transpose();
      if (gb) MapMat(gb, k, n).noalias() += ConstMapMat(an->data.data(), batches * m, k).transpose() * G;
      return;
    }
    for (std::size_t bi = 0; bi < batches; ++bi) {
      ConstMapMat G(go + bi * m * n, m, n);
      if (ga)
        MapMat(ga + bi * m * k, m, k).noalias() += G * ConstMapMat(bn->data.data() + bi * k * n, k, n).transpose();
      if (gb)
        MapMat(gb + bi * k * n, k, n).noalias() += ConstMapMat(an->data.data() + bi * m * k, m, k).transpose() * G;
    }
  });
  return out;
}

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1) {
  const Shape& s = a.shape();
  if (axis0 >= s.size() || axis1 >= s.size()) shape_fail("transpose", s, "has no axes " + std::to_string(axis0) + "," + std::to_string(axis1));
  Shape so = s;
  std::swap(so[axis0], so[axis1]);
  const auto in_st = strides_of(s);
  auto src_st = in_st;  // input stride for each output axis
  std::swap(src_st[axis0], src_st[axis1]);
  const std::size_t total = a.numel();
  std::vector<std::size_t> index_map(total);
  std::vector<std::size_t> idx(so.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < so.size(); ++d) src += idx[d] * src_st[d];
    index_map[flat] = src;
    for (std::size_t d = so.size(); d-- > 0;) {
      if (++idx[d] < so[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> y(total);
  for (std::size_t i = 0; i < total; ++i) y[i] = a[index_map[i]];
  Tensor out = make_result(std::move(so), std::move(y));
  TensorNode *an = a.node().get(), *on = out.node().get();
  record("transpose", {&a}, out, [an, on, map = std::move(index_map)] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t i = 0; i < map.size(); ++i) ga[map[i]] += go[i];
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts.front().shape();
  const std::size_t rows = parts.front().numel() / std::max<std::size_t>(last_dim(s0), 1);
  std::vector<std::size_t> widths;
  std::size_t total_width = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) shape_fail("concat", s0, s);
    widths.push_back(s.back());
    total_width += s.back();
  }
  std::vector<double> y(rows * total_width);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto x = parts[p].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.begin() + r * widths[p], widths[p], y.begin() + r * total_width + offset);
    offset += widths[p];
  }
  Shape so = s0;
  so.back() = total_width;
  Tensor out = make_result(std::move(so), std::move(y));

  if (active_tape() != nullptr && std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    std::vector<NodePtr> nodes;
    std::vector<TensorNode*> raw;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      raw.push_back(p.node().get());
    }
    out.set_requires_grad(true);
    TensorNode* on = out.node().get();
    active_tape()->record("concat", std::move(nodes), out.node(), [raw, on, widths, rows, total_width] {
      const double* go = out_grad(on);
      if (!go) return;
      std::size_t off = 0;
      for (std::size_t p = 0; p < raw.size(); ++p) {
        if (double* gp = in_grad(raw[p]))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[p]; ++c) gp[r * widths[p] + c] += go[r * total_width + off + c];
        off += widths[p];
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  const std::size_t width = last_dim(s);
  if (s.empty() || begin >= end || end > width)
    shape_fail("slice", s, "cannot take columns [" + std::to_string(begin) + "," + std::to_string(end) + ")");
  const std::size_t rows = a.numel() / width;
  const std::size_t w = end - begin;
  std::vector<double> y(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.data().begin() + r * width + begin, w, y.begin() + r * w);
  Shape so = s;
  so.back() = w;
  Tensor out = make_result(std::move(so), std::move(y));
  TensorNode *an = a.node().get(), *on = out.node().get();
  record("slice", {&a}, out, [an, on, rows, width, begin, w] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * width + begin + c] += go[r * w + c];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor out = make_result({1}, {total});
  TensorNode *an = a.node().get(), *on = out.node().get();
  record("sum", {&a}, out, [an, on] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t i = 0; i < an->data.size(); ++i) ga[i] += go[0];
  });
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) shape_fail("sum_axis", s, "has no axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t len = s[axis];
  std::vector<double> y(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += a[(o * len + l) * inner + i];
  Shape so;
  for (std::size_t d = 0; d < s.size(); ++d)
    if (d != axis) so.push_back(s[d]);
  if (so.empty()) so.push_back(1);
  Tensor out = make_result(std::move(so), std::move(y));
  TensorNode *an = a.node().get(), *on = out.node().get();
  record("sum_axis", {&a}, out, [an, on, outer, len, inner] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) ga[(o * len + l) * inner + i] += go[o * inner + i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalizations

Tensor softmax(const Tensor& a) {
  const std::size_t width = last_dim(a.shape());
  const std::size_t rows = a.numel() / width;
  std::vector<double> y(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * width;
    double* yr = y.data() + r * width;
    const double mx = *std::max_element(x, x + width);
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += (yr[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < width; ++c) yr[c] /= z;
  }
  Tensor out = make_result(a.shape(), std::move(y));
  TensorNode *an = a.node().get(), *on = out.node().get();
  record("softmax", {&a}, out, [an, on, rows, width] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = on->data.data() + r * width;
      const double* gr = go + r * width;
      double dot = 0.0;
      for (std::size_t c = 0; c < width; ++c) dot += gr[c] * yr[c];
      for (std::size_t c = 0; c < width; ++c) ga[r * width + c] += yr[c] * (gr[c] - dot);
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t width = last_dim(a.shape());
  const std::size_t rows = a.numel() / width;
  std::vector<double> y(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * width;
    const double mx = *std::max_element(x, x + width);
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < width; ++c) y[r * width + c] = x[c] - lse;
  }
  Tensor out = make_result(a.shape(), std::move(y));
  TensorNode *an = a.node().get(), *on = out.node().get();
  record("log_softmax", {&a}, out, [an, on, rows, width] {
    const double* go = out_grad(on);
    double* ga = in_grad(an);
    if (!go || !ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < width; ++c) total += go[r * width + c];
      for (std::size_t c = 0; c < width; ++c)
        ga[r * width + c] += go[r * width + c] - std::exp(on->data[r * width + c]) * total;
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = last_dim(x.shape());
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = x.numel() / d;
  std::vector<double> y(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mu) * inv_std[r];
      y[r * d + c] = xhat[r * d + c] * gamma[c] + beta[c];
    }
  }
  Tensor out = make_result(x.shape(), std::move(y));
  TensorNode *xn = x.node().get(), *gn = gamma.node().get(), *bn = beta.node().get(), *on = out.node().get();
  record("layer_norm", {&x, &gamma, &beta}, out,
         [xn, gn, bn, on, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
           const double* go = out_grad(on);
           if (!go) return;
           double* gx = in_grad(xn);
           double* gg = in_grad(gn);
           double* gb = in_grad(bn);
           const double inv_d = 1.0 / static_cast<double>(d);
           for (std::size_t r = 0; r < rows; ++r) {
             const double* gr = go + r * d;
             const double* hr = xhat.data() + r * d;
             if (gg)
               for (std::size_t c = 0; c < d; ++c) gg[c] += gr[c] * hr[c];
             if (gb)
               for (std::size_t c = 0; c < d; ++c) gb[c] += gr[c];
             if (!gx) continue;
             double s1 = 0.0, s2 = 0.0;
             for (std::size_t c = 0; c < d; ++c) {
               const double dh = gr[c] * gn->data[c];
               s1 += dh;
               s2 += dh * hr[c];
             }
             for (std::size_t c = 0; c < d; ++c) {
               const double dh = gr[c] * gn->data[c];
               gx[r * d + c] += inv_std[r] * (dh - inv_d * s1 - hr[c] * inv_d * s2);
             }
           }
         });
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) shape_fail("embedding_lookup", table.shape(), "is not a [vocab, d] table");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> y(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= vocab)
      throw ShapeError("embedding_lookup: index " + std::to_string(indices[r]) + " out of range for vocab " +
                       std::to_string(vocab));
    std::copy_n(table.data().begin() + indices[r] * d, d, y.begin() + r * d);
  }
  Tensor out = make_result({indices.size(), d}, std::move(y));
  TensorNode *tn = table.node().get(), *on = out.node().get();
  record("embedding_lookup", {&table}, out, [tn, on, d, idx = std::vector<std::size_t>(indices.begin(), indices.end())] {
    const double* go = out_grad(on);
    double* gt = in_grad(tn);
    if (!go || !gt) return;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) gt[idx[r] * d + c] += go[r * d + c];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Pairwise

namespace {

template <bool kMul>
Tensor outer_op(std::string_view op, const Tensor& a, const Tensor& c) {
  if (a.rank() != 3 || a.shape() != c.shape()) shape_fail(op, a.shape(), c.shape());
  const std::size_t B = a.dim(0), n = a.dim(1), d = a.dim(2);
  std::vector<double> y(B * n * n * d);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double* ai = a.data().data() + (b * n + i) * d;
        const double* cj = c.data().data() + (b * n + j) * d;
        double* yr = y.data() + ((b * n + i) * n + j) * d;
        for (std::size_t k = 0; k < d; ++k) yr[k] = kMul ? ai[k] * cj[k] : ai[k] + cj[k];
      }
  Tensor out = make_result({B, n, n, d}, std::move(y));
  TensorNode *an = a.node().get(), *cn = c.node().get(), *on = out.node().get();
  record(op, {&a, &c}, out, [an, cn, on, B, n, d] {
    const double* go = out_grad(on);
    if (!go) return;
    double* ga = in_grad(an);
    double* gc = in_grad(cn);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double* gr = go + ((b * n + i) * n + j) * d;
          const std::size_t oi = (b * n + i) * d, oj = (b * n + j) * d;
          for (std::size_t k = 0; k < d; ++k) {
            if (ga) ga[oi + k] += kMul ? gr[k] * cn->data[oj + k] : gr[k];
            if (gc) gc[oj + k] += kMul ? gr[k] * an->data[oi + k] : gr[k];
          }
        }
  });
  return out;
}

}  // namespace

Tensor outer_add(const Tensor& a, const Tensor& c) { return outer_op<false>("outer_add", a, c); }
Tensor outer_mul(const Tensor& a, const Tensor& c) { return outer_op<true>("outer_mul", a, c); }

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const Tensor& bias,
                            const Tensor& key_mask) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) shape_fail("attention", q.shape(), k.shape());
  const std::size_t B = q.dim(0), n = q.dim(1), width = q.dim(2);
  if (heads == 0 || width % heads != 0) shape_fail("attention", q.shape(), "not divisible into " + std::to_string(heads) + " heads");
  if (bias.defined() && bias.shape() != Shape{B, n, n, heads}) shape_fail("attention bias", q.shape(), bias.shape());
  if (key_mask.defined() && key_mask.shape() != Shape{B, n}) shape_fail("attention mask", q.shape(), key_mask.shape());
  const std::size_t dh = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> probs(B * heads * n * n, 0.0);
  std::vector<double> y(q.numel(), 0.0);
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();
  std::vector<double> logits(n);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        if (key_mask.defined() && key_mask[b * n + i] == 0.0) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (key_mask.defined() && key_mask[b * n + j] == 0.0) continue;
          double s = 0.0;
          const double* qi = Q + (b * n + i) * width + h * dh;
          const double* kj = K + (b * n + j) * width + h * dh;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= inv_sqrt;
          if (bias.defined()) s += bias[((b * n + i) * n + j) * heads + h];
          logits[j] = s;
          mx = std::max(mx, s);
        }
        double* p = probs.data() + ((b * heads + h) * n + i) * n;
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (key_mask.defined() && key_mask[b * n + j] == 0.0) continue;
          z += (p[j] = std::exp(logits[j] - mx));
        }
        double* yi = y.data() + (b * n + i) * width + h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          if (p[j] == 0.0) continue;
          p[j] /= z;
          const double* vj = V + (b * n + j) * width + h * dh;
          for (std::size_t c = 0; c < dh; ++c) yi[c] += p[j] * vj[c];
        }
      }
    }
  }
  Tensor out = make_result(q.shape(), std::move(y));
  TensorNode *qn = q.node().get(), *kn = k.node().get(), *vn = v.node().get(), *on = out.node().get();
  TensorNode* bn = bias.defined() ? bias.node().get() : nullptr;
  record("scaled_dot_attention", {&q, &k, &v, &bias}, out,
         [qn, kn, vn, bn, on, B, n, width, heads, dh, inv_sqrt, probs = std::move(probs)] {
           const double* go = out_grad(on);
           if (!go) return;
           double* gq = in_grad(qn);
           double* gk = in_grad(kn);
           double* gv = in_grad(vn);
           double* gbias = bn ? in_grad(bn) : nullptr;
           std::vector<double> dp(n);
           for (std::size_t b = 0; b < B; ++b)
             for (std::size_t h = 0; h < heads; ++h)
               for (std::size_t i = 0; i < n; ++i) {
                 const double* p = probs.data() + ((b * heads + h) * n + i) * n;
                 const double* gi = go + (b * n + i) * width + h * dh;
                 double dot = 0.0;
                 for (std::size_t j = 0; j < n; ++j) {
                   dp[j] = 0.0;
                   if (p[j] == 0.0) continue;
                   const double* vj = vn->data.data() + (b * n + j) * width + h * dh;
                   for (std::size_t c = 0; c < dh; ++c) dp[j] += gi[c] * vj[c];
                   dot += p[j] * dp[j];
                   if (gv) {
                     double* gvj = gv + (b * n + j) * width + h * dh;
                     for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * gi[c];
                   }
                 }
                 for (std::size_t j = 0; j < n; ++j) {
                   if (p[j] == 0.0) continue;
                   const double ds = p[j] * (dp[j] - dot);
                   if (gbias) gbias[((b * n + i) * n + j) * heads + h] += ds;
                   const std::size_t oi = (b * n + i) * width + h * dh, oj = (b * n + j) * width + h * dh;
                   if (gq)
                     for (std::size_t c = 0; c < dh; ++c) gq[oi + c] += ds * inv_sqrt * kn->data[oj + c];
                   if (gk)
                     for (std::size_t c = 0; c < dh; ++c) gk[oj + c] += ds * inv_sqrt * qn->data[oi + c];
                 }
               }
         });
  return out;
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, bool hard, Rng& rng) {
  if (!(temperature > 0.0)) throw ConfigError("gumbel_softmax: temperature must be positive");
  for (double v : logits.data())
    if (!std::isfinite(v)) throw NumericError("gumbel_softmax: non-finite logits");
  const std::size_t width = last_dim(logits.shape());
  const std::size_t rows = logits.numel() / width;
  std::vector<double> soft(logits.numel());
  std::vector<double> y(logits.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < width; ++c) {
      double u = uniform01(rng);
      u = std::clamp(u, 1e-300, 1.0 - 1e-16);
      const double g = -std::log(-std::log(u));
      const double s = (logits[r * width + c] + g) / temperature;
      soft[r * width + c] = s;
      if (s > mx) {
        mx = s;
        arg = c;
      }
    }
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += (soft[r * width + c] = std::exp(soft[r * width + c] - mx));
    for (std::size_t c = 0; c < width; ++c) soft[r * width + c] /= z;
    if (hard) {
      y[r * width + arg] = 1.0;
    } else {
      std::copy_n(soft.begin() + r * width, width, y.begin() + r * width);
    }
  }
  Tensor out = make_result(logits.shape(), std::move(y));
  TensorNode *ln = logits.node().get(), *on = out.node().get();
  record("gumbel_softmax", {&logits}, out, [ln, on, rows, width, temperature, soft = std::move(soft)] {
    const double* go = out_grad(on);
    double* gl = in_grad(ln);
    if (!go || !gl) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* sr = soft.data() + r * width;
      const double* gr = go + r * width;
      double dot = 0.0;
      for (std::size_t c = 0; c < width; ++c) dot += gr[c] * sr[c];
      for (std::size_t c = 0; c < width; ++c) gl[r * width + c] += sr[c] * (gr[c] - dot) / temperature;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checks

namespace {

double rel_err(double ad, double fd) {
  return std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("grad_check: non-finite ") + what);
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor param = Tensor::parameter(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(param);
    require_finite(loss.item(), "loss");
    tape.backward(loss);
  }
  std::vector<double> analytic(param.numel(), 0.0);
  if (!param.grad().empty()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());

  double worst = 0.0;
  auto values = param.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + eps;
    const double up = f(param).item();
    values[i] = orig - eps;
    const double down = f(param).item();
    values[i] = orig;
    require_finite(up, "loss");
    require_finite(down, "loss");
    require_finite(analytic[i], "gradient");
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& loss, std::span<Tensor> params, double eps,
                         std::size_t max_coords_per_param) {
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor l = loss();
    require_finite(l.item(), "loss");
    tape.backward(l);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    std::vector<double> g(p.numel(), 0.0);
    if (!p.grad().empty()) std::copy(p.grad().begin(), p.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    const std::size_t count = std::min(max_coords_per_param, values.size());
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t i = count == values.size() ? s : (s * (values.size() - 1)) / std::max<std::size_t>(count - 1, 1);
      const double orig = values[i];
      values[i] = orig + eps;
      const double up = loss().item();
      values[i] = orig - eps;
      const double down = loss().item();
      values[i] = orig;
      require_finite(up, "loss");
      require_finite(down, "loss");
      worst = std::max(worst, rel_err(analytic[pi][i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace vgd
