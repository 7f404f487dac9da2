// Minimal define-by-run reverse-mode automatic differentiation over dense
// float64 tensors.
//
// A Graph is rebuilt for every forward pass. Parameters are bound by pointer,
// so backward() accumulates straight into the caller's Tensor::grad buffers.

#ifndef METASL_AUTODIFF_HPP
#define METASL_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace metasl::ad {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<RowMatrix> as_matrix(double* p, std::size_t rows, std::size_t cols)
{
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

inline Eigen::Map<const RowMatrix> as_matrix(const double* p, std::size_t rows, std::size_t cols)
{
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

// Eigen picks scalar or packet code paths from pointer alignment, so buffers
// get a fixed alignment to keep results independent of heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

}  // namespace detail

using Buffer = std::vector<double, detail::AlignedAllocator<double>>;
using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape)
{
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Raised when an operation receives incompatible tensor shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill), requires_grad_(requires_grad)
  {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(data.begin(), data.end()), requires_grad_(requires_grad)
  {
    check_dims();
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v, bool requires_grad = false)
  {
    return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const
  {
    if (data_.size() != 1)
      throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<const double> grad() const noexcept { return grad_; }

  /// Gradient buffer, zero-filled on first access.
  Buffer& grad_buffer()
  {
    if (grad_.size() != data_.size())
      grad_.assign(data_.size(), 0.0);
    return grad_;
  }

  void zero_grad()
  {
    if (!grad_.empty())
      std::fill(grad_.begin(), grad_.end(), 0.0);
  }
  void clear_grad() { grad_.clear(); }

 private:
  void check_dims() const
  {
    for (auto d : shape_)
      if (d == 0)
        throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  Buffer data_;
  bool requires_grad_ = false;
  Buffer grad_;
};

enum class OpKind : std::uint8_t {
  Param,
  Constant,
  MatMul,
  Add,
  AddBias,
  Sub,
  Mul,
  Scale,
  Tanh,
  Sigmoid,
  Relu,
  Exp,
  Log,
  Softmax,
  LogSoftmax,
  Concat,
  Slice,
  ConcatRows,
  SliceRows,
  Sum,
  Mean,
  Gather,
  Reshape,
  Transpose,
  RowScale,
  SumAxis0,
};

inline const char* op_name(OpKind kind)
{
  switch (kind) {
    case OpKind::Param: return "param";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Gather: return "gather";
    case OpKind::Reshape: return "reshape";
    case OpKind::Transpose: return "transpose";
    case OpKind::RowScale: return "row_scale";
    case OpKind::SumAxis0: return "sum_axis0";
  }
  return "unknown";
}

/// Handle to a node of a Graph.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Non-tensor operands: Scale factor, slice bounds, reshape target, gather ids.
struct OpAttrs {
  double scalar = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  Shape shape;
  std::vector<std::size_t> index;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Binds an externally owned tensor. Its gradient lands in t.grad_buffer()
  /// when t.requires_grad() is set. t must outlive the graph.
  Var param(Tensor& t)
  {
    Node n;
    n.kind = OpKind::Param;
    n.bound = &t;
    n.sink = &t;
    n.needs_grad = t.requires_grad();
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Binds a tensor for reading only; no gradient flows back to it.
  Var bind_const(const Tensor& t)
  {
    Node n;
    n.kind = OpKind::Param;
    n.bound = &t;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var constant(Tensor t)
  {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var forward(OpKind kind, std::span<const Var> inputs, OpAttrs attrs = {})
  {
    if (kind == OpKind::Param || kind == OpKind::Constant)
      throw std::invalid_argument("forward() cannot create leaf nodes; use param() or constant()");
    std::vector<const Tensor*> in;
    in.reserve(inputs.size());
    Node n;
    n.kind = kind;
    n.inputs.reserve(inputs.size());
    for (auto v : inputs) {
      if (v.id >= nodes_.size())
        throw std::invalid_argument(std::string(op_name(kind)) + ": input does not belong to this graph");
      in.push_back(&value(v));
      n.inputs.push_back(v.id);
      n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    }
    n.value = compute(kind, in, attrs);
    n.attrs = std::move(attrs);
    for (double x : n.value.data())
      if (!std::isfinite(x))
        throw std::domain_error(std::string(op_name(kind)) + ": produced a non-finite value");
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var forward(OpKind kind, std::initializer_list<Var> inputs, OpAttrs attrs = {})
  {
    return forward(kind, std::span<const Var>(inputs.begin(), inputs.size()), std::move(attrs));
  }

  Var matmul(Var a, Var b) { return forward(OpKind::MatMul, {a, b}); }
  Var add(Var a, Var b) { return forward(OpKind::Add, {a, b}); }
  Var add_bias(Var x, Var b) { return forward(OpKind::AddBias, {x, b}); }
  Var sub(Var a, Var b) { return forward(OpKind::Sub, {a, b}); }
  Var mul(Var a, Var b) { return forward(OpKind::Mul, {a, b}); }
  Var scale(Var a, double s) { return forward(OpKind::Scale, {a}, OpAttrs{.scalar = s}); }
  Var tanh(Var a) { return forward(OpKind::Tanh, {a}); }
  Var sigmoid(Var a) { return forward(OpKind::Sigmoid, {a}); }
  Var relu(Var a) { return forward(OpKind::Relu, {a}); }
  Var exp(Var a) { return forward(OpKind::Exp, {a}); }
  Var log(Var a) { return forward(OpKind::Log, {a}); }
  Var softmax(Var a) { return forward(OpKind::Softmax, {a}); }
  Var log_softmax(Var a) { return forward(OpKind::LogSoftmax, {a}); }
  Var concat(std::span<const Var> parts) { return forward(OpKind::Concat, parts); }
  Var concat(std::initializer_list<Var> parts) { return forward(OpKind::Concat, parts); }
  Var concat_rows(std::span<const Var> parts) { return forward(OpKind::ConcatRows, parts); }
  Var slice(Var a, std::size_t begin, std::size_t end)
  {
    return forward(OpKind::Slice, {a}, OpAttrs{.begin = begin, .end = end});
  }
  Var slice_rows(Var a, std::size_t begin, std::size_t end)
  {
    return forward(OpKind::SliceRows, {a}, OpAttrs{.begin = begin, .end = end});
  }
  Var sum(Var a) { return forward(OpKind::Sum, {a}); }
  Var mean(Var a) { return forward(OpKind::Mean, {a}); }
  Var gather(Var table, std::vector<std::size_t> rows)
  {
    return forward(OpKind::Gather, {table}, OpAttrs{.index = std::move(rows)});
  }
  Var reshape(Var a, Shape shape) { return forward(OpKind::Reshape, {a}, OpAttrs{.shape = std::move(shape)}); }
  Var transpose(Var a) { return forward(OpKind::Transpose, {a}); }
  Var row_scale(Var x, Var s) { return forward(OpKind::RowScale, {x, s}); }
  Var sum_axis0(Var a) { return forward(OpKind::SumAxis0, {a}); }

  const Tensor& value(Var v) const
  {
    const Node& n = nodes_.at(v.id);
    return n.bound ? *n.bound : n.value;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::span<const std::size_t> inputs(Var v) const { return nodes_.at(v.id).inputs; }

  /// Reverse sweep from a scalar loss. Each node is visited once, in reverse
  /// creation order, which is a valid reverse topological order.
  void backward(Var loss)
  {
    if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size())
      throw std::logic_error("backward: no forward pass recorded for this loss");
    if (backward_done_)
      throw std::logic_error("backward: graph already consumed");
    if (value(loss).size() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
    backward_done_ = true;

    std::vector<Buffer> grads(nodes_.size());
    grads[loss.id].assign(1, 1.0);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (grads[k].empty() || !n.needs_grad)
        continue;
      if (n.kind == OpKind::Param) {
        auto& g = n.sink->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += grads[k][i];
      } else if (n.kind != OpKind::Constant) {
        propagate(n, grads[k], grads);
      }
      grads[k].clear();
      grads[k].shrink_to_fit();
    }
  }

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<std::size_t> inputs;
    Tensor value;
    const Tensor* bound = nullptr;
    Tensor* sink = nullptr;
    OpAttrs attrs;
    bool needs_grad = false;
  };

  [[noreturn]] static void shape_fail(OpKind kind, const std::vector<const Tensor*>& in, const std::string& why)
  {
    std::string msg = std::string(op_name(kind)) + ": " + why + " (shapes";
    for (auto* t : in)
      msg += " " + shape_str(t->shape());
    throw ShapeError(msg + ")");
  }

  static void want_arity(OpKind kind, const std::vector<const Tensor*>& in, std::size_t n)
  {
    if (in.size() != n)
      shape_fail(kind, in, "expected " + std::to_string(n) + " inputs");
  }

  static void want_rank2(OpKind kind, const std::vector<const Tensor*>& in, const Tensor& t)
  {
    if (t.rank() != 2)
      shape_fail(kind, in, "expected a matrix");
  }

  static Tensor compute(OpKind kind, const std::vector<const Tensor*>& in, const OpAttrs& at)
  {
    switch (kind) {
      case OpKind::MatMul: {
        want_arity(kind, in, 2);
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
          shape_fail(kind, in, "inner dimensions disagree");
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        Tensor out({m, n});
        detail::as_matrix(out.data().data(), m, n).noalias() =
            detail::as_matrix(a.data().data(), m, k) * detail::as_matrix(b.data().data(), k, n);
        return out;
      }
      case OpKind::Add:
      case OpKind::Sub:
      case OpKind::Mul: {
        want_arity(kind, in, 2);
        if (in[0]->shape() != in[1]->shape())
          shape_fail(kind, in, "shapes must match");
        Tensor out(in[0]->shape());
        auto a = in[0]->data();
        auto b = in[1]->data();
        auto o = out.data();
        if (kind == OpKind::Add)
          for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
        else if (kind == OpKind::Sub)
          for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
        else
          for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
        return out;
      }
      case OpKind::AddBias: {
        want_arity(kind, in, 2);
        const Tensor& x = *in[0];
        const Tensor& b = *in[1];
        want_rank2(kind, in, x);
        if (b.size() != x.dim(1) || (b.rank() == 2 && b.dim(0) != 1) || b.rank() > 2)
          shape_fail(kind, in, "bias must be a vector over the trailing axis");
        Tensor out(x.shape());
        const std::size_t m = x.dim(0), n = x.dim(1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = x[i * n + j] + b[j];
        return out;
      }
      case OpKind::Scale: {
        want_arity(kind, in, 1);
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = (*in[0])[i] * at.scalar;
        return out;
      }
      case OpKind::Tanh:
      case OpKind::Sigmoid:
      case OpKind::Relu:
      case OpKind::Exp:
      case OpKind::Log: {
        want_arity(kind, in, 1);
        Tensor out(in[0]->shape());
        auto x = in[0]->data();
        auto o = out.data();
        // Vectorized exp; tanh goes through exp(2x) as well.
        Eigen::Map<const Eigen::ArrayXd> xa(x.data(), static_cast<Eigen::Index>(x.size()));
        Eigen::Map<Eigen::ArrayXd> oa(o.data(), static_cast<Eigen::Index>(o.size()));
        switch (kind) {
          case OpKind::Tanh: oa = 1.0 - 2.0 / ((2.0 * xa).exp() + 1.0); break;
          case OpKind::Sigmoid: oa = 1.0 / (1.0 + (-xa).exp()); break;
          case OpKind::Relu: oa = xa.max(0.0); break;
          case OpKind::Exp: oa = xa.exp(); break;
          default:
            for (std::size_t i = 0; i < o.size(); ++i) {
              if (!(x[i] > 0.0))
                throw std::domain_error("log: non-positive input");
              o[i] = std::log(x[i]);
            }
        }
        return out;
      }
      case OpKind::Softmax:
      case OpKind::LogSoftmax: {
        want_arity(kind, in, 1);
        const Tensor& x = *in[0];
        if (x.rank() < 1 || x.rank() > 2)
          shape_fail(kind, in, "expected a vector or a matrix");
        const std::size_t n = x.shape().back();
        const std::size_t m = x.size() / n;
        Tensor out(x.shape());
        for (std::size_t i = 0; i < m; ++i) {
          const double* r = x.data().data() + i * n;
          double* o = out.data().data() + i * n;
          const double mx = *std::max_element(r, r + n);
          double z = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            z += std::exp(r[j] - mx);
          if (kind == OpKind::Softmax) {
            for (std::size_t j = 0; j < n; ++j)
              o[j] = std::exp(r[j] - mx) / z;
          } else {
            const double lz = mx + std::log(z);
            for (std::size_t j = 0; j < n; ++j)
              o[j] = r[j] - lz;
          }
        }
        return out;
      }
      case OpKind::Concat: {
        if (in.empty())
          shape_fail(kind, in, "needs at least one input");
        const std::size_t m = in[0]->rank() == 2 ? in[0]->dim(0) : 1;
        std::size_t n = 0;
        for (auto* t : in) {
          if (t->rank() != 2 || t->dim(0) != m)
            shape_fail(kind, in, "row counts disagree");
          n += t->dim(1);
        }
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i) {
          std::size_t off = 0;
          for (auto* t : in) {
            const std::size_t w = t->dim(1);
            std::copy_n(t->data().data() + i * w, w, out.data().data() + i * n + off);
            off += w;
          }
        }
        return out;
      }
      case OpKind::ConcatRows: {
        if (in.empty())
          shape_fail(kind, in, "needs at least one input");
        std::size_t m = 0;
        const std::size_t n = in[0]->rank() == 2 ? in[0]->dim(1) : 0;
        for (auto* t : in) {
          if (t->rank() != 2 || t->dim(1) != n)
            shape_fail(kind, in, "column counts disagree");
          m += t->dim(0);
        }
        Tensor out({m, n});
        std::size_t off = 0;
        for (auto* t : in) {
          std::copy(t->data().begin(), t->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
          off += t->size();
        }
        return out;
      }
      case OpKind::Slice: {
        want_arity(kind, in, 1);
        const Tensor& x = *in[0];
        want_rank2(kind, in, x);
        if (at.begin >= at.end || at.end > x.dim(1))
          shape_fail(kind, in, "column range [" + std::to_string(at.begin) + "," + std::to_string(at.end) + ") out of bounds");
        const std::size_t m = x.dim(0), n = x.dim(1), w = at.end - at.begin;
        Tensor out({m, w});
        for (std::size_t i = 0; i < m; ++i)
          std::copy_n(x.data().data() + i * n + at.begin, w, out.data().data() + i * w);
        return out;
      }
      case OpKind::SliceRows: {
        want_arity(kind, in, 1);
        const Tensor& x = *in[0];
        want_rank2(kind, in, x);
        if (at.begin >= at.end || at.end > x.dim(0))
          shape_fail(kind, in, "row range [" + std::to_string(at.begin) + "," + std::to_string(at.end) + ") out of bounds");
        const std::size_t n = x.dim(1);
        Tensor out({at.end - at.begin, n});
        std::copy_n(x.data().data() + at.begin * n, out.size(), out.data().data());
        return out;
      }
      case OpKind::Sum:
      case OpKind::Mean: {
        want_arity(kind, in, 1);
        double s = 0.0;
        for (double v : in[0]->data())
          s += v;
        if (kind == OpKind::Mean)
          s /= static_cast<double>(in[0]->size());
        return Tensor::scalar(s);
      }
      case OpKind::Gather: {
        want_arity(kind, in, 1);
        const Tensor& table = *in[0];
        want_rank2(kind, in, table);
        if (at.index.empty())
          shape_fail(kind, in, "empty index list");
        const std::size_t d = table.dim(1);
        Tensor out({at.index.size(), d});
        for (std::size_t r = 0; r < at.index.size(); ++r) {
          if (at.index[r] >= table.dim(0))
            shape_fail(kind, in, "row id " + std::to_string(at.index[r]) + " out of range");
          std::copy_n(table.data().data() + at.index[r] * d, d, out.data().data() + r * d);
        }
        return out;
      }
      case OpKind::Reshape: {
        want_arity(kind, in, 1);
        if (shape_size(at.shape) != in[0]->size())
          shape_fail(kind, in, "cannot reshape to " + shape_str(at.shape));
        return Tensor(at.shape, std::vector<double>(in[0]->data().begin(), in[0]->data().end()));
      }
      case OpKind::Transpose: {
        want_arity(kind, in, 1);
        const Tensor& x = *in[0];
        want_rank2(kind, in, x);
        const std::size_t m = x.dim(0), n = x.dim(1);
        Tensor out({n, m});
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            out[j * m + i] = x[i * n + j];
        return out;
      }
      case OpKind::RowScale: {
        want_arity(kind, in, 2);
        const Tensor& x = *in[0];
        const Tensor& s = *in[1];
        want_rank2(kind, in, x);
        if (s.size() != x.dim(0))
          shape_fail(kind, in, "one scale per row required");
        const std::size_t m = x.dim(0), n = x.dim(1);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = x[i * n + j] * s[i];
        return out;
      }
      case OpKind::SumAxis0: {
        want_arity(kind, in, 1);
        const Tensor& x = *in[0];
        want_rank2(kind, in, x);
        const std::size_t m = x.dim(0), n = x.dim(1);
        Tensor out({n});
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            out[j] += x[i * n + j];
        return out;
      }
      case OpKind::Param:
      case OpKind::Constant:
        break;
    }
    throw std::invalid_argument(std::string("unsupported op ") + op_name(kind));
  }

  Buffer& grad_of(std::vector<Buffer>& grads, std::size_t id) const
  {
    auto& g = grads[id];
    if (g.empty())
      g.assign(value(Var{id}).size(), 0.0);
    return g;
  }

  void propagate(const Node& n, const Buffer& gout, std::vector<Buffer>& grads)
  {
    auto input_needs = [&](std::size_t slot) { return nodes_[n.inputs[slot]].needs_grad; };
    auto in = [&](std::size_t slot) -> const Tensor& { return value(Var{n.inputs[slot]}); };
    const Tensor& y = n.value;

    switch (n.kind) {
      case OpKind::MatMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
        const auto G = detail::as_matrix(gout.data(), m, nn);
        if (input_needs(0))
          detail::as_matrix(grad_of(grads, n.inputs[0]).data(), m, k).noalias() +=
              G * detail::as_matrix(b.data().data(), k, nn).transpose();
        if (input_needs(1))
          detail::as_matrix(grad_of(grads, n.inputs[1]).data(), k, nn).noalias() +=
              detail::as_matrix(a.data().data(), m, k).transpose() * G;
        break;
      }
      case OpKind::Add:
      case OpKind::Sub: {
        if (input_needs(0)) {
          auto& g = grad_of(grads, n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        }
        if (input_needs(1)) {
          auto& g = grad_of(grads, n.inputs[1]);
          const double sign = n.kind == OpKind::Add ? 1.0 : -1.0;
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * gout[i];
        }
        break;
      }
      case OpKind::Mul: {
        if (input_needs(0)) {
          auto& g = grad_of(grads, n.inputs[0]);
          const Tensor& b = in(1);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * b[i];
        }
        if (input_needs(1)) {
          auto& g = grad_of(grads, n.inputs[1]);
          const Tensor& a = in(0);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * a[i];
        }
        break;
      }
      case OpKind::AddBias: {
        const std::size_t m = y.dim(0), nn = y.dim(1);
        if (input_needs(0)) {
          auto& g = grad_of(grads, n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        }
        if (input_needs(1)) {
          auto& g = grad_of(grads, n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < nn; ++j)
              g[j] += gout[i * nn + j];
        }
        break;
      }
      case OpKind::Scale: {
        auto& g = grad_of(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * n.attrs.scalar;
        break;
      }
      case OpKind::Tanh: {
        auto& g = grad_of(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case OpKind::Sigmoid: {
        auto& g = grad_of(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case OpKind::Relu: {
        auto& g = grad_of(grads, n.inputs[0]);
        const Tensor& x = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += x[i] > 0.0 ? gout[i] : 0.0;
        break;
      }
      case OpKind::Exp: {
        auto& g = grad_of(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * y[i];
        break;
      }
      case OpKind::Log: {
        auto& g = grad_of(grads, n.inputs[0]);
        const Tensor& x = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] / x[i];
        break;
      }
      case OpKind::Softmax:
      case OpKind::LogSoftmax: {
        auto& g = grad_of(grads, n.inputs[0]);
        const std::size_t nn = y.shape().back();
        const std::size_t m = y.size() / nn;
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t o = i * nn;
          if (n.kind == OpKind::Softmax) {
            double dot = 0.0;
            for (std::size_t j = 0; j < nn; ++j) dot += gout[o + j] * y[o + j];
            for (std::size_t j = 0; j < nn; ++j) g[o + j] += y[o + j] * (gout[o + j] - dot);
          } else {
            double gs = 0.0;
            for (std::size_t j = 0; j < nn; ++j) gs += gout[o + j];
            for (std::size_t j = 0; j < nn; ++j) g[o + j] += gout[o + j] - std::exp(y[o + j]) * gs;
          }
        }
        break;
      }
      case OpKind::Concat: {
        const std::size_t m = y.dim(0), nn = y.dim(1);
        std::size_t off = 0;
        for (std::size_t s = 0; s < n.inputs.size(); ++s) {
          const std::size_t w = in(s).dim(1);
          if (input_needs(s)) {
            auto& g = grad_of(grads, n.inputs[s]);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < w; ++j)
                g[i * w + j] += gout[i * nn + off + j];
          }
          off += w;
        }
        break;
      }
      case OpKind::ConcatRows: {
        std::size_t off = 0;
        for (std::size_t s = 0; s < n.inputs.size(); ++s) {
          const std::size_t len = in(s).size();
          if (input_needs(s)) {
            auto& g = grad_of(grads, n.inputs[s]);
            for (std::size_t i = 0; i < len; ++i) g[i] += gout[off + i];
          }
          off += len;
        }
        break;
      }
      case OpKind::Slice: {
        auto& g = grad_of(grads, n.inputs[0]);
        const std::size_t m = y.dim(0), w = y.dim(1), nn = in(0).dim(1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j)
            g[i * nn + n.attrs.begin + j] += gout[i * w + j];
        break;
      }
      case OpKind::SliceRows: {
        auto& g = grad_of(grads, n.inputs[0]);
        const std::size_t off = n.attrs.begin * y.dim(1);
        for (std::size_t i = 0; i < y.size(); ++i) g[off + i] += gout[i];
        break;
      }
      case OpKind::Sum:
      case OpKind::Mean: {
        auto& g = grad_of(grads, n.inputs[0]);
        const double s = n.kind == OpKind::Sum ? gout[0] : gout[0] / static_cast<double>(g.size());
        for (double& v : g) v += s;
        break;
      }
      case OpKind::Gather: {
        auto& g = grad_of(grads, n.inputs[0]);
        const std::size_t d = y.dim(1);
        for (std::size_t r = 0; r < n.attrs.index.size(); ++r) {
          double* dst = g.data() + n.attrs.index[r] * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += gout[r * d + j];
        }
        break;
      }
      case OpKind::Reshape: {
        auto& g = grad_of(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        break;
      }
      case OpKind::Transpose: {
        auto& g = grad_of(grads, n.inputs[0]);
        const std::size_t m = in(0).dim(0), nn = in(0).dim(1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j)
            g[i * nn + j] += gout[j * m + i];
        break;
      }
      case OpKind::RowScale: {
        const Tensor& x = in(0);
        const Tensor& s = in(1);
        const std::size_t m = x.dim(0), nn = x.dim(1);
        if (input_needs(0)) {
          auto& g = grad_of(grads, n.inputs[0]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < nn; ++j)
              g[i * nn + j] += gout[i * nn + j] * s[i];
        }
        if (input_needs(1)) {
          auto& g = grad_of(grads, n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nn; ++j) acc += gout[i * nn + j] * x[i * nn + j];
            g[i] += acc;
          }
        }
        break;
      }
      case OpKind::SumAxis0: {
        auto& g = grad_of(grads, n.inputs[0]);
        const std::size_t m = in(0).dim(0), nn = in(0).dim(1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j)
            g[i * nn + j] += gout[j];
        break;
      }
      case OpKind::Param:
      case OpKind::Constant:
        break;
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace metasl::ad

#endif  // METASL_AUTODIFF_HPP
