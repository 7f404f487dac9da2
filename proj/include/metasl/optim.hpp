// Flat, ordered parameter collections and the two optimizers used by the
// trainer: stateless SGD for the meta update, Adam for the outer step.

#ifndef METASL_OPTIM_HPP
#define METASL_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "metasl/autodiff.hpp"

namespace metasl {

using ad::Shape;
using ad::Tensor;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// One gradient vector per parameter tensor, aligned by position.
using GradientSet = std::vector<std::vector<double>>;

/// Ordered list of named parameter tensors. The concatenation of all entries,
/// in order, is the flat parameter vector.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor t)
  {
    for (const auto& e : entries_)
      if (e.name == name)
        throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    entries_.push_back({std::move(name), std::move(t)});
    return entries_.back().tensor;
  }

  std::size_t groups() const noexcept { return entries_.size(); }

  std::size_t count() const noexcept
  {
    std::size_t n = 0;
    for (const auto& e : entries_)
      n += e.tensor.size();
    return n;
  }

  NamedTensor& entry(std::size_t i) { return entries_.at(i); }
  const NamedTensor& entry(std::size_t i) const { return entries_.at(i); }

  Tensor& operator[](const std::string& name)
  {
    for (auto& e : entries_)
      if (e.name == name)
        return e.tensor;
    throw std::out_of_range("no parameter named " + name);
  }
  const Tensor& operator[](const std::string& name) const { return const_cast<ParamSet&>(*this)[name]; }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  std::vector<double> flatten() const
  {
    std::vector<double> flat;
    flat.reserve(count());
    for (const auto& e : entries_)
      flat.insert(flat.end(), e.tensor.data().begin(), e.tensor.data().end());
    return flat;
  }

  void assign_flat(std::span<const double> flat)
  {
    if (flat.size() != count())
      throw std::invalid_argument("assign_flat: expected " + std::to_string(count()) + " values, got " +
                                  std::to_string(flat.size()));
    std::size_t off = 0;
    for (auto& e : entries_) {
      auto d = e.tensor.data();
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = flat[off + i];
      off += d.size();
    }
  }

  void zero_grad()
  {
    for (auto& e : entries_)
      e.tensor.grad_buffer().assign(e.tensor.size(), 0.0);
  }

  /// Snapshot of the current gradients, zero where none was accumulated.
  GradientSet gradients() const
  {
    GradientSet g;
    g.reserve(entries_.size());
    for (const auto& e : entries_) {
      if (e.tensor.has_grad())
        g.emplace_back(e.tensor.grad().begin(), e.tensor.grad().end());
      else
        g.emplace_back(e.tensor.size(), 0.0);
    }
    return g;
  }

  /// Same names and shapes, in the same order.
  bool same_layout(const ParamSet& other) const
  {
    if (other.entries_.size() != entries_.size())
      return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != other.entries_[i].name || entries_[i].tensor.shape() != other.entries_[i].tensor.shape())
        return false;
    return true;
  }

 private:
  std::vector<NamedTensor> entries_;
};

inline std::vector<double> flatten(const GradientSet& g)
{
  std::vector<double> flat;
  for (const auto& v : g)
    flat.insert(flat.end(), v.begin(), v.end());
  return flat;
}

inline double l2_norm(std::span<const double> v)
{
  double s = 0.0;
  for (double x : v)
    s += x * x;
  return std::sqrt(s);
}

enum class OptimizerKind { SGD, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SGD;
  double learning_rate = 0.1;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  GradientSet m;
  GradientSet v;

  static OptimizerState sgd(double lr) { return OptimizerState{.kind = OptimizerKind::SGD, .learning_rate = lr}; }
  static OptimizerState adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
  {
    return OptimizerState{.kind = OptimizerKind::Adam, .learning_rate = lr, .b1 = b1, .b2 = b2, .eps = eps};
  }
};

inline void check_aligned(const ParamSet& params, const GradientSet& grads)
{
  if (grads.size() != params.groups())
    throw std::invalid_argument("apply_update: " + std::to_string(grads.size()) + " gradient groups for " +
                                std::to_string(params.groups()) + " parameter groups");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (grads[i].size() != params.entry(i).tensor.size())
      throw std::invalid_argument("apply_update: gradient for '" + params.entry(i).name + "' has " +
                                  std::to_string(grads[i].size()) + " values, parameter has " +
                                  std::to_string(params.entry(i).tensor.size()));
}

/// SGD: theta -= lr * g. Adam: bias-corrected first/second moment update.
inline void apply_update(ParamSet& params, const GradientSet& grads, OptimizerState& state)
{
  check_aligned(params, grads);
  if (state.kind == OptimizerKind::SGD) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto d = params.entry(i).tensor.data();
      for (std::size_t j = 0; j < d.size(); ++j)
        d[j] -= state.learning_rate * grads[i][j];
    }
    return;
  }

  if (state.m.empty()) {
    for (const auto& g : grads) {
      state.m.emplace_back(g.size(), 0.0);
      state.v.emplace_back(g.size(), 0.0);
    }
  } else if (state.m.size() != grads.size()) {
    throw std::invalid_argument("apply_update: Adam moments do not match parameter layout");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto d = params.entry(i).tensor.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double g = grads[i][j];
      m[j] = state.b1 * m[j] + (1.0 - state.b1) * g;
      v[j] = state.b2 * v[j] + (1.0 - state.b2) * g * g;
      d[j] -= state.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

}  // namespace metasl

#endif  // METASL_OPTIM_HPP
