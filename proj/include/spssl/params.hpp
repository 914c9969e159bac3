#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spssl/errors.hpp"
#include "spssl/tensor.hpp"

namespace spssl {

/// Named, ordered parameter set of one network plus its optimizer state.
template <typename T>
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  std::string architecture_id;

  Tensor<T>& add(std::string name, Tensor<T> tensor) {
    if (index_.count(name)) throw ConfigError("ModelParams: duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.back().second;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  const Tensor<T>& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("ModelParams: unknown parameter '" + std::string(name) + "'");
    return entries_[it->second].second;
  }
  Tensor<T>& at(std::string_view name) {
    return const_cast<Tensor<T>&>(static_cast<const ModelParams&>(*this).at(name));
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  /// Deep copy of values and momentum buffers.
  ModelParams clone() const {
    ModelParams out;
    out.architecture_id = architecture_id;
    for (const auto& [name, t] : entries_) out.add(name, t.clone());
    out.momentum = momentum;
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& [_, t] : entries_) t.set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  bool any_grad() const {
    for (const auto& [_, t] : entries_)
      if (t.has_grad()) return true;
    return false;
  }

  /// Throws ShapeError unless `other` has the same names and shapes in order.
  void require_same_layout(const ModelParams& other, const char* what) const {
    if (other.size() != size()) throw ShapeError(std::string(what) + ": parameter count differs");
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_[i].first != other.entries_[i].first ||
          entries_[i].second.shape() != other.entries_[i].second.shape()) {
        throw ShapeError(std::string(what) + ": layout differs at '" + entries_[i].first + "'");
      }
    }
  }

  std::unordered_map<std::string, std::vector<T>> momentum;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Classical momentum SGD: v <- m*v + g (+ wd*w); w <- w - lr*v.
template <typename T>
void sgd_step(ModelParams<T>& params, double lr, double momentum, double weight_decay = 0.0) {
  if (lr < 0.0) throw ConfigError("sgd_step: lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd_step: momentum must be in [0,1)");
  for (auto& [name, w] : params) {
    if (!w.has_grad()) throw StateError("sgd_step: no gradient for '" + name + "'");
  }
  const T m = static_cast<T>(momentum), l = static_cast<T>(lr), wd = static_cast<T>(weight_decay);
  for (auto& [name, w] : params) {
    auto& v = params.momentum[name];
    if (v.empty()) v.assign(w.numel(), T(0));
    auto g = w.grad();
    auto data = w.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = m * v[i] + g[i] + wd * data[i];
      data[i] -= l * v[i];
    }
  }
}

}  // namespace spssl
