#pragma once

#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "modrestore/tensor.hpp"

namespace modrestore {

/// Trainable parameters receive optimizer updates; buffers (batch-norm
/// running statistics) are carried along but never stepped.
enum class ParamKind { Parameter, Buffer };

template <typename Scalar>
struct ParamArray {
  std::vector<int> shape;
  Vector<Scalar> values;
  ParamKind kind = ParamKind::Parameter;

  Eigen::Index count() const noexcept { return values.size(); }
};

inline Eigen::Index shape_count(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                         [](Eigen::Index a, int b) { return a * b; });
}

/// Named parameter arrays of one network, ordered by path.
template <typename Scalar>
class ParameterTree {
 public:
  using Entry = ParamArray<Scalar>;
  using Storage = std::map<std::string, Entry>;
  using MatrixView = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixView = Eigen::Map<const RowMatrix<Scalar>>;

  Entry& add(const std::string& name, std::vector<int> shape, ParamKind kind = ParamKind::Parameter) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    Entry e;
    e.values = Vector<Scalar>::Zero(shape_count(shape));
    e.shape = std::move(shape);
    e.kind = kind;
    return entries_.emplace(name, std::move(e)).first->second;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  }

  Vector<Scalar>& values(const std::string& name) { return at(name).values; }
  const Vector<Scalar>& values(const std::string& name) const { return at(name).values; }

  /// Row-major view with the first dimension as rows and the rest flattened.
  MatrixView matrix(const std::string& name) {
    auto& e = at(name);
    const Eigen::Index rows = e.shape.empty() ? 1 : e.shape.front();
    return MatrixView(e.values.data(), rows, e.values.size() / rows);
  }
  ConstMatrixView matrix(const std::string& name) const {
    const auto& e = at(name);
    const Eigen::Index rows = e.shape.empty() ? 1 : e.shape.front();
    return ConstMatrixView(e.values.data(), rows, e.values.size() / rows);
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Eigen::Index parameter_count(bool trainable_only = true) const {
    Eigen::Index n = 0;
    for (const auto& [_, e] : entries_) {
      if (!trainable_only || e.kind == ParamKind::Parameter) n += e.count();
    }
    return n;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
  }

  /// Same keys, shapes and kinds, every value zero.
  ParameterTree zeros_like() const {
    ParameterTree out;
    for (const auto& [k, e] : entries_) out.add(k, e.shape, e.kind);
    return out;
  }

  void set_zero() {
    for (auto& [_, e] : entries_) e.values.setZero();
  }

  bool all_finite() const {
    for (const auto& [_, e] : entries_) {
      if (!e.values.allFinite()) return false;
    }
    return true;
  }

  template <typename Other>
  ParameterTree<Other> cast() const {
    ParameterTree<Other> out;
    for (const auto& [k, e] : entries_) {
      out.add(k, e.shape, e.kind).values = e.values.template cast<Other>();
    }
    return out;
  }

  /// Keys whose presence, shape or kind differs between the two trees.
  std::vector<std::string> manifest_diff(const ParameterTree& other) const {
    std::vector<std::string> diff;
    for (const auto& [k, e] : entries_) {
      auto it = other.entries_.find(k);
      if (it == other.entries_.end() || it->second.shape != e.shape || it->second.kind != e.kind) {
        diff.push_back(k);
      }
    }
    for (const auto& [k, _] : other.entries_) {
      if (!entries_.count(k)) diff.push_back(k);
    }
    return diff;
  }

  bool operator==(const ParameterTree& other) const {
    if (!manifest_diff(other).empty()) return false;
    for (const auto& [k, e] : entries_) {
      if (e.values != other.entries_.at(k).values) return false;
    }
    return true;
  }

  /// this += scale * other, over matching keys.
  void add_scaled(const ParameterTree& other, Scalar scale) {
    for (auto& [k, e] : entries_) e.values += scale * other.at(k).values;
  }

 private:
  Storage entries_;
};

/// Fills `values` with N(0, stddev^2) draws.
template <typename Scalar, typename Rng>
void fill_normal(Vector<Scalar>& values, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = static_cast<Scalar>(dist(rng));
}

}  // namespace modrestore
