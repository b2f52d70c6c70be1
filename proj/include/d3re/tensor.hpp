#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "d3re/errors.hpp"

namespace d3re {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatView = Eigen::Map<RowMat>;
using ConstMatView = Eigen::Map<const RowMat>;

// Dense tensor of doubles, flat row-major storage. Rank 1 and 2 cover
// everything this library needs (biases and weight matrices).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Eigen::Index> shape)
      : shape_(std::move(shape)), data_(Eigen::VectorXd::Zero(count(shape_))) {}

  Tensor(std::vector<Eigen::Index> shape, Eigen::VectorXd data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw ConfigError("tensor: data size does not match shape");
  }

  static Tensor from_matrix(const Eigen::MatrixXd& m) {
    Tensor t({m.rows(), m.cols()});
    t.mat() = m;
    return t;
  }

  static Tensor from_vector(const Eigen::VectorXd& v) {
    return Tensor({v.size()}, v);
  }

  const std::vector<Eigen::Index>& shape() const { return shape_; }
  Eigen::Index rank() const { return static_cast<Eigen::Index>(shape_.size()); }
  Eigen::Index size() const { return data_.size(); }

  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }

  Eigen::Index rows() const { return shape_.at(0); }
  Eigen::Index cols() const { return shape_.at(1); }

  MatView mat() {
    require_rank(2);
    return MatView(data_.data(), shape_[0], shape_[1]);
  }
  ConstMatView mat() const {
    require_rank(2);
    return ConstMatView(data_.data(), shape_[0], shape_[1]);
  }

  Eigen::Map<Eigen::VectorXd> vec() {
    require_rank(1);
    return Eigen::Map<Eigen::VectorXd>(data_.data(), shape_[0]);
  }
  Eigen::Map<const Eigen::VectorXd> vec() const {
    require_rank(1);
    return Eigen::Map<const Eigen::VectorXd>(data_.data(), shape_[0]);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void ensure_finite(const std::string& label) const {
    if (!data_.allFinite())
      throw NumericError("non-finite values in " + label);
  }

 private:
  static Eigen::Index count(const std::vector<Eigen::Index>& shape) {
    Eigen::Index n = 1;
    for (Eigen::Index s : shape) {
      if (s < 0) throw ConfigError("tensor: negative extent");
      n *= s;
    }
    return n;
  }
  void require_rank(Eigen::Index r) const {
    if (rank() != r) throw ConfigError("tensor: rank mismatch");
  }

  std::vector<Eigen::Index> shape_;
  Eigen::VectorXd data_;
};

// Ordered, uniquely named parameter collection. Order is the serialization
// order (layer-major, weights before bias), so iteration is deterministic.
class ParamSet {
 public:
  void add(std::string name, Tensor t) {
    if (find(name) >= 0) throw ConfigError("duplicate parameter: " + name);
    entries_.emplace_back(std::move(name), std::move(t));
  }

  std::size_t count() const { return entries_.size(); }

  const std::string& name(std::size_t i) const { return entries_.at(i).first; }
  Tensor& at(std::size_t i) { return entries_.at(i).second; }
  const Tensor& at(std::size_t i) const { return entries_.at(i).second; }

  Tensor& operator[](const std::string& name) {
    const int i = find(name);
    if (i < 0) throw ConfigError("unknown parameter: " + name);
    return entries_[static_cast<std::size_t>(i)].second;
  }
  const Tensor& operator[](const std::string& name) const {
    const int i = find(name);
    if (i < 0) throw ConfigError("unknown parameter: " + name);
    return entries_[static_cast<std::size_t>(i)].second;
  }

  ParamSet zeros_like() const {
    ParamSet z;
    for (const auto& [name, t] : entries_) z.add(name, Tensor(t.shape()));
    return z;
  }

  bool same_layout(const ParamSet& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].first != o.entries_[i].first) return false;
      if (!entries_[i].second.same_shape(o.entries_[i].second)) return false;
    }
    return true;
  }

  Eigen::Index flat_size() const {
    Eigen::Index n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

 private:
  int find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first == name) return static_cast<int>(i);
    return -1;
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
};

// y += a * x over matching parameter sets.
inline void param_axpy(double a, const ParamSet& x, ParamSet& y) {
  if (!y.same_layout(x)) throw ConfigError("param_axpy: parameter layouts differ");
  for (std::size_t i = 0; i < y.count(); ++i) y.at(i).data() += a * x.at(i).data();
}

// Value/tangent pair for forward-mode directional derivatives over a batch
// (one row per sample, matching shapes).
struct Dual {
  Eigen::MatrixXd value;
  Eigen::MatrixXd tangent;
};

}  // namespace d3re
