// Copyright 2026 The hsdlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every intermediate matrix together with a closure that maps
// the gradient of that node onto the gradients of its inputs. Parameters live
// in a ParameterSet owned by the model; binding a parameter to a tape creates a
// leaf whose accumulated gradient is flushed into Parameter::grad by
// Tape::backward().

#ifndef HSDLAB_AUTODIFF_HPP_
#define HSDLAB_AUTODIFF_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hsd::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  /// Whether decoupled weight decay applies (weight matrices only).
  bool decay = true;
};

/// Ordered, name-addressable parameter storage. Indices are stable.
template <typename Scalar>
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix<Scalar> value, bool decay = true) {
    if (index_.count(name) != 0) {
      throw std::invalid_argument("duplicate parameter '" + name + "'");
    }
    index_.emplace(name, params_.size());
    Parameter<Scalar> p;
    p.name = std::move(name);
    p.grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    p.value = std::move(value);
    p.decay = decay;
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return it->second;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  /// With record_gradients == false no closures are kept (inference mode).
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), false, nullptr, nullptr});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  /// Leaf for a trainable parameter. Binding the same parameter twice returns
  /// the same node so gradients from every use are summed.
  Var param(const Parameter<Scalar>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var{it->second};
    // Only recording tapes write gradients back, so a const parameter is safe
    // to bind for inference.
    nodes_.push_back(Node{p.value, Mat(), recording_, nullptr,
                          recording_ ? const_cast<Parameter<Scalar>*>(&p) : nullptr});
    const int id = static_cast<int>(nodes_.size() - 1);
    bound_.emplace(&p, id);
    return Var{id};
  }

  Var push(Mat value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (recording_) {
      for (Var v : inputs) needs = needs || nodes_[v.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs,
                          needs ? std::move(backward) : Backward(), nullptr});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  Var push(Mat value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    if (recording_) {
      for (Var v : inputs) needs = needs || nodes_[v.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs,
                          needs ? std::move(backward) : Backward(), nullptr});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  Scalar scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient accumulated so far (empty if none reached this node).
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Mutable gradient buffer of shape value(v), zero-initialized on first use.
  Mat& grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Back-propagates from a 1x1 root and adds leaf gradients into their
  /// parameters.
  void backward(Var root) {
    if (!recording_) throw std::logic_error("backward() on a non-recording tape");
    if (nodes_[root.id].value.size() != 1) {
      throw std::logic_error("backward() root must be a scalar");
    }
    nodes_[root.id].grad = Mat::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param != nullptr) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad;
    Backward backward;
    Parameter<Scalar>* param;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, int> bound_;
};

}  // namespace hsd::ad

#endif  // HSDLAB_AUTODIFF_HPP_
