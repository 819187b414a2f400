// Copyright 2026 The dagrank Authors
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
//
// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every primitive applied to its Values in execution order, so
// the node list is already a topological order of the computation. backward()
// walks it once in reverse. Tapes are built fresh for every batch and are
// confined to a single thread; Parameters outlive tapes and collect gradients
// across them.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dagrank/error.hpp"

namespace dagrank::ad {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

/// Elementwise exp with exp(-inf) == 0 exactly. Eigen's vectorized exp clamps
/// its argument and leaves a denormal there.
template <typename Derived>
auto exact_exp(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (x == -std::numeric_limits<S>::infinity()).select(S(0), x.exp());
}

template <typename Real>
struct Parameter {
  std::string name;
  Matrix<Real> value;
  Matrix<Real> grad;
  // Frozen parameters enter tapes as constants and never receive gradient.
  bool frozen = false;
};

/// Ordered, name-indexed collection of parameters with stable addresses.
template <typename Real>
class ParameterSet {
 public:
  Parameter<Real>& add(std::string name, Matrix<Real> init);
  Parameter<Real>& at(std::string_view name);
  const Parameter<Real>& at(std::string_view name) const;
  Parameter<Real>* find(std::string_view name);
  const Parameter<Real>* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter<Real>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  void set_frozen(bool frozen);

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
};

template <typename Real>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename Real>
class Value {
 public:
  Value() = default;

  Tape<Real>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Matrix<Real>& data() const;
  const Matrix<Real>& grad() const;
  Eigen::Index rows() const { return data().rows(); }
  Eigen::Index cols() const { return data().cols(); }
  Real item() const;

 private:
  friend class Tape<Real>;
  Value(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Real>
class Tape {
 public:
  using Mat = Matrix<Real>;
  using Val = Value<Real>;
  // Receives the node's output gradient and one slot per parent; a slot is
  // null when that parent needs no gradient. Implementations accumulate.
  using BackwardFn = std::function<void(const Mat& grad_out, std::span<Mat* const> parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Val constant(Mat data);
  Val param(Parameter<Real>& p);

  /// Records a custom primitive. Used by fused operations outside this file.
  Val record(const char* op, Mat data, std::vector<Val> parents, BackwardFn backward);

  void backward(const Val& loss);

  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(const Val& v) const { return nodes_[v.id()].requires_grad; }
  const Mat& data(std::size_t id) const { return nodes_[id].data; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }

  // Primitives.
  Val matmul(const Val& a, const Val& b);
  Val transpose(const Val& a);
  Val add(const Val& a, const Val& b);
  Val sub(const Val& a, const Val& b);
  Val mul(const Val& a, const Val& b);
  Val div(const Val& a, const Val& b);
  Val scale(const Val& a, Real s);
  Val add_row(const Val& a, const Val& row);
  Val mul_row(const Val& a, const Val& row);
  Val softmax_rows(const Val& a);
  Val log_softmax_rows(const Val& a);
  Val logsumexp_rows(const Val& a);
  Val masked_fill(const Val& a, const Mask& mask, Real fill);
  Val sigmoid(const Val& a);
  Val log(const Val& a);
  Val exp(const Val& a);
  Val relu(const Val& a);
  Val concat_cols(std::span<const Val> parts);
  Val slice_cols(const Val& a, Eigen::Index start, Eigen::Index count);
  Val sum(const Val& a);
  Val mean(const Val& a);
  Val sum_rows(const Val& a);
  Val layer_norm_rows(const Val& a, Real eps = Real(1e-5));
  Val bce_with_logits(const Val& logits, const Mat& targets);

  // Row-blocked primitives: the first operand's rows split into `groups`
  // equal blocks and block i pairs with block i of the second operand.
  Val group_matmul(const Val& a, const Val& b, Eigen::Index groups);
  Val group_matmul_nt(const Val& a, const Val& b, Eigen::Index groups);
  Val tile_rows(const Val& a, Eigen::Index times);
  Val gather_rows(const Val& a, std::vector<Eigen::Index> rows);

 private:
  struct Node {
    const char* op = "";
    Mat data;
    Mat grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter<Real>* param = nullptr;
    bool requires_grad = false;
  };

  void check_owner(const Val& v, const char* op) const;

  std::vector<Node> nodes_;
};

// Free-function spellings for expression code.
template <typename Real>
Value<Real> matmul(const Value<Real>& a, const Value<Real>& b) { return a.tape()->matmul(a, b); }
template <typename Real>
Value<Real> operator+(const Value<Real>& a, const Value<Real>& b) { return a.tape()->add(a, b); }
template <typename Real>
Value<Real> operator-(const Value<Real>& a, const Value<Real>& b) { return a.tape()->sub(a, b); }
template <typename Real>
Value<Real> operator*(const Value<Real>& a, const Value<Real>& b) { return a.tape()->mul(a, b); }
template <typename Real>
Value<Real> operator/(const Value<Real>& a, const Value<Real>& b) { return a.tape()->div(a, b); }

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class Value<float>;
extern template class Value<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class ParameterSet<long double>;
extern template class Value<long double>;
extern template class Tape<long double>;

}  // namespace dagrank::ad
