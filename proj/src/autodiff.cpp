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
#include "dagrank/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

namespace dagrank::ad {

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

namespace {

template <typename Mat>
std::string shape_of(const Mat& m) {
  return shape_string(m.rows(), m.cols());
}

template <typename A, typename B>
[[noreturn]] void shape_mismatch(const char* op, const A& a, const B& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_of(a) + " and " + shape_of(b));
}

template <typename A, typename B>
void require_same_shape(const char* op, const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch(op, a, b);
}

template <typename Real>
constexpr Real neg_inf() {
  return -std::numeric_limits<Real>::infinity();
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

template <typename Real>
Parameter<Real>& ParameterSet<Real>::add(std::string name, Matrix<Real> init) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter<Real>>();
  p->name = std::move(name);
  p->grad = Matrix<Real>::Zero(init.rows(), init.cols());
  p->value = std::move(init);
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename Real>
Parameter<Real>* ParameterSet<Real>::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <typename Real>
const Parameter<Real>* ParameterSet<Real>::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <typename Real>
Parameter<Real>& ParameterSet<Real>::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw ConfigError("unknown parameter: " + std::string(name));
}

template <typename Real>
const Parameter<Real>& ParameterSet<Real>::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw ConfigError("unknown parameter: " + std::string(name));
}

template <typename Real>
std::size_t ParameterSet<Real>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <typename Real>
void ParameterSet<Real>::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

template <typename Real>
void ParameterSet<Real>::set_frozen(bool frozen) {
  for (auto& p : params_) p->frozen = frozen;
}

// ---------------------------------------------------------------------------
// Value

template <typename Real>
const Matrix<Real>& Value<Real>::data() const {
  return tape_->data(id_);
}

template <typename Real>
const Matrix<Real>& Value<Real>::grad() const {
  return tape_->grad(id_);
}

template <typename Real>
Real Value<Real>::item() const {
  const auto& d = data();
  if (d.rows() != 1 || d.cols() != 1) throw ShapeError("item: expected 1x1, got " + shape_of(d));
  return d(0, 0);
}

// ---------------------------------------------------------------------------
// Tape bookkeeping

template <typename Real>
void Tape<Real>::check_owner(const Val& v, const char* op) const {
  if (v.tape() != this || v.id() >= nodes_.size())
    throw ConfigError(std::string(op) + ": value belongs to a different tape");
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::constant(Mat data) {
  Node node;
  node.op = "constant";
  node.data = std::move(data);
  nodes_.push_back(std::move(node));
  return Val(this, nodes_.size() - 1);
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::param(Parameter<Real>& p) {
  Node node;
  node.op = "param";
  node.data = p.value;
  node.requires_grad = !p.frozen;
  node.param = node.requires_grad ? &p : nullptr;
  nodes_.push_back(std::move(node));
  return Val(this, nodes_.size() - 1);
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::record(const char* op, Mat data, std::vector<Val> parents,
                                            BackwardFn backward) {
  Node node;
  node.op = op;
  node.data = std::move(data);
  node.parents.reserve(parents.size());
  for (const auto& p : parents) {
    check_owner(p, op);
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Val(this, nodes_.size() - 1);
}

template <typename Real>
void Tape<Real>::backward(const Val& loss) {
  check_owner(loss, "backward");
  const Mat& out = nodes_[loss.id()].data;
  if (out.rows() != 1 || out.cols() != 1)
    throw ShapeError("backward: loss must be 1x1, got " + shape_of(out));

  const std::size_t last = loss.id();
  for (std::size_t i = 0; i <= last; ++i) {
    auto& n = nodes_[i];
    if (n.requires_grad) n.grad = Mat::Zero(n.data.rows(), n.data.cols());
  }
  if (!nodes_[last].requires_grad) return;
  nodes_[last].grad(0, 0) = Real(1);

  std::vector<Mat*> slots;
  for (std::size_t i = last + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.backward) {
      slots.clear();
      for (std::size_t pid : n.parents)
        slots.push_back(nodes_[pid].requires_grad ? &nodes_[pid].grad : nullptr);
      n.backward(n.grad, std::span<Mat* const>(slots.data(), slots.size()));
    }
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Real>
typename Tape<Real>::Val Tape<Real>::matmul(const Val& a, const Val& b) {
  check_owner(a, "matmul");
  check_owner(b, "matmul");
  const Mat& A = a.data();
  const Mat& B = b.data();
  if (A.cols() != B.rows()) shape_mismatch("matmul", A, B);
  Mat out;
  out.noalias() = A * B;
  const std::size_t ia = a.id(), ib = b.id();
  return record("matmul", std::move(out), {a, b}, [this, ia, ib](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) d[0]->noalias() += g * nodes_[ib].data.transpose();
    if (d[1]) d[1]->noalias() += nodes_[ia].data.transpose() * g;
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::transpose(const Val& a) {
  check_owner(a, "transpose");
  Mat out = a.data().transpose();
  return record("transpose", std::move(out), {a}, [](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) *d[0] += g.transpose();
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::group_matmul(const Val& a, const Val& b, Eigen::Index groups) {
  check_owner(a, "group_matmul");
  check_owner(b, "group_matmul");
  const Mat& A = a.data();
  const Mat& B = b.data();
  if (groups < 1 || A.rows() % groups != 0 || B.rows() % groups != 0 || A.cols() != B.rows() / groups)
    shape_mismatch("group_matmul", A, B);
  const Eigen::Index ra = A.rows() / groups, k = A.cols();
  Mat out(A.rows(), B.cols());
  for (Eigen::Index g = 0; g < groups; ++g)
    out.middleRows(g * ra, ra).noalias() = A.middleRows(g * ra, ra) * B.middleRows(g * k, k);
  const std::size_t ia = a.id(), ib = b.id();
  return record("group_matmul", std::move(out), {a, b},
                [this, ia, ib, groups, ra, k](const Mat& G, std::span<Mat* const> d) {
                  const Mat& A = nodes_[ia].data;
                  const Mat& B = nodes_[ib].data;
                  for (Eigen::Index g = 0; g < groups; ++g) {
                    auto Gb = G.middleRows(g * ra, ra);
                    if (d[0]) d[0]->middleRows(g * ra, ra).noalias() += Gb * B.middleRows(g * k, k).transpose();
                    if (d[1]) d[1]->middleRows(g * k, k).noalias() += A.middleRows(g * ra, ra).transpose() * Gb;
                  }
                });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::group_matmul_nt(const Val& a, const Val& b, Eigen::Index groups) {
  check_owner(a, "group_matmul_nt");
  check_owner(b, "group_matmul_nt");
  const Mat& A = a.data();
  const Mat& B = b.data();
  if (groups < 1 || A.rows() % groups != 0 || B.rows() % groups != 0 || A.cols() != B.cols())
    shape_mismatch("group_matmul_nt", A, B);
  const Eigen::Index ra = A.rows() / groups, rb = B.rows() / groups;
  Mat out(A.rows(), rb);
  for (Eigen::Index g = 0; g < groups; ++g)
    out.middleRows(g * ra, ra).noalias() = A.middleRows(g * ra, ra) * B.middleRows(g * rb, rb).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return record("group_matmul_nt", std::move(out), {a, b},
                [this, ia, ib, groups, ra, rb](const Mat& G, std::span<Mat* const> d) {
                  const Mat& A = nodes_[ia].data;
                  const Mat& B = nodes_[ib].data;
                  for (Eigen::Index g = 0; g < groups; ++g) {
                    auto Gb = G.middleRows(g * ra, ra);
                    if (d[0]) d[0]->middleRows(g * ra, ra).noalias() += Gb * B.middleRows(g * rb, rb);
                    if (d[1]) d[1]->middleRows(g * rb, rb).noalias() += Gb.transpose() * A.middleRows(g * ra, ra);
                  }
                });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::tile_rows(const Val& a, Eigen::Index times) {
  check_owner(a, "tile_rows");
  if (times < 1) throw ShapeError("tile_rows: repeat count must be positive");
  const Mat& A = a.data();
  const Eigen::Index r = A.rows();
  Mat out(r * times, A.cols());
  for (Eigen::Index t = 0; t < times; ++t) out.middleRows(t * r, r) = A;
  return record("tile_rows", std::move(out), {a}, [r, times](const Mat& G, std::span<Mat* const> d) {
    if (!d[0]) return;
    for (Eigen::Index t = 0; t < times; ++t) *d[0] += G.middleRows(t * r, r);
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::gather_rows(const Val& a, std::vector<Eigen::Index> rows) {
  check_owner(a, "gather_rows");
  const Mat& A = a.data();
  Mat out(static_cast<Eigen::Index>(rows.size()), A.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= A.rows())
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_of(A));
    out.row(static_cast<Eigen::Index>(i)) = A.row(rows[i]);
  }
  return record("gather_rows", std::move(out), {a}, [rows = std::move(rows)](const Mat& G, std::span<Mat* const> d) {
    if (!d[0]) return;
    for (std::size_t i = 0; i < rows.size(); ++i) d[0]->row(rows[i]) += G.row(static_cast<Eigen::Index>(i));
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Real>
typename Tape<Real>::Val Tape<Real>::add(const Val& a, const Val& b) {
  check_owner(a, "add");
  check_owner(b, "add");
  require_same_shape("add", a.data(), b.data());
  Mat out = a.data() + b.data();
  return record("add", std::move(out), {a, b}, [](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) *d[0] += g;
    if (d[1]) *d[1] += g;
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::sub(const Val& a, const Val& b) {
  check_owner(a, "sub");
  check_owner(b, "sub");
  require_same_shape("sub", a.data(), b.data());
  Mat out = a.data() - b.data();
  return record("sub", std::move(out), {a, b}, [](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) *d[0] += g;
    if (d[1]) *d[1] -= g;
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::mul(const Val& a, const Val& b) {
  check_owner(a, "mul");
  check_owner(b, "mul");
  require_same_shape("mul", a.data(), b.data());
  Mat out = a.data().cwiseProduct(b.data());
  const std::size_t ia = a.id(), ib = b.id();
  return record("mul", std::move(out), {a, b}, [this, ia, ib](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) *d[0] += g.cwiseProduct(nodes_[ib].data);
    if (d[1]) *d[1] += g.cwiseProduct(nodes_[ia].data);
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::div(const Val& a, const Val& b) {
  check_owner(a, "div");
  check_owner(b, "div");
  require_same_shape("div", a.data(), b.data());
  Mat out = a.data().cwiseQuotient(b.data());
  const std::size_t ib = b.id();
  const std::size_t iout = nodes_.size();
  return record("div", std::move(out), {a, b}, [this, ib, iout](const Mat& g, std::span<Mat* const> d) {
    const Mat& B = nodes_[ib].data;
    if (d[0]) *d[0] += g.cwiseQuotient(B);
    if (d[1]) *d[1] -= g.cwiseProduct(nodes_[iout].data).cwiseQuotient(B);
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::scale(const Val& a, Real s) {
  check_owner(a, "scale");
  Mat out = a.data() * s;
  return record("scale", std::move(out), {a}, [s](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) *d[0] += g * s;
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::add_row(const Val& a, const Val& row) {
  check_owner(a, "add_row");
  check_owner(row, "add_row");
  const Mat& A = a.data();
  const Mat& R = row.data();
  if (R.rows() != 1 || R.cols() != A.cols()) shape_mismatch("add_row", A, R);
  Mat out = A.rowwise() + R.row(0);
  return record("add_row", std::move(out), {a, row}, [](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) *d[0] += g;
    if (d[1]) *d[1] += g.colwise().sum();
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::mul_row(const Val& a, const Val& row) {
  check_owner(a, "mul_row");
  check_owner(row, "mul_row");
  const Mat& A = a.data();
  const Mat& R = row.data();
  if (R.rows() != 1 || R.cols() != A.cols()) shape_mismatch("mul_row", A, R);
  Mat out = A.array().rowwise() * R.row(0).array();
  const std::size_t ia = a.id(), ir = row.id();
  return record("mul_row", std::move(out), {a, row}, [this, ia, ir](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) d[0]->array() += g.array().rowwise() * nodes_[ir].data.row(0).array();
    if (d[1]) *d[1] += g.cwiseProduct(nodes_[ia].data).colwise().sum();
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::sigmoid(const Val& a) {
  check_owner(a, "sigmoid");
  Mat out = a.data().unaryExpr([](Real x) {
    if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
    const Real e = std::exp(x);
    return e / (Real(1) + e);
  });
  const std::size_t iout = nodes_.size();
  return record("sigmoid", std::move(out), {a}, [this, iout](const Mat& g, std::span<Mat* const> d) {
    if (!d[0]) return;
    const Mat& y = nodes_[iout].data;
    d[0]->array() += g.array() * y.array() * (Real(1) - y.array());
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::log(const Val& a) {
  check_owner(a, "log");
  Mat out = a.data().array().log().matrix();
  const std::size_t ia = a.id();
  return record("log", std::move(out), {a}, [this, ia](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) *d[0] += g.cwiseQuotient(nodes_[ia].data);
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::exp(const Val& a) {
  check_owner(a, "exp");
  Mat out = exact_exp(a.data().array()).matrix();
  const std::size_t iout = nodes_.size();
  return record("exp", std::move(out), {a}, [this, iout](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) *d[0] += g.cwiseProduct(nodes_[iout].data);
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::relu(const Val& a) {
  check_owner(a, "relu");
  Mat out = a.data().cwiseMax(Real(0));
  const std::size_t ia = a.id();
  return record("relu", std::move(out), {a}, [this, ia](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) d[0]->array() += (nodes_[ia].data.array() > Real(0)).select(g.array(), Real(0));
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::masked_fill(const Val& a, const Mask& mask, Real fill) {
  check_owner(a, "masked_fill");
  const Mat& A = a.data();
  require_same_shape("masked_fill", A, mask);
  Mat out = mask.select(Mat::Constant(A.rows(), A.cols(), fill), A);
  return record("masked_fill", std::move(out), {a}, [mask](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) d[0]->array() += mask.select(Real(0), g.array());
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::bce_with_logits(const Val& logits, const Mat& targets) {
  check_owner(logits, "bce_with_logits");
  const Mat& Z = logits.data();
  require_same_shape("bce_with_logits", Z, targets);
  Mat out(Z.rows(), Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
      const Real z = Z(i, j);
      out(i, j) = std::max(z, Real(0)) - z * targets(i, j) + std::log1p(std::exp(-std::abs(z)));
    }
  const std::size_t iz = logits.id();
  return record("bce_with_logits", std::move(out), {logits}, [this, iz, targets](const Mat& g, std::span<Mat* const> d) {
    if (!d[0]) return;
    const Mat& Z = nodes_[iz].data;
    for (Eigen::Index i = 0; i < Z.rows(); ++i)
      for (Eigen::Index j = 0; j < Z.cols(); ++j) {
        const Real z = Z(i, j);
        const Real s = z >= 0 ? Real(1) / (Real(1) + std::exp(-z)) : std::exp(z) / (Real(1) + std::exp(z));
        (*d[0])(i, j) += g(i, j) * (s - targets(i, j));
      }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizers. All subtract the row maximum; a row that is entirely
// -inf is treated as having no support (softmax -> zeros, log-softmax and
// logsumexp -> -inf) and passes no gradient.

template <typename Real>
typename Tape<Real>::Val Tape<Real>::softmax_rows(const Val& a) {
  check_owner(a, "softmax_rows");
  const Mat& A = a.data();
  Mat out(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const Real mx = A.row(i).maxCoeff();
    if (mx == neg_inf<Real>()) {
      out.row(i).setZero();
      continue;
    }
    out.row(i) = exact_exp(A.row(i).array() - mx).matrix();
    out.row(i) /= out.row(i).sum();
  }
  const std::size_t iout = nodes_.size();
  return record("softmax_rows", std::move(out), {a}, [this, iout](const Mat& g, std::span<Mat* const> d) {
    if (!d[0]) return;
    const Mat& y = nodes_[iout].data;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const Real dot = g.row(i).dot(y.row(i));
      d[0]->row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::log_softmax_rows(const Val& a) {
  check_owner(a, "log_softmax_rows");
  const Mat& A = a.data();
  Mat out(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const Real mx = A.row(i).maxCoeff();
    if (mx == neg_inf<Real>()) {
      out.row(i).setConstant(neg_inf<Real>());
      continue;
    }
    // Accumulated in at least double so that float rows still sum to 1 within 1e-6.
    using Acc = std::conditional_t<(sizeof(Real) > sizeof(double)), Real, double>;
    const Acc lse = static_cast<Acc>(mx) + std::log((A.row(i).array() - mx).template cast<Acc>().exp().sum());
    out.row(i) = (A.row(i).template cast<Acc>().array() - lse).template cast<Real>().matrix();
  }
  const std::size_t iout = nodes_.size();
  return record("log_softmax_rows", std::move(out), {a}, [this, iout](const Mat& g, std::span<Mat* const> d) {
    if (!d[0]) return;
    const Mat& y = nodes_[iout].data;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      Real total = 0;
      for (Eigen::Index j = 0; j < y.cols(); ++j)
        if (y(i, j) != neg_inf<Real>()) total += g(i, j);
      for (Eigen::Index j = 0; j < y.cols(); ++j)
        if (y(i, j) != neg_inf<Real>()) (*d[0])(i, j) += g(i, j) - std::exp(y(i, j)) * total;
    }
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::logsumexp_rows(const Val& a) {
  check_owner(a, "logsumexp_rows");
  const Mat& A = a.data();
  Mat out(A.rows(), 1);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const Real mx = A.row(i).maxCoeff();
    out(i, 0) = mx == neg_inf<Real>() ? mx : mx + std::log((A.row(i).array() - mx).exp().sum());
  }
  const std::size_t ia = a.id(), iout = nodes_.size();
  return record("logsumexp_rows", std::move(out), {a}, [this, ia, iout](const Mat& g, std::span<Mat* const> d) {
    if (!d[0]) return;
    const Mat& A = nodes_[ia].data;
    const Mat& y = nodes_[iout].data;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      if (y(i, 0) == neg_inf<Real>()) continue;
      d[0]->row(i).array() += g(i, 0) * (A.row(i).array() - y(i, 0)).exp();
    }
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::layer_norm_rows(const Val& a, Real eps) {
  check_owner(a, "layer_norm_rows");
  const Mat& A = a.data();
  const Eigen::Index c = A.cols();
  Mat out(A.rows(), c);
  Eigen::Matrix<Real, Eigen::Dynamic, 1> inv_std(A.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const Real mu = A.row(i).mean();
    const Real var = (A.row(i).array() - mu).square().mean();
    inv_std(i) = Real(1) / std::sqrt(var + eps);
    out.row(i) = ((A.row(i).array() - mu) * inv_std(i)).matrix();
  }
  const std::size_t iout = nodes_.size();
  return record("layer_norm_rows", std::move(out), {a},
                [this, iout, inv_std = std::move(inv_std)](const Mat& g, std::span<Mat* const> d) {
                  if (!d[0]) return;
                  const Mat& y = nodes_[iout].data;
                  for (Eigen::Index i = 0; i < y.rows(); ++i) {
                    const Real gm = g.row(i).mean();
                    const Real gy = g.row(i).dot(y.row(i)) / static_cast<Real>(y.cols());
                    d[0]->row(i).array() += inv_std(i) * (g.row(i).array() - gm - y.row(i).array() * gy);
                  }
                });
}

// ---------------------------------------------------------------------------
// Structure and reductions

template <typename Real>
typename Tape<Real>::Val Tape<Real>::concat_cols(std::span<const Val> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index rows = -1, cols = 0;
  std::vector<Val> parents(parts.begin(), parts.end());
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    check_owner(p, "concat_cols");
    if (rows >= 0 && p.rows() != rows) shape_mismatch("concat_cols", parts.front().data(), p.data());
    rows = p.rows();
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.data();
    at += p.cols();
  }
  return record("concat_cols", std::move(out), std::move(parents), [widths](const Mat& g, std::span<Mat* const> d) {
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (d[k]) *d[k] += g.middleCols(at, widths[k]);
      at += widths[k];
    }
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::slice_cols(const Val& a, Eigen::Index start, Eigen::Index count) {
  check_owner(a, "slice_cols");
  const Mat& A = a.data();
  if (start < 0 || count < 0 || start + count > A.cols())
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_of(A));
  Mat out = A.middleCols(start, count);
  return record("slice_cols", std::move(out), {a}, [start, count](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) d[0]->middleCols(start, count) += g;
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::sum(const Val& a) {
  check_owner(a, "sum");
  Mat out(1, 1);
  out(0, 0) = a.data().sum();
  return record("sum", std::move(out), {a}, [](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) d[0]->array() += g(0, 0);
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::mean(const Val& a) {
  check_owner(a, "mean");
  const auto n = static_cast<Real>(a.data().size());
  if (n == 0) throw ShapeError("mean: empty input");
  Mat out(1, 1);
  out(0, 0) = a.data().sum() / n;
  return record("mean", std::move(out), {a}, [n](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) d[0]->array() += g(0, 0) / n;
  });
}

template <typename Real>
typename Tape<Real>::Val Tape<Real>::sum_rows(const Val& a) {
  check_owner(a, "sum_rows");
  Mat out = a.data().rowwise().sum();
  return record("sum_rows", std::move(out), {a}, [](const Mat& g, std::span<Mat* const> d) {
    if (d[0]) d[0]->colwise() += g.col(0);
  });
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Value<float>;
template class Value<double>;
template class Tape<float>;
template class Tape<double>;
template class ParameterSet<long double>;
template class Value<long double>;
template class Tape<long double>;

}  // namespace dagrank::ad
