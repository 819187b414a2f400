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
#include "dagrank/dag_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "dagrank/error.hpp"

namespace dagrank::dag {

namespace {

template <typename Acc>
constexpr Acc kNegInf = -std::numeric_limits<Acc>::infinity();

/// log(exp(a) + exp(b)).
template <typename Acc>
Acc log_add(Acc a, Acc b) {
  if (a == kNegInf<Acc>) return b;
  if (b == kNegInf<Acc>) return a;
  const Acc hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// Forward-backward over the path lattice. LogE(u, v) and LogP(v, c) return
/// log probabilities; gradients of the log-marginal are written through the
/// optional callbacks scaled by `upstream`. Acc is the accumulation type.
template <typename Acc>
class Lattice {
 public:
  template <typename LogE>
  Lattice(const LogE& le, int g, int m, TransitionNorm norm) : g_(g), m_(m), norm_(norm) {
    log_norm_.assign(static_cast<std::size_t>(m * g), kNegInf<Acc>);
    if (norm_ != TransitionNorm::kAdmissible) return;
    for (int t = 1; t < m_; ++t)
      for (int u = 0; u < g_; ++u) {
        const auto adm = admissible_successors(u, t, g_, m_);
        Acc z = kNegInf<Acc>;
        for (int v = adm.lo; v <= adm.hi; ++v) z = log_add(z, le(u, v));
        log_norm_[idx(t, u)] = z;
      }
  }

  template <typename LogE>
  Acc transition(const LogE& le, int t, int u, int v) const {
    const Acc x = le(u, v);
    if (norm_ != TransitionNorm::kAdmissible) return x;
    const Acc z = log_norm_[idx(t, u)];
    return (x == kNegInf<Acc> || z == kNegInf<Acc>) ? kNegInf<Acc> : x - z;
  }

  template <typename LogE, typename LogP>
  Acc forward(const LogE& le, const LogP& lp, std::span<const int> y) {
    alpha_.assign(static_cast<std::size_t>(m_ * g_), kNegInf<Acc>);
    alpha_[idx(0, 0)] = lp(0, y[0]);
    for (int t = 1; t < m_; ++t) {
      const auto band = step_band(t);
      const auto prev = step_band(t - 1);
      for (int v = band.lo; v <= band.hi; ++v) {
        Acc acc = kNegInf<Acc>;
        for (int u = prev.lo; u <= std::min(prev.hi, v - 1); ++u) {
          const Acc a = alpha_[idx(t - 1, u)];
          if (a == kNegInf<Acc>) continue;
          const auto adm = admissible_successors(u, t, g_, m_);
          if (v < adm.lo || v > adm.hi) continue;
          acc = log_add(acc, a + transition(le, t, u, v));
        }
        alpha_[idx(t, v)] = acc == kNegInf<Acc> ? kNegInf<Acc> : acc + lp(v, y[static_cast<std::size_t>(t)]);
      }
    }
    return alpha_[idx(m_ - 1, g_ - 1)];
  }

  /// Requires a preceding forward() with a finite result.
  template <typename LogE, typename LogP, typename AddE, typename AddP>
  void backward(const LogE& le, const LogP& lp, std::span<const int> y, Acc log_z, Acc upstream, AddE add_e,
                AddP add_p) {
    beta_.assign(static_cast<std::size_t>(m_ * g_), kNegInf<Acc>);
    beta_[idx(m_ - 1, g_ - 1)] = 0;
    for (int t = m_ - 2; t >= 0; --t) {
      const auto band = step_band(t);
      for (int u = band.lo; u <= band.hi; ++u) {
        const auto adm = admissible_successors(u, t + 1, g_, m_);
        Acc acc = kNegInf<Acc>;
        for (int v = adm.lo; v <= adm.hi; ++v) {
          const Acc b = beta_[idx(t + 1, v)];
          if (b == kNegInf<Acc>) continue;
          acc = log_add(acc, transition(le, t + 1, u, v) + lp(v, y[static_cast<std::size_t>(t + 1)]) + b);
        }
        beta_[idx(t, u)] = acc;
      }
    }

    for (int t = 0; t < m_; ++t) {
      const auto band = step_band(t);
      for (int v = band.lo; v <= band.hi; ++v) {
        const Acc s = alpha_[idx(t, v)] + beta_[idx(t, v)];
        if (s == kNegInf<Acc> || std::isnan(s)) continue;
        add_p(v, y[static_cast<std::size_t>(t)], upstream * std::exp(s - log_z));
      }
    }

    for (int t = 1; t < m_; ++t) {
      const auto prev = step_band(t - 1);
      for (int u = prev.lo; u <= prev.hi; ++u) {
        const Acc a = alpha_[idx(t - 1, u)];
        if (a == kNegInf<Acc>) continue;
        const auto adm = admissible_successors(u, t, g_, m_);
        const Acc occupancy = std::exp(a + beta_[idx(t - 1, u)] - log_z);
        for (int v = adm.lo; v <= adm.hi; ++v) {
          const Acc tr = transition(le, t, u, v);
          if (tr == kNegInf<Acc>) continue;
          Acc grad = 0;
          const Acc b = beta_[idx(t, v)];
          if (b != kNegInf<Acc>) grad += std::exp(a + tr + lp(v, y[static_cast<std::size_t>(t)]) + b - log_z);
          if (norm_ == TransitionNorm::kAdmissible) grad -= occupancy * std::exp(tr);
          if (grad != 0) add_e(u, v, upstream * grad);
        }
      }
    }
  }

 private:
  std::size_t idx(int t, int v) const { return static_cast<std::size_t>(t * g_ + v); }

  VertexRange step_band(int t) const {
    if (t == m_ - 1) return {g_ - 1, g_ - 1};
    return {t, g_ - 1 - (m_ - 1 - t)};
  }

  int g_;
  int m_;
  TransitionNorm norm_;
  std::vector<Acc> log_norm_;
  std::vector<Acc> alpha_;
  std::vector<Acc> beta_;
};

void check_slate(std::span<const int> slate, int m, Eigen::Index n) {
  if (static_cast<int>(slate.size()) != m)
    throw ConfigError("slate has " + std::to_string(slate.size()) + " items, expected m=" + std::to_string(m));
  for (int c : slate)
    if (c < 0 || c >= n) throw ConfigError("slate item " + std::to_string(c) + " outside [0, " + std::to_string(n) + ")");
}

void check_views(const model::TransitionMatrix& e, const model::EmissionMatrix& p) {
  if (e.probs.rows() != e.probs.cols() || p.probs.cols() != e.probs.rows())
    throw ShapeError("transition " + ad::shape_string(e.probs.rows(), e.probs.cols()) + " does not match emission " +
                     ad::shape_string(p.probs.rows(), p.probs.cols()));
}

double safe_log(double x) {
  return x > 0 ? std::log(x) : kNegInf<double>;
}

}  // namespace

VertexRange admissible_successors(int from, int step, int g, int m, bool free_endpoint) {
  if (step == m - 1 && !free_endpoint) return from < g - 1 ? VertexRange{g - 1, g - 1} : VertexRange{};
  return {from + 1, g - 1 - (m - 1 - step)};
}

void validate_path(const Path& path, int g, int m) {
  if (static_cast<int>(path.size()) != m)
    throw ConfigError("path has " + std::to_string(path.size()) + " vertices, expected " + std::to_string(m));
  if (path.front() != 0 || path.back() != g - 1)
    throw ConfigError("path must start at vertex 0 and end at vertex " + std::to_string(g - 1));
  for (std::size_t i = 1; i < path.size(); ++i)
    if (path[i] <= path[i - 1]) throw ConfigError("path is not strictly increasing at position " + std::to_string(i));
}

double transition_log_prob(const model::TransitionMatrix& e, int from, int to, int step, int m, TransitionNorm norm,
                           bool free_endpoint) {
  const int g = static_cast<int>(e.probs.rows());
  const auto adm = admissible_successors(from, step, g, m, free_endpoint);
  if (to < adm.lo || to > adm.hi) return kNegInf<double>;
  const double x = safe_log(e.probs(from, to));
  if (norm == TransitionNorm::kRaw || x == kNegInf<double>) return x;
  double z = 0;
  for (int v = adm.lo; v <= adm.hi; ++v) z += e.probs(from, v);
  return x - std::log(z);
}

double path_log_prob(const Path& path, std::span<const int> slate, const model::TransitionMatrix& e,
                     const model::EmissionMatrix& p, TransitionNorm norm) {
  check_views(e, p);
  const int g = static_cast<int>(e.probs.rows());
  const int m = static_cast<int>(path.size());
  validate_path(path, g, m);
  check_slate(slate, m, p.probs.rows());
  double total = safe_log(p.probs(slate[0], path[0]));
  for (int t = 1; t < m; ++t) {
    total += transition_log_prob(e, path[static_cast<std::size_t>(t - 1)], path[static_cast<std::size_t>(t)], t, m, norm);
    total += safe_log(p.probs(slate[static_cast<std::size_t>(t)], path[static_cast<std::size_t>(t)]));
  }
  return total;
}

double dag_log_marginal(std::span<const int> slate, const model::TransitionMatrix& e, const model::EmissionMatrix& p,
                        TransitionNorm norm) {
  check_views(e, p);
  const int g = static_cast<int>(e.probs.rows());
  const int m = static_cast<int>(slate.size());
  if (m < 2 || g < m) throw ConfigError("dag_log_marginal: need 2 <= m <= g");
  check_slate(slate, m, p.probs.rows());
  const auto le = [&](int u, int v) { return safe_log(e.probs(u, v)); };
  const auto lp = [&](int v, int c) { return safe_log(p.probs(c, v)); };
  Lattice<double> lattice(le, g, m, norm);
  return lattice.forward(le, lp, slate);
}

long long path_count(int g, int m, long long cap) {
  if (m < 2 || g < m) return 0;
  const long long n = g - 2;
  long long k = std::min<long long>(m - 2, n - (m - 2));
  long long c = 1;
  for (long long i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;
    if (c > cap) return cap + 1;
  }
  return c;
}

std::vector<Path> enumerate_paths(int g, int m) {
  if (m < 2 || g < m) throw ConfigError("enumerate_paths: need 2 <= m <= g");
  if (path_count(g, m) > 1000000) throw ConfigError("enumerate_paths: more than 10^6 paths for g=" + std::to_string(g) +
                                                    ", m=" + std::to_string(m));
  std::vector<Path> out;
  Path cur{0};
  auto rec = [&](auto&& self, int last) -> void {
    const int placed = static_cast<int>(cur.size());
    if (placed == m - 1) {
      cur.push_back(g - 1);
      out.push_back(cur);
      cur.pop_back();
      return;
    }
    // Leave room for the remaining interior vertices before g - 1.
    const int remaining = m - 1 - placed;
    for (int v = last + 1; v <= g - 1 - remaining; ++v) {
      cur.push_back(v);
      self(self, v);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

template <typename Real>
ad::Value<Real> dag_log_marginal(ad::Tape<Real>& tape, const ad::Value<Real>& log_transition,
                                 const ad::Value<Real>& log_emission, const std::vector<std::vector<int>>& targets,
                                 TransitionNorm norm) {
  using Mat = ad::Matrix<Real>;
  using Acc = std::conditional_t<(sizeof(Real) > sizeof(double)), Real, double>;
  const Mat& LE = log_transition.data();
  const Mat& LP = log_emission.data();
  const int g = static_cast<int>(LE.cols());
  const auto batch = static_cast<Eigen::Index>(targets.size());
  if (batch == 0 || LE.rows() != batch * g || LP.rows() != LE.rows())
    throw ShapeError("dag_log_marginal: transition " + ad::shape_string(LE.rows(), LE.cols()) + " and emission " +
                     ad::shape_string(LP.rows(), LP.cols()) + " do not fit a batch of " + std::to_string(batch));
  const int m = static_cast<int>(targets.front().size());
  if (m < 2 || g < m) throw ConfigError("dag_log_marginal: need 2 <= m <= g");
  for (const auto& y : targets) check_slate(y, m, LP.cols());

  Mat out(batch, 1);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index off = b * g;
    const auto le = [&](int u, int v) { return static_cast<Acc>(LE(off + u, v)); };
    const auto lp = [&](int v, int c) { return static_cast<Acc>(LP(off + v, c)); };
    Lattice<Acc> lattice(le, g, m, norm);
    out(b, 0) = static_cast<Real>(lattice.forward(le, lp, targets[static_cast<std::size_t>(b)]));
  }

  const std::size_t ie = log_transition.id(), ip = log_emission.id();
  const std::size_t iout = tape.size();
  return tape.record(
      "dag_log_marginal", std::move(out), {log_transition, log_emission},
      [&tape, ie, ip, iout, targets, g, m, norm](const Mat& grad_out, std::span<Mat* const> d) {
        const Mat& LE = tape.data(ie);
        const Mat& LP = tape.data(ip);
        const Mat& Z = tape.data(iout);
        for (Eigen::Index b = 0; b < grad_out.rows(); ++b) {
          const Acc up = static_cast<Acc>(grad_out(b, 0));
          const Acc log_z = static_cast<Acc>(Z(b, 0));
          if (up == 0 || !std::isfinite(log_z)) continue;
          const Eigen::Index off = b * g;
          const auto le = [&](int u, int v) { return static_cast<Acc>(LE(off + u, v)); };
          const auto lp = [&](int v, int c) { return static_cast<Acc>(LP(off + v, c)); };
          Lattice<Acc> lattice(le, g, m, norm);
          const auto& y = targets[static_cast<std::size_t>(b)];
          lattice.forward(le, lp, y);
          lattice.backward(
              le, lp, y, log_z, up,
              [&](int u, int v, Acc x) {
                if (d[0]) (*d[0])(off + u, v) += static_cast<Real>(x);
              },
              [&](int v, int c, Acc x) {
                if (d[1]) (*d[1])(off + v, c) += static_cast<Real>(x);
              });
        }
      });
}

template <typename Real>
ad::Value<Real> gen_loss(ad::Tape<Real>& tape, const model::ForwardPass<Real>& pass,
                         const std::vector<std::vector<int>>& targets, TransitionNorm norm) {
  const auto marginal = dag_log_marginal(tape, pass.log_transition, pass.log_emission, targets, norm);
  const auto& v = marginal.data();
  for (Eigen::Index b = 0; b < v.rows(); ++b)
    if (!std::isfinite(static_cast<double>(v(b, 0))))
      throw NumericalError("gen_loss: non-finite log-likelihood at batch index " + std::to_string(b));
  return tape.scale(tape.sum(marginal), Real(-1) / static_cast<Real>(v.rows()));
}

template ad::Value<float> dag_log_marginal(ad::Tape<float>&, const ad::Value<float>&, const ad::Value<float>&,
                                           const std::vector<std::vector<int>>&, TransitionNorm);
template ad::Value<double> dag_log_marginal(ad::Tape<double>&, const ad::Value<double>&, const ad::Value<double>&,
                                            const std::vector<std::vector<int>>&, TransitionNorm);
template ad::Value<long double> dag_log_marginal(ad::Tape<long double>&, const ad::Value<long double>&,
                                                 const ad::Value<long double>&, const std::vector<std::vector<int>>&,
                                                 TransitionNorm);
template ad::Value<float> gen_loss(ad::Tape<float>&, const model::ForwardPass<float>&,
                                   const std::vector<std::vector<int>>&, TransitionNorm);
template ad::Value<double> gen_loss(ad::Tape<double>&, const model::ForwardPass<double>&,
                                    const std::vector<std::vector<int>>&, TransitionNorm);
template ad::Value<long double> gen_loss(ad::Tape<long double>&, const model::ForwardPass<long double>&,
                                         const std::vector<std::vector<int>>&, TransitionNorm);

}  // namespace dagrank::dag
