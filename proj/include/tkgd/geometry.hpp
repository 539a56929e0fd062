#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tkgd/errors.hpp"
#include "tkgd/numkit/tape.hpp"

namespace tkgd::geometry {

// Points are kept at norm <= 1 - kBallMargin.
inline constexpr double kBallMargin = 1e-5;
// Norms within this of the margin sphere count as on it, so projecting a
// projected point is exact.
inline constexpr double kProjectionSlack = 1e-12;

enum class Space { poincare, euclidean };

inline const char* space_name(Space s) { return s == Space::poincare ? "poincare" : "euclidean"; }

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline void check_same_dim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("distance between vectors of dimension " + std::to_string(a.size()) +
                         " and " + std::to_string(b.size()));
}

// Rescales onto the sphere of radius 1 - margin when the norm reaches it.
inline std::vector<double> project_to_ball(std::span<const double> v, double margin = kBallMargin) {
  std::vector<double> out(v.begin(), v.end());
  const double limit = 1.0 - margin;
  const double norm = std::sqrt(squared_norm(v));
  if (norm > limit + kProjectionSlack) {
    const double c = limit / norm;
    for (double& x : out) x *= c;
  }
  return out;
}

inline void project_rows_in_place(Tensor& table, double margin = kBallMargin) {
  for (std::size_t i = 0; i < table.rows(); ++i) {
    auto row = table.row(i);
    const auto projected = project_to_ball(row, margin);
    std::copy(projected.begin(), projected.end(), row.begin());
  }
}

namespace detail {

struct PoincareTerms {
  double alpha;  // 1 - |u|^2
  double beta;   // 1 - |v|^2
  double delta;  // |u - v|^2
  double x;      // 2 delta / (alpha beta); distance = acosh(1 + x)
};

inline PoincareTerms poincare_terms(const double* u, const double* v, std::size_t d) {
  double uu = 0.0, vv = 0.0, delta = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    uu += u[k] * u[k];
    vv += v[k] * v[k];
    const double diff = u[k] - v[k];
    delta += diff * diff;
  }
  const double alpha = 1.0 - uu, beta = 1.0 - vv;
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw DomainError("poincare_distance: point outside the open unit ball");
  double x = 2.0 * delta / (alpha * beta);
  if (x < 0.0) x = 0.0;
  return {alpha, beta, delta, x};
}

// acosh(1 + x) without cancellation near x = 0.
inline double acosh1p(double x) { return std::log1p(x + std::sqrt(x * (x + 2.0))); }

}  // namespace detail

inline double poincare_distance(std::span<const double> s, std::span<const double> o) {
  check_same_dim(s, o);
  return detail::acosh1p(detail::poincare_terms(s.data(), o.data(), s.size()).x);
}

inline double euclidean_distance(std::span<const double> s, std::span<const double> o) {
  check_same_dim(s, o);
  double delta = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) delta += (s[k] - o[k]) * (s[k] - o[k]);
  return std::sqrt(delta);
}

inline double distance(Space space, std::span<const double> s, std::span<const double> o) {
  return space == Space::poincare ? poincare_distance(s, o) : euclidean_distance(s, o);
}

// ---------------------------------------------------------------------------
// Taped variants
// ---------------------------------------------------------------------------

// Row-wise projection onto the ball, differentiable.
inline Var project_rows_to_ball(const Var& a, double margin = kBallMargin) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw DimensionError("project_rows_to_ball expects a matrix");
  const std::size_t m = A.shape()[0], d = A.shape()[1];
  const double limit = 1.0 - margin;
  Tensor out = A;
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    norms[i] = std::sqrt(squared_norm(A.row(i)));
    if (norms[i] > limit + kProjectionSlack)
      for (double& x : out.row(i)) x *= limit / norms[i];
  }
  return a.tape().record(std::move(out), {a}, [a, norms = std::move(norms), limit, m, d](Tape& tape, const Tensor& g) {
    const Tensor& A = a.value();
    Tensor& G = tape.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      if (norms[i] <= limit + kProjectionSlack) {
        for (std::size_t k = 0; k < d; ++k) G(i, k) += g(i, k);
        continue;
      }
      const double n = norms[i];
      double vg = 0.0;
      for (std::size_t k = 0; k < d; ++k) vg += A(i, k) * g(i, k);
      for (std::size_t k = 0; k < d; ++k)
        G(i, k) += (limit / n) * (g(i, k) - A(i, k) * vg / (n * n));
    }
  }, "project_rows_to_ball");
}

// out(i, j) = distance(S row i, O row j). The gradient at coincident points
// is defined as zero.
inline Var pairwise_distance(Space space, const Var& S, const Var& O) {
  const Tensor& A = S.value();
  const Tensor& B = O.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[1])
    throw DimensionError("pairwise_distance: incompatible shapes " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
  const std::size_t m = A.shape()[0], n = B.shape()[0], d = A.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (space == Space::poincare) {
        out(i, j) = detail::acosh1p(detail::poincare_terms(&A(i, 0), &B(j, 0), d).x);
      } else {
        double delta = 0.0;
        for (std::size_t k = 0; k < d; ++k) delta += (A(i, k) - B(j, k)) * (A(i, k) - B(j, k));
        out(i, j) = std::sqrt(delta);
      }
    }
  const char* name = space == Space::poincare ? "poincare_distance" : "euclidean_distance";
  return S.tape().record(std::move(out), {S, O}, [space, S, O, m, n, d](Tape& tape, const Tensor& g) {
    const Tensor& A = S.value();
    const Tensor& B = O.value();
    const bool gs = tape.requires_grad(S), go = tape.requires_grad(O);
    Tensor* GS = gs ? &tape.grad_buffer(S) : nullptr;
    Tensor* GO = go ? &tape.grad_buffer(O) : nullptr;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        const double* u = &A(i, 0);
        const double* v = &B(j, 0);
        if (space == Space::poincare) {
          const auto t = detail::poincare_terms(u, v, d);
          if (t.delta == 0.0 || t.x == 0.0) continue;
          // d = acosh(1 + x), x = 2 delta / (alpha beta)
          const double dd_dx = 1.0 / std::sqrt(t.x * (t.x + 2.0));
          const double c = gij * dd_dx * 2.0 / (t.alpha * t.beta);
          for (std::size_t k = 0; k < d; ++k) {
            const double diff = u[k] - v[k];
            if (gs) (*GS)(i, k) += c * (2.0 * diff + 2.0 * t.delta * u[k] / t.alpha);
            if (go) (*GO)(j, k) += c * (-2.0 * diff + 2.0 * t.delta * v[k] / t.beta);
          }
        } else {
          double delta = 0.0;
          for (std::size_t k = 0; k < d; ++k) delta += (u[k] - v[k]) * (u[k] - v[k]);
          if (delta == 0.0) continue;
          const double c = gij / std::sqrt(delta);
          for (std::size_t k = 0; k < d; ++k) {
            const double diff = u[k] - v[k];
            if (gs) (*GS)(i, k) += c * diff;
            if (go) (*GO)(j, k) -= c * diff;
          }
        }
      }
  }, name);
}

namespace detail {

inline Var as_row(const Var& v) {
  const Shape& s = v.shape();
  if (s.size() == 1) return reshape(v, Shape{1, s[0]});
  if (s.size() == 2 && s[0] == 1) return v;
  throw DimensionError("expected a vector, got " + shape_str(s));
}

}  // namespace detail

inline Var poincare_distance(const Var& s, const Var& o) {
  if (s.value().size() != o.value().size())
    throw DimensionError("poincare_distance: dimension mismatch " + shape_str(s.shape()) + " vs " +
                         shape_str(o.shape()));
  return reshape(pairwise_distance(Space::poincare, detail::as_row(s), detail::as_row(o)), Shape{});
}

inline Var euclidean_distance(const Var& s, const Var& o) {
  if (s.value().size() != o.value().size())
    throw DimensionError("euclidean_distance: dimension mismatch " + shape_str(s.shape()) + " vs " +
                         shape_str(o.shape()));
  return reshape(pairwise_distance(Space::euclidean, detail::as_row(s), detail::as_row(o)), Shape{});
}

}  // namespace tkgd::geometry
