#pragma once

// Min-norm point in the convex hull of task gradients.
//
// The common descent direction is sum_i a_i g_i with a on the probability
// simplex minimizing a^T G a. The bordered KKT system gives the optimum when
// it lies inside the simplex; otherwise every face is tried and the best
// feasible face optimum wins.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtsgl/error.hpp"
#include "mtsgl/kernels.hpp"

namespace mtsgl {

struct GramMatrix {
  std::size_t n = 0;
  std::vector<double> entries;  // row-major n x n

  double operator()(std::size_t i, std::size_t j) const { return entries[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) { return entries[i * n + j]; }
};

inline GramMatrix gram(const std::vector<std::vector<double>>& grads) {
  detail::require(!grads.empty(), "gram", "need at least one gradient");
  const std::size_t len = grads.front().size();
  for (std::size_t i = 0; i < grads.size(); ++i)
    detail::require(grads[i].size() == len, "gram", "gradient ", i, " has length ",
                    grads[i].size(), ", expected ", len);
  GramMatrix g{grads.size(), std::vector<double>(grads.size() * grads.size())};
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = i; j < g.n; ++j)
      g(i, j) = g(j, i) = kernels::dot(grads[i].data(), grads[j].data(), len);
  return g;
}

namespace detail {

// Gaussian elimination with partial pivoting. Returns false when a pivot is
// negligible relative to the matrix scale.
inline bool solve_dense(std::vector<double> a, std::vector<double> b, std::size_t n,
                        std::vector<double>& x) {
  double scale = 0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0) return false;
  const double tol = 1e-12 * scale;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    if (std::abs(a[piv * n + c]) <= tol) return false;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      if (f == 0) continue;
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
      b[r] -= f * b[c];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t c = n; c-- > 0;) {
    double s = b[c];
    for (std::size_t k = c + 1; k < n; ++k) s -= a[c * n + k] * x[k];
    x[c] = s / a[c * n + c];
  }
  return true;
}

// Bordered system [[G_SS, 1], [1^T, 0]] [a; mu] = [0; 1] on index set `support`.
inline bool solve_bordered(const GramMatrix& g, const std::vector<std::size_t>& support,
                           std::vector<double>& a) {
  const std::size_t m = support.size(), n = m + 1;
  std::vector<double> k(n * n, 0.0), rhs(n, 0.0), x;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) k[i * n + j] = g(support[i], support[j]);
    k[i * n + m] = 1;
    k[m * n + i] = 1;
  }
  rhs[m] = 1;
  if (!solve_dense(std::move(k), std::move(rhs), n, x)) return false;
  a.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(m));
  return true;
}

inline double quad(const GramMatrix& g, const std::vector<double>& a) {
  double s = 0;
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.n; ++j) s += a[i] * g(i, j) * a[j];
  return s;
}

// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  return ev;
}

}  // namespace detail

/// Smallest eigenvalue is >= -tol * max(1, trace).
inline bool is_psd(const GramMatrix& g, double tol = 1e-8) {
  double trace = 0;
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(g(i, j) - g(j, i)) > tol * std::max(1.0, std::abs(g(i, j)))) return false;
    trace += g(i, i);
  }
  const auto ev = detail::symmetric_eigenvalues(g.entries, g.n);
  return *std::min_element(ev.begin(), ev.end()) >= -tol * std::max(1.0, trace);
}

struct ClosedForm {
  std::vector<double> a;
  /// Bordered system singular or some weight negative: use solve_simplex.
  bool needs_fallback = true;
};

/// Unconstrained-sign KKT solution over all tasks; sums to 1 when solvable.
inline ClosedForm solve_closed_form(const GramMatrix& g) {
  std::vector<std::size_t> all(g.n);
  for (std::size_t i = 0; i < g.n; ++i) all[i] = i;
  ClosedForm out;
  if (!detail::solve_bordered(g, all, out.a)) {
    out.a.clear();
    return out;
  }
  out.needs_fallback = std::any_of(out.a.begin(), out.a.end(), [](double v) { return v < 0; });
  return out;
}

enum class SolveMethod { closed_form, active_set };

inline const char* to_string(SolveMethod m) {
  return m == SolveMethod::closed_form ? "closed_form" : "active_set";
}

struct ParetoSolution {
  std::vector<double> a;
  double min_norm_sq = 0;
  SolveMethod method = SolveMethod::closed_form;
  GramMatrix gram;
};

inline constexpr std::size_t kMaxTasks = 8;

inline ParetoSolution solve_simplex(const GramMatrix& g) {
  detail::require(g.n >= 1 && g.n <= kMaxTasks, "solve_simplex", "task count ", g.n,
                  " outside [1, ", kMaxTasks, "]");
  detail::require(g.entries.size() == g.n * g.n, "solve_simplex", "Gram matrix has ",
                  g.entries.size(), " entries for n = ", g.n);
  detail::require(is_psd(g), "solve_simplex", "Gram matrix is not positive semidefinite");

  // Solve on G / trace so the pivot and tie tolerances do not depend on the
  // gradient scale; the argmin is unchanged.
  double trace = 0;
  for (std::size_t i = 0; i < g.n; ++i) trace += g(i, i);
  GramMatrix gn = g;
  if (trace > 0)
    for (double& v : gn.entries) v /= trace;

  auto finish = [&](std::vector<double> a, SolveMethod m) {
    for (double& v : a) v = std::max(v, 0.0);
    double s = 0;
    for (double v : a) s += v;
    for (double& v : a) v /= s;
    const double q = detail::quad(g, a);
    return ParetoSolution{std::move(a), std::max(q, 0.0), m, g};
  };

  const ClosedForm cf = solve_closed_form(gn);
  if (!cf.needs_fallback) return finish(cf.a, SolveMethod::closed_form);

  const double tie = 1e-12;
  constexpr double kFeasible = -1e-12;

  // Supports by size, then lexicographically by index list.
  std::vector<std::uint32_t> supports;
  for (std::uint32_t s = 1; s < (1u << g.n); ++s) supports.push_back(s);
  auto members = [&](std::uint32_t s) {
    std::vector<std::size_t> m;
    for (std::size_t i = 0; i < g.n; ++i)
      if (s >> i & 1u) m.push_back(i);
    return m;
  };
  std::stable_sort(supports.begin(), supports.end(), [&](std::uint32_t x, std::uint32_t y) {
    const int px = std::popcount(x), py = std::popcount(y);
    if (px != py) return px < py;
    return members(x) < members(y);
  });

  std::vector<double> best;
  double best_q = 0;
  for (std::uint32_t s : supports) {
    const auto m = members(s);
    std::vector<double> sub;
    if (!detail::solve_bordered(gn, m, sub)) continue;
    if (std::any_of(sub.begin(), sub.end(), [](double v) { return v < kFeasible; })) continue;
    std::vector<double> a(g.n, 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) a[m[i]] = std::max(sub[i], 0.0);
    const double q = detail::quad(gn, a);
    if (best.empty() || q < best_q - tie) {
      best = std::move(a);
      best_q = q;
    }
  }
  // Singletons always solve, so a candidate exists.
  return finish(std::move(best), SolveMethod::active_set);
}

inline std::vector<double> combine_direction(const std::vector<std::vector<double>>& grads,
                                             const std::vector<double>& a) {
  detail::require(!grads.empty() && grads.size() == a.size(), "combine_direction",
                  grads.size(), " gradients for ", a.size(), " weights");
  const std::size_t len = grads.front().size();
  std::vector<double> out(len, 0.0);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    detail::require(grads[i].size() == len, "combine_direction", "gradient ", i,
                    " has length ", grads[i].size(), ", expected ", len);
    kernels::axpy(a[i], grads[i].data(), out.data(), len);
  }
  return out;
}

/// Zero lies (numerically) in the convex hull: |sum a_i g_i|^2 <= tol.
inline bool is_pareto_stationary(const GramMatrix& g, const std::vector<double>& a,
                                 double tol) {
  detail::require(a.size() == g.n, "is_pareto_stationary", a.size(), " weights for n = ", g.n);
  return detail::quad(g, a) <= tol;
}

}  // namespace mtsgl
