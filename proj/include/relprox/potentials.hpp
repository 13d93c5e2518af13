#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "relprox/batch.hpp"
#include "relprox/matrix.hpp"

namespace relprox {

// Record of every branch decision made during one loss evaluation (Huber
// branch, norm guards, mining picks). Finite-difference checks evaluate the
// loss at x, x+h, x-h and exclude a coordinate when the three traces differ:
// the perturbation crossed a nondifferentiable point, so the central
// difference is meaningless there. Each evaluation pushes marks in a fixed
// order and count, so traces are comparable element-wise.
struct BranchTrace {
  std::vector<std::int32_t> marks;
  // When > 0, Huber terms also record whether the residual sits within this
  // window of the kink at |r| = delta, making the exclusion conservative
  // around the kink (points within ~10h of it are skipped once the
  // perturbation moves them across the window edge or the kink itself).
  double huber_kink_window = 0.0;

  void push(std::int32_t m) { marks.push_back(m); }
};

inline bool same_trace(const BranchTrace& a, const BranchTrace& b) {
  return a.marks == b.marks;
}

// ---------------------------------------------------------------------------
// Huber coupling h_delta(p, q) on the residual r = p - q:
//   |r| <= delta : 0.5 r^2
//   otherwise    : delta * (|r| - 0.5 delta)

struct HuberResult {
  double value = 0.0;
  double dp = 0.0;  // d/dp
  double dq = 0.0;  // d/dq
};

inline HuberResult huber(double p, double q, double delta = 1.0,
                         BranchTrace* trace = nullptr) {
  const double r = p - q;
  const double ar = std::fabs(r);
  HuberResult out;
  std::int32_t branch;
  if (ar <= delta) {
    out.value = 0.5 * r * r;
    out.dp = r;
    branch = 0;
  } else {
    out.value = delta * (ar - 0.5 * delta);
    out.dp = r > 0 ? delta : -delta;
    branch = r > 0 ? 1 : -1;
  }
  out.dq = -out.dp;
  if (trace) {
    const bool near_kink =
        trace->huber_kink_window > 0.0 && std::fabs(ar - delta) < trace->huber_kink_window;
    trace->push(branch * 4 + (near_kink ? 1 : 0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distance-wise potential: phi_D(x_i, x_j) = ||x_i - x_j|| / mu.
// The normalizer mu is supplied by the caller (batch statistic); its own
// gradient, when wanted, is handled by the caller. A coincident pair
// (||x_i - x_j|| <= eps) yields 0 with zero gradient.

inline double phi_d(std::span<const double> xi, std::span<const double> xj, double mu,
                    BranchTrace* trace = nullptr) {
  const double n = distance(xi, xj);
  if (n <= kNormEpsilon) {
    if (trace) trace->push(1);
    return 0.0;
  }
  if (trace) trace->push(0);
  return n / mu;
}

// Accumulates d(phi)/d(x_i) and d(phi)/d(x_j) scaled by `coeff` into gxi/gxj,
// returns the potential value and, via *dist_out, the raw distance.
inline double phi_d_grad(std::span<const double> xi, std::span<const double> xj, double mu,
                         double coeff, std::span<double> gxi, std::span<double> gxj,
                         double* dist_out = nullptr, BranchTrace* trace = nullptr) {
  const double n = distance(xi, xj);
  if (dist_out) *dist_out = n;
  if (n <= kNormEpsilon) {
    if (trace) trace->push(1);
    return 0.0;
  }
  if (trace) trace->push(0);
  const double a = coeff / (n * mu);
  for (std::size_t c = 0; c < xi.size(); ++c) {
    const double d = xi[c] - xj[c];
    gxi[c] += a * d;
    gxj[c] -= a * d;
  }
  return n / mu;
}

// ---------------------------------------------------------------------------
// Angle-wise potential: phi_A(x_i, x_j, x_k) = cos of the angle at the middle
// vertex x_j, i.e. cosine between (x_i - x_j) and (x_k - x_j). Degenerate legs
// fall under the cosine norm guard.

inline double phi_a(std::span<const double> xi, std::span<const double> xj,
                    std::span<const double> xk, BranchTrace* trace = nullptr) {
  const std::size_t d = xi.size();
  std::vector<double> u(d), v(d);
  for (std::size_t c = 0; c < d; ++c) {
    u[c] = xi[c] - xj[c];
    v[c] = xk[c] - xj[c];
  }
  bool guarded = false;
  const double s = detail::cosine_value(u, v, &guarded);
  if (trace) trace->push(guarded ? 1 : 0);
  return s;
}

// Accumulates coeff * d(phi_A)/d(x_*) into the three gradient spans; uses the
// provided scratch buffers (each of size d) to stay allocation-free in loops.
struct PhiAScratch {
  std::vector<double> u, v, gu, gv;
  void resize(std::size_t d) {
    u.resize(d);
    v.resize(d);
    gu.resize(d);
    gv.resize(d);
  }
};

inline double phi_a_grad(std::span<const double> xi, std::span<const double> xj,
                         std::span<const double> xk, double coeff, std::span<double> gxi,
                         std::span<double> gxj, std::span<double> gxk, PhiAScratch& scratch,
                         BranchTrace* trace = nullptr) {
  const std::size_t d = xi.size();
  scratch.resize(d);
  for (std::size_t c = 0; c < d; ++c) {
    scratch.u[c] = xi[c] - xj[c];
    scratch.v[c] = xk[c] - xj[c];
  }
  bool guarded = false;
  const double s = detail::cosine_grad(scratch.u, scratch.v, scratch.gu, scratch.gv, &guarded);
  if (trace) trace->push(guarded ? 1 : 0);
  if (guarded) return 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    gxi[c] += coeff * scratch.gu[c];
    gxk[c] += coeff * scratch.gv[c];
    gxj[c] -= coeff * (scratch.gu[c] + scratch.gv[c]);
  }
  return s;
}

// Numerically stable softplus and logistic sigmoid.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace relprox
