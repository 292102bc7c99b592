#pragma once

// Dense kernels sized for this project: tiny symmetric eigenproblems (4x4
// pencils), a register-tiled GEMM for network training, and CSR + CG for the
// assembled systems.
//
// Matrix storage is row-major with the row stride padded to a multiple of 8
// and the row count padded to a multiple of 4, padding kept at zero. The GEMM
// then runs a single 4x8 register tile over the padded extents with no edge
// cases: each output element is accumulated in ascending-k program order by
// one fixed instruction sequence, so results are bit-identical across batch
// sizes and thread counts (they may differ from a plain scalar loop by the
// compiler's per-step contraction choices).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <thread>
#include <vector>

#include "fcmstab/core.hpp"

namespace fcmstab {

// ---------------------------------------------------------------------------
// Small symmetric eigenproblems (n <= 8), cyclic Jacobi with accumulated
// rotations. Deterministic sweep order.

struct SymEig {
  int n = 0;
  std::array<double, 8> values{};            // descending
  std::array<double, 64> vectors{};          // column c = vectors[r*n + c]
};

inline SymEig jacobi_eig(const double* a_in, int n) {
  require(n >= 1 && n <= 8, Errc::bad_input, "jacobi_eig supports n in [1,8]");
  double a[64], v[64];
  for (int i = 0; i < n * n; ++i) a[i] = a_in[i];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) v[i * n + j] = i == j ? 1.0 : 0.0;

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (int p = 0; p < n; ++p) {
      diag += std::abs(a[p * n + p]);
      for (int q = p + 1; q < n; ++q) off += std::abs(a[p * n + q]);
    }
    if (off <= 1e-15 * (diag + off) || off == 0.0) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  SymEig out;
  out.n = n;
  int order[8];
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (a[order[j] * n + order[j]] > a[order[i] * n + order[i]]) std::swap(order[i], order[j]);
  for (int i = 0; i < n; ++i) {
    out.values[static_cast<size_t>(i)] = a[order[i] * n + order[i]];
    for (int r = 0; r < n; ++r) out.vectors[static_cast<size_t>(r * n + i)] = v[r * n + order[i]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Padded row-major dense matrices.

inline int pad4(int v) { return (v + 3) & ~3; }
inline int pad8(int v) { return (v + 7) & ~7; }

struct Mat {
  int rows = 0;
  int cols = 0;
  int rstride = 0;  // pad8(cols)
  std::vector<double> a;  // pad4(rows) * rstride, padding zero

  Mat() = default;
  Mat(int r, int c) { resize(r, c); }
  void resize(int r, int c) {
    rows = r;
    cols = c;
    rstride = pad8(c);
    a.assign(static_cast<size_t>(pad4(r)) * rstride, 0.0);
  }
  double* row(int i) { return a.data() + static_cast<size_t>(i) * rstride; }
  const double* row(int i) const { return a.data() + static_cast<size_t>(i) * rstride; }
  double& at(int i, int j) { return a[static_cast<size_t>(i) * rstride + j]; }
  double at(int i, int j) const { return a[static_cast<size_t>(i) * rstride + j]; }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

namespace detail {

// 4x8 register tile over [row_begin, row_end) of the padded row range.
inline void gemm_rows(const Mat& A, const Mat& B, Mat& C, int row_begin, int row_end) {
  const int k = A.cols;
  const int ns = C.rstride;
  for (int i = row_begin; i < row_end; i += 4) {
    const double* a0 = A.row(i);
    const double* a1 = A.row(i + 1);
    const double* a2 = A.row(i + 2);
    const double* a3 = A.row(i + 3);
    for (int j = 0; j < ns; j += 8) {
      double acc0[8] = {0}, acc1[8] = {0}, acc2[8] = {0}, acc3[8] = {0};
      const double* b = B.a.data() + j;
      for (int p = 0; p < k; ++p, b += ns) {
        const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        for (int t = 0; t < 8; ++t) {
          const double bt = b[t];
          acc0[t] += x0 * bt;
          acc1[t] += x1 * bt;
          acc2[t] += x2 * bt;
          acc3[t] += x3 * bt;
        }
      }
      std::memcpy(C.row(i) + j, acc0, sizeof acc0);
      std::memcpy(C.row(i + 1) + j, acc1, sizeof acc1);
      std::memcpy(C.row(i + 2) + j, acc2, sizeof acc2);
      std::memcpy(C.row(i + 3) + j, acc3, sizeof acc3);
    }
  }
}

}  // namespace detail

// C = A * B. B's row stride must equal C's (both pad8(n)); A supplies the k
// extent. Results are identical for any thread count.
inline void gemm(const Mat& A, const Mat& B, Mat& C, int threads = 1) {
  require(A.cols == B.rows && A.rows == C.rows && B.cols == C.cols, Errc::bad_input,
          "gemm shape mismatch");
  const int prows = pad4(C.rows);
  if (threads <= 1 || prows <= 8) {
    detail::gemm_rows(A, B, C, 0, prows);
    return;
  }
  const int blocks = prows / 4;
  const int per = (blocks + threads - 1) / threads;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    const int lo = t * per * 4;
    const int hi = std::min(prows, (t + 1) * per * 4);
    if (lo >= hi) break;
    pool.emplace_back([&A, &B, &C, lo, hi] { detail::gemm_rows(A, B, C, lo, hi); });
  }
  for (auto& th : pool) th.join();
}

inline Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
  return t;
}

// ---------------------------------------------------------------------------
// Sparse symmetric systems.

struct Csr {
  int n = 0;
  std::vector<int> ptr;
  std::vector<int> col;
  std::vector<double> val;

  void matvec(const double* x, double* y) const {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int k = ptr[static_cast<size_t>(i)]; k < ptr[static_cast<size_t>(i) + 1]; ++k)
        s += val[static_cast<size_t>(k)] * x[col[static_cast<size_t>(k)]];
      y[i] = s;
    }
  }
};

// Build CSR from (i, j, v) triplets; duplicates are summed in insertion order.
inline Csr csr_from_triplets(int n, std::vector<std::array<int, 2>>& idx,
                             std::vector<double>& vals) {
  // stable counting sort by row then column keeps accumulation deterministic
  const size_t m = idx.size();
  std::vector<size_t> order(m);
  for (size_t i = 0; i < m; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (idx[a][0] != idx[b][0]) return idx[a][0] < idx[b][0];
    return idx[a][1] < idx[b][1];
  });
  Csr out;
  out.n = n;
  out.ptr.assign(static_cast<size_t>(n) + 1, 0);
  int last_i = -1, last_j = -1;
  for (size_t s = 0; s < m; ++s) {
    const int i = idx[order[s]][0], j = idx[order[s]][1];
    const double v = vals[order[s]];
    if (i == last_i && j == last_j) {
      out.val.back() += v;
    } else {
      out.col.push_back(j);
      out.val.push_back(v);
      out.ptr[static_cast<size_t>(i) + 1]++;
      last_i = i;
      last_j = j;
    }
  }
  for (int i = 0; i < n; ++i) out.ptr[static_cast<size_t>(i) + 1] += out.ptr[static_cast<size_t>(i)];
  return out;
}

struct CgResult {
  std::vector<double> x;
  int iterations = 0;
  double rel_residual = 0.0;
};

// Conjugate gradients with Jacobi preconditioning. Relative residual is
// measured against ||b||.
inline CgResult jacobi_pcg(const Csr& A, const std::vector<double>& b, double rel_tol = 1e-10,
                           int max_iter = 0) {
  const int n = A.n;
  if (max_iter <= 0) max_iter = std::max(1000, 20 * n);
  std::vector<double> dinv(static_cast<size_t>(n), 1.0);
  for (int i = 0; i < n; ++i)
    for (int k = A.ptr[static_cast<size_t>(i)]; k < A.ptr[static_cast<size_t>(i) + 1]; ++k)
      if (A.col[static_cast<size_t>(k)] == i && A.val[static_cast<size_t>(k)] != 0.0)
        dinv[static_cast<size_t>(i)] = 1.0 / A.val[static_cast<size_t>(k)];

  CgResult res;
  res.x.assign(static_cast<size_t>(n), 0.0);
  std::vector<double> r = b, z(static_cast<size_t>(n)), p(static_cast<size_t>(n)),
      ap(static_cast<size_t>(n));
  double bnorm = 0.0;
  for (double v : b) bnorm += v * v;
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0.0) return res;

  for (int i = 0; i < n; ++i) z[static_cast<size_t>(i)] = dinv[static_cast<size_t>(i)] * r[static_cast<size_t>(i)];
  p = z;
  double rz = 0.0;
  for (int i = 0; i < n; ++i) rz += r[static_cast<size_t>(i)] * z[static_cast<size_t>(i)];

  for (int it = 1; it <= max_iter; ++it) {
    A.matvec(p.data(), ap.data());
    double pap = 0.0;
    for (int i = 0; i < n; ++i) pap += p[static_cast<size_t>(i)] * ap[static_cast<size_t>(i)];
    require(pap > 0.0 || rz == 0.0, Errc::no_convergence,
            "matrix not positive definite (understabilized?)");
    const double alpha = rz / pap;
    double rnorm = 0.0;
    for (int i = 0; i < n; ++i) {
      res.x[static_cast<size_t>(i)] += alpha * p[static_cast<size_t>(i)];
      r[static_cast<size_t>(i)] -= alpha * ap[static_cast<size_t>(i)];
      rnorm += r[static_cast<size_t>(i)] * r[static_cast<size_t>(i)];
    }
    rnorm = std::sqrt(rnorm);
    res.iterations = it;
    res.rel_residual = rnorm / bnorm;
    if (res.rel_residual <= rel_tol) return res;
    double rz_next = 0.0;
    for (int i = 0; i < n; ++i) {
      z[static_cast<size_t>(i)] = dinv[static_cast<size_t>(i)] * r[static_cast<size_t>(i)];
      rz_next += r[static_cast<size_t>(i)] * z[static_cast<size_t>(i)];
    }
    const double beta = rz_next / rz;
    rz = rz_next;
    for (int i = 0; i < n; ++i)
      p[static_cast<size_t>(i)] = z[static_cast<size_t>(i)] + beta * p[static_cast<size_t>(i)];
  }
  fail(Errc::no_convergence, "CG did not reach tolerance in " + std::to_string(max_iter) +
                                 " iterations (rel residual " + std::to_string(res.rel_residual) +
                                 ")");
}

}  // namespace fcmstab
