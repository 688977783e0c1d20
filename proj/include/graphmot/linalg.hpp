#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace gmot {

// Dense row-major matrix. Double for all stateful math, float for the
// inference fast path.
template <typename R>
struct MatT {
  int rows = 0;
  int cols = 0;
  std::vector<R> a;

  MatT() = default;
  MatT(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, R(0)) {}

  R* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
  const R* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
  R& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  R operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  void zero() { std::fill(a.begin(), a.end(), R(0)); }
  bool empty() const { return rows == 0 || cols == 0; }

  bool all_finite() const {
    for (R v : a)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using Mat = MatT<double>;

// C += A * B. Streaming axpy form: the inner loop vectorizes and zero
// entries of A (post-ReLU activations) skip a full row pass.
template <typename R>
inline void gemm_nn(const MatT<R>& A, const MatT<R>& B, MatT<R>& C) {
  assert(A.cols == B.rows && A.rows == C.rows && B.cols == C.cols);
  const int M = A.rows, K = A.cols, N = B.cols;
  for (int i = 0; i < M; ++i) {
    const R* a = A.row(i);
    R* c = C.row(i);
    for (int k = 0; k < K; ++k) {
      const R av = a[k];
      if (av == R(0)) continue;
      const R* b = B.row(k);
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C (A.cols x B.cols) += A^T * B.
template <typename R>
inline void gemm_tn(const MatT<R>& A, const MatT<R>& B, MatT<R>& C) {
  assert(A.rows == B.rows && A.cols == C.rows && B.cols == C.cols);
  const int M = A.rows, K = A.cols, N = B.cols;
  for (int i = 0; i < M; ++i) {
    const R* x = A.row(i);
    const R* z = B.row(i);
    for (int k = 0; k < K; ++k) {
      const R av = x[k];
      if (av == R(0)) continue;
      R* c = C.row(k);
      for (int j = 0; j < N; ++j) c[j] += av * z[j];
    }
  }
}

template <typename R>
inline MatT<R> transposed(const MatT<R>& A) {
  MatT<R> T(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i) {
    const R* r = A.row(i);
    for (int j = 0; j < A.cols; ++j) T(j, i) = r[j];
  }
  return T;
}

inline Mat mat_mul(const Mat& A, const Mat& B) {
  Mat C(A.rows, B.cols);
  gemm_nn(A, B, C);
  return C;
}

inline void symmetrize(Mat& A) {
  assert(A.rows == A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = i + 1; j < A.cols; ++j) {
      const double v = 0.5 * (A(i, j) + A(j, i));
      A(i, j) = v;
      A(j, i) = v;
    }
}

// Lower-triangular Cholesky factor; nullopt when the matrix is not
// positive-definite.
inline std::optional<Mat> cholesky(const Mat& A) {
  assert(A.rows == A.cols);
  const int n = A.rows;
  Mat L(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = A(i, j);
      for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) return std::nullopt;
        L(i, i) = std::sqrt(s);
      } else {
        L(i, j) = s / L(j, j);
      }
    }
  }
  return L;
}

// Solves A x = b given the Cholesky factor L of A.
inline std::vector<double> chol_solve(const Mat& L, const std::vector<double>& b) {
  const int n = L.rows;
  assert(static_cast<int>(b.size()) == n);
  std::vector<double> y(n), x(n);
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= L(i, k) * y[k];
    y[i] = s / L(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < n; ++k) s -= L(k, i) * x[k];
    x[i] = s / L(i, i);
  }
  return x;
}

inline Mat chol_inverse(const Mat& L) {
  const int n = L.rows;
  Mat inv(n, n);
  std::vector<double> e(n, 0.0);
  for (int j = 0; j < n; ++j) {
    e[j] = 1.0;
    std::vector<double> col = chol_solve(L, e);
    for (int i = 0; i < n; ++i) inv(i, j) = col[i];
    e[j] = 0.0;
  }
  return inv;
}

inline double mat_trace(const Mat& A) {
  double t = 0;
  for (int i = 0; i < A.rows; ++i) t += A(i, i);
  return t;
}

}  // namespace gmot
