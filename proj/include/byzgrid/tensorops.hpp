#pragma once

// Dense tensor algebra: unfolding, mode products, Kronecker chains, the
// multi-way delay embedding along the last mode, finite differencing and the
// orthogonal Procrustes factor.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "byzgrid/errors.hpp"

namespace byzgrid::tensor {

/// Row-major dense tensor: the last index varies fastest.
struct DenseTensor {
  std::vector<int> dims;
  std::vector<double> data;

  DenseTensor() = default;
  explicit DenseTensor(std::vector<int> d, double fill = 0.0) : dims(std::move(d)) {
    if (dims.empty()) throw DimError("a tensor needs at least one mode");
    data.assign(count(dims), fill);
  }

  static std::size_t count(const std::vector<int>& d) {
    std::size_t n = 1;
    for (int k : d) {
      if (k < 0) throw DimError("negative dimension");
      n *= static_cast<std::size_t>(k);
    }
    return n;
  }
  int order() const { return static_cast<int>(dims.size()); }
  std::size_t size() const { return data.size(); }

  std::size_t offset(std::span<const int> idx) const {
    std::size_t off = 0;
    for (std::size_t k = 0; k < dims.size(); ++k) off = off * dims[k] + idx[k];
    return off;
  }
  double& operator()(std::initializer_list<int> idx) { return data[offset({idx.begin(), idx.size()})]; }
  double operator()(std::initializer_list<int> idx) const { return data[offset({idx.begin(), idx.size()})]; }

  double norm() const {
    double s = 0;
    for (double v : data) s += v * v;
    return std::sqrt(s);
  }
  bool operator==(const DenseTensor&) const = default;

  static DenseTensor from_matrix(const Eigen::MatrixXd& m) {
    DenseTensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) t.data[i * m.cols() + j] = m(i, j);
    return t;
  }
  Eigen::MatrixXd to_matrix() const {
    if (dims.size() != 2) throw DimError("not a matrix");
    Eigen::MatrixXd m(dims[0], dims[1]);
    for (int i = 0; i < dims[0]; ++i)
      for (int j = 0; j < dims[1]; ++j) m(i, j) = data[static_cast<std::size_t>(i) * dims[1] + j];
    return m;
  }
};

inline DenseTensor operator+(const DenseTensor& a, const DenseTensor& b) {
  if (a.dims != b.dims) throw DimError("tensor shapes differ");
  DenseTensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}
inline DenseTensor operator-(const DenseTensor& a, const DenseTensor& b) {
  if (a.dims != b.dims) throw DimError("tensor shapes differ");
  DenseTensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
  return c;
}
inline DenseTensor operator*(double s, const DenseTensor& a) {
  DenseTensor c = a;
  for (double& v : c.data) v *= s;
  return c;
}

namespace detail {

inline void check_mode(const DenseTensor& t, int n) {
  if (n < 0 || n >= t.order())
    throw ModeError("mode " + std::to_string(n) + " out of range for an order-" +
                    std::to_string(t.order()) + " tensor");
}

// Visits every multi-index of `dims` in row-major order.
inline void for_each_index(const std::vector<int>& dims, const std::function<void(const std::vector<int>&)>& f) {
  if (DenseTensor::count(dims) == 0) return;
  std::vector<int> idx(dims.size(), 0);
  while (true) {
    f(idx);
    int k = static_cast<int>(dims.size()) - 1;
    while (k >= 0 && ++idx[k] == dims[k]) idx[k--] = 0;
    if (k < 0) return;
  }
}

// Column of the mode-n unfolding: remaining indices with the lowest mode
// varying fastest.
inline Eigen::Index unfold_column(const std::vector<int>& dims, const std::vector<int>& idx, int n) {
  Eigen::Index col = 0, stride = 1;
  for (int k = 0; k < static_cast<int>(dims.size()); ++k) {
    if (k == n) continue;
    col += idx[k] * stride;
    stride *= dims[k];
  }
  return col;
}

}  // namespace detail

/// Mode-n unfolding (0-based mode): rows follow mode n, columns enumerate the
/// remaining modes with the lowest mode varying fastest.
inline Eigen::MatrixXd unfold(const DenseTensor& t, int n) {
  detail::check_mode(t, n);
  const Eigen::Index cols = static_cast<Eigen::Index>(t.size() / std::max(1, t.dims[n]));
  Eigen::MatrixXd m(t.dims[n], t.dims[n] ? cols : 0);
  std::size_t flat = 0;
  detail::for_each_index(t.dims, [&](const std::vector<int>& idx) {
    m(idx[n], detail::unfold_column(t.dims, idx, n)) = t.data[flat++];
  });
  return m;
}

inline DenseTensor fold(const Eigen::MatrixXd& m, int n, const std::vector<int>& dims) {
  DenseTensor t(dims);
  detail::check_mode(t, n);
  if (m.rows() != dims[n] || static_cast<std::size_t>(m.size()) != t.size())
    throw DimError("matrix shape does not match the tensor dims");
  std::size_t flat = 0;
  detail::for_each_index(dims, [&](const std::vector<int>& idx) {
    t.data[flat++] = m(idx[n], detail::unfold_column(dims, idx, n));
  });
  return t;
}

/// t x_n A: replaces dimension n by rows(A).
inline DenseTensor mode_product(const DenseTensor& t, const Eigen::MatrixXd& A, int n) {
  detail::check_mode(t, n);
  if (A.cols() != t.dims[n]) throw DimError("mode product: columns of A must equal dims[n]");
  std::vector<int> d = t.dims;
  d[n] = static_cast<int>(A.rows());
  return fold(A * unfold(t, n), n, d);
}

/// Kronecker product A_N (x) ... (x) A_1 of all factors except `skip`,
/// highest mode first. An empty product is the 1x1 identity.
inline Eigen::MatrixXd kron_chain(std::span<const Eigen::MatrixXd> factors, std::optional<int> skip = std::nullopt) {
  if (factors.empty()) throw DimError("kron_chain needs at least one factor");
  if (skip && (*skip < 0 || *skip >= static_cast<int>(factors.size())))
    throw DimError("skip index out of range");
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(1, 1);
  for (int k = static_cast<int>(factors.size()) - 1; k >= 0; --k) {
    if (skip && k == *skip) continue;
    const Eigen::MatrixXd& B = factors[k];
    Eigen::MatrixXd next(out.rows() * B.rows(), out.cols() * B.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j)
        next.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = out(i, j) * B;
    out = std::move(next);
  }
  return out;
}

struct MDTConfig {
  int tau = 1;
};

/// Multi-way delay embedding along the last mode:
/// [..., k] -> [..., tau, k - tau + 1], entry (..., a, b) = series(..., a + b).
inline DenseTensor mdt(const DenseTensor& s, const MDTConfig& cfg) {
  const int k = s.dims.back();
  if (cfg.tau < 1 || cfg.tau > k) throw LengthError("embedding length must lie in [1, series length]");
  const int kh = k - cfg.tau + 1;
  std::vector<int> d(s.dims.begin(), s.dims.end() - 1);
  const std::size_t outer = DenseTensor::count(d);
  d.push_back(cfg.tau);
  d.push_back(kh);
  DenseTensor h(d);
  for (std::size_t o = 0; o < outer; ++o)
    for (int a = 0; a < cfg.tau; ++a)
      for (int b = 0; b < kh; ++b)
        h.data[(o * cfg.tau + a) * kh + b] = s.data[o * k + a + b];
  return h;
}

/// Inverse embedding by averaging all cells that map to the same time.
inline DenseTensor inverse_mdt(const DenseTensor& h, const MDTConfig& cfg) {
  if (h.order() < 2 || h.dims[h.order() - 2] != cfg.tau)
    throw ShapeError("expected a Hankel block with trailing dims (tau, k_hat)");
  const int kh = h.dims.back();
  const int k = cfg.tau + kh - 1;
  std::vector<int> d(h.dims.begin(), h.dims.end() - 2);
  const std::size_t outer = DenseTensor::count(d);
  d.push_back(k);
  DenseTensor s(d);
  std::vector<int> hits(k, 0);
  for (int a = 0; a < cfg.tau; ++a)
    for (int b = 0; b < kh; ++b) ++hits[a + b];
  for (std::size_t o = 0; o < outer; ++o) {
    for (int a = 0; a < cfg.tau; ++a)
      for (int b = 0; b < kh; ++b) s.data[o * k + a + b] += h.data[(o * cfg.tau + a) * kh + b];
    for (int t = 0; t < k; ++t) s.data[o * k + t] /= hits[t];
  }
  return s;
}

namespace detail {
inline double binom(int n, int k) {
  double r = 1;
  for (int j = 1; j <= k; ++j) r = r * (n - k + j) / j;
  return r;
}
}  // namespace detail

/// d-fold finite differences along the sequence index.
template <class T>
std::vector<T> difference(const std::vector<T>& seq, int d) {
  if (d < 0) throw LengthError("negative differencing order");
  if (static_cast<int>(seq.size()) <= d) throw LengthError("sequence too short to difference");
  std::vector<T> cur = seq;
  for (int r = 0; r < d; ++r) {
    std::vector<T> next;
    next.reserve(cur.size() - 1);
    for (std::size_t t = 1; t < cur.size(); ++t) next.push_back(cur[t] - cur[t - 1]);
    cur = std::move(next);
  }
  return cur;
}

/// Next level value from its d-th difference and the last d level values:
/// x_t = diff_t - sum_{j=1..d} (-1)^j C(d,j) x_{t-j}. `last` is oldest first.
template <class T>
T undifference_step(const T& diff, std::span<const T> last, int d) {
  if (static_cast<int>(last.size()) < d) throw LengthError("need d previous values");
  T x = diff;
  for (int j = 1; j <= d; ++j) {
    const double c = ((j % 2) ? 1.0 : -1.0) * detail::binom(d, j);
    x = x + c * last[last.size() - j];
  }
  return x;
}

/// Inverse of `difference` given the first d values of the original sequence.
template <class T>
std::vector<T> integrate(const std::vector<T>& diffs, int d, const std::vector<T>& initial) {
  if (static_cast<int>(initial.size()) != d) throw LengthError("need exactly d initial values");
  std::vector<T> out = initial;
  for (const T& df : diffs) {
    T next = undifference_step<T>(df, std::span<const T>(out), d);
    out.push_back(std::move(next));
  }
  return out;
}

/// Maximiser of trace(A'C) over A with orthonormal columns: U V'.
inline Eigen::MatrixXd procrustes_factor(const Eigen::MatrixXd& C) {
  if (!C.allFinite()) throw ConvergenceError("non-finite Procrustes input");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::MatrixXd A = svd.matrixU() * svd.matrixV().transpose();
  if (!A.allFinite()) throw ConvergenceError("SVD failed");
  return A;
}

/// Leading r left singular vectors.
inline Eigen::MatrixXd leading_left_vectors(const Eigen::MatrixXd& m, int r) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  Eigen::MatrixXd U = svd.matrixU().leftCols(std::min<Eigen::Index>(r, svd.matrixU().cols()));
  if (U.cols() < r) {  // pad with an orthonormal complement
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(U);
    Eigen::MatrixXd full = qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.rows());
    Eigen::MatrixXd out(m.rows(), r);
    out << U, full.middleCols(U.cols(), r - U.cols());
    return out;
  }
  return U;
}

/// Truncated higher-order SVD: factors of the given ranks.
inline std::vector<Eigen::MatrixXd> hosvd(const DenseTensor& t, std::span<const int> ranks) {
  if (static_cast<int>(ranks.size()) != t.order()) throw DimError("one rank per mode required");
  std::vector<Eigen::MatrixXd> f;
  for (int n = 0; n < t.order(); ++n) f.push_back(leading_left_vectors(unfold(t, n), ranks[n]));
  return f;
}

/// Core G = t x_1 A_1' ... x_N A_N'.
inline DenseTensor project_core(const DenseTensor& t, std::span<const Eigen::MatrixXd> factors) {
  DenseTensor g = t;
  for (int n = 0; n < t.order(); ++n) g = mode_product(g, factors[n].transpose(), n);
  return g;
}

/// t = G x_1 A_1 ... x_N A_N.
inline DenseTensor reconstruct(const DenseTensor& core, std::span<const Eigen::MatrixXd> factors) {
  DenseTensor t = core;
  for (int n = 0; n < core.order(); ++n) t = mode_product(t, factors[n], n);
  return t;
}

}  // namespace byzgrid::tensor
