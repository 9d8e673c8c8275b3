#include "feddag/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "feddag/random.hpp"

namespace feddag {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw std::invalid_argument("matrix data size mismatch");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn shape mismatch");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Matrix OrthonormalBasis::projector() const { return matmul(vectors, vectors.transpose()); }

namespace {

using Columns = std::vector<std::vector<double>>;

Columns to_columns(const Matrix& m) {
  Columns cols(m.cols(), std::vector<double>(m.rows()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) cols[c][r] = m(r, c);
  return cols;
}

// Orthogonalizes the columns of `b` in place by plane rotations, accumulating
// them into `v` (k×k, column-major as Columns).
void hestenes(Columns& b, Columns& v) {
  const std::size_t k = b.size();
  v.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) v[i][i] = 1.0;
  if (k < 2) return;
  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 80;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        auto& bp = b[p];
        auto& bq = b[q];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < bp.size(); ++r) {
          alpha += bp[r] * bp[r];
          beta += bq[r] * bq[r];
          gamma += bp[r] * bq[r];
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < bp.size(); ++r) {
          const double x = bp[r], y = bq[r];
          bp[r] = c * x - s * y;
          bq[r] = s * x + c * y;
        }
        auto& vp = v[p];
        auto& vq = v[q];
        for (std::size_t r = 0; r < k; ++r) {
          const double x = vp[r], y = vq[r];
          vp[r] = c * x - s * y;
          vq[r] = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }
}

// Fills columns flagged as missing with unit vectors orthogonal to the rest,
// taken from the standard basis by Gram-Schmidt (two passes).
void complete_orthonormal(Columns& u, const std::vector<bool>& missing) {
  const std::size_t dim = u.empty() ? 0 : u[0].size();
  std::size_t next_e = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    if (!missing[j]) continue;
    while (next_e < dim) {
      std::vector<double> cand(dim, 0.0);
      cand[next_e++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < u.size(); ++i) {
          if (i == j || (missing[i] && i > j)) continue;
          const double proj = dot(cand, u[i]);
          for (std::size_t r = 0; r < dim; ++r) cand[r] -= proj * u[i][r];
        }
      }
      const double n = norm2(cand);
      if (n > 1e-6) {
        for (auto& x : cand) x /= n;
        u[j] = std::move(cand);
        break;
      }
    }
  }
}

void fix_sign(std::vector<double>& v) {
  for (double x : v) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0)
        for (auto& y : v) y = -y;
      return;
    }
  }
}

Matrix from_columns(const Columns& cols, std::size_t rows) {
  Matrix m(rows, cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 0; r < rows; ++r) m(r, c) = cols[c][r];
  return m;
}

}  // namespace

ThinSvd jacobi_svd(const Matrix& m) {
  const std::size_t rows = m.rows(), cols = m.cols();
  if (rows == 0 || cols == 0) return {};
  Columns u;
  std::vector<double> s;
  if (rows >= cols) {
    Columns b = to_columns(m);
    Columns v;
    hestenes(b, v);
    s.resize(cols);
    for (std::size_t j = 0; j < cols; ++j) s[j] = norm2(b[j]);
    u = std::move(b);
  } else {
    // Work on mᵀ: its right singular vectors are the left vectors of m.
    Columns b = to_columns(m.transpose());
    Columns v;
    hestenes(b, v);
    s.resize(rows);
    for (std::size_t j = 0; j < rows; ++j) s[j] = norm2(b[j]);
    u = std::move(v);
    // v columns are unit; scale them so the shared normalization below applies.
    for (std::size_t j = 0; j < rows; ++j) {
      for (auto& x : u[j]) x *= s[j];
    }
  }
  const std::size_t k = s.size();
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  Columns su(k);
  std::vector<double> ss(k);
  for (std::size_t i = 0; i < k; ++i) {
    su[i] = std::move(u[order[i]]);
    ss[i] = s[order[i]];
  }
  const double smax = ss.empty() ? 0.0 : ss[0];
  const double cutoff = std::max(smax, 1.0) * 1e-13;
  std::vector<bool> missing(k, false);
  bool any_missing = false;
  for (std::size_t i = 0; i < k; ++i) {
    if (ss[i] <= cutoff) {
      missing[i] = true;
      any_missing = true;
    } else {
      for (auto& x : su[i]) x /= ss[i];
    }
  }
  if (any_missing) complete_orthonormal(su, missing);
  return {from_columns(su, rows), std::move(ss)};
}

std::vector<double> singular_values(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) return {};
  Columns b = m.rows() >= m.cols() ? to_columns(m) : to_columns(m.transpose());
  Columns v;
  hestenes(b, v);
  std::vector<double> s(b.size());
  for (std::size_t j = 0; j < b.size(); ++j) s[j] = norm2(b[j]);
  std::sort(s.begin(), s.end(), std::greater<>());
  return s;
}

namespace {

// Modified Gram-Schmidt on the columns of y; drops nothing, rank-deficient
// columns are completed from the standard basis.
Matrix orthonormalize_columns(const Matrix& y) {
  Columns cols = to_columns(y);
  std::vector<bool> missing(cols.size(), false);
  bool any = false;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        if (missing[i]) continue;
        const double proj = dot(cols[j], cols[i]);
        for (std::size_t r = 0; r < cols[j].size(); ++r) cols[j][r] -= proj * cols[i][r];
      }
    }
    const double n = norm2(cols[j]);
    if (n <= 1e-12) {
      missing[j] = true;
      any = true;
    } else {
      for (auto& x : cols[j]) x /= n;
    }
  }
  if (any) complete_orthonormal(cols, missing);
  return from_columns(cols, y.rows());
}

OrthonormalBasis randomized_basis(const Matrix& m, std::size_t p, const SvdOptions& opts) {
  const std::size_t l = std::min(p + opts.oversample, std::min(m.rows(), m.cols()));
  Rng rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix omega(m.cols(), l);
  for (auto& x : omega.data()) x = normal(rng);
  Matrix q = orthonormalize_columns(matmul(m, omega));
  for (std::size_t it = 0; it < opts.power_iterations; ++it) {
    Matrix z = orthonormalize_columns(matmul_tn(m, q));
    q = orthonormalize_columns(matmul(m, z));
  }
  Matrix small = matmul_tn(q, m);  // l × cols
  ThinSvd svd = jacobi_svd(small);
  Matrix u = matmul(q, svd.u);
  Matrix out(m.rows(), p);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < p; ++c) out(r, c) = u(r, c);
  return {std::move(out)};
}

}  // namespace

OrthonormalBasis truncated_svd(const Matrix& m, std::size_t p, const SvdOptions& opts) {
  if (p < 1 || p > std::min(m.rows(), m.cols()))
    throw std::invalid_argument("truncated_svd: p out of range");
  if (!m.all_finite()) throw std::invalid_argument("truncated_svd: non-finite input");
  OrthonormalBasis basis;
  if (opts.method == SvdMethod::kRandomized) {
    basis = randomized_basis(m, p, opts);
  } else {
    ThinSvd svd = jacobi_svd(m);
    basis.vectors = Matrix(m.rows(), p);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < p; ++c) basis.vectors(r, c) = svd.u(r, c);
  }
  for (std::size_t c = 0; c < p; ++c) {
    auto col = basis.vectors.column(c);
    fix_sign(col);
    for (std::size_t r = 0; r < m.rows(); ++r) basis.vectors(r, c) = col[r];
  }
  return basis;
}

double principal_angle_min(const OrthonormalBasis& a, const OrthonormalBasis& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("principal_angle_min: dimension mismatch");
  if (a.p() == 0 || b.p() == 0) throw std::invalid_argument("principal_angle_min: empty basis");
  const auto cosines = singular_values(matmul_tn(a.vectors, b.vectors));
  const double cmax = std::clamp(cosines.front(), 0.0, 1.0);
  double rad;
  if (cmax > std::numbers::sqrt2 / 2.0) {
    // Small angles: arcsin of the smallest singular value of (I - AAᵀ)B is
    // well conditioned where arccos of the cosine is not.
    Matrix proj = matmul(a.vectors, matmul_tn(a.vectors, b.vectors));
    Matrix resid = b.vectors;
    for (std::size_t i = 0; i < resid.data().size(); ++i) resid.data()[i] -= proj.data()[i];
    const auto sines = singular_values(resid);
    rad = std::asin(std::clamp(sines.back(), 0.0, 1.0));
  } else {
    rad = std::acos(cmax);
  }
  return std::clamp(rad * 180.0 / std::numbers::pi, 0.0, 90.0);
}

Matrix minmax_normalize(const Matrix& m, bool exclude_diagonal) {
  Matrix out = m;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (exclude_diagonal && r == c) continue;
      lo = std::min(lo, m(r, c));
      hi = std::max(hi, m(r, c));
    }
  const double range = hi - lo;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (exclude_diagonal && r == c) {
        out(r, c) = 0.0;
      } else {
        out(r, c) = range > 0.0 ? (m(r, c) - lo) / range : 0.0;
      }
    }
  return out;
}

double row_softmax_entropy(const Matrix& a) {
  if (a.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto row = a.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    const double logz = std::log(z);
    double h = 0.0;
    for (double x : row) {
      const double logp = x - mx - logz;
      h -= std::exp(logp) * logp;
    }
    total += h;
  }
  return total / static_cast<double>(a.rows());
}

}  // namespace feddag
