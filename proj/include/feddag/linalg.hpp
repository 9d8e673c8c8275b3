#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace feddag {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> column(std::size_t c) const;

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Matrix transpose() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

/// Column-orthonormal basis of a `dim`-dimensional subspace, stored as dim×p.
struct OrthonormalBasis {
  Matrix vectors;

  std::size_t dim() const { return vectors.rows(); }
  std::size_t p() const { return vectors.cols(); }
  /// U·Uᵀ
  Matrix projector() const;
};

enum class SvdMethod { kJacobi, kRandomized };

struct SvdOptions {
  SvdMethod method = SvdMethod::kJacobi;
  std::uint64_t seed = 0;  // randomized range finder only
  std::size_t oversample = 5;
  std::size_t power_iterations = 2;
};

/// Thin SVD result: u is rows×k, s has k non-increasing entries.
struct ThinSvd {
  Matrix u;
  std::vector<double> s;
};

/// One-sided (Hestenes) Jacobi SVD. Singular values sorted descending; the
/// left vectors of zero singular values are completed to an orthonormal set.
ThinSvd jacobi_svd(const Matrix& m);

/// Singular values only, descending.
std::vector<double> singular_values(const Matrix& m);

/// Top-p left singular vectors, sign-normalized so the first component with
/// magnitude above 1e-12 is non-negative.
OrthonormalBasis truncated_svd(const Matrix& m, std::size_t p, const SvdOptions& opts = {});

/// Smallest principal angle between span(a) and span(b), in degrees.
double principal_angle_min(const OrthonormalBasis& a, const OrthonormalBasis& b);

/// Min-max scaling to [0,1]. With `exclude_diagonal` the range is taken over
/// off-diagonal entries and the diagonal is forced to 0. A degenerate range
/// maps every included entry to 0.
Matrix minmax_normalize(const Matrix& m, bool exclude_diagonal);

/// -(1/N) Σ_i Σ_j p_ij ln p_ij with p the row-wise softmax of `a`.
double row_softmax_entropy(const Matrix& a);

}  // namespace feddag
