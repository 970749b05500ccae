#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lrs {

/// Extents of an order-4 weight tensor in (in-channel, out-channel, kernel-x,
/// kernel-y) order. Every extent is at least 1.
using Dims4 = std::array<std::size_t, 4>;

std::size_t numel(const Dims4& dims);

/// Dense order-4 tensor, row-major over (i, j, k, t).
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(const Dims4& dims);
  Tensor4(const Dims4& dims, std::vector<float> data);

  const Dims4& dims() const { return dims_; }
  std::size_t dim(int mode) const { return dims_[static_cast<std::size_t>(mode)]; }
  std::size_t size() const { return data_.size(); }

  std::size_t linear(std::size_t i, std::size_t j, std::size_t k, std::size_t t) const {
    return ((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + t;
  }
  Dims4 multi_index(std::size_t linear_index) const;

  float& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t t) {
    return data_[linear(i, j, k, t)];
  }
  float operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t t) const {
    return data_[linear(i, j, k, t)];
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool operator==(const Tensor4&) const = default;

 private:
  Dims4 dims_{1, 1, 1, 1};
  std::vector<float> data_ = std::vector<float>(1, 0.0f);
};

/// Row-major dense matrix of f32.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  double column_norm(std::size_t c) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Four CP factor matrices with rows (I, J, K, T) and a shared column count,
/// the CP rank. Entry (i,j,k,t) of the represented tensor is
/// sum_r a(i,r) b(j,r) c(k,r) d(t,r).
struct CpFactors {
  Matrix a, b, c, d;

  std::size_t rank() const { return a.cols(); }
  Dims4 dims() const { return {a.rows(), b.rows(), c.rows(), d.rows()}; }
  const Matrix& factor(int mode) const;
  Matrix& factor(int mode);

  /// Rank-`rank` factors of all zeros for a tensor of extents `dims`.
  static CpFactors zeros(const Dims4& dims, std::size_t rank);

  bool operator==(const CpFactors&) const = default;
};

double frobenius_norm(const Tensor4& t);
double frobenius_norm(const Matrix& m);

/// Mode-n unfolding, mode in {1,2,3,4}. Row index is the mode-n index; the
/// column index runs over the remaining modes with the lowest remaining mode
/// varying fastest, so that unfold(L, 1) = A * khatri_rao({D, C, B})^T.
Matrix unfold(const Tensor4& t, int mode);
Tensor4 fold(const Matrix& m, int mode, const Dims4& dims);

/// Column-wise Kronecker product; the first input's index varies slowest.
Matrix khatri_rao(std::span<const Matrix> ms);

Tensor4 reconstruct_cp(const CpFactors& f);

Tensor4 operator-(const Tensor4& lhs, const Tensor4& rhs);
Tensor4 operator+(const Tensor4& lhs, const Tensor4& rhs);

}  // namespace lrs
