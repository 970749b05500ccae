#include "lrs/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace lrs {

std::size_t numel(const Dims4& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_dims(const Dims4& dims) {
  for (auto d : dims) {
    if (d == 0) throw std::invalid_argument("tensor extents must be >= 1");
  }
}

void check_mode(int mode) {
  if (mode < 1 || mode > 4) {
    throw std::invalid_argument("invalid unfolding mode " + std::to_string(mode));
  }
}

// The three modes other than `mode` (0-based), ascending.
std::array<int, 3> other_modes(int mode0) {
  std::array<int, 3> out{};
  int n = 0;
  for (int m = 0; m < 4; ++m) {
    if (m != mode0) out[n++] = m;
  }
  return out;
}

}  // namespace

Tensor4::Tensor4(const Dims4& dims) : dims_(dims) {
  check_dims(dims);
  data_.assign(numel(dims), 0.0f);
}

Tensor4::Tensor4(const Dims4& dims, std::vector<float> data) : dims_(dims), data_(std::move(data)) {
  check_dims(dims);
  if (data_.size() != numel(dims)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match extents product " + std::to_string(numel(dims)));
  }
}

Dims4 Tensor4::multi_index(std::size_t linear_index) const {
  Dims4 idx{};
  for (int m = 3; m >= 0; --m) {
    idx[m] = linear_index % dims_[m];
    linear_index /= dims_[m];
  }
  return idx;
}

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("matrix data length does not match rows*cols");
  }
}

double Matrix::column_norm(std::size_t c) const {
  double s = 0.0;
  for (std::size_t r = 0; r < rows_; ++r) {
    const double v = (*this)(r, c);
    s += v * v;
  }
  return std::sqrt(s);
}

const Matrix& CpFactors::factor(int mode) const {
  switch (mode) {
    case 0: return a;
    case 1: return b;
    case 2: return c;
    case 3: return d;
  }
  throw std::invalid_argument("factor index out of range");
}

Matrix& CpFactors::factor(int mode) {
  return const_cast<Matrix&>(std::as_const(*this).factor(mode));
}

CpFactors CpFactors::zeros(const Dims4& dims, std::size_t rank) {
  return {Matrix(dims[0], rank), Matrix(dims[1], rank), Matrix(dims[2], rank), Matrix(dims[3], rank)};
}

double frobenius_norm(const Tensor4& t) {
  double s = 0.0;
  for (float v : t.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (float v : m.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

Matrix unfold(const Tensor4& t, int mode) {
  check_mode(mode);
  const int m0 = mode - 1;
  const auto& dims = t.dims();
  const auto rest = other_modes(m0);
  Matrix out(dims[m0], t.size() / dims[m0]);
  auto src = t.data();
  std::size_t lin = 0;
  Dims4 idx{};
  for (idx[0] = 0; idx[0] < dims[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < dims[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < dims[2]; ++idx[2])
        for (idx[3] = 0; idx[3] < dims[3]; ++idx[3], ++lin) {
          const std::size_t col = idx[rest[0]] + dims[rest[0]] * (idx[rest[1]] + dims[rest[1]] * idx[rest[2]]);
          out(idx[m0], col) = src[lin];
        }
  return out;
}

Tensor4 fold(const Matrix& m, int mode, const Dims4& dims) {
  check_mode(mode);
  const int m0 = mode - 1;
  if (m.rows() != dims[m0] || m.rows() * m.cols() != numel(dims)) {
    throw std::invalid_argument("matrix shape incompatible with fold target");
  }
  const auto rest = other_modes(m0);
  Tensor4 out(dims);
  auto dst = out.data();
  std::size_t lin = 0;
  Dims4 idx{};
  for (idx[0] = 0; idx[0] < dims[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < dims[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < dims[2]; ++idx[2])
        for (idx[3] = 0; idx[3] < dims[3]; ++idx[3], ++lin) {
          const std::size_t col = idx[rest[0]] + dims[rest[0]] * (idx[rest[1]] + dims[rest[1]] * idx[rest[2]]);
          dst[lin] = m(idx[m0], col);
        }
  return out;
}

Matrix khatri_rao(std::span<const Matrix> ms) {
  if (ms.empty()) throw std::invalid_argument("khatri_rao needs at least one matrix");
  const std::size_t r = ms[0].cols();
  for (const auto& m : ms) {
    if (m.cols() != r) throw std::invalid_argument("khatri_rao inputs must share a column count");
  }
  Matrix acc = ms[0];
  for (std::size_t n = 1; n < ms.size(); ++n) {
    const Matrix& rhs = ms[n];
    Matrix next(acc.rows() * rhs.rows(), r);
    for (std::size_t p = 0; p < acc.rows(); ++p)
      for (std::size_t q = 0; q < rhs.rows(); ++q)
        for (std::size_t c = 0; c < r; ++c) next(p * rhs.rows() + q, c) = acc(p, c) * rhs(q, c);
    acc = std::move(next);
  }
  return acc;
}

Tensor4 reconstruct_cp(const CpFactors& f) {
  const std::size_t r = f.a.cols();
  if (r == 0 || f.b.cols() != r || f.c.cols() != r || f.d.cols() != r) {
    throw std::invalid_argument("CP factors must share a column count >= 1");
  }
  const Dims4 dims = f.dims();
  Tensor4 out(dims);
  auto dst = out.data();
  std::vector<double> abc(r);
  std::size_t lin = 0;
  for (std::size_t i = 0; i < dims[0]; ++i)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t k = 0; k < dims[2]; ++k) {
        for (std::size_t c = 0; c < r; ++c) {
          abc[c] = static_cast<double>(f.a(i, c)) * f.b(j, c) * f.c(k, c);
        }
        for (std::size_t t = 0; t < dims[3]; ++t, ++lin) {
          double s = 0.0;
          for (std::size_t c = 0; c < r; ++c) s += abc[c] * f.d(t, c);
          dst[lin] = static_cast<float>(s);
        }
      }
  return out;
}

Tensor4 operator-(const Tensor4& lhs, const Tensor4& rhs) {
  if (lhs.dims() != rhs.dims()) throw std::invalid_argument("tensor extents differ");
  Tensor4 out(lhs.dims());
  auto a = lhs.data();
  auto b = rhs.data();
  auto o = out.data();
  for (std::size_t n = 0; n < o.size(); ++n) o[n] = a[n] - b[n];
  return out;
}

Tensor4 operator+(const Tensor4& lhs, const Tensor4& rhs) {
  if (lhs.dims() != rhs.dims()) throw std::invalid_argument("tensor extents differ");
  Tensor4 out(lhs.dims());
  auto a = lhs.data();
  auto b = rhs.data();
  auto o = out.data();
  for (std::size_t n = 0; n < o.size(); ++n) o[n] = a[n] + b[n];
  return out;
}

}  // namespace lrs
