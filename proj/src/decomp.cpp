#include "lrs/decomp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace lrs {

namespace {

using MatD = Eigen::MatrixXd;

// Relative cutoff applied to the eigenvalues of the R x R normal matrix.
constexpr double kPinvCutoff = 1e-10;

struct DenseFactors {
  Dims4 dims{};
  std::array<MatD, 4> f;
};

std::array<int, 3> other_modes(int mode0) {
  std::array<int, 3> out{};
  int n = 0;
  for (int m = 0; m < 4; ++m) {
    if (m != mode0) out[n++] = m;
  }
  return out;
}

// Same column convention as lrs::unfold, in double precision.
MatD unfold_d(std::span<const double> x, const Dims4& dims, int mode0) {
  const auto rest = other_modes(mode0);
  MatD out(dims[mode0], x.size() / dims[mode0]);
  std::size_t lin = 0;
  Dims4 idx{};
  for (idx[0] = 0; idx[0] < dims[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < dims[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < dims[2]; ++idx[2])
        for (idx[3] = 0; idx[3] < dims[3]; ++idx[3], ++lin) {
          const std::size_t col = idx[rest[0]] + dims[rest[0]] * (idx[rest[1]] + dims[rest[1]] * idx[rest[2]]);
          out(static_cast<Eigen::Index>(idx[mode0]), static_cast<Eigen::Index>(col)) = x[lin];
        }
  return out;
}

// Khatri-Rao of (m1, m2, m3) with m1's index varying slowest.
MatD khatri_rao_d(const MatD& m1, const MatD& m2, const MatD& m3) {
  const Eigen::Index r = m1.cols();
  MatD out(m1.rows() * m2.rows() * m3.rows(), r);
  for (Eigen::Index c = 0; c < r; ++c) {
    Eigen::Index row = 0;
    for (Eigen::Index p = 0; p < m1.rows(); ++p)
      for (Eigen::Index q = 0; q < m2.rows(); ++q) {
        const double pq = m1(p, c) * m2(q, c);
        for (Eigen::Index s = 0; s < m3.rows(); ++s) out(row++, c) = pq * m3(s, c);
      }
  }
  return out;
}

MatD pinv_symmetric(const MatD& v) {
  Eigen::SelfAdjointEigenSolver<MatD> eig(v);
  const auto& lambda = eig.eigenvalues();
  const double top = lambda.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(lambda.size());
  if (top > 0.0) {
    for (Eigen::Index n = 0; n < lambda.size(); ++n) {
      if (std::abs(lambda(n)) > kPinvCutoff * top) inv(n) = 1.0 / lambda(n);
    }
  }
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

void als_sweep(DenseFactors& fac, std::span<const double> target) {
  for (int n = 0; n < 4; ++n) {
    const auto rest = other_modes(n);
    // unfold(X, n) = F_n * khatri_rao(F_rest[2], F_rest[1], F_rest[0])^T
    const MatD kr = khatri_rao_d(fac.f[rest[2]], fac.f[rest[1]], fac.f[rest[0]]);
    const MatD mttkrp = unfold_d(target, fac.dims, n) * kr;
    MatD gram = MatD::Ones(kr.cols(), kr.cols());
    for (int m : rest) gram = gram.cwiseProduct(fac.f[m].transpose() * fac.f[m]);
    fac.f[n] = mttkrp * pinv_symmetric(gram);
  }
}

// Row-major (i,j,k,t) reconstruction: A * khatri_rao(B, C, D)^T.
std::vector<double> reconstruct_d(const DenseFactors& fac) {
  const MatD kr = khatri_rao_d(fac.f[1], fac.f[2], fac.f[3]);
  const MatD l = fac.f[0] * kr.transpose();
  std::vector<double> out(numel(fac.dims));
  std::size_t lin = 0;
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    for (Eigen::Index c = 0; c < l.cols(); ++c) out[lin++] = l(i, c);
  return out;
}

DenseFactors to_dense_factors(const CpFactors& f) {
  DenseFactors out;
  out.dims = f.dims();
  for (int n = 0; n < 4; ++n) {
    const Matrix& m = f.factor(n);
    out.f[n] = MatD(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) out.f[n](r, c) = m(r, c);
  }
  return out;
}

CpFactors to_cp_factors(const DenseFactors& fac) {
  CpFactors out;
  for (int n = 0; n < 4; ++n) {
    const MatD& m = fac.f[n];
    Matrix dst(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) dst(r, c) = static_cast<float>(m(r, c));
    out.factor(n) = std::move(dst);
  }
  return out;
}

std::vector<double> to_double(std::span<const float> x) { return {x.begin(), x.end()}; }

// Indices of the `keep` largest |x|, ascending by index. Ties go to the smaller index.
template <typename T>
std::vector<std::uint32_t> top_magnitude(std::span<const T> x, std::size_t keep) {
  std::vector<std::uint32_t> order(x.size());
  std::iota(order.begin(), order.end(), 0u);
  keep = std::min(keep, order.size());
  auto before = [&](std::uint32_t p, std::uint32_t q) {
    const auto ap = std::abs(x[p]);
    const auto aq = std::abs(x[q]);
    return ap > aq || (ap == aq && p < q);
  };
  if (keep < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

void check_rank_dims(const CpFactors& f, const Dims4& dims) {
  const std::size_t r = f.rank();
  if (r == 0 || f.dims() != dims || f.b.cols() != r || f.c.cols() != r || f.d.cols() != r) {
    throw std::invalid_argument("CP factor shapes do not match the target tensor");
  }
}

double relative_residual(const Tensor4& w, const CpFactors& f, const SparseTensor4& s, double norm_w) {
  const Tensor4 l = reconstruct_cp(f);
  auto wd = w.data();
  auto ld = l.data();
  std::vector<double> r(wd.size());
  for (std::size_t n = 0; n < r.size(); ++n) r[n] = static_cast<double>(wd[n]) - ld[n];
  for (const auto& e : s.entries) r[e.index] -= e.value;
  double sum = 0.0;
  for (double v : r) sum += v * v;
  return std::sqrt(sum) / norm_w;
}

}  // namespace

Tensor4 SparseTensor4::to_dense() const {
  Tensor4 out(dims);
  auto d = out.data();
  for (const auto& e : entries) d[e.index] = e.value;
  return out;
}

void DecompConfig::validate() const {
  if (!(cardinality >= 0.0 && cardinality < 1.0)) throw std::invalid_argument("cardinality must lie in [0, 1)");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1)");
  if (max_rank < 1) throw std::invalid_argument("max_rank must be >= 1");
}

std::uint64_t dense_param_count(const Dims4& dims) { return numel(dims); }

std::uint64_t low_rank_param_count(const Dims4& dims, std::size_t rank) {
  return static_cast<std::uint64_t>(rank) * (dims[0] + dims[1] + dims[2] + dims[3]);
}

std::uint64_t sparse_param_count(const Dims4& dims, std::size_t nnz) {
  return (3 * static_cast<std::uint64_t>(nnz) + 1) / 2 + dims[0];
}

std::size_t sparse_budget(const Dims4& dims, double cardinality) {
  return static_cast<std::size_t>(std::llround(cardinality * static_cast<double>(numel(dims))));
}

ParamCounts DecomposedLayer::param_counts() const {
  return {dense_param_count(original_dims), low_rank_param_count(original_dims, rank),
          sparse_param_count(original_dims, sparse.nnz())};
}

bool DecomposedLayer::compressed() const {
  const auto p = param_counts();
  return p.compressed() < p.original;
}

Tensor4 DecomposedLayer::to_dense() const { return reconstruct_cp(low_rank) + sparse.to_dense(); }

SparseTensor4 project_sparse(const Tensor4& t, double cardinality) {
  if (!(cardinality >= 0.0 && cardinality < 1.0)) throw std::invalid_argument("cardinality must lie in [0, 1)");
  SparseTensor4 out;
  out.dims = t.dims();
  auto x = t.data();
  for (auto idx : top_magnitude(x, sparse_budget(t.dims(), cardinality))) out.entries.push_back({idx, x[idx]});
  return out;
}

CpFactors cp_als_step(const CpFactors& factors, const Tensor4& target) {
  check_rank_dims(factors, target.dims());
  DenseFactors fac = to_dense_factors(factors);
  const auto x = to_double(target.data());
  als_sweep(fac, x);
  return to_cp_factors(fac);
}

CpFactors initial_factors(const Tensor4& t, std::size_t rank, std::uint64_t seed) {
  if (rank == 0) throw std::invalid_argument("rank must be >= 1");
  const Dims4 dims = t.dims();
  const auto x = to_double(t.data());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseFactors fac;
  fac.dims = dims;
  const auto r = static_cast<Eigen::Index>(rank);
  for (int n = 0; n < 4; ++n) {
    const auto rows = static_cast<Eigen::Index>(dims[n]);
    MatD& f = fac.f[n];
    f = MatD(rows, r);
    const MatD u = unfold_d(x, dims, n);
    Eigen::SelfAdjointEigenSolver<MatD> eig(u * u.transpose());
    // Eigenvalues ascend; leading singular vectors are the trailing columns.
    const Eigen::Index from_svd = std::min(r, rows);
    for (Eigen::Index c = 0; c < from_svd; ++c) {
      Eigen::VectorXd v = eig.eigenvectors().col(rows - 1 - c);
      Eigen::Index arg = 0;
      v.cwiseAbs().maxCoeff(&arg);
      if (v(arg) < 0.0) v = -v;
      f.col(c) = v;
    }
    for (Eigen::Index c = from_svd; c < r; ++c)
      for (Eigen::Index q = 0; q < rows; ++q) f(q, c) = normal(rng);
  }
  return to_cp_factors(fac);
}

namespace {

LrsResult run_lrs(const Tensor4& w, double norm_w, DenseFactors fac, std::vector<double> target, std::size_t keep,
                  const DecompConfig& cfg) {
  const Dims4 dims = w.dims();
  const auto wd = to_double(w.data());
  std::vector<double> resid(wd.size());
  std::vector<double> history;
  double prev = std::numeric_limits<double>::infinity();

  for (std::size_t it = 0; it < cfg.als_max_iters; ++it) {
    als_sweep(fac, target);
    const auto l = reconstruct_d(fac);
    for (std::size_t n = 0; n < wd.size(); ++n) resid[n] = wd[n] - l[n];
    const auto support = top_magnitude(std::span<const double>(resid), keep);

    target = wd;
    double sq = 0.0;
    for (double v : resid) sq += v * v;
    for (auto idx : support) {
      target[idx] -= resid[idx];
      sq -= resid[idx] * resid[idx];
    }
    const double eps = std::sqrt(std::max(sq, 0.0)) / norm_w;
    history.push_back(eps);
    if (eps == 0.0 || prev - eps < cfg.als_tol * prev) break;
    prev = eps;
  }

  LrsResult out;
  out.low_rank = to_cp_factors(fac);
  out.sparse.dims = dims;
  const auto l = reconstruct_cp(out.low_rank);
  auto wf = w.data();
  auto lf = l.data();
  // Recompute the projection against the stored (f32) low-rank term.
  Tensor4 r(dims);
  auto rd = r.data();
  for (std::size_t n = 0; n < rd.size(); ++n) rd[n] = wf[n] - lf[n];
  for (auto idx : top_magnitude(std::span<const float>(rd), keep)) out.sparse.entries.push_back({idx, rd[idx]});
  out.achieved_epsilon = relative_residual(w, out.low_rank, out.sparse, norm_w);
  out.history = std::move(history);
  return out;
}

DenseFactors random_factors(const Dims4& dims, std::size_t rank, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseFactors fac;
  fac.dims = dims;
  for (int n = 0; n < 4; ++n) {
    fac.f[n] = MatD(static_cast<Eigen::Index>(dims[n]), static_cast<Eigen::Index>(rank));
    for (Eigen::Index c = 0; c < fac.f[n].cols(); ++c)
      for (Eigen::Index q = 0; q < fac.f[n].rows(); ++q) fac.f[n](q, c) = normal(rng);
  }
  return fac;
}

}  // namespace

LrsResult decompose_lrs(const Tensor4& w, std::size_t rank, const DecompConfig& cfg) {
  cfg.validate();
  if (rank < 1 || rank > cfg.max_rank) {
    throw std::invalid_argument("rank " + std::to_string(rank) + " outside [1, max_rank]");
  }
  const Dims4 dims = w.dims();
  const double norm_w = frobenius_norm(w);
  if (norm_w == 0.0) {
    return {CpFactors::zeros(dims, rank), SparseTensor4{dims, {}}, 0.0, {}};
  }

  const std::size_t keep = sparse_budget(dims, cfg.cardinality);
  // Start from S_0 = P_c(W) so the initial subspaces are not dominated by
  // the entries the sparse term will absorb anyway.
  std::vector<double> target = to_double(w.data());
  for (auto idx : top_magnitude(std::span<const double>(target), keep)) target[idx] = 0.0;
  Tensor4 start(dims);
  for (std::size_t n = 0; n < target.size(); ++n) start.data()[n] = static_cast<float>(target[n]);

  LrsResult best = run_lrs(w, norm_w, to_dense_factors(initial_factors(start, rank, cfg.seed)), target, keep, cfg);
  for (std::size_t k = 1; k <= cfg.restarts && best.achieved_epsilon > cfg.epsilon; ++k) {
    const std::uint64_t s = cfg.seed + 0x9e3779b97f4a7c15ull * k;
    LrsResult next = run_lrs(w, norm_w, random_factors(dims, rank, s), target, keep, cfg);
    if (next.achieved_epsilon < best.achieved_epsilon) best = std::move(next);
  }
  return best;
}

DecomposedLayer search_min_rank(const Tensor4& w, const DecompConfig& cfg) {
  cfg.validate();
  if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("rank search needs epsilon > 0");

  std::map<std::size_t, LrsResult> runs;
  auto run = [&](std::size_t r) -> const LrsResult& {
    auto it = runs.find(r);
    if (it == runs.end()) it = runs.emplace(r, decompose_lrs(w, r, cfg)).first;
    return it->second;
  };
  auto passes = [&](std::size_t r) { return run(r).achieved_epsilon <= cfg.epsilon; };

  std::size_t lo = 0;  // largest rank known to fail
  std::size_t hi = 0;  // smallest rank known to pass
  for (std::size_t r = 1;; r = std::min(2 * r, cfg.max_rank)) {
    if (passes(r)) {
      hi = r;
      break;
    }
    lo = r;
    if (r == cfg.max_rank) break;
  }

  std::size_t chosen = cfg.max_rank;
  if (hi != 0) {
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      (passes(mid) ? hi : lo) = mid;
    }
    while (hi > 1 && passes(hi - 1)) --hi;
    chosen = hi;
  }

  const LrsResult& best = run(chosen);
  DecomposedLayer layer;
  layer.low_rank = best.low_rank;
  layer.sparse = best.sparse;
  layer.achieved_epsilon = best.achieved_epsilon;
  layer.rank = chosen;
  layer.original_dims = w.dims();
  return layer;
}

CpFactors equilibrate_factors(const CpFactors& f) {
  CpFactors out = f;
  for (std::size_t c = 0; c < f.rank(); ++c) {
    std::array<double, 4> norms{};
    double prod = 1.0;
    for (int n = 0; n < 4; ++n) {
      norms[n] = f.factor(n).column_norm(c);
      prod *= norms[n];
    }
    if (prod == 0.0) continue;
    const double target = std::pow(prod, 0.25);
    for (int n = 0; n < 4; ++n) {
      Matrix& m = out.factor(n);
      const double scale = target / norms[n];
      for (std::size_t r = 0; r < m.rows(); ++r) m(r, c) = static_cast<float>(m(r, c) * scale);
    }
  }
  return out;
}

}  // namespace lrs
