#pragma once

#include <cstdint>
#include <vector>

#include "lrs/tensor.hpp"

namespace lrs {

/// Sparse order-4 tensor: (linear index, value) entries sorted by index.
struct SparseTensor4 {
  struct Entry {
    std::uint32_t index;
    float value;
    bool operator==(const Entry&) const = default;
  };

  Dims4 dims{1, 1, 1, 1};
  std::vector<Entry> entries;

  std::size_t nnz() const { return entries.size(); }
  Tensor4 to_dense() const;

  bool operator==(const SparseTensor4&) const = default;
};

struct DecompConfig {
  double epsilon = 0.1;       // relative Frobenius residual budget
  double cardinality = 0.01;  // fraction of entries kept in the sparse term
  std::size_t max_rank = 256;
  std::size_t als_max_iters = 100;
  double als_tol = 1e-6;
  std::size_t restarts = 2;   // extra random starts tried while epsilon is unmet
  std::uint64_t seed = 0;

  void validate() const;
};

struct ParamCounts {
  std::uint64_t original = 0;
  std::uint64_t low_rank = 0;
  std::uint64_t sparse = 0;

  std::uint64_t compressed() const { return low_rank + sparse; }
  bool operator==(const ParamCounts&) const = default;
};

/// P(W) = IJKT.
std::uint64_t dense_param_count(const Dims4& dims);
/// P(L) = r (I + J + K + T).
std::uint64_t low_rank_param_count(const Dims4& dims, std::size_t rank);
/// P(S) = ceil(1.5 nnz) + I: a 32-bit value plus a 16-bit packed index per
/// entry, and one offset per input-channel slice.
std::uint64_t sparse_param_count(const Dims4& dims, std::size_t nnz);

/// Number of entries the sparse term keeps: round(cardinality * numel).
std::size_t sparse_budget(const Dims4& dims, double cardinality);

struct DecomposedLayer {
  CpFactors low_rank;
  SparseTensor4 sparse;
  double achieved_epsilon = 0.0;
  std::size_t rank = 0;
  Dims4 original_dims{1, 1, 1, 1};

  ParamCounts param_counts() const;
  /// False when P(L) + P(S) >= P(W).
  bool compressed() const;

  Tensor4 to_dense() const;

  bool operator==(const DecomposedLayer&) const = default;
};

struct LrsResult {
  CpFactors low_rank;
  SparseTensor4 sparse;
  double achieved_epsilon = 0.0;
  /// Relative residual after each outer iteration.
  std::vector<double> history;
};

/// Keeps the round(cardinality * numel) entries of largest magnitude. Ties are
/// broken toward the smaller linear index; kept values are not modified.
SparseTensor4 project_sparse(const Tensor4& t, double cardinality);

/// One alternating least-squares sweep over A, B, C, D in that order.
CpFactors cp_als_step(const CpFactors& factors, const Tensor4& target);

/// Deterministic starting factors: leading left singular vectors of each mode
/// unfolding, largest-magnitude entry made positive. Columns beyond an
/// unfolding's row count are drawn from N(0,1) seeded by `seed`.
CpFactors initial_factors(const Tensor4& t, std::size_t rank, std::uint64_t seed);

/// Alternates CP-ALS on W - S with sparse projection of W - L, starting from
/// S = P_c(W). If the result misses cfg.epsilon, up to cfg.restarts further
/// runs from seeded random factors are tried and the best one is returned.
LrsResult decompose_lrs(const Tensor4& w, std::size_t rank, const DecompConfig& cfg);

/// Smallest rank whose decomposition meets cfg.epsilon, found by doubling then
/// bisection; the predecessor of the returned rank is always confirmed to
/// fail. Returns the max_rank result when no rank meets the budget.
DecomposedLayer search_min_rank(const Tensor4& w, const DecompConfig& cfg);

/// Rescales each rank-1 component so its four column norms are equal to the
/// geometric mean of the originals. Columns containing a zero norm are kept.
CpFactors equilibrate_factors(const CpFactors& f);

}  // namespace lrs
