#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cbandit/core.hpp"

namespace cbandit {

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  FeatureVector multiply(std::span<const double> v) const;             // M v
  FeatureVector multiply_transposed(std::span<const double> v) const;  // Mᵀ v
  DenseMatrix multiply(const DenseMatrix& other) const;
  DenseMatrix transposed() const;

  /// this += scale * u vᵀ
  void add_outer(std::span<const double> u, std::span<const double> v, double scale = 1.0);
  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);

  double max_abs() const;
  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);

/// Lower-triangular Cholesky factor L with M = L Lᵀ, or nullopt when M is not
/// (numerically) symmetric positive definite.
std::optional<DenseMatrix> cholesky(const DenseMatrix& m);

/// Inverse of an SPD matrix by Cholesky solves against the identity.
/// Throws Error if the matrix is not SPD.
DenseMatrix spd_inverse(const DenseMatrix& m);

/// max |M·Minv − I|
double inverse_residual(const DenseMatrix& m, const DenseMatrix& m_inv);

/// xᵀ A⁻¹ x, given A⁻¹.
double quadratic_form(const DenseMatrix& a_inv, std::span<const double> x);

inline constexpr std::size_t kDefaultRefreshPeriod = 1000;

/// Sufficient statistics of a ridge regression with identity penalty:
/// A = DᵀD + I, b = Dᵀc, and a maintained inverse of A.
///
/// The inverse is kept current by Sherman–Morrison after every rank-1 update
/// and recomputed from A by Cholesky every `refresh_period` updates.
class RidgeState {
 public:
  explicit RidgeState(std::size_t dim, std::size_t refresh_period = kDefaultRefreshPeriod);

  std::size_t dim() const { return b_vec_.size(); }
  const DenseMatrix& a_mat() const { return a_mat_; }
  const FeatureVector& b_vec() const { return b_vec_; }
  const DenseMatrix& a_inv() const { return a_inv_; }
  std::size_t updates_since_refresh() const { return updates_since_refresh_; }
  std::size_t refresh_period() const { return refresh_period_; }

  /// θ̂ = A⁻¹ b
  FeatureVector point_estimate() const;

  /// A += x xᵀ, b += r x
  void rank1_update(std::span<const double> x, double r);

  /// Recompute A⁻¹ from A.
  void refresh();

 private:
  DenseMatrix a_mat_;
  FeatureVector b_vec_;
  DenseMatrix a_inv_;
  std::size_t updates_since_refresh_ = 0;
  std::size_t refresh_period_;
};

/// Shared (A₀, b₀) and per-arm (A_a, B_a, b_a) blocks of the hybrid linear
/// model, with cached inverses of A₀ and every A_a.
class HybridState {
 public:
  struct ArmBlocks {
    DenseMatrix a_mat;  // d×d
    DenseMatrix b_mat;  // d×k
    FeatureVector b_vec;
    DenseMatrix a_inv;
    std::size_t updates_since_refresh = 0;
  };

  HybridState(std::size_t d, std::size_t k, std::size_t refresh_period = kDefaultRefreshPeriod);

  std::size_t d() const { return d_; }
  std::size_t k() const { return k_; }
  const DenseMatrix& a0() const { return a0_; }
  const FeatureVector& b0() const { return b0_; }
  const DenseMatrix& a0_inv() const { return a0_inv_; }
  const std::map<ArmId, ArmBlocks>& arms() const { return arms_; }

  /// Blocks of an arm, or the fresh blocks (A=I, B=0, b=0) if never updated.
  const ArmBlocks& blocks(const ArmId& arm) const;

  /// β̂ = A₀⁻¹ b₀
  FeatureVector shared_estimate() const;

  /// The seven-line update for one observed trial, in order: remove the
  /// arm's old contribution from (A₀, b₀), update (A_a, B_a, b_a), add the
  /// new contribution together with z zᵀ and r z.
  void update(const ArmId& arm, std::span<const double> z, std::span<const double> x, double r);

  /// Recompute every cached inverse exactly.
  void refresh();

  /// Drop an arm's blocks (pool eviction). The shared block keeps whatever
  /// it learned from the arm.
  void erase(const ArmId& arm) { arms_.erase(arm); }

 private:
  ArmBlocks fresh_blocks() const;
  void add_shared_contribution(const ArmBlocks& blocks, double sign);

  std::size_t d_;
  std::size_t k_;
  std::size_t refresh_period_;
  DenseMatrix a0_;
  FeatureVector b0_;
  DenseMatrix a0_inv_;
  std::map<ArmId, ArmBlocks> arms_;
  ArmBlocks fresh_;
};

/// Ridge solution straight from raw rows: (DᵀD + I)⁻¹ Dᵀ c, via Cholesky.
FeatureVector ridge_solve(std::span<const FeatureVector> rows, std::span<const double> responses);

}  // namespace cbandit
