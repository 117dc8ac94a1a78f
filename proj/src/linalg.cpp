#include "cbandit/linalg.hpp"

#include <cmath>

namespace cbandit {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  if (data_.size() != rows_ * cols_) throw Error("DenseMatrix: rows*cols != entries");
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

FeatureVector DenseMatrix::multiply(std::span<const double> v) const {
  if (v.size() != cols_) throw Error("dimension mismatch");
  FeatureVector out(rows_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i) {
    const double* r = data_.data() + i * cols_;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) acc += r[j] * v[j];
    out[i] = acc;
  }
  return out;
}

FeatureVector DenseMatrix::multiply_transposed(std::span<const double> v) const {
  if (v.size() != rows_) throw Error("dimension mismatch");
  FeatureVector out(cols_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    const double* r = data_.data() + i * cols_;
    for (std::size_t j = 0; j < cols_; ++j) out[j] += r[j] * vi;
  }
  return out;
}

DenseMatrix DenseMatrix::multiply(const DenseMatrix& other) const {
  if (cols_ != other.rows_) throw Error("dimension mismatch");
  DenseMatrix out(rows_, other.cols_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t l = 0; l < cols_; ++l) {
      const double a = (*this)(i, l);
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < other.cols_; ++j) out(i, j) += a * other(l, j);
    }
  }
  return out;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix out(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
  return out;
}

void DenseMatrix::add_outer(std::span<const double> u, std::span<const double> v, double scale) {
  if (u.size() != rows_ || v.size() != cols_) throw Error("dimension mismatch");
  for (std::size_t i = 0; i < rows_; ++i) {
    const double ui = scale * u[i];
    if (ui == 0.0) continue;
    double* r = data_.data() + i * cols_;
    for (std::size_t j = 0; j < cols_; ++j) r[j] += ui * v[j];
  }
}

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_) throw Error("dimension mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

DenseMatrix& DenseMatrix::operator-=(const DenseMatrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_) throw Error("dimension mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double e : data_) m = std::max(m, std::abs(e));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::optional<DenseMatrix> cholesky(const DenseMatrix& m) {
  if (m.rows() != m.cols()) return std::nullopt;
  const std::size_t n = m.rows();
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = m(j, j);
    for (std::size_t p = 0; p < j; ++p) diag -= l(j, p) * l(j, p);
    if (!(diag > 0.0) || !std::isfinite(diag)) return std::nullopt;
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

DenseMatrix spd_inverse(const DenseMatrix& m) {
  const auto factor = cholesky(m);
  if (!factor) throw Error("matrix is not symmetric positive definite");
  const DenseMatrix& l = *factor;
  const std::size_t n = m.rows();
  DenseMatrix inv(n, n);
  std::vector<double> y(n);
  for (std::size_t col = 0; col < n; ++col) {
    // L y = e_col
    for (std::size_t i = 0; i < n; ++i) {
      double s = (i == col) ? 1.0 : 0.0;
      for (std::size_t p = 0; p < i; ++p) s -= l(i, p) * y[p];
      y[i] = s / l(i, i);
    }
    // Lᵀ x = y
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t p = ii + 1; p < n; ++p) s -= l(p, ii) * inv(p, col);
      inv(ii, col) = s / l(ii, ii);
    }
  }
  // Symmetrize away the rounding asymmetry of the two triangular solves.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = avg;
      inv(j, i) = avg;
    }
  }
  return inv;
}

double inverse_residual(const DenseMatrix& m, const DenseMatrix& m_inv) {
  DenseMatrix prod = m.multiply(m_inv);
  prod -= DenseMatrix::identity(m.rows());
  return prod.max_abs();
}

double quadratic_form(const DenseMatrix& a_inv, std::span<const double> x) {
  if (a_inv.rows() != x.size() || a_inv.cols() != x.size()) throw Error("dimension mismatch");
  const double q = dot(x, a_inv.multiply(x));
  return q < 0.0 ? 0.0 : q;
}

namespace {

// inv ← inv − (inv x)(inv x)ᵀ / (1 + xᵀ inv x); inv stays symmetric.
void sherman_morrison(DenseMatrix& inv, std::span<const double> x) {
  const FeatureVector u = inv.multiply(x);
  const double denom = 1.0 + dot(x, u);
  inv.add_outer(u, u, -1.0 / denom);
}

}  // namespace

RidgeState::RidgeState(std::size_t dim, std::size_t refresh_period)
    : a_mat_(DenseMatrix::identity(dim)),
      b_vec_(dim, 0.0),
      a_inv_(DenseMatrix::identity(dim)),
      refresh_period_(refresh_period) {
  if (dim == 0) throw Error("RidgeState: dimension must be positive");
}

FeatureVector RidgeState::point_estimate() const { return a_inv_.multiply(b_vec_); }

void RidgeState::rank1_update(std::span<const double> x, double r) {
  if (x.size() != dim()) throw Error("dimension mismatch");
  a_mat_.add_outer(x, x);
  for (std::size_t i = 0; i < x.size(); ++i) b_vec_[i] += r * x[i];
  sherman_morrison(a_inv_, x);
  if (++updates_since_refresh_ >= refresh_period_ && refresh_period_ > 0) refresh();
}

void RidgeState::refresh() {
  a_inv_ = spd_inverse(a_mat_);
  updates_since_refresh_ = 0;
}

HybridState::HybridState(std::size_t d, std::size_t k, std::size_t refresh_period)
    : d_(d),
      k_(k),
      refresh_period_(refresh_period),
      a0_(DenseMatrix::identity(k)),
      b0_(k, 0.0),
      a0_inv_(DenseMatrix::identity(k)),
      fresh_(fresh_blocks()) {
  if (d == 0 || k == 0) throw Error("HybridState: dimensions must be positive");
}

HybridState::ArmBlocks HybridState::fresh_blocks() const {
  return ArmBlocks{DenseMatrix::identity(d_), DenseMatrix(d_, k_), FeatureVector(d_, 0.0),
                   DenseMatrix::identity(d_), 0};
}

const HybridState::ArmBlocks& HybridState::blocks(const ArmId& arm) const {
  const auto it = arms_.find(arm);
  return it == arms_.end() ? fresh_ : it->second;
}

FeatureVector HybridState::shared_estimate() const { return a0_inv_.multiply(b0_); }

void HybridState::add_shared_contribution(const ArmBlocks& blk, double sign) {
  // sign · (Bᵀ A⁻¹ B, Bᵀ A⁻¹ b)
  const DenseMatrix ainv_b = blk.a_inv.multiply(blk.b_mat);  // d×k
  const FeatureVector ainv_bvec = blk.a_inv.multiply(blk.b_vec);
  for (std::size_t i = 0; i < k_; ++i) {
    for (std::size_t j = 0; j < k_; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d_; ++p) s += blk.b_mat(p, i) * ainv_b(p, j);
      a0_(i, j) += sign * s;
    }
    double t = 0.0;
    for (std::size_t p = 0; p < d_; ++p) t += blk.b_mat(p, i) * ainv_bvec[p];
    b0_[i] += sign * t;
  }
}

void HybridState::update(const ArmId& arm, std::span<const double> z, std::span<const double> x,
                         double r) {
  if (z.size() != k_ || x.size() != d_) throw Error("dimension mismatch");
  auto [it, inserted] = arms_.try_emplace(arm, fresh_);
  ArmBlocks& blk = it->second;

  add_shared_contribution(blk, +1.0);
  blk.a_mat.add_outer(x, x);
  blk.b_mat.add_outer(x, z);
  for (std::size_t i = 0; i < d_; ++i) blk.b_vec[i] += r * x[i];
  sherman_morrison(blk.a_inv, x);
  if (++blk.updates_since_refresh >= refresh_period_ && refresh_period_ > 0) {
    blk.a_inv = spd_inverse(blk.a_mat);
    blk.updates_since_refresh = 0;
  }
  a0_.add_outer(z, z);
  for (std::size_t i = 0; i < k_; ++i) b0_[i] += r * z[i];
  add_shared_contribution(blk, -1.0);

  // A₀ changes by a term of rank up to min(d, k) + 1, so its inverse is
  // recomputed rather than patched.
  a0_inv_ = spd_inverse(a0_);
}

void HybridState::refresh() {
  a0_inv_ = spd_inverse(a0_);
  for (auto& [id, blk] : arms_) {
    blk.a_inv = spd_inverse(blk.a_mat);
    blk.updates_since_refresh = 0;
  }
}

FeatureVector ridge_solve(std::span<const FeatureVector> rows, std::span<const double> responses) {
  if (rows.empty()) throw Error("ridge_solve: no rows");
  if (rows.size() != responses.size()) throw Error("ridge_solve: rows/responses mismatch");
  const std::size_t d = rows.front().size();
  DenseMatrix gram = DenseMatrix::identity(d);
  FeatureVector rhs(d, 0.0);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    if (rows[n].size() != d) throw Error("dimension mismatch");
    gram.add_outer(rows[n], rows[n]);
    for (std::size_t i = 0; i < d; ++i) rhs[i] += responses[n] * rows[n][i];
  }
  const auto l = cholesky(gram);
  if (!l) throw Error("ridge_solve: Gram matrix not SPD");
  FeatureVector y(d), theta(d);
  for (std::size_t i = 0; i < d; ++i) {
    double s = rhs[i];
    for (std::size_t p = 0; p < i; ++p) s -= (*l)(i, p) * y[p];
    y[i] = s / (*l)(i, i);
  }
  for (std::size_t i = d; i-- > 0;) {
    double s = y[i];
    for (std::size_t p = i + 1; p < d; ++p) s -= (*l)(p, i) * theta[p];
    theta[i] = s / (*l)(i, i);
  }
  return theta;
}

}  // namespace cbandit
