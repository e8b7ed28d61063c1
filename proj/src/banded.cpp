#include "dgform/banded.hpp"

#include "dgform/error.hpp"

#include <algorithm>
#include <cmath>

namespace dgform {

BandedLU::BandedLU(int n, int kl, int ku) { reset(n, kl, ku); }

void BandedLU::reset(int n, int kl, int ku) {
  n_ = n;
  kl_ = kl;
  ku_ = ku + kl;
  width_ = kl_ + ku_ + 1;
  data_.assign(static_cast<std::size_t>(n) * width_, 0.0);
  pivot_.assign(n, 0);
}

void BandedLU::factorize() {
  auto& a = *this;
  for (int k = 0; k < n_; ++k) {
    const int last_row = std::min(n_ - 1, k + kl_);
    const int last_col = std::min(n_ - 1, k + ku_);
    int p = k;
    double best = std::abs(a(k, k));
    for (int r = k + 1; r <= last_row; ++r) {
      if (std::abs(a(r, k)) > best) {
        best = std::abs(a(r, k));
        p = r;
      }
    }
    if (!(best > 0.0) || !std::isfinite(best)) {
      throw Error(ErrorCode::kInvalidDurations, "singular coefficient system");
    }
    pivot_[k] = p;
    if (p != k) {
      for (int c = k; c <= last_col; ++c) std::swap(a(k, c), a(p, c));
    }
    const double inv = 1.0 / a(k, k);
    for (int r = k + 1; r <= last_row; ++r) {
      const double l = a(r, k) * inv;
      a(r, k) = l;
      if (l == 0.0) continue;
      for (int c = k + 1; c <= last_col; ++c) a(r, c) -= l * a(k, c);
    }
  }
}

void BandedLU::solve(Eigen::MatrixXd& b) const {
  const auto& a = *this;
  for (int k = 0; k < n_; ++k) {
    if (pivot_[k] != k) b.row(k).swap(b.row(pivot_[k]));
    const int last_row = std::min(n_ - 1, k + kl_);
    for (int r = k + 1; r <= last_row; ++r) {
      const double l = a(r, k);
      if (l != 0.0) b.row(r) -= l * b.row(k);
    }
  }
  for (int k = n_ - 1; k >= 0; --k) {
    const int last_col = std::min(n_ - 1, k + ku_);
    for (int c = k + 1; c <= last_col; ++c) {
      const double u = a(k, c);
      if (u != 0.0) b.row(k) -= u * b.row(c);
    }
    b.row(k) /= a(k, k);
  }
}

void BandedLU::solve_transpose(Eigen::MatrixXd& b) const {
  const auto& a = *this;
  // U^T y = b
  for (int k = 0; k < n_; ++k) {
    const int first = std::max(0, k - ku_);
    for (int c = first; c < k; ++c) {
      const double u = a(c, k);
      if (u != 0.0) b.row(k) -= u * b.row(c);
    }
    b.row(k) /= a(k, k);
  }
  // undo the elimination steps in reverse: L_k^{-T}, then P_k
  for (int k = n_ - 1; k >= 0; --k) {
    const int last_row = std::min(n_ - 1, k + kl_);
    for (int r = k + 1; r <= last_row; ++r) {
      const double l = a(r, k);
      if (l != 0.0) b.row(k) -= l * b.row(r);
    }
    if (pivot_[k] != k) b.row(k).swap(b.row(pivot_[k]));
  }
}

}  // namespace dgform
