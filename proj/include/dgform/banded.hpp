#pragma once

#include <Eigen/Core>

#include <vector>

namespace dgform {

// Banded LU with partial pivoting (row interchanges confined to the band).
// Storage keeps kl extra super-diagonals for fill-in from pivoting.
class BandedLU {
 public:
  BandedLU() = default;
  BandedLU(int n, int kl, int ku);

  void reset(int n, int kl, int ku);
  int size() const { return n_; }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * width_ + (c - r + kl_)]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * width_ + (c - r + kl_)]; }

  // Throws kInvalidDurations when a zero pivot shows up.
  void factorize();
  void solve(Eigen::MatrixXd& b) const;
  void solve_transpose(Eigen::MatrixXd& b) const;

 private:
  int n_ = 0;
  int kl_ = 0;
  int ku_ = 0;  // including pivot fill
  int width_ = 0;
  std::vector<double> data_;
  std::vector<int> pivot_;
};

}  // namespace dgform
