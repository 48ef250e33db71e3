#pragma once

// Synthetic bilevel problems with closed-form derivatives, used to validate
// the optimization engines independently of the imaging stack.

#include <random>

#include <Eigen/Dense>

#include "smo/bilevel.hpp"

namespace fixtures {

using smo::GradPair;
using smo::RealGrid;

inline RealGrid to_grid(const Eigen::VectorXd& v) {
  RealGrid g(v.size(), 1);
  for (int i = 0; i < v.size(); ++i) g(i, 0) = v[i];
  return g;
}

inline Eigen::VectorXd to_vec(const RealGrid& g) {
  Eigen::VectorXd v(g.size());
  for (int i = 0; i < g.rows(); ++i) v[i] = g(i, 0);
  return v;
}

// lower(theta, phi) = 1/2 theta^T A theta - theta^T B phi
// upper(theta, phi) = 1/2 |theta - a|^2 + 1/2 |phi - b|^2
// with A symmetric positive definite. All derivatives analytic.
class QuadraticBilevelProblem : public smo::BilevelProblem {
 public:
  QuadraticBilevelProblem(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::VectorXd a,
                          Eigen::VectorXd b)
      : A_(std::move(A)), B_(std::move(B)), a_(std::move(a)), b_(std::move(b)) {}

  static QuadraticBilevelProblem random_spd(int n_inner, int n_outer, unsigned seed,
                                            double eig_lo = 0.5, double eig_hi = 1.5,
                                            double b_scale = 0.5) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd m(n_inner, n_inner);
    for (int r = 0; r < n_inner; ++r)
      for (int c = 0; c < n_inner; ++c) m(r, c) = nd(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd eigs(n_inner);
    for (int i = 0; i < n_inner; ++i)
      eigs[i] = eig_lo + (eig_hi - eig_lo) * i / std::max(1, n_inner - 1);
    Eigen::MatrixXd a_mat = q * eigs.asDiagonal() * q.transpose();
    a_mat = ((a_mat + a_mat.transpose()) / 2).eval();
    Eigen::MatrixXd b_mat(n_inner, n_outer);
    for (int r = 0; r < n_inner; ++r)
      for (int c = 0; c < n_outer; ++c) b_mat(r, c) = b_scale * nd(rng);
    Eigen::VectorXd a_vec(n_inner), b_vec(n_outer);
    for (int i = 0; i < n_inner; ++i) a_vec[i] = nd(rng);
    for (int i = 0; i < n_outer; ++i) b_vec[i] = nd(rng);
    return QuadraticBilevelProblem(a_mat, b_mat, a_vec, b_vec);
  }

  std::pair<int, int> inner_shape() const override { return {(int)A_.rows(), 1}; }
  std::pair<int, int> outer_shape() const override { return {(int)B_.cols(), 1}; }

  double lower_loss(const RealGrid& inner, const RealGrid& outer) const override {
    const Eigen::VectorXd t = to_vec(inner), p = to_vec(outer);
    return 0.5 * t.dot(A_ * t) - t.dot(B_ * p);
  }
  double upper_loss(const RealGrid& inner, const RealGrid& outer) const override {
    const Eigen::VectorXd t = to_vec(inner), p = to_vec(outer);
    return 0.5 * (t - a_).squaredNorm() + 0.5 * (p - b_).squaredNorm();
  }
  RealGrid lower_grad_inner(const RealGrid& inner, const RealGrid& outer) const override {
    return to_grid(A_ * to_vec(inner) - B_ * to_vec(outer));
  }
  RealGrid lower_grad_outer(const RealGrid& inner, const RealGrid& outer) const override {
    (void)outer;
    return to_grid(-B_.transpose() * to_vec(inner));
  }
  GradPair upper_grad(const RealGrid& inner, const RealGrid& outer) const override {
    return {to_grid(to_vec(inner) - a_), to_grid(to_vec(outer) - b_)};
  }
  RealGrid hvp_lower_inner(const RealGrid&, const RealGrid&, const RealGrid& v,
                           double) const override {
    return to_grid(A_ * to_vec(v));
  }
  RealGrid jvp_lower_mixed(const RealGrid&, const RealGrid&, const RealGrid& w,
                           double) const override {
    return to_grid(-B_.transpose() * to_vec(w));
  }

  // Exact implicit-function-theorem hypergradient at (theta, phi).
  RealGrid exact_hypergrad(const RealGrid& inner, const RealGrid& outer) const {
    const Eigen::VectorXd t = to_vec(inner), p = to_vec(outer);
    const Eigen::VectorXd w = A_.ldlt().solve(t - a_);
    return to_grid((p - b_) + B_.transpose() * w);
  }

  // Outer optimum of the nested problem, phi* = (I + C^T C)^-1 (C^T a + b)
  // with C = A^-1 B the best-response map.
  RealGrid bilevel_optimum() const {
    const Eigen::MatrixXd c = A_.ldlt().solve(B_);
    const Eigen::MatrixXd lhs =
        Eigen::MatrixXd::Identity(B_.cols(), B_.cols()) + c.transpose() * c;
    return to_grid(lhs.ldlt().solve(c.transpose() * a_ + b_));
  }

  RealGrid best_response(const RealGrid& outer) const {
    return to_grid(A_.ldlt().solve(B_ * to_vec(outer)));
  }

  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& B() const { return B_; }

 private:
  Eigen::MatrixXd A_, B_;
  Eigen::VectorXd a_, b_;
};

// A single convex objective shared by both levels, mirroring the structure
// of the real problem (lower == upper). Coordinate descent is monotone here
// for step sizes below 2 / (1 + s |B|).
//   L(theta, phi) = 1/2 |theta - a|^2 + 1/2 |phi - b|^2 + s theta^T B phi
class SharedQuadraticProblem : public smo::BilevelProblem {
 public:
  SharedQuadraticProblem(Eigen::MatrixXd B, Eigen::VectorXd a, Eigen::VectorXd b, double s)
      : B_(std::move(B)), a_(std::move(a)), b_(std::move(b)), s_(s) {}

  std::pair<int, int> inner_shape() const override { return {(int)B_.rows(), 1}; }
  std::pair<int, int> outer_shape() const override { return {(int)B_.cols(), 1}; }

  double lower_loss(const RealGrid& inner, const RealGrid& outer) const override {
    const Eigen::VectorXd t = to_vec(inner), p = to_vec(outer);
    return 0.5 * (t - a_).squaredNorm() + 0.5 * (p - b_).squaredNorm() + s_ * t.dot(B_ * p);
  }
  double upper_loss(const RealGrid& inner, const RealGrid& outer) const override {
    return lower_loss(inner, outer);
  }
  RealGrid lower_grad_inner(const RealGrid& inner, const RealGrid& outer) const override {
    return to_grid((to_vec(inner) - a_) + s_ * B_ * to_vec(outer));
  }
  RealGrid lower_grad_outer(const RealGrid& inner, const RealGrid& outer) const override {
    return to_grid((to_vec(outer) - b_) + s_ * B_.transpose() * to_vec(inner));
  }
  GradPair upper_grad(const RealGrid& inner, const RealGrid& outer) const override {
    return {lower_grad_inner(inner, outer), lower_grad_outer(inner, outer)};
  }
  RealGrid hvp_lower_inner(const RealGrid&, const RealGrid&, const RealGrid& v,
                           double) const override {
    return v;
  }
  RealGrid jvp_lower_mixed(const RealGrid&, const RealGrid&, const RealGrid& w,
                           double) const override {
    return to_grid(s_ * B_.transpose() * to_vec(w));
  }

 private:
  Eigen::MatrixXd B_;
  Eigen::VectorXd a_, b_;
  double s_;
};

// lower(theta, phi) = theta^T B phi, used for the mixed-product identity.
class BilinearProblem : public smo::BilevelProblem {
 public:
  explicit BilinearProblem(Eigen::MatrixXd B) : B_(std::move(B)) {}

  std::pair<int, int> inner_shape() const override { return {(int)B_.rows(), 1}; }
  std::pair<int, int> outer_shape() const override { return {(int)B_.cols(), 1}; }

  double lower_loss(const RealGrid& inner, const RealGrid& outer) const override {
    return to_vec(inner).dot(B_ * to_vec(outer));
  }
  double upper_loss(const RealGrid& inner, const RealGrid& outer) const override {
    return lower_loss(inner, outer);
  }
  RealGrid lower_grad_inner(const RealGrid&, const RealGrid& outer) const override {
    return to_grid(B_ * to_vec(outer));
  }
  RealGrid lower_grad_outer(const RealGrid& inner, const RealGrid&) const override {
    return to_grid(B_.transpose() * to_vec(inner));
  }
  GradPair upper_grad(const RealGrid& inner, const RealGrid& outer) const override {
    return {lower_grad_inner(inner, outer), lower_grad_outer(inner, outer)};
  }

 private:
  Eigen::MatrixXd B_;
};

inline RealGrid random_grid(int rows, int cols, unsigned seed, double scale = 1.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  RealGrid g(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) g(r, c) = nd(rng);
  return g;
}

}  // namespace fixtures
