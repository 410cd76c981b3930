#pragma once

// Shared helpers for the test suites: random matrices and a central
// finite-difference gradient checker for tape graphs.

#include <functional>
#include <random>
#include <vector>

#include "gmwae/common.hpp"
#include "gmwae/tape.hpp"

namespace testutil {

using gmwae::Mat;
using gmwae::Rng;

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                      double scale = 1.0) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * unit(rng);
  return m;
}

inline Mat random_positive(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                           double lo = 0.2, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

// Gauss-Hermite nodes/weights (weight e^{-t^2}) via the Golub-Welsch
// tridiagonal eigenproblem. Used as an independent quadrature oracle:
// E_{x~N(m,s^2)}[f(x)] ~= (1/sqrt(pi)) sum_i w_i f(m + sqrt(2) s t_i).
struct GaussHermite {
  Eigen::VectorXd nodes, weights;

  explicit GaussHermite(int n) {
    Mat jacobi = Mat::Zero(n, n);
    for (int i = 1; i < n; ++i)
      jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(i / 2.0);
    Eigen::SelfAdjointEigenSolver<Mat> es(jacobi);
    nodes = es.eigenvalues();
    weights.resize(n);
    const double mu0 = std::sqrt(M_PI);
    for (int i = 0; i < n; ++i)
      weights(i) = mu0 * es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }

  template <typename F>
  double gaussian_expect(double mean, double stddev, F f) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i)
      acc += weights(i) * f(mean + std::sqrt(2.0) * stddev * nodes(i));
    return acc / std::sqrt(M_PI);
  }
};

// Builds the scalar graph twice per perturbed element and compares the
// analytic gradient of every input against central differences.
//
// build(graph, leaf_vars) must return a 1x1 Var.
struct GradCheck {
  double h = 1e-5;
  double tol = 1e-6;

  using BuildFn = std::function<gmwae::tape::Var(
      gmwae::tape::Graph&, const std::vector<gmwae::tape::Var>&)>;

  // Returns the largest relative mismatch seen.
  double run(std::vector<Mat> inputs, const BuildFn& build) const {
    auto eval = [&](const std::vector<Mat>& ins) {
      gmwae::tape::Graph g;
      std::vector<gmwae::tape::Var> vars;
      for (const Mat& m : ins) vars.push_back(g.constant(m));
      return g.val(build(g, vars))(0, 0);
    };
    gmwae::tape::Graph g;
    std::vector<gmwae::tape::Var> vars;
    for (const Mat& m : inputs) vars.push_back(g.leaf(m));
    gmwae::tape::Var out = build(g, vars);
    g.backward(out);
    double worst = 0.0;
    for (std::size_t v = 0; v < inputs.size(); ++v) {
      Mat grad = g.grad(vars[v]);
      for (Eigen::Index i = 0; i < inputs[v].rows(); ++i)
        for (Eigen::Index j = 0; j < inputs[v].cols(); ++j) {
          std::vector<Mat> plus = inputs, minus = inputs;
          plus[v](i, j) += h;
          minus[v](i, j) -= h;
          double fd = (eval(plus) - eval(minus)) / (2.0 * h);
          double denom = std::max({1.0, std::abs(fd), std::abs(grad(i, j))});
          worst = std::max(worst, std::abs(fd - grad(i, j)) / denom);
        }
    }
    return worst;
  }
};

}  // namespace testutil
