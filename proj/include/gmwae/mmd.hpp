#pragma once

// Characteristic kernels and the unbiased MMD estimator used as the
// divergence penalty of the relaxed Wasserstein objective.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "gmwae/common.hpp"
#include "gmwae/mixture.hpp"

namespace gmwae {

struct ImqKernelMixture {
  std::vector<double> bandwidths;

  // The fixed bandwidth list used for all experiments; no tuning.
  static ImqKernelMixture standard() {
    return ImqKernelMixture{{0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0}};
  }

  void validate() const {
    if (bandwidths.empty())
      throw std::invalid_argument("ImqKernelMixture: empty bandwidth list");
    for (double c : bandwidths)
      if (c <= 0.0)
        throw std::invalid_argument("ImqKernelMixture: bandwidths > 0");
  }

  // Value at a given squared distance; the kernel is a function of
  // ||z1 - z2||^2 only.
  double at_sqdist(double d2) const {
    double k = 0.0;
    for (double c : bandwidths) k += c / (c + d2);
    return k;
  }

  // Value at zero distance (the gram diagonal): one per bandwidth.
  double self_value() const { return double(bandwidths.size()); }
};

// sum_i C_i / (C_i + ||z1 - z2||^2)
inline double imq_kernel(const ImqKernelMixture& kern, const Vec& z1,
                         const Vec& z2) {
  if (z1.size() != z2.size())
    throw DimensionError("imq_kernel: dimension mismatch");
  return kern.at_sqdist((z1 - z2).squaredNorm());
}

// Aggregated-posterior (or prior) samples with probability weights.
struct WeightedSampleSet {
  Mat points;            // N x dim_z, one sample per row
  Eigen::VectorXd weights;  // N, nonnegative, sums to 1

  static WeightedSampleSet uniform(Mat pts) {
    WeightedSampleSet s;
    s.weights = Eigen::VectorXd::Constant(pts.rows(), 1.0 / double(pts.rows()));
    s.points = std::move(pts);
    return s;
  }

  void validate() const {
    if (points.rows() != weights.size())
      throw DimensionError("WeightedSampleSet: points/weights mismatch");
    if ((weights.array() < 0.0).any())
      throw std::invalid_argument("WeightedSampleSet: negative weight");
    if (std::abs(weights.sum() - 1.0) > 1e-9)
      throw std::invalid_argument(
          "WeightedSampleSet: weights must sum to 1");
  }
};

// Full gram matrix; entry (i,j) = kernel(p_i, p_j). Row-major accumulation,
// symmetric by construction.
inline Mat gram_matrix(const ImqKernelMixture& kern, const Mat& points) {
  const Eigen::Index n = points.rows();
  Eigen::VectorXd sq = points.rowwise().squaredNorm();
  Mat d2 = (-2.0 * points * points.transpose());
  d2.colwise() += sq;
  d2.rowwise() += sq.transpose();
  d2 = d2.cwiseMax(0.0);
  Mat g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = kern.at_sqdist(d2(i, j));
  return g;
}

inline Mat cross_gram(const ImqKernelMixture& kern, const Mat& a,
                      const Mat& b) {
  if (a.cols() != b.cols())
    throw DimensionError("cross_gram: dimension mismatch");
  Eigen::VectorXd an = a.rowwise().squaredNorm();
  Eigen::VectorXd bn = b.rowwise().squaredNorm();
  Mat d2 = (-2.0 * a * b.transpose());
  d2.colwise() += an;
  d2.rowwise() += bn.transpose();
  d2 = d2.cwiseMax(0.0);
  Mat g(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      g(i, j) = kern.at_sqdist(d2(i, j));
  return g;
}

// Weighted U-statistic estimate of
//   E_q,q[K] + E_p,p[K] - 2 E_q,p[K].
// Within-set terms exclude i = j pairs and normalize by (1 - sum w^2); the
// cross term uses all pairs. With uniform weights this reduces to the
// standard n(n-1)-pair unbiased estimator. May be negative.
inline double mmd_unbiased(const ImqKernelMixture& kern,
                           const WeightedSampleSet& q,
                           const WeightedSampleSet& p) {
  kern.validate();
  q.validate();
  p.validate();
  if (q.points.rows() < 2 || p.points.rows() < 2)
    throw std::invalid_argument("mmd_unbiased: need at least 2 points per set");

  auto within = [&](const WeightedSampleSet& s) {
    Mat g = gram_matrix(kern, s.points);
    double quad = s.weights.dot(g * s.weights);
    double w2 = s.weights.squaredNorm();
    return (quad - kern.self_value() * w2) / (1.0 - w2);
  };
  Mat gqp = cross_gram(kern, q.points, p.points);
  double cross = q.weights.dot(gqp * p.weights);
  return within(q) + within(p) - 2.0 * cross;
}

// Same estimator on the joint (z, k) space with the product kernel
// K((z1,k1),(z2,k2)) = K_z(z1,z2) * [k1 == k2]: pairs from different modes
// contribute nothing, so matching requires both per-mode mass and per-mode
// shape. Characteristic on the joint whenever K_z is characteristic on z.
inline double mmd_unbiased_joint(const ImqKernelMixture& kern,
                                 const WeightedSampleSet& q,
                                 const std::vector<int>& q_modes,
                                 const WeightedSampleSet& p,
                                 const std::vector<int>& p_modes) {
  kern.validate();
  q.validate();
  p.validate();
  if (q.points.rows() < 2 || p.points.rows() < 2)
    throw std::invalid_argument(
        "mmd_unbiased_joint: need at least 2 points per set");
  if (Eigen::Index(q_modes.size()) != q.points.rows() ||
      Eigen::Index(p_modes.size()) != p.points.rows())
    throw DimensionError("mmd_unbiased_joint: mode label count mismatch");

  auto mask_within = [&](const WeightedSampleSet& s,
                         const std::vector<int>& modes) {
    Mat g = gram_matrix(kern, s.points);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j)
        if (modes[std::size_t(i)] != modes[std::size_t(j)]) g(i, j) = 0.0;
    double quad = s.weights.dot(g * s.weights);
    double w2 = s.weights.squaredNorm();
    return (quad - kern.self_value() * w2) / (1.0 - w2);
  };
  Mat gqp = cross_gram(kern, q.points, p.points);
  for (Eigen::Index i = 0; i < gqp.rows(); ++i)
    for (Eigen::Index j = 0; j < gqp.cols(); ++j)
      if (q_modes[std::size_t(i)] != p_modes[std::size_t(j)]) gqp(i, j) = 0.0;
  double cross = q.weights.dot(gqp * p.weights);
  return mask_within(q, q_modes) + mask_within(p, p_modes) - 2.0 * cross;
}

}  // namespace gmwae
