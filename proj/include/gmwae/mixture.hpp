#pragma once

// Closed-form Gaussian and mixture-prior mathematics: equidistant-mean prior
// construction, diagonal-Gaussian KL, categorical KL, reparameterized
// sampling.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "gmwae/common.hpp"

namespace gmwae {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct DiagGaussian {
  Vec mean;
  Vec stddev;  // strictly positive

  DiagGaussian(Vec m, Vec s) : mean(std::move(m)), stddev(std::move(s)) {
    if (mean.size() != stddev.size())
      throw DimensionError("DiagGaussian: mean/stddev size mismatch");
    if ((stddev.array() <= 0.0).any())
      throw std::invalid_argument("DiagGaussian: stddev must be positive");
  }
};

// K mutually equidistant mode means: the regular (K-1)-simplex with edge
// length 4*sigma, centered at the origin, embedded in the first K-1
// coordinates and zero-padded to dim_z. Columns of the Helmert basis give the
// simplex vertices directly (pairwise distance sqrt(2) before scaling).
inline std::vector<Vec> build_equidistant_means(int K, int dim_z,
                                                double sigma) {
  if (K < 2) throw std::invalid_argument("build_equidistant_means: K >= 2");
  if (sigma <= 0.0)
    throw std::invalid_argument("build_equidistant_means: sigma > 0");
  if (dim_z < K - 1)
    throw DimensionError(
        "build_equidistant_means: a regular simplex of K points needs dim_z "
        ">= K-1");
  Mat h = Mat::Zero(K - 1, K);
  for (int j = 1; j < K; ++j) {
    double norm = 1.0 / std::sqrt(double(j) * (j + 1));
    for (int i = 0; i < j; ++i) h(j - 1, i) = norm;
    h(j - 1, j) = -double(j) * norm;
  }
  const double edge_scale = 4.0 * sigma / std::sqrt(2.0);
  std::vector<Vec> means(K, Vec::Zero(dim_z));
  for (int k = 0; k < K; ++k)
    means[k].head(K - 1) = edge_scale * h.col(k);
  return means;
}

struct MixturePrior {
  int K = 0;
  int dim_z = 0;
  std::vector<Vec> means;       // mode centers
  double sigma = 1.0;           // isotropic per-mode stddev
  std::vector<double> weights;  // mode probabilities

  static MixturePrior equidistant(int K, int dim_z, double sigma = 1.0) {
    MixturePrior p;
    p.K = K;
    p.dim_z = dim_z;
    p.sigma = sigma;
    p.means = build_equidistant_means(K, dim_z, sigma);
    p.weights.assign(K, 1.0 / K);
    return p;
  }

  void validate() const {
    if (K < 1 || dim_z < 1 || int(means.size()) != K ||
        int(weights.size()) != K)
      throw DimensionError("MixturePrior: inconsistent sizes");
    if (sigma <= 0.0) throw std::invalid_argument("MixturePrior: sigma > 0");
    double sum = 0.0;
    for (double w : weights) {
      if (w <= 0.0)
        throw std::invalid_argument("MixturePrior: weights must be positive");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("MixturePrior: weights must sum to 1");
  }
};

// KL( N(mq, diag(sq^2)) || N(mp, diag(sp^2)) ), closed form.
inline double diag_gaussian_kl(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mean.size() != p.mean.size())
    throw DimensionError("diag_gaussian_kl: dimension mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < q.mean.size(); ++i) {
    double r = q.stddev(i) / p.stddev(i);
    double dm = (q.mean(i) - p.mean(i)) / p.stddev(i);
    kl += 0.5 * (r * r + dm * dm - 1.0) - std::log(r);
  }
  return kl;
}

// sum_k q_k log(q_k / p_k), with 0 log 0 = 0.
inline double categorical_kl(const std::vector<double>& q,
                             const std::vector<double>& p) {
  if (q.size() != p.size())
    throw DimensionError("categorical_kl: dimension mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] == 0.0) continue;
    if (p[k] <= 0.0)
      throw InfiniteDivergenceError(
          "categorical_kl: q has mass where p is zero");
    kl += q[k] * std::log(q[k] / p[k]);
  }
  return kl;
}

// mean + stddev .* noise; differentiable in (mean, stddev) for fixed noise.
inline Vec reparam_sample(const DiagGaussian& g, const Vec& noise) {
  if (noise.size() != g.mean.size())
    throw DimensionError("reparam_sample: noise dimension mismatch");
  return g.mean + g.stddev.cwiseProduct(noise);
}

struct PriorDraw {
  int k;
  Vec z;
};

// k ~ weights, z ~ N(mu_k, (stddev_scale * sigma)^2 I). stddev_scale = 0.5
// gives the tightened per-mode sampling used for sample grids.
inline PriorDraw prior_sample(const MixturePrior& prior, Rng& rng,
                              double stddev_scale = 1.0) {
  std::discrete_distribution<int> pick(prior.weights.begin(),
                                       prior.weights.end());
  std::normal_distribution<double> unit(0.0, 1.0);
  PriorDraw d;
  d.k = pick(rng);
  d.z = prior.means[d.k];
  const double s = stddev_scale * prior.sigma;
  for (int i = 0; i < prior.dim_z; ++i) d.z(i) += s * unit(rng);
  return d;
}

}  // namespace gmwae
