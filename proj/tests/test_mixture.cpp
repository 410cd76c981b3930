#include <catch2/catch_amalgamated.hpp>

#include "gmwae/mixture.hpp"

#include <cmath>

#include "test_util.hpp"

using gmwae::build_equidistant_means;
using gmwae::categorical_kl;
using gmwae::diag_gaussian_kl;
using gmwae::DiagGaussian;
using gmwae::MixturePrior;
using gmwae::prior_sample;
using gmwae::reparam_sample;
using gmwae::Rng;
using gmwae::Vec;
using testutil::GaussHermite;

TEST_CASE("equidistant means: two modes in one dimension") {
  auto means = build_equidistant_means(2, 1, 1.0);
  REQUIRE(means.size() == 2);
  CHECK(means[0](0) == Catch::Approx(2.0).margin(1e-12));
  CHECK(means[1](0) == Catch::Approx(-2.0).margin(1e-12));
  CHECK((means[0] - means[1]).norm() == Catch::Approx(4.0).margin(1e-12));
}

TEST_CASE("equidistant means: ten modes in ten dimensions, 4-sigma spacing") {
  const double sigma = 1.3;
  auto means = build_equidistant_means(10, 10, sigma);
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j)
      CHECK((means[i] - means[j]).norm() ==
            Catch::Approx(4.0 * sigma).margin(1e-6));
}

TEST_CASE("equidistant means: triangle in the plane, brute-force distances") {
  auto means = build_equidistant_means(3, 2, 0.5);
  gmwae::Mat dist(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) dist(i, j) = (means[i] - means[j]).norm();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j)
        CHECK(dist(i, j) == 0.0);
      else
        CHECK(dist(i, j) == Catch::Approx(2.0).margin(1e-9));
    }
}

TEST_CASE("equidistant means: centered, zero-padded, and dimension-checked") {
  auto means = build_equidistant_means(4, 7, 1.0);
  Vec centroid = Vec::Zero(7);
  for (const Vec& m : means) centroid += m;
  CHECK(centroid.norm() < 1e-9);
  for (const Vec& m : means)
    CHECK(m.tail(7 - 3).norm() == 0.0);  // only the first K-1 coords used
  CHECK_THROWS_AS(build_equidistant_means(5, 3, 1.0), gmwae::DimensionError);
}

TEST_CASE("simplex property: constant off-diagonal for K = 2..10") {
  for (int K = 2; K <= 10; ++K) {
    auto means = build_equidistant_means(K, K, 2.0);
    double expect = 8.0;  // 4 sigma
    for (int i = 0; i < K; ++i)
      for (int j = i + 1; j < K; ++j)
        CHECK((means[i] - means[j]).norm() ==
              Catch::Approx(expect).margin(1e-9));
  }
}

TEST_CASE("diagonal KL: identical distributions give zero") {
  DiagGaussian q(Vec::Zero(3), Vec::Ones(3));
  CHECK(diag_gaussian_kl(q, q) == 0.0);
}

TEST_CASE("diagonal KL: unit-variance mean shift gives ||mu||^2 / 2") {
  Vec mu(2);
  mu << 1.0, 0.0;
  DiagGaussian q(Vec::Zero(2), Vec::Ones(2));
  DiagGaussian p(mu, Vec::Ones(2));
  CHECK(diag_gaussian_kl(q, p) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("diagonal KL matches Gauss-Hermite quadrature on random pairs") {
  Rng rng(31);
  GaussHermite gh(40);
  for (int rep = 0; rep < 20; ++rep) {
    DiagGaussian q(testutil::random_mat(4, 1, rng).col(0),
                   testutil::random_positive(4, 1, rng, 0.3, 1.8).col(0));
    DiagGaussian p(testutil::random_mat(4, 1, rng).col(0),
                   testutil::random_positive(4, 1, rng, 0.3, 1.8).col(0));
    // KL factorizes over coordinates; integrate each 1-D term.
    double quad = 0.0;
    for (int d = 0; d < 4; ++d) {
      auto log_norm = [](double x, double m, double s) {
        double z = (x - m) / s;
        return -0.5 * z * z - std::log(s) - 0.5 * std::log(2.0 * M_PI);
      };
      quad += gh.gaussian_expect(q.mean(d), q.stddev(d), [&](double x) {
        return log_norm(x, q.mean(d), q.stddev(d)) -
               log_norm(x, p.mean(d), p.stddev(d));
      });
    }
    CHECK(diag_gaussian_kl(q, p) == Catch::Approx(quad).margin(1e-4));
  }
}

TEST_CASE("diagonal KL is nonnegative, zero only on identical pairs") {
  Rng rng(32);
  for (int rep = 0; rep < 1000; ++rep) {
    DiagGaussian q(testutil::random_mat(3, 1, rng).col(0),
                   testutil::random_positive(3, 1, rng).col(0));
    DiagGaussian p(testutil::random_mat(3, 1, rng).col(0),
                   testutil::random_positive(3, 1, rng).col(0));
    double kl = diag_gaussian_kl(q, p);
    CHECK(kl > 0.0);  // random pairs coincide with probability zero
  }
}

TEST_CASE("categorical KL examples") {
  std::vector<double> uniform10(10, 0.1);
  CHECK(categorical_kl(uniform10, uniform10) == 0.0);

  std::vector<double> onehot(10, 0.0);
  onehot[3] = 1.0;
  CHECK(categorical_kl(onehot, uniform10) ==
        Catch::Approx(std::log(10.0)).margin(1e-12));

  // direct-summation oracle
  std::vector<double> q{0.7, 0.3}, p{0.5, 0.5};
  double oracle = 0.7 * std::log(0.7 / 0.5) + 0.3 * std::log(0.3 / 0.5);
  CHECK(categorical_kl(q, p) == Catch::Approx(oracle).margin(1e-12));
  CHECK(categorical_kl(q, p) == Catch::Approx(0.08228).margin(5e-6));
}

TEST_CASE("categorical KL against uniform never exceeds log K") {
  Rng rng(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    int K = 2 + int(u(rng) * 9);
    std::vector<double> q(K), p(K, 1.0 / K);
    double sum = 0.0;
    for (double& v : q) sum += (v = -std::log(u(rng)));
    for (double& v : q) v /= sum;
    double kl = categorical_kl(q, p);
    CHECK(kl >= 0.0);
    CHECK(kl <= std::log(double(K)) + 1e-12);
  }
}

TEST_CASE("categorical KL error paths") {
  CHECK_THROWS_AS(categorical_kl({0.5, 0.5}, {1.0, 0.0}),
                  gmwae::InfiniteDivergenceError);
  CHECK_THROWS_AS(categorical_kl({0.5, 0.5}, {0.3, 0.3, 0.4}),
                  gmwae::DimensionError);
  // 0 log 0 = 0: q mass zero where p is zero is fine
  CHECK(categorical_kl({1.0, 0.0}, {1.0, 0.0}) == 0.0);
}

TEST_CASE("reparameterized sampling") {
  Vec mean(3), stddev(3), noise(3);
  mean << 1.0, -2.0, 0.5;
  stddev << 0.5, 1.5, 2.0;
  DiagGaussian g(mean, stddev);

  SECTION("zero noise returns the mean exactly") {
    CHECK(reparam_sample(g, Vec::Zero(3)) == mean);
  }
  SECTION("standard Gaussian is the identity transform") {
    noise << 0.3, -1.1, 2.2;
    DiagGaussian std_g(Vec::Zero(3), Vec::Ones(3));
    CHECK(reparam_sample(std_g, noise) == noise);
  }
  SECTION("derivatives w.r.t. mean and stddev are 1 and the noise") {
    noise << 0.7, -0.2, 1.4;
    const double h = 1e-6;
    for (int d = 0; d < 3; ++d) {
      DiagGaussian gp(mean + h * Vec::Unit(3, d), stddev);
      DiagGaussian gm(mean - h * Vec::Unit(3, d), stddev);
      double dmean =
          (reparam_sample(gp, noise)(d) - reparam_sample(gm, noise)(d)) /
          (2 * h);
      CHECK(dmean == Catch::Approx(1.0).margin(1e-6));
      DiagGaussian sp(mean, stddev + h * Vec::Unit(3, d));
      DiagGaussian sm(mean, stddev - h * Vec::Unit(3, d));
      double dstd =
          (reparam_sample(sp, noise)(d) - reparam_sample(sm, noise)(d)) /
          (2 * h);
      CHECK(dstd == Catch::Approx(noise(d)).margin(1e-6));
    }
  }
  SECTION("Monte-Carlo moments within three standard errors") {
    Rng rng(34);
    std::normal_distribution<double> unit(0.0, 1.0);
    const int n = 100000;
    Vec sum = Vec::Zero(3), sumsq = Vec::Zero(3);
    for (int i = 0; i < n; ++i) {
      Vec e(3);
      for (int d = 0; d < 3; ++d) e(d) = unit(rng);
      Vec x = reparam_sample(g, e);
      sum += x;
      sumsq += x.cwiseProduct(x);
    }
    for (int d = 0; d < 3; ++d) {
      double m = sum(d) / n;
      double v = sumsq(d) / n - m * m;
      double se_mean = stddev(d) / std::sqrt(double(n));
      double se_var = v * std::sqrt(2.0 / (n - 1));
      CHECK(std::abs(m - mean(d)) < 3 * se_mean);
      CHECK(std::abs(v - stddev(d) * stddev(d)) < 3 * se_var);
    }
  }
}

TEST_CASE("prior sampling") {
  MixturePrior prior = MixturePrior::equidistant(5, 6, 0.8);
  prior.validate();

  SECTION("stddev_scale zero lands exactly on a mode mean") {
    Rng rng(35);
    for (int rep = 0; rep < 50; ++rep) {
      auto d = prior_sample(prior, rng, 0.0);
      CHECK(d.z == prior.means[d.k]);
    }
  }
  SECTION("halved stddev gives E||z - mu_k||^2 = dim * (sigma/2)^2") {
    Rng rng(36);
    const int n = 40000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      auto d = prior_sample(prior, rng, 0.5);
      acc += (d.z - prior.means[d.k]).squaredNorm();
    }
    double expect = prior.dim_z * 0.25 * prior.sigma * prior.sigma;
    double se = std::sqrt(2.0 * prior.dim_z) * 0.25 * prior.sigma *
                prior.sigma / std::sqrt(double(n));
    CHECK(std::abs(acc / n - expect) < 3 * se);
  }
  SECTION("mode frequencies match the weights") {
    Rng rng(37);
    const int n = 100000;
    std::vector<int> counts(prior.K, 0);
    for (int i = 0; i < n; ++i) counts[prior_sample(prior, rng).k]++;
    for (int k = 0; k < prior.K; ++k) {
      double phat = double(counts[k]) / n;
      double se = std::sqrt(0.2 * 0.8 / n);
      CHECK(std::abs(phat - 0.2) < 3 * se);
    }
  }
}

TEST_CASE("prior validation catches bad weight vectors") {
  MixturePrior p = MixturePrior::equidistant(3, 4, 1.0);
  p.weights = {0.5, 0.5, 0.5};
  CHECK_THROWS(p.validate());
  p.weights = {1.0, 0.0, 0.0};
  CHECK_THROWS(p.validate());
}
