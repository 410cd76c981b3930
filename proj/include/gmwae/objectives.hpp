#pragma once

// The two training objectives. Both treat the discrete posterior exactly
// (all K modes weighted by q_D(k|x)) and draw one reparameterized continuous
// sample per (x, k). Gradients flow through the reparameterization and
// through the q_D weights.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "gmwae/common.hpp"
#include "gmwae/mixture.hpp"
#include "gmwae/mmd.hpp"
#include "gmwae/nets.hpp"
#include "gmwae/tape.hpp"

namespace gmwae {

enum class ReconModel { gaussian_fixed_var, bernoulli };

struct LossReport {
  double total = 0.0;
  double reconstruction = 0.0;
  double mmd_penalty = 0.0;   // WAE only
  double kl_discrete = 0.0;   // VAE only
  double kl_continuous = 0.0; // VAE only
  double lambda = 0.0;
};

struct ObjectiveResult {
  LossReport report;
  // Gradients aligned with the trainable tensors of the respective stores.
  std::vector<Mat> enc_grads;
  std::vector<Mat> dec_grads;
};

namespace detail {

inline void check_batch(const NetworkArch& arch, const MixturePrior& prior,
                        const Mat& x) {
  if (x.cols() != arch.input_dim())
    throw DimensionError("objective: input width mismatch");
  if (prior.K != arch.K || prior.dim_z != arch.dim_z)
    throw DimensionError("objective: prior/arch mismatch");
}

inline Mat draw_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = unit(rng);
  return m;
}

// z_k = mu_k + exp(log_std_k) .* eps
inline tape::Var reparam(tape::Graph& g, const EncoderOut& eo, int k,
                         const Mat& eps) {
  return g.add(eo.mu[k], g.mul(g.exp(eo.log_std[k]), g.constant(eps)));
}

// Within-set term of the weighted U-statistic for a constant sample set,
// with a 0/1 pair mask for the joint-space kernel.
inline double within_term_const(const ImqKernelMixture& kern, const Mat& pts,
                                const Mat& mask) {
  const double n = double(pts.rows());
  Mat gm = gram_matrix(kern, pts).cwiseProduct(mask);
  double quad = gm.sum() / (n * n);
  double w2 = 1.0 / n;
  return (quad - kern.self_value() * w2) / (1.0 - w2);
}

}  // namespace detail

// Relaxed 2-Wasserstein objective: mean mode-weighted squared reconstruction
// error plus lambda times the unbiased MMD between the weighted aggregated
// posterior (B*K points, weights q_D(k|x)/B) and B*K prior samples.
//
// joint_mmd selects the divergence over the joint (z, k) via the product
// kernel K_z * [k1 == k2]; it is the default because the z-marginal variant
// lets the encoder match the prior's z-mixture while abandoning discrete
// modes. The marginal variant remains available for comparison runs.
inline ObjectiveResult wae_objective(EncoderParams& enc, DecoderParams& dec,
                                     const MixturePrior& prior,
                                     const ImqKernelMixture& kern, const Mat& x,
                                     Rng& rng, double lambda,
                                     bool with_grads = true,
                                     bool training = true,
                                     bool joint_mmd = true) {
  detail::check_batch(enc.arch, prior, x);
  const Eigen::Index batch = x.rows();
  if (batch < 2)
    throw std::invalid_argument(
        "wae_objective: batch too small for the U-statistic");
  const int K = enc.arch.K, dz = enc.arch.dim_z;

  tape::Graph g;
  BoundParams pe(g, enc.store, with_grads);
  BoundParams pd(g, dec.store, with_grads);
  tape::Var xv = g.constant(x);
  EncoderOut eo = build_encoder(g, pe, enc.arch, xv, training);

  tape::Var recon;
  std::vector<tape::Var> zs, wcols;
  zs.reserve(K);
  wcols.reserve(K);
  for (int k = 0; k < K; ++k) {
    tape::Var z = detail::reparam(g, eo, k, detail::draw_normal(batch, dz, rng));
    zs.push_back(z);
    wcols.push_back(g.col(eo.probs, k));
    tape::Var y = build_decoder(g, pd, dec.arch, z, training);
    tape::Var diff = g.sub(xv, y);
    tape::Var rec_k = g.row_sums(g.mul(diff, diff));
    tape::Var contrib = g.dot(wcols.back(), rec_k);
    recon = (k == 0) ? contrib : g.add(recon, contrib);
  }
  recon = g.scale(recon, 1.0 / double(batch));

  // Aggregated posterior sample set and its weights.
  tape::Var zagg = g.vstack(zs);
  tape::Var w = g.scale(g.vstack(wcols), 1.0 / double(batch));

  // Prior side: equally many i.i.d. prior draws, uniform weights.
  const Eigen::Index m = batch * K;
  Mat prior_pts(m, dz);
  std::vector<int> prior_modes(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    PriorDraw d = prior_sample(prior, rng);
    prior_pts.row(i) = d.z.transpose();
    prior_modes[std::size_t(i)] = d.k;
  }

  // Mode-equality masks for the joint-space product kernel; all-ones when
  // marginalizing k. The q side is laid out in B-row blocks per mode.
  Mat mask_qq = Mat::Ones(m, m), mask_pp = Mat::Ones(m, m),
      mask_qp = Mat::Ones(m, m);
  if (joint_mmd) {
    mask_qq.setZero();
    for (int k = 0; k < K; ++k)
      mask_qq.block(Eigen::Index(k) * batch, Eigen::Index(k) * batch, batch,
                    batch)
          .setOnes();
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        mask_pp(i, j) =
            prior_modes[std::size_t(i)] == prior_modes[std::size_t(j)] ? 1.0
                                                                       : 0.0;
    for (int k = 0; k < K; ++k)
      for (Eigen::Index j = 0; j < m; ++j)
        if (prior_modes[std::size_t(j)] != k)
          mask_qp.block(Eigen::Index(k) * batch, j, batch, 1).setZero();
  }

  tape::Var kqq =
      g.mul(g.imq_mix(g.pairwise_sqdist(zagg, zagg), kern.bandwidths),
            g.constant(mask_qq));
  tape::Var quad_qq = g.dot(w, g.matmul(kqq, w));
  tape::Var w2 = g.dot(w, w);
  tape::Var denom = g.add_scalar(g.scale(w2, -1.0), 1.0);
  tape::Var term_qq =
      g.mul(g.sub(quad_qq, g.scale(w2, kern.self_value())), g.inv(denom));

  double term_pp = detail::within_term_const(kern, prior_pts, mask_pp);

  tape::Var kqp =
      g.mul(g.imq_mix(g.pairwise_sqdist(zagg, g.constant(prior_pts)),
                      kern.bandwidths),
            g.constant(mask_qp));
  tape::Var wp = g.constant(Mat::Constant(m, 1, 1.0 / double(m)));
  tape::Var cross = g.dot(w, g.matmul(kqp, wp));

  tape::Var mmd = g.add(g.add_scalar(term_qq, term_pp), g.scale(cross, -2.0));
  tape::Var total = g.add(recon, g.scale(mmd, lambda));

  ObjectiveResult res;
  res.report.reconstruction = g.val(recon)(0, 0);
  res.report.mmd_penalty = g.val(mmd)(0, 0);
  res.report.total = g.val(total)(0, 0);
  res.report.lambda = lambda;
  if (with_grads) {
    g.backward(total);
    res.enc_grads = pe.trainable_grads();
    res.dec_grads = pd.trainable_grads();
  }
  return res;
}

// Negative ELBO with the discrete KL separated out:
//   E_x[ sum_k q_D(k|x) ( -log p_G(x|z_k) + KL(q_C(.|k,x) || p_C(.|k)) )
//        + KL(q_D(.|x) || p_D) ]
inline ObjectiveResult elbo_objective(
    EncoderParams& enc, DecoderParams& dec, const MixturePrior& prior,
    const Mat& x, Rng& rng,
    ReconModel recon_model = ReconModel::gaussian_fixed_var,
    bool with_grads = true, bool training = true) {
  detail::check_batch(enc.arch, prior, x);
  const Eigen::Index batch = x.rows();
  if (batch < 1) throw std::invalid_argument("elbo_objective: empty batch");
  const int K = enc.arch.K, dz = enc.arch.dim_z;
  const double s2 = prior.sigma * prior.sigma;

  tape::Graph g;
  BoundParams pe(g, enc.store, with_grads);
  BoundParams pd(g, dec.store, with_grads);
  tape::Var xv = g.constant(x);
  EncoderOut eo = build_encoder(g, pe, enc.arch, xv, training);

  tape::Var recon, klc;
  for (int k = 0; k < K; ++k) {
    tape::Var z = detail::reparam(g, eo, k, detail::draw_normal(batch, dz, rng));
    tape::Var y = build_decoder(g, pd, dec.arch, z, training);
    tape::Var nll_k;
    if (recon_model == ReconModel::gaussian_fixed_var) {
      // -log N(x | g(z), I) up to the additive constant: ||x - g(z)||^2 / 2
      tape::Var diff = g.sub(xv, y);
      nll_k = g.scale(g.row_sums(g.mul(diff, diff)), 0.5);
    } else {
      const double eps = 1e-7;
      tape::Var yc = g.clamp(y, eps, 1.0 - eps);
      tape::Var one_minus = g.add_scalar(g.scale(yc, -1.0), 1.0);
      tape::Var xneg = g.constant((1.0 - x.array()).matrix());
      tape::Var ll = g.add(g.mul(xv, g.log(yc)),
                           g.mul(xneg, g.log(one_minus)));
      nll_k = g.scale(g.row_sums(ll), -1.0);
    }

    // Closed-form KL between the diagonal posterior head and prior mode k.
    tape::Var mu = eo.mu[k];
    tape::Var ls = eo.log_std[k];
    tape::Var var_term = g.scale(g.exp(g.scale(ls, 2.0)), 0.5 / s2);
    tape::Var dm =
        g.add_rows(mu, g.constant((-prior.means[k]).transpose()));
    tape::Var mean_term = g.scale(g.mul(dm, dm), 0.5 / s2);
    tape::Var per_dim = g.add_scalar(
        g.add(g.add(var_term, mean_term), g.scale(ls, -1.0)),
        std::log(prior.sigma) - 0.5);
    tape::Var kl_k = g.row_sums(per_dim);

    tape::Var qk = g.col(eo.probs, k);
    tape::Var rc = g.dot(qk, nll_k);
    tape::Var kc = g.dot(qk, kl_k);
    recon = (k == 0) ? rc : g.add(recon, rc);
    klc = (k == 0) ? kc : g.add(klc, kc);
  }
  recon = g.scale(recon, 1.0 / double(batch));
  klc = g.scale(klc, 1.0 / double(batch));

  Eigen::RowVectorXd neg_log_p(K);
  for (int k = 0; k < K; ++k) neg_log_p(k) = -std::log(prior.weights[k]);
  tape::Var kld = g.scale(
      g.sum(g.mul(eo.probs, g.add_rows(eo.log_probs, g.constant(neg_log_p)))),
      1.0 / double(batch));

  tape::Var total = g.add(g.add(recon, klc), kld);

  ObjectiveResult res;
  res.report.reconstruction = g.val(recon)(0, 0);
  res.report.kl_continuous = g.val(klc)(0, 0);
  res.report.kl_discrete = g.val(kld)(0, 0);
  res.report.total = g.val(total)(0, 0);
  if (with_grads) {
    g.backward(total);
    res.enc_grads = pe.trainable_grads();
    res.dec_grads = pd.trainable_grads();
  }
  return res;
}

}  // namespace gmwae
