#pragma once

// Optimization loop: Adam, moment-matching pretraining of the Gaussian
// heads, deterministic batching, checkpointing and metric emission. A run
// directory holds the resolved config, a metrics CSV and parameter
// snapshots; the whole trace is a pure function of (config, dataset bytes).

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gmwae/common.hpp"
#include "gmwae/data.hpp"
#include "gmwae/mixture.hpp"
#include "gmwae/mmd.hpp"
#include "gmwae/nets.hpp"
#include "gmwae/objectives.hpp"

namespace gmwae {

enum class Objective { wae, vae };

inline const char* to_string(Objective o) {
  return o == Objective::wae ? "wae" : "vae";
}
inline const char* to_string(ReconModel m) {
  return m == ReconModel::gaussian_fixed_var ? "gaussian_fixed_var"
                                             : "bernoulli";
}
inline const char* to_string(ArchKind k) {
  return k == ArchKind::mlp ? "mlp" : "dcgan_small";
}

struct TrainConfig {
  Objective objective = Objective::wae;
  double lr = 8e-4;
  int batch_size = 100;
  int steps = 5000;
  double lambda = 10.0;
  uint64_t seed = 1;
  NetworkArch arch;
  int pretrain_steps = 2000;
  int pretrain_batch = 128;
  double pretrain_lr = 5e-3;
  int checkpoint_every = 100;
  ReconModel recon_model = ReconModel::gaussian_fixed_var;
  double prior_sigma = 1.0;
  int eval_subset = 2000;  // usage-metric subset size
  bool mmd_joint = true;   // WAE divergence over (z, k) vs z-marginal

  void validate() const {
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr > 0");
    if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch >= 2");
    if (steps < 0) throw std::invalid_argument("TrainConfig: steps >= 0");
    if (checkpoint_every < 1)
      throw std::invalid_argument("TrainConfig: checkpoint_every >= 1");
    arch.validate();
  }
};

// ---- Adam ----

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct AdamState {
  std::vector<Mat> m, v;
  long step = 0;
  AdamConfig cfg;

  static AdamState like(const std::vector<Mat*>& params,
                        AdamConfig cfg = {}) {
    AdamState st;
    st.cfg = cfg;
    for (const Mat* p : params) {
      st.m.push_back(Mat::Zero(p->rows(), p->cols()));
      st.v.push_back(Mat::Zero(p->rows(), p->cols()));
    }
    return st;
  }
};

inline std::vector<Mat*> trainable_params(ParamStore& s) {
  std::vector<Mat*> out;
  for (Tensor& t : s.tensors)
    if (t.trainable) out.push_back(&t.value);
  return out;
}

// Standard Adam update with bias correction.
inline void adam_step(AdamState& st, const std::vector<Mat*>& params,
                      const std::vector<Mat>& grads, double lr) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw DimensionError("adam_step: parameter/gradient count mismatch");
  st.step += 1;
  const double c1 = 1.0 - std::pow(st.cfg.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(st.cfg.beta2, double(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() ||
        grads[i].cols() != params[i]->cols())
      throw DimensionError("adam_step: gradient shape mismatch");
    st.m[i] = st.cfg.beta1 * st.m[i] + (1.0 - st.cfg.beta1) * grads[i];
    st.v[i] = st.cfg.beta2 * st.v[i] +
              (1.0 - st.cfg.beta2) * grads[i].cwiseProduct(grads[i]);
    *params[i] -= (lr * (st.m[i] / c1).array() /
                   ((st.v[i] / c2).array().sqrt() + st.cfg.eps))
                      .matrix();
  }
}

// ---- moment pretraining ----

// Minimizes sum_k E_x[ ||mu_k(x) - mu_k0||^2 + ||sigma_k(x) - sigma0||^2 ]
// over the Gaussian-head parameters. The classifier receives zero gradient
// here and is untouched.
inline void pretrain_moments(EncoderParams& enc, const MixturePrior& prior,
                             const Mat& x_sample, int steps, Rng& rng,
                             double lr = 5e-3, int batch_size = 128) {
  if (steps <= 0) return;
  if (prior.K != enc.arch.K || prior.dim_z != enc.arch.dim_z)
    throw DimensionError("pretrain_moments: prior/arch mismatch");
  auto params = trainable_params(enc.store);
  AdamState st = AdamState::like(params);
  const Eigen::Index n = x_sample.rows();
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  const int bsz = int(std::min<Eigen::Index>(batch_size, n));
  for (int s = 0; s < steps; ++s) {
    Mat xb(bsz, x_sample.cols());
    for (int i = 0; i < bsz; ++i) xb.row(i) = x_sample.row(pick(rng));
    tape::Graph g;
    BoundParams pe(g, enc.store, true);
    EncoderOut eo = build_encoder(g, pe, enc.arch, g.constant(xb), true);
    tape::Var loss;
    for (int k = 0; k < enc.arch.K; ++k) {
      tape::Var dm = g.add_rows(
          eo.mu[k], g.constant((-prior.means[k]).transpose()));
      tape::Var dsig =
          g.add_scalar(g.exp(eo.log_std[k]), -prior.sigma);
      tape::Var lk =
          g.add(g.sum(g.mul(dm, dm)), g.sum(g.mul(dsig, dsig)));
      loss = (k == 0) ? lk : g.add(loss, lk);
    }
    loss = g.scale(loss, 1.0 / double(bsz));
    g.backward(loss);
    adam_step(st, params, pe.trainable_grads(), lr);
  }
}

// Squared moment-matching loss on a sample; pretrain_moments drives this down.
inline double moment_loss(EncoderParams& enc, const MixturePrior& prior,
                          const Mat& x_sample) {
  tape::Graph g;
  BoundParams pe(g, enc.store, false);
  EncoderOut eo = build_encoder(g, pe, enc.arch, g.constant(x_sample), false);
  double loss = 0.0;
  for (int k = 0; k < enc.arch.K; ++k) {
    Mat dm = g.val(eo.mu[k]);
    dm.rowwise() -= prior.means[k].transpose();
    Mat ds = g.val(eo.log_std[k]).array().exp().matrix();
    ds.array() -= prior.sigma;
    loss += dm.squaredNorm() + ds.squaredNorm();
  }
  return loss / double(x_sample.rows());
}

// ---- usage diagnostics shared with the metrics writer ----

struct UsageStats {
  Eigen::VectorXd column_mass;  // K, mean q_D(k|x) over the subset
  double entropy = 0.0;
  double min_mass = 0.0;
};

inline UsageStats usage_stats(const EncoderParams& enc, const Mat& images) {
  UsageStats u;
  u.column_mass = Eigen::VectorXd::Zero(enc.arch.K);
  const Eigen::Index chunk = 512;
  for (Eigen::Index at = 0; at < images.rows(); at += chunk) {
    Eigen::Index take = std::min(chunk, images.rows() - at);
    Mat probs = encode_discrete(enc, images.middleRows(at, take));
    u.column_mass += probs.colwise().sum().transpose();
  }
  u.column_mass /= double(images.rows());
  u.min_mass = u.column_mass.minCoeff();
  u.entropy = 0.0;
  for (int k = 0; k < enc.arch.K; ++k)
    if (u.column_mass(k) > 0.0)
      u.entropy -= u.column_mass(k) * std::log(u.column_mass(k));
  return u;
}

// ---- config file (flat key = value; subset of TOML) ----

inline void apply_config_kv(TrainConfig& c, const std::string& key,
                            const std::string& value) {
  auto bad_value = [&] {
    throw Error("config: bad value for key '" + key + "': " + value);
  };
  auto as_int = [&] {
    try {
      return std::stoll(value);
    } catch (...) {
      bad_value();
      return 0ll;
    }
  };
  auto as_double = [&] {
    try {
      return std::stod(value);
    } catch (...) {
      bad_value();
      return 0.0;
    }
  };
  if (key == "objective") {
    if (value == "wae")
      c.objective = Objective::wae;
    else if (value == "vae")
      c.objective = Objective::vae;
    else
      bad_value();
  } else if (key == "lr")
    c.lr = as_double();
  else if (key == "batch_size")
    c.batch_size = int(as_int());
  else if (key == "steps")
    c.steps = int(as_int());
  else if (key == "lambda")
    c.lambda = as_double();
  else if (key == "seed")
    c.seed = uint64_t(as_int());
  else if (key == "pretrain_steps")
    c.pretrain_steps = int(as_int());
  else if (key == "pretrain_batch")
    c.pretrain_batch = int(as_int());
  else if (key == "pretrain_lr")
    c.pretrain_lr = as_double();
  else if (key == "checkpoint_every")
    c.checkpoint_every = int(as_int());
  else if (key == "recon_model") {
    if (value == "gaussian_fixed_var")
      c.recon_model = ReconModel::gaussian_fixed_var;
    else if (value == "bernoulli")
      c.recon_model = ReconModel::bernoulli;
    else
      bad_value();
  } else if (key == "prior_sigma")
    c.prior_sigma = as_double();
  else if (key == "eval_subset")
    c.eval_subset = int(as_int());
  else if (key == "mmd_joint")
    c.mmd_joint = as_int() != 0;
  else if (key == "arch") {
    if (value == "mlp")
      c.arch.kind = ArchKind::mlp;
    else if (value == "dcgan_small")
      c.arch.kind = ArchKind::dcgan_small;
    else
      bad_value();
  } else if (key == "K")
    c.arch.K = int(as_int());
  else if (key == "dim_z")
    c.arch.dim_z = int(as_int());
  else if (key == "image_h")
    c.arch.image_h = int(as_int());
  else if (key == "image_w")
    c.arch.image_w = int(as_int());
  else if (key == "head_hidden")
    c.arch.head_hidden = int(as_int());
  else if (key == "cls_hidden")
    c.arch.cls_hidden = int(as_int());
  else if (key == "dec_hidden")
    c.arch.dec_hidden = int(as_int());
  else if (key == "cls_filters")
    c.arch.cls_filters = int(as_int());
  else if (key == "dec_filters")
    c.arch.dec_filters = int(as_int());
  else if (key == "use_batch_norm")
    c.arch.use_batch_norm = as_int() != 0;
  else
    throw Error("config: unknown key '" + key + "'");
}

inline TrainConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  TrainConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r\"");
      auto e = s.find_last_not_of(" \t\r\"");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (strip(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config: line " + std::to_string(lineno) +
                  " is not key = value");
    apply_config_kv(c, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  return c;
}

inline void write_config_file(const TrainConfig& c, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write config file: " + path);
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  os << "objective = " << to_string(c.objective) << "\n"
     << "lr = " << fmt(c.lr) << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "steps = " << c.steps << "\n"
     << "lambda = " << fmt(c.lambda) << "\n"
     << "seed = " << c.seed << "\n"
     << "pretrain_steps = " << c.pretrain_steps << "\n"
     << "pretrain_batch = " << c.pretrain_batch << "\n"
     << "pretrain_lr = " << fmt(c.pretrain_lr) << "\n"
     << "checkpoint_every = " << c.checkpoint_every << "\n"
     << "recon_model = " << to_string(c.recon_model) << "\n"
     << "prior_sigma = " << fmt(c.prior_sigma) << "\n"
     << "eval_subset = " << c.eval_subset << "\n"
     << "mmd_joint = " << (c.mmd_joint ? 1 : 0) << "\n"
     << "arch = " << to_string(c.arch.kind) << "\n"
     << "K = " << c.arch.K << "\n"
     << "dim_z = " << c.arch.dim_z << "\n"
     << "image_h = " << c.arch.image_h << "\n"
     << "image_w = " << c.arch.image_w << "\n"
     << "head_hidden = " << c.arch.head_hidden << "\n"
     << "cls_hidden = " << c.arch.cls_hidden << "\n"
     << "dec_hidden = " << c.arch.dec_hidden << "\n"
     << "cls_filters = " << c.arch.cls_filters << "\n"
     << "dec_filters = " << c.arch.dec_filters << "\n"
     << "use_batch_norm = " << (c.arch.use_batch_norm ? 1 : 0) << "\n";
}

// ---- the training loop ----

struct RunResult {
  std::string dir;
  LossReport final_report;
  EncoderParams enc;
  DecoderParams dec;
};

namespace detail {

inline std::string checkpoint_path(const std::string& dir, int step) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%08d.bin", step);
  return dir + "/checkpoints/" + name;
}

inline void append_metrics(std::ofstream& csv, int step, const LossReport& r,
                           const UsageStats& u) {
  char line[512];
  std::snprintf(line, sizeof line,
                "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", step, r.total,
                r.reconstruction, r.mmd_penalty, r.kl_discrete,
                r.kl_continuous, u.entropy, u.min_mass);
  csv << line;
}

// Core loop shared by train() and the transplant experiment; `enc`/`dec`
// hold the starting parameters and are updated in place.
inline RunResult run_loop(const TrainConfig& cfg, const ImageDataset& ds,
                          EncoderParams enc, DecoderParams dec,
                          const std::string& run_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir + "/checkpoints");
  write_config_file(cfg, run_dir + "/config.toml");

  const MixturePrior prior =
      MixturePrior::equidistant(cfg.arch.K, cfg.arch.dim_z, cfg.prior_sigma);
  const ImqKernelMixture kern = ImqKernelMixture::standard();

  const Eigen::Index eval_n =
      std::min<Eigen::Index>(cfg.eval_subset, ds.size());
  const Mat eval_images = ds.images.topRows(eval_n);

  std::ofstream csv(run_dir + "/metrics.csv");
  if (!csv) throw DataError("cannot write metrics.csv in " + run_dir);
  csv << "step,total,reconstruction,mmd_penalty,kl_discrete,kl_continuous,"
         "usage_entropy,usage_min_mass\n";

  auto params_e = trainable_params(enc.store);
  auto params_d = trainable_params(dec.store);
  AdamState adam_e = AdamState::like(params_e);
  AdamState adam_d = AdamState::like(params_d);

  Rng noise_rng(mix_seed(cfg.seed, 2));

  auto evaluate = [&](const Mat& xb, Rng& rng, bool with_grads,
                      bool training) {
    if (cfg.objective == Objective::wae)
      return wae_objective(enc, dec, prior, kern, xb, rng, cfg.lambda,
                           with_grads, training, cfg.mmd_joint);
    return elbo_objective(enc, dec, prior, xb, rng, cfg.recon_model,
                          with_grads, training);
  };

  // Step-0 snapshot and metrics row (inference pass, separate noise stream).
  save_checkpoint(enc, dec, checkpoint_path(run_dir, 0));
  {
    Rng probe_rng(mix_seed(cfg.seed, 99));
    auto first = batch_iter(ds.size(), cfg.batch_size, cfg.seed, 0).front();
    ObjectiveResult r =
        evaluate(gather_rows(ds.images, first), probe_rng, false, false);
    append_metrics(csv, 0, r.report, usage_stats(enc, eval_images));
    csv.flush();
  }

  LossReport last{};
  std::vector<std::vector<int>> batches;
  std::size_t batch_at = 0;
  uint64_t epoch = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    if (batch_at == batches.size()) {
      batches = batch_iter(ds.size(), cfg.batch_size, cfg.seed, epoch++);
      batch_at = 0;
    }
    Mat xb = gather_rows(ds.images, batches[batch_at++]);
    ObjectiveResult r = evaluate(xb, noise_rng, true, true);
    last = r.report;
    if (!std::isfinite(r.report.total)) {
      std::string dump = run_dir + "/diagnostic_step_" +
                         std::to_string(step) + ".bin";
      save_checkpoint(enc, dec, dump);
      throw NumericalAbort("non-finite loss at step " +
                           std::to_string(step) + "; parameters dumped to " +
                           dump);
    }
    adam_step(adam_e, params_e, r.enc_grads, cfg.lr);
    adam_step(adam_d, params_d, r.dec_grads, cfg.lr);
    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      save_checkpoint(enc, dec, checkpoint_path(run_dir, step));
      append_metrics(csv, step, r.report, usage_stats(enc, eval_images));
      csv.flush();
    }
  }
  return RunResult{run_dir, last, std::move(enc), std::move(dec)};
}

}  // namespace detail

// Fresh-initialization training run: init, moment-pretrain the heads, then
// optimize the configured objective.
inline RunResult train(const TrainConfig& cfg, const ImageDataset& ds,
                       const std::string& run_dir) {
  cfg.validate();
  ds.validate();
  if (ds.images.cols() != cfg.arch.input_dim())
    throw DimensionError("train: dataset/arch image size mismatch");

  Rng init_rng(mix_seed(cfg.seed, 0));
  EncoderParams enc = init_encoder(cfg.arch, init_rng);
  DecoderParams dec = init_decoder(cfg.arch, init_rng);

  if (cfg.pretrain_steps > 0) {
    const MixturePrior prior = MixturePrior::equidistant(
        cfg.arch.K, cfg.arch.dim_z, cfg.prior_sigma);
    Rng pre_rng(mix_seed(cfg.seed, 1));
    Eigen::Index n = std::min<Eigen::Index>(ds.size(), 4096);
    pretrain_moments(enc, prior, ds.images.topRows(n), cfg.pretrain_steps,
                     pre_rng, cfg.pretrain_lr, cfg.pretrain_batch);
  }
  return detail::run_loop(cfg, ds, std::move(enc), std::move(dec), run_dir);
}

// ---- the transplant experiment ----

struct TransplantResult {
  RunResult run;
  Mat probe_inputs;
  Mat recon_step0;
  Mat recon_final;
  double mse_step0 = 0.0;
  double mse_final = 0.0;
};

// Continues training from given (typically WAE-trained) parameters under the
// ELBO objective, recording reconstruction snapshots at step 0 and step N.
inline TransplantResult transplant_then_train(const EncoderParams& wae_enc,
                                              const DecoderParams& wae_dec,
                                              TrainConfig cfg,
                                              const ImageDataset& ds,
                                              const std::string& run_dir,
                                              int probe_count = 32) {
  cfg.objective = Objective::vae;
  cfg.validate();
  if (wae_enc.arch.K != cfg.arch.K || wae_enc.arch.dim_z != cfg.arch.dim_z ||
      wae_enc.arch.kind != cfg.arch.kind ||
      wae_enc.arch.input_dim() != cfg.arch.input_dim())
    throw DimensionError("transplant: checkpoint/config arch mismatch");

  TransplantResult res;
  const Eigen::Index np = std::min<Eigen::Index>(probe_count, ds.size());
  res.probe_inputs = ds.images.topRows(np);
  res.recon_step0 =
      reconstruct_deterministic(wae_enc, wae_dec, res.probe_inputs);
  res.mse_step0 =
      (res.probe_inputs - res.recon_step0).squaredNorm() /
      double(res.probe_inputs.size());

  res.run = detail::run_loop(cfg, ds, wae_enc, wae_dec, run_dir);
  res.recon_final =
      reconstruct_deterministic(res.run.enc, res.run.dec, res.probe_inputs);
  res.mse_final =
      (res.probe_inputs - res.recon_final).squaredNorm() /
      double(res.probe_inputs.size());
  return res;
}

}  // namespace gmwae
