// Command-line entry point: train / eval / transplant / synth-data.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error,
// 3 numerical abort. GMWAE_DATA_DIR supplies the default dataset directory.

#include <CLI11.hpp>

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <json.hpp>

#include "gmwae/data.hpp"
#include "gmwae/eval.hpp"
#include "gmwae/mixture.hpp"
#include "gmwae/nets.hpp"
#include "gmwae/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DataArgs {
  std::string data_dir;
  std::string images, labels;
  std::string split = "train";
};

void add_data_flags(CLI::App* cmd, DataArgs& d, const std::string& split) {
  d.split = split;
  cmd->add_option("--data-dir", d.data_dir,
                  "Directory holding IDX files (default: $GMWAE_DATA_DIR)");
  cmd->add_option("--images", d.images, "Explicit IDX image file");
  cmd->add_option("--labels", d.labels, "Explicit IDX label file");
  cmd->add_option("--split", d.split, "File prefix within --data-dir")
      ->check(CLI::IsMember({"train", "test"}));
}

struct ResolvedData {
  gmwae::ImageDataset ds;
  std::vector<std::string> files;
};

ResolvedData resolve_dataset(const DataArgs& d) {
  std::string images = d.images, labels = d.labels;
  if (images.empty() || labels.empty()) {
    std::string dir = d.data_dir;
    if (dir.empty()) {
      const char* env = std::getenv("GMWAE_DATA_DIR");
      if (env) dir = env;
    }
    if (dir.empty())
      throw gmwae::DataError(
          "no dataset given: pass --images/--labels, --data-dir, or set "
          "GMWAE_DATA_DIR");
    std::string prefix = d.split == "train" ? "train" : "t10k";
    images = dir + "/" + prefix + "-images-idx3-ubyte";
    labels = dir + "/" + prefix + "-labels-idx1-ubyte";
  }
  return ResolvedData{gmwae::load_idx(images, labels), {images, labels}};
}

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  uint64_t h = 0xcbf29ce484222325ull;
  char c;
  while (is.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

void write_manifest(const std::string& dir, const std::string& command,
                    const gmwae::TrainConfig* cfg,
                    const std::vector<std::string>& data_files) {
  json m;
  m["command"] = command;
  if (cfg) {
    json c;
    c["objective"] = gmwae::to_string(cfg->objective);
    c["lr"] = cfg->lr;
    c["batch_size"] = cfg->batch_size;
    c["steps"] = cfg->steps;
    c["lambda"] = cfg->lambda;
    c["seed"] = cfg->seed;
    c["pretrain_steps"] = cfg->pretrain_steps;
    c["arch"] = gmwae::to_string(cfg->arch.kind);
    c["K"] = cfg->arch.K;
    c["dim_z"] = cfg->arch.dim_z;
    m["config"] = c;
  }
  json files = json::array();
  for (const auto& f : data_files) {
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a_file(f)));
    files.push_back({{"path", f}, {"fnv1a", hex}});
  }
  m["dataset"] = files;
  m["timestamp"] = std::time(nullptr);
  std::ofstream os(dir + "/manifest.json");
  os << m.dump(2) << "\n";
}

// Config precedence: CLI overrides > file > defaults.
struct ConfigCli {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file (key = value)");
    auto add = [this, cmd](const std::string& key, const std::string& help) {
      auto* opt = cmd->add_option_function<std::string>(
          "--" + key,
          [this, key](const std::string& v) { overrides.push_back({key, v}); },
          help);
      opt->expected(1);
    };
    add("objective", "wae | vae");
    add("lr", "learning rate");
    add("batch-size", "minibatch size");
    add("steps", "training steps");
    add("lambda", "MMD penalty coefficient");
    add("seed", "RNG seed");
    add("pretrain-steps", "moment-pretraining steps");
    add("checkpoint-every", "snapshot/metrics period");
    add("recon-model", "gaussian_fixed_var | bernoulli (vae)");
    add("arch", "mlp | dcgan_small");
    add("K", "number of discrete modes");
    add("dim-z", "latent dimensionality");
    add("cls-hidden", "mlp classifier hidden width");
    add("dec-hidden", "mlp decoder hidden width");
    add("prior-sigma", "prior mode stddev");
    add("mmd-joint", "1: divergence over (z,k); 0: z-marginal (wae)");
    add("eval-subset", "usage-metric subset size");
    add("image-h", "image height");
    add("image-w", "image width");
  }

  gmwae::TrainConfig resolve() const {
    gmwae::TrainConfig cfg;
    if (!config_path.empty()) cfg = gmwae::parse_config_file(config_path);
    for (const auto& [key, value] : overrides) {
      std::string k = key;
      std::replace(k.begin(), k.end(), '-', '_');
      if (k == "dim_z") k = "dim_z";
      gmwae::apply_config_kv(cfg, k, value);
    }
    return cfg;
  }
};

int cmd_train(const ConfigCli& cc, const DataArgs& da,
              const std::string& out) {
  gmwae::TrainConfig cfg = cc.resolve();
  ResolvedData data = resolve_dataset(da);
  fs::create_directories(out);
  write_manifest(out, "train", &cfg, data.files);
  gmwae::RunResult run = gmwae::train(cfg, data.ds, out);
  const gmwae::LossReport& r = run.final_report;
  std::printf(
      "final: total=%.6g reconstruction=%.6g mmd_penalty=%.6g "
      "kl_discrete=%.6g kl_continuous=%.6g\n",
      r.total, r.reconstruction, r.mmd_penalty, r.kl_discrete,
      r.kl_continuous);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const DataArgs& da,
             const std::string& out, uint64_t seed, int n_projection) {
  auto [enc, dec] = gmwae::load_checkpoint(checkpoint);
  auto [ds, data_files] = resolve_dataset(da);
  if (ds.images.cols() != enc.arch.input_dim())
    throw gmwae::DataError("eval: dataset does not match checkpoint arch");
  fs::create_directories(out);

  gmwae::MixturePrior prior = gmwae::MixturePrior::equidistant(
      enc.arch.K, enc.arch.dim_z, 1.0);

  gmwae::UsageMatrix usage = gmwae::usage_matrix(enc, ds);
  {
    std::ofstream os(out + "/usage.csv");
    os << "label";
    for (int k = 0; k < enc.arch.K; ++k) os << ",k" << k;
    os << "\n";
    for (int l = 0; l < ds.num_classes; ++l) {
      if (!usage.label_present[l]) continue;
      os << l;
      char buf[32];
      for (int k = 0; k < enc.arch.K; ++k) {
        std::snprintf(buf, sizeof buf, ",%.9g", usage.m(l, k));
        os << buf;
      }
      os << "\n";
    }
  }

  gmwae::ModeAssignment acc = gmwae::cluster_accuracy(enc, ds);
  {
    std::ofstream os(out + "/accuracy.txt");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f\n", acc.accuracy);
    os << buf;
  }
  std::printf("cluster accuracy: %.6f\n", acc.accuracy);

  gmwae::Rng rng(gmwae::mix_seed(seed, 7));
  gmwae::write_pgm(gmwae::sample_grid(dec, prior, 8, 1.0, rng),
                   out + "/samples_scale1.pgm");
  gmwae::write_pgm(gmwae::sample_grid(dec, prior, 8, 0.5, rng),
                   out + "/samples_scale05.pgm");

  const Eigen::Index nrec = std::min<Eigen::Index>(32, ds.size());
  gmwae::write_pgm(
      gmwae::reconstruct_grid(enc, dec, ds.images.topRows(nrec), rng),
      out + "/reconstructions.pgm");

  {  // interpolation between two held-out points, several pairs
    const int pairs = int(std::min<Eigen::Index>(6, ds.size() / 2));
    const int steps = 11;
    gmwae::Mat grid(Eigen::Index(pairs) * enc.arch.image_h,
                    Eigen::Index(steps) * enc.arch.image_w);
    for (int p = 0; p < pairs; ++p) {
      gmwae::Mat xa = ds.images.row(2 * p);
      gmwae::Mat xb = ds.images.row(2 * p + 1);
      gmwae::Mat pa = gmwae::encode_discrete(enc, xa);
      gmwae::Mat pb = gmwae::encode_discrete(enc, xb);
      int ka = gmwae::argmax_row(pa.row(0)), kb = gmwae::argmax_row(pb.row(0));
      gmwae::Vec za = gmwae::encode_continuous(enc, xa, ka)[0].mean;
      gmwae::Vec zb = gmwae::encode_continuous(enc, xb, kb)[0].mean;
      grid.middleRows(Eigen::Index(p) * enc.arch.image_h, enc.arch.image_h) =
          gmwae::interpolate(dec, za, zb, steps);
    }
    gmwae::write_pgm(grid, out + "/interp_data.pgm");
  }
  {  // interpolation from prior mode 2 to every other mode
    const int steps = 11;
    const int base = std::min(2, enc.arch.K - 1);
    gmwae::Mat grid(Eigen::Index(enc.arch.K - 1) * enc.arch.image_h,
                    Eigen::Index(steps) * enc.arch.image_w);
    int row = 0;
    for (int k = 0; k < enc.arch.K; ++k) {
      if (k == base) continue;
      grid.middleRows(Eigen::Index(row++) * enc.arch.image_h,
                      enc.arch.image_h) =
          gmwae::interpolate(dec, prior.means[base], prior.means[k], steps);
    }
    gmwae::write_pgm(grid, out + "/interp_modes.pgm");
  }

  const int npts = int(std::min<Eigen::Index>(n_projection, ds.size()));
  gmwae::write_projection_csv(
      gmwae::latent_projection(enc, prior, ds, npts, rng),
      out + "/projection.csv");

  write_manifest(out, "eval", nullptr, data_files);
  return 0;
}

int cmd_transplant(const std::string& checkpoint, const ConfigCli& cc,
                   const DataArgs& da, const std::string& out) {
  auto [enc, dec] = gmwae::load_checkpoint(checkpoint);
  gmwae::TrainConfig cfg = cc.resolve();
  cfg.arch = enc.arch;  // architecture comes from the checkpoint
  cfg.objective = gmwae::Objective::vae;
  cfg.pretrain_steps = 0;
  ResolvedData data = resolve_dataset(da);
  fs::create_directories(out);
  write_manifest(out, "transplant", &cfg, data.files);
  gmwae::TransplantResult tr =
      gmwae::transplant_then_train(enc, dec, cfg, data.ds, out);
  const int h = enc.arch.image_h, w = enc.arch.image_w;
  gmwae::write_pgm(gmwae::tile_batch(tr.probe_inputs, h, w),
                   out + "/originals.pgm");
  gmwae::write_pgm(gmwae::tile_batch(tr.recon_step0, h, w),
                   out + "/recon_step0.pgm");
  gmwae::write_pgm(gmwae::tile_batch(tr.recon_final, h, w),
                   out + "/recon_stepN.pgm");
  std::printf("recon MSE: step0=%.6g stepN=%.6g\n", tr.mse_step0,
              tr.mse_final);
  return 0;
}

int cmd_synth_data(const std::string& mode, const std::string& out, int n,
                   int n_test, uint64_t seed, int k_true, int dim_x,
                   const std::string& source_images,
                   const std::string& source_labels) {
  fs::create_directories(out);
  if (mode == "gmm") {
    auto spec = gmwae::SyntheticMixtureSpec::random_spec(k_true, dim_x, n, seed);
    gmwae::ImageDataset train = gmwae::make_synthetic(spec, seed);
    spec.N = n_test;
    gmwae::ImageDataset test = gmwae::make_synthetic(spec, seed + 1);
    gmwae::write_idx(train, out + "/train-images-idx3-ubyte",
                     out + "/train-labels-idx1-ubyte");
    gmwae::write_idx(test, out + "/t10k-images-idx3-ubyte",
                     out + "/t10k-labels-idx1-ubyte");
  } else {  // digits: upscale + jitter the bundled 8x8 source pool
    gmwae::ImageDataset src = gmwae::load_idx(source_images, source_labels);
    // Source pool split keeps augmented test digits unseen in training.
    const Eigen::Index cut = src.size() * 5 / 6;
    gmwae::ImageDataset pool_train{src.rows, src.cols,
                                   src.images.topRows(cut),
                                   {src.labels.begin(), src.labels.begin() + cut},
                                   src.num_classes};
    gmwae::ImageDataset pool_test{
        src.rows, src.cols, src.images.bottomRows(src.size() - cut),
        {src.labels.begin() + cut, src.labels.end()}, src.num_classes};
    gmwae::ImageDataset train =
        gmwae::augment_digits(pool_train, n, 28, 28, seed);
    gmwae::ImageDataset test =
        gmwae::augment_digits(pool_test, n_test, 28, 28, seed + 1);
    gmwae::write_idx(train, out + "/train-images-idx3-ubyte",
                     out + "/train-labels-idx1-ubyte");
    gmwae::write_idx(test, out + "/t10k-images-idx3-ubyte",
                     out + "/t10k-labels-idx1-ubyte");
  }
  std::printf("wrote train/test IDX pairs to %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-mixture latent-variable models trained with the "
               "relaxed Wasserstein (MMD-penalized) or ELBO objective"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  ConfigCli train_cfg;
  DataArgs train_data;
  std::string train_out = "run";
  train_cfg.add_flags(train);
  add_data_flags(train, train_data, "train");
  train->add_option("--out", train_out, "Run directory");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_out = "eval";
  uint64_t eval_seed = 1;
  int eval_proj = 1000;
  DataArgs eval_data;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  add_data_flags(eval, eval_data, "test");
  eval->add_option("--out", eval_out, "Output directory");
  eval->add_option("--seed", eval_seed, "Sampling seed");
  eval->add_option("--n-projection", eval_proj, "Projection point count");

  // transplant
  auto* tr = app.add_subcommand(
      "transplant", "Continue VAE training from a trained WAE checkpoint");
  std::string tr_ckpt, tr_out = "transplant";
  ConfigCli tr_cfg;
  DataArgs tr_data;
  tr->add_option("--checkpoint", tr_ckpt, "WAE checkpoint")->required();
  tr_cfg.add_flags(tr);
  add_data_flags(tr, tr_data, "train");
  tr->add_option("--out", tr_out, "Run directory");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Generate datasets");
  std::string sd_mode = "gmm", sd_out = "data-synth";
  int sd_n = 10000, sd_n_test = 2000, sd_k = 10, sd_dim = 64;
  uint64_t sd_seed = 1;
  std::string sd_src_images = "data/digits-8x8-images-idx3-ubyte";
  std::string sd_src_labels = "data/digits-8x8-labels-idx1-ubyte";
  synth->add_option("--mode", sd_mode, "gmm | digits")
      ->check(CLI::IsMember({"gmm", "digits"}));
  synth->add_option("--out", sd_out, "Output directory");
  synth->add_option("--n", sd_n, "Training examples");
  synth->add_option("--n-test", sd_n_test, "Test examples");
  synth->add_option("--seed", sd_seed, "Seed");
  synth->add_option("--k-true", sd_k, "GMM component count");
  synth->add_option("--dim-x", sd_dim, "GMM data dimensionality");
  synth->add_option("--source-images", sd_src_images, "8x8 digit IDX images");
  synth->add_option("--source-labels", sd_src_labels, "8x8 digit IDX labels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(train_cfg, train_data, train_out);
    if (*eval)
      return cmd_eval(eval_ckpt, eval_data, eval_out, eval_seed, eval_proj);
    if (*tr) return cmd_transplant(tr_ckpt, tr_cfg, tr_data, tr_out);
    if (*synth)
      return cmd_synth_data(sd_mode, sd_out, sd_n, sd_n_test, sd_seed, sd_k,
                            sd_dim, sd_src_images, sd_src_labels);
  } catch (const gmwae::NumericalAbort& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 3;
  } catch (const gmwae::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const gmwae::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
