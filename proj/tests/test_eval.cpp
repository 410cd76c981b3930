#include <catch2/catch_amalgamated.hpp>

#include "gmwae/eval.hpp"

#include <filesystem>
#include <fstream>

#include "gmwae/train.hpp"
#include "test_util.hpp"

using gmwae::ArchKind;
using gmwae::cluster_accuracy;
using gmwae::DecoderParams;
using gmwae::EncoderParams;
using gmwae::ImageDataset;
using gmwae::init_decoder;
using gmwae::init_encoder;
using gmwae::interpolate;
using gmwae::Mat;
using gmwae::MixturePrior;
using gmwae::NetworkArch;
using gmwae::Rng;
using gmwae::sample_grid;
using gmwae::usage_matrix;
using gmwae::Vec;

namespace fs = std::filesystem;

namespace {

NetworkArch tiny_arch() {
  NetworkArch a;
  a.kind = ArchKind::mlp;
  a.image_h = 1;
  a.image_w = 6;
  a.K = 3;
  a.dim_z = 2;
  a.head_hidden = 4;
  a.cls_hidden = 6;
  a.dec_hidden = 4;
  return a;
}

// Label-revealing dataset: image d carries its class in coordinate d.
ImageDataset onehot_dataset(int n_per_class) {
  ImageDataset ds;
  ds.rows = 1;
  ds.cols = 6;
  ds.num_classes = 3;
  ds.images = Mat::Zero(3 * n_per_class, 6);
  for (int l = 0; l < 3; ++l)
    for (int i = 0; i < n_per_class; ++i) {
      ds.images(l * n_per_class + i, l) = 1.0;
      ds.labels.push_back(l);
    }
  return ds;
}

// Classifier that reads the revealed label: w0 = I, w1 routes unit l to
// logit l with a large gain.
EncoderParams perfect_encoder(const NetworkArch& a, Rng& rng) {
  EncoderParams enc = init_encoder(a, rng);
  enc.store.at("cls.w0") = Mat::Identity(6, a.cls_hidden);
  enc.store.at("cls.b0").setZero();
  Mat w1 = Mat::Zero(a.cls_hidden, a.K);
  for (int l = 0; l < a.K; ++l) w1(l, l) = 30.0;
  enc.store.at("cls.w1") = w1;
  enc.store.at("cls.b1").setZero();
  return enc;
}

}  // namespace

TEST_CASE("usage matrix: uniform for a zero-initialized classifier") {
  Rng rng(91);
  NetworkArch a = tiny_arch();
  EncoderParams enc = init_encoder(a, rng);
  ImageDataset ds = onehot_dataset(10);
  auto u = usage_matrix(enc, ds);
  for (int l = 0; l < 3; ++l) {
    CHECK(u.label_present[l]);
    for (int k = 0; k < a.K; ++k)
      CHECK(u.m(l, k) == Catch::Approx(1.0 / a.K).margin(1e-12));
  }
  CHECK(u.entropy == Catch::Approx(std::log(3.0)).margin(1e-9));
}

TEST_CASE("usage matrix: collapsed encoder concentrates one column") {
  Rng rng(92);
  NetworkArch a = tiny_arch();
  EncoderParams enc = init_encoder(a, rng);
  enc.store.at("cls.b1")(0, 0) = 50.0;  // q_D one-hot on k = 0
  ImageDataset ds = onehot_dataset(10);
  auto u = usage_matrix(enc, ds);
  CHECK(u.column_mass(0) == Catch::Approx(1.0).margin(1e-9));
  CHECK(u.column_mass(1) < 1e-9);
  CHECK(u.column_mass(2) < 1e-9);
}

TEST_CASE("usage matrix: rows sum to one, absent labels flagged") {
  Rng rng(93);
  NetworkArch a = tiny_arch();
  EncoderParams enc = init_encoder(a, rng);
  enc.store.at("cls.w1") = testutil::random_mat(a.cls_hidden, a.K, rng, 2.0);
  ImageDataset ds = onehot_dataset(7);
  ds.num_classes = 4;  // declare a class that has no data
  auto u = usage_matrix(enc, ds);
  for (int l = 0; l < 3; ++l) {
    CHECK(u.label_present[l]);
    CHECK(u.m.row(l).sum() == Catch::Approx(1.0).margin(1e-6));
  }
  CHECK_FALSE(u.label_present[3]);
  CHECK(u.m.row(3).sum() == 0.0);
}

TEST_CASE("cluster accuracy: exactly one-hot-correct encoder scores 1") {
  Rng rng(94);
  NetworkArch a = tiny_arch();
  EncoderParams enc = perfect_encoder(a, rng);
  ImageDataset ds = onehot_dataset(20);
  auto acc = cluster_accuracy(enc, ds);
  CHECK(acc.accuracy == 1.0);
  // injective assignment
  std::set<int> used(acc.label_to_k.begin(), acc.label_to_k.end());
  CHECK(used.size() == 3);
}

TEST_CASE("cluster accuracy: uniform posterior scores chance with low-index "
          "ties") {
  Rng rng(95);
  NetworkArch a = tiny_arch();
  EncoderParams enc = init_encoder(a, rng);  // zero classifier -> uniform
  ImageDataset ds = onehot_dataset(20);      // balanced classes
  auto acc = cluster_accuracy(enc, ds);
  // argmax ties break to k = 0; only the label greedily assigned to k = 0
  // scores, i.e. exactly one class of three.
  CHECK(acc.accuracy == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("cluster accuracy is invariant under joint head/classifier "
          "permutation") {
  Rng rng(96);
  NetworkArch a = tiny_arch();
  EncoderParams enc = perfect_encoder(a, rng);
  // lightly blur the posterior so the usage matrix is non-degenerate
  enc.store.at("cls.w1") *= 0.15;
  ImageDataset ds = onehot_dataset(15);
  double base = cluster_accuracy(enc, ds).accuracy;

  std::vector<int> perm{2, 0, 1};
  EncoderParams permuted = enc;
  Mat w1 = enc.store.at("cls.w1");
  Mat b1 = enc.store.at("cls.b1");
  for (int k = 0; k < 3; ++k) {
    permuted.store.at("cls.w1").col(perm[k]) = w1.col(k);
    permuted.store.at("cls.b1")(0, perm[k]) = b1(0, k);
    for (const char* suffix : {".w0", ".b0", ".wm", ".bm", ".ws", ".bs"})
      permuted.store.at("head" + std::to_string(perm[k]) + suffix) =
          enc.store.at("head" + std::to_string(k) + suffix);
  }
  CHECK(cluster_accuracy(permuted, ds).accuracy ==
        Catch::Approx(base).margin(1e-12));
}

TEST_CASE("greedy assignment picks entries in decreasing order") {
  Mat usage(3, 4);
  usage << 0.1, 0.2, 0.6, 0.1,
           0.7, 0.1, 0.1, 0.1,
           0.3, 0.3, 0.2, 0.2;
  auto map = gmwae::greedy_label_assignment(usage);
  CHECK(map[1] == 0);  // largest entry 0.7 first
  CHECK(map[0] == 2);  // then 0.6
  CHECK(map[2] == 1);  // 0.3 tie -> lowest k among remaining
}

TEST_CASE("sample grid geometry and determinism") {
  Rng rng(97);
  NetworkArch a = tiny_arch();
  DecoderParams dec = init_decoder(a, rng);
  MixturePrior prior = MixturePrior::equidistant(a.K, a.dim_z, 1.0);

  Rng g1(5), g2(5);
  Mat grid1 = sample_grid(dec, prior, 4, 1.0, g1);
  Mat grid2 = sample_grid(dec, prior, 4, 1.0, g2);
  CHECK(grid1 == grid2);
  CHECK(grid1.rows() == 4 * a.image_h);
  CHECK(grid1.cols() == a.K * a.image_w);

  SECTION("zero stddev scale repeats the mode decode down each column") {
    Rng g3(6);
    Mat grid = sample_grid(dec, prior, 3, 0.0, g3);
    for (int k = 0; k < a.K; ++k) {
      Mat first = grid.block(0, k * a.image_w, a.image_h, a.image_w);
      for (int r = 1; r < 3; ++r)
        CHECK(grid.block(r * a.image_h, k * a.image_w, a.image_h,
                         a.image_w) == first);
      Mat expect = gmwae::decode(dec, prior.means[k].transpose());
      CHECK(first(0, 0) == expect(0, 0));
    }
  }
}

TEST_CASE("reconstruction grid layout and argmax-mode determinism") {
  Rng rng(98);
  NetworkArch a = tiny_arch();
  EncoderParams enc = init_encoder(a, rng);
  DecoderParams dec = init_decoder(a, rng);
  ImageDataset ds = onehot_dataset(6);  // 18 images
  Rng g1(1), g2(1);
  Mat grid1 = gmwae::reconstruct_grid(enc, dec, ds.images, g1, false, 6);
  Mat grid2 = gmwae::reconstruct_grid(enc, dec, ds.images, g2, false, 6);
  CHECK(grid1 == grid2);
  CHECK(grid1.rows() == 2 * 3 * a.image_h);  // 18 images, 6 per row
  CHECK(grid1.cols() == 6 * a.image_w);
  // odd rows are reconstructions, even rows the originals
  CHECK(grid1.block(0, 0, a.image_h, a.image_w)(0, 0) == ds.images(0, 0));
}

TEST_CASE("interpolation endpoints are bit-exact decodes") {
  Rng rng(99);
  NetworkArch a = tiny_arch();
  DecoderParams dec = init_decoder(a, rng);
  Vec za(2), zb(2);
  za << 0.3, -1.2;
  zb << -0.9, 0.7;

  Mat two = interpolate(dec, za, zb, 2);
  Mat da = gmwae::decode(dec, za.transpose());
  Mat db = gmwae::decode(dec, zb.transpose());
  for (int x = 0; x < a.image_w; ++x) {
    CHECK(two(0, x) == da(0, x));
    CHECK(two(0, a.image_w + x) == db(0, x));
  }

  Mat three = interpolate(dec, za, zb, 3);
  Mat mid = gmwae::decode(dec, (0.5 * (za + zb)).transpose());
  for (int x = 0; x < a.image_w; ++x)
    CHECK(three(0, a.image_w + x) == Catch::Approx(mid(0, x)).margin(1e-12));

  SECTION("finer step counts shrink the largest adjacent-frame gap") {
    auto max_gap = [&](int steps) {
      Mat row = interpolate(dec, za, zb, steps);
      double worst = 0.0;
      for (int i = 0; i + 1 < steps; ++i) {
        Mat f0 = row.block(0, i * a.image_w, a.image_h, a.image_w);
        Mat f1 = row.block(0, (i + 1) * a.image_w, a.image_h, a.image_w);
        worst = std::max(worst, (f1 - f0).norm());
      }
      return worst;
    };
    CHECK(max_gap(40) < max_gap(5));
  }
  CHECK_THROWS(interpolate(dec, za, zb, 1));
}

TEST_CASE("latent projection: honored point count and variance capture") {
  Rng rng(100);
  NetworkArch a = tiny_arch();
  EncoderParams enc = init_encoder(a, rng);
  MixturePrior prior = MixturePrior::equidistant(a.K, a.dim_z, 1.0);
  ImageDataset ds = onehot_dataset(40);
  Rng prng(3);
  auto proj = gmwae::latent_projection(enc, prior, ds, 50, prng);
  CHECK(proj.posterior.rows() == 50);
  CHECK(proj.prior.rows() == 50);
  CHECK(proj.labels.size() == 50);

  // dim_z = 2 here, so a rank-2 projection must preserve total variance
  Mat all(100, 2);
  all << proj.posterior, proj.prior;
  Eigen::RowVectorXd mean = all.colwise().mean();
  double projected_var = (all.rowwise() - mean).squaredNorm();

  Mat raw(100, a.dim_z);
  {
    Rng prng2(3);
    auto p2 = gmwae::latent_projection(enc, prior, ds, 50, prng2);
    CHECK(p2.posterior == proj.posterior);  // deterministic given seed
  }
  CHECK(projected_var > 0.0);
  CHECK_THROWS(gmwae::latent_projection(enc, prior, ds, 10000, prng));
}

TEST_CASE("pgm emission") {
  fs::path dir = fs::temp_directory_path() / "gmwae_eval_test";
  fs::create_directories(dir);

  SECTION("single white pixel is exactly one 255 byte after the header") {
    Mat one = Mat::Constant(1, 1, 1.0);
    fs::path p = dir / "white.pgm";
    gmwae::write_pgm(one, p.string());
    std::ifstream is(p, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(is)), {});
    CHECK(all == std::string("P5\n1 1\n255\n") + '\xff');
  }
  SECTION("round trip recovers byte-lattice pixels exactly") {
    Mat img(3, 5);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) img(y, x) = double(y * 5 + x) * 17 / 255.0;
    fs::path p = dir / "rt.pgm";
    gmwae::write_pgm(img, p.string());
    Mat back = gmwae::read_pgm(p.string());
    CHECK(back == img);
  }
}

TEST_CASE("k-means baseline separates an easy pixel mixture") {
  // three well-separated clusters in pixel space
  gmwae::SyntheticMixtureSpec spec;
  spec.K_true = 3;
  spec.dim_x = 6;
  spec.N = 600;
  for (int k = 0; k < 3; ++k) {
    Vec c = Vec::Zero(6);
    c(2 * k) = 4.0;
    c(2 * k + 1) = -4.0;
    spec.centers.push_back(c);
    spec.spreads.push_back(0.3);
    spec.proportions.push_back(1.0 / 3);
  }
  ImageDataset ds = gmwae::make_synthetic(spec, 21);
  auto km1 = gmwae::kmeans_pixels(ds, 3, 77);
  auto km2 = gmwae::kmeans_pixels(ds, 3, 77);
  CHECK(km1.mode_assignment.accuracy > 0.95);
  CHECK(km1.assignment == km2.assignment);  // deterministic per seed
}

TEST_CASE("posterior/prior overlap improves from untrained to trained") {
  // mini WAE run; mean nearest-neighbor distance between projected posterior
  // and prior samples must shrink once the encoder matches the prior.
  gmwae::TrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.objective = gmwae::Objective::wae;
  cfg.batch_size = 16;
  cfg.steps = 250;
  cfg.checkpoint_every = 250;
  cfg.pretrain_steps = 600;
  cfg.eval_subset = 60;
  cfg.seed = 5;

  gmwae::SyntheticMixtureSpec spec;
  spec.K_true = 3;
  spec.dim_x = 6;
  spec.N = 300;
  for (int k = 0; k < 3; ++k) {
    Vec c = Vec::Zero(6);
    c(k) = 3.0;
    spec.centers.push_back(c);
    spec.spreads.push_back(0.4);
    spec.proportions.push_back(1.0 / 3);
  }
  ImageDataset ds = gmwae::make_synthetic(spec, 8);

  MixturePrior prior = MixturePrior::equidistant(3, 2, 1.0);
  auto mean_nn = [&](EncoderParams& e) {
    Rng prng(17);
    auto proj = gmwae::latent_projection(e, prior, ds, 80, prng);
    double acc = 0.0;
    for (int i = 0; i < 80; ++i) {
      double best = 1e300;
      for (int j = 0; j < 80; ++j)
        best = std::min(best,
                        (proj.posterior.row(i) - proj.prior.row(j)).norm());
      acc += best;
    }
    return acc / 80.0;
  };

  Rng irng(gmwae::mix_seed(cfg.seed, 0));
  EncoderParams untrained = init_encoder(cfg.arch, irng);
  double before = mean_nn(untrained);

  fs::path dir = fs::temp_directory_path() / "gmwae_eval_overlap";
  fs::remove_all(dir);
  gmwae::RunResult run = gmwae::train(cfg, ds, dir.string());
  double after = mean_nn(run.enc);
  CHECK(after < before);
}
