#pragma once

// Post-training diagnostics: label-conditioned usage matrices, the greedy
// cluster-accuracy protocol, sample / reconstruction / interpolation grids,
// a 2-D PCA latent projection and PGM image emission. All operations are
// pure over immutable parameters; argmax ties break to the lowest index.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "gmwae/common.hpp"
#include "gmwae/data.hpp"
#include "gmwae/mixture.hpp"
#include "gmwae/nets.hpp"

namespace gmwae {

struct UsageMatrix {
  Mat m;                            // L x K; row l averages q_D(k|x) over label l
  std::vector<bool> label_present;  // rows with no data are flagged, not NaN
  Eigen::VectorXd column_mass;      // mean q_D(k|x) over all points
  double entropy = 0.0;             // of the column-mass distribution
};

inline UsageMatrix usage_matrix(const EncoderParams& enc,
                                const ImageDataset& ds) {
  ds.validate();
  const int L = ds.num_classes, K = enc.arch.K;
  UsageMatrix u;
  u.m = Mat::Zero(L, K);
  u.label_present.assign(L, false);
  u.column_mass = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(L);
  const Eigen::Index chunk = 512;
  for (Eigen::Index at = 0; at < ds.size(); at += chunk) {
    Eigen::Index take = std::min(chunk, ds.size() - at);
    Mat probs = encode_discrete(enc, ds.images.middleRows(at, take));
    for (Eigen::Index i = 0; i < take; ++i) {
      int l = ds.labels[std::size_t(at + i)];
      u.m.row(l) += probs.row(i);
      counts(l) += 1.0;
      u.column_mass += probs.row(i).transpose();
    }
  }
  for (int l = 0; l < L; ++l) {
    if (counts(l) > 0.0) {
      u.m.row(l) /= counts(l);
      u.label_present[l] = true;
    }
  }
  u.column_mass /= double(ds.size());
  u.entropy = 0.0;
  for (int k = 0; k < K; ++k)
    if (u.column_mass(k) > 0.0)
      u.entropy -= u.column_mass(k) * std::log(u.column_mass(k));
  return u;
}

struct ModeAssignment {
  std::vector<int> label_to_k;  // -1 where unassigned
  double accuracy = 0.0;
};

// Greedy protocol: repeatedly take the largest usage entry among unassigned
// labels and unassigned modes (ties to the lowest index pair).
inline std::vector<int> greedy_label_assignment(const Mat& usage) {
  const int L = int(usage.rows()), K = int(usage.cols());
  std::vector<int> label_to_k(L, -1);
  std::vector<bool> k_used(K, false);
  for (int round = 0; round < std::min(L, K); ++round) {
    int bl = -1, bk = -1;
    double best = -1.0;
    for (int l = 0; l < L; ++l) {
      if (label_to_k[l] >= 0) continue;
      for (int k = 0; k < K; ++k) {
        if (k_used[k]) continue;
        if (usage(l, k) > best) {
          best = usage(l, k);
          bl = l;
          bk = k;
        }
      }
    }
    label_to_k[bl] = bk;
    k_used[bk] = true;
  }
  return label_to_k;
}

inline int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int k = 1; k < row.size(); ++k)
    if (row(k) > row(best)) best = k;
  return best;
}

// Accuracy of the greedy digit-to-mode assignment on a labeled dataset.
inline ModeAssignment cluster_accuracy(const EncoderParams& enc,
                                       const ImageDataset& ds) {
  if (ds.num_classes > enc.arch.K)
    throw DimensionError("cluster_accuracy: more labels than modes");
  UsageMatrix u = usage_matrix(enc, ds);
  ModeAssignment a;
  a.label_to_k = greedy_label_assignment(u.m);
  long hits = 0;
  const Eigen::Index chunk = 512;
  for (Eigen::Index at = 0; at < ds.size(); at += chunk) {
    Eigen::Index take = std::min(chunk, ds.size() - at);
    Mat probs = encode_discrete(enc, ds.images.middleRows(at, take));
    for (Eigen::Index i = 0; i < take; ++i)
      if (argmax_row(probs.row(i)) ==
          a.label_to_k[std::size_t(ds.labels[std::size_t(at + i)])])
        ++hits;
  }
  a.accuracy = double(hits) / double(ds.size());
  return a;
}

// ---- grids ----

namespace detail {

inline void place_tile(Mat& grid, int r, int c, int h, int w,
                       const Eigen::Ref<const Eigen::RowVectorXd>& img) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      grid(Eigen::Index(r) * h + y, Eigen::Index(c) * w + x) =
          img(Eigen::Index(y) * w + x);
}

}  // namespace detail

// Lays a batch of flattened images out as a grid, per_row wide.
inline Mat tile_batch(const Mat& imgs, int h, int w, int per_row = 8) {
  const Eigen::Index n = imgs.rows();
  const int groups = int((n + per_row - 1) / per_row);
  Mat grid = Mat::Zero(Eigen::Index(groups) * h, Eigen::Index(per_row) * w);
  for (Eigen::Index i = 0; i < n; ++i)
    detail::place_tile(grid, int(i) / per_row, int(i) % per_row, h, w,
                       imgs.row(i));
  return grid;
}

// K columns ordered by mode; column k holds decodes of
// z ~ N(mu_k0, (stddev_scale * sigma0)^2 I).
inline Mat sample_grid(const DecoderParams& dec, const MixturePrior& prior,
                       int rows_per_k, double stddev_scale, Rng& rng) {
  const int h = dec.arch.image_h, w = dec.arch.image_w, K = prior.K;
  std::normal_distribution<double> unit(0.0, 1.0);
  Mat z(Eigen::Index(K) * rows_per_k, prior.dim_z);
  for (int k = 0; k < K; ++k)
    for (int r = 0; r < rows_per_k; ++r) {
      Vec zz = prior.means[k];
      for (int j = 0; j < prior.dim_z; ++j)
        zz(j) += stddev_scale * prior.sigma * unit(rng);
      z.row(Eigen::Index(k) * rows_per_k + r) = zz.transpose();
    }
  Mat imgs = decode(dec, z);
  Mat grid(Eigen::Index(rows_per_k) * h, Eigen::Index(K) * w);
  for (int k = 0; k < K; ++k)
    for (int r = 0; r < rows_per_k; ++r)
      detail::place_tile(grid, r, k, h, w,
                         imgs.row(Eigen::Index(k) * rows_per_k + r));
  return grid;
}

// Alternating rows of originals and reconstructions, per_row images wide.
// Default is the deterministic variant (argmax k, posterior-mean z); with
// sample_latents the inferred (k, z) pair is drawn as in the figure caption.
inline Mat reconstruct_grid(const EncoderParams& enc, const DecoderParams& dec,
                            const Mat& x, Rng& rng, bool sample_latents = false,
                            int per_row = 8) {
  const int h = enc.arch.image_h, w = enc.arch.image_w;
  const Eigen::Index n = x.rows();
  Mat recon;
  if (!sample_latents) {
    recon = reconstruct_deterministic(enc, dec, x);
  } else {
    Mat probs = encode_discrete(enc, x);
    Mat z(n, enc.arch.dim_z);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      std::discrete_distribution<int> pick(probs.row(i).begin(),
                                           probs.row(i).end());
      int k = pick(rng);
      std::vector<DiagGaussian> g = encode_continuous(enc, x.row(i), k);
      Vec zz = g[0].mean;
      for (int j = 0; j < enc.arch.dim_z; ++j)
        zz(j) += g[0].stddev(j) * unit(rng);
      z.row(i) = zz.transpose();
    }
    recon = decode(dec, z);
  }
  const int groups = int((n + per_row - 1) / per_row);
  Mat grid = Mat::Zero(Eigen::Index(2 * groups) * h,
                       Eigen::Index(per_row) * w);
  for (Eigen::Index i = 0; i < n; ++i) {
    int gr = int(i) / per_row, c = int(i) % per_row;
    detail::place_tile(grid, 2 * gr, c, h, w, x.row(i));
    detail::place_tile(grid, 2 * gr + 1, c, h, w, recon.row(i));
  }
  return grid;
}

// Decodes of the uniform linear path from z_a to z_b; the endpoint latents
// are passed through bit-exactly.
inline Mat interpolate(const DecoderParams& dec, const Vec& z_a,
                       const Vec& z_b, int n_steps) {
  if (n_steps < 2) throw std::invalid_argument("interpolate: n_steps >= 2");
  if (z_a.size() != dec.arch.dim_z || z_b.size() != dec.arch.dim_z)
    throw DimensionError("interpolate: latent size mismatch");
  Mat z(n_steps, dec.arch.dim_z);
  for (int i = 0; i < n_steps; ++i) {
    if (i == 0)
      z.row(i) = z_a.transpose();
    else if (i == n_steps - 1)
      z.row(i) = z_b.transpose();
    else {
      double t = double(i) / double(n_steps - 1);
      z.row(i) = (z_a + t * (z_b - z_a)).transpose();
    }
  }
  Mat imgs = decode(dec, z);
  const int h = dec.arch.image_h, w = dec.arch.image_w;
  Mat grid(h, Eigen::Index(n_steps) * w);
  for (int i = 0; i < n_steps; ++i)
    detail::place_tile(grid, 0, i, h, w, imgs.row(i));
  return grid;
}

// ---- latent projection (2-D PCA) ----

struct Projection {
  Mat posterior;                 // n x 2
  std::vector<int> labels;       // digit labels of the posterior points
  Mat prior;                     // n x 2
  std::vector<int> prior_modes;  // mode index of each prior sample
};

// Fits a 2-D principal-component projection on the union of posterior
// samples z ~ sum_k q_D q_C and prior samples, and projects both sets.
inline Projection latent_projection(const EncoderParams& enc,
                                    const MixturePrior& prior,
                                    const ImageDataset& ds, int n_points,
                                    Rng& rng) {
  if (Eigen::Index(n_points) > ds.size())
    throw std::invalid_argument("latent_projection: n_points > dataset size");
  std::normal_distribution<double> unit(0.0, 1.0);
  Mat post(n_points, enc.arch.dim_z);
  std::vector<int> labels(n_points);
  Mat probs = encode_discrete(enc, ds.images.topRows(n_points));
  for (int i = 0; i < n_points; ++i) {
    std::discrete_distribution<int> pick(probs.row(i).begin(),
                                         probs.row(i).end());
    int k = pick(rng);
    std::vector<DiagGaussian> g =
        encode_continuous(enc, ds.images.row(i), k);
    Vec z = g[0].mean;
    for (int j = 0; j < enc.arch.dim_z; ++j)
      z(j) += g[0].stddev(j) * unit(rng);
    post.row(i) = z.transpose();
    labels[i] = ds.labels[std::size_t(i)];
  }
  Mat prior_pts(n_points, prior.dim_z);
  std::vector<int> modes(n_points);
  for (int i = 0; i < n_points; ++i) {
    PriorDraw d = prior_sample(prior, rng);
    prior_pts.row(i) = d.z.transpose();
    modes[i] = d.k;
  }

  Mat all(2 * n_points, enc.arch.dim_z);
  all << post, prior_pts;
  Eigen::RowVectorXd mean = all.colwise().mean();
  Mat centered = all.rowwise() - mean;
  Mat cov = centered.transpose() * centered / double(all.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  Mat basis(enc.arch.dim_z, 2);
  basis.col(0) = es.eigenvectors().col(enc.arch.dim_z - 1);
  basis.col(1) = es.eigenvectors().col(enc.arch.dim_z - 2);
  for (int c = 0; c < 2; ++c) {  // deterministic sign
    Eigen::Index imax;
    basis.col(c).cwiseAbs().maxCoeff(&imax);
    if (basis(imax, c) < 0) basis.col(c) = -basis.col(c);
  }
  Projection pr;
  pr.posterior = (post.rowwise() - mean) * basis;
  pr.prior = (prior_pts.rowwise() - mean) * basis;
  pr.labels = std::move(labels);
  pr.prior_modes = std::move(modes);
  return pr;
}

inline void write_projection_csv(const Projection& p, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "x,y,set,label\n";
  char line[128];
  for (Eigen::Index i = 0; i < p.posterior.rows(); ++i) {
    std::snprintf(line, sizeof line, "%.9g,%.9g,posterior,%d\n",
                  p.posterior(i, 0), p.posterior(i, 1), p.labels[std::size_t(i)]);
    os << line;
  }
  for (Eigen::Index i = 0; i < p.prior.rows(); ++i) {
    std::snprintf(line, sizeof line, "%.9g,%.9g,prior,%d\n", p.prior(i, 0),
                  p.prior(i, 1), p.prior_modes[std::size_t(i)]);
    os << line;
  }
}

// ---- PGM emission ----

// 8-bit binary PGM (P5), maxval 255, row-major.
inline void write_pgm(const Mat& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "P5\n" << grid.cols() << " " << grid.rows() << "\n255\n";
  for (Eigen::Index y = 0; y < grid.rows(); ++y)
    for (Eigen::Index x = 0; x < grid.cols(); ++x) {
      double v = std::clamp(grid(y, x), 0.0, 1.0);
      unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
      os.write(reinterpret_cast<const char*>(&b), 1);
    }
}

inline Mat read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::string magic;
  long w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255)
    throw BadMagicError("not an 8-bit P5 PGM: " + path);
  is.get();  // single whitespace after header
  Mat m(h, w);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      int c = is.get();
      if (c == EOF) throw TruncatedFileError("truncated PGM: " + path);
      m(y, x) = double(c) / 255.0;
    }
  return m;
}

// ---- K-means-on-pixels reference point ----

struct KMeansResult {
  Mat centroids;
  std::vector<int> assignment;
  ModeAssignment mode_assignment;  // greedy protocol applied to clusters
};

// Lloyd iterations with a seeded k-means++ start, then the same greedy
// label-to-cluster protocol as cluster_accuracy.
inline KMeansResult kmeans_pixels(const ImageDataset& ds, int K, uint64_t seed,
                                  int iters = 50) {
  ds.validate();
  const Eigen::Index n = ds.size();
  Rng rng(mix_seed(seed, 0x4B4D));
  Mat cent(K, ds.images.cols());
  {  // k-means++ seeding
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    cent.row(0) = ds.images.row(first(rng));
    Eigen::VectorXd d2 =
        (ds.images.rowwise() - cent.row(0)).rowwise().squaredNorm();
    for (int k = 1; k < K; ++k) {
      std::discrete_distribution<Eigen::Index> pick(d2.data(), d2.data() + n);
      cent.row(k) = ds.images.row(pick(rng));
      d2 = d2.cwiseMin(
          (ds.images.rowwise() - cent.row(k)).rowwise().squaredNorm());
    }
  }
  std::vector<int> assign(n, 0);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = (ds.images.row(i) - cent.row(0)).squaredNorm();
      for (int k = 1; k < K; ++k) {
        double d = (ds.images.row(i) - cent.row(k)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    Mat sums = Mat::Zero(K, ds.images.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += ds.images.row(i);
      counts(assign[i]) += 1.0;
    }
    for (int k = 0; k < K; ++k)
      if (counts(k) > 0.0) cent.row(k) = sums.row(k) / counts(k);
    if (!changed) break;
  }
  // one-hot usage matrix for the greedy protocol
  Mat usage = Mat::Zero(ds.num_classes, K);
  Eigen::VectorXd lcount = Eigen::VectorXd::Zero(ds.num_classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    usage(ds.labels[std::size_t(i)], assign[i]) += 1.0;
    lcount(ds.labels[std::size_t(i)]) += 1.0;
  }
  for (int l = 0; l < ds.num_classes; ++l)
    if (lcount(l) > 0.0) usage.row(l) /= lcount(l);
  KMeansResult res;
  res.mode_assignment.label_to_k = greedy_label_assignment(usage);
  long hits = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (assign[i] ==
        res.mode_assignment.label_to_k[std::size_t(ds.labels[std::size_t(i)])])
      ++hits;
  res.mode_assignment.accuracy = double(hits) / double(n);
  res.centroids = std::move(cent);
  res.assignment = std::move(assign);
  return res;
}

}  // namespace gmwae
