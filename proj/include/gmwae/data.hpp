#pragma once

// Dataset ingestion (IDX image/label files), synthetic mixture data for fast
// tests, deterministic batch iteration, and the 8x8 -> 28x28 digit
// augmentation used when MNIST is not available.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gmwae/common.hpp"
#include "gmwae/mixture.hpp"

namespace gmwae {

struct ImageDataset {
  int rows = 0, cols = 0;             // image geometry
  Mat images;                         // N x (rows*cols), values in [0,1]
  std::vector<int> labels;            // N, in [0, num_classes)
  int num_classes = 0;

  Eigen::Index size() const { return images.rows(); }

  void validate() const {
    if (images.rows() == 0) throw DataError("ImageDataset: empty");
    if (images.cols() != Eigen::Index(rows) * cols)
      throw DimensionError("ImageDataset: geometry mismatch");
    if (Eigen::Index(labels.size()) != images.rows())
      throw CountMismatchError("ImageDataset: image/label count mismatch");
    for (int l : labels)
      if (l < 0 || l >= num_classes)
        throw DataError("ImageDataset: label out of range");
  }
};

namespace detail {

inline uint32_t read_be32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw TruncatedFileError("truncated IDX file: " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

inline void write_be32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>((v >> 24) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>(v & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline constexpr uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr uint32_t kIdxLabelsMagic = 0x00000801;

// Parses the IDX pair; pixels are scaled by 1/255, labels define
// num_classes as max+1.
inline ImageDataset load_idx(const std::string& images_path,
                             const std::string& labels_path) {
  std::ifstream imf(images_path, std::ios::binary);
  if (!imf) throw DataError("cannot open " + images_path);
  if (detail::read_be32(imf, images_path) != kIdxImagesMagic)
    throw BadMagicError("bad image magic in " + images_path);
  uint32_t n = detail::read_be32(imf, images_path);
  uint32_t rows = detail::read_be32(imf, images_path);
  uint32_t cols = detail::read_be32(imf, images_path);
  std::vector<unsigned char> buf(std::size_t(n) * rows * cols);
  imf.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (std::size_t(imf.gcount()) != buf.size())
    throw TruncatedFileError("truncated IDX image data in " + images_path);

  std::ifstream lbf(labels_path, std::ios::binary);
  if (!lbf) throw DataError("cannot open " + labels_path);
  if (detail::read_be32(lbf, labels_path) != kIdxLabelsMagic)
    throw BadMagicError("bad label magic in " + labels_path);
  uint32_t ln = detail::read_be32(lbf, labels_path);
  if (ln != n)
    throw CountMismatchError("image/label count mismatch: " + images_path);
  std::vector<unsigned char> lab(ln);
  lbf.read(reinterpret_cast<char*>(lab.data()), std::streamsize(lab.size()));
  if (std::size_t(lbf.gcount()) != lab.size())
    throw TruncatedFileError("truncated IDX label data in " + labels_path);

  ImageDataset ds;
  ds.rows = int(rows);
  ds.cols = int(cols);
  ds.images = Mat(n, Eigen::Index(rows) * cols);
  for (uint32_t i = 0; i < n; ++i)
    for (uint32_t p = 0; p < rows * cols; ++p)
      ds.images(i, p) = double(buf[std::size_t(i) * rows * cols + p]) / 255.0;
  ds.labels.assign(lab.begin(), lab.end());
  ds.num_classes = ds.labels.empty()
                       ? 0
                       : *std::max_element(ds.labels.begin(), ds.labels.end()) +
                             1;
  ds.validate();
  return ds;
}

// Writes the IDX pair (pixels quantized to bytes).
inline void write_idx(const ImageDataset& ds, const std::string& images_path,
                      const std::string& labels_path) {
  std::ofstream imf(images_path, std::ios::binary);
  if (!imf) throw DataError("cannot write " + images_path);
  detail::write_be32(imf, kIdxImagesMagic);
  detail::write_be32(imf, uint32_t(ds.size()));
  detail::write_be32(imf, uint32_t(ds.rows));
  detail::write_be32(imf, uint32_t(ds.cols));
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    for (Eigen::Index p = 0; p < ds.images.cols(); ++p) {
      double v = std::clamp(ds.images(i, p), 0.0, 1.0);
      unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
      imf.write(reinterpret_cast<const char*>(&b), 1);
    }
  std::ofstream lbf(labels_path, std::ios::binary);
  if (!lbf) throw DataError("cannot write " + labels_path);
  detail::write_be32(lbf, kIdxLabelsMagic);
  detail::write_be32(lbf, uint32_t(ds.size()));
  for (int l : ds.labels) {
    unsigned char b = static_cast<unsigned char>(l);
    lbf.write(reinterpret_cast<const char*>(&b), 1);
  }
}

// ---- synthetic mixtures ----

struct SyntheticMixtureSpec {
  int K_true = 3;
  int dim_x = 16;                 // stored as a 1 x dim_x image
  std::vector<Vec> centers;       // K_true centers in R^dim_x (pre-squash)
  std::vector<double> spreads;    // per-class isotropic stddev
  std::vector<double> proportions;
  int N = 1000;

  static SyntheticMixtureSpec random_spec(int K_true, int dim_x, int N,
                                          uint64_t seed) {
    SyntheticMixtureSpec s;
    s.K_true = K_true;
    s.dim_x = dim_x;
    s.N = N;
    Rng rng(mix_seed(seed, 0xC0FFEE));
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < K_true; ++k) {
      Vec c(dim_x);
      for (int j = 0; j < dim_x; ++j) c(j) = 2.0 * unit(rng);
      s.centers.push_back(c);
      s.spreads.push_back(0.5);
      s.proportions.push_back(1.0 / K_true);
    }
    return s;
  }

  void validate() const {
    if (int(centers.size()) != K_true || int(spreads.size()) != K_true ||
        int(proportions.size()) != K_true)
      throw DimensionError("SyntheticMixtureSpec: inconsistent sizes");
    double sum = std::accumulate(proportions.begin(), proportions.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument(
          "SyntheticMixtureSpec: proportions must sum to 1");
  }
};

// Gaussian-mixture points squashed into [0,1] by a logistic sigmoid.
inline ImageDataset make_synthetic(const SyntheticMixtureSpec& spec,
                                   uint64_t seed) {
  spec.validate();
  Rng rng(mix_seed(seed, 0x5EED));
  std::discrete_distribution<int> pick(spec.proportions.begin(),
                                       spec.proportions.end());
  std::normal_distribution<double> unit(0.0, 1.0);
  ImageDataset ds;
  ds.rows = 1;
  ds.cols = spec.dim_x;
  ds.num_classes = spec.K_true;
  ds.images = Mat(spec.N, spec.dim_x);
  ds.labels.resize(spec.N);
  for (int i = 0; i < spec.N; ++i) {
    int k = pick(rng);
    ds.labels[i] = k;
    for (int j = 0; j < spec.dim_x; ++j) {
      double v = spec.centers[k](j) + spec.spreads[k] * unit(rng);
      ds.images(i, j) = 1.0 / (1.0 + std::exp(-v));
    }
  }
  return ds;
}

// ---- deterministic batching ----

// Index batches for one epoch: a seeded shuffle chunked to batch_size, with
// the last partial batch dropped.
inline std::vector<std::vector<int>> batch_iter(Eigen::Index n,
                                                int batch_size, uint64_t seed,
                                                uint64_t epoch) {
  if (batch_size < 1 || Eigen::Index(batch_size) > n)
    throw std::invalid_argument("batch_iter: bad batch size");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (Eigen::Index at = 0; at + batch_size <= n; at += batch_size)
    batches.emplace_back(order.begin() + at, order.begin() + at + batch_size);
  return batches;
}

inline Mat gather_rows(const Mat& m, const std::vector<int>& idx) {
  Mat out(Eigen::Index(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(Eigen::Index(i)) = m.row(idx[i]);
  return out;
}

// ---- digit upscaling / augmentation ----

struct AugmentParams {
  // Defaults chosen so that k-means on raw pixels of the augmented set
  // scores in the mid-50s, the same band it reaches on MNIST.
  double max_rotate = 0.14;  // radians, ~8 degrees
  double min_scale = 0.92, max_scale = 1.08;
  double max_shift = 1.5;    // pixels in the output frame
};

namespace detail {

// Bilinear lookup in a source image with zero padding outside.
inline double bilinear(const Mat& img, int row0, int h, int w, double y,
                       double x) {
  int y0 = int(std::floor(y)), x0 = int(std::floor(x));
  double fy = y - y0, fx = x - x0;
  auto px = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return img(row0, Eigen::Index(yy) * w + xx);
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

}  // namespace detail

// Resamples small source digits onto an out_h x out_w canvas with a seeded
// random rotation / scale / shift per output image. Source rows are drawn
// uniformly with replacement, so any number of output images can be built
// from a small pool.
inline ImageDataset augment_digits(const ImageDataset& src, int n_out,
                                   int out_h, int out_w, uint64_t seed,
                                   const AugmentParams& ap = {}) {
  src.validate();
  Rng rng(mix_seed(seed, 0xD161));
  std::uniform_int_distribution<int> pick(0, int(src.size()) - 1);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  ImageDataset ds;
  ds.rows = out_h;
  ds.cols = out_w;
  ds.num_classes = src.num_classes;
  ds.images = Mat(n_out, Eigen::Index(out_h) * out_w);
  ds.labels.resize(n_out);
  const double cy_src = (src.rows - 1) / 2.0, cx_src = (src.cols - 1) / 2.0;
  const double cy_out = (out_h - 1) / 2.0, cx_out = (out_w - 1) / 2.0;
  // Fill ~80% of the canvas at unit augmentation scale.
  const double base = 0.8 * std::min(double(out_h) / src.rows,
                                     double(out_w) / src.cols);
  for (int i = 0; i < n_out; ++i) {
    int s = pick(rng);
    double th = ap.max_rotate * uni(rng);
    double sc =
        base * (ap.min_scale +
                (ap.max_scale - ap.min_scale) * (0.5 * (uni(rng) + 1.0)));
    double dy = ap.max_shift * uni(rng);
    double dx = ap.max_shift * uni(rng);
    double c = std::cos(th), sn = std::sin(th);
    ds.labels[i] = src.labels[s];
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        // inverse map: output pixel -> source coordinates
        double ry = (y - cy_out - dy) / sc, rx = (x - cx_out - dx) / sc;
        double sy = c * ry + sn * rx + cy_src;
        double sx = -sn * ry + c * rx + cx_src;
        ds.images(i, Eigen::Index(y) * out_w + x) =
            std::clamp(detail::bilinear(src.images, s, src.rows, src.cols,
                                        sy, sx),
                       0.0, 1.0);
      }
  }
  return ds;
}

}  // namespace gmwae
