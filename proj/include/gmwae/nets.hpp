#pragma once

// Encoder / decoder networks: a DCGAN-style conv pair for image runs and a
// small dense variant for fast tests and exhaustive gradient checks. The
// Gaussian heads are 16-unit single-hidden-layer dense networks in both
// variants. Parameters live in flat named-tensor stores; forward passes are
// recorded on a tape::Graph so objectives can differentiate through them.

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "gmwae/common.hpp"
#include "gmwae/mixture.hpp"
#include "gmwae/tape.hpp"

namespace gmwae {

enum class ArchKind { mlp, dcgan_small };

struct NetworkArch {
  ArchKind kind = ArchKind::mlp;
  int image_h = 28, image_w = 28;
  int K = 10;
  int dim_z = 10;
  int head_hidden = 16;  // Gaussian heads are dense in both variants

  // mlp widths
  int cls_hidden = 64;
  int dec_hidden = 128;

  // dcgan_small filter counts: classifier convs run cls_filters ->
  // 2*cls_filters; the decoder projects to 2*dec_filters channels and
  // deconvolves through dec_filters down to one channel.
  int cls_filters = 16;
  int dec_filters = 128;
  bool use_batch_norm = true;  // dcgan only; the mlp variant has none

  int input_dim() const { return image_h * image_w; }

  void validate() const {
    if (K < 2 || dim_z < 1 || image_h < 1 || image_w < 1)
      throw std::invalid_argument("NetworkArch: bad sizes");
    if (kind == ArchKind::dcgan_small &&
        (image_h % 4 != 0 || image_w % 4 != 0))
      throw DimensionError(
          "NetworkArch: dcgan_small needs image sides divisible by 4");
  }
};

struct Tensor {
  std::string name;
  Mat value;
  bool trainable = true;
};

struct ParamStore {
  std::vector<Tensor> tensors;

  void add(std::string name, Mat value, bool trainable = true) {
    tensors.push_back(Tensor{std::move(name), std::move(value), trainable});
  }
  int index(const std::string& name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].name == name) return int(i);
    return -1;
  }
  bool has(const std::string& name) const { return index(name) >= 0; }
  Mat& at(const std::string& name) {
    int i = index(name);
    if (i < 0) throw Error("ParamStore: no tensor named " + name);
    return tensors[i].value;
  }
  const Mat& at(const std::string& name) const {
    int i = index(name);
    if (i < 0) throw Error("ParamStore: no tensor named " + name);
    return tensors[i].value;
  }
  long trainable_count() const {
    long n = 0;
    for (const auto& t : tensors)
      if (t.trainable) n += long(t.value.size());
    return n;
  }
};

// ---- initialization ----

namespace detail {

inline Mat rand_uniform(int rows, int cols, double bound, Rng* rng) {
  if (!rng) return Mat::Zero(rows, cols);
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(*rng);
  return m;
}

// He-uniform for hidden (ReLU) layers.
inline Mat init_hidden(int fan_in, int fan_out, Rng* rng) {
  return rand_uniform(fan_in, fan_out, std::sqrt(6.0 / fan_in), rng);
}

// Glorot-uniform for output layers.
inline Mat init_output(int fan_in, int fan_out, Rng* rng) {
  return rand_uniform(fan_in, fan_out, std::sqrt(6.0 / (fan_in + fan_out)),
                      rng);
}

inline void add_batchnorm(ParamStore& s, const std::string& prefix, int c) {
  s.add(prefix + ".gamma", Mat::Ones(1, c));
  s.add(prefix + ".beta", Mat::Zero(1, c));
  s.add(prefix + ".rmean", Mat::Zero(1, c), false);
  s.add(prefix + ".rvar", Mat::Ones(1, c), false);
}

}  // namespace detail

// Builds the encoder tensor set; rng == nullptr gives a zero-valued shape
// template (used when loading checkpoints).
inline ParamStore build_encoder_store(const NetworkArch& a, Rng* rng) {
  a.validate();
  ParamStore s;
  const int d = a.input_dim();
  if (a.kind == ArchKind::mlp) {
    s.add("cls.w0", detail::init_hidden(d, a.cls_hidden, rng));
    s.add("cls.b0", Mat::Zero(1, a.cls_hidden));
    s.add("cls.w1", Mat::Zero(a.cls_hidden, a.K));  // uniform q_D at init
    s.add("cls.b1", Mat::Zero(1, a.K));
  } else {
    const int f0 = a.cls_filters, f1 = 2 * a.cls_filters;
    s.add("cls.conv0.w", detail::init_hidden(16, f0, rng));
    s.add("cls.conv0.b", Mat::Zero(1, f0));
    if (a.use_batch_norm) detail::add_batchnorm(s, "cls.bn0", f0);
    s.add("cls.conv1.w", detail::init_hidden(f0 * 16, f1, rng));
    s.add("cls.conv1.b", Mat::Zero(1, f1));
    if (a.use_batch_norm) detail::add_batchnorm(s, "cls.bn1", f1);
    const int flat = f1 * (a.image_h / 4) * (a.image_w / 4);
    s.add("cls.fc.w", Mat::Zero(flat, a.K));  // uniform q_D at init
    s.add("cls.fc.b", Mat::Zero(1, a.K));
  }
  for (int k = 0; k < a.K; ++k) {
    std::string p = "head" + std::to_string(k);
    s.add(p + ".w0", detail::init_hidden(d, a.head_hidden, rng));
    s.add(p + ".b0", Mat::Zero(1, a.head_hidden));
    s.add(p + ".wm", detail::init_output(a.head_hidden, a.dim_z, rng));
    s.add(p + ".bm", Mat::Zero(1, a.dim_z));
    s.add(p + ".ws", detail::init_output(a.head_hidden, a.dim_z, rng));
    s.add(p + ".bs", Mat::Zero(1, a.dim_z));
  }
  return s;
}

inline ParamStore build_decoder_store(const NetworkArch& a, Rng* rng) {
  a.validate();
  ParamStore s;
  const int d = a.input_dim();
  if (a.kind == ArchKind::mlp) {
    s.add("dec.w0", detail::init_hidden(a.dim_z, a.dec_hidden, rng));
    s.add("dec.b0", Mat::Zero(1, a.dec_hidden));
    s.add("dec.w1", detail::init_output(a.dec_hidden, d, rng));
    s.add("dec.b1", Mat::Zero(1, d));
  } else {
    const int c0 = 2 * a.dec_filters, c1 = a.dec_filters;
    const int ph = a.image_h / 4, pw = a.image_w / 4;
    s.add("dec.fc.w", detail::init_hidden(a.dim_z, c0 * ph * pw, rng));
    s.add("dec.fc.b", Mat::Zero(1, c0 * ph * pw));
    if (a.use_batch_norm) detail::add_batchnorm(s, "dec.bn0", c0);
    s.add("dec.deconv0.w", detail::init_hidden(c1 * 16, c0, rng));
    s.add("dec.deconv0.b", Mat::Zero(1, c1));
    if (a.use_batch_norm) detail::add_batchnorm(s, "dec.bn1", c1);
    s.add("dec.deconv1.w", detail::init_output(16, c1, rng));
    s.add("dec.deconv1.b", Mat::Zero(1, 1));
  }
  return s;
}

struct EncoderParams {
  NetworkArch arch;
  ParamStore store;
};
struct DecoderParams {
  NetworkArch arch;
  ParamStore store;
};

inline EncoderParams init_encoder(const NetworkArch& a, Rng& rng) {
  return EncoderParams{a, build_encoder_store(a, &rng)};
}
inline DecoderParams init_decoder(const NetworkArch& a, Rng& rng) {
  return DecoderParams{a, build_decoder_store(a, &rng)};
}

// ---- tape binding ----

// Binds every tensor of a store into a graph once; trainable tensors become
// gradient leaves when with_grad is set. Keeps raw pointers for batch-norm
// running buffers, which are updated in place during training passes.
class BoundParams {
 public:
  BoundParams(tape::Graph& g, ParamStore& store, bool with_grad)
      : graph_(g), store_(store), with_grad_(with_grad) {
    vars_.resize(store.tensors.size(), tape::Var{});
  }

  tape::Var var(const std::string& name) {
    int i = store_.index(name);
    if (i < 0) throw Error("BoundParams: no tensor named " + name);
    if (!vars_[i].valid()) {
      vars_[i] = (with_grad_ && store_.tensors[i].trainable)
                     ? graph_.leaf(store_.tensors[i].value)
                     : graph_.constant(store_.tensors[i].value);
    }
    return vars_[i];
  }

  Mat* raw(const std::string& name) { return &store_.at(name); }

  // Gradients for every trainable tensor, in store order; zero for tensors
  // the graph never touched.
  std::vector<Mat> trainable_grads() const {
    std::vector<Mat> out;
    for (std::size_t i = 0; i < store_.tensors.size(); ++i) {
      if (!store_.tensors[i].trainable) continue;
      if (vars_[i].valid())
        out.push_back(graph_.grad(vars_[i]));
      else
        out.push_back(Mat::Zero(store_.tensors[i].value.rows(),
                                store_.tensors[i].value.cols()));
    }
    return out;
  }

 private:
  tape::Graph& graph_;
  ParamStore& store_;
  bool with_grad_;
  std::vector<tape::Var> vars_;
};

struct EncoderOut {
  tape::Var logits, probs, log_probs;
  std::vector<tape::Var> mu;       // per mode, B x dim_z
  std::vector<tape::Var> log_std;  // per mode, clamped
};

// log-stddev clamp bounds applied before exponentiation.
inline constexpr double kLogStdMin = -6.0;
inline constexpr double kLogStdMax = 3.0;

inline tape::Var dense(tape::Graph& g, tape::Var x, tape::Var w, tape::Var b) {
  return g.add_rows(g.matmul(x, w), b);
}

inline EncoderOut build_encoder(tape::Graph& g, BoundParams& p,
                                const NetworkArch& a, tape::Var x,
                                bool training) {
  EncoderOut out;
  tape::Var logits;
  if (a.kind == ArchKind::mlp) {
    tape::Var h = g.relu(dense(g, x, p.var("cls.w0"), p.var("cls.b0")));
    logits = dense(g, h, p.var("cls.w1"), p.var("cls.b1"));
  } else {
    const int f0 = a.cls_filters, f1 = 2 * a.cls_filters;
    tape::ConvSpec c0{1, a.image_h, a.image_w, f0, 4, 2, 1};
    tape::Var h = g.conv2d(x, p.var("cls.conv0.w"), p.var("cls.conv0.b"), c0);
    if (a.use_batch_norm)
      h = g.batchnorm(h, p.var("cls.bn0.gamma"), p.var("cls.bn0.beta"),
                      p.raw("cls.bn0.rmean"), p.raw("cls.bn0.rvar"), f0,
                      c0.conv_out_h() * c0.conv_out_w(), training);
    h = g.relu(h);
    tape::ConvSpec c1{f0, a.image_h / 2, a.image_w / 2, f1, 4, 2, 1};
    h = g.conv2d(h, p.var("cls.conv1.w"), p.var("cls.conv1.b"), c1);
    if (a.use_batch_norm)
      h = g.batchnorm(h, p.var("cls.bn1.gamma"), p.var("cls.bn1.beta"),
                      p.raw("cls.bn1.rmean"), p.raw("cls.bn1.rvar"), f1,
                      c1.conv_out_h() * c1.conv_out_w(), training);
    h = g.relu(h);
    logits = dense(g, h, p.var("cls.fc.w"), p.var("cls.fc.b"));
  }
  out.logits = logits;
  out.probs = g.softmax_rows(logits);
  out.log_probs = g.log_softmax_rows(logits);
  for (int k = 0; k < a.K; ++k) {
    std::string pf = "head" + std::to_string(k);
    tape::Var h =
        g.relu(dense(g, x, p.var(pf + ".w0"), p.var(pf + ".b0")));
    out.mu.push_back(dense(g, h, p.var(pf + ".wm"), p.var(pf + ".bm")));
    out.log_std.push_back(
        g.clamp(dense(g, h, p.var(pf + ".ws"), p.var(pf + ".bs")),
                kLogStdMin, kLogStdMax));
  }
  return out;
}

inline tape::Var build_decoder(tape::Graph& g, BoundParams& p,
                               const NetworkArch& a, tape::Var z,
                               bool training) {
  if (a.kind == ArchKind::mlp) {
    tape::Var h = g.relu(dense(g, z, p.var("dec.w0"), p.var("dec.b0")));
    return g.sigmoid(dense(g, h, p.var("dec.w1"), p.var("dec.b1")));
  }
  const int c0 = 2 * a.dec_filters, c1 = a.dec_filters;
  const int ph = a.image_h / 4, pw = a.image_w / 4;
  tape::Var h = dense(g, z, p.var("dec.fc.w"), p.var("dec.fc.b"));
  if (a.use_batch_norm)
    h = g.batchnorm(h, p.var("dec.bn0.gamma"), p.var("dec.bn0.beta"),
                    p.raw("dec.bn0.rmean"), p.raw("dec.bn0.rvar"), c0, ph * pw,
                    training);
  h = g.relu(h);
  tape::ConvSpec d0{c0, ph, pw, c1, 4, 2, 1};
  h = g.conv2d_transpose(h, p.var("dec.deconv0.w"), p.var("dec.deconv0.b"),
                         d0);
  if (a.use_batch_norm)
    h = g.batchnorm(h, p.var("dec.bn1.gamma"), p.var("dec.bn1.beta"),
                    p.raw("dec.bn1.rmean"), p.raw("dec.bn1.rvar"), c1,
                    4 * ph * pw, training);
  h = g.relu(h);
  tape::ConvSpec d1{c1, 2 * ph, 2 * pw, 1, 4, 2, 1};
  h = g.conv2d_transpose(h, p.var("dec.deconv1.w"), p.var("dec.deconv1.b"),
                         d1);
  return g.sigmoid(h);
}

// ---- plain (inference-mode) wrappers ----

// q_D(k|x) for a batch; rows are probability vectors.
inline Mat encode_discrete(const EncoderParams& enc, const Mat& x) {
  if (x.cols() != enc.arch.input_dim())
    throw DimensionError("encode_discrete: input width mismatch");
  tape::Graph g;
  ParamStore& store = const_cast<ParamStore&>(enc.store);
  BoundParams p(g, store, false);
  EncoderOut out = build_encoder(g, p, enc.arch, g.constant(x), false);
  return g.val(out.probs);
}

// q_C(z|k, x) for a batch: one diagonal Gaussian per row.
inline std::vector<DiagGaussian> encode_continuous(const EncoderParams& enc,
                                                   const Mat& x, int k) {
  if (k < 0 || k >= enc.arch.K)
    throw DimensionError("encode_continuous: mode index out of range");
  if (x.cols() != enc.arch.input_dim())
    throw DimensionError("encode_continuous: input width mismatch");
  tape::Graph g;
  ParamStore& store = const_cast<ParamStore&>(enc.store);
  BoundParams p(g, store, false);
  EncoderOut out = build_encoder(g, p, enc.arch, g.constant(x), false);
  const Mat& mu = g.val(out.mu[k]);
  const Mat& ls = g.val(out.log_std[k]);
  std::vector<DiagGaussian> res;
  res.reserve(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    res.emplace_back(mu.row(i).transpose(),
                     ls.row(i).array().exp().matrix().transpose());
  return res;
}

// Deterministic decode of a latent batch into [0,1] images.
inline Mat decode(const DecoderParams& dec, const Mat& z) {
  if (z.cols() != dec.arch.dim_z)
    throw DimensionError("decode: latent width mismatch");
  tape::Graph g;
  ParamStore& store = const_cast<ParamStore&>(dec.store);
  BoundParams p(g, store, false);
  return g.val(build_decoder(g, p, dec.arch, g.constant(z), false));
}

// Deterministic reconstruction: k by argmax q_D (lowest index wins ties),
// z at the posterior mean of that head.
inline Mat reconstruct_deterministic(const EncoderParams& enc,
                                     const DecoderParams& dec, const Mat& x) {
  Mat probs = encode_discrete(enc, x);
  Mat z(x.rows(), enc.arch.dim_z);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    for (int k = 1; k < enc.arch.K; ++k)
      if (probs(i, k) > probs(i, best)) best = k;
    std::vector<DiagGaussian> gk = encode_continuous(enc, x.row(i), best);
    z.row(i) = gk[0].mean.transpose();
  }
  return decode(dec, z);
}

// ---- serialization: flat binary container, magic "GMWAE1", per-tensor
// name / shape / row-major little-endian float32 data ----

namespace detail {

static_assert(sizeof(float) == 4);

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw TruncatedFileError("param file: truncated");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline float get_f32(std::istream& is) {
  uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline constexpr char kParamMagic[6] = {'G', 'M', 'W', 'A', 'E', '1'};

inline void save_param_store(const ParamStore& store, std::ostream& os) {
  os.write(kParamMagic, 6);
  detail::put_u32(os, uint32_t(store.tensors.size()));
  for (const Tensor& t : store.tensors) {
    detail::put_u32(os, uint32_t(t.name.size()));
    os.write(t.name.data(), std::streamsize(t.name.size()));
    detail::put_u32(os, 2);
    detail::put_u32(os, uint32_t(t.value.rows()));
    detail::put_u32(os, uint32_t(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.rows(); ++i)
      for (Eigen::Index j = 0; j < t.value.cols(); ++j)
        detail::put_f32(os, float(t.value(i, j)));
  }
}

inline ParamStore load_param_store(std::istream& is) {
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kParamMagic, 6) != 0)
    throw BadMagicError("param file: bad magic");
  uint32_t count = detail::get_u32(is);
  ParamStore store;
  for (uint32_t t = 0; t < count; ++t) {
    uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw TruncatedFileError("param file: truncated");
    uint32_t ndim = detail::get_u32(is);
    if (ndim != 2) throw DataError("param file: unsupported tensor rank");
    uint32_t rows = detail::get_u32(is);
    uint32_t cols = detail::get_u32(is);
    Mat m(rows, cols);
    for (uint32_t i = 0; i < rows; ++i)
      for (uint32_t j = 0; j < cols; ++j) m(i, j) = detail::get_f32(is);
    store.add(std::move(name), std::move(m));
  }
  return store;
}

namespace detail {

inline Mat encode_arch(const NetworkArch& a) {
  Mat m(1, 12);
  m << double(int(a.kind)), a.image_h, a.image_w, a.K, a.dim_z, a.head_hidden,
      a.cls_hidden, a.dec_hidden, a.cls_filters, a.dec_filters,
      a.use_batch_norm ? 1.0 : 0.0, 1.0;
  return m;
}

inline NetworkArch decode_arch(const Mat& m) {
  if (m.rows() != 1 || m.cols() != 12)
    throw DataError("checkpoint: bad arch descriptor");
  NetworkArch a;
  a.kind = ArchKind(int(m(0, 0)));
  a.image_h = int(m(0, 1));
  a.image_w = int(m(0, 2));
  a.K = int(m(0, 3));
  a.dim_z = int(m(0, 4));
  a.head_hidden = int(m(0, 5));
  a.cls_hidden = int(m(0, 6));
  a.dec_hidden = int(m(0, 7));
  a.cls_filters = int(m(0, 8));
  a.dec_filters = int(m(0, 9));
  a.use_batch_norm = m(0, 10) != 0.0;
  return a;
}

// Copy file tensors into an arch-derived shape template; any name or shape
// difference is a checkpoint/arch mismatch.
inline void fill_from(ParamStore& dst, const ParamStore& file,
                      const std::string& prefix) {
  for (Tensor& t : dst.tensors) {
    int i = file.index(prefix + t.name);
    if (i < 0) throw DataError("checkpoint: missing tensor " + prefix + t.name);
    const Mat& src = file.tensors[i].value;
    if (src.rows() != t.value.rows() || src.cols() != t.value.cols())
      throw DataError("checkpoint: shape mismatch for " + prefix + t.name);
    t.value = src;
  }
}

}  // namespace detail

inline void save_checkpoint(const EncoderParams& enc,
                            const DecoderParams& dec,
                            const std::string& path) {
  ParamStore all;
  all.add("meta.arch", detail::encode_arch(enc.arch), false);
  for (const Tensor& t : enc.store.tensors)
    all.add("enc." + t.name, t.value, t.trainable);
  for (const Tensor& t : dec.store.tensors)
    all.add("dec." + t.name, t.value, t.trainable);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  save_param_store(all, os);
}

inline std::pair<EncoderParams, DecoderParams> load_checkpoint(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  ParamStore file = load_param_store(is);
  int meta = file.index("meta.arch");
  if (meta < 0) throw DataError("checkpoint: missing arch descriptor");
  NetworkArch arch = detail::decode_arch(file.tensors[meta].value);
  EncoderParams enc{arch, build_encoder_store(arch, nullptr)};
  DecoderParams dec{arch, build_decoder_store(arch, nullptr)};
  detail::fill_from(enc.store, file, "enc.");
  detail::fill_from(dec.store, file, "dec.");
  return {std::move(enc), std::move(dec)};
}

}  // namespace gmwae
