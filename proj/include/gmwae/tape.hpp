#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Graph records matrix-valued operations as they execute; backward() walks
// the tape in reverse and accumulates gradients into every node that
// (transitively) depends on a leaf. Node handles (Var) are plain indices, so
// graphs are cheap to build per training step and dropped afterwards.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace gmwae {

using Mat = Eigen::MatrixXd;

namespace tape {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Geometry of a conv / transposed-conv layer. Batch rows are channel-major:
// element (c, y, x) of image i lives at row i, column c*H*W + y*W + x.
struct ConvSpec {
  int in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0;
  int ksize = 0, stride = 1, pad = 0;

  int conv_out_h() const { return (in_h + 2 * pad - ksize) / stride + 1; }
  int conv_out_w() const { return (in_w + 2 * pad - ksize) / stride + 1; }
  int tconv_out_h() const { return (in_h - 1) * stride - 2 * pad + ksize; }
  int tconv_out_w() const { return (in_w - 1) * stride - 2 * pad + ksize; }
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Mat v) { return push(std::move(v), false, nullptr); }

  // Leaf that participates in backward(); use for parameters and any input
  // whose gradient is wanted.
  Var leaf(Mat v) { return push(std::move(v), true, nullptr); }

  const Mat& val(Var v) const { return nodes_[check(v)].value; }

  // Gradient accumulated by the last backward(); zeros if the node was never
  // reached.
  Mat grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise / structural ops ----

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Var out = push(val(a) + val(b), needs(a) || needs(b), nullptr);
    set_back(out, [this, a, b, out] {
      if (needs(a)) gref(a) += gref(out);
      if (needs(b)) gref(b) += gref(out);
    });
    return out;
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Var out = push(val(a) - val(b), needs(a) || needs(b), nullptr);
    set_back(out, [this, a, b, out] {
      if (needs(a)) gref(a) += gref(out);
      if (needs(b)) gref(b) -= gref(out);
    });
    return out;
  }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Var out = push(val(a).cwiseProduct(val(b)), needs(a) || needs(b), nullptr);
    set_back(out, [this, a, b, out] {
      if (needs(a)) gref(a) += gref(out).cwiseProduct(val(b));
      if (needs(b)) gref(b) += gref(out).cwiseProduct(val(a));
    });
    return out;
  }

  Var scale(Var a, double c) {
    Var out = push(val(a) * c, needs(a), nullptr);
    set_back(out, [this, a, c, out] {
      if (needs(a)) gref(a) += c * gref(out);
    });
    return out;
  }

  Var add_scalar(Var a, double c) {
    Var out = push(val(a).array() + c, needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a)) gref(a) += gref(out);
    });
    return out;
  }

  // a (n x m) plus a row vector (1 x m) broadcast over rows.
  Var add_rows(Var a, Var row) {
    if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
      throw std::invalid_argument("add_rows: row must be 1 x cols(a)");
    Mat v = val(a);
    v.rowwise() += val(row).row(0);
    Var out = push(std::move(v), needs(a) || needs(row), nullptr);
    set_back(out, [this, a, row, out] {
      if (needs(a)) gref(a) += gref(out);
      if (needs(row)) gref(row) += gref(out).colwise().sum();
    });
    return out;
  }

  Var relu(Var a) {
    Var out = push(val(a).cwiseMax(0.0), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a))
        gref(a) += gref(out).cwiseProduct(
            (val(a).array() > 0.0).cast<double>().matrix());
    });
    return out;
  }

  Var sigmoid(Var a) {
    Mat s = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    Var out = push(std::move(s), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a)) {
        const Mat& sv = val(out);
        gref(a) += gref(out).cwiseProduct(
            sv.cwiseProduct((1.0 - sv.array()).matrix()));
      }
    });
    return out;
  }

  Var exp(Var a) {
    Var out = push(val(a).array().exp().matrix(), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a)) gref(a) += gref(out).cwiseProduct(val(out));
    });
    return out;
  }

  Var log(Var a) {
    Var out = push(val(a).array().log().matrix(), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a)) gref(a) += gref(out).cwiseQuotient(val(a));
    });
    return out;
  }

  // Elementwise reciprocal.
  Var inv(Var a) {
    Var out = push(val(a).cwiseInverse(), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a))
        gref(a) -= gref(out).cwiseProduct(val(out).cwiseProduct(val(out)));
    });
    return out;
  }

  // Subgradient 0 outside the open interval (lo, hi).
  Var clamp(Var a, double lo, double hi) {
    Var out = push(val(a).array().max(lo).min(hi).matrix(), needs(a), nullptr);
    set_back(out, [this, a, lo, hi, out] {
      if (needs(a)) {
        Mat mask = ((val(a).array() > lo) && (val(a).array() < hi))
                       .cast<double>()
                       .matrix();
        gref(a) += gref(out).cwiseProduct(mask);
      }
    });
    return out;
  }

  Var matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows())
      throw std::invalid_argument("matmul: inner dimensions differ");
    Var out = push(val(a) * val(b), needs(a) || needs(b), nullptr);
    set_back(out, [this, a, b, out] {
      if (needs(a)) gref(a).noalias() += gref(out) * val(b).transpose();
      if (needs(b)) gref(b).noalias() += val(a).transpose() * gref(out);
    });
    return out;
  }

  Var softmax_rows(Var a) {
    Mat s = val(a);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      Eigen::ArrayXd r = s.row(i).array() - s.row(i).maxCoeff();
      Eigen::ArrayXd e = r.exp();
      s.row(i) = (e / e.sum()).matrix();
    }
    Var out = push(std::move(s), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a)) {
        const Mat& sv = val(out);
        const Mat& go = gref(out);
        Mat da(sv.rows(), sv.cols());
        for (Eigen::Index i = 0; i < sv.rows(); ++i) {
          double inner = go.row(i).dot(sv.row(i));
          da.row(i) =
              sv.row(i).cwiseProduct(go.row(i).array().matrix()) -
              inner * sv.row(i);
        }
        gref(a) += da;
      }
    });
    return out;
  }

  Var log_softmax_rows(Var a) {
    Mat ls = val(a);
    for (Eigen::Index i = 0; i < ls.rows(); ++i) {
      double mx = ls.row(i).maxCoeff();
      double lse = mx + std::log((ls.row(i).array() - mx).exp().sum());
      ls.row(i).array() -= lse;
    }
    Var out = push(std::move(ls), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a)) {
        const Mat& lsv = val(out);
        const Mat& go = gref(out);
        Mat da(lsv.rows(), lsv.cols());
        for (Eigen::Index i = 0; i < lsv.rows(); ++i) {
          double tot = go.row(i).sum();
          da.row(i) = go.row(i) - tot * lsv.row(i).array().exp().matrix();
        }
        gref(a) += da;
      }
    });
    return out;
  }

  // ---- reductions ----

  Var sum(Var a) {
    Var out = push(Mat::Constant(1, 1, val(a).sum()), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a)) gref(a).array() += gref(out)(0, 0);
    });
    return out;
  }

  Var row_sums(Var a) {
    Var out = push(val(a).rowwise().sum(), needs(a), nullptr);
    set_back(out, [this, a, out] {
      if (needs(a)) gref(a).colwise() += gref(out).col(0);
    });
    return out;
  }

  // sum(a .* b) as a 1x1 node.
  Var dot(Var a, Var b) {
    require_same_shape(a, b, "dot");
    Var out = push(Mat::Constant(1, 1, val(a).cwiseProduct(val(b)).sum()),
                   needs(a) || needs(b), nullptr);
    set_back(out, [this, a, b, out] {
      double go = gref(out)(0, 0);
      if (needs(a)) gref(a) += go * val(b);
      if (needs(b)) gref(b) += go * val(a);
    });
    return out;
  }

  // ---- slicing / assembly ----

  Var col(Var a, int j) {
    if (j < 0 || j >= val(a).cols())
      throw std::invalid_argument("col: index out of range");
    Var out = push(val(a).col(j), needs(a), nullptr);
    set_back(out, [this, a, j, out] {
      if (needs(a)) gref(a).col(j) += gref(out).col(0);
    });
    return out;
  }

  Var vstack(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("vstack: no parts");
    Eigen::Index rows = 0, cols = val(parts[0]).cols();
    bool any = false;
    for (Var p : parts) {
      if (val(p).cols() != cols)
        throw std::invalid_argument("vstack: column mismatch");
      rows += val(p).rows();
      any = any || needs(p);
    }
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      v.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
    }
    std::vector<Var> ps = parts;
    Var out = push(std::move(v), any, nullptr);
    set_back(out, [this, ps, out] {
      Eigen::Index at = 0;
      for (Var p : ps) {
        if (needs(p)) gref(p) += gref(out).middleRows(at, val(p).rows());
        at += val(p).rows();
      }
    });
    return out;
  }

  // ---- kernel building blocks ----

  // D(i,j) = ||a_i - b_j||^2 for row vectors of a (n x d) and b (m x d).
  Var pairwise_sqdist(Var a, Var b) {
    if (val(a).cols() != val(b).cols())
      throw std::invalid_argument("pairwise_sqdist: dimension mismatch");
    const Mat& A = val(a);
    const Mat& B = val(b);
    Eigen::VectorXd an = A.rowwise().squaredNorm();
    Eigen::VectorXd bn = B.rowwise().squaredNorm();
    Mat d = (-2.0 * A * B.transpose());
    d.colwise() += an;
    d.rowwise() += bn.transpose();
    d = d.cwiseMax(0.0);  // guard tiny negative round-off
    Var out = push(std::move(d), needs(a) || needs(b), nullptr);
    set_back(out, [this, a, b, out] {
      const Mat& gD = gref(out);
      const Mat& A = val(a);
      const Mat& B = val(b);
      if (needs(a)) {
        Eigen::VectorXd rs = gD.rowwise().sum();
        gref(a).noalias() += 2.0 * (rs.asDiagonal() * A - gD * B);
      }
      if (needs(b)) {
        Eigen::VectorXd cs = gD.colwise().sum();
        gref(b).noalias() += 2.0 * (cs.asDiagonal() * B - gD.transpose() * A);
      }
    });
    return out;
  }

  // sum_i C_i / (C_i + D) elementwise over a matrix of squared distances.
  Var imq_mix(Var d2, std::vector<double> bandwidths) {
    const Mat& D = val(d2);
    Mat k = Mat::Zero(D.rows(), D.cols());
    for (double c : bandwidths) k.array() += c / (c + D.array());
    Var out = push(std::move(k), needs(d2), nullptr);
    set_back(out, [this, d2, bandwidths, out] {
      if (needs(d2)) {
        const Mat& D = val(d2);
        Mat dk = Mat::Zero(D.rows(), D.cols());
        for (double c : bandwidths)
          dk.array() -= c / ((c + D.array()) * (c + D.array()));
        gref(d2) += gref(out).cwiseProduct(dk);
      }
    });
    return out;
  }

  // ---- convolution family ----

  Var conv2d(Var x, Var w, Var b, const ConvSpec& s) {
    const int oh = s.conv_out_h(), ow = s.conv_out_w();
    const Eigen::Index batch = val(x).rows();
    if (val(x).cols() != Eigen::Index(s.in_c) * s.in_h * s.in_w)
      throw std::invalid_argument("conv2d: input shape mismatch");
    if (val(w).rows() != Eigen::Index(s.in_c) * s.ksize * s.ksize ||
        val(w).cols() != s.out_c)
      throw std::invalid_argument("conv2d: weight shape mismatch");
    auto cols = std::make_shared<Mat>(im2col(val(x), s, s.in_h, s.in_w));
    Mat y2 = *cols * val(w);           // (B*oh*ow) x out_c
    y2.rowwise() += val(b).row(0);
    Mat y = dechannel(y2, batch, s.out_c, oh * ow);
    Var out = push(std::move(y), needs(x) || needs(w) || needs(b), nullptr);
    set_back(out, [this, x, w, b, s, cols, batch, oh, ow, out] {
      Mat gy2 = enchannel(gref(out), batch, s.out_c, oh * ow);
      if (needs(b)) gref(b) += gy2.colwise().sum();
      if (needs(w)) gref(w).noalias() += cols->transpose() * gy2;
      if (needs(x)) {
        Mat gcols = gy2 * val(w).transpose();
        col2im_acc(gcols, s, s.in_h, s.in_w, gref(x));
      }
    });
    return out;
  }

  // Transposed convolution; spec describes the *input* geometry, output is
  // (in_h-1)*stride - 2*pad + ksize on each side. Weight layout mirrors the
  // conv that would map output back to input: (out_c*k*k) x in_c.
  Var conv2d_transpose(Var x, Var w, Var b, const ConvSpec& s) {
    const int oh = s.tconv_out_h(), ow = s.tconv_out_w();
    const Eigen::Index batch = val(x).rows();
    if (val(x).cols() != Eigen::Index(s.in_c) * s.in_h * s.in_w)
      throw std::invalid_argument("conv2d_transpose: input shape mismatch");
    if (val(w).rows() != Eigen::Index(s.out_c) * s.ksize * s.ksize ||
        val(w).cols() != s.in_c)
      throw std::invalid_argument("conv2d_transpose: weight shape mismatch");
    ConvSpec mirror = s;
    mirror.in_c = s.out_c;
    mirror.in_h = oh;
    mirror.in_w = ow;
    mirror.out_c = s.in_c;
    auto x2 = std::make_shared<Mat>(
        enchannel(val(x), batch, s.in_c, s.in_h * s.in_w));
    Mat p = *x2 * val(w).transpose();  // (B*ih*iw) x (out_c*k*k)
    Mat y = Mat::Zero(batch, Eigen::Index(s.out_c) * oh * ow);
    col2im_acc(p, mirror, oh, ow, y);
    for (int c = 0; c < s.out_c; ++c)
      y.middleCols(Eigen::Index(c) * oh * ow, oh * ow).array() += val(b)(0, c);
    Var out = push(std::move(y), needs(x) || needs(w) || needs(b), nullptr);
    set_back(out, [this, x, w, b, s, mirror, x2, batch, oh, ow, out] {
      const Mat& gy = gref(out);
      if (needs(b)) {
        for (int c = 0; c < s.out_c; ++c)
          gref(b)(0, c) +=
              gy.middleCols(Eigen::Index(c) * oh * ow, oh * ow).sum();
      }
      Mat gp = im2col(gy, mirror, oh, ow);  // (B*ih*iw) x (out_c*k*k)
      if (needs(w)) gref(w).noalias() += gp.transpose() * *x2;
      if (needs(x)) {
        Mat gx2 = gp * val(w);
        gref(x) += dechannel(gx2, batch, s.in_c, s.in_h * s.in_w);
      }
    });
    return out;
  }

  // Batch normalization over channels; spatial = pixels per channel (1 for a
  // dense layer). In training mode batch statistics are used and the running
  // buffers are updated in place with momentum 0.9; in inference mode the
  // running buffers are used and receive no gradient.
  Var batchnorm(Var x, Var gamma, Var beta, Mat* running_mean,
                Mat* running_var, int channels, int spatial, bool training,
                double eps = 1e-5, double momentum = 0.9) {
    const Eigen::Index batch = val(x).rows();
    if (val(x).cols() != Eigen::Index(channels) * spatial)
      throw std::invalid_argument("batchnorm: shape mismatch");
    const double n = double(batch) * spatial;
    Eigen::RowVectorXd mean(channels), var(channels);
    if (training) {
      for (int c = 0; c < channels; ++c) {
        auto blk = val(x).middleCols(Eigen::Index(c) * spatial, spatial);
        mean(c) = blk.sum() / n;
        var(c) = (blk.array() - mean(c)).square().sum() / n;
      }
      if (running_mean && running_var) {
        running_mean->row(0) =
            momentum * running_mean->row(0) + (1 - momentum) * mean;
        running_var->row(0) =
            momentum * running_var->row(0) + (1 - momentum) * var;
      }
    } else {
      mean = running_mean->row(0);
      var = running_var->row(0);
    }
    auto xhat = std::make_shared<Mat>(batch, val(x).cols());
    Mat y(batch, val(x).cols());
    for (int c = 0; c < channels; ++c) {
      double is = 1.0 / std::sqrt(var(c) + eps);
      auto blk = val(x).middleCols(Eigen::Index(c) * spatial, spatial);
      xhat->middleCols(Eigen::Index(c) * spatial, spatial) =
          ((blk.array() - mean(c)) * is).matrix();
      y.middleCols(Eigen::Index(c) * spatial, spatial) =
          (xhat->middleCols(Eigen::Index(c) * spatial, spatial).array() *
               val(gamma)(0, c) +
           val(beta)(0, c))
              .matrix();
    }
    Eigen::RowVectorXd inv_std =
        (var.array() + eps).sqrt().inverse().matrix();
    Var out =
        push(std::move(y), needs(x) || needs(gamma) || needs(beta), nullptr);
    set_back(out, [this, x, gamma, beta, xhat, channels, spatial, training,
                   inv_std, n, out] {
      const Mat& gy = gref(out);
      for (int c = 0; c < channels; ++c) {
        auto gyb = gy.middleCols(Eigen::Index(c) * spatial, spatial);
        auto xh = xhat->middleCols(Eigen::Index(c) * spatial, spatial);
        if (needs(gamma)) gref(gamma)(0, c) += gyb.cwiseProduct(xh).sum();
        if (needs(beta)) gref(beta)(0, c) += gyb.sum();
        if (needs(x)) {
          double g = val(gamma)(0, c);
          if (training) {
            double mg = gyb.sum() / n;
            double mgx = gyb.cwiseProduct(xh).sum() / n;
            gref(x).middleCols(Eigen::Index(c) * spatial, spatial) +=
                (g * inv_std(c)) *
                (gyb.array() - mg - xh.array() * mgx).matrix();
          } else {
            gref(x).middleCols(Eigen::Index(c) * spatial, spatial) +=
                (g * inv_std(c)) * gyb;
          }
        }
      }
    });
    return out;
  }

  void backward(Var root) {
    Node& r = nodes_[check(root)];
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw std::invalid_argument("backward: root must be 1x1");
    if (!r.requires_grad) return;
    gref(root)(0, 0) += 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.back && n.grad.size() != 0) n.back();
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;

  int check(Var v) const {
    if (v.id < 0 || std::size_t(v.id) >= nodes_.size())
      throw std::invalid_argument("invalid Var handle");
    return v.id;
  }

  bool needs(Var v) const { return nodes_[check(v)].requires_grad; }

  Mat& gref(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var push(Mat v, bool requires_grad, std::function<void()> back) {
    nodes_.push_back(Node{std::move(v), Mat(), std::move(back), requires_grad});
    return Var{int(nodes_.size()) - 1};
  }

  void set_back(Var v, std::function<void()> f) {
    nodes_[check(v)].back = std::move(f);
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }

  // Batch im2col: x is B x (C*H*W); result is (B*oh*ow) x (C*k*k), row
  // (i, y, x), column (c, ky, kx).
  static Mat im2col(const Mat& x, const ConvSpec& s, int h, int w) {
    const int oh = (h + 2 * s.pad - s.ksize) / s.stride + 1;
    const int ow = (w + 2 * s.pad - s.ksize) / s.stride + 1;
    const Eigen::Index batch = x.rows();
    const int ic = int(x.cols() / (Eigen::Index(h) * w));
    Mat cols = Mat::Zero(batch * oh * ow, Eigen::Index(ic) * s.ksize * s.ksize);
    for (Eigen::Index i = 0; i < batch; ++i)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          Eigen::Index r = (i * oh + y) * ow + xx;
          for (int c = 0; c < ic; ++c)
            for (int ky = 0; ky < s.ksize; ++ky) {
              int sy = y * s.stride + ky - s.pad;
              if (sy < 0 || sy >= h) continue;
              for (int kx = 0; kx < s.ksize; ++kx) {
                int sx = xx * s.stride + kx - s.pad;
                if (sx < 0 || sx >= w) continue;
                cols(r, (Eigen::Index(c) * s.ksize + ky) * s.ksize + kx) =
                    x(i, (Eigen::Index(c) * h + sy) * w + sx);
              }
            }
        }
    return cols;
  }

  // Adjoint of im2col: scatter-add column gradients back to image layout.
  static void col2im_acc(const Mat& cols, const ConvSpec& s, int h, int w,
                         Eigen::Ref<Mat> x_acc) {
    const int oh = (h + 2 * s.pad - s.ksize) / s.stride + 1;
    const int ow = (w + 2 * s.pad - s.ksize) / s.stride + 1;
    const int ic = int(cols.cols() / (Eigen::Index(s.ksize) * s.ksize));
    const Eigen::Index batch = cols.rows() / (Eigen::Index(oh) * ow);
    for (Eigen::Index i = 0; i < batch; ++i)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          Eigen::Index r = (i * oh + y) * ow + xx;
          for (int c = 0; c < ic; ++c)
            for (int ky = 0; ky < s.ksize; ++ky) {
              int sy = y * s.stride + ky - s.pad;
              if (sy < 0 || sy >= h) continue;
              for (int kx = 0; kx < s.ksize; ++kx) {
                int sx = xx * s.stride + kx - s.pad;
                if (sx < 0 || sx >= w) continue;
                x_acc(i, (Eigen::Index(c) * h + sy) * w + sx) +=
                    cols(r, (Eigen::Index(c) * s.ksize + ky) * s.ksize + kx);
              }
            }
        }
  }

  // (B*S) x C  ->  B x (C*S) channel-major rows.
  static Mat dechannel(const Mat& y2, Eigen::Index batch, int channels,
                       int spatial) {
    Mat y(batch, Eigen::Index(channels) * spatial);
    for (Eigen::Index i = 0; i < batch; ++i)
      for (int c = 0; c < channels; ++c)
        for (int p = 0; p < spatial; ++p)
          y(i, Eigen::Index(c) * spatial + p) = y2(i * spatial + p, c);
    return y;
  }

  // B x (C*S) channel-major rows  ->  (B*S) x C.
  static Mat enchannel(const Mat& y, Eigen::Index batch, int channels,
                       int spatial) {
    Mat y2(batch * spatial, channels);
    for (Eigen::Index i = 0; i < batch; ++i)
      for (int c = 0; c < channels; ++c)
        for (int p = 0; p < spatial; ++p)
          y2(i * spatial + p, c) = y(i, Eigen::Index(c) * spatial + p);
    return y2;
  }
};

}  // namespace tape
}  // namespace gmwae
