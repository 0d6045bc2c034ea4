#ifndef HCB_NET_HPP
#define HCB_NET_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "hcb/common.hpp"
#include "hcb/image.hpp"

namespace hcb::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Activations hold one sample per column. Spatial tensors are flattened in
// HWC order, which lets the conv GEMM write its result straight into the
// output buffer without a transpose.

template <typename S>
struct ParamView {
  S* value = nullptr;
  S* grad = nullptr;
  Eigen::Index count = 0;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// 2-D convolution, valid padding, stride 1, square kernel.
template <typename S>
struct Conv {
  int in_h, in_w, in_c, k, out_c;
  int out_h, out_w;
  Mat<S> W;   // out_c x (k*k*in_c); column index = (ky*k+kx)*in_c + ci
  Vec<S> b;
  Mat<S> gW;
  Vec<S> gb;
  Vec<S> channel_mask;  // empty = inactive; used by fine-pruning

  Conv(int ih, int iw, int ic, int kernel, int oc)
      : in_h(ih), in_w(iw), in_c(ic), k(kernel), out_c(oc),
        out_h(ih - kernel + 1), out_w(iw - kernel + 1) {
    if (out_h < 1 || out_w < 1) {
      throw ValidationError("conv output underflows: input " + std::to_string(ih) +
                            "x" + std::to_string(iw) + " with kernel " +
                            std::to_string(kernel));
    }
    W.setZero(out_c, k * k * in_c);
    b.setZero(out_c);
    gW.setZero(out_c, k * k * in_c);
    gb.setZero(out_c);
  }

  int in_dim() const { return in_h * in_w * in_c; }
  int out_dim() const { return out_h * out_w * out_c; }

  void im2col(const Mat<S>& in) const {
    const Eigen::Index batch = in.cols();
    const Eigen::Index patch_cols = batch * out_h * out_w;
    col_.resize(k * k * in_c, patch_cols);
    for (Eigen::Index bidx = 0; bidx < batch; ++bidx) {
      const S* src = in.col(bidx).data();
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          S* dst = col_.col(bidx * out_h * out_w + oy * out_w + ox).data();
          for (int ky = 0; ky < k; ++ky) {
            const S* row = src + ((oy + ky) * in_w + ox) * in_c;
            std::memcpy(dst + ky * k * in_c, row, sizeof(S) * k * in_c);
          }
        }
      }
    }
  }

  void forward(const Mat<S>& in, Mat<S>& out) const {
    const Eigen::Index batch = in.cols();
    im2col(in);
    out.resize(out_dim(), batch);
    Eigen::Map<Mat<S>> r(out.data(), out_c, batch * out_h * out_w);
    r.noalias() = W * col_;
    r.colwise() += b;
    if (channel_mask.size() == out_c) r.array().colwise() *= channel_mask.array();
  }

  void backward(const Mat<S>& in, const Mat<S>&, const Mat<S>& dout, Mat<S>& din,
                bool param_grads) {
    const Eigen::Index batch = in.cols();
    const Eigen::Index patch_cols = batch * out_h * out_w;
    Eigen::Map<const Mat<S>> dr_raw(dout.data(), out_c, patch_cols);
    Mat<S> dr_masked;
    const Mat<S>* dr = nullptr;
    if (channel_mask.size() == out_c) {
      dr_masked = dr_raw;
      dr_masked.array().colwise() *= channel_mask.array();
      dr = &dr_masked;
    }
    auto apply = [&](const auto& drm) {
      if (param_grads) {
        gW.noalias() += drm * col_.transpose();
        gb.noalias() += drm.rowwise().sum();
      }
      dcol_.resize(k * k * in_c, patch_cols);
      dcol_.noalias() = W.transpose() * drm;
    };
    if (dr) apply(*dr); else apply(dr_raw);

    // col2im: scatter-add patches back onto the input gradient
    din.setZero(in_dim(), batch);
    for (Eigen::Index bidx = 0; bidx < batch; ++bidx) {
      S* dst = din.col(bidx).data();
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          const S* src = dcol_.col(bidx * out_h * out_w + oy * out_w + ox).data();
          for (int ky = 0; ky < k; ++ky) {
            S* row = dst + ((oy + ky) * in_w + ox) * in_c;
            const S* patch = src + ky * k * in_c;
            for (int t = 0; t < k * in_c; ++t) row[t] += patch[t];
          }
        }
      }
    }
  }

  void collect(std::vector<ParamView<S>>& out) {
    out.push_back({W.data(), gW.data(), W.size()});
    out.push_back({b.data(), gb.data(), b.size()});
  }

 private:
  mutable Mat<S> col_;
  Mat<S> dcol_;
};

template <typename S>
struct Relu {
  int dim;
  explicit Relu(int d) : dim(d) {}
  int in_dim() const { return dim; }
  int out_dim() const { return dim; }

  void forward(const Mat<S>& in, Mat<S>& out) const {
    out = in.cwiseMax(S(0));
  }
  void backward(const Mat<S>&, const Mat<S>& out, const Mat<S>& dout, Mat<S>& din,
                bool) {
    din = dout.cwiseProduct((out.array() > S(0)).template cast<S>().matrix());
  }
  void collect(std::vector<ParamView<S>>&) {}
};

/// 2x2 max pooling with stride 2 (floor semantics on odd extents), HWC layout.
template <typename S>
struct MaxPool2 {
  int in_h, in_w, c;
  int out_h, out_w;

  MaxPool2(int ih, int iw, int ch)
      : in_h(ih), in_w(iw), c(ch), out_h(ih / 2), out_w(iw / 2) {
    if (out_h < 1 || out_w < 1) {
      throw ValidationError("pool output underflows on input " +
                            std::to_string(ih) + "x" + std::to_string(iw));
    }
  }

  int in_dim() const { return in_h * in_w * c; }
  int out_dim() const { return out_h * out_w * c; }

  void forward(const Mat<S>& in, Mat<S>& out) const {
    const Eigen::Index batch = in.cols();
    out.resize(out_dim(), batch);
    argmax_.resize(out_dim(), batch);
    for (Eigen::Index bidx = 0; bidx < batch; ++bidx) {
      const S* src = in.col(bidx).data();
      S* dst = out.col(bidx).data();
      int* arg = argmax_.col(bidx).data();
      for (int py = 0; py < out_h; ++py)
        for (int px = 0; px < out_w; ++px)
          for (int ch = 0; ch < c; ++ch) {
            int best = ((2 * py) * in_w + 2 * px) * c + ch;
            S best_v = src[best];
            for (int sy = 0; sy < 2; ++sy)
              for (int sx = 0; sx < 2; ++sx) {
                int idx = ((2 * py + sy) * in_w + 2 * px + sx) * c + ch;
                if (src[idx] > best_v) {
                  best_v = src[idx];
                  best = idx;
                }
              }
            dst[(py * out_w + px) * c + ch] = best_v;
            arg[(py * out_w + px) * c + ch] = best;
          }
    }
  }

  void backward(const Mat<S>& in, const Mat<S>&, const Mat<S>& dout, Mat<S>& din,
                bool) {
    din.setZero(in_dim(), in.cols());
    for (Eigen::Index bidx = 0; bidx < dout.cols(); ++bidx) {
      const S* g = dout.col(bidx).data();
      const int* arg = argmax_.col(bidx).data();
      S* dst = din.col(bidx).data();
      for (int i = 0; i < out_dim(); ++i) dst[arg[i]] += g[i];
    }
  }
  void collect(std::vector<ParamView<S>>&) {}

 private:
  mutable Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> argmax_;
};

template <typename S>
struct Dense {
  int in, out;
  Mat<S> W;  // out x in
  Vec<S> b;
  Mat<S> gW;
  Vec<S> gb;

  Dense(int in_dim_, int out_dim_) : in(in_dim_), out(out_dim_) {
    W.setZero(out, in);
    b.setZero(out);
    gW.setZero(out, in);
    gb.setZero(out);
  }

  int in_dim() const { return in; }
  int out_dim() const { return out; }

  void forward(const Mat<S>& x, Mat<S>& y) const {
    y.noalias() = W * x;
    y.colwise() += b;
  }
  void backward(const Mat<S>& x, const Mat<S>&, const Mat<S>& dout, Mat<S>& din,
                bool param_grads) {
    if (param_grads) {
      gW.noalias() += dout * x.transpose();
      gb.noalias() += dout.rowwise().sum();
    }
    din.noalias() = W.transpose() * dout;
  }
  void collect(std::vector<ParamView<S>>& out_views) {
    out_views.push_back({W.data(), gW.data(), W.size()});
    out_views.push_back({b.data(), gb.data(), b.size()});
  }
};

template <typename S>
using LayerVar = std::variant<Conv<S>, Relu<S>, MaxPool2<S>, Dense<S>>;

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename S>
class Network {
 public:
  Network() = default;
  Network(int input_dim, int num_classes)
      : input_dim_(input_dim), num_classes_(num_classes) {}

  std::vector<LayerVar<S>>& layers() { return layers_; }
  const std::vector<LayerVar<S>>& layers() const { return layers_; }
  int input_dim() const { return input_dim_; }
  int num_classes() const { return num_classes_; }

  void add(LayerVar<S> layer) { layers_.push_back(std::move(layer)); }

  /// Forward pass; activations are retained for a following backward().
  const Mat<S>& forward(const Mat<S>& x) {
    acts_.resize(layers_.size() + 1);
    acts_[0] = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
      std::visit([&](auto& l) { l.forward(acts_[i], acts_[i + 1]); }, layers_[i]);
    }
    return acts_.back();
  }

  /// Backpropagates dLoss/dLogits. Parameter gradients accumulate into the
  /// layers unless param_grads is false. The input gradient is written to
  /// dinput when provided.
  void backward(const Mat<S>& dlogits, bool param_grads = true,
                Mat<S>* dinput = nullptr) {
    Mat<S> d = dlogits;
    Mat<S> dprev;
    for (size_t i = layers_.size(); i-- > 0;) {
      std::visit(
          [&](auto& l) { l.backward(acts_[i], acts_[i + 1], d, dprev, param_grads); },
          layers_[i]);
      d.swap(dprev);
    }
    if (dinput) *dinput = std::move(d);
  }

  void zero_grads() {
    for (ParamView<S> p : params())
      Eigen::Map<Vec<S>>(p.grad, p.count).setZero();
  }

  std::vector<ParamView<S>> params() {
    std::vector<ParamView<S>> out;
    for (auto& lv : layers_) std::visit([&](auto& l) { l.collect(out); }, lv);
    return out;
  }

  size_t param_count() {
    size_t n = 0;
    for (ParamView<S> p : params()) n += static_cast<size_t>(p.count);
    return n;
  }

  std::vector<S> get_params() {
    std::vector<S> flat;
    flat.reserve(param_count());
    for (ParamView<S> p : params()) flat.insert(flat.end(), p.value, p.value + p.count);
    return flat;
  }

  void set_params(const std::vector<S>& flat) {
    size_t off = 0;
    for (ParamView<S> p : params()) {
      if (off + static_cast<size_t>(p.count) > flat.size()) {
        throw ValidationError("parameter vector too short for this network");
      }
      std::memcpy(p.value, flat.data() + off, sizeof(S) * p.count);
      off += static_cast<size_t>(p.count);
    }
    if (off != flat.size()) {
      throw ValidationError("parameter vector size mismatch: expected " +
                            std::to_string(off) + ", got " +
                            std::to_string(flat.size()));
    }
  }

  /// Argmax class per column, without retaining activations.
  std::vector<int> predict(const Mat<S>& x) {
    const Mat<S>& logits = forward(x);
    std::vector<int> out(static_cast<size_t>(x.cols()));
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
      Eigen::Index best;
      logits.col(i).maxCoeff(&best);
      out[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    return out;
  }

  /// Pointer to the conv layer counting from the back (0 = last conv).
  Conv<S>* conv_from_back(int n = 0) {
    int idx = conv_index_from_back(n);
    return idx < 0 ? nullptr : std::get_if<Conv<S>>(&layers_[idx]);
  }

  int conv_index_from_back(int n = 0) const {
    int seen = 0;
    for (size_t i = layers_.size(); i-- > 0;) {
      if (std::holds_alternative<Conv<S>>(layers_[i])) {
        if (seen == n) return static_cast<int>(i);
        ++seen;
      }
    }
    return -1;
  }

  /// Output activation of layer i from the most recent forward().
  const Mat<S>& activation(size_t i) const { return acts_.at(i + 1); }

 private:
  std::vector<LayerVar<S>> layers_;
  std::vector<Mat<S>> acts_;
  int input_dim_ = 0;
  int num_classes_ = 0;
};

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

template <typename S>
struct CeResult {
  double loss_sum = 0.0;  // sum over columns of w_i * CE_i
  Mat<S> dlogits;         // gradient of that sum w.r.t. the logits
};

/// Per-column softmax cross-entropy against integer labels, optionally
/// weighted per column. Returns the weighted sum and its logits gradient.
template <typename S>
CeResult<S> softmax_cross_entropy(const Mat<S>& logits,
                                  const std::vector<int>& labels,
                                  const std::vector<S>* weights = nullptr) {
  CeResult<S> r;
  const Eigen::Index cols = logits.cols();
  if (static_cast<size_t>(cols) != labels.size()) {
    throw ValidationError("label count does not match batch size");
  }
  r.dlogits.resize(logits.rows(), cols);
  for (Eigen::Index i = 0; i < cols; ++i) {
    const S w = weights ? (*weights)[static_cast<size_t>(i)] : S(1);
    const auto col = logits.col(i);
    const S mx = col.maxCoeff();
    Vec<S> e = (col.array() - mx).exp();
    const S z = e.sum();
    const S logp = col(labels[static_cast<size_t>(i)]) - mx - std::log(z);
    r.loss_sum += -double(w) * double(logp);
    r.dlogits.col(i) = (e / z) * w;
    r.dlogits(labels[static_cast<size_t>(i)], i) -= w;
  }
  return r;
}

/// Pack a contiguous range of flattened images into a batch matrix.
template <typename S, typename It>
Mat<S> to_batch(It begin, It end) {
  const Eigen::Index n = static_cast<Eigen::Index>(std::distance(begin, end));
  if (n == 0) return Mat<S>();
  const Image& first = *begin;
  Mat<S> out(static_cast<Eigen::Index>(first.size()), n);
  Eigen::Index col = 0;
  for (It it = begin; it != end; ++it, ++col) {
    const Image& img = *it;
    for (size_t p = 0; p < img.size(); ++p)
      out(static_cast<Eigen::Index>(p), col) = static_cast<S>(img.pixels[p]);
  }
  return out;
}

}  // namespace hcb::nn

#endif  // HCB_NET_HPP
