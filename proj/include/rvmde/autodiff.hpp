#ifndef RVMDE_AUTODIFF_HPP
#define RVMDE_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rvmde/parallel.hpp"
#include "rvmde/tensor.hpp"

namespace rvmde::nn {

/// Reverse-mode tape. Ops append nodes in execution order; backward walks
/// the tape in reverse. Per-element reduction order inside every op is
/// fixed, so forward and backward are bit-reproducible for any thread
/// count (parallelism only partitions disjoint output slices).
template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int idx = -1;

  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first touch
  bool needs_grad = false;
  std::string name;
  std::vector<int> parents;
  std::function<void(Tape<T>&, int)> backward;
};

template <typename T>
class Tape {
 public:
  Var<T> leaf(Tensor<T> value, bool needs_grad, std::string name = "leaf") {
    return wrap(add_node(std::move(value), {}, nullptr, std::move(name), needs_grad));
  }

  int add_node(Tensor<T> value, std::vector<int> parents, std::function<void(Tape&, int)> backward,
               std::string name, bool needs_grad) {
    Node<T> n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    n.name = std::move(name);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    const int idx = static_cast<int>(nodes_.size()) - 1;
    if (check_finite_ && !nodes_.back().value.all_finite()) {
      throw std::runtime_error("non-finite values after op '" + nodes_.back().name + "'");
    }
    return idx;
  }

  Var<T> wrap(int idx) { return Var<T>{this, idx}; }

  Node<T>& node(int idx) { return nodes_.at(static_cast<size_t>(idx)); }
  const Node<T>& node(int idx) const { return nodes_.at(static_cast<size_t>(idx)); }
  const Tensor<T>& value(int idx) const { return node(idx).value; }

  /// Gradient buffer of a node, allocated (zero) on first use.
  Tensor<T>& grad(int idx) {
    Node<T>& n = node(idx);
    if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool grad_touched(int idx) const { return !node(idx).grad.empty(); }

  void backward(const Var<T>& loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: var from another tape");
    if (node(loss.idx).value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad(loss.idx).fill(T(1));
    for (int idx = loss.idx; idx >= 0; --idx) {
      Node<T>& n = node(idx);
      if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, idx);
    }
  }

  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }
  size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node<T>> nodes_;
  bool check_finite_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(idx);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape->node(idx).grad;
}

namespace detail {

template <typename T>
bool parents_need_grad(Tape<T>& tape, const std::vector<int>& parents) {
  for (int p : parents) {
    if (tape.node(p).needs_grad) return true;
  }
  return false;
}

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Output-column range [begin, end) for which the input column
/// ow*stride - pad + k lies inside [0, in_w).
inline std::pair<int, int> conv_col_span(int out_w, int in_w, int stride, int pad, int k) {
  int begin = 0;
  const int off = k - pad;
  if (off < 0) begin = (-off + stride - 1) / stride;
  int end = out_w;
  const int max_num = in_w - 1 - off;
  if (max_num < 0) return {0, 0};
  end = std::min(end, max_num / stride + 1);
  return {begin, std::max(begin, end)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad, const std::string& name = "conv2d") {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = b.value();
  if (xv.rank() != 4 || wv.rank() != 4) throw std::invalid_argument(name + ": expected 4-d input and weight");
  const int batch = xv.dim(0), cin = xv.dim(1), in_h = xv.dim(2), in_w = xv.dim(3);
  const int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != cin) {
    throw std::invalid_argument(name + ": weight expects " + std::to_string(wv.dim(1)) + " input channels, got " +
                                std::to_string(cin));
  }
  if (bv.numel() != cout) throw std::invalid_argument(name + ": bias size mismatch");
  const int out_h = detail::conv_out_dim(in_h, kh, stride, pad);
  const int out_w = detail::conv_out_dim(in_w, kw, stride, pad);
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument(name + ": input too small for kernel");

  Tensor<T> out({batch, cout, out_h, out_w});
  const T* xp = xv.data();
  const T* wp = wv.data();
  const T* bp = bv.data();
  T* op = out.data();
  const int64_t in_plane = static_cast<int64_t>(in_h) * in_w;
  const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;

  parallel_for(static_cast<int64_t>(batch) * cout, [&](int64_t lo, int64_t hi) {
    for (int64_t j = lo; j < hi; ++j) {
      const int bi = static_cast<int>(j / cout);
      const int oc = static_cast<int>(j % cout);
      T* out_p = op + (static_cast<int64_t>(bi) * cout + oc) * out_plane;
      for (int64_t i = 0; i < out_plane; ++i) out_p[i] = bp[oc];
      for (int ic = 0; ic < cin; ++ic) {
        const T* in_p = xp + (static_cast<int64_t>(bi) * cin + ic) * in_plane;
        const T* w_oc = wp + (static_cast<int64_t>(oc) * cin + ic) * kh * kw;
        for (int ki = 0; ki < kh; ++ki) {
          for (int kj = 0; kj < kw; ++kj) {
            const T wval = w_oc[ki * kw + kj];
            if (wval == T(0)) continue;
            const auto [ow0, ow1] = detail::conv_col_span(out_w, in_w, stride, pad, kj);
            for (int oh = 0; oh < out_h; ++oh) {
              const int ih = oh * stride - pad + ki;
              if (ih < 0 || ih >= in_h) continue;
              const T* in_row = in_p + static_cast<int64_t>(ih) * in_w - pad + kj;
              T* out_row = out_p + static_cast<int64_t>(oh) * out_w;
              if (stride == 1) {
                for (int ow = ow0; ow < ow1; ++ow) out_row[ow] += wval * in_row[ow];
              } else {
                for (int ow = ow0; ow < ow1; ++ow) out_row[ow] += wval * in_row[static_cast<int64_t>(ow) * stride];
              }
            }
          }
        }
      }
    }
  });

  const std::vector<int> parents = {x.idx, w.idx, b.idx};
  const bool needs = detail::parents_need_grad(tape, parents);
  auto bwd = [xi = x.idx, wi = w.idx, bi_ = b.idx, stride, pad](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.node(self).grad;
    const Tensor<T>& xv2 = t.value(xi);
    const Tensor<T>& wv2 = t.value(wi);
    const int batch = xv2.dim(0), cin = xv2.dim(1), in_h = xv2.dim(2), in_w = xv2.dim(3);
    const int cout = wv2.dim(0), kh = wv2.dim(2), kw = wv2.dim(3);
    const int out_h = gy.dim(2), out_w = gy.dim(3);
    const int64_t in_plane = static_cast<int64_t>(in_h) * in_w;
    const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;
    const T* gyp = gy.data();
    const T* xp2 = xv2.data();
    const T* wp2 = wv2.data();

    if (t.node(xi).needs_grad) {
      T* gx = t.grad(xi).data();
      parallel_for(static_cast<int64_t>(batch) * cin, [&](int64_t lo, int64_t hi) {
        for (int64_t j = lo; j < hi; ++j) {
          const int bb = static_cast<int>(j / cin);
          const int ic = static_cast<int>(j % cin);
          T* gx_p = gx + (static_cast<int64_t>(bb) * cin + ic) * in_plane;
          for (int oc = 0; oc < cout; ++oc) {
            const T* gy_p = gyp + (static_cast<int64_t>(bb) * cout + oc) * out_plane;
            const T* w_oc = wp2 + (static_cast<int64_t>(oc) * cin + ic) * kh * kw;
            for (int ki = 0; ki < kh; ++ki) {
              for (int kj = 0; kj < kw; ++kj) {
                const T wval = w_oc[ki * kw + kj];
                if (wval == T(0)) continue;
                const auto [ow0, ow1] = detail::conv_col_span(out_w, in_w, stride, pad, kj);
                for (int oh = 0; oh < out_h; ++oh) {
                  const int ih = oh * stride - pad + ki;
                  if (ih < 0 || ih >= in_h) continue;
                  T* gx_row = gx_p + static_cast<int64_t>(ih) * in_w - pad + kj;
                  const T* gy_row = gy_p + static_cast<int64_t>(oh) * out_w;
                  for (int ow = ow0; ow < ow1; ++ow) gx_row[static_cast<int64_t>(ow) * stride] += wval * gy_row[ow];
                }
              }
            }
          }
        }
      });
    }
    if (t.node(wi).needs_grad) {
      T* gw = t.grad(wi).data();
      parallel_for(cout, [&](int64_t lo, int64_t hi) {
        for (int64_t oc = lo; oc < hi; ++oc) {
          for (int bb = 0; bb < batch; ++bb) {
            const T* gy_p = gyp + (static_cast<int64_t>(bb) * cout + oc) * out_plane;
            for (int ic = 0; ic < cin; ++ic) {
              const T* in_p = xp2 + (static_cast<int64_t>(bb) * cin + ic) * in_plane;
              T* gw_p = gw + (oc * cin + ic) * kh * kw;
              for (int ki = 0; ki < kh; ++ki) {
                for (int kj = 0; kj < kw; ++kj) {
                  const auto [ow0, ow1] = detail::conv_col_span(out_w, in_w, stride, pad, kj);
                  T acc = 0;
                  for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= in_h) continue;
                    const T* in_row = in_p + static_cast<int64_t>(ih) * in_w - pad + kj;
                    const T* gy_row = gy_p + static_cast<int64_t>(oh) * out_w;
                    if (stride == 1) {
                      for (int ow = ow0; ow < ow1; ++ow) acc += in_row[ow] * gy_row[ow];
                    } else {
                      for (int ow = ow0; ow < ow1; ++ow) acc += in_row[static_cast<int64_t>(ow) * stride] * gy_row[ow];
                    }
                  }
                  gw_p[ki * kw + kj] += acc;
                }
              }
            }
          }
        }
      });
    }
    if (t.node(bi_).needs_grad) {
      T* gb = t.grad(bi_).data();
      for (int oc = 0; oc < cout; ++oc) {
        T acc = 0;
        for (int bb = 0; bb < batch; ++bb) {
          const T* gy_p = gyp + (static_cast<int64_t>(bb) * cout + oc) * out_plane;
          for (int64_t i = 0; i < out_plane; ++i) acc += gy_p[i];
        }
        gb[oc] += acc;
      }
    }
  };
  return tape.wrap(tape.add_node(std::move(out), parents, needs ? std::function(bwd) : nullptr, name, needs));
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, double eps = 1e-5,
                  const std::string& name = "group_norm") {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument(name + ": expected 4-d input");
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (groups <= 0 || ch % groups != 0) {
    throw std::invalid_argument(name + ": channels " + std::to_string(ch) + " not divisible by groups " +
                                std::to_string(groups));
  }
  if (gamma.value().numel() != ch || beta.value().numel() != ch) {
    throw std::invalid_argument(name + ": affine parameter size mismatch");
  }
  const int cpg = ch / groups;
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t group_n = cpg * plane;

  Tensor<T> out(xv.shape());
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(batch) * groups * 2);
  const T* xp = xv.data();
  const T* gp = gamma.value().data();
  const T* bp = beta.value().data();
  T* op = out.data();

  parallel_for(static_cast<int64_t>(batch) * groups, [&](int64_t lo, int64_t hi) {
    for (int64_t j = lo; j < hi; ++j) {
      const int bb = static_cast<int>(j / groups);
      const int g = static_cast<int>(j % groups);
      const T* base = xp + (static_cast<int64_t>(bb) * ch + static_cast<int64_t>(g) * cpg) * plane;
      double mean = 0;
      for (int64_t i = 0; i < group_n; ++i) mean += static_cast<double>(base[i]);
      mean /= static_cast<double>(group_n);
      double var = 0;
      for (int64_t i = 0; i < group_n; ++i) {
        const double d = static_cast<double>(base[i]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_n);
      const double inv_std = 1.0 / std::sqrt(var + eps);
      (*stats)[static_cast<size_t>(j) * 2] = mean;
      (*stats)[static_cast<size_t>(j) * 2 + 1] = inv_std;
      T* out_base = op + (static_cast<int64_t>(bb) * ch + static_cast<int64_t>(g) * cpg) * plane;
      for (int c = 0; c < cpg; ++c) {
        const int cc = g * cpg + c;
        const double scale = static_cast<double>(gp[cc]) * inv_std;
        const double shift = static_cast<double>(bp[cc]) - scale * mean;
        const T* in_c = base + static_cast<int64_t>(c) * plane;
        T* out_c = out_base + static_cast<int64_t>(c) * plane;
        for (int64_t i = 0; i < plane; ++i) out_c[i] = static_cast<T>(scale * static_cast<double>(in_c[i]) + shift);
      }
    }
  });

  const std::vector<int> parents = {x.idx, gamma.idx, beta.idx};
  const bool needs = detail::parents_need_grad(tape, parents);
  auto bwd = [xi = x.idx, gi = gamma.idx, bi = beta.idx, groups, cpg, stats](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.node(self).grad;
    const Tensor<T>& xv2 = t.value(xi);
    const T* gp2 = t.value(gi).data();
    const int batch = xv2.dim(0), ch = xv2.dim(1), h2 = xv2.dim(2), w2 = xv2.dim(3);
    const int64_t plane = static_cast<int64_t>(h2) * w2;
    const int64_t group_n = static_cast<int64_t>(cpg) * plane;
    const T* xp2 = xv2.data();
    const T* gyp = gy.data();

    if (t.node(xi).needs_grad) {
      T* gx = t.grad(xi).data();
      parallel_for(static_cast<int64_t>(batch) * groups, [&](int64_t lo, int64_t hi) {
        for (int64_t j = lo; j < hi; ++j) {
          const int bb = static_cast<int>(j / groups);
          const int g = static_cast<int>(j % groups);
          const double mean = (*stats)[static_cast<size_t>(j) * 2];
          const double inv_std = (*stats)[static_cast<size_t>(j) * 2 + 1];
          const int64_t base_off = (static_cast<int64_t>(bb) * ch + static_cast<int64_t>(g) * cpg) * plane;
          const T* xb = xp2 + base_off;
          const T* gyb = gyp + base_off;
          double sum_gh = 0, sum_gh_xhat = 0;
          for (int c = 0; c < cpg; ++c) {
            const double gam = static_cast<double>(gp2[g * cpg + c]);
            const T* x_c = xb + static_cast<int64_t>(c) * plane;
            const T* gy_c = gyb + static_cast<int64_t>(c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              const double gh = static_cast<double>(gy_c[i]) * gam;
              sum_gh += gh;
              sum_gh_xhat += gh * (static_cast<double>(x_c[i]) - mean) * inv_std;
            }
          }
          const double mean_gh = sum_gh / static_cast<double>(group_n);
          const double mean_gh_xhat = sum_gh_xhat / static_cast<double>(group_n);
          T* gx_b = gx + base_off;
          for (int c = 0; c < cpg; ++c) {
            const double gam = static_cast<double>(gp2[g * cpg + c]);
            const T* x_c = xb + static_cast<int64_t>(c) * plane;
            const T* gy_c = gyb + static_cast<int64_t>(c) * plane;
            T* gx_c = gx_b + static_cast<int64_t>(c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              const double xhat = (static_cast<double>(x_c[i]) - mean) * inv_std;
              const double gh = static_cast<double>(gy_c[i]) * gam;
              gx_c[i] += static_cast<T>(inv_std * (gh - mean_gh - xhat * mean_gh_xhat));
            }
          }
        }
      });
    }
    if (t.node(gi).needs_grad || t.node(bi).needs_grad) {
      T* gg = t.node(gi).needs_grad ? t.grad(gi).data() : nullptr;
      T* gb = t.node(bi).needs_grad ? t.grad(bi).data() : nullptr;
      parallel_for(ch, [&](int64_t lo, int64_t hi) {
        for (int64_t cc = lo; cc < hi; ++cc) {
          const int g = static_cast<int>(cc) / cpg;
          double dgamma = 0, dbeta = 0;
          for (int bb = 0; bb < batch; ++bb) {
            const int64_t sidx = (static_cast<int64_t>(bb) * groups + g) * 2;
            const double mean = (*stats)[static_cast<size_t>(sidx)];
            const double inv_std = (*stats)[static_cast<size_t>(sidx) + 1];
            const T* x_c = xp2 + (static_cast<int64_t>(bb) * ch + cc) * plane;
            const T* gy_c = gyp + (static_cast<int64_t>(bb) * ch + cc) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              const double gyv = static_cast<double>(gy_c[i]);
              dgamma += gyv * (static_cast<double>(x_c[i]) - mean) * inv_std;
              dbeta += gyv;
            }
          }
          if (gg) gg[cc] += static_cast<T>(dgamma);
          if (gb) gb[cc] += static_cast<T>(dbeta);
        }
      });
    }
  };
  return tape.wrap(tape.add_node(std::move(out), parents, needs ? std::function(bwd) : nullptr, name, needs));
}

/// Batch statistics over (B,H,W) per channel. In training mode batch stats
/// normalize and running stats are updated in place; in eval mode running
/// stats normalize (backward is then a per-channel affine).
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>* running_mean, Tensor<T>* running_var,
                  bool training, double momentum = 0.1, double eps = 1e-5,
                  const std::string& name = "batch_norm") {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument(name + ": expected 4-d input");
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (gamma.value().numel() != ch || beta.value().numel() != ch || running_mean->numel() != ch ||
      running_var->numel() != ch) {
    throw std::invalid_argument(name + ": parameter size mismatch");
  }
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t reduce_n = static_cast<int64_t>(batch) * plane;

  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(ch) * 2);
  const T* xp = xv.data();
  for (int c = 0; c < ch; ++c) {
    double mean, var;
    if (training) {
      mean = 0;
      for (int bb = 0; bb < batch; ++bb) {
        const T* x_c = xp + (static_cast<int64_t>(bb) * ch + c) * plane;
        for (int64_t i = 0; i < plane; ++i) mean += static_cast<double>(x_c[i]);
      }
      mean /= static_cast<double>(reduce_n);
      var = 0;
      for (int bb = 0; bb < batch; ++bb) {
        const T* x_c = xp + (static_cast<int64_t>(bb) * ch + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(x_c[i]) - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(reduce_n);
      (*running_mean)[c] = static_cast<T>((1.0 - momentum) * static_cast<double>((*running_mean)[c]) +
                                          momentum * mean);
      (*running_var)[c] = static_cast<T>((1.0 - momentum) * static_cast<double>((*running_var)[c]) +
                                         momentum * var);
    } else {
      mean = static_cast<double>((*running_mean)[c]);
      var = static_cast<double>((*running_var)[c]);
    }
    (*stats)[static_cast<size_t>(c) * 2] = mean;
    (*stats)[static_cast<size_t>(c) * 2 + 1] = 1.0 / std::sqrt(var + eps);
  }

  Tensor<T> out(xv.shape());
  const T* gp = gamma.value().data();
  const T* bp = beta.value().data();
  T* op = out.data();
  parallel_for(static_cast<int64_t>(batch) * ch, [&](int64_t lo, int64_t hi) {
    for (int64_t j = lo; j < hi; ++j) {
      const int c = static_cast<int>(j % ch);
      const double mean = (*stats)[static_cast<size_t>(c) * 2];
      const double inv_std = (*stats)[static_cast<size_t>(c) * 2 + 1];
      const double scale = static_cast<double>(gp[c]) * inv_std;
      const double shift = static_cast<double>(bp[c]) - scale * mean;
      const T* in_p = xp + j * plane;
      T* out_p = op + j * plane;
      for (int64_t i = 0; i < plane; ++i) out_p[i] = static_cast<T>(scale * static_cast<double>(in_p[i]) + shift);
    }
  });

  const std::vector<int> parents = {x.idx, gamma.idx, beta.idx};
  const bool needs = detail::parents_need_grad(tape, parents);
  auto bwd = [xi = x.idx, gi = gamma.idx, bi = beta.idx, training, stats](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.node(self).grad;
    const Tensor<T>& xv2 = t.value(xi);
    const T* gp2 = t.value(gi).data();
    const int batch = xv2.dim(0), ch = xv2.dim(1), h2 = xv2.dim(2), w2 = xv2.dim(3);
    const int64_t plane = static_cast<int64_t>(h2) * w2;
    const int64_t reduce_n = static_cast<int64_t>(batch) * plane;
    const T* xp2 = xv2.data();
    const T* gyp = gy.data();
    const bool need_x = t.node(xi).needs_grad;
    const bool need_g = t.node(gi).needs_grad;
    const bool need_b = t.node(bi).needs_grad;
    T* gx = need_x ? t.grad(xi).data() : nullptr;
    T* gg = need_g ? t.grad(gi).data() : nullptr;
    T* gb = need_b ? t.grad(bi).data() : nullptr;
    parallel_for(ch, [&](int64_t lo, int64_t hi) {
      for (int64_t c = lo; c < hi; ++c) {
        const double mean = (*stats)[static_cast<size_t>(c) * 2];
        const double inv_std = (*stats)[static_cast<size_t>(c) * 2 + 1];
        const double gam = static_cast<double>(gp2[c]);
        double sum_gy = 0, sum_gy_xhat = 0;
        for (int bb = 0; bb < batch; ++bb) {
          const T* x_c = xp2 + (static_cast<int64_t>(bb) * ch + c) * plane;
          const T* gy_c = gyp + (static_cast<int64_t>(bb) * ch + c) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            const double gyv = static_cast<double>(gy_c[i]);
            sum_gy += gyv;
            sum_gy_xhat += gyv * (static_cast<double>(x_c[i]) - mean) * inv_std;
          }
        }
        if (gg) gg[c] += static_cast<T>(sum_gy_xhat);
        if (gb) gb[c] += static_cast<T>(sum_gy);
        if (gx) {
          const double mean_gy = sum_gy / static_cast<double>(reduce_n);
          const double mean_gy_xhat = sum_gy_xhat / static_cast<double>(reduce_n);
          for (int bb = 0; bb < batch; ++bb) {
            const T* x_c = xp2 + (static_cast<int64_t>(bb) * ch + c) * plane;
            const T* gy_c = gyp + (static_cast<int64_t>(bb) * ch + c) * plane;
            T* gx_c = gx + (static_cast<int64_t>(bb) * ch + c) * plane;
            if (training) {
              for (int64_t i = 0; i < plane; ++i) {
                const double xhat = (static_cast<double>(x_c[i]) - mean) * inv_std;
                gx_c[i] += static_cast<T>(gam * inv_std *
                                          (static_cast<double>(gy_c[i]) - mean_gy - xhat * mean_gy_xhat));
              }
            } else {
              for (int64_t i = 0; i < plane; ++i) {
                gx_c[i] += static_cast<T>(gam * inv_std * static_cast<double>(gy_c[i]));
              }
            }
          }
        }
      }
    });
  };
  return tape.wrap(tape.add_node(std::move(out), parents, needs ? std::function(bwd) : nullptr, name, needs));
}

// ---------------------------------------------------------------------------
// Pointwise and structural ops

template <typename T>
Var<T> relu(Var<T> x, const std::string& name = "relu") {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  const T* xp = xv.data();
  T* op = out.data();
  for (int64_t i = 0; i < xv.numel(); ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
  const bool needs = tape.node(x.idx).needs_grad;
  auto bwd = [xi = x.idx](Tape<T>& t, int self) {
    if (!t.node(xi).needs_grad) return;
    const Tensor<T>& gy = t.node(self).grad;
    const Tensor<T>& xv2 = t.value(xi);
    Tensor<T>& gx = t.grad(xi);
    for (int64_t i = 0; i < gy.numel(); ++i) {
      if (xv2[i] > T(0)) gx[i] += gy[i];
    }
  };
  return tape.wrap(tape.add_node(std::move(out), {x.idx}, needs ? std::function(bwd) : nullptr, name, needs));
}

template <typename T>
Var<T> max_pool_3x3_s2(Var<T> x, const std::string& name = "max_pool") {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const int batch = xv.dim(0), ch = xv.dim(1), in_h = xv.dim(2), in_w = xv.dim(3);
  const int out_h = detail::conv_out_dim(in_h, 3, 2, 1);
  const int out_w = detail::conv_out_dim(in_w, 3, 2, 1);
  Tensor<T> out({batch, ch, out_h, out_w});
  auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(out.numel()));
  const int64_t in_plane = static_cast<int64_t>(in_h) * in_w;
  const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;
  const T* xp = xv.data();
  T* op = out.data();
  parallel_for(static_cast<int64_t>(batch) * ch, [&](int64_t lo, int64_t hi) {
    for (int64_t j = lo; j < hi; ++j) {
      const T* in_p = xp + j * in_plane;
      T* out_p = op + j * out_plane;
      int32_t* am = argmax->data() + j * out_plane;
      for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          int32_t best_idx = -1;
          for (int ki = 0; ki < 3; ++ki) {
            const int ih = oh * 2 - 1 + ki;
            if (ih < 0 || ih >= in_h) continue;
            for (int kj = 0; kj < 3; ++kj) {
              const int iw = ow * 2 - 1 + kj;
              if (iw < 0 || iw >= in_w) continue;
              const T v = in_p[static_cast<int64_t>(ih) * in_w + iw];
              if (v > best) {
                best = v;
                best_idx = static_cast<int32_t>(ih * in_w + iw);
              }
            }
          }
          out_p[static_cast<int64_t>(oh) * out_w + ow] = best;
          am[static_cast<int64_t>(oh) * out_w + ow] = best_idx;
        }
      }
    }
  });
  const bool needs = tape.node(x.idx).needs_grad;
  auto bwd = [xi = x.idx, argmax, in_plane, out_plane](Tape<T>& t, int self) {
    if (!t.node(xi).needs_grad) return;
    const Tensor<T>& gy = t.node(self).grad;
    Tensor<T>& gx = t.grad(xi);
    const int64_t planes = gy.numel() / out_plane;
    const T* gyp = gy.data();
    T* gxp = gx.data();
    parallel_for(planes, [&](int64_t lo, int64_t hi) {
      for (int64_t j = lo; j < hi; ++j) {
        const T* gy_p = gyp + j * out_plane;
        T* gx_p = gxp + j * in_plane;
        const int32_t* am = argmax->data() + j * out_plane;
        for (int64_t i = 0; i < out_plane; ++i) {
          if (am[i] >= 0) gx_p[am[i]] += gy_p[i];
        }
      }
    });
  };
  return tape.wrap(tape.add_node(std::move(out), {x.idx}, needs ? std::function(bwd) : nullptr, name, needs));
}

namespace detail {

/// Half-pixel-center source coordinates for integer upscaling:
/// src = (dst + 0.5)/factor - 0.5, clamped to the valid range.
struct LerpTable {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1 - w1
};

inline LerpTable make_lerp_table(int out_n, int in_n, double factor) {
  LerpTable t;
  t.i0.resize(static_cast<size_t>(out_n));
  t.i1.resize(static_cast<size_t>(out_n));
  t.w1.resize(static_cast<size_t>(out_n));
  for (int o = 0; o < out_n; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    if (src > in_n - 1) src = in_n - 1;
    const int i0 = static_cast<int>(std::floor(src));
    t.i0[static_cast<size_t>(o)] = i0;
    t.i1[static_cast<size_t>(o)] = std::min(i0 + 1, in_n - 1);
    t.w1[static_cast<size_t>(o)] = src - i0;
  }
  return t;
}

}  // namespace detail

template <typename T>
Var<T> upsample_bilinear(Var<T> x, int factor, const std::string& name = "upsample") {
  if (factor < 1) throw std::invalid_argument(name + ": factor must be >= 1");
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const int batch = xv.dim(0), ch = xv.dim(1), in_h = xv.dim(2), in_w = xv.dim(3);
  const int out_h = in_h * factor, out_w = in_w * factor;
  auto ty = std::make_shared<detail::LerpTable>(detail::make_lerp_table(out_h, in_h, factor));
  auto tx = std::make_shared<detail::LerpTable>(detail::make_lerp_table(out_w, in_w, factor));
  Tensor<T> out({batch, ch, out_h, out_w});
  const int64_t in_plane = static_cast<int64_t>(in_h) * in_w;
  const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;
  const T* xp = xv.data();
  T* op = out.data();
  parallel_for(static_cast<int64_t>(batch) * ch, [&](int64_t lo, int64_t hi) {
    for (int64_t j = lo; j < hi; ++j) {
      const T* in_p = xp + j * in_plane;
      T* out_p = op + j * out_plane;
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = ty->i0[static_cast<size_t>(oy)], y1 = ty->i1[static_cast<size_t>(oy)];
        const double wy = ty->w1[static_cast<size_t>(oy)];
        const T* row0 = in_p + static_cast<int64_t>(y0) * in_w;
        const T* row1 = in_p + static_cast<int64_t>(y1) * in_w;
        T* orow = out_p + static_cast<int64_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = tx->i0[static_cast<size_t>(ox)], x1 = tx->i1[static_cast<size_t>(ox)];
          const double wx = tx->w1[static_cast<size_t>(ox)];
          const double top = (1.0 - wx) * static_cast<double>(row0[x0]) + wx * static_cast<double>(row0[x1]);
          const double bot = (1.0 - wx) * static_cast<double>(row1[x0]) + wx * static_cast<double>(row1[x1]);
          orow[ox] = static_cast<T>((1.0 - wy) * top + wy * bot);
        }
      }
    }
  });
  const bool needs = tape.node(x.idx).needs_grad;
  auto bwd = [xi = x.idx, ty, tx, in_plane, out_plane, in_w, out_h, out_w](Tape<T>& t, int self) {
    if (!t.node(xi).needs_grad) return;
    const Tensor<T>& gy = t.node(self).grad;
    Tensor<T>& gx = t.grad(xi);
    const int64_t planes = gy.numel() / out_plane;
    const T* gyp = gy.data();
    T* gxp = gx.data();
    parallel_for(planes, [&](int64_t lo, int64_t hi) {
      for (int64_t j = lo; j < hi; ++j) {
        const T* gy_p = gyp + j * out_plane;
        T* gx_p = gxp + j * in_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int y0 = ty->i0[static_cast<size_t>(oy)], y1 = ty->i1[static_cast<size_t>(oy)];
          const double wy = ty->w1[static_cast<size_t>(oy)];
          const T* grow = gy_p + static_cast<int64_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int x0 = tx->i0[static_cast<size_t>(ox)], x1 = tx->i1[static_cast<size_t>(ox)];
            const double wx = tx->w1[static_cast<size_t>(ox)];
            const double g = static_cast<double>(grow[ox]);
            gx_p[static_cast<int64_t>(y0) * in_w + x0] += static_cast<T>((1 - wy) * (1 - wx) * g);
            gx_p[static_cast<int64_t>(y0) * in_w + x1] += static_cast<T>((1 - wy) * wx * g);
            gx_p[static_cast<int64_t>(y1) * in_w + x0] += static_cast<T>(wy * (1 - wx) * g);
            gx_p[static_cast<int64_t>(y1) * in_w + x1] += static_cast<T>(wy * wx * g);
          }
        }
      }
    });
  };
  return tape.wrap(tape.add_node(std::move(out), {x.idx}, needs ? std::function(bwd) : nullptr, name, needs));
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b, const std::string& name = "add") {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (!av.same_shape(bv)) {
    throw std::invalid_argument(name + ": shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
  const std::vector<int> parents = {a.idx, b.idx};
  const bool needs = detail::parents_need_grad(tape, parents);
  auto bwd = [ai = a.idx, bi = b.idx](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.node(self).grad;
    for (int pi : {ai, bi}) {
      if (!t.node(pi).needs_grad) continue;
      Tensor<T>& g = t.grad(pi);
      for (int64_t i = 0; i < gy.numel(); ++i) g[i] += gy[i];
    }
  };
  return tape.wrap(tape.add_node(std::move(out), parents, needs ? std::function(bwd) : nullptr, name, needs));
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs, const std::string& name = "concat") {
  if (xs.empty()) throw std::invalid_argument(name + ": empty input list");
  Tape<T>& tape = *xs.front().tape;
  const int batch = xs.front().value().dim(0);
  const int h = xs.front().value().dim(2), w = xs.front().value().dim(3);
  int ch = 0;
  std::vector<int> parents;
  for (const Var<T>& v : xs) {
    const Tensor<T>& t = v.value();
    if (t.rank() != 4 || t.dim(0) != batch || t.dim(2) != h || t.dim(3) != w) {
      throw std::invalid_argument(name + ": incompatible input shapes");
    }
    ch += t.dim(1);
    parents.push_back(v.idx);
  }
  Tensor<T> out({batch, ch, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  int c_off = 0;
  for (const Var<T>& v : xs) {
    const Tensor<T>& t = v.value();
    const int tc = t.dim(1);
    for (int bb = 0; bb < batch; ++bb) {
      const T* src = t.data() + static_cast<int64_t>(bb) * tc * plane;
      T* dst = out.data() + (static_cast<int64_t>(bb) * ch + c_off) * plane;
      std::copy(src, src + static_cast<int64_t>(tc) * plane, dst);
    }
    c_off += tc;
  }
  const bool needs = detail::parents_need_grad(tape, parents);
  auto bwd = [parents, plane, ch](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.node(self).grad;
    const int batch = gy.dim(0);
    int c_off = 0;
    for (int pi : parents) {
      const int tc = t.value(pi).dim(1);
      if (t.node(pi).needs_grad) {
        Tensor<T>& g = t.grad(pi);
        for (int bb = 0; bb < batch; ++bb) {
          const T* src = gy.data() + (static_cast<int64_t>(bb) * ch + c_off) * plane;
          T* dst = g.data() + static_cast<int64_t>(bb) * tc * plane;
          for (int64_t i = 0; i < static_cast<int64_t>(tc) * plane; ++i) dst[i] += src[i];
        }
      }
      c_off += tc;
    }
  };
  return tape.wrap(tape.add_node(std::move(out), parents, needs ? std::function(bwd) : nullptr, name, needs));
}

// ---------------------------------------------------------------------------
// Ordinal head

namespace detail {

template <typename T>
T stable_sigmoid(T d) {
  if (d >= T(0)) {
    return T(1) / (T(1) + std::exp(-d));
  }
  const T e = std::exp(d);
  return e / (T(1) + e);
}

}  // namespace detail

/// Softmax over channel pairs (2k, 2k+1): P_k = sigma(logit_{2k+1} - logit_{2k}).
template <typename T>
Var<T> pair_softmax(Var<T> logits, const std::string& name = "pair_softmax") {
  Tape<T>& tape = *logits.tape;
  const Tensor<T>& lv = logits.value();
  if (lv.rank() != 4 || lv.dim(1) % 2 != 0) {
    throw std::invalid_argument(name + ": expected 4-d logits with an even channel count");
  }
  const int batch = lv.dim(0), k2 = lv.dim(1), h = lv.dim(2), w = lv.dim(3);
  const int k = k2 / 2;
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor<T> out({batch, k, h, w});
  const T* lp = lv.data();
  T* op = out.data();
  parallel_for(static_cast<int64_t>(batch) * k, [&](int64_t lo, int64_t hi) {
    for (int64_t j = lo; j < hi; ++j) {
      const int bb = static_cast<int>(j / k);
      const int kk = static_cast<int>(j % k);
      const T* a = lp + (static_cast<int64_t>(bb) * k2 + 2 * kk) * plane;
      const T* b = a + plane;
      T* o = op + j * plane;
      for (int64_t i = 0; i < plane; ++i) o[i] = detail::stable_sigmoid(b[i] - a[i]);
    }
  });
  const bool needs = tape.node(logits.idx).needs_grad;
  auto bwd = [li = logits.idx, k, plane](Tape<T>& t, int self) {
    if (!t.node(li).needs_grad) return;
    const Tensor<T>& gy = t.node(self).grad;
    const Tensor<T>& pv = t.value(self);
    Tensor<T>& gl = t.grad(li);
    const int batch = gy.dim(0);
    const int k2 = 2 * k;
    parallel_for(static_cast<int64_t>(batch) * k, [&](int64_t lo, int64_t hi) {
      for (int64_t j = lo; j < hi; ++j) {
        const int bb = static_cast<int>(j / k);
        const int kk = static_cast<int>(j % k);
        const T* p = pv.data() + j * plane;
        const T* g = gy.data() + j * plane;
        T* ga = gl.data() + (static_cast<int64_t>(bb) * k2 + 2 * kk) * plane;
        T* gb = ga + plane;
        for (int64_t i = 0; i < plane; ++i) {
          const T d = g[i] * p[i] * (T(1) - p[i]);
          gb[i] += d;
          ga[i] -= d;
        }
      }
    });
  };
  return tape.wrap(tape.add_node(std::move(out), {logits.idx}, needs ? std::function(bwd) : nullptr, name, needs));
}

/// Ordinal labels for a batch.
struct LabelBatch {
  Tensor<int32_t> labels;  // B x H x W
  Tensor<uint8_t> mask;    // B x H x W
};

/// Ordinal negative log-likelihood: per valid pixel the sum over bins of
/// -log P_k (k < label) and -log(1 - P_k) (k >= label), with P_k the pair
/// softmax of the logits; mean over each sample's valid pixels, then mean
/// over the batch. Log arguments are clamped at 1e-12 (the clamp also
/// zeroes the gradient where it binds).
template <typename T>
Var<T> ordinal_loss(Var<T> logits, const LabelBatch& labels, const std::string& name = "ordinal_loss") {
  Tape<T>& tape = *logits.tape;
  const Tensor<T>& lv = logits.value();
  if (lv.rank() != 4 || lv.dim(1) % 2 != 0) {
    throw std::invalid_argument(name + ": expected 4-d logits with an even channel count");
  }
  const int batch = lv.dim(0), k2 = lv.dim(1), h = lv.dim(2), w = lv.dim(3);
  const int k = k2 / 2;
  if (labels.labels.rank() != 3 || labels.labels.dim(0) != batch || labels.labels.dim(1) != h ||
      labels.labels.dim(2) != w || !labels.mask.same_shape(labels.labels)) {
    throw std::invalid_argument(name + ": label/mask shape mismatch with logits");
  }
  const int64_t plane = static_cast<int64_t>(h) * w;
  const double max_term = -std::log(1e-12);

  auto valid_counts = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(batch), 0);
  for (int bb = 0; bb < batch; ++bb) {
    int64_t n = 0;
    const uint8_t* m = labels.mask.data() + static_cast<int64_t>(bb) * plane;
    for (int64_t i = 0; i < plane; ++i) n += m[i] ? 1 : 0;
    if (n == 0) throw std::invalid_argument(name + ": empty supervision (batch element " + std::to_string(bb) +
                                            " has no valid pixels)");
    (*valid_counts)[static_cast<size_t>(bb)] = n;
  }

  // Per-sample partial sums accumulated bin-major in a fixed order.
  double total = 0;
  const T* lp = lv.data();
  std::vector<double> per_sample(static_cast<size_t>(batch), 0.0);
  parallel_for(batch, [&](int64_t lo, int64_t hi) {
    for (int64_t bb = lo; bb < hi; ++bb) {
      const uint8_t* m = labels.mask.data() + bb * plane;
      const int32_t* lab = labels.labels.data() + bb * plane;
      double acc = 0;
      for (int kk = 0; kk < k; ++kk) {
        const T* a = lp + (bb * k2 + 2 * kk) * plane;
        const T* b = a + plane;
        for (int64_t i = 0; i < plane; ++i) {
          if (!m[i]) continue;
          const double d = static_cast<double>(b[i]) - static_cast<double>(a[i]);
          // -log sigma(d) = softplus(-d); -log(1 - sigma(d)) = softplus(d)
          const double arg = (kk < lab[i]) ? -d : d;
          const double term = std::max(arg, 0.0) + std::log1p(std::exp(-std::abs(arg)));
          acc += std::min(term, max_term);
        }
      }
      per_sample[static_cast<size_t>(bb)] = acc / static_cast<double>((*valid_counts)[static_cast<size_t>(bb)]);
    }
  });
  for (int bb = 0; bb < batch; ++bb) total += per_sample[static_cast<size_t>(bb)];
  total /= static_cast<double>(batch);

  Tensor<T> out({1});
  out[0] = static_cast<T>(total);
  const bool needs = tape.node(logits.idx).needs_grad;
  auto bwd = [li = logits.idx, labels, valid_counts, k, plane, max_term](Tape<T>& t, int self) {
    if (!t.node(li).needs_grad) return;
    const T gout = t.node(self).grad[0];
    const Tensor<T>& lv2 = t.value(li);
    Tensor<T>& gl = t.grad(li);
    const int batch = lv2.dim(0);
    const int k2 = 2 * k;
    const T* lp2 = lv2.data();
    parallel_for(batch, [&](int64_t lo, int64_t hi) {
      for (int64_t bb = lo; bb < hi; ++bb) {
        const uint8_t* m = labels.mask.data() + bb * plane;
        const int32_t* lab = labels.labels.data() + bb * plane;
        const double scale = static_cast<double>(gout) /
                             (static_cast<double>((*valid_counts)[static_cast<size_t>(bb)]) * batch);
        for (int kk = 0; kk < k; ++kk) {
          const T* a = lp2 + (bb * k2 + 2 * kk) * plane;
          const T* b = a + plane;
          T* ga = gl.data() + (bb * k2 + 2 * kk) * plane;
          T* gb = ga + plane;
          for (int64_t i = 0; i < plane; ++i) {
            if (!m[i]) continue;
            const double d = static_cast<double>(b[i]) - static_cast<double>(a[i]);
            const double arg = (kk < lab[i]) ? -d : d;
            const double term = std::max(arg, 0.0) + std::log1p(std::exp(-std::abs(arg)));
            if (term >= max_term) continue;  // clamped region: flat loss
            const double y = (kk < lab[i]) ? 1.0 : 0.0;
            const double gd = (detail::stable_sigmoid(d) - y) * scale;
            gb[i] += static_cast<T>(gd);
            ga[i] -= static_cast<T>(gd);
          }
        }
      }
    });
  };
  return tape.wrap(tape.add_node(std::move(out), {logits.idx}, needs ? std::function(bwd) : nullptr, name, needs));
}

/// sum(x * probe): scalar reduction used by gradient checks to give every
/// output element a distinct adjoint.
template <typename T>
Var<T> weighted_sum(Var<T> x, Tensor<T> probe, const std::string& name = "weighted_sum") {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  if (!xv.same_shape(probe)) throw std::invalid_argument(name + ": probe shape mismatch");
  double acc = 0;
  for (int64_t i = 0; i < xv.numel(); ++i) acc += static_cast<double>(xv[i]) * static_cast<double>(probe[i]);
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc);
  const bool needs = tape.node(x.idx).needs_grad;
  auto probe_sp = std::make_shared<Tensor<T>>(std::move(probe));
  auto bwd = [xi = x.idx, probe_sp](Tape<T>& t, int self) {
    if (!t.node(xi).needs_grad) return;
    const T g = t.node(self).grad[0];
    Tensor<T>& gx = t.grad(xi);
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g * (*probe_sp)[i];
  };
  return tape.wrap(tape.add_node(std::move(out), {x.idx}, needs ? std::function(bwd) : nullptr, name, needs));
}

}  // namespace rvmde::nn

#endif  // RVMDE_AUTODIFF_HPP
