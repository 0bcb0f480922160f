#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pathogan/errors.hpp"
#include "pathogan/tensor.hpp"

namespace pathogan {

// A learnable tensor owned by a network. Gradients accumulate across every
// lease of the parameter onto a tape within one backward pass.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape, T(0)), grad(shape, T(0)) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

namespace detail {

// TF-style "same" padding: output extent depends only on the stride, the
// total padding splits floor/ceil between begin and end.
struct SamePad {
  int out, begin;
};

inline SamePad same_pad(int extent, int kernel, int stride) {
  const int out = (extent + stride - 1) / stride;
  int total = (out - 1) * stride + kernel - extent;
  if (total < 0) total = 0;
  return {out, total / 2};
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pt, int pl,
            int OH, int OW, T* col) {
  const int64_t M = static_cast<int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj) {
        T* dst = col + ((static_cast<int64_t>(c) * k + di) * k + dj) * M;
        for (int oi = 0; oi < OH; ++oi) {
          const int i = oi * stride + di - pt;
          if (i < 0 || i >= H) {
            std::fill(dst, dst + OW, T(0));
            dst += OW;
            continue;
          }
          const T* src = x + (static_cast<int64_t>(c) * H + i) * W;
          for (int oj = 0; oj < OW; ++oj) {
            const int j = oj * stride + dj - pl;
            *dst++ = (j < 0 || j >= W) ? T(0) : src[j];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int k, int stride, int pt,
                int pl, int OH, int OW, T* x) {
  const int64_t M = static_cast<int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj) {
        const T* src = col + ((static_cast<int64_t>(c) * k + di) * k + dj) * M;
        for (int oi = 0; oi < OH; ++oi) {
          const int i = oi * stride + di - pt;
          if (i < 0 || i >= H) {
            src += OW;
            continue;
          }
          T* dst = x + (static_cast<int64_t>(c) * H + i) * W;
          for (int oj = 0; oj < OW; ++oj) {
            const int j = oj * stride + dj - pl;
            if (j >= 0 && j < W) dst[j] += src[oj];
          }
          src += OW;
        }
      }
    }
  }
}

}  // namespace detail

// Reverse-mode autodiff tape. Node values are computed eagerly; backward
// closures run in reverse creation order. One tape instance serves one
// forward/backward episode and is then discarded.
template <typename T>
class Tape {
 public:
  using Var = int;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using CMatMap = Eigen::Map<const Mat>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape&)> backward;
    bool needs_grad = false;
  };

  const Tensor<T>& value(Var id) const { return nodes_[id].value; }
  Tensor<T>& grad(Var id) { return nodes_[id].grad; }
  bool needs_grad(Var id) const { return nodes_[id].needs_grad; }
  T scalar(Var id) const { return nodes_[id].value.data[0]; }
  size_t size() const { return nodes_.size(); }

  Var leaf(Tensor<T> v, bool needs_grad = false) {
    return push(std::move(v), needs_grad, nullptr);
  }

  Var param(Parameter<T>& p) {
    const Var id = push(p.value, true, nullptr);
    param_nodes_.emplace_back(id, &p);
    return id;
  }

  // Detached copy of an existing node's value.
  Var detach(Var x) { return leaf(nodes_[x].value, false); }

  // ---- network layers ------------------------------------------------------

  Var conv2d(Var x, Var w, Var b, int stride) {
    const Tensor<T>& xv = nodes_[x].value;
    const Tensor<T>& wv = nodes_[w].value;  // (F, C, k, k)
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int F = wv.dim(0), k = wv.dim(2);
    if (wv.dim(1) != C)
      throw ShapeMismatchError("conv2d: weight expects " +
                               std::to_string(wv.dim(1)) + " channels, got " +
                               std::to_string(C));
    const detail::SamePad ph = detail::same_pad(H, k, stride);
    const detail::SamePad pw = detail::same_pad(W, k, stride);
    const int OH = ph.out, OW = pw.out, pt = ph.begin, pl = pw.begin;
    const int64_t K = static_cast<int64_t>(C) * k * k;
    const int64_t M = static_cast<int64_t>(OH) * OW;

    Tensor<T> out({N, F, OH, OW});
    std::vector<T> col(static_cast<size_t>(K * M));
    CMatMap wm(wv.ptr(), F, K);
    const Tensor<T>& bv = nodes_[b].value;
    for (int n = 0; n < N; ++n) {
      detail::im2col(xv.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, k,
                     stride, pt, pl, OH, OW, col.data());
      CMatMap cm(col.data(), K, M);
      MatMap ym(out.ptr() + static_cast<int64_t>(n) * F * M, F, M);
      ym.noalias() = wm * cm;
      for (int f = 0; f < F; ++f) ym.row(f).array() += bv[f];
    }

    const bool ng =
        nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
    return push(std::move(out), ng, [=](Tape& t) {
      t.conv2d_backward(x, w, b, stride, pt, pl, OH, OW);
    });
  }

  Var conv2d_transpose(Var x, Var w, Var b) {
    // kernel 3, stride 2, pad 1, output padding 1: doubles the spatial size
    const Tensor<T>& xv = nodes_[x].value;
    const Tensor<T>& wv = nodes_[w].value;  // (Cin, Cout, k, k)
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Cout = wv.dim(1), k = wv.dim(2);
    const int stride = 2, pad = 1;
    if (wv.dim(0) != C)
      throw ShapeMismatchError("conv2d_transpose: weight expects " +
                               std::to_string(wv.dim(0)) + " channels, got " +
                               std::to_string(C));
    const int OH = H * stride, OW = W * stride;
    const int64_t K = static_cast<int64_t>(Cout) * k * k;
    const int64_t M = static_cast<int64_t>(H) * W;

    std::vector<T> w2(static_cast<size_t>(K * C));
    permute_convt_weights(wv, C, Cout, k, w2.data());

    Tensor<T> out({N, Cout, OH, OW}, T(0));
    std::vector<T> col(static_cast<size_t>(K * M));
    CMatMap w2m(w2.data(), K, C);
    const Tensor<T>& bv = nodes_[b].value;
    for (int n = 0; n < N; ++n) {
      CMatMap xm(xv.ptr() + static_cast<int64_t>(n) * C * M, C, M);
      MatMap cm(col.data(), K, M);
      cm.noalias() = w2m * xm;
      T* y = out.ptr() + static_cast<int64_t>(n) * Cout * OH * OW;
      scatter_convt(col.data(), Cout, k, stride, pad, H, W, OH, OW, y);
      for (int co = 0; co < Cout; ++co) {
        T* yc = y + static_cast<int64_t>(co) * OH * OW;
        for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) yc[i] += bv[co];
      }
    }

    const bool ng =
        nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
    return push(std::move(out), ng, [=](Tape& t) {
      t.convt_backward(x, w, b, k, stride, pad, OH, OW);
    });
  }

  Var linear(Var x, Var w, Var b) {
    const Tensor<T>& xv = nodes_[x].value;
    const Tensor<T>& wv = nodes_[w].value;  // (Fout, Fin)
    const int N = xv.dim(0), Fi = xv.dim(1);
    const int Fo = wv.dim(0);
    if (wv.dim(1) != Fi)
      throw ShapeMismatchError("linear: weight expects " +
                               std::to_string(wv.dim(1)) + " features, got " +
                               std::to_string(Fi));
    Tensor<T> out({N, Fo});
    CMatMap xm(xv.ptr(), N, Fi);
    CMatMap wm(wv.ptr(), Fo, Fi);
    MatMap ym(out.ptr(), N, Fo);
    ym.noalias() = xm * wm.transpose();
    const Tensor<T>& bv = nodes_[b].value;
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < Fo; ++f) out[static_cast<int64_t>(n) * Fo + f] += bv[f];

    const bool ng =
        nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
    return push(std::move(out), ng, [=](Tape& t) {
      const Var self = t.current_;
      const Tensor<T>& gy = t.nodes_[self].grad;
      CMatMap gym(gy.ptr(), N, Fo);
      if (t.nodes_[x].needs_grad) {
        CMatMap wm2(t.nodes_[w].value.ptr(), Fo, Fi);
        MatMap gx(t.nodes_[x].grad.ptr(), N, Fi);
        gx.noalias() += gym * wm2;
      }
      if (t.nodes_[w].needs_grad) {
        CMatMap xm2(t.nodes_[x].value.ptr(), N, Fi);
        MatMap gw(t.nodes_[w].grad.ptr(), Fo, Fi);
        gw.noalias() += gym.transpose() * xm2;
      }
      if (t.nodes_[b].needs_grad) {
        Tensor<T>& gb = t.nodes_[b].grad;
        for (int n = 0; n < N; ++n)
          for (int f = 0; f < Fo; ++f)
            gb[f] += gy[static_cast<int64_t>(n) * Fo + f];
      }
    });
  }

  Var instance_norm(Var x) {
    const Tensor<T>& xv = nodes_[x].value;
    const int N = xv.dim(0), C = xv.dim(1);
    const int64_t m = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out(xv.shape);
    std::vector<T> inv(static_cast<size_t>(N) * C);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const T* xs = xv.ptr() + (static_cast<int64_t>(n) * C + c) * m;
        T* ys = out.ptr() + (static_cast<int64_t>(n) * C + c) * m;
        double mu = 0;
        for (int64_t i = 0; i < m; ++i) mu += xs[i];
        mu /= static_cast<double>(m);
        double var = 0;
        for (int64_t i = 0; i < m; ++i) {
          const double d = xs[i] - mu;
          var += d * d;
        }
        var /= static_cast<double>(m);
        const T iv = static_cast<T>(1.0 / std::sqrt(var + 1e-5));
        inv[static_cast<size_t>(n) * C + c] = iv;
        for (int64_t i = 0; i < m; ++i)
          ys[i] = (xs[i] - static_cast<T>(mu)) * iv;
      }
    }
    return push(std::move(out), nodes_[x].needs_grad,
                [=, inv = std::move(inv)](Tape& t) {
                  if (!t.nodes_[x].needs_grad) return;
                  const Var self = t.current_;
                  const Tensor<T>& y = t.nodes_[self].value;
                  const Tensor<T>& gy = t.nodes_[self].grad;
                  Tensor<T>& gx = t.nodes_[x].grad;
                  for (int n = 0; n < N; ++n) {
                    for (int c = 0; c < C; ++c) {
                      const int64_t off = (static_cast<int64_t>(n) * C + c) * m;
                      double mean_gy = 0, mean_gyy = 0;
                      for (int64_t i = 0; i < m; ++i) {
                        mean_gy += gy[off + i];
                        mean_gyy += static_cast<double>(gy[off + i]) * y[off + i];
                      }
                      mean_gy /= static_cast<double>(m);
                      mean_gyy /= static_cast<double>(m);
                      const T iv = inv[static_cast<size_t>(n) * C + c];
                      for (int64_t i = 0; i < m; ++i)
                        gx[off + i] +=
                            iv * static_cast<T>(gy[off + i] - mean_gy -
                                                y[off + i] * mean_gyy);
                    }
                  }
                });
  }

  // ---- pointwise -------------------------------------------------------

  Var elu(Var x) {
    return unary(
        x,
        [](T v) {
          return v > T(0) ? v : static_cast<T>(std::expm1(static_cast<double>(v)));
        },
        [](T v, T y) { return v > T(0) ? T(1) : y + T(1); });
  }

  Var leaky_relu(Var x, T slope) {
    return unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                 [slope](T v, T) { return v > T(0) ? T(1) : slope; });
  }

  Var tanh_(Var x) {
    return unary(x, [](T v) { return std::tanh(v); },
                 [](T, T y) { return T(1) - y * y; });
  }

  Var sigmoid_(Var x) {
    return unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                 [](T, T y) { return y * (T(1) - y); });
  }

  Var exp_(Var x) {
    return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
  }

  Var log_(Var x) {
    return unary(x, [](T v) { return std::log(v); },
                 [](T v, T) { return T(1) / v; });
  }

  Var square(Var x) {
    return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
  }

  Var abs_(Var x) {
    return unary(x, [](T v) { return std::abs(v); },
                 [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
  }

  Var affine(Var x, T scale, T shift) {
    return unary(x, [=](T v) { return scale * v + shift; },
                 [=](T, T) { return scale; });
  }

  // min(x, hi): gradient passes wherever the input is not clamped
  Var min_const(Var x, T hi) {
    return unary(x, [=](T v) { return v < hi ? v : hi; },
                 [=](T v, T) { return v <= hi ? T(1) : T(0); });
  }

  Var max_const(Var x, T lo) {
    return unary(x, [=](T v) { return v > lo ? v : lo; },
                 [=](T v, T) { return v >= lo ? T(1) : T(0); });
  }

  // ---- binary ----------------------------------------------------------

  Var add(Var a, Var b) {
    return binary(a, b, [](T x, T y) { return x + y; },
                  [](T, T, T g, T* da, T* db) {
                    *da = g;
                    *db = g;
                  });
  }

  Var sub(Var a, Var b) {
    return binary(a, b, [](T x, T y) { return x - y; },
                  [](T, T, T g, T* da, T* db) {
                    *da = g;
                    *db = -g;
                  });
  }

  Var mul(Var a, Var b) {
    return binary(a, b, [](T x, T y) { return x * y; },
                  [](T x, T y, T g, T* da, T* db) {
                    *da = g * y;
                    *db = g * x;
                  });
  }

  Var div_elem(Var a, Var b) {
    return binary(a, b, [](T x, T y) { return x / y; },
                  [](T x, T y, T g, T* da, T* db) {
                    *da = g / y;
                    *db = -g * x / (y * y);
                  });
  }

  // l: (N,1,H,W) broadcast across the channels of x: (N,C,H,W)
  Var mul_channel(Var l, Var x) {
    const Tensor<T>& lv = nodes_[l].value;
    const Tensor<T>& xv = nodes_[x].value;
    if (lv.dim(0) != xv.dim(0) || lv.dim(1) != 1 || lv.dim(2) != xv.dim(2) ||
        lv.dim(3) != xv.dim(3))
      throw ShapeMismatchError("mul_channel: labelmap " + shape_str(lv.shape) +
                               " vs image " + shape_str(xv.shape));
    const int N = xv.dim(0), C = xv.dim(1);
    const int64_t m = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out(xv.shape);
    for (int n = 0; n < N; ++n) {
      const T* ls = lv.ptr() + static_cast<int64_t>(n) * m;
      for (int c = 0; c < C; ++c) {
        const int64_t off = (static_cast<int64_t>(n) * C + c) * m;
        for (int64_t i = 0; i < m; ++i) out[off + i] = ls[i] * xv[off + i];
      }
    }
    const bool ng = nodes_[l].needs_grad || nodes_[x].needs_grad;
    return push(std::move(out), ng, [=](Tape& t) {
      const Var self = t.current_;
      const Tensor<T>& gy = t.nodes_[self].grad;
      const Tensor<T>& lv2 = t.nodes_[l].value;
      const Tensor<T>& xv2 = t.nodes_[x].value;
      for (int n = 0; n < N; ++n) {
        const int64_t loff = static_cast<int64_t>(n) * m;
        for (int c = 0; c < C; ++c) {
          const int64_t off = (static_cast<int64_t>(n) * C + c) * m;
          if (t.nodes_[x].needs_grad) {
            Tensor<T>& gx = t.nodes_[x].grad;
            for (int64_t i = 0; i < m; ++i)
              gx[off + i] += gy[off + i] * lv2[loff + i];
          }
          if (t.nodes_[l].needs_grad) {
            Tensor<T>& gl = t.nodes_[l].grad;
            for (int64_t i = 0; i < m; ++i)
              gl[loff + i] += gy[off + i] * xv2[off + i];
          }
        }
      }
    });
  }

  // ---- structure ---------------------------------------------------------

  Var reshape(Var x, std::vector<int> shape) {
    const Tensor<T>& xv = nodes_[x].value;
    if (Tensor<T>::count(shape) != xv.numel())
      throw ShapeMismatchError("reshape: cannot view " + shape_str(xv.shape) +
                               " as " + shape_str(shape));
    Tensor<T> out = xv.reshaped(shape);
    return push(std::move(out), nodes_[x].needs_grad, [=](Tape& t) {
      if (!t.nodes_[x].needs_grad) return;
      const Var self = t.current_;
      const Tensor<T>& gy = t.nodes_[self].grad;
      Tensor<T>& gx = t.nodes_[x].grad;
      for (int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
    });
  }

  // concatenate along axis 1 (features or channels)
  Var concat_ax1(Var a, Var b) {
    const Tensor<T>& av = nodes_[a].value;
    const Tensor<T>& bv = nodes_[b].value;
    if (av.rank() != bv.rank() || av.dim(0) != bv.dim(0))
      throw ShapeMismatchError("concat_ax1: " + shape_str(av.shape) + " vs " +
                               shape_str(bv.shape));
    std::vector<int> shape = av.shape;
    shape[1] += bv.dim(1);
    const int N = av.dim(0);
    const int64_t ra = av.numel() / N, rb = bv.numel() / N;
    Tensor<T> out(shape);
    for (int n = 0; n < N; ++n) {
      std::copy(av.ptr() + n * ra, av.ptr() + (n + 1) * ra,
                out.ptr() + n * (ra + rb));
      std::copy(bv.ptr() + n * rb, bv.ptr() + (n + 1) * rb,
                out.ptr() + n * (ra + rb) + ra);
    }
    const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(out), ng, [=](Tape& t) {
      const Var self = t.current_;
      const Tensor<T>& gy = t.nodes_[self].grad;
      for (int n = 0; n < N; ++n) {
        if (t.nodes_[a].needs_grad) {
          Tensor<T>& ga = t.nodes_[a].grad;
          for (int64_t i = 0; i < ra; ++i)
            ga[n * ra + i] += gy[n * (ra + rb) + i];
        }
        if (t.nodes_[b].needs_grad) {
          Tensor<T>& gb = t.nodes_[b].grad;
          for (int64_t i = 0; i < rb; ++i)
            gb[n * rb + i] += gy[n * (ra + rb) + ra + i];
        }
      }
    });
  }

  // x[:, from:to, ...] along axis 1
  Var slice_ax1(Var x, int from, int to) {
    const Tensor<T>& xv = nodes_[x].value;
    const int N = xv.dim(0), D = xv.dim(1);
    if (from < 0 || to > D || from >= to)
      throw ShapeMismatchError("slice_ax1: [" + std::to_string(from) + "," +
                               std::to_string(to) + ") of " +
                               shape_str(xv.shape));
    std::vector<int> shape = xv.shape;
    shape[1] = to - from;
    const int64_t inner = xv.numel() / (static_cast<int64_t>(N) * D);
    Tensor<T> out(shape);
    for (int n = 0; n < N; ++n)
      std::copy(xv.ptr() + (static_cast<int64_t>(n) * D + from) * inner,
                xv.ptr() + (static_cast<int64_t>(n) * D + to) * inner,
                out.ptr() + static_cast<int64_t>(n) * (to - from) * inner);
    return push(std::move(out), nodes_[x].needs_grad, [=](Tape& t) {
      if (!t.nodes_[x].needs_grad) return;
      const Var self = t.current_;
      const Tensor<T>& gy = t.nodes_[self].grad;
      Tensor<T>& gx = t.nodes_[x].grad;
      const int64_t row = (to - from) * inner;
      for (int n = 0; n < N; ++n)
        for (int64_t i = 0; i < row; ++i)
          gx[(static_cast<int64_t>(n) * D + from) * inner + i] += gy[n * row + i];
    });
  }

  // ---- reductions --------------------------------------------------------

  Var sum_all(Var x) {
    const Tensor<T>& xv = nodes_[x].value;
    double s = 0;
    for (int64_t i = 0; i < xv.numel(); ++i) s += xv[i];
    Tensor<T> out({1});
    out[0] = static_cast<T>(s);
    return push(std::move(out), nodes_[x].needs_grad, [=](Tape& t) {
      if (!t.nodes_[x].needs_grad) return;
      const Var self = t.current_;
      const T g = t.nodes_[self].grad[0];
      Tensor<T>& gx = t.nodes_[x].grad;
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  }

  Var mean_all(Var x) {
    const int64_t n = nodes_[x].value.numel();
    return affine(sum_all(x), static_cast<T>(1.0 / static_cast<double>(n)), T(0));
  }

  // per-sample sum: (N, ...) -> (N)
  Var sum_per_sample(Var x) {
    const Tensor<T>& xv = nodes_[x].value;
    const int N = xv.dim(0);
    const int64_t inner = xv.numel() / N;
    Tensor<T> out({N});
    for (int n = 0; n < N; ++n) {
      double s = 0;
      for (int64_t i = 0; i < inner; ++i) s += xv[n * inner + i];
      out[n] = static_cast<T>(s);
    }
    return push(std::move(out), nodes_[x].needs_grad, [=](Tape& t) {
      if (!t.nodes_[x].needs_grad) return;
      const Var self = t.current_;
      const Tensor<T>& gy = t.nodes_[self].grad;
      Tensor<T>& gx = t.nodes_[x].grad;
      for (int n = 0; n < N; ++n)
        for (int64_t i = 0; i < inner; ++i) gx[n * inner + i] += gy[n];
    });
  }

  Var add_n(const std::vector<Var>& xs) {
    Var acc = xs.front();
    for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
  }

  // ---- backward ------------------------------------------------------------

  void backward(Var loss) {
    if (nodes_[loss].value.numel() != 1)
      throw ShapeMismatchError("backward: loss must be scalar");
    for (Node& n : nodes_)
      if (n.needs_grad && n.grad.numel() == 0)
        n.grad = Tensor<T>(n.value.shape, T(0));
    nodes_[loss].grad[0] = T(1);
    for (Var id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.backward && n.needs_grad) {
        current_ = id;
        n.backward(*this);
      }
    }
    for (auto& [id, p] : param_nodes_) {
      const Tensor<T>& g = nodes_[id].grad;
      if (g.numel() == 0) continue;
      for (int64_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
    }
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<Var, Parameter<T>*>> param_nodes_;
  Var current_ = -1;

  Var push(Tensor<T> v, bool needs_grad, std::function<void(Tape&)> bw) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  template <typename F, typename DF>
  Var unary(Var x, F f, DF df) {
    const Tensor<T>& xv = nodes_[x].value;
    Tensor<T> out(xv.shape);
    for (int64_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
    return push(std::move(out), nodes_[x].needs_grad, [=](Tape& t) {
      if (!t.nodes_[x].needs_grad) return;
      const Var self = t.current_;
      const Tensor<T>& y = t.nodes_[self].value;
      const Tensor<T>& gy = t.nodes_[self].grad;
      const Tensor<T>& xv2 = t.nodes_[x].value;
      Tensor<T>& gx = t.nodes_[x].grad;
      for (int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * df(xv2[i], y[i]);
    });
  }

  template <typename F, typename DF>
  Var binary(Var a, Var b, F f, DF df) {
    const Tensor<T>& av = nodes_[a].value;
    const Tensor<T>& bv = nodes_[b].value;
    if (!av.same_shape(bv))
      throw ShapeMismatchError("elementwise op: " + shape_str(av.shape) +
                               " vs " + shape_str(bv.shape));
    Tensor<T> out(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = f(av[i], bv[i]);
    const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(out), ng, [=](Tape& t) {
      const Var self = t.current_;
      const Tensor<T>& gy = t.nodes_[self].grad;
      const Tensor<T>& av2 = t.nodes_[a].value;
      const Tensor<T>& bv2 = t.nodes_[b].value;
      const bool na = t.nodes_[a].needs_grad, nb = t.nodes_[b].needs_grad;
      for (int64_t i = 0; i < gy.numel(); ++i) {
        T da, db;
        df(av2[i], bv2[i], gy[i], &da, &db);
        if (na) t.nodes_[a].grad[i] += da;
        if (nb) t.nodes_[b].grad[i] += db;
      }
    });
  }

  static void permute_convt_weights(const Tensor<T>& w, int Cin, int Cout, int k,
                                    T* w2) {
    // (Cin,Cout,k,k) -> ((Cout,k,k), Cin)
    for (int ci = 0; ci < Cin; ++ci)
      for (int co = 0; co < Cout; ++co)
        for (int di = 0; di < k; ++di)
          for (int dj = 0; dj < k; ++dj)
            w2[(((static_cast<int64_t>(co) * k + di) * k + dj) * Cin) + ci] =
                w[((static_cast<int64_t>(ci) * Cout + co) * k + di) * k + dj];
  }

  static void scatter_convt(const T* col, int Cout, int k, int stride, int pad,
                            int H, int W, int OH, int OW, T* y) {
    const int64_t M = static_cast<int64_t>(H) * W;
    for (int co = 0; co < Cout; ++co) {
      for (int di = 0; di < k; ++di) {
        for (int dj = 0; dj < k; ++dj) {
          const T* src = col + ((static_cast<int64_t>(co) * k + di) * k + dj) * M;
          for (int i = 0; i < H; ++i) {
            const int oi = i * stride + di - pad;
            if (oi < 0 || oi >= OH) {
              src += W;
              continue;
            }
            T* dst = y + (static_cast<int64_t>(co) * OH + oi) * OW;
            for (int j = 0; j < W; ++j) {
              const int oj = j * stride + dj - pad;
              if (oj >= 0 && oj < OW) dst[oj] += src[j];
            }
            src += W;
          }
        }
      }
    }
  }

  static void gather_convt(const T* gy, int Cout, int k, int stride, int pad,
                           int H, int W, int OH, int OW, T* col) {
    const int64_t M = static_cast<int64_t>(H) * W;
    for (int co = 0; co < Cout; ++co) {
      for (int di = 0; di < k; ++di) {
        for (int dj = 0; dj < k; ++dj) {
          T* dst = col + ((static_cast<int64_t>(co) * k + di) * k + dj) * M;
          for (int i = 0; i < H; ++i) {
            const int oi = i * stride + di - pad;
            if (oi < 0 || oi >= OH) {
              std::fill(dst, dst + W, T(0));
              dst += W;
              continue;
            }
            const T* src = gy + (static_cast<int64_t>(co) * OH + oi) * OW;
            for (int j = 0; j < W; ++j) {
              const int oj = j * stride + dj - pad;
              *dst++ = (oj < 0 || oj >= OW) ? T(0) : src[oj];
            }
          }
        }
      }
    }
  }

  void conv2d_backward(Var x, Var w, Var b, int stride, int pt, int pl, int OH,
                       int OW) {
    const Var self = current_;
    const Tensor<T>& gy = nodes_[self].grad;
    const Tensor<T>& xv = nodes_[x].value;
    const Tensor<T>& wv = nodes_[w].value;
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int F = wv.dim(0), k = wv.dim(2);
    const int64_t K = static_cast<int64_t>(C) * k * k;
    const int64_t M = static_cast<int64_t>(OH) * OW;
    std::vector<T> col(static_cast<size_t>(K * M));
    std::vector<T> dcol(static_cast<size_t>(K * M));
    CMatMap wm(wv.ptr(), F, K);
    const bool nx = nodes_[x].needs_grad, nw = nodes_[w].needs_grad,
               nb = nodes_[b].needs_grad;
    for (int n = 0; n < N; ++n) {
      CMatMap gym(gy.ptr() + static_cast<int64_t>(n) * F * M, F, M);
      if (nw)
        detail::im2col(xv.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W,
                       k, stride, pt, pl, OH, OW, col.data());
      if (nw) {
        CMatMap cm(col.data(), K, M);
        MatMap gw(nodes_[w].grad.ptr(), F, K);
        gw.noalias() += gym * cm.transpose();
      }
      if (nb) {
        Tensor<T>& gb = nodes_[b].grad;
        for (int f = 0; f < F; ++f) gb[f] += gym.row(f).sum();
      }
      if (nx) {
        MatMap dcm(dcol.data(), K, M);
        dcm.noalias() = wm.transpose() * gym;
        detail::col2im_add(
            dcol.data(), C, H, W, k, stride, pt, pl, OH, OW,
            nodes_[x].grad.ptr() + static_cast<int64_t>(n) * C * H * W);
      }
    }
  }

  void convt_backward(Var x, Var w, Var b, int k, int stride, int pad, int OH,
                      int OW) {
    const Var self = current_;
    const Tensor<T>& gy = nodes_[self].grad;
    const Tensor<T>& xv = nodes_[x].value;
    const Tensor<T>& wv = nodes_[w].value;
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Cout = wv.dim(1);
    const int64_t K = static_cast<int64_t>(Cout) * k * k;
    const int64_t M = static_cast<int64_t>(H) * W;
    std::vector<T> w2(static_cast<size_t>(K * C));
    permute_convt_weights(wv, C, Cout, k, w2.data());
    CMatMap w2m(w2.data(), K, C);
    std::vector<T> dcol(static_cast<size_t>(K * M));
    std::vector<T> dw2;
    const bool nx = nodes_[x].needs_grad, nw = nodes_[w].needs_grad,
               nb = nodes_[b].needs_grad;
    if (nw) dw2.assign(static_cast<size_t>(K * C), T(0));
    for (int n = 0; n < N; ++n) {
      const T* gyn = gy.ptr() + static_cast<int64_t>(n) * Cout * OH * OW;
      gather_convt(gyn, Cout, k, stride, pad, H, W, OH, OW, dcol.data());
      CMatMap dcm(dcol.data(), K, M);
      if (nx) {
        MatMap gx(nodes_[x].grad.ptr() + static_cast<int64_t>(n) * C * M, C, M);
        gx.noalias() += w2m.transpose() * dcm;
      }
      if (nw) {
        CMatMap xm(xv.ptr() + static_cast<int64_t>(n) * C * M, C, M);
        MatMap gw2(dw2.data(), K, C);
        gw2.noalias() += dcm * xm.transpose();
      }
      if (nb) {
        Tensor<T>& gb = nodes_[b].grad;
        for (int co = 0; co < Cout; ++co) {
          const T* g = gyn + static_cast<int64_t>(co) * OH * OW;
          double s = 0;
          for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) s += g[i];
          gb[co] += static_cast<T>(s);
        }
      }
    }
    if (nw) {
      // scatter ((Cout,k,k), Cin) back into (Cin,Cout,k,k)
      Tensor<T>& gw = nodes_[w].grad;
      for (int ci = 0; ci < C; ++ci)
        for (int co = 0; co < Cout; ++co)
          for (int di = 0; di < k; ++di)
            for (int dj = 0; dj < k; ++dj)
              gw[((static_cast<int64_t>(ci) * Cout + co) * k + di) * k + dj] +=
                  dw2[(((static_cast<int64_t>(co) * k + di) * k + dj) * C) + ci];
    }
  }
};

}  // namespace pathogan
