// Network layers: 2-D/3-D convolutions and their transposes, fully-connected,
// dropout, and the training losses.
//
// Convolutions are cross-correlations over channel-last tensors with
// "same"-style symmetric zero padding: a stride-s layer maps every spatial
// dim to ceil(dim/s). They are implemented rank-generically (N spatial dims)
// as im2col + GEMM; the transposed convolutions reuse the exact adjoint of
// the forward machinery, with output dims = input dims * stride.
//
// Weight layouts:
//   conv:           [k..., Cin, Cout]
//   conv transpose: [k..., Cout, Cin]   (the adjoint conv's natural layout)
#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "voxrender/rng.hpp"
#include "voxrender/tensor.hpp"

namespace voxrender {
namespace conv_detail {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t M, std::size_t N, std::size_t K) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* arow = a + m * K;
    T* crow = c + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = arow[k];
      if (av == T(0)) continue;
      const T* brow = b + k * N;
      for (std::size_t n = 0; n < N; ++n) crow[n] += av * brow[n];
    }
  }
}

struct ConvPlan {
  std::size_t rank = 0;
  std::array<std::size_t, 3> in{1, 1, 1};
  std::array<std::size_t, 3> out{1, 1, 1};
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<long, 3> pad_lo{0, 0, 0};
  std::size_t cin = 0, cout = 0;

  std::size_t positions() const {
    std::size_t p = 1;
    for (std::size_t i = 0; i < rank; ++i) p *= out[i];
    return p;
  }
  std::size_t patch() const {  // im2col row width
    std::size_t k = cin;
    for (std::size_t i = 0; i < rank; ++i) k *= kernel[i];
    return k;
  }
};

/// Same-padding plan: out = ceil(in/stride), extra padding goes high-side.
inline ConvPlan make_plan(std::size_t rank, const std::size_t* in, const std::size_t* kernel,
                          const std::size_t* stride, std::size_t cin, std::size_t cout) {
  ConvPlan p;
  p.rank = rank;
  p.cin = cin;
  p.cout = cout;
  for (std::size_t i = 0; i < rank; ++i) {
    p.in[i] = in[i];
    p.kernel[i] = kernel[i];
    p.stride[i] = stride[i];
    p.out[i] = (in[i] + stride[i] - 1) / stride[i];
    const long total =
        std::max<long>(0, static_cast<long>((p.out[i] - 1) * stride[i] + kernel[i]) -
                              static_cast<long>(in[i]));
    p.pad_lo[i] = total / 2;
  }
  return p;
}

/// col[P, patch]: one row per output position, (kernel offsets x Cin) fastest.
template <class T>
void im2col(const ConvPlan& p, const T* input, T* col) {
  const std::size_t P = p.positions();
  const std::size_t patch = p.patch();
  std::array<std::size_t, 3> opos{0, 0, 0};
  // input strides (elements) for each spatial dim
  std::array<std::size_t, 3> istr{0, 0, 0};
  {
    std::size_t s = p.cin;
    for (std::size_t i = p.rank; i-- > 0;) {
      istr[i] = s;
      s *= p.in[i];
    }
  }
  for (std::size_t pos = 0; pos < P; ++pos) {
    T* row = col + pos * patch;
    std::size_t w = 0;
    std::array<std::size_t, 3> kpos{0, 0, 0};
    const std::size_t kcount = patch / p.cin;
    for (std::size_t k = 0; k < kcount; ++k) {
      bool inside = true;
      std::size_t offset = 0;
      for (std::size_t i = 0; i < p.rank; ++i) {
        const long src = static_cast<long>(opos[i] * p.stride[i]) - p.pad_lo[i] +
                         static_cast<long>(kpos[i]);
        if (src < 0 || src >= static_cast<long>(p.in[i])) {
          inside = false;
          break;
        }
        offset += static_cast<std::size_t>(src) * istr[i];
      }
      if (inside)
        std::memcpy(row + w, input + offset, p.cin * sizeof(T));
      else
        std::fill(row + w, row + w + p.cin, T(0));
      w += p.cin;
      // advance kernel multi-index
      for (std::size_t i = p.rank; i-- > 0;) {
        if (++kpos[i] < p.kernel[i]) break;
        kpos[i] = 0;
      }
    }
    for (std::size_t i = p.rank; i-- > 0;) {
      if (++opos[i] < p.out[i]) break;
      opos[i] = 0;
    }
  }
}

/// Adjoint of im2col: scatter-adds col rows back into the input layout.
template <class T>
void col2im_acc(const ConvPlan& p, const T* col, T* input_grad) {
  const std::size_t P = p.positions();
  const std::size_t patch = p.patch();
  std::array<std::size_t, 3> istr{0, 0, 0};
  {
    std::size_t s = p.cin;
    for (std::size_t i = p.rank; i-- > 0;) {
      istr[i] = s;
      s *= p.in[i];
    }
  }
  std::array<std::size_t, 3> opos{0, 0, 0};
  for (std::size_t pos = 0; pos < P; ++pos) {
    const T* row = col + pos * patch;
    std::size_t w = 0;
    std::array<std::size_t, 3> kpos{0, 0, 0};
    const std::size_t kcount = patch / p.cin;
    for (std::size_t k = 0; k < kcount; ++k) {
      bool inside = true;
      std::size_t offset = 0;
      for (std::size_t i = 0; i < p.rank; ++i) {
        const long src = static_cast<long>(opos[i] * p.stride[i]) - p.pad_lo[i] +
                         static_cast<long>(kpos[i]);
        if (src < 0 || src >= static_cast<long>(p.in[i])) {
          inside = false;
          break;
        }
        offset += static_cast<std::size_t>(src) * istr[i];
      }
      if (inside)
        for (std::size_t c = 0; c < p.cin; ++c) input_grad[offset + c] += row[w + c];
      w += p.cin;
      for (std::size_t i = p.rank; i-- > 0;) {
        if (++kpos[i] < p.kernel[i]) break;
        kpos[i] = 0;
      }
    }
    for (std::size_t i = p.rank; i-- > 0;) {
      if (++opos[i] < p.out[i]) break;
      opos[i] = 0;
    }
  }
}

/// out[P, Cout] = col(input) * W[patch, Cout]  (+ bias)
template <class T>
std::vector<T> forward(const ConvPlan& p, const T* input, const T* w, const T* bias) {
  const std::size_t P = p.positions();
  const std::size_t patch = p.patch();
  std::vector<T> col(P * patch);
  im2col(p, input, col.data());
  std::vector<T> out(P * p.cout, T(0));
  gemm_acc(col.data(), w, out.data(), P, p.cout, patch);
  if (bias)
    for (std::size_t pos = 0; pos < P; ++pos)
      for (std::size_t c = 0; c < p.cout; ++c) out[pos * p.cout + c] += bias[c];
  return out;
}

/// dInput += col2im( dOut * W^T )
template <class T>
void input_grad_acc(const ConvPlan& p, const T* dout, const T* w, T* dinput) {
  const std::size_t P = p.positions();
  const std::size_t patch = p.patch();
  std::vector<T> wt(patch * p.cout);  // W^T [Cout, patch]
  for (std::size_t k = 0; k < patch; ++k)
    for (std::size_t c = 0; c < p.cout; ++c) wt[c * patch + k] = w[k * p.cout + c];
  std::vector<T> dcol(P * patch, T(0));
  gemm_acc(dout, wt.data(), dcol.data(), P, patch, p.cout);
  col2im_acc(p, dcol.data(), dinput);
}

/// dW += col(input)^T * dOut ; dBias += column sums of dOut
template <class T>
void weight_grad_acc(const ConvPlan& p, const T* input, const T* dout, T* dw, T* dbias) {
  const std::size_t P = p.positions();
  const std::size_t patch = p.patch();
  std::vector<T> col(P * patch);
  im2col(p, input, col.data());
  for (std::size_t pos = 0; pos < P; ++pos) {
    const T* crow = col.data() + pos * patch;
    const T* grow = dout + pos * p.cout;
    for (std::size_t k = 0; k < patch; ++k) {
      const T cv = crow[k];
      if (cv == T(0)) continue;
      T* dwrow = dw + k * p.cout;
      for (std::size_t c = 0; c < p.cout; ++c) dwrow[c] += cv * grow[c];
    }
  }
  if (dbias)
    for (std::size_t pos = 0; pos < P; ++pos)
      for (std::size_t c = 0; c < p.cout; ++c) dbias[c] += dout[pos * p.cout + c];
}

template <class T>
Tensor<T> conv_nd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                  std::size_t rank, const std::size_t* strides) {
  check_shape(x.shape().size() == rank + 1, "conv: input rank mismatch");
  check_shape(w.shape().size() == rank + 2, "conv: kernel rank mismatch");
  const std::size_t cin = x.shape()[rank];
  check_shape(w.shape()[rank] == cin, "conv: kernel Cin does not match input channels");
  const std::size_t cout = w.shape()[rank + 1];
  check_shape(!b.defined() || b.size() == cout, "conv: bias size mismatch");
  ConvPlan plan = make_plan(rank, x.shape().data(), w.shape().data(), strides, cin, cout);

  std::vector<T> out = forward(plan, x.value().data(), w.value().data(),
                               b.defined() ? b.value().data() : nullptr);
  Shape oshape(plan.out.begin(), plan.out.begin() + rank);
  oshape.push_back(cout);

  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor<T>::op(std::move(oshape), std::move(out), std::move(parents),
                       [xn, wn, bn, plan](auto& n) {
                         if (xn->requires_grad) {
                           xn->ensure_grad();
                           input_grad_acc(plan, n.grad.data(), wn->value.data(), xn->grad.data());
                         }
                         if (wn->requires_grad || (bn && bn->requires_grad)) {
                           wn->ensure_grad();
                           if (bn) bn->ensure_grad();
                           weight_grad_acc(plan, xn->value.data(), n.grad.data(), wn->grad.data(),
                                           bn ? bn->grad.data() : nullptr);
                         }
                       });
}

template <class T>
Tensor<T> conv_transpose_nd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                            std::size_t rank, const std::size_t* strides) {
  check_shape(x.shape().size() == rank + 1, "conv_transpose: input rank mismatch");
  check_shape(w.shape().size() == rank + 2, "conv_transpose: kernel rank mismatch");
  const std::size_t cin = x.shape()[rank];
  // Transpose kernels live in the adjoint conv's layout: [k..., Cout, Cin].
  const std::size_t cout = w.shape()[rank];
  check_shape(w.shape()[rank + 1] == cin, "conv_transpose: kernel Cin mismatch");
  check_shape(!b.defined() || b.size() == cout, "conv_transpose: bias size mismatch");

  std::array<std::size_t, 3> big{1, 1, 1};
  for (std::size_t i = 0; i < rank; ++i) big[i] = x.shape()[i] * strides[i];
  // Plan of the adjoint conv: maps [big..., Cout] -> [x dims..., Cin].
  ConvPlan plan = make_plan(rank, big.data(), w.shape().data(), strides, cout, cin);
  for (std::size_t i = 0; i < rank; ++i)
    check_shape(plan.out[i] == x.shape()[i], "conv_transpose: stride/shape mismatch");

  std::size_t big_count = cout;
  for (std::size_t i = 0; i < rank; ++i) big_count *= big[i];
  std::vector<T> out(big_count, T(0));
  input_grad_acc(plan, x.value().data(), w.value().data(), out.data());
  if (b.defined())
    for (std::size_t i = 0; i < big_count; ++i) out[i] += b.value()[i % cout];

  Shape oshape(big.begin(), big.begin() + rank);
  oshape.push_back(cout);
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor<T>::op(std::move(oshape), std::move(out), std::move(parents),
                       [xn, wn, bn, plan](auto& n) {
                         if (xn->requires_grad) {
                           xn->ensure_grad();
                           std::vector<T> dx = forward(plan, n.grad.data(), wn->value.data(),
                                                       static_cast<const T*>(nullptr));
                           for (std::size_t i = 0; i < dx.size(); ++i) xn->grad[i] += dx[i];
                         }
                         if (wn->requires_grad) {
                           wn->ensure_grad();
                           weight_grad_acc(plan, n.grad.data(), xn->value.data(), wn->grad.data(),
                                           static_cast<T*>(nullptr));
                         }
                         if (bn && bn->requires_grad) {
                           bn->ensure_grad();
                           const std::size_t cout = bn->value.size();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                             bn->grad[i % cout] += n.grad[i];
                         }
                       });
}

}  // namespace conv_detail

/// 2-D convolution on [H, W, Cin] with kernel [kh, kw, Cin, Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride = 1) {
  const std::size_t strides[2] = {stride, stride};
  return conv_detail::conv_nd(x, w, b, 2, strides);
}

/// 2-D up-convolution; output spatial dims are input dims * stride.
template <class T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           std::size_t stride = 1) {
  const std::size_t strides[2] = {stride, stride};
  return conv_detail::conv_transpose_nd(x, w, b, 2, strides);
}

/// 3-D convolution on [H, W, D, Cin] with kernel [kh, kw, kd, Cin, Cout].
/// The depth axis may stride independently of the spatial axes.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride_hw = 1, std::size_t stride_d = 0) {
  if (stride_d == 0) stride_d = stride_hw;
  const std::size_t strides[3] = {stride_hw, stride_hw, stride_d};
  return conv_detail::conv_nd(x, w, b, 3, strides);
}

template <class T>
Tensor<T> conv3d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           std::size_t stride_hw = 1, std::size_t stride_d = 0) {
  if (stride_d == 0) stride_d = stride_hw;
  const std::size_t strides[3] = {stride_hw, stride_hw, stride_d};
  return conv_detail::conv_transpose_nd(x, w, b, 3, strides);
}

/// y = W x + b with W [out, in]; x is flattened.
template <class T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check_shape(w.shape().size() == 2, "fully_connected: weight must be [out, in]");
  const std::size_t in = w.shape()[1], out = w.shape()[0];
  check_shape(x.size() == in, "fully_connected: input size mismatch");
  check_shape(!b.defined() || b.size() == out, "fully_connected: bias size mismatch");
  std::vector<T> v(out, T(0));
  for (std::size_t o = 0; o < out; ++o) {
    const T* row = w.value().data() + o * in;
    T acc = b.defined() ? b.value()[o] : T(0);
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x.value()[i];
    v[o] = acc;
  }
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor<T>::op({out}, std::move(v), std::move(parents), [xn, wn, bn, in, out](auto& n) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t o = 0; o < out; ++o) {
        const T g = n.grad[o];
        if (g == T(0)) continue;
        const T* row = wn->value.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) xn->grad[i] += g * row[i];
      }
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      for (std::size_t o = 0; o < out; ++o) {
        const T g = n.grad[o];
        if (g == T(0)) continue;
        T* row = wn->grad.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += g * xn->value[i];
      }
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t o = 0; o < out; ++o) bn->grad[o] += n.grad[o];
    }
  });
}

/// Inverted dropout: training zeroes elements with probability p and rescales
/// survivors by 1/(1-p); inference is the identity.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng rng) {
  check_arg(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<bool>>(x.size());
  std::vector<T> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool keep = rng.uniform() >= p;
    (*mask)[i] = keep;
    v[i] = keep ? x.value()[i] * keep_scale : T(0);
  }
  auto xn = x.node();
  return Tensor<T>::op(x.shape(), std::move(v), {x}, [xn, mask, keep_scale](auto& n) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if ((*mask)[i]) xn->grad[i] += n.grad[i] * keep_scale;
  });
}

/// Mean squared error over all elements.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  check_shape(pred.shape() == target.shape(), "mse_loss: shape mismatch");
  const std::size_t n = pred.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.value()[i] - target.value()[i];
    acc += d * d;
  }
  const T inv = T(1) / static_cast<T>(n);
  auto pn = pred.node(), tn = target.node();
  return Tensor<T>::op({1}, {acc * inv}, {pred, target}, [pn, tn, inv](auto& node) {
    const T g = node.grad[0];
    if (pn->requires_grad) {
      pn->ensure_grad();
      for (std::size_t i = 0; i < pn->value.size(); ++i)
        pn->grad[i] += g * T(2) * (pn->value[i] - tn->value[i]) * inv;
    }
    if (tn->requires_grad) {
      tn->ensure_grad();
      for (std::size_t i = 0; i < tn->value.size(); ++i)
        tn->grad[i] -= g * T(2) * (pn->value[i] - tn->value[i]) * inv;
    }
  });
}

/// Mean binary cross entropy; predictions are clamped to [1e-7, 1-1e-7].
template <class T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  check_shape(pred.shape() == target.shape(), "bce_loss: shape mismatch");
  constexpr T eps = static_cast<T>(1e-7);
  const std::size_t n = pred.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T p = std::clamp(pred.value()[i], eps, T(1) - eps);
    const T t = target.value()[i];
    acc -= t * std::log(p) + (T(1) - t) * std::log(T(1) - p);
  }
  const T inv = T(1) / static_cast<T>(n);
  auto pn = pred.node(), tn = target.node();
  return Tensor<T>::op({1}, {acc * inv}, {pred, target}, [pn, tn, inv](auto& node) {
    const T g = node.grad[0];
    if (!pn->requires_grad) return;
    pn->ensure_grad();
    for (std::size_t i = 0; i < pn->value.size(); ++i) {
      const T raw = pn->value[i];
      if (raw <= eps || raw >= T(1) - eps) continue;  // clamped: flat
      const T t = tn->value[i];
      pn->grad[i] += g * inv * (-t / raw + (T(1) - t) / (T(1) - raw));
    }
  });
}

}  // namespace voxrender
