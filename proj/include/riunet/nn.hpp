#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "riunet/optim.hpp"
#include "riunet/tensor.hpp"

namespace riunet {

template <class Scalar>
using RowMajorMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Scalar>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

inline void check_4d(const std::vector<Index>& shape, const char* who) {
  check(shape.size() == 4, std::string(who) + " expects a 4-D tensor, got " + shape_str(shape));
}

// Gather k_h x k_w patches around every output pixel into a (C*kh*kw) x (Ho*Wo)
// column-major matrix; out-of-bounds taps read as zero.
template <class Scalar>
void im2col(const Scalar* x, Index C, Index H, Index W, Index kh, Index kw, Index pad, Index Ho,
            Index Wo, Scalar* patches) {
  const Index ckk = C * kh * kw;
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      Scalar* col = patches + (oy * Wo + ox) * ckk;
      Index r = 0;
      for (Index c = 0; c < C; ++c) {
        const Scalar* plane = x + c * H * W;
        for (Index ky = 0; ky < kh; ++ky) {
          const Index iy = oy - pad + ky;
          const bool row_ok = iy >= 0 && iy < H;
          for (Index kx = 0; kx < kw; ++kx, ++r) {
            const Index ix = ox - pad + kx;
            col[r] = (row_ok && ix >= 0 && ix < W) ? plane[iy * W + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patch gradients back onto the image.
template <class Scalar>
void col2im_add(const Scalar* patches, Index C, Index H, Index W, Index kh, Index kw, Index pad,
                Index Ho, Index Wo, Scalar* dx) {
  const Index ckk = C * kh * kw;
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      const Scalar* col = patches + (oy * Wo + ox) * ckk;
      Index r = 0;
      for (Index c = 0; c < C; ++c) {
        Scalar* plane = dx + c * H * W;
        for (Index ky = 0; ky < kh; ++ky) {
          const Index iy = oy - pad + ky;
          const bool row_ok = iy >= 0 && iy < H;
          for (Index kx = 0; kx < kw; ++kx, ++r) {
            const Index ix = ox - pad + kx;
            if (row_ok && ix >= 0 && ix < W) plane[iy * W + ix] += col[r];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D cross-correlation over NCHW input with zero padding, stride 1.
template <class Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index padding) {
  detail::check_4d(input.shape(), "conv2d input");
  detail::check_4d(weight.shape(), "conv2d weight");
  detail::check(padding >= 0, "conv2d: padding must be non-negative");
  const Index N = input.extent(0), Cin = input.extent(1), H = input.extent(2), W = input.extent(3);
  const Index Cout = weight.extent(0), kh = weight.extent(2), kw = weight.extent(3);
  detail::check(kh >= 1 && kw >= 1, "conv2d: kernel extents must be >= 1");
  detail::check(weight.extent(1) == Cin,
                "conv2d: input channels (" + std::to_string(Cin) +
                    ") do not match weight input channels (" + std::to_string(weight.extent(1)) +
                    ")");
  detail::check(bias.numel() == Cout, "conv2d: bias length " + std::to_string(bias.numel()) +
                                          " does not match output channels " +
                                          std::to_string(Cout));
  const Index Ho = H + 2 * padding - kh + 1;
  const Index Wo = W + 2 * padding - kw + 1;
  detail::check(Ho >= 1 && Wo >= 1,
                "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " with padding " + std::to_string(padding) + " does not fit input " +
                    shape_str(input.shape()));

  const Index ckk = Cin * kh * kw;
  const Index out_hw = Ho * Wo;
  ArrayX<Scalar> out(N * Cout * out_hw);
  {
    MatX<Scalar> patches(ckk, out_hw);
    ConstRowMajorMap<Scalar> wmat(weight.data().data(), Cout, ckk);
    for (Index n = 0; n < N; ++n) {
      detail::im2col(input.data().data() + n * Cin * H * W, Cin, H, W, kh, kw, padding, Ho, Wo,
                     patches.data());
      RowMajorMap<Scalar> out_n(out.data() + n * Cout * out_hw, Cout, out_hw);
      out_n.noalias() = wmat * patches;
      for (Index c = 0; c < Cout; ++c) out_n.row(c).array() += bias.data()[c];
    }
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.node();
  auto backprop = [in_node, w_node, b_node, N, Cin, H, W, Cout, kh, kw, padding, Ho,
                   Wo](TensorNode<Scalar>& node) {
    const Index ckk = Cin * kh * kw;
    const Index out_hw = Ho * Wo;
    MatX<Scalar> patches(ckk, out_hw);
    MatX<Scalar> dpatches;
    ConstRowMajorMap<Scalar> wmat(w_node->data.data(), Cout, ckk);
    for (Index n = 0; n < N; ++n) {
      ConstRowMajorMap<Scalar> dout_n(node.grad.data() + n * Cout * out_hw, Cout, out_hw);
      if (w_node->requires_grad) {
        detail::im2col(in_node->data.data() + n * Cin * H * W, Cin, H, W, kh, kw, padding, Ho, Wo,
                       patches.data());
        RowMajorMap<Scalar> dw(w_node->grad_ref().data(), Cout, ckk);
        dw.noalias() += dout_n * patches.transpose();
      }
      if (b_node->requires_grad) {
        Eigen::Map<MatX<Scalar>> db(b_node->grad_ref().data(), Cout, 1);
        db.noalias() += dout_n.rowwise().sum();
      }
      if (in_node->requires_grad) {
        dpatches.noalias() = wmat.transpose() * dout_n;
        detail::col2im_add(dpatches.data(), Cin, H, W, kh, kw, padding, Ho, Wo,
                           in_node->grad_ref().data() + n * Cin * H * W);
      }
    }
  };
  return Tensor<Scalar>::make_op({N, Cout, Ho, Wo}, std::move(out), {in_node, w_node, b_node},
                                 std::move(backprop));
}

// 2x2 stride-2 transposed convolution: exact doubling of both spatial extents.
// Weight layout is [Cin, Cout, 2, 2]; no bias (a batchnorm follows in the model).
template <class Scalar>
Tensor<Scalar> transposed_conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight) {
  detail::check_4d(input.shape(), "transposed_conv2d input");
  detail::check_4d(weight.shape(), "transposed_conv2d weight");
  const Index N = input.extent(0), Cin = input.extent(1), H = input.extent(2), W = input.extent(3);
  detail::check(weight.extent(0) == Cin,
                "transposed_conv2d: input channels (" + std::to_string(Cin) +
                    ") do not match weight input channels (" + std::to_string(weight.extent(0)) +
                    ")");
  detail::check(weight.extent(2) == 2 && weight.extent(3) == 2,
                "transposed_conv2d: kernel must be 2x2, got " + shape_str(weight.shape()));
  const Index Cout = weight.extent(1);
  const Index Ho = 2 * H, Wo = 2 * W;
  const Index hw = H * W;

  // One Cin x Cout slice per kernel tap. Captures by value: the backprop
  // closure outlives this scope.
  auto tap_matrix = [Cin, Cout](const Scalar* w, Index dy, Index dx) {
    MatX<Scalar> m(Cin, Cout);
    for (Index ci = 0; ci < Cin; ++ci)
      for (Index co = 0; co < Cout; ++co) m(ci, co) = w[((ci * Cout + co) * 2 + dy) * 2 + dx];
    return m;
  };

  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(N * Cout * Ho * Wo);
  {
    MatX<Scalar> t(Cout, hw);
    for (Index dy = 0; dy < 2; ++dy) {
      for (Index dx = 0; dx < 2; ++dx) {
        MatX<Scalar> wtap = tap_matrix(weight.data().data(), dy, dx);
        for (Index n = 0; n < N; ++n) {
          ConstRowMajorMap<Scalar> x_n(input.data().data() + n * Cin * hw, Cin, hw);
          t.noalias() = wtap.transpose() * x_n;
          for (Index co = 0; co < Cout; ++co) {
            Scalar* plane = out.data() + (n * Cout + co) * Ho * Wo;
            for (Index y = 0; y < H; ++y) {
              for (Index x = 0; x < W; ++x) {
                plane[(2 * y + dy) * Wo + (2 * x + dx)] = t(co, y * W + x);
              }
            }
          }
        }
      }
    }
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  auto backprop = [in_node, w_node, N, Cin, Cout, H, W, Ho, Wo, tap_matrix](TensorNode<Scalar>& node) {
    const Index hw = H * W;
    MatX<Scalar> dt(Cout, hw);
    for (Index dy = 0; dy < 2; ++dy) {
      for (Index dx = 0; dx < 2; ++dx) {
        MatX<Scalar> wtap = tap_matrix(w_node->data.data(), dy, dx);
        MatX<Scalar> dwtap = MatX<Scalar>::Zero(Cin, Cout);
        for (Index n = 0; n < N; ++n) {
          for (Index co = 0; co < Cout; ++co) {
            const Scalar* plane = node.grad.data() + (n * Cout + co) * Ho * Wo;
            for (Index y = 0; y < H; ++y)
              for (Index x = 0; x < W; ++x) dt(co, y * W + x) = plane[(2 * y + dy) * Wo + (2 * x + dx)];
          }
          ConstRowMajorMap<Scalar> x_n(in_node->data.data() + n * Cin * hw, Cin, hw);
          if (in_node->requires_grad) {
            RowMajorMap<Scalar> dx_n(in_node->grad_ref().data() + n * Cin * hw, Cin, hw);
            dx_n.noalias() += wtap * dt;
          }
          if (w_node->requires_grad) dwtap.noalias() += x_n * dt.transpose();
        }
        if (w_node->requires_grad) {
          Scalar* dw = w_node->grad_ref().data();
          for (Index ci = 0; ci < Cin; ++ci)
            for (Index co = 0; co < Cout; ++co)
              dw[((ci * Cout + co) * 2 + dy) * 2 + dx] += dwtap(ci, co);
        }
      }
    }
  };
  return Tensor<Scalar>::make_op({N, Cout, Ho, Wo}, std::move(out), {in_node, w_node},
                                 std::move(backprop));
}

template <class Scalar>
struct MaxPoolResult {
  Tensor<Scalar> output;
  // Flat index into the input data of each window's winner.
  std::shared_ptr<std::vector<Index>> argmax;
};

// 2x2 max-pooling, stride 2. Ties break to the first maximal element in
// row-major window order; the backward pass routes gradient to that element.
template <class Scalar>
MaxPoolResult<Scalar> maxpool2d(const Tensor<Scalar>& input) {
  detail::check_4d(input.shape(), "maxpool2d input");
  const Index N = input.extent(0), C = input.extent(1), H = input.extent(2), W = input.extent(3);
  detail::check(H % 2 == 0 && W % 2 == 0,
                "maxpool2d: spatial extents must be even, got " + shape_str(input.shape()));
  const Index Ho = H / 2, Wo = W / 2;
  ArrayX<Scalar> out(N * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<size_t>(out.size()));
  const Scalar* x = input.data().data();
  Index o = 0;
  for (Index nc = 0; nc < N * C; ++nc) {
    const Index base = nc * H * W;
    for (Index oy = 0; oy < Ho; ++oy) {
      for (Index ox = 0; ox < Wo; ++ox, ++o) {
        Index best = base + (2 * oy) * W + 2 * ox;
        Scalar best_v = x[best];
        const Index cands[3] = {base + (2 * oy) * W + 2 * ox + 1, base + (2 * oy + 1) * W + 2 * ox,
                                base + (2 * oy + 1) * W + 2 * ox + 1};
        for (Index cand : cands) {
          if (x[cand] > best_v) {
            best_v = x[cand];
            best = cand;
          }
        }
        out[o] = best_v;
        (*argmax)[static_cast<size_t>(o)] = best;
      }
    }
  }

  auto in_node = input.node();
  auto backprop = [in_node, argmax](TensorNode<Scalar>& node) {
    if (!in_node->requires_grad) return;
    ArrayX<Scalar>& dx = in_node->grad_ref();
    const ArrayX<Scalar>& dout = node.grad;
    for (Index i = 0; i < dout.size(); ++i) dx[(*argmax)[static_cast<size_t>(i)]] += dout[i];
  };
  MaxPoolResult<Scalar> result;
  result.output = Tensor<Scalar>::make_op({N, C, Ho, Wo}, std::move(out), {in_node},
                                          std::move(backprop));
  result.argmax = argmax;
  return result;
}

// Elementwise max(0, x); subgradient at 0 is 0.
template <class Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  ArrayX<Scalar> out = input.data().max(Scalar(0));
  auto in_node = input.node();
  auto backprop = [in_node](TensorNode<Scalar>& node) {
    if (!in_node->requires_grad) return;
    ArrayX<Scalar>& dx = in_node->grad_ref();
    dx += (in_node->data > Scalar(0)).template cast<Scalar>() * node.grad;
  };
  return Tensor<Scalar>::make_op(input.shape(), std::move(out), {in_node}, std::move(backprop));
}

// Channel concatenation: `a` occupies the first Ca channels of the result.
template <class Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::check_4d(a.shape(), "concat_channels a");
  detail::check_4d(b.shape(), "concat_channels b");
  const Index N = a.extent(0), Ca = a.extent(1), H = a.extent(2), W = a.extent(3);
  const Index Cb = b.extent(1);
  detail::check(b.extent(0) == N && b.extent(2) == H && b.extent(3) == W,
                "concat_channels: batch/spatial extents differ: " + shape_str(a.shape()) +
                    " vs " + shape_str(b.shape()));
  const Index hw = H * W;
  ArrayX<Scalar> out(N * (Ca + Cb) * hw);
  for (Index n = 0; n < N; ++n) {
    out.segment(n * (Ca + Cb) * hw, Ca * hw) = a.data().segment(n * Ca * hw, Ca * hw);
    out.segment(n * (Ca + Cb) * hw + Ca * hw, Cb * hw) = b.data().segment(n * Cb * hw, Cb * hw);
  }
  auto a_node = a.node();
  auto b_node = b.node();
  auto backprop = [a_node, b_node, N, Ca, Cb, hw](TensorNode<Scalar>& node) {
    for (Index n = 0; n < N; ++n) {
      if (a_node->requires_grad)
        a_node->grad_ref().segment(n * Ca * hw, Ca * hw) +=
            node.grad.segment(n * (Ca + Cb) * hw, Ca * hw);
      if (b_node->requires_grad)
        b_node->grad_ref().segment(n * Cb * hw, Cb * hw) +=
            node.grad.segment(n * (Ca + Cb) * hw + Ca * hw, Cb * hw);
    }
  };
  return Tensor<Scalar>::make_op({N, Ca + Cb, H, W}, std::move(out), {a_node, b_node},
                                 std::move(backprop));
}

// Per-channel batch normalization state. Training mode normalizes by batch
// statistics (biased variance) and folds them into the running estimates as
// running <- momentum * running + (1 - momentum) * batch; inference mode uses
// the running estimates and mutates nothing.
template <class Scalar>
struct BatchNormState {
  Parameter<Scalar> gamma;
  Parameter<Scalar> beta;
  ArrayX<Scalar> running_mean;
  ArrayX<Scalar> running_var;
  Scalar momentum = Scalar(0.99);
  Scalar eps = Scalar(1e-5);
  bool training = true;

  BatchNormState() = default;

  BatchNormState(const std::string& name_prefix, Index channels)
      : gamma(name_prefix + ".gamma", Tensor<Scalar>::filled({channels}, Scalar(1))),
        beta(name_prefix + ".beta", Tensor<Scalar>::zeros({channels})),
        running_mean(ArrayX<Scalar>::Zero(channels)),
        running_var(ArrayX<Scalar>::Constant(channels, Scalar(1))) {}

  Index channels() const { return running_mean.size(); }
};

template <class Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& input, BatchNormState<Scalar>& state) {
  detail::check_4d(input.shape(), "batchnorm2d input");
  const Index N = input.extent(0), C = input.extent(1), H = input.extent(2), W = input.extent(3);
  detail::check(C == state.channels(), "batchnorm2d: input channels (" + std::to_string(C) +
                                           ") do not match state channels (" +
                                           std::to_string(state.channels()) + ")");
  const Index hw = H * W;
  const Index m = N * hw;  // samples per channel
  if (state.training)
    detail::check(m >= 2, "batchnorm2d: training mode needs N*H*W >= 2 to define a variance");

  ArrayX<Scalar> mean(C), inv_std(C);
  if (state.training) {
    for (Index c = 0; c < C; ++c) {
      double sum = 0.0;
      for (Index n = 0; n < N; ++n)
        sum += input.data().segment((n * C + c) * hw, hw).template cast<double>().sum();
      const double mu = sum / double(m);
      double ss = 0.0;
      for (Index n = 0; n < N; ++n)
        ss += (input.data().segment((n * C + c) * hw, hw).template cast<double>() - mu)
                  .square()
                  .sum();
      const double var = ss / double(m);
      mean[c] = Scalar(mu);
      inv_std[c] = Scalar(1.0 / std::sqrt(var + double(state.eps)));
      state.running_mean[c] = state.momentum * state.running_mean[c] + (Scalar(1) - state.momentum) * Scalar(mu);
      state.running_var[c] = state.momentum * state.running_var[c] + (Scalar(1) - state.momentum) * Scalar(var);
      state.running_var[c] = std::max(state.running_var[c], state.eps);
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = Scalar(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  ArrayX<Scalar> out(input.numel());
  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      const Index off = (n * C + c) * hw;
      out.segment(off, hw) =
          (input.data().segment(off, hw) - mean[c]) * inv_std[c] * state.gamma.value.data()[c] +
          state.beta.value.data()[c];
    }
  }

  auto in_node = input.node();
  auto gamma_node = state.gamma.value.node();
  auto beta_node = state.beta.value.node();
  const bool train_mode = state.training;
  auto backprop = [in_node, gamma_node, beta_node, mean, inv_std, N, C, hw,
                   train_mode](TensorNode<Scalar>& node) {
    const Index m = N * hw;
    for (Index c = 0; c < C; ++c) {
      // Fixed-order reductions over the channel's N*H*W elements.
      Scalar sum_dy = 0, sum_dy_xhat = 0;
      for (Index n = 0; n < N; ++n) {
        const Index off = (n * C + c) * hw;
        auto dy = node.grad.segment(off, hw);
        auto xhat = (in_node->data.segment(off, hw) - mean[c]) * inv_std[c];
        sum_dy += dy.sum();
        sum_dy_xhat += (dy * xhat).sum();
      }
      if (gamma_node->requires_grad) gamma_node->grad_ref()[c] += sum_dy_xhat;
      if (beta_node->requires_grad) beta_node->grad_ref()[c] += sum_dy;
      if (in_node->requires_grad) {
        const Scalar g = gamma_node->data[c] * inv_std[c];
        for (Index n = 0; n < N; ++n) {
          const Index off = (n * C + c) * hw;
          auto dy = node.grad.segment(off, hw);
          if (train_mode) {
            auto xhat = (in_node->data.segment(off, hw) - mean[c]) * inv_std[c];
            in_node->grad_ref().segment(off, hw) +=
                g * (dy - (sum_dy + xhat * sum_dy_xhat) / Scalar(m));
          } else {
            in_node->grad_ref().segment(off, hw) += g * dy;
          }
        }
      }
    }
  };
  return Tensor<Scalar>::make_op(input.shape(), std::move(out),
                                 {in_node, gamma_node, beta_node}, std::move(backprop));
}

}  // namespace riunet
