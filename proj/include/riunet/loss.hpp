#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "riunet/tensor.hpp"

namespace riunet {

template <class Scalar>
using RowMajorMapL =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Per-pixel channel softmax of [N,K,H,W] logits, computed with a max shift so
// large activations cannot overflow.
template <class Scalar>
Tensor<Scalar> softmax_probs(const Tensor<Scalar>& logits) {
  detail::check(logits.shape().size() == 4,
                "softmax_probs expects [N,K,H,W] logits, got " + shape_str(logits.shape()));
  const Index N = logits.extent(0), K = logits.extent(1), hw = logits.extent(2) * logits.extent(3);
  ArrayX<Scalar> out(logits.numel());
  for (Index n = 0; n < N; ++n) {
    for (Index j = 0; j < hw; ++j) {
      const Scalar* a = logits.data().data() + n * K * hw + j;
      Scalar* p = out.data() + n * K * hw + j;
      Scalar m = a[0];
      for (Index k = 1; k < K; ++k) m = std::max(m, a[k * hw]);
      Scalar z = 0;
      for (Index k = 0; k < K; ++k) {
        p[k * hw] = std::exp(a[k * hw] - m);
        z += p[k * hw];
      }
      for (Index k = 0; k < K; ++k) p[k * hw] /= z;
    }
  }
  auto in_node = logits.node();
  auto backprop = [in_node, N, K, hw](TensorNode<Scalar>& node) {
    if (!in_node->requires_grad) return;
    for (Index n = 0; n < N; ++n) {
      for (Index j = 0; j < hw; ++j) {
        const Scalar* p = node.data.data() + n * K * hw + j;
        const Scalar* dy = node.grad.data() + n * K * hw + j;
        Scalar* dx = in_node->grad_ref().data() + n * K * hw + j;
        Scalar dot = 0;
        for (Index k = 0; k < K; ++k) dot += dy[k * hw] * p[k * hw];
        for (Index k = 0; k < K; ++k) dx[k * hw] += p[k * hw] * (dy[k * hw] - dot);
      }
    }
  };
  return Tensor<Scalar>::make_op(logits.shape(), std::move(out), {in_node}, std::move(backprop));
}

// Per-pixel channel log-softmax via shifted log-sum-exp.
template <class Scalar>
Tensor<Scalar> log_softmax_channels(const Tensor<Scalar>& logits) {
  detail::check(logits.shape().size() == 4,
                "log_softmax_channels expects [N,K,H,W] logits, got " + shape_str(logits.shape()));
  const Index N = logits.extent(0), K = logits.extent(1), hw = logits.extent(2) * logits.extent(3);
  ArrayX<Scalar> out(logits.numel());
  for (Index n = 0; n < N; ++n) {
    for (Index j = 0; j < hw; ++j) {
      const Scalar* a = logits.data().data() + n * K * hw + j;
      Scalar* y = out.data() + n * K * hw + j;
      Scalar m = a[0];
      for (Index k = 1; k < K; ++k) m = std::max(m, a[k * hw]);
      Scalar z = 0;
      for (Index k = 0; k < K; ++k) z += std::exp(a[k * hw] - m);
      const Scalar lse = m + std::log(z);
      for (Index k = 0; k < K; ++k) y[k * hw] = a[k * hw] - lse;
    }
  }
  auto in_node = logits.node();
  auto backprop = [in_node, N, K, hw](TensorNode<Scalar>& node) {
    if (!in_node->requires_grad) return;
    for (Index n = 0; n < N; ++n) {
      for (Index j = 0; j < hw; ++j) {
        const Scalar* y = node.data.data() + n * K * hw + j;
        const Scalar* dy = node.grad.data() + n * K * hw + j;
        Scalar* dx = in_node->grad_ref().data() + n * K * hw + j;
        Scalar s = 0;
        for (Index k = 0; k < K; ++k) s += dy[k * hw];
        for (Index k = 0; k < K; ++k) dx[k * hw] += dy[k * hw] - std::exp(y[k * hw]) * s;
      }
    }
  };
  return Tensor<Scalar>::make_op(logits.shape(), std::move(out), {in_node}, std::move(backprop));
}

template <class Scalar>
struct LossValue {
  Tensor<Scalar> value;
  Index valid_pixel_count = 0;
};

// Masked, per-pixel-weighted cross-entropy over [N,K,H,W] logits:
//   loss = -(1 / sum_valid w) * sum_valid w(x) * log p_label(x)(x)
// Invalid pixels contribute neither value nor gradient. labels/mask/weights
// are flat N*H*W arrays in image order.
template <class Scalar>
LossValue<Scalar> masked_weighted_cross_entropy(const Tensor<Scalar>& logits,
                                                const std::vector<int32_t>& labels,
                                                const std::vector<uint8_t>& mask,
                                                const ArrayX<Scalar>& weights) {
  detail::check(logits.shape().size() == 4,
                "masked_weighted_cross_entropy expects [N,K,H,W] logits, got " +
                    shape_str(logits.shape()));
  const Index N = logits.extent(0), K = logits.extent(1);
  const Index hw = logits.extent(2) * logits.extent(3);
  const Index npix = N * hw;
  detail::check(static_cast<Index>(labels.size()) == npix &&
                    static_cast<Index>(mask.size()) == npix && weights.size() == npix,
                "masked_weighted_cross_entropy: labels/mask/weights must have N*H*W entries");

  Tensor<Scalar> logp = log_softmax_channels(logits);

  double sum_w = 0.0;
  Index valid = 0;
  for (Index i = 0; i < npix; ++i) {
    if (mask[static_cast<size_t>(i)]) {
      sum_w += double(weights[i]);
      ++valid;
    }
  }
  detail::check(valid > 0, "masked_weighted_cross_entropy: no valid pixels in batch");
  detail::check(sum_w > 0.0, "masked_weighted_cross_entropy: total valid weight must be positive");

  double acc = 0.0;
  for (Index n = 0; n < N; ++n) {
    for (Index j = 0; j < hw; ++j) {
      const Index i = n * hw + j;
      if (!mask[static_cast<size_t>(i)]) continue;
      const int32_t l = labels[static_cast<size_t>(i)];
      detail::check(l >= 0 && l < K, "masked_weighted_cross_entropy: label " + std::to_string(l) +
                                         " out of range [0," + std::to_string(K) + ")");
      acc += double(weights[i]) * double(logp.data()[n * K * hw + Index(l) * hw + j]);
    }
  }
  ArrayX<Scalar> v(1);
  v[0] = Scalar(-acc / sum_w);

  auto logp_node = logp.node();
  auto labels_copy = std::make_shared<std::vector<int32_t>>(labels);
  auto mask_copy = std::make_shared<std::vector<uint8_t>>(mask);
  auto w_copy = std::make_shared<ArrayX<Scalar>>(weights);
  auto backprop = [logp_node, labels_copy, mask_copy, w_copy, N, K, hw,
                   sum_w](TensorNode<Scalar>& node) {
    if (!logp_node->requires_grad) return;
    const Scalar gout = node.grad[0];
    ArrayX<Scalar>& dlp = logp_node->grad_ref();
    for (Index n = 0; n < N; ++n) {
      for (Index j = 0; j < hw; ++j) {
        const Index i = n * hw + j;
        if (!(*mask_copy)[static_cast<size_t>(i)]) continue;
        const Index l = Index((*labels_copy)[static_cast<size_t>(i)]);
        dlp[n * K * hw + l * hw + j] -= gout * Scalar(double((*w_copy)[i]) / sum_w);
      }
    }
  };
  LossValue<Scalar> result;
  result.value =
      Tensor<Scalar>::make_op({}, std::move(v), {logp_node}, std::move(backprop));
  result.valid_pixel_count = valid;
  return result;
}

// ---------------------------------------------------------------------------
// Boundary-emphasis weight maps

struct WeightMapParams {
  double w0 = 10.0;
  double sigma = 5.0;
  bool class_balance = true;
  double balance_clamp_lo = 0.1;
  double balance_clamp_hi = 10.0;
};

// Inverse-frequency class weights from per-class valid-pixel counts, clamped
// and rescaled so the pixel-weighted mean over the counted set is 1.
std::vector<double> class_balance_weights(const std::vector<int64_t>& class_pixel_counts,
                                          double clamp_lo, double clamp_hi);

// For every pixel, Euclidean distances (in pixels) to the nearest and second
// nearest label regions among valid pixels. Pixels see their own region at
// distance 0; with fewer than two labels present d2 is +infinity.
std::pair<std::vector<float>, std::vector<float>> label_distance_fields(
    const std::vector<uint8_t>& labels, const std::vector<uint8_t>& mask, int height, int width);

// w(x) = w_c(label(x)) + w0 * exp(-(d1+d2)^2 / (2 sigma^2)) on valid pixels,
// 0 on invalid ones. `class_weights` may be empty for uniform w_c = 1.
std::vector<float> boundary_weight_map(const std::vector<uint8_t>& labels,
                                       const std::vector<uint8_t>& mask, int height, int width,
                                       const WeightMapParams& params,
                                       const std::vector<double>& class_weights);

}  // namespace riunet
