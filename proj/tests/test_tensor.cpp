#include <cmath>

#include "doctest.h"
#include "riunet/nn.hpp"
#include "riunet/rng.hpp"
#include "riunet/tensor.hpp"

using namespace riunet;

namespace {

// y = a*b + a elementwise, built directly on make_op to exercise the tape.
Tensor<double> mul_add(const Tensor<double>& a, const Tensor<double>& b) {
  auto an = a.node();
  auto bn = b.node();
  ArrayX<double> out = an->data * bn->data + an->data;
  auto backprop = [an, bn](TensorNode<double>& node) {
    if (an->requires_grad) an->grad_ref() += (bn->data + 1.0) * node.grad;
    if (bn->requires_grad) bn->grad_ref() += an->data * node.grad;
  };
  return Tensor<double>::make_op(a.shape(), std::move(out), {an, bn}, std::move(backprop));
}

Tensor<double> sum_all(const Tensor<double>& x) {
  auto xn = x.node();
  ArrayX<double> v(1);
  v[0] = xn->data.sum();
  auto backprop = [xn](TensorNode<double>& node) {
    if (xn->requires_grad) xn->grad_ref() += node.grad[0];
  };
  return Tensor<double>::make_op({}, std::move(v), {xn}, std::move(backprop));
}

}  // namespace

TEST_CASE("tensor construction and shapes") {
  auto t = Tensor<float>::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.extent(0) == 2);
  CHECK(t.extent(1) == 3);
  CHECK(t.numel() == 6);
  CHECK(t.data()[5] == 6.0f);

  auto s = Tensor<float>::scalar(2.5f);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.value() == 2.5f);

  CHECK_THROWS_AS(Tensor<float>::from_values({2, 2}, {1, 2, 3}), TensorError);
}

TEST_CASE("backward accumulates over a shared parent") {
  auto a = Tensor<double>::from_values({3}, {1, 2, 3}, true);
  auto b = Tensor<double>::from_values({3}, {4, 5, 6}, true);
  auto y = mul_add(a, b);       // a*b + a
  auto z = mul_add(a, y);       // a*(a*b+a) + a — a reachable on two paths
  auto loss = sum_all(z);
  loss.backward(false);

  // dz/da = (y + 1) + a*(b + 1), dz/db = a*a
  for (int i = 0; i < 3; ++i) {
    const double av = a.data()[i], bv = b.data()[i];
    const double yv = av * bv + av;
    CHECK(a.grad()[i] == doctest::Approx((yv + 1) + av * (bv + 1)).epsilon(1e-12));
    CHECK(b.grad()[i] == doctest::Approx(av * av).epsilon(1e-12));
  }
}

TEST_CASE("backward on a diamond graph visits each node once") {
  auto a = Tensor<double>::from_values({2}, {1.5, -0.5}, true);
  auto left = mul_add(a, a);
  auto out = mul_add(left, left);
  auto loss = sum_all(out);
  loss.backward(false);
  // out = l*l + l with l = a*a + a; d out/da = (2l+1)(2a+1)
  for (int i = 0; i < 2; ++i) {
    const double av = a.data()[i];
    const double l = av * av + av;
    CHECK(a.grad()[i] == doctest::Approx((2 * l + 1) * (2 * av + 1)).epsilon(1e-12));
  }
}

TEST_CASE("release_graph frees interior buffers but keeps leaf grads") {
  auto a = Tensor<double>::from_values({4}, {1, 2, 3, 4}, true);
  auto mid = mul_add(a, a);
  auto loss = sum_all(mid);
  auto mid_node = mid.node();
  loss.backward(true);
  CHECK(a.grad_written());
  CHECK(mid_node->data.size() == 0);
  CHECK(!mid_node->backprop);
}

TEST_CASE("NoGradGuard suppresses taping") {
  auto a = Tensor<double>::from_values({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    auto y = mul_add(a, a);
    CHECK(y.node()->is_leaf());
    CHECK(!y.requires_grad());
  }
  auto y2 = mul_add(a, a);
  CHECK(!y2.node()->is_leaf());
}

TEST_CASE("ops on constant inputs stay untaped") {
  auto a = Tensor<double>::from_values({2}, {1, 2});
  auto y = mul_add(a, a);
  CHECK(y.node()->is_leaf());
}

TEST_CASE("zero_grad and drop_grad") {
  auto a = Tensor<double>::from_values({2}, {3, 4}, true);
  auto loss = sum_all(mul_add(a, a));
  loss.backward();
  CHECK(a.grad_written());
  a.zero_grad();
  CHECK(a.grad()[0] == 0.0);
  a.drop_grad();
  CHECK(!a.grad_written());
}

TEST_CASE("second backward after release is rejected") {
  auto a = Tensor<double>::from_values({2}, {1, 2}, true);
  auto loss = sum_all(mul_add(a, a));
  loss.backward(true);
  CHECK_THROWS_AS(loss.backward(true), TensorError);
}

TEST_CASE("relu forward and strict-positive gate") {
  auto x = Tensor<double>::from_values({1, 1, 2, 2}, {-1, 0, 2, -3}, true);
  auto y = relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);
  auto loss = sum_all(y);
  loss.backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);  // gradient does not pass at exactly zero
  CHECK(x.grad()[2] == 1.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("mix_seed decorrelates and Rng reproduces") {
  CHECK(mix_seed(1, 2) != mix_seed(1, 3));
  CHECK(mix_seed(1, 2) != mix_seed(2, 2));
  Rng r1(42), r2(42);
  for (int i = 0; i < 100; ++i) CHECK(r1.uniform() == r2.uniform());
  Rng r3(42);
  double lo = 1, hi = 0;
  for (int i = 0; i < 1000; ++i) {
    const double u = r3.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(lo < 0.1);
  CHECK(hi > 0.9);
}

TEST_CASE("Rng uniform_int covers [0,n) uniformly enough") {
  Rng rng(7);
  int counts[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < 5000; ++i) ++counts[rng.uniform_int(5)];
  for (int c : counts) {
    CHECK(c > 800);
    CHECK(c < 1200);
  }
}

TEST_CASE("Rng shuffle is a permutation and seed-stable") {
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
  Rng a(123);
  a.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});

  std::vector<int> w = {0, 1, 2, 3, 4, 5, 6, 7};
  Rng b(123);
  b.shuffle(w);
  CHECK(v == w);
}
