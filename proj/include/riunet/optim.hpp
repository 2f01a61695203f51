#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "riunet/tensor.hpp"

namespace riunet {

// A named trainable leaf plus its Adam moment accumulators.
template <class Scalar>
struct Parameter {
  Tensor<Scalar> value;
  std::string name;
  ArrayX<Scalar> adam_m;
  ArrayX<Scalar> adam_v;
  int64_t step_count = 0;

  Parameter() = default;

  Parameter(std::string param_name, Tensor<Scalar> v) : value(std::move(v)), name(std::move(param_name)) {
    value.set_requires_grad(true);
    adam_m = ArrayX<Scalar>::Zero(value.numel());
    adam_v = ArrayX<Scalar>::Zero(value.numel());
  }

  void zero_grad() { value.zero_grad(); }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// In-place Adam update with bias correction; consumes (clears) the gradients.
template <class Scalar>
void adam_step(const std::vector<Parameter<Scalar>*>& params, const AdamConfig& cfg) {
  for (Parameter<Scalar>* p : params) {
    detail::check(p->value.grad_written(),
                  "adam_step: parameter '" + p->name + "' has no gradient; run backward first");
  }
  for (Parameter<Scalar>* p : params) {
    const ArrayX<Scalar>& g = p->value.grad();
    p->step_count += 1;
    const Scalar b1 = Scalar(cfg.beta1);
    const Scalar b2 = Scalar(cfg.beta2);
    p->adam_m = b1 * p->adam_m + (Scalar(1) - b1) * g;
    p->adam_v = b2 * p->adam_v + (Scalar(1) - b2) * g.square();
    const Scalar corr1 = Scalar(1.0 - std::pow(cfg.beta1, double(p->step_count)));
    const Scalar corr2 = Scalar(1.0 - std::pow(cfg.beta2, double(p->step_count)));
    ArrayX<Scalar> m_hat = p->adam_m / corr1;
    ArrayX<Scalar> v_hat = p->adam_v / corr2;
    p->value.data() -= Scalar(cfg.lr) * m_hat / (v_hat.sqrt() + Scalar(cfg.eps));
    p->value.drop_grad();
  }
}

}  // namespace riunet
