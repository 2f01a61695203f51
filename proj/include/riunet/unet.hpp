#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "riunet/checkpoint.hpp"
#include "riunet/nn.hpp"
#include "riunet/optim.hpp"
#include "riunet/projection.hpp"
#include "riunet/rng.hpp"

namespace riunet {

struct ModelConfig {
  int in_channels = 2;
  int num_classes = 4;
  int depth = 4;          // pool/unpool stages; channels double per stage
  int base_channels = 64; // width of the first encoder stage
  int height = 64;        // nominal input size, must divide by 2^depth
  int width = 512;
  double bn_momentum = 0.99;

  void validate() const {
    detail::check(in_channels >= 1 && num_classes >= 2, "ModelConfig: need >=1 input channel, >=2 classes");
    detail::check(depth >= 1 && depth <= 8, "ModelConfig: depth out of range");
    detail::check(base_channels >= 1, "ModelConfig: base_channels must be positive");
    detail::check(bn_momentum > 0 && bn_momentum < 1, "ModelConfig: bn_momentum must lie in (0,1)");
    const int div = 1 << depth;
    detail::check(height % div == 0 && width % div == 0,
                  "ModelConfig: " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by 2^depth = " + std::to_string(div));
  }
};

// conv3x3(pad 1) -> batchnorm -> relu
template <class Scalar>
struct ConvBnRelu {
  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
  BatchNormState<Scalar> bn;
  std::string prefix;

  ConvBnRelu() = default;

  ConvBnRelu(const std::string& name, Index cin, Index cout, Index k, double bn_momentum, Rng& rng)
      : prefix(name) {
    const double bound = std::sqrt(6.0 / double(cin * k * k));
    ArrayX<Scalar> w(cout * cin * k * k);
    for (Index i = 0; i < w.size(); ++i) w[i] = Scalar(rng.uniform(-bound, bound));
    weight = Parameter<Scalar>(name + ".conv.weight",
                               Tensor<Scalar>::from_array({cout, cin, k, k}, std::move(w)));
    bias = Parameter<Scalar>(name + ".conv.bias", Tensor<Scalar>::zeros({cout}));
    bn = BatchNormState<Scalar>(name + ".bn", cout);
    bn.momentum = Scalar(bn_momentum);
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) {
    const Index k = weight.value.extent(2);
    return relu(batchnorm2d(conv2d(x, weight.value, bias.value, (k - 1) / 2), bn));
  }
};

template <class Scalar>
struct DoubleConv {
  ConvBnRelu<Scalar> c1, c2;

  DoubleConv() = default;

  DoubleConv(const std::string& name, Index cin, Index cout, double bn_momentum, Rng& rng)
      : c1(name + ".c1", cin, cout, 3, bn_momentum, rng),
        c2(name + ".c2", cout, cout, 3, bn_momentum, rng) {}

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) { return c2(c1(x)); }
};

// 2x2 stride-2 transposed conv halving the channel count, then the skip
// concat and a double conv.
template <class Scalar>
struct UpBlock {
  Parameter<Scalar> up_weight;  // [cin, cout, 2, 2]
  DoubleConv<Scalar> conv;

  UpBlock() = default;

  UpBlock(const std::string& name, Index cin, Index cout, double bn_momentum, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(cin));
    ArrayX<Scalar> w(cin * cout * 4);
    for (Index i = 0; i < w.size(); ++i) w[i] = Scalar(rng.uniform(-bound, bound));
    up_weight = Parameter<Scalar>(name + ".up.weight",
                                  Tensor<Scalar>::from_array({cin, cout, 2, 2}, std::move(w)));
    conv = DoubleConv<Scalar>(name, 2 * cout, cout, bn_momentum, rng);
  }
};

template <class Scalar>
struct UNetModel {
  ModelConfig config;
  ChannelStats stats;  // input normalization carried along for inference
  std::vector<DoubleConv<Scalar>> encoder;
  DoubleConv<Scalar> bottleneck;
  std::vector<UpBlock<Scalar>> decoder;
  Parameter<Scalar> head_weight;
  Parameter<Scalar> head_bias;

  static UNetModel build(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x1417ull));
    UNetModel model;
    model.config = cfg;
    const Index base = cfg.base_channels;
    Index cin = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
      const Index cout = base << i;
      model.encoder.emplace_back("enc" + std::to_string(i), cin, cout, cfg.bn_momentum, rng);
      cin = cout;
    }
    model.bottleneck = DoubleConv<Scalar>("bottleneck", cin, base << cfg.depth, cfg.bn_momentum, rng);
    for (int j = 0; j < cfg.depth; ++j) {
      const Index up_in = base << (cfg.depth - j);
      model.decoder.emplace_back("dec" + std::to_string(j), up_in, up_in / 2, cfg.bn_momentum, rng);
    }
    {
      const double bound = std::sqrt(6.0 / double(base));
      ArrayX<Scalar> w(Index(cfg.num_classes) * base);
      for (Index i = 0; i < w.size(); ++i) w[i] = Scalar(rng.uniform(-bound, bound));
      model.head_weight = Parameter<Scalar>(
          "head.weight", Tensor<Scalar>::from_array({cfg.num_classes, base, 1, 1}, std::move(w)));
      model.head_bias = Parameter<Scalar>("head.bias", Tensor<Scalar>::zeros({cfg.num_classes}));
    }
    return model;
  }

  // Any spatial size divisible by 2^depth is accepted; config height/width
  // are the nominal deployment size, not a hard bound.
  Tensor<Scalar> forward(const Tensor<Scalar>& input) {
    detail::check_4d(input.shape(), "UNetModel::forward input");
    detail::check(input.extent(1) == config.in_channels, "UNetModel::forward: wrong channel count");
    const int div = 1 << config.depth;
    detail::check(input.extent(2) % div == 0 && input.extent(3) % div == 0,
                  "UNetModel::forward: spatial extents must divide by " + std::to_string(div));
    std::vector<Tensor<Scalar>> skips;
    skips.reserve(encoder.size());
    Tensor<Scalar> cur = input;
    for (auto& stage : encoder) {
      cur = stage(cur);
      skips.push_back(cur);
      cur = maxpool2d(cur).output;
    }
    cur = bottleneck(cur);
    for (size_t j = 0; j < decoder.size(); ++j) {
      cur = transposed_conv2d(cur, decoder[j].up_weight.value);
      cur = decoder[j].conv(concat_channels(skips[skips.size() - 1 - j], cur));
    }
    return conv2d(cur, head_weight.value, head_bias.value, 0);
  }

  void set_training(bool training) {
    for (auto* bn : batchnorms()) bn->training = training;
  }

  std::vector<BatchNormState<Scalar>*> batchnorms() {
    std::vector<BatchNormState<Scalar>*> out;
    auto add = [&](DoubleConv<Scalar>& dc) {
      out.push_back(&dc.c1.bn);
      out.push_back(&dc.c2.bn);
    };
    for (auto& stage : encoder) add(stage);
    add(bottleneck);
    for (auto& up : decoder) add(up.conv);
    return out;
  }

  // Fixed traversal order; init draws, Adam updates and checkpoints all use it.
  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    auto add_unit = [&](ConvBnRelu<Scalar>& u) {
      out.push_back(&u.weight);
      out.push_back(&u.bias);
      out.push_back(&u.bn.gamma);
      out.push_back(&u.bn.beta);
    };
    for (auto& stage : encoder) {
      add_unit(stage.c1);
      add_unit(stage.c2);
    }
    add_unit(bottleneck.c1);
    add_unit(bottleneck.c2);
    for (auto& up : decoder) {
      out.push_back(&up.up_weight);
      add_unit(up.conv.c1);
      add_unit(up.conv.c2);
    }
    out.push_back(&head_weight);
    out.push_back(&head_bias);
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (auto* p : parameters()) n += p->value.numel();
    return n;
  }
};

// Checkpoint entries for the model: one entry per parameter plus ".adam_m",
// ".adam_v", ".adam_t" companions, per-batchnorm running stats, and
// "__config.*" scalars describing the architecture and input normalization.
template <class Scalar>
std::vector<NamedArray> model_entries(UNetModel<Scalar>& model);

template <class Scalar>
void save_model(const std::string& path, UNetModel<Scalar>& model,
                std::vector<NamedArray> extra = {});

// Rebuilds the architecture from "__config.*" and fills every parameter,
// optimizer moment and running stat. Throws naming the first mismatch.
template <class Scalar>
UNetModel<Scalar> model_from_entries(const std::vector<NamedArray>& entries);

template <class Scalar>
UNetModel<Scalar> load_model(const std::string& path);

// --- implementation ---------------------------------------------------------

namespace detail {

inline std::vector<uint32_t> extents_u32(const std::vector<Index>& shape) {
  std::vector<uint32_t> out;
  out.reserve(shape.size());
  for (Index e : shape) out.push_back(uint32_t(e));
  return out;
}

template <class Scalar>
NamedArray scalar_entry(const std::string& name, double v) {
  return NamedArray{name, {1}, {float(v)}};
}

template <class Scalar>
void fill_from_entry(const std::vector<NamedArray>& entries, const std::string& name,
                     ArrayX<Scalar>& dst) {
  const NamedArray* e = find_entry(entries, name);
  check(e != nullptr, "checkpoint is missing entry '" + name + "'");
  check(e->size() == dst.size(), "checkpoint entry '" + name + "' has " + std::to_string(e->size()) +
                                     " values, expected " + std::to_string(dst.size()));
  for (Index i = 0; i < dst.size(); ++i) dst[i] = Scalar(e->data[size_t(i)]);
}

}  // namespace detail

template <class Scalar>
std::vector<NamedArray> model_entries(UNetModel<Scalar>& model) {
  std::vector<NamedArray> entries;
  auto push_array = [&](const std::string& name, std::vector<uint32_t> extents, const ArrayX<Scalar>& a) {
    NamedArray e;
    e.name = name;
    e.extents = std::move(extents);
    e.data.resize(size_t(a.size()));
    for (Index i = 0; i < a.size(); ++i) e.data[size_t(i)] = float(a[i]);
    entries.push_back(std::move(e));
  };
  const ModelConfig& c = model.config;
  entries.push_back(detail::scalar_entry<Scalar>("__config.in_channels", c.in_channels));
  entries.push_back(detail::scalar_entry<Scalar>("__config.num_classes", c.num_classes));
  entries.push_back(detail::scalar_entry<Scalar>("__config.depth", c.depth));
  entries.push_back(detail::scalar_entry<Scalar>("__config.base_channels", c.base_channels));
  entries.push_back(detail::scalar_entry<Scalar>("__config.height", c.height));
  entries.push_back(detail::scalar_entry<Scalar>("__config.width", c.width));
  entries.push_back(detail::scalar_entry<Scalar>("__config.bn_momentum", c.bn_momentum));
  for (int ch = 0; ch < 2; ++ch) {
    entries.push_back(detail::scalar_entry<Scalar>("__config.norm_mean." + std::to_string(ch),
                                                   model.stats.mean[ch]));
    entries.push_back(detail::scalar_entry<Scalar>("__config.norm_std." + std::to_string(ch),
                                                   model.stats.stdev[ch]));
  }
  for (Parameter<Scalar>* p : model.parameters()) {
    push_array(p->name, detail::extents_u32(p->value.shape()), p->value.data());
    push_array(p->name + ".adam_m", {uint32_t(p->adam_m.size())}, p->adam_m);
    push_array(p->name + ".adam_v", {uint32_t(p->adam_v.size())}, p->adam_v);
    entries.push_back(detail::scalar_entry<Scalar>(p->name + ".adam_t", double(p->step_count)));
  }
  for (BatchNormState<Scalar>* bn : model.batchnorms()) {
    const std::string prefix = bn->gamma.name.substr(0, bn->gamma.name.size() - 6);  // strip ".gamma"
    push_array(prefix + ".running_mean", {uint32_t(bn->running_mean.size())}, bn->running_mean);
    push_array(prefix + ".running_var", {uint32_t(bn->running_var.size())}, bn->running_var);
  }
  return entries;
}

template <class Scalar>
void save_model(const std::string& path, UNetModel<Scalar>& model, std::vector<NamedArray> extra) {
  std::vector<NamedArray> entries = model_entries(model);
  for (NamedArray& e : extra) entries.push_back(std::move(e));
  write_checkpoint(path, entries);
}

template <class Scalar>
UNetModel<Scalar> model_from_entries(const std::vector<NamedArray>& entries) {
  auto config_scalar = [&](const std::string& name) {
    const NamedArray* e = find_entry(entries, name);
    detail::check(e != nullptr && e->data.size() == 1, "checkpoint is missing scalar '" + name + "'");
    return double(e->data[0]);
  };
  ModelConfig cfg;
  cfg.in_channels = int(config_scalar("__config.in_channels"));
  cfg.num_classes = int(config_scalar("__config.num_classes"));
  cfg.depth = int(config_scalar("__config.depth"));
  cfg.base_channels = int(config_scalar("__config.base_channels"));
  cfg.height = int(config_scalar("__config.height"));
  cfg.width = int(config_scalar("__config.width"));
  cfg.bn_momentum = config_scalar("__config.bn_momentum");
  UNetModel<Scalar> model = UNetModel<Scalar>::build(cfg, 0);
  for (int ch = 0; ch < 2; ++ch) {
    model.stats.mean[ch] = float(config_scalar("__config.norm_mean." + std::to_string(ch)));
    model.stats.stdev[ch] = float(config_scalar("__config.norm_std." + std::to_string(ch)));
  }
  for (Parameter<Scalar>* p : model.parameters()) {
    const NamedArray* e = find_entry(entries, p->name);
    detail::check(e != nullptr, "checkpoint is missing parameter '" + p->name + "'");
    detail::check(detail::extents_u32(p->value.shape()) == e->extents,
                  "checkpoint entry '" + p->name + "' has mismatched extents");
    ArrayX<Scalar> v(p->value.numel());
    for (Index i = 0; i < v.size(); ++i) v[i] = Scalar(e->data[size_t(i)]);
    p->value.data() = v;
    detail::fill_from_entry(entries, p->name + ".adam_m", p->adam_m);
    detail::fill_from_entry(entries, p->name + ".adam_v", p->adam_v);
    p->step_count = int64_t(config_scalar(p->name + ".adam_t"));
  }
  for (BatchNormState<Scalar>* bn : model.batchnorms()) {
    const std::string prefix = bn->gamma.name.substr(0, bn->gamma.name.size() - 6);
    detail::fill_from_entry(entries, prefix + ".running_mean", bn->running_mean);
    detail::fill_from_entry(entries, prefix + ".running_var", bn->running_var);
  }
  return model;
}

template <class Scalar>
UNetModel<Scalar> load_model(const std::string& path) {
  return model_from_entries<Scalar>(read_checkpoint(path));
}

}  // namespace riunet
