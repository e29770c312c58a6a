#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ressenet/common.hpp"
#include "ressenet/ops.hpp"
#include "ressenet/rng.hpp"
#include "ressenet/tape.hpp"
#include "ressenet/tensor.hpp"

// Layers and the three block shapes the architecture family composes: the
// two-conv residual block, the squeeze-excitation gate, and the 1x1 stride-2
// projection bridge between block groups.

namespace ressenet::nn {

template <typename T>
TensorPtr<T> he_init(Shape shape, int fan_in, Rng& rng) {
  if (fan_in < 1) throw ConfigError("he_init fan_in must be >= 1");
  return randn<T>(std::move(shape), rng, std::sqrt(2.0 / fan_in), true);
}

// Named views into a model's tensors. `params` are trained; `buffers` are
// batch-norm running statistics, persisted but never stepped.
template <typename T>
struct NamedTensors {
  std::vector<std::pair<std::string, TensorPtr<T>>> params;
  std::vector<std::pair<std::string, TensorPtr<T>>> buffers;
};

template <typename T>
struct Conv2dLayer {
  TensorPtr<T> w;
  int stride = 1;
  int padding = 0;

  static Conv2dLayer create(int c_in, int c_out, int k, int stride, int padding,
                            Rng& rng) {
    Conv2dLayer l;
    l.w = he_init<T>({c_out, c_in, k, k}, c_in * k * k, rng);
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x) const {
    return ops::conv2d(t, x, w, stride, padding);
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.params.emplace_back(prefix + ".w", w);
  }
};

template <typename T>
struct BatchNormLayer {
  TensorPtr<T> gamma, beta, running_mean, running_var;

  static BatchNormLayer create(int c) {
    BatchNormLayer l;
    l.gamma = ones<T>({c}, true);
    l.beta = zeros<T>({c}, true);
    l.running_mean = zeros<T>({c});
    l.running_var = ones<T>({c});
    return l;
  }

  TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x, Mode mode) const {
    return ops::batch_norm(t, x, gamma, beta, running_mean, running_var, mode);
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.params.emplace_back(prefix + ".gamma", gamma);
    out.params.emplace_back(prefix + ".beta", beta);
    out.buffers.emplace_back(prefix + ".running_mean", running_mean);
    out.buffers.emplace_back(prefix + ".running_var", running_var);
  }
};

template <typename T>
struct LinearLayer {
  TensorPtr<T> w, b;

  static LinearLayer create(int in, int out, int fan_in, Rng& rng) {
    LinearLayer l;
    l.w = he_init<T>({out, in}, fan_in, rng);
    l.b = zeros<T>({out}, true);
    return l;
  }

  TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x) const {
    return ops::fully_connected(t, x, w, b);
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.params.emplace_back(prefix + ".w", w);
    out.params.emplace_back(prefix + ".b", b);
  }
};

// Squeeze (global average pool) then excitation (bottleneck of width
// max(1, floor(C/r)) ending in a sigmoid), applied as a per-channel gain.
template <typename T>
struct SEBlock {
  LinearLayer<T> reduce, expand;
  int channels = 0;
  int r = 16;

  static SEBlock create(int c, int r, Rng& rng) {
    if (c < 1 || r < 1) throw ConfigError("SE block needs C >= 1 and r >= 1");
    SEBlock se;
    se.channels = c;
    se.r = r;
    const int hidden = std::max(1, c / r);
    se.reduce = LinearLayer<T>::create(c, hidden, c, rng);
    se.expand = LinearLayer<T>::create(hidden, c, hidden, rng);
    return se;
  }

  TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x) const {
    if (x->ndim() != 4 || x->dim(1) != channels) {
      throw ShapeError("SE block over " + std::to_string(channels) +
                       " channels got input " + shape_str(x->shape));
    }
    const std::int64_t N = x->dim(0);
    auto d = ops::global_avg_pool(t, x);
    auto v = ops::reshape(t, d, {N, channels});
    auto h = ops::relu(t, reduce.forward(t, v));
    auto s = ops::sigmoid(t, expand.forward(t, h));
    return ops::scale_channels(t, x, ops::reshape(t, s, {N, channels, 1, 1}));
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
  }
};

enum class SEPosition { None, AfterDownsample, BeforeDownsample };

// 1x1 stride-2 projection shortcut between block groups, with an optional
// gate on either side of the downsampling.
template <typename T>
struct Bridge {
  Conv2dLayer<T> proj;
  BatchNormLayer<T> bn;
  std::optional<SEBlock<T>> se;
  SEPosition se_position = SEPosition::None;

  static Bridge create(int c_in, int c_out, SEPosition pos, int r, Rng& rng) {
    Bridge b;
    b.proj = Conv2dLayer<T>::create(c_in, c_out, 1, 2, 0, rng);
    b.bn = BatchNormLayer<T>::create(c_out);
    b.se_position = pos;
    if (pos == SEPosition::AfterDownsample) {
      b.se = SEBlock<T>::create(c_out, r, rng);
    } else if (pos == SEPosition::BeforeDownsample) {
      b.se = SEBlock<T>::create(c_in, r, rng);
    }
    return b;
  }

  TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x, Mode mode) const {
    switch (se_position) {
      case SEPosition::None:
        return bn.forward(t, proj.forward(t, x), mode);
      case SEPosition::AfterDownsample:
        return se->forward(t, bn.forward(t, proj.forward(t, x), mode));
      case SEPosition::BeforeDownsample:
        return bn.forward(t, proj.forward(t, se->forward(t, x)), mode);
    }
    throw ConfigError("unreachable SE position");
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    proj.collect(prefix + ".proj", out);
    bn.collect(prefix + ".bn", out);
    if (se) se->collect(prefix + ".se", out);
  }
};

enum class ShortcutKind { Identity, Projection, None };

// Two 3x3 conv-BN stages with a configurable shortcut. The first conv
// carries the stride; post-activation ordering throughout.
template <typename T>
struct BasicBlock {
  struct Options {
    int c_in = 0;
    int c_out = 0;
    int stride = 1;
    ShortcutKind shortcut = ShortcutKind::Identity;
    SEPosition bridge_se = SEPosition::None;
    bool se_residual = false;
    bool se_identity = false;
    int r = 16;
  };

  Conv2dLayer<T> conv1, conv2;
  BatchNormLayer<T> bn1, bn2;
  int stride = 1;
  ShortcutKind shortcut = ShortcutKind::Identity;
  std::optional<Bridge<T>> bridge;
  std::optional<SEBlock<T>> se_residual;
  std::optional<SEBlock<T>> se_identity;

  static BasicBlock create(const Options& o, Rng& rng) {
    const bool changes_shape = o.c_in != o.c_out || o.stride != 1;
    if (o.shortcut == ShortcutKind::Identity && changes_shape) {
      throw ConfigError("identity shortcut requires matching shapes; a "
                        "transition block needs a projection bridge or none");
    }
    if (o.shortcut != ShortcutKind::Projection &&
        o.bridge_se != SEPosition::None) {
      throw ConfigError("a bridge SE position requires a projection shortcut");
    }
    if (o.se_identity && o.shortcut != ShortcutKind::Identity) {
      throw ConfigError("se_identity applies to identity shortcuts only");
    }
    BasicBlock b;
    b.stride = o.stride;
    b.shortcut = o.shortcut;
    b.conv1 = Conv2dLayer<T>::create(o.c_in, o.c_out, 3, o.stride, 1, rng);
    b.bn1 = BatchNormLayer<T>::create(o.c_out);
    b.conv2 = Conv2dLayer<T>::create(o.c_out, o.c_out, 3, 1, 1, rng);
    b.bn2 = BatchNormLayer<T>::create(o.c_out);
    if (o.se_residual) b.se_residual = SEBlock<T>::create(o.c_out, o.r, rng);
    if (o.shortcut == ShortcutKind::Projection) {
      b.bridge = Bridge<T>::create(o.c_in, o.c_out, o.bridge_se, o.r, rng);
    }
    if (o.se_identity) b.se_identity = SEBlock<T>::create(o.c_in, o.r, rng);
    return b;
  }

  TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x, Mode mode) const {
    auto h = ops::relu(t, bn1.forward(t, conv1.forward(t, x), mode));
    auto f = bn2.forward(t, conv2.forward(t, h), mode);
    if (se_residual) f = se_residual->forward(t, f);
    switch (shortcut) {
      case ShortcutKind::None:
        return ops::relu(t, f);
      case ShortcutKind::Projection:
        return ops::relu(t, ops::add(t, f, bridge->forward(t, x, mode)));
      case ShortcutKind::Identity: {
        auto skip = se_identity ? se_identity->forward(t, x) : x;
        return ops::relu(t, ops::add(t, f, skip));
      }
    }
    throw ConfigError("unreachable shortcut kind");
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    conv1.collect(prefix + ".conv1", out);
    bn1.collect(prefix + ".bn1", out);
    conv2.collect(prefix + ".conv2", out);
    bn2.collect(prefix + ".bn2", out);
    if (se_residual) se_residual->collect(prefix + ".se", out);
    if (bridge) bridge->collect(prefix + ".bridge", out);
    if (se_identity) se_identity->collect(prefix + ".se_skip", out);
  }
};

}  // namespace ressenet::nn
