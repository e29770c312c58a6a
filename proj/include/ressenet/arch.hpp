#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "ressenet/common.hpp"
#include "ressenet/nn.hpp"
#include "ressenet/ops.hpp"
#include "ressenet/rng.hpp"

// Depth-parametric builder for the compared family. Every member is a
// CIFAR-style stack: 3x3 stem into three groups of n basic blocks at widths
// 16/32/64, global average pooling, and a linear classifier; depth = 6n+2.

namespace ressenet::arch {

enum class ArchVariant {
  Baseline,         // projection bridges, no SE anywhere
  NoBridge,         // transitions lose the shortcut entirely
  SEResnet,         // SE on every residual mapping before the addition
  ResSENet,         // SE on each bridge, after downsampling
  ResSENetPreDown,  // SE on each bridge, before downsampling
  SEAllSkips,       // ResSENet plus SE on every identity skip path
};

inline const std::array<ArchVariant, 6>& all_variants() {
  static const std::array<ArchVariant, 6> v = {
      ArchVariant::Baseline,        ArchVariant::NoBridge,
      ArchVariant::SEResnet,        ArchVariant::ResSENet,
      ArchVariant::ResSENetPreDown, ArchVariant::SEAllSkips};
  return v;
}

inline std::string variant_token(ArchVariant v) {
  switch (v) {
    case ArchVariant::Baseline: return "baseline";
    case ArchVariant::NoBridge: return "no-bridge";
    case ArchVariant::SEResnet: return "se-resnet";
    case ArchVariant::ResSENet: return "res-se-net";
    case ArchVariant::ResSENetPreDown: return "res-se-net-pre-down";
    case ArchVariant::SEAllSkips: return "se-all-skips";
  }
  throw ConfigError("unknown variant value");
}

inline ArchVariant parse_variant(const std::string& token) {
  for (ArchVariant v : all_variants())
    if (variant_token(v) == token) return v;
  std::string all;
  for (ArchVariant v : all_variants()) {
    if (!all.empty()) all += ", ";
    all += variant_token(v);
  }
  throw ConfigError("unknown variant '" + token + "' (expected one of: " + all +
                    ")");
}

struct ArchConfig {
  int depth = 20;
  int num_classes = 10;
  int r = 16;
  ArchVariant variant = ArchVariant::Baseline;

  static constexpr std::array<int, 3> widths = {16, 32, 64};

  void validate() const {
    if (depth < 8 || (depth - 2) % 6 != 0) {
      throw ConfigError("invalid depth " + std::to_string(depth) +
                        ": the family is 6n+2 for n >= 1 (20, 32, 44, 56, 110, "
                        "...)");
    }
    if (num_classes != 10 && num_classes != 100) {
      throw ConfigError("num_classes must be 10 or 100, got " +
                        std::to_string(num_classes));
    }
    if (r < 1) throw ConfigError("reduction ratio r must be >= 1");
  }

  int blocks_per_group() const {
    validate();
    return (depth - 2) / 6;
  }
};

template <typename T>
struct ModelGraph {
  ArchConfig config;
  nn::Conv2dLayer<T> stem;
  nn::BatchNormLayer<T> stem_bn;
  std::vector<nn::BasicBlock<T>> blocks;  // 3n, group-major order
  nn::LinearLayer<T> fc;
  nn::NamedTensors<T> named;  // stable registry, built once at construction

  TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x, Mode mode) const {
    auto h = ops::relu(t, stem_bn.forward(t, stem.forward(t, x), mode));
    for (const auto& b : blocks) h = b.forward(t, h, mode);
    auto pooled = ops::global_avg_pool(t, h);
    auto flat = ops::reshape(t, pooled, {pooled->dim(0), pooled->dim(1)});
    return fc.forward(t, flat);
  }

  std::int64_t param_count() const {
    std::int64_t total = 0;
    for (const auto& [name, p] : named.params) total += p->size();
    return total;
  }
};

template <typename T>
ModelGraph<T> build(const ArchConfig& cfg, Rng& rng) {
  cfg.validate();
  const int n = cfg.blocks_per_group();
  const ArchVariant v = cfg.variant;

  ModelGraph<T> m;
  m.config = cfg;
  m.stem = nn::Conv2dLayer<T>::create(3, cfg.widths[0], 3, 1, 1, rng);
  m.stem_bn = nn::BatchNormLayer<T>::create(cfg.widths[0]);

  for (int g = 0; g < 3; ++g) {
    const int c_out = cfg.widths[static_cast<std::size_t>(g)];
    for (int b = 0; b < n; ++b) {
      const bool transition = g > 0 && b == 0;
      const int c_in = transition ? cfg.widths[static_cast<std::size_t>(g - 1)]
                                  : c_out;
      typename nn::BasicBlock<T>::Options o;
      o.c_in = c_in;
      o.c_out = c_out;
      o.stride = transition ? 2 : 1;
      o.r = cfg.r;
      if (transition) {
        o.shortcut = v == ArchVariant::NoBridge ? nn::ShortcutKind::None
                                                : nn::ShortcutKind::Projection;
        if (v == ArchVariant::ResSENet || v == ArchVariant::SEAllSkips)
          o.bridge_se = nn::SEPosition::AfterDownsample;
        if (v == ArchVariant::ResSENetPreDown)
          o.bridge_se = nn::SEPosition::BeforeDownsample;
      } else {
        o.shortcut = nn::ShortcutKind::Identity;
        if (v == ArchVariant::SEAllSkips) o.se_identity = true;
      }
      if (v == ArchVariant::SEResnet) o.se_residual = true;
      m.blocks.push_back(nn::BasicBlock<T>::create(o, rng));
    }
  }
  m.fc = nn::LinearLayer<T>::create(cfg.widths[2], cfg.num_classes,
                                    cfg.widths[2], rng);

  m.stem.collect("stem.conv", m.named);
  m.stem_bn.collect("stem.bn", m.named);
  for (int g = 0; g < 3; ++g)
    for (int b = 0; b < n; ++b) {
      const auto& blk = m.blocks[static_cast<std::size_t>(g * n + b)];
      blk.collect("group" + std::to_string(g + 1) + ".block" + std::to_string(b),
                  m.named);
    }
  m.fc.collect("fc", m.named);
  return m;
}

template <typename T>
std::int64_t count_params(const ModelGraph<T>& m) {
  return m.param_count();
}

// 100 * (1 - count(a)/count(b)); counts are seed-independent.
inline double reduction_report(const ArchConfig& a, const ArchConfig& b) {
  Rng rng(0);
  const auto ca = build<float>(a, rng).param_count();
  const auto cb = build<float>(b, rng).param_count();
  return 100.0 * (1.0 - static_cast<double>(ca) / static_cast<double>(cb));
}

struct SummaryRow {
  std::string name;
  std::string output;  // extents joined with 'x', batch 1
  std::int64_t params;
};

namespace detail {

inline std::string dims_of(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

template <typename T>
std::int64_t tensor_sum(std::initializer_list<TensorPtr<T>> ts) {
  std::int64_t total = 0;
  for (const auto& t : ts) total += t->size();
  return total;
}

template <typename T>
std::int64_t se_params(const nn::SEBlock<T>& se) {
  return tensor_sum<T>({se.reduce.w, se.reduce.b, se.expand.w, se.expand.b});
}

}  // namespace detail

// Per-layer census driven by a batch-1 forward pass; SE and bridge entries
// get their own rows so ablations are visible in the table.
template <typename T>
std::vector<SummaryRow> layer_table(const ModelGraph<T>& m) {
  std::vector<SummaryRow> rows;
  const int n = m.config.blocks_per_group();
  auto x = zeros<T>({1, 3, 32, 32});

  auto h = ops::relu<T>(nullptr,
                        m.stem_bn.forward(nullptr, m.stem.forward(nullptr, x),
                                          Mode::Eval));
  rows.push_back({"stem", detail::dims_of(h->shape),
                  detail::tensor_sum<T>({m.stem.w, m.stem_bn.gamma,
                                         m.stem_bn.beta})});

  for (int g = 0; g < 3; ++g)
    for (int b = 0; b < n; ++b) {
      const auto& blk = m.blocks[static_cast<std::size_t>(g * n + b)];
      const std::string base =
          "group" + std::to_string(g + 1) + ".block" + std::to_string(b);
      h = blk.forward(nullptr, h, Mode::Eval);
      const std::string shape = detail::dims_of(h->shape);
      rows.push_back({base, shape,
                      detail::tensor_sum<T>({blk.conv1.w, blk.bn1.gamma,
                                             blk.bn1.beta, blk.conv2.w,
                                             blk.bn2.gamma, blk.bn2.beta})});
      if (blk.se_residual)
        rows.push_back({base + ".se", shape, detail::se_params(*blk.se_residual)});
      if (blk.bridge) {
        rows.push_back({base + ".bridge", shape,
                        detail::tensor_sum<T>({blk.bridge->proj.w,
                                               blk.bridge->bn.gamma,
                                               blk.bridge->bn.beta})});
        if (blk.bridge->se)
          rows.push_back(
              {base + ".bridge.se", shape, detail::se_params(*blk.bridge->se)});
      }
      if (blk.se_identity)
        rows.push_back(
            {base + ".se_skip", shape, detail::se_params(*blk.se_identity)});
    }

  auto pooled = ops::global_avg_pool<T>(nullptr, h);
  rows.push_back({"pool", detail::dims_of(pooled->shape), 0});
  auto flat = ops::reshape<T>(nullptr, pooled, {1, pooled->dim(1)});
  auto logits = m.fc.forward(nullptr, flat);
  rows.push_back({"fc", detail::dims_of(logits->shape),
                  detail::tensor_sum<T>({m.fc.w, m.fc.b})});
  return rows;
}

template <typename T>
std::string summary(const ModelGraph<T>& m) {
  std::ostringstream os;
  os << variant_token(m.config.variant) << "-" << m.config.depth << " ("
     << m.config.num_classes << " classes, r=" << m.config.r << ")\n";
  std::size_t name_w = 5;
  auto rows = layer_table(m);
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::int64_t total = 0;
  for (const auto& r : rows) {
    os << "  " << r.name << std::string(name_w - r.name.size() + 2, ' ')
       << r.output << std::string(r.output.size() < 12 ? 12 - r.output.size() : 1, ' ')
       << r.params << "\n";
    total += r.params;
  }
  os << "  total parameters: " << total << "\n";
  return os.str();
}

}  // namespace ressenet::arch
