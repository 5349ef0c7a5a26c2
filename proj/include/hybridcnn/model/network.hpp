// Copyright 2026 The hybridcnn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/layers/distributed.hpp"
#include "hybridcnn/layers/flops.hpp"
#include "hybridcnn/layers/params.hpp"
#include "hybridcnn/rng.hpp"
#include "hybridcnn/tensor/partition.hpp"

namespace hybridcnn {

enum class LayerKind { kConv, kDeconv, kPool, kBatchNorm, kLeakyRelu, kDropout, kFullyConnected, kConcat };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDeconv: return "deconv";
    case LayerKind::kPool: return "pool";
    case LayerKind::kBatchNorm: return "bn";
    case LayerKind::kLeakyRelu: return "leaky_relu";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kFullyConnected: return "fc";
    case LayerKind::kConcat: return "concat";
  }
  return "?";
}

enum class LossKind { kMse, kCrossEntropy };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::vector<int> inputs;  // earlier layer indices; -1 is the network input
  ConvParams conv{};
  DeconvParams deconv{};
  PoolType pool = PoolType::kAverage;
  Extent fc_out = 0;
  double slope = 0.3;
  double keep = 0.8;
  BatchNormConfig bn{};
  Shape5D out{};  // per-sample output shape (n = 1), set by infer_shapes
};

/// Ordered layer graph; the last layer's output feeds the loss.
struct NetworkSpec {
  std::string name;
  Shape5D input{1, 1, 1, 1, 1};  // per-sample (n = 1)
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::kMse;

  const Shape5D& output() const { return layers.back().out; }
  int find(const std::string& layer_name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name == layer_name) return static_cast<int>(i);
    }
    return -1;
  }
};

inline Shape5D with_batch(Shape5D s, Extent n) {
  s.n = n;
  return s;
}

/// Fills every layer's `out` and validates channel and extent compatibility.
inline void infer_shapes(NetworkSpec& net) {
  require(!net.layers.empty(), ErrorCode::kConfigError, "network has no layers");
  require(net.input.valid(), ErrorCode::kShapeMismatch, "network input shape invalid");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerSpec& L = net.layers[i];
    const std::string where = "layer " + L.name + ": ";
    require(!L.inputs.empty(), ErrorCode::kConfigError, where + "no inputs");
    std::vector<Shape5D> in;
    for (int j : L.inputs) {
      require(j >= -1 && j < static_cast<int>(i), ErrorCode::kConfigError, where + "input must be an earlier layer");
      in.push_back(j < 0 ? net.input : net.layers[static_cast<std::size_t>(j)].out);
    }
    const Shape5D& x = in.front();
    require(L.kind == LayerKind::kConcat ? in.size() == 2 : in.size() == 1, ErrorCode::kConfigError,
            where + "wrong number of inputs");
    switch (L.kind) {
      case LayerKind::kConv:
        require(x.c == L.conv.cin, ErrorCode::kShapeMismatch,
                where + "expects " + std::to_string(L.conv.cin) + " channels, got " + std::to_string(x.c));
        L.out = L.conv.out_shape(x);
        break;
      case LayerKind::kDeconv:
        require(x.c == L.deconv.cin, ErrorCode::kShapeMismatch, where + "channel mismatch");
        L.out = L.deconv.out_shape(x);
        break;
      case LayerKind::kPool:
        require(x.d % 2 == 0 && x.h % 2 == 0 && x.w % 2 == 0, ErrorCode::kNonDivisible,
                where + "pooling needs even extents, got " + to_string(x));
        L.out = pool_out_shape(x);
        break;
      case LayerKind::kBatchNorm:
      case LayerKind::kLeakyRelu:
      case LayerKind::kDropout:
        L.out = x;
        break;
      case LayerKind::kFullyConnected:
        require(L.fc_out >= 1, ErrorCode::kConfigError, where + "fc width must be >= 1");
        L.out = Shape5D{1, L.fc_out, 1, 1, 1};
        break;
      case LayerKind::kConcat: {
        const Shape5D& y = in[1];
        require(x.d == y.d && x.h == y.h && x.w == y.w, ErrorCode::kShapeMismatch,
                where + "spatial shapes differ: " + to_string(x) + " vs " + to_string(y));
        L.out = x;
        L.out.c = x.c + y.c;
        break;
      }
    }
  }
}

/// Appends layers that consume the previous layer by default.
class NetBuilder {
 public:
  explicit NetBuilder(NetworkSpec& net) : net_(net) {}

  int add(LayerSpec L, std::vector<int> inputs = {}) {
    L.inputs = inputs.empty() ? std::vector<int>{last()} : std::move(inputs);
    net_.layers.push_back(std::move(L));
    return last();
  }
  int last() const { return static_cast<int>(net_.layers.size()) - 1; }

  int conv(const std::string& name, Extent cin, Extent cout, int k = 3, int s = 1) {
    LayerSpec L;
    L.name = name;
    L.kind = LayerKind::kConv;
    L.conv = ConvParams{cin, cout, {k, k, k}, {s, s, s}};
    return add(L);
  }
  int deconv(const std::string& name, Extent cin, Extent cout) {
    LayerSpec L;
    L.name = name;
    L.kind = LayerKind::kDeconv;
    L.deconv = DeconvParams{cin, cout, 2, 2};
    return add(L);
  }
  int simple(const std::string& name, LayerKind kind) {
    LayerSpec L;
    L.name = name;
    L.kind = kind;
    return add(L);
  }
  int fc(const std::string& name, Extent out) {
    LayerSpec L;
    L.name = name;
    L.kind = LayerKind::kFullyConnected;
    L.fc_out = out;
    return add(L);
  }
  int concat(const std::string& name, int a, int b) {
    LayerSpec L;
    L.name = name;
    L.kind = LayerKind::kConcat;
    return add(L, {a, b});
  }

 private:
  NetworkSpec& net_;
};

struct CosmoFlowOptions {
  bool with_bn = false;
  PoolType pool = PoolType::kAverage;
  double slope = 0.3;
  double keep = 0.8;
  bool dropout_on_output = false;  // also drop after the final fc layer
};

/// Seven conv blocks (channels 16..256, the fourth with stride 2), each
/// followed by an optional BN, a leaky ReLU and, while the extent exceeds 2,
/// a 2^3 pool; then fc 2048 -> 256 -> 4 with dropout after the hidden fcs.
inline NetworkSpec build_cosmoflow(Extent wi, const CosmoFlowOptions& opt = {}) {
  require(wi >= 32 && (wi & (wi - 1)) == 0, ErrorCode::kUnsupportedWidth,
          "cosmoflow width must be a power of two >= 32, got " + std::to_string(wi));
  NetworkSpec net;
  net.name = "cosmoflow";
  net.input = Shape5D{1, 4, wi, wi, wi};
  net.loss = LossKind::kMse;
  NetBuilder b(net);
  const Extent ladder[7] = {16, 32, 64, 128, 256, 256, 256};
  Extent c = 4, extent = wi;
  bool first = true;
  for (int i = 0; i < 7; ++i) {
    const int stride = i == 3 ? 2 : 1;
    const std::string id = std::to_string(i + 1);
    LayerSpec conv;
    conv.name = "conv" + id;
    conv.kind = LayerKind::kConv;
    conv.conv = ConvParams{c, ladder[i], {3, 3, 3}, {stride, stride, stride}};
    first ? b.add(conv, {-1}) : b.add(conv);
    first = false;
    c = ladder[i];
    extent = (extent + stride - 1) / stride;
    if (opt.with_bn) b.simple("bn" + id, LayerKind::kBatchNorm);
    b.simple("act" + id, LayerKind::kLeakyRelu);
    net.layers.back().slope = opt.slope;
    if (extent > 2) {
      b.simple("pool" + id, LayerKind::kPool);
      net.layers.back().pool = opt.pool;
      extent /= 2;
    }
  }
  const Extent widths[3] = {2048, 256, 4};
  for (int i = 0; i < 3; ++i) {
    const std::string id = std::to_string(i + 1);
    b.fc("fc" + id, widths[i]);
    const bool last = i == 2;
    if (!last) {
      b.simple("fc_act" + id, LayerKind::kLeakyRelu);
      net.layers.back().slope = opt.slope;
    }
    if (!last || opt.dropout_on_output) {
      b.simple("drop" + id, LayerKind::kDropout);
      net.layers.back().keep = opt.keep;
    }
  }
  infer_shapes(net);
  return net;
}

struct UNetOptions {
  double slope = 0.3;
  PoolType pool = PoolType::kMax;
  Extent base = 4;
  Extent classes = 2;
};

/// Two down blocks (conv-BN-leaky x2, pool), a bottleneck, two up blocks
/// (stride-2 deconv, concat with the matching skip, conv-BN-leaky x2) and a
/// 1^3 conv head producing per-voxel class scores.
inline NetworkSpec build_unet_mini(Extent wi, const UNetOptions& opt = {}) {
  require(wi == 16 || wi == 32 || wi == 64, ErrorCode::kUnsupportedWidth,
          "unet_mini width must be 16, 32 or 64, got " + std::to_string(wi));
  NetworkSpec net;
  net.name = "unet_mini";
  net.input = Shape5D{1, 1, wi, wi, wi};
  net.loss = LossKind::kCrossEntropy;
  NetBuilder b(net);
  Extent c = 1;
  bool first = true;
  auto block = [&](const std::string& tag, Extent cout) {
    for (int j = 1; j <= 2; ++j) {
      const std::string id = tag + "_" + std::to_string(j);
      LayerSpec conv;
      conv.name = "conv" + id;
      conv.kind = LayerKind::kConv;
      conv.conv = ConvParams{c, cout, {3, 3, 3}, {1, 1, 1}};
      first ? b.add(conv, {-1}) : b.add(conv);
      first = false;
      c = cout;
      b.simple("bn" + id, LayerKind::kBatchNorm);
      b.simple("act" + id, LayerKind::kLeakyRelu);
      net.layers.back().slope = opt.slope;
    }
    return b.last();
  };
  const Extent f = opt.base;
  const int skip1 = block("d1", f);
  b.simple("pool1", LayerKind::kPool);
  net.layers.back().pool = opt.pool;
  const int skip2 = block("d2", 2 * f);
  b.simple("pool2", LayerKind::kPool);
  net.layers.back().pool = opt.pool;
  block("mid", 4 * f);
  b.deconv("up2", 4 * f, 2 * f);
  b.concat("cat2", b.last(), skip2);
  c = 4 * f;
  block("u2", 2 * f);
  b.deconv("up1", 2 * f, f);
  b.concat("cat1", b.last(), skip1);
  c = 2 * f;
  block("u1", f);
  b.conv("head", f, opt.classes, 1, 1);
  infer_shapes(net);
  return net;
}

// ---------------------------------------------------------------------------
// Parameters.

struct ParamSlot {
  std::size_t offset = 0;
  std::size_t count = 0;
};

/// Flat parameter vector: conv/deconv weights; BN gamma then beta; fc W [out][in]
/// then bias. BN running statistics live in a separate state vector (mean then var).
struct ParamLayout {
  std::vector<ParamSlot> params;
  std::vector<ParamSlot> state;
  std::size_t total = 0;
  std::size_t state_total = 0;
};

inline ParamLayout param_layout(const NetworkSpec& net) {
  ParamLayout pl;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& L = net.layers[i];
    const Extent in = L.inputs.front() < 0 ? net.input.per_sample()
                                           : net.layers[static_cast<std::size_t>(L.inputs.front())].out.per_sample();
    std::size_t n = 0, s = 0;
    switch (L.kind) {
      case LayerKind::kConv: n = static_cast<std::size_t>(L.conv.weight_count()); break;
      case LayerKind::kDeconv: n = static_cast<std::size_t>(L.deconv.weight_count()); break;
      case LayerKind::kBatchNorm:
        n = static_cast<std::size_t>(2 * L.out.c);
        s = n;
        break;
      case LayerKind::kFullyConnected: n = static_cast<std::size_t>(L.fc_out * in + L.fc_out); break;
      default: break;
    }
    pl.params.push_back({pl.total, n});
    pl.state.push_back({pl.state_total, s});
    pl.total += n;
    pl.state_total += s;
  }
  return pl;
}

inline std::size_t parameter_count(const NetworkSpec& net) { return param_layout(net).total; }

/// Kaiming-uniform fan-in scaling for conv/deconv/fc weights; zero biases;
/// BN gamma 1, beta 0.
template <class T>
std::vector<T> init_params(const NetworkSpec& net, std::uint64_t seed) {
  const ParamLayout pl = param_layout(net);
  std::vector<T> p(pl.total, T(0));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& L = net.layers[i];
    const ParamSlot& slot = pl.params[i];
    Rng rng(mix_seed({seed, 0x1417ULL, i}));
    auto fill = [&](std::size_t off, std::size_t count, double fan_in) {
      const double bound = std::sqrt(6.0 / fan_in);
      for (std::size_t k = 0; k < count; ++k) p[off + k] = static_cast<T>(rng.uniform(-bound, bound));
    };
    switch (L.kind) {
      case LayerKind::kConv:
        fill(slot.offset, slot.count, static_cast<double>(L.conv.cin * L.conv.taps()));
        break;
      case LayerKind::kDeconv: {
        const double k3 = static_cast<double>(L.deconv.kernel) * L.deconv.kernel * L.deconv.kernel;
        const double s3 = static_cast<double>(L.deconv.stride) * L.deconv.stride * L.deconv.stride;
        fill(slot.offset, slot.count, static_cast<double>(L.deconv.cin) * k3 / s3);
        break;
      }
      case LayerKind::kBatchNorm:
        for (std::size_t k = 0; k < slot.count / 2; ++k) p[slot.offset + k] = T(1);
        break;
      case LayerKind::kFullyConnected: {
        const auto out = static_cast<std::size_t>(L.fc_out);
        const std::size_t in = (slot.count - out) / out;
        fill(slot.offset, out * in, static_cast<double>(in));
        break;
      }
      default: break;
    }
  }
  return p;
}

/// Running mean 0, running variance 1.
template <class T>
std::vector<T> init_state(const NetworkSpec& net) {
  const ParamLayout pl = param_layout(net);
  std::vector<T> s(pl.state_total, T(0));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const ParamSlot& slot = pl.state[i];
    for (std::size_t k = slot.count / 2; k < slot.count; ++k) s[slot.offset + k] = T(1);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Flop and memory accounting (per sample).

struct FlopReport {
  std::vector<double> forward;  // per layer; zero for layers without a convolution
  double forward_total = 0;
  double training_total = 0;  // forward + backward-data + backward-filter
};

inline FlopReport conv_flop_report(const NetworkSpec& net) {
  FlopReport r;
  for (const LayerSpec& L : net.layers) {
    const Shape5D in = L.inputs.front() < 0 ? net.input : net.layers[static_cast<std::size_t>(L.inputs.front())].out;
    double f = 0;
    if (L.kind == LayerKind::kConv) f = conv_flops(L.conv, in);
    if (L.kind == LayerKind::kDeconv) f = deconv_flops(L.deconv, in);
    r.forward.push_back(f);
    r.forward_total += f;
  }
  r.training_total = kTrainingPasses * r.forward_total;
  return r;
}

/// Bytes per sample: the input plus every conv, BN, activation, pool and fc
/// output, each held as fp32 activation and an equal-size gradient buffer.
inline double memory_estimate(const NetworkSpec& net) {
  double elems = static_cast<double>(net.input.per_sample());
  for (const LayerSpec& L : net.layers) {
    switch (L.kind) {
      case LayerKind::kConv:
      case LayerKind::kDeconv:
      case LayerKind::kBatchNorm:
      case LayerKind::kLeakyRelu:
      case LayerKind::kPool:
      case LayerKind::kFullyConnected:
        elems += static_cast<double>(L.out.per_sample());
        break;
      default: break;
    }
  }
  return elems * 4.0 * 2.0;
}

// ---------------------------------------------------------------------------
// Execution planning.

/// Where each layer's output lives for a given grid and global batch.
/// Layers before `redistribution_point` run on the spatial layout; the rest
/// run on one leader rank per data-parallel group.
struct ExecutionPlan {
  ProcessGrid grid;
  Extent batch = 0;
  int redistribution_point = 0;
  std::string redistribution_reason;  // why the spatial layout ends there; empty when it never does
  Layout spatial;
  Layout leader;
  DistTensorMeta input;
  std::vector<DistTensorMeta> out;  // per layer, radii zero

  const Layout& layout_of(int layer) const { return layer < redistribution_point ? spatial : leader; }
  const DistTensorMeta& meta_of(int layer) const {
    return layer < 0 ? input : out[static_cast<std::size_t>(layer)];
  }
};

/// Output meta of `L` on `layout`, or an error when it cannot be partitioned there.
inline DistTensorMeta layer_out_meta(const LayerSpec& L, const std::vector<DistTensorMeta>& in, const Layout& layout,
                                     Extent batch) {
  const Shape5D out = with_batch(L.out, batch);
  const std::string what = "layer " + L.name;
  std::vector<DistTensorMeta> local;
  for (const auto& m : in) local.push_back(DistTensorMeta{m.global, layout, {0, 0, 0}});
  try {
    switch (L.kind) {
      case LayerKind::kConv: {
        check_partition(local.front().global, layout.grid, what + " input");
        const auto m = dist::conv_out_meta(local.front(), L.conv);
        return m;
      }
      case LayerKind::kPool:
        check_partition(local.front().global, layout.grid, what + " input");
        dist::check_pool_partition(local.front());
        break;
      case LayerKind::kFullyConnected:
        require(layout.grid.spatial_size() == 1, ErrorCode::kNonDivisible,
                what + ": fully-connected layers run sample-parallel");
        break;
      default: break;
    }
    check_partition(out, layout.grid, what);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNonDivisible || e.code() == ErrorCode::kShapeMismatch) {
      fail(ErrorCode::kNonDivisible, e.detail().find(what) == std::string::npos ? what + ": " + e.detail() : e.detail());
    }
    throw;
  }
  return DistTensorMeta{out, layout, {0, 0, 0}};
}

/// `forced_point` moves the redistribution point earlier (or, if still
/// feasible, later); by default it is the first layer that cannot stay
/// spatially partitioned.
inline ExecutionPlan plan_network(const NetworkSpec& net, const ProcessGrid& grid, Extent batch,
                                  std::optional<int> forced_point = std::nullopt) {
  require(grid.valid(), ErrorCode::kConfigError, "invalid grid " + to_string(grid));
  require(batch % grid.groups == 0, ErrorCode::kBatchIndivisible,
          "batch " + std::to_string(batch) + " not divisible by " + std::to_string(grid.groups) + " groups");
  ExecutionPlan plan;
  plan.grid = grid;
  plan.batch = batch;
  plan.spatial = Layout::identity(grid);
  plan.leader = Layout::sample_parallel(plan.spatial);
  const int count = static_cast<int>(net.layers.size());
  const Shape5D in = with_batch(net.input, batch);

  // The natural point: first layer whose spatial-layout meta fails.
  int natural = count;
  std::string reason;
  try {
    check_partition(in, grid, "network input");
  } catch (const Error& e) {
    natural = 0;
    reason = e.detail();
  }
  std::vector<DistTensorMeta> spatial_out;
  const DistTensorMeta spatial_in{in, plan.spatial, {0, 0, 0}};
  for (int i = 0; i < natural; ++i) {
    const LayerSpec& L = net.layers[static_cast<std::size_t>(i)];
    std::vector<DistTensorMeta> ins;
    for (int j : L.inputs) ins.push_back(j < 0 ? spatial_in : spatial_out[static_cast<std::size_t>(j)]);
    try {
      spatial_out.push_back(layer_out_meta(L, ins, plan.spatial, batch));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonDivisible) throw;
      natural = i;
      reason = e.detail();
    }
  }
  int point = natural;
  if (forced_point) {
    require(*forced_point >= 0 && *forced_point <= count, ErrorCode::kConfigError,
            "redistribution point " + std::to_string(*forced_point) + " out of range");
    require(*forced_point <= natural, ErrorCode::kNonDivisible,
            "cannot keep layers spatially partitioned past the natural point: " + reason);
    point = *forced_point;
  }
  plan.redistribution_point = point;
  plan.redistribution_reason = point == natural ? reason : "forced";
  plan.input = DistTensorMeta{in, point > 0 ? plan.spatial : plan.leader, {0, 0, 0}};
  for (int i = 0; i < count; ++i) {
    if (i < point) {
      plan.out.push_back(spatial_out[static_cast<std::size_t>(i)]);
      continue;
    }
    const LayerSpec& L = net.layers[static_cast<std::size_t>(i)];
    std::vector<DistTensorMeta> ins;
    for (int j : L.inputs) ins.push_back(plan.meta_of(j));
    plan.out.push_back(layer_out_meta(L, ins, plan.leader, batch));
  }
  return plan;
}

}  // namespace hybridcnn
