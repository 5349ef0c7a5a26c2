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


// Serial (reference) and distributed executors over a NetworkSpec, and the
// training step. Both executors visit layers in the same order and accumulate
// multi-consumer gradients in the same order.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/fabric/collectives.hpp"
#include "hybridcnn/layers/distributed.hpp"
#include "hybridcnn/layers/reference.hpp"
#include "hybridcnn/model/network.hpp"
#include "hybridcnn/model/optim.hpp"

namespace hybridcnn {

enum class OptimizerKind { kAdam, kSgd };

template <class T>
struct Optimizer {
  OptimizerKind kind = OptimizerKind::kAdam;
  AdamConfig adam{};
  AdamState<T> state{};
};

template <class T>
void apply_optimizer(Optimizer<T>& opt, std::span<T> params, std::span<const T> grad, double lr) {
  if (opt.kind == OptimizerKind::kSgd) {
    sgd_step<T>(params, grad, lr);
  } else {
    if (opt.state.m.size() != params.size()) opt.state = AdamState<T>(params.size());
    adam_step<T>(params, grad, opt.state, lr, opt.adam);
  }
}

/// Running statistics: running = momentum * running + (1 - momentum) * batch,
/// with the unbiased batch variance. `stats` holds (mean, biased var) per channel.
template <class T>
void update_running(std::span<T> state, std::span<const T> stats, double momentum, Extent count) {
  const std::size_t C = state.size() / 2;
  const T m = T(momentum);
  const T unbias = count > 1 ? T(count) / T(count - 1) : T(1);
  for (std::size_t c = 0; c < C; ++c) {
    state[c] = m * state[c] + (T(1) - m) * stats[c];
    state[C + c] = m * state[C + c] + (T(1) - m) * stats[C + c] * unbias;
  }
}

inline DropoutKey layer_key(DropoutKey key, std::size_t layer) {
  key.layer = layer;
  return key;
}

// ---------------------------------------------------------------------------
// Serial executor.

template <class T>
struct HostBatch {
  HostTensor<T> input;                    // (N, C, D, H, W)
  std::vector<T> targets;                 // MSE: N x output-per-sample
  HostTensor<std::int32_t> labels;        // cross-entropy: (N, 1, D, H, W)
  std::vector<std::int64_t> sample_ids;   // N dataset ids (dropout keys)
};

template <class T>
struct SerialTrace {
  std::vector<HostTensor<T>> acts;
  std::vector<ref::BatchNormCache<T>> bn;
  std::vector<std::vector<std::uint8_t>> argmax;
  std::vector<HostTensor<T>> grads;  // d loss / d layer output
  HostTensor<T> input_grad;
  std::vector<T> param_grad;
  std::vector<T> batch_stats;  // per BN layer (mean, biased var), state layout
  T loss = T(0);
};

template <class T>
SerialTrace<T> serial_forward(const NetworkSpec& net, std::span<const T> params, std::span<const T> state,
                              const HostTensor<T>& x, Mode mode, const DropoutKey& key,
                              std::span<const std::int64_t> sample_ids) {
  const ParamLayout pl = param_layout(net);
  require(params.size() == pl.total, ErrorCode::kShapeMismatch, "parameter vector size mismatch");
  require(x.shape == with_batch(net.input, x.shape.n), ErrorCode::kShapeMismatch,
          "network input " + to_string(x.shape) + " does not match " + to_string(net.input));
  SerialTrace<T> tr;
  const std::size_t count = net.layers.size();
  tr.acts.resize(count);
  tr.bn.resize(count);
  tr.argmax.resize(count);
  tr.batch_stats.assign(pl.state_total, T(0));
  for (std::size_t i = 0; i < count; ++i) {
    const LayerSpec& L = net.layers[i];
    auto in = [&](std::size_t k) -> const HostTensor<T>& {
      const int j = L.inputs[k];
      return j < 0 ? x : tr.acts[static_cast<std::size_t>(j)];
    };
    const auto w = params.subspan(pl.params[i].offset, pl.params[i].count);
    switch (L.kind) {
      case LayerKind::kConv: tr.acts[i] = ref::conv3d<T>(in(0), w, L.conv); break;
      case LayerKind::kDeconv: tr.acts[i] = ref::deconv3d<T>(in(0), w, L.deconv); break;
      case LayerKind::kPool: {
        auto r = ref::pool3d(in(0), L.pool);
        tr.acts[i] = std::move(r.y);
        tr.argmax[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::kBatchNorm: {
        const std::size_t C = static_cast<std::size_t>(L.out.c);
        if (mode == Mode::kTrain) {
          tr.acts[i] = ref::batchnorm_train<T>(in(0), w.first(C), w.subspan(C, C), L.bn.eps, tr.bn[i]);
          const std::size_t so = pl.state[i].offset;
          std::copy(tr.bn[i].mean.begin(), tr.bn[i].mean.end(), tr.batch_stats.begin() + static_cast<std::ptrdiff_t>(so));
          std::copy(tr.bn[i].var.begin(), tr.bn[i].var.end(),
                    tr.batch_stats.begin() + static_cast<std::ptrdiff_t>(so + C));
        } else {
          const auto st = state.subspan(pl.state[i].offset, 2 * C);
          tr.acts[i] = ref::batchnorm_eval<T>(in(0), w.first(C), w.subspan(C, C), st.first(C), st.subspan(C, C), L.bn.eps);
        }
        break;
      }
      case LayerKind::kLeakyRelu: tr.acts[i] = ref::leaky_relu(in(0), L.slope); break;
      case LayerKind::kDropout: tr.acts[i] = ref::dropout(in(0), L.keep, mode, layer_key(key, i), sample_ids); break;
      case LayerKind::kFullyConnected: {
        const auto wc = static_cast<std::size_t>(L.fc_out * in(0).shape.per_sample());
        tr.acts[i] = ref::fully_connected<T>(in(0), w.first(wc), w.subspan(wc), L.fc_out);
        break;
      }
      case LayerKind::kConcat: tr.acts[i] = ref::concat_channels(in(0), in(1)); break;
    }
  }
  return tr;
}

template <class T>
void accumulate(HostTensor<T>& dst, HostTensor<T>&& g) {
  if (dst.data.empty()) {
    dst = std::move(g);
    return;
  }
  for (std::size_t k = 0; k < dst.data.size(); ++k) dst.data[k] += g.data[k];
}

/// Loss on the last layer's output, then reverse-mode through every layer.
template <class T>
void serial_backward(const NetworkSpec& net, std::span<const T> params, const HostTensor<T>& x, const HostBatch<T>& batch,
                     Mode mode, const DropoutKey& key, SerialTrace<T>& tr) {
  const ParamLayout pl = param_layout(net);
  const std::size_t count = net.layers.size();
  tr.grads.assign(count, HostTensor<T>{});
  tr.input_grad = HostTensor<T>{};
  tr.param_grad.assign(pl.total, T(0));
  {
    const HostTensor<T>& out = tr.acts.back();
    if (net.loss == LossKind::kMse) {
      auto r = ref::mse_loss<T>(out, batch.targets);
      tr.loss = r.loss;
      tr.grads.back() = std::move(r.grad);
    } else {
      auto r = ref::cross_entropy<T>(out, batch.labels.data);
      tr.loss = r.loss;
      tr.grads.back() = std::move(r.grad);
    }
  }
  for (std::size_t ii = count; ii-- > 0;) {
    const LayerSpec& L = net.layers[ii];
    HostTensor<T>& dy = tr.grads[ii];
    if (dy.data.empty()) continue;  // output unused
    auto in = [&](std::size_t k) -> const HostTensor<T>& {
      const int j = L.inputs[k];
      return j < 0 ? x : tr.acts[static_cast<std::size_t>(j)];
    };
    auto give = [&](std::size_t k, HostTensor<T>&& g) {
      const int j = L.inputs[k];
      accumulate(j < 0 ? tr.input_grad : tr.grads[static_cast<std::size_t>(j)], std::move(g));
    };
    const auto w = params.subspan(pl.params[ii].offset, pl.params[ii].count);
    T* pg = tr.param_grad.data() + pl.params[ii].offset;
    switch (L.kind) {
      case LayerKind::kConv: {
        auto dw = ref::conv3d_bwd_filter(in(0), dy, L.conv);
        std::copy(dw.begin(), dw.end(), pg);
        give(0, ref::conv3d_bwd_data<T>(dy, w, L.conv, in(0).shape));
        break;
      }
      case LayerKind::kDeconv: {
        auto dw = ref::deconv3d_bwd_filter(in(0), dy, L.deconv);
        std::copy(dw.begin(), dw.end(), pg);
        give(0, ref::deconv3d_bwd_data<T>(dy, w, L.deconv));
        break;
      }
      case LayerKind::kPool: give(0, ref::pool3d_bwd<T>(dy, L.pool, in(0).shape, tr.argmax[ii])); break;
      case LayerKind::kBatchNorm: {
        const std::size_t C = static_cast<std::size_t>(L.out.c);
        require(mode == Mode::kTrain, ErrorCode::kConfigError, "backward needs train mode");
        auto g = ref::batchnorm_bwd<T>(dy, tr.bn[ii], w.first(C));
        std::copy(g.dgamma.begin(), g.dgamma.end(), pg);
        std::copy(g.dbeta.begin(), g.dbeta.end(), pg + C);
        give(0, std::move(g.dx));
        break;
      }
      case LayerKind::kLeakyRelu: give(0, ref::leaky_relu_bwd(in(0), dy, L.slope)); break;
      case LayerKind::kDropout:
        give(0, ref::dropout_bwd(dy, L.keep, mode, layer_key(key, ii), batch.sample_ids));
        break;
      case LayerKind::kFullyConnected: {
        auto g = ref::fully_connected_bwd<T>(in(0), dy, w.first(static_cast<std::size_t>(L.fc_out * in(0).shape.per_sample())));
        std::copy(g.dw.begin(), g.dw.end(), pg);
        std::copy(g.db.begin(), g.db.end(), pg + g.dw.size());
        give(0, std::move(g.dx));
        break;
      }
      case LayerKind::kConcat: {
        auto [a, b] = ref::split_channels(dy, in(0).shape.c);
        give(0, std::move(a));
        give(1, std::move(b));
        break;
      }
    }
  }
}

/// Forward, loss, backward, running-statistics update and optimizer step.
template <class T>
T serial_train_step(const NetworkSpec& net, std::vector<T>& params, std::vector<T>& state, Optimizer<T>& opt,
                    const HostBatch<T>& batch, const DropoutKey& key, double lr) {
  auto tr = serial_forward<T>(net, params, state, batch.input, Mode::kTrain, key, batch.sample_ids);
  serial_backward<T>(net, params, batch.input, batch, Mode::kTrain, key, tr);
  const ParamLayout pl = param_layout(net);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].kind != LayerKind::kBatchNorm) continue;
    const auto& s = pl.state[i];
    update_running<T>(std::span<T>(state).subspan(s.offset, s.count),
                      std::span<const T>(tr.batch_stats).subspan(s.offset, s.count), net.layers[i].bn.momentum,
                      tr.bn[i].count);
  }
  apply_optimizer<T>(opt, params, tr.param_grad, lr);
  return tr.loss;
}

// ---------------------------------------------------------------------------
// Distributed executor.

template <class T>
struct DistBatch {
  DistTensor<T> input;                   // this rank's block under plan.input
  std::vector<T> targets;                // MSE: whole batch
  DistTensor<std::int32_t> labels;       // cross-entropy: (N, 1, D, H, W) under plan.input's layout
  std::vector<std::int64_t> sample_ids;  // whole batch
};

template <class T>
struct DistTrace {
  std::vector<std::vector<DistTensor<T>>> ins;  // each layer's inputs in its own layout
  std::vector<DistTensor<T>> acts;
  std::vector<dist::BatchNormCache<T>> bn;
  std::vector<std::vector<std::uint8_t>> argmax;
  std::vector<DistTensor<T>> grads;
  DistTensor<T> input_grad;
  std::vector<T> param_grad;   // local partials
  std::vector<T> batch_stats;  // (mean, var) per BN layer; nonzero only on that layout's rank 0
  T loss = T(0);
};

template <class T>
DistTrace<T> dist_forward(Comm& comm, const NetworkSpec& net, const ExecutionPlan& plan, std::span<const T> params,
                          std::span<const T> state, const DistTensor<T>& x, Mode mode, const DropoutKey& key,
                          std::span<const std::int64_t> sample_ids) {
  const ParamLayout pl = param_layout(net);
  require(params.size() == pl.total, ErrorCode::kShapeMismatch, "parameter vector size mismatch");
  require(x.meta.global == plan.input.global && x.meta.layout == plan.input.layout, ErrorCode::kShapeMismatch,
          "input tensor is not laid out per the plan");
  DistTrace<T> tr;
  const std::size_t count = net.layers.size();
  tr.ins.resize(count);
  tr.acts.resize(count);
  tr.bn.resize(count);
  tr.argmax.resize(count);
  tr.batch_stats.assign(pl.state_total, T(0));
  for (std::size_t i = 0; i < count; ++i) {
    const LayerSpec& L = net.layers[i];
    const Layout& layout = plan.out[i].layout;
    for (int j : L.inputs) {
      const DistTensor<T>& src = j < 0 ? x : tr.acts[static_cast<std::size_t>(j)];
      if (src.meta.layout == layout) {
        tr.ins[i].push_back(src);
      } else {
        tr.ins[i].push_back(dist::redistribute(comm, src, DistTensorMeta{src.meta.global, layout, {0, 0, 0}}));
      }
    }
    auto& in = tr.ins[i];
    const auto w = params.subspan(pl.params[i].offset, pl.params[i].count);
    switch (L.kind) {
      case LayerKind::kConv: tr.acts[i] = dist::conv3d<T>(comm, in[0], w, L.conv); break;
      case LayerKind::kDeconv: tr.acts[i] = dist::deconv3d<T>(comm, in[0], w, L.deconv); break;
      case LayerKind::kPool: {
        auto r = dist::pool3d(comm, in[0], L.pool);
        tr.acts[i] = std::move(r.y);
        tr.argmax[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::kBatchNorm: {
        const std::size_t C = static_cast<std::size_t>(L.out.c);
        if (mode == Mode::kTrain) {
          tr.acts[i] = dist::batchnorm_train<T>(comm, in[0], w.first(C), w.subspan(C, C), L.bn.eps, tr.bn[i]);
          if (in[0].rank == 0) {
            const std::size_t so = pl.state[i].offset;
            std::copy(tr.bn[i].mean.begin(), tr.bn[i].mean.end(),
                      tr.batch_stats.begin() + static_cast<std::ptrdiff_t>(so));
            std::copy(tr.bn[i].var.begin(), tr.bn[i].var.end(),
                      tr.batch_stats.begin() + static_cast<std::ptrdiff_t>(so + C));
          }
        } else {
          const auto st = state.subspan(pl.state[i].offset, 2 * C);
          tr.acts[i] = dist::batchnorm_eval<T>(comm, in[0], w.first(C), w.subspan(C, C), st.first(C), st.subspan(C, C),
                                               L.bn.eps);
        }
        break;
      }
      case LayerKind::kLeakyRelu: tr.acts[i] = dist::leaky_relu(in[0], L.slope); break;
      case LayerKind::kDropout:
        tr.acts[i] = dist::dropout(in[0], L.keep, mode, layer_key(key, i), sample_ids);
        break;
      case LayerKind::kFullyConnected: {
        const auto wc = static_cast<std::size_t>(L.fc_out * in[0].meta.global.per_sample());
        tr.acts[i] = dist::fully_connected<T>(comm, in[0], w.first(wc), w.subspan(wc), L.fc_out);
        break;
      }
      case LayerKind::kConcat: tr.acts[i] = dist::concat_channels(in[0], in[1]); break;
    }
  }
  return tr;
}

template <class T>
void dist_backward(Comm& comm, const NetworkSpec& net, const ExecutionPlan& plan, std::span<const T> params,
                   const DistTensor<T>& x, const DistBatch<T>& batch, Mode mode, const DropoutKey& key,
                   DistTrace<T>& tr) {
  const ParamLayout pl = param_layout(net);
  const std::size_t count = net.layers.size();
  std::vector<char> have(count, 0);
  char have_input = 0;
  tr.grads.assign(count, DistTensor<T>{});
  tr.input_grad = DistTensor<T>{};
  tr.param_grad.assign(pl.total, T(0));
  {
    const DistTensor<T>& out = tr.acts.back();
    if (net.loss == LossKind::kMse) {
      auto r = dist::mse_loss<T>(comm, out, batch.targets);
      tr.loss = r.loss;
      tr.grads.back() = std::move(r.grad);
    } else {
      DistTensor<std::int32_t> labels = batch.labels;
      if (!(labels.meta.layout == out.meta.layout)) {
        labels = dist::redistribute(comm, labels, DistTensorMeta{labels.meta.global, out.meta.layout, {0, 0, 0}});
      }
      auto r = dist::cross_entropy<T>(comm, out, labels.data);
      tr.loss = r.loss;
      tr.grads.back() = std::move(r.grad);
    }
    have.back() = 1;
  }
  for (std::size_t ii = count; ii-- > 0;) {
    if (!have[ii]) continue;
    const LayerSpec& L = net.layers[ii];
    DistTensor<T>& dy = tr.grads[ii];
    auto& in = tr.ins[ii];
    auto give = [&](std::size_t k, DistTensor<T>&& g) {
      const int j = L.inputs[k];
      const DistTensorMeta& target = plan.meta_of(j);
      if (!(g.meta.layout == target.layout)) g = dist::redistribute(comm, g, target);
      DistTensor<T>& dst = j < 0 ? tr.input_grad : tr.grads[static_cast<std::size_t>(j)];
      char& seen = j < 0 ? have_input : have[static_cast<std::size_t>(j)];
      if (!seen) {
        dst = std::move(g);
        seen = 1;
      } else {
        for (std::size_t e = 0; e < dst.data.size(); ++e) dst.data[e] += g.data[e];
      }
    };
    const auto w = params.subspan(pl.params[ii].offset, pl.params[ii].count);
    T* pg = tr.param_grad.data() + pl.params[ii].offset;
    switch (L.kind) {
      case LayerKind::kConv: {
        auto dw = dist::conv3d_bwd_filter_local(comm, in[0], dy, L.conv);
        std::copy(dw.begin(), dw.end(), pg);
        give(0, dist::conv3d_bwd_data<T>(comm, dy, w, L.conv, in[0].meta));
        break;
      }
      case LayerKind::kDeconv: {
        auto dw = dist::deconv3d_bwd_filter_local(comm, in[0], dy, L.deconv);
        std::copy(dw.begin(), dw.end(), pg);
        give(0, dist::deconv3d_bwd_data<T>(comm, dy, w, L.deconv));
        break;
      }
      case LayerKind::kPool: give(0, dist::pool3d_bwd<T>(comm, dy, L.pool, in[0].meta, tr.argmax[ii])); break;
      case LayerKind::kBatchNorm: {
        const std::size_t C = static_cast<std::size_t>(L.out.c);
        require(mode == Mode::kTrain, ErrorCode::kConfigError, "backward needs train mode");
        auto g = dist::batchnorm_bwd<T>(comm, dy, tr.bn[ii], w.first(C));
        std::copy(g.dgamma.begin(), g.dgamma.end(), pg);
        std::copy(g.dbeta.begin(), g.dbeta.end(), pg + C);
        give(0, std::move(g.dx));
        break;
      }
      case LayerKind::kLeakyRelu: give(0, dist::leaky_relu_bwd(in[0], dy, L.slope)); break;
      case LayerKind::kDropout:
        give(0, dist::dropout_bwd(dy, L.keep, mode, layer_key(key, ii), batch.sample_ids));
        break;
      case LayerKind::kFullyConnected: {
        const auto wc = static_cast<std::size_t>(L.fc_out * in[0].meta.global.per_sample());
        auto g = dist::fully_connected_bwd<T>(comm, in[0], dy, w.first(wc));
        std::copy(g.dw.begin(), g.dw.end(), pg);
        std::copy(g.db.begin(), g.db.end(), pg + g.dw.size());
        give(0, std::move(g.dx));
        break;
      }
      case LayerKind::kConcat: {
        auto [a, b] = dist::split_channels(dy, in[0].meta.global.c);
        give(0, std::move(a));
        give(1, std::move(b));
        break;
      }
    }
  }
  (void)x;
}

/// Parameter gradients and BN batch statistics travel in one world allreduce.
/// Returns the concatenated reduced vector: [param grads | batch stats].
template <class T>
std::vector<T> reduce_gradients(Comm& comm, const DistTrace<T>& tr) {
  std::vector<T> all;
  all.reserve(tr.param_grad.size() + tr.batch_stats.size());
  all.insert(all.end(), tr.param_grad.begin(), tr.param_grad.end());
  all.insert(all.end(), tr.batch_stats.begin(), tr.batch_stats.end());
  allreduce_sum(comm, all, dist::world_of(comm));
  return all;
}

/// One collective training step; every rank returns the same loss and ends
/// with identical parameters, BN state and optimizer state.
template <class T>
T dist_train_step(Comm& comm, const NetworkSpec& net, const ExecutionPlan& plan, std::vector<T>& params,
                  std::vector<T>& state, Optimizer<T>& opt, const DistBatch<T>& batch, const DropoutKey& key,
                  double lr) {
  auto tr = dist_forward<T>(comm, net, plan, params, state, batch.input, Mode::kTrain, key, batch.sample_ids);
  dist_backward<T>(comm, net, plan, params, batch.input, batch, Mode::kTrain, key, tr);
  const auto all = reduce_gradients(comm, tr);
  const ParamLayout pl = param_layout(net);
  const std::span<const T> grad(all.data(), pl.total);
  const std::span<const T> stats(all.data() + pl.total, pl.state_total);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].kind != LayerKind::kBatchNorm) continue;
    const auto& s = pl.state[i];
    const Shape5D& g = plan.out[i].global;
    update_running<T>(std::span<T>(state).subspan(s.offset, s.count), stats.subspan(s.offset, s.count),
                      net.layers[i].bn.momentum, g.n * g.voxels());
  }
  apply_optimizer<T>(opt, params, grad, lr);
  return tr.loss;
}

// ---------------------------------------------------------------------------
// Host-side helpers for building distributed batches.

template <class T>
DistBatch<T> scatter_batch(const HostBatch<T>& hb, const ExecutionPlan& plan, int fabric_rank) {
  DistBatch<T> b;
  b.input = scatter(hb.input, plan.input, fabric_rank);
  b.targets = hb.targets;
  if (!hb.labels.data.empty()) {
    b.labels = scatter(hb.labels, DistTensorMeta{hb.labels.shape, plan.input.layout, {0, 0, 0}}, fabric_rank);
  }
  b.sample_ids = hb.sample_ids;
  return b;
}

}  // namespace hybridcnn
