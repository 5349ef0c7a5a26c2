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


// Distributed-versus-serial comparison: runs one forward and backward pass on
// a grid and checks every activation, output gradient, the input gradient,
// the reduced parameter gradient and the loss against a serial fp64 run on
// the same (rounded) inputs and parameters.

#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "hybridcnn/fabric/fabric.hpp"
#include "hybridcnn/model/executor.hpp"
#include "hybridcnn/rng.hpp"

namespace hybridcnn {

/// Max absolute difference and norm-relative difference ||a - r|| / ||r||.
struct ErrorStat {
  double max_abs = 0;
  double diff_sq = 0;
  double ref_sq = 0;

  void add(double a, double r) {
    const double d = a - r;
    max_abs = std::max(max_abs, std::abs(d));
    diff_sq += d * d;
    ref_sq += r * r;
  }
  double rel() const {
    if (ref_sq == 0) return diff_sq == 0 ? 0.0 : std::sqrt(diff_sq);
    return std::sqrt(diff_sq / ref_sq);
  }
};

struct LayerCheck {
  std::string name;
  ErrorStat act;
  ErrorStat grad;
};

struct VerifyResult {
  std::string net;
  ProcessGrid grid;
  int fp_bits = 64;
  Extent batch = 0;
  int redistribution_point = 0;
  std::vector<LayerCheck> layers;
  ErrorStat input_grad;
  ErrorStat param_grad;
  ErrorStat loss;
  double tol_abs = 1e-12;  // fp64 criterion
  double tol_rel = 1e-5;   // fp32 criterion

  bool ok(const ErrorStat& e) const { return fp_bits == 64 ? e.max_abs <= tol_abs : e.rel() <= tol_rel; }
  bool pass() const {
    for (const auto& l : layers) {
      if (!ok(l.act) || !ok(l.grad)) return false;
    }
    return ok(input_grad) && ok(param_grad) && ok(loss);
  }
  double worst_abs() const {
    double w = std::max({input_grad.max_abs, param_grad.max_abs, loss.max_abs});
    for (const auto& l : layers) w = std::max({w, l.act.max_abs, l.grad.max_abs});
    return w;
  }
  double worst_rel() const {
    double w = std::max({input_grad.rel(), param_grad.rel(), loss.rel()});
    for (const auto& l : layers) w = std::max({w, l.act.rel(), l.grad.rel()});
    return w;
  }

  void write(std::ostream& out) const {
    char buf[256];
    out << "# net " << net << " grid " << to_string(grid) << " fp" << fp_bits << " batch " << batch
        << " redistribution_point " << redistribution_point << "\n";
    out << "item,act_max_abs,act_rel,grad_max_abs,grad_rel,status\n";
    for (const auto& l : layers) {
      std::snprintf(buf, sizeof buf, "%s,%.3e,%.3e,%.3e,%.3e,%s\n", l.name.c_str(), l.act.max_abs, l.act.rel(),
                    l.grad.max_abs, l.grad.rel(), ok(l.act) && ok(l.grad) ? "ok" : "FAIL");
      out << buf;
    }
    auto line = [&](const char* name, const ErrorStat& e) {
      std::snprintf(buf, sizeof buf, "%s,,,%.3e,%.3e,%s\n", name, e.max_abs, e.rel(), ok(e) ? "ok" : "FAIL");
      out << buf;
    };
    line("input_grad", input_grad);
    line("param_grad", param_grad);
    line("loss", loss);
    std::snprintf(buf, sizeof buf, "# worst max_abs %.3e worst rel %.3e tolerance %s -> %s\n", worst_abs(),
                  worst_rel(), fp_bits == 64 ? "abs 1e-12" : "rel 1e-5", pass() ? "PASS" : "FAIL");
    out << buf;
  }
};

/// Inputs in [-1, 1), MSE targets in [-1, 1) or uniform class labels.
template <class T>
HostBatch<T> synthetic_batch(const NetworkSpec& net, Extent n, std::uint64_t seed) {
  HostBatch<T> hb;
  Rng rng(mix_seed({seed, 0xBA7C4ULL}));
  hb.input = HostTensor<T>(with_batch(net.input, n));
  for (auto& v : hb.input.data) v = T(rng.uniform(-1.0, 1.0));
  const Shape5D out = net.output();
  if (net.loss == LossKind::kMse) {
    hb.targets.resize(static_cast<std::size_t>(n * out.per_sample()));
    for (auto& v : hb.targets) v = T(rng.uniform(-1.0, 1.0));
  } else {
    hb.labels = HostTensor<std::int32_t>(Shape5D{n, 1, out.d, out.h, out.w});
    for (auto& v : hb.labels.data) v = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(out.c)));
  }
  for (Extent i = 0; i < n; ++i) hb.sample_ids.push_back(static_cast<std::int64_t>(rng.below(1u << 20)));
  return hb;
}

template <class To, class From>
HostTensor<To> cast_tensor(const HostTensor<From>& x) {
  HostTensor<To> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = To(x.data[i]);
  return y;
}

template <class To, class From>
std::vector<To> cast_vector(const std::vector<From>& x) {
  return std::vector<To>(x.begin(), x.end());
}

/// One training-mode pass on `grid` in precision T against the serial fp64 oracle.
template <class T>
VerifyResult verify_network(const NetworkSpec& net, const ProcessGrid& grid, Extent batch, std::uint64_t seed,
                            ExecMode mode = ExecMode::kCooperative) {
  const ExecutionPlan plan = plan_network(net, grid, batch);
  require(grid.spatial_size() == 1 || plan.redistribution_point > 0, ErrorCode::kNonDivisible,
          "grid " + to_string(grid) + " cannot partition the network: " + plan.redistribution_reason);
  const HostBatch<T> hb = synthetic_batch<T>(net, batch, seed);
  const std::vector<T> params = init_params<T>(net, seed);
  const std::vector<T> state = init_state<T>(net);
  const DropoutKey key{seed, 0, 0, 0};

  HostBatch<double> hb64;
  hb64.input = cast_tensor<double>(hb.input);
  hb64.targets = cast_vector<double>(hb.targets);
  hb64.labels = hb.labels;
  hb64.sample_ids = hb.sample_ids;
  const std::vector<double> params64 = cast_vector<double>(params);
  const std::vector<double> state64 = cast_vector<double>(state);
  auto oracle = serial_forward<double>(net, params64, state64, hb64.input, Mode::kTrain, key, hb64.sample_ids);
  serial_backward<double>(net, params64, hb64.input, hb64, Mode::kTrain, key, oracle);

  Fabric fabric(grid.size(), mode);
  std::vector<DistTrace<T>> traces(static_cast<std::size_t>(grid.size()));
  std::vector<std::vector<T>> reduced(static_cast<std::size_t>(grid.size()));
  fabric.run([&](Comm& comm) {
    const auto b = scatter_batch(hb, plan, comm.rank());
    auto& tr = traces[static_cast<std::size_t>(comm.rank())];
    tr = dist_forward<T>(comm, net, plan, params, state, b.input, Mode::kTrain, key, b.sample_ids);
    dist_backward<T>(comm, net, plan, params, b.input, b, Mode::kTrain, key, tr);
    reduced[static_cast<std::size_t>(comm.rank())] = reduce_gradients(comm, tr);
  });

  VerifyResult r;
  r.net = net.name;
  r.grid = grid;
  r.fp_bits = sizeof(T) == 8 ? 64 : 32;
  r.batch = batch;
  r.redistribution_point = plan.redistribution_point;
  auto compare = [](ErrorStat& e, const HostTensor<T>& a, const HostTensor<double>& ref) {
    require(a.shape == ref.shape, ErrorCode::kShapeMismatch, "verify: gathered shape differs from oracle");
    for (std::size_t k = 0; k < a.data.size(); ++k) e.add(double(a.data[k]), ref.data[k]);
  };
  auto collect = [&](auto pick) {
    std::vector<DistTensor<T>> parts;
    for (auto& tr : traces) {
      const DistTensor<T>& t = pick(tr);
      if (t.member()) parts.push_back(t);
    }
    return gather(parts);
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerCheck lc;
    lc.name = net.layers[i].name;
    compare(lc.act, collect([&](const DistTrace<T>& t) -> const DistTensor<T>& { return t.acts[i]; }), oracle.acts[i]);
    if (!oracle.grads[i].data.empty()) {
      compare(lc.grad, collect([&](const DistTrace<T>& t) -> const DistTensor<T>& { return t.grads[i]; }),
              oracle.grads[i]);
    }
    r.layers.push_back(std::move(lc));
  }
  compare(r.input_grad, collect([](const DistTrace<T>& t) -> const DistTensor<T>& { return t.input_grad; }),
          oracle.input_grad);
  for (std::size_t k = 0; k < oracle.param_grad.size(); ++k) r.param_grad.add(double(reduced[0][k]), oracle.param_grad[k]);
  r.loss.add(double(traces[0].loss), oracle.loss);
  return r;
}

}  // namespace hybridcnn
