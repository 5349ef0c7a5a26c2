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

// Short fixed-seed training runs, serial and distributed, shared by the model
// tests and the acceptance binary.

#include <cmath>
#include <vector>

#include "hybridcnn/fabric/fabric.hpp"
#include "hybridcnn/model/verify.hpp"

namespace hybridcnn::training {

template <class T>
struct Run {
  std::vector<T> params;
  std::vector<T> state;
  std::vector<T> losses;
  bool replicated = true;  // every rank saw the same loss and ended with the same parameters
};

template <class T>
std::vector<HostBatch<T>> batches(const NetworkSpec& net, Extent n, int steps, std::uint64_t seed) {
  std::vector<HostBatch<T>> out;
  for (int s = 0; s < steps; ++s) out.push_back(synthetic_batch<T>(net, n, mix_seed({seed, std::uint64_t(s)})));
  return out;
}

inline DropoutKey step_key(std::uint64_t seed, int step) { return DropoutKey{seed, 0, std::uint64_t(step), 0}; }

template <class T>
Run<T> serial(const NetworkSpec& net, const std::vector<HostBatch<T>>& data, std::uint64_t seed, double lr,
              OptimizerKind kind = OptimizerKind::kAdam) {
  Run<T> r;
  r.params = init_params<T>(net, seed);
  r.state = init_state<T>(net);
  Optimizer<T> opt;
  opt.kind = kind;
  for (std::size_t s = 0; s < data.size(); ++s) {
    r.losses.push_back(serial_train_step<T>(net, r.params, r.state, opt, data[s], step_key(seed, int(s)), lr));
  }
  return r;
}

template <class T>
Run<T> distributed(const NetworkSpec& net, const ProcessGrid& grid, const std::vector<HostBatch<T>>& data,
                   std::uint64_t seed, double lr, ExecMode mode = ExecMode::kCooperative,
                   OptimizerKind kind = OptimizerKind::kAdam, std::optional<int> point = std::nullopt,
                   TrafficCounters* traffic = nullptr) {
  const ExecutionPlan plan = plan_network(net, grid, data.front().input.shape.n, point);
  const auto ranks = static_cast<std::size_t>(grid.size());
  std::vector<Run<T>> per(ranks);
  Fabric fabric(grid.size(), mode);
  fabric.run([&](Comm& comm) {
    Run<T>& r = per[static_cast<std::size_t>(comm.rank())];
    r.params = init_params<T>(net, seed);
    r.state = init_state<T>(net);
    Optimizer<T> opt;
    opt.kind = kind;
    for (std::size_t s = 0; s < data.size(); ++s) {
      const DistBatch<T> b = scatter_batch(data[s], plan, comm.rank());
      r.losses.push_back(dist_train_step<T>(comm, net, plan, r.params, r.state, opt, b, step_key(seed, int(s)), lr));
    }
  });
  if (traffic) *traffic = fabric.counters();
  Run<T> out = per.front();
  for (const auto& r : per) {
    if (r.params != out.params || r.losses != out.losses || r.state != out.state) out.replicated = false;
  }
  return out;
}

/// ||a - r|| / ||r||.
template <class T>
double rel_error(const std::vector<T>& a, const std::vector<T>& r) {
  long double d = 0, n = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const long double x = static_cast<long double>(a[i]) - static_cast<long double>(r[i]);
    d += x * x;
    n += static_cast<long double>(r[i]) * static_cast<long double>(r[i]);
  }
  return n == 0 ? static_cast<double>(std::sqrt(d)) : static_cast<double>(std::sqrt(d / n));
}

/// Largest elementwise |a - r| / |r| over trajectory entries.
template <class T>
double max_pointwise_rel(const std::vector<T>& a, const std::vector<T>& r) {
  double m = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double ref = static_cast<double>(r[i]);
    const double d = std::abs(static_cast<double>(a[i]) - ref);
    m = std::max(m, ref == 0 ? d : d / std::abs(ref));
  }
  return m;
}

}  // namespace hybridcnn::training
