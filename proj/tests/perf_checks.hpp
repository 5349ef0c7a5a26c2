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

// Performance-model properties evaluated on CosmoFlow, shared by the unit
// tests and the acceptance binary.

#include <cmath>
#include <string>
#include <vector>

#include "hybridcnn/perfmodel/cost.hpp"
#include "hybridcnn/perfmodel/fit.hpp"

namespace hybridcnn::perfcheck {

/// conv1's share of sum over layers of (FP + BD + BF), unpartitioned.
inline double conv1_share(Extent wi) {
  const NetworkSpec net = build_cosmoflow(wi);
  const auto table = perf::flop_proportional_table(net, 1);
  const auto b = perf::total_cost(net, plan_network(net, ProcessGrid{}, 1), table, perf::CommModels{});
  double all = 0;
  for (const auto& l : b.layers) all += l.fp + l.bd + l.bf;
  const auto& c1 = b.layer("conv1");
  return (c1.fp + c1.bd + c1.bf) / all;
}

struct Halving {
  std::string coarse, fine;
  double coarse_sum = 0, fine_sum = 0;
  int layers = 0;  // compared layers
  bool exact() const { return layers > 0 && coarse_sum == 2.0 * fine_sum; }
};

/// Comp sums over the layers spatially partitioned under both grids, with a
/// voxel-proportional table and free links. `fine` doubles one factor of `coarse`.
inline Halving comp_halving(Extent wi, const ProcessGrid& coarse, const ProcessGrid& fine) {
  const NetworkSpec net = build_cosmoflow(wi);
  const auto table = perf::flop_proportional_table(net, coarse.groups);
  const ExecutionPlan pa = plan_network(net, coarse, coarse.groups);
  const ExecutionPlan pb = plan_network(net, fine, fine.groups);
  const auto a = perf::total_cost(net, pa, table, perf::CommModels{});
  const auto b = perf::total_cost(net, pb, table, perf::CommModels{});
  Halving h{to_string(coarse), to_string(fine), 0, 0, 0};
  const int upto = std::min(pa.redistribution_point, pb.redistribution_point);
  for (int i = 0; i < upto; ++i) {
    const auto& la = a.layers[static_cast<std::size_t>(i)];
    const auto& lb = b.layers[static_cast<std::size_t>(i)];
    if (!la.costed) continue;
    h.coarse_sum += la.comp_fp + la.comp_bd + la.comp_bf;
    h.fine_sum += lb.comp_fp + lb.comp_bd + lb.comp_bf;
    ++h.layers;
  }
  return h;
}

struct Recovery {
  double c1_err = 0, c2_err = 0, c0_err = 0;
  double alpha_err = 0, beta_rel_err = 0;
  double worst() const { return std::max({c0_err, c1_err, c2_err, alpha_err, beta_rel_err}); }
};

/// Fits noise-free synthetic data: t = 2 m^0.9 p^0.3 for the collective,
/// t = 3e-6 + 2.5e-10 b for the link.
inline Recovery fitter_recovery() {
  std::vector<perf::AllreduceSample> ar;
  for (double m : {1e3, 1e4, 1e5, 1e6, 1e7}) {
    for (int p : {2, 4, 8, 16, 64}) ar.push_back({m, p, 2.0 * std::pow(m, 0.9) * std::pow(double(p), 0.3)});
  }
  const auto cf = perf::fit_allreduce(ar).model;
  std::vector<perf::PingPongSample> pp;
  for (double b : {8.0, 1024.0, 65536.0, 1048576.0}) pp.push_back({b, 3e-6 + 2.5e-10 * b});
  const auto lf = perf::fit_link(pp).model;
  Recovery r;
  r.c0_err = std::abs(cf.c0 - std::log(2.0));
  r.c1_err = std::abs(cf.c1 - 0.9);
  r.c2_err = std::abs(cf.c2 - 0.3);
  r.alpha_err = std::abs(lf.alpha - 3e-6);
  r.beta_rel_err = std::abs(lf.beta - 2.5e-10) / 2.5e-10;
  return r;
}

}  // namespace hybridcnn::perfcheck
