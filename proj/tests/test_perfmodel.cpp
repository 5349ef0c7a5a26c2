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

#include <gtest/gtest.h>

#include <sstream>

#include "perf_checks.hpp"
#include "testing.hpp"

namespace hybridcnn::perf {
namespace {

using hybridcnn::testing::expect_error;

// ---------------------------------------------------------------------------
// Regression fits.

TEST(Fit, TwoPointLink) {
  const LinkFit f = fit_link({{1024, 10e-6}, {2048, 15e-6}});
  EXPECT_NEAR(f.model.alpha, 5e-6, 1e-18);
  EXPECT_NEAR(f.model.beta, 5e-6 / 1024, 1e-20);
  EXPECT_NEAR(f.model.beta, 4.88e-9, 0.01e-9);
  EXPECT_LE(f.residual.max_abs, 1e-18);
}

TEST(Fit, LeastSquaresMatchesNormalEquations) {
  const std::vector<PingPongSample> s = {{0, 1.0}, {1, 2.9}, {2, 5.2}, {3, 6.8}};
  // Closed form for y = a + b x.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : s) {
    sx += p.bytes;
    sy += p.seconds;
    sxx += p.bytes * p.bytes;
    sxy += p.bytes * p.seconds;
  }
  const double n = 4, b = (n * sxy - sx * sy) / (n * sxx - sx * sx), a = (sy - b * sx) / n;
  const LinkFit f = fit_link(s);
  EXPECT_NEAR(f.model.alpha, a, 1e-12);
  EXPECT_NEAR(f.model.beta, b, 1e-12);
  EXPECT_GT(f.residual.rms, 0);
}

TEST(Fit, RecoversLogLinearCoefficients) {
  const perfcheck::Recovery r = perfcheck::fitter_recovery();
  EXPECT_LE(r.c1_err, 1e-6);
  EXPECT_LE(r.c2_err, 1e-6);
  EXPECT_LE(r.c0_err, 1e-6);
  EXPECT_LE(r.alpha_err, 1e-12);
  EXPECT_LE(r.beta_rel_err, 1e-6);
}

TEST(Fit, Idempotent) {
  std::vector<AllreduceSample> s = {{100, 2, 1e-5}, {1000, 4, 3e-5}, {1e5, 8, 9e-4}, {1e6, 2, 2e-3}, {5e4, 16, 4e-4}};
  const CollectiveModel m = fit_allreduce(s).model;
  for (auto& x : s) x.seconds = m.time(x.elements, x.ranks);
  const CollectiveModel again = fit_allreduce(s).model;
  EXPECT_NEAR(again.c0, m.c0, 1e-9);
  EXPECT_NEAR(again.c1, m.c1, 1e-9);
  EXPECT_NEAR(again.c2, m.c2, 1e-9);

  std::vector<PingPongSample> p = {{8, 2e-6}, {100, 2.5e-6}, {4096, 9e-6}, {1e6, 3e-4}};
  const LinkModel l = fit_link(p).model;
  for (auto& x : p) x.seconds = l.sr(x.bytes);
  const LinkModel l2 = fit_link(p).model;
  EXPECT_NEAR(l2.alpha, l.alpha, 1e-9);
  EXPECT_NEAR(l2.beta, l.beta, 1e-9);
}

TEST(Fit, Errors) {
  expect_error(ErrorCode::kInsufficientData, [] { fit_link({{1024, 1e-5}}); });
  expect_error(ErrorCode::kInsufficientData, [] { fit_link({{1024, 1e-5}, {1024, 2e-5}}); });
  expect_error(ErrorCode::kInsufficientData, [] { fit_allreduce({{10, 2, 1e-5}, {20, 4, 2e-5}}); });
  // Rank count never varies.
  expect_error(ErrorCode::kDegenerateFit, [] { fit_allreduce({{10, 2, 1e-5}, {20, 2, 2e-5}, {40, 2, 3e-5}}); });
  expect_error(ErrorCode::kDegenerateFit, [] { fit_link({{0, 1e-3}, {1000, 1e-6}}); });
}

TEST(Fit, CollectiveConventions) {
  const CollectiveModel m{0.0, 1.0, 1.0};
  EXPECT_EQ(m.time(100, 1), 0.0);
  EXPECT_NEAR(m.time(100, 4), 400.0, 1e-9);
  EXPECT_EQ((LinkModel{1e-6, 1e-9}.sr(0)), 0.0);
}

TEST(Parse, CsvErrorsCarryLineNumbers) {
  {
    std::istringstream in("bytes,seconds\n8,1e-6\n\n16,abc\n");
    try {
      parse_pingpong(in, "pp.csv");
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kParseError);
      EXPECT_NE(std::string(e.what()).find("pp.csv:4:"), std::string::npos) << e.what();
    }
  }
  {
    std::istringstream in("# comment\nelements,seconds\n");
    try {
      parse_allreduce(in, "ar.csv");
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find("ar.csv:2:"), std::string::npos) << e.what();
    }
  }
  {
    std::istringstream in("kind,phase,n,c,d,h,w,seconds\nconv,fwd,1,16,8,8,8,1e-3\nconv,sideways,1,16,8,8,8,1e-3\n");
    try {
      parse_kernel_table(in, "k.csv");
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find("k.csv:3:"), std::string::npos) << e.what();
    }
  }
  std::istringstream dup("kind,phase,n,c,d,h,w,seconds\nconv,fwd,1,16,8,8,8,1e-3\nconv,fwd,1,16,8,8,8,2e-3\n");
  expect_error(ErrorCode::kParseError, [&] { parse_kernel_table(dup, "k.csv"); });
  std::istringstream neg("kind,phase,n,c,d,h,w,seconds\nconv,fwd,1,16,8,8,8,-1\n");
  expect_error(ErrorCode::kParseError, [&] { parse_kernel_table(neg, "k.csv"); });
}

TEST(Parse, KernelTableRoundTrip) {
  std::istringstream in(
      "kind,phase,n,c,d,h,w,seconds\nconv,fwd,1,16,8,8,8,0.001\nconv1,bwd_filter,2,16,4,4,4,3.5e-05\n");
  const KernelTimeTable t = parse_kernel_table(in);
  ASSERT_EQ(t.entries().size(), 2u);
  std::ostringstream out;
  write_kernel_table(out, t);
  std::istringstream back(out.str());
  const KernelTimeTable u = parse_kernel_table(back);
  ASSERT_EQ(u.entries().size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(u.entries()[i].kind, t.entries()[i].kind);
    EXPECT_EQ(u.entries()[i].shape, t.entries()[i].shape);
    EXPECT_EQ(u.entries()[i].seconds, t.entries()[i].seconds);
  }
}

// ---------------------------------------------------------------------------
// Kernel lookups.

KernelTimeTable small_table() {
  KernelTimeTable t;
  t.add({"conv", Phase::kFwd, Shape5D{1, 16, 8, 8, 8}, 1.0});
  t.add({"conv", Phase::kFwd, Shape5D{1, 16, 16, 16, 16}, 5.0});
  t.add({"conv1", Phase::kFwd, Shape5D{1, 16, 8, 8, 8}, 7.0});
  return t;
}

TEST(Comp, ExactKey) {
  const KernelTimeTable t = small_table();
  const CompTime c = comp_time(t, {"conv"}, Phase::kFwd, Shape5D{1, 16, 16, 16, 16});
  EXPECT_EQ(c.seconds, 5.0);
  EXPECT_TRUE(c.exact);
  // Layer name beats kind.
  EXPECT_EQ(comp_time(t, {"conv1", "conv"}, Phase::kFwd, Shape5D{1, 16, 8, 8, 8}).seconds, 7.0);
}

TEST(Comp, InterpolatesByVoxels) {
  const KernelTimeTable t = small_table();
  // Halfway by voxel count: (512 + 4096) / 2 = 2304 voxels, e.g. 2304 = 9 x 16 x 16.
  const CompTime c = comp_time(t, {"conv"}, Phase::kFwd, Shape5D{1, 16, 9, 16, 16});
  EXPECT_NEAR(c.seconds, 3.0, 1e-15);
  EXPECT_FALSE(c.exact);
  EXPECT_FALSE(c.extrapolated);
  // A quarter of the way.
  const double v = 512 + 0.25 * (4096 - 512);
  EXPECT_NEAR(comp_time_voxels(t, {"conv"}, Phase::kFwd, 16, v).seconds, 2.0, 1e-15);
}

TEST(Comp, ExtrapolatesProportionally) {
  const KernelTimeTable t = small_table();
  const CompTime big = comp_time(t, {"conv"}, Phase::kFwd, Shape5D{2, 16, 16, 16, 16});
  EXPECT_TRUE(big.extrapolated);
  EXPECT_NEAR(big.seconds, 10.0, 1e-12);
  const CompTime small = comp_time(t, {"conv"}, Phase::kFwd, Shape5D{1, 16, 4, 4, 4});
  EXPECT_NEAR(small.seconds, 1.0 / 8, 1e-15);
}

TEST(Comp, Misses) {
  expect_error(ErrorCode::kNoComparableEntry,
               [] { comp_time(KernelTimeTable{}, {"conv"}, Phase::kFwd, Shape5D{1, 1, 1, 1, 1}); });
  const KernelTimeTable t = small_table();
  expect_error(ErrorCode::kNoComparableEntry, [&] { comp_time(t, {"pool"}, Phase::kFwd, Shape5D{1, 16, 8, 8, 8}); });
  expect_error(ErrorCode::kNoComparableEntry, [&] { comp_time(t, {"conv"}, Phase::kBwdData, Shape5D{1, 16, 8, 8, 8}); });
  expect_error(ErrorCode::kNoComparableEntry, [&] { comp_time(t, {"conv"}, Phase::kFwd, Shape5D{1, 32, 8, 8, 8}); });
}

// ---------------------------------------------------------------------------
// Cost formulas.

TEST(Cost, StencilFormula) {
  EXPECT_DOUBLE_EQ(stencil_cost(10e-3, 2e-3, 1e-3), 11e-3);
  EXPECT_DOUBLE_EQ(stencil_cost(1e-3, 5e-3, 1e-3), 6e-3);
}

TEST(Cost, TotalFormula) {
  EXPECT_EQ(combine_total(30, 50, 20), 80);
  EXPECT_EQ(combine_total(30, 50, 90), 120);
}

TEST(Cost, BatchNormAllreduce) {
  CommModels m;
  m.allreduce = CollectiveModel{std::log(1e-6), 0.5, 0.25};
  EXPECT_NEAR(bn_cost(2e-3, 16, 8, m), 2e-3 + 1e-6 * std::sqrt(32.0) * std::pow(8.0, 0.25), 1e-18);
  EXPECT_EQ(bn_cost(2e-3, 16, 1, m), 2e-3);
  EXPECT_EQ(bn_cost(2e-3, 16, 8, CommModels{}), 2e-3);
}

TEST(Cost, GeometryOfSplitConv) {
  const NetworkSpec net = build_cosmoflow(32);
  const ExecutionPlan plan = plan_network(net, parse_grid("1x4x1x1"), 1);
  const LayerGeometry g = layer_geometry(net, plan, 0);
  EXPECT_EQ(g.out_local, (Shape5D{1, 16, 8, 32, 32}));
  EXPECT_EQ(g.faces[0], 2);  // interior rank, both faces
  EXPECT_EQ(g.shell[0], 1);
  EXPECT_EQ(g.main, (Shape5D{1, 16, 6, 32, 32}));
  EXPECT_EQ(g.halo_voxels, 2.0 * 32 * 32);
  EXPECT_EQ(g.fwd_slab_bytes[0], 4.0 * 4 * 32 * 32);  // 4 input channels, radius 1
  EXPECT_EQ(g.bwd_slab_bytes[0], 4.0 * 16 * 32 * 32);
  EXPECT_EQ(g.faces[1] + g.faces[2], 0);
}

TEST(Cost, UnpartitionedConvIsPlainComp) {
  const NetworkSpec net = build_cosmoflow(32);
  const KernelTimeTable t = flop_proportional_table(net, 1);
  const ExecutionPlan plan = plan_network(net, ProcessGrid{}, 1);
  CommModels m;
  m.link = LinkModel{1.0, 1.0};  // would dominate if used
  const LayerCost c = layer_cost(net, plan, 0, t, m);
  EXPECT_EQ(c.fp, t.entries().front().seconds);
  EXPECT_EQ(c.comm_fp, 0.0);
}

TEST(Cost, SplitConvUsesLinkModel) {
  const NetworkSpec net = build_cosmoflow(32);
  const KernelTimeTable t = flop_proportional_table(net, 1);
  const ExecutionPlan plan = plan_network(net, parse_grid("1x4x1x1"), 1);
  CommModels m;
  m.link = LinkModel{1e-3, 1e-9};
  const LayerGeometry g = layer_geometry(net, plan, 0);
  const LayerCost c = layer_cost(net, plan, 0, t, m);
  const double comm = 2.0 * (1e-3 + 1e-9 * g.fwd_slab_bytes[0]);
  EXPECT_DOUBLE_EQ(c.comm_fp, comm);
  EXPECT_DOUBLE_EQ(c.fp, std::max(c.comp_fp - (c.comp_fp * g.halo_voxels / (8.0 * 32 * 32)), comm) +
                             c.comp_fp * g.halo_voxels / (8.0 * 32 * 32));
}

TEST(Cost, InterNodeLinkClass) {
  CommModels m;
  m.link = LinkModel{1, 0};
  m.inter_node = LinkModel{5, 0};
  m.ranks_per_node = 4;
  EXPECT_EQ(m.link_between(1, 3).alpha, 1);
  EXPECT_EQ(m.link_between(3, 4).alpha, 5);
}

TEST(Cost, OverlapEnvelope) {
  const NetworkSpec net = build_cosmoflow(64);
  const KernelTimeTable t = flop_proportional_table(net, 2);
  CommModels m;
  m.link = LinkModel{1e-5, 1e-10};
  m.allreduce = CollectiveModel{std::log(1e-8), 0.8, 0.5};
  const CostBreakdown b = total_cost(net, plan_network(net, parse_grid("2x2x2x1"), 2), t, m);
  EXPECT_GE(b.total, b.sum_fp + std::max(b.sum_backward, b.sum_ar));
  EXPECT_LE(b.total, b.sum_fp + b.sum_backward + b.sum_ar);
  EXPECT_GT(b.sum_ar, 0);
}

TEST(Cost, ReportResumsExactly) {
  for (const char* grid : {"1x1x1x1", "2x2x1x1", "1x2x2x2"}) {
    const NetworkSpec net = build_cosmoflow(64);
    const ProcessGrid g = parse_grid(grid);
    CommModels m;
    m.link = LinkModel{3e-6, 1.1e-10};
    m.allreduce = CollectiveModel{-17.3, 0.77, 0.41};
    const CostBreakdown b = total_cost(net, plan_network(net, g, g.groups), flop_proportional_table(net, g.groups), m);
    std::stringstream report;
    write_report(report, b);
    const ReportTotals r = resum_report(report);
    EXPECT_EQ(r.sum_fp, b.sum_fp) << grid;
    EXPECT_EQ(r.sum_backward, b.sum_backward) << grid;
    EXPECT_EQ(r.sum_ar, b.sum_ar) << grid;
    EXPECT_EQ(r.total, b.total) << grid;
    EXPECT_EQ(r.reported_total, b.total) << grid;
  }
}

TEST(Cost, ConvOneShareAt512) {
  const double s = perfcheck::conv1_share(512);
  EXPECT_GE(s, 0.35);
  EXPECT_LE(s, 0.55);
}

TEST(Cost, DoublingPartitionsHalvesComp) {
  const std::pair<const char*, const char*> pairs[] = {
      {"1x1x1x1", "1x2x1x1"}, {"1x2x1x1", "1x4x1x1"}, {"1x8x1x1", "1x16x1x1"}, {"1x2x2x1", "1x2x2x2"}};
  for (const auto& [a, b] : pairs) {
    const perfcheck::Halving h = perfcheck::comp_halving(512, parse_grid(a), parse_grid(b));
    EXPECT_GT(h.layers, 5) << a << " vs " << b;
    EXPECT_TRUE(h.exact()) << a << " vs " << b << ": " << h.coarse_sum << " vs 2 x " << h.fine_sum;
  }
}

}  // namespace
}  // namespace hybridcnn::perf
