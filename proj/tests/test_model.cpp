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

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "hybridcnn/model/verify.hpp"
#include "testing.hpp"
#include "training.hpp"

namespace hybridcnn {
namespace {

using testing::expect_error;

constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

Shape5D out_of(const NetworkSpec& net, const std::string& name) {
  const int i = net.find(name);
  EXPECT_GE(i, 0) << name;
  return i < 0 ? Shape5D{} : net.layers[static_cast<std::size_t>(i)].out;
}

// ---------------------------------------------------------------------------
// Network construction.

TEST(Build, CosmoFlow128Shapes) {
  const NetworkSpec net = build_cosmoflow(128);
  EXPECT_EQ(net.input, (Shape5D{1, 4, 128, 128, 128}));
  EXPECT_EQ(out_of(net, "conv1"), (Shape5D{1, 16, 128, 128, 128}));
  EXPECT_EQ(out_of(net, "pool1"), (Shape5D{1, 16, 64, 64, 64}));
  EXPECT_EQ(out_of(net, "conv4"), (Shape5D{1, 128, 8, 8, 8}));  // stride 2 on 16^3
  EXPECT_EQ(out_of(net, "pool5"), (Shape5D{1, 256, 2, 2, 2}));
  EXPECT_EQ(net.find("pool6"), -1);
  EXPECT_EQ(out_of(net, "conv7"), (Shape5D{1, 256, 2, 2, 2}));
  EXPECT_EQ(out_of(net, "fc1").c, 2048);
  EXPECT_EQ(out_of(net, "fc2").c, 256);
  EXPECT_EQ(net.output(), (Shape5D{1, 4, 1, 1, 1}));
  EXPECT_EQ(net.loss, LossKind::kMse);
  EXPECT_EQ(net.find("bn1"), -1);
  EXPECT_GE(build_cosmoflow(128, CosmoFlowOptions{.with_bn = true}).find("bn1"), 0);
}

TEST(Build, CosmoFlowPoolsUntilTwo) {
  for (Extent wi : {32, 64, 128, 256, 512}) {
    const NetworkSpec net = build_cosmoflow(wi);
    int pools = 0;
    for (const auto& L : net.layers) pools += L.kind == LayerKind::kPool;
    // log2(wi) halvings in total, one of them by the strided conv, stop at 2.
    EXPECT_EQ(pools, static_cast<int>(std::log2(static_cast<double>(wi))) - 2) << wi;
    const LayerSpec& fc1 = net.layers[static_cast<std::size_t>(net.find("fc1"))];
    EXPECT_EQ(net.layers[static_cast<std::size_t>(fc1.inputs.front())].out, (Shape5D{1, 256, 2, 2, 2})) << wi;
  }
}

TEST(Build, UnsupportedWidths) {
  for (Extent wi : {0, 16, 48, 100}) {
    expect_error(ErrorCode::kUnsupportedWidth, [&] { build_cosmoflow(wi); });
  }
  for (Extent wi : {8, 24, 128}) {
    expect_error(ErrorCode::kUnsupportedWidth, [&] { build_unet_mini(wi); });
  }
}

TEST(Build, UNetShapes) {
  const NetworkSpec net = build_unet_mini(16);
  EXPECT_EQ(net.output(), (Shape5D{1, 2, 16, 16, 16}));
  EXPECT_EQ(net.loss, LossKind::kCrossEntropy);
  EXPECT_EQ(out_of(net, "pool2"), (Shape5D{1, 8, 4, 4, 4}));
  EXPECT_EQ(out_of(net, "up2"), (Shape5D{1, 8, 8, 8, 8}));
  EXPECT_EQ(out_of(net, "cat2"), (Shape5D{1, 16, 8, 8, 8}));
  EXPECT_EQ(out_of(net, "cat1"), (Shape5D{1, 8, 16, 16, 16}));
  const LayerSpec& cat1 = net.layers[static_cast<std::size_t>(net.find("cat1"))];
  ASSERT_EQ(cat1.inputs.size(), 2u);
  EXPECT_EQ(cat1.inputs[0], net.find("up1"));
  EXPECT_EQ(cat1.inputs[1], net.find("actd1_2"));
}

TEST(Build, ParameterLayoutIsContiguous) {
  const NetworkSpec net = build_unet_mini(16);
  const ParamLayout pl = param_layout(net);
  std::size_t off = 0, soff = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    EXPECT_EQ(pl.params[i].offset, off);
    EXPECT_EQ(pl.state[i].offset, soff);
    off += pl.params[i].count;
    soff += pl.state[i].count;
    if (net.layers[i].kind == LayerKind::kBatchNorm) {
      EXPECT_EQ(pl.state[i].count, 2 * std::size_t(net.layers[i].out.c));
    }
  }
  EXPECT_EQ(off, pl.total);
  EXPECT_EQ(soff, pl.state_total);
  const auto p = init_params<double>(net, 3);
  EXPECT_EQ(p, init_params<double>(net, 3));
  EXPECT_NE(p, init_params<double>(net, 4));
}

// ---------------------------------------------------------------------------
// Flop, parameter and memory arithmetic for CosmoFlow.

TEST(ModelCost, ForwardConvFlops128) {
  const FlopReport r = conv_flop_report(build_cosmoflow(128));
  EXPECT_NEAR(r.forward_total / 1e9, 18.52, 18.52 * 0.02);
  EXPECT_DOUBLE_EQ(r.training_total, 3 * r.forward_total);
}

TEST(ModelCost, TotalConvOps) {
  const std::pair<Extent, double> rows[] = {{128, 55.55}, {256, 443.8}, {512, 3550.0}};
  for (const auto& [wi, gf] : rows) {
    EXPECT_NEAR(conv_flop_report(build_cosmoflow(wi)).training_total / 1e9, gf, gf * 0.02) << wi;
  }
}

TEST(ModelCost, FlopsIndependentOracle) {
  // Direct sum of 2 * 27 * Cin * Cout * output voxels over the conv ladder.
  const NetworkSpec net = build_cosmoflow(128);
  double sum = 0;
  Extent cin = 4, ext = 128;
  const Extent ladder[7] = {16, 32, 64, 128, 256, 256, 256};
  for (int i = 0; i < 7; ++i) {
    if (i == 3) ext /= 2;
    sum += 2.0 * 27 * double(cin) * double(ladder[i]) * double(ext * ext * ext);
    cin = ladder[i];
    if (ext > 2) ext /= 2;
  }
  EXPECT_DOUBLE_EQ(conv_flop_report(net).forward_total, sum);
}

TEST(ModelCost, ParameterCount) {
  const double p = static_cast<double>(parameter_count(build_cosmoflow(128)));
  EXPECT_NEAR(p / 1e6, 9.44, 9.44 * 0.01);
  EXPECT_EQ(parameter_count(build_cosmoflow(128)), parameter_count(build_cosmoflow(512)));
}

TEST(ModelCost, MemoryEstimate) {
  const double m128 = memory_estimate(build_cosmoflow(128));
  EXPECT_NEAR(m128 / kGiB, 0.824, 0.824 * 0.15);
  const double m256 = memory_estimate(build_cosmoflow(256));
  const double m512 = memory_estimate(build_cosmoflow(512));
  // The fc outputs do not scale with W, so the ratio is 8 to two decimals.
  EXPECT_NEAR(m256 / m128, 8.0, 0.005);
  EXPECT_NEAR(m512 / m256, 8.0, 0.005);
}

// ---------------------------------------------------------------------------
// Optimizers and the learning-rate schedule.

TEST(Optim, ZeroGradientIsFixedPoint) {
  std::vector<double> p = {1.0, -2.0, 3.5};
  const std::vector<double> g(3, 0.0);
  AdamState<double> st(3);
  adam_step<double>(p, g, st, 1e-3);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.5}));
  sgd_step<double>(p, g, 1.0);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.5}));
}

TEST(Optim, AdamFirstStep) {
  // Bias correction makes mhat = g and vhat = g^2 on the first step.
  std::vector<double> p = {0.0, 0.0};
  const std::vector<double> g = {1.0, -4.0};
  AdamState<double> st(2);
  adam_step<double>(p, g, st, 1e-3);
  EXPECT_NEAR(p[0], -1e-3 * 1.0 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], 1e-3 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.t, 1);
}

TEST(Optim, AdamMatchesHandRecurrence) {
  std::vector<double> p = {0.5};
  AdamState<double> st(1);
  double m = 0, v = 0, x = 0.5;
  const double gs[] = {0.3, -0.1, 0.7, 0.2};
  for (int t = 1; t <= 4; ++t) {
    const double g = gs[t - 1];
    adam_step<double>(p, std::vector<double>{g}, st, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p[0], x, 1e-15);
  }
}

TEST(Optim, Sgd) {
  std::vector<double> p = {1.0, 2.0};
  sgd_step<double>(p, std::vector<double>{0.5, 0.5}, 1.0);
  EXPECT_EQ(p, (std::vector<double>{0.5, 1.5}));
  expect_error(ErrorCode::kShapeMismatch, [&] { sgd_step<double>(p, std::vector<double>{1.0}, 1.0); });
}

TEST(Optim, LearningRateSchedule) {
  const LrSchedule s{2e-3, 100.0, 0.01};
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 2e-3);
  EXPECT_NEAR(lr_at(s, 100), 2e-5, 1e-18);
  EXPECT_NEAR(lr_at(s, 50), 0.505 * 2e-3, 1e-18);
  EXPECT_NEAR(lr_at(s, 250), 2e-5, 1e-18);
  for (double e = 0; e < 100; e += 7) EXPECT_GT(lr_at(s, e), lr_at(s, e + 7));
}

// ---------------------------------------------------------------------------
// Planning.

TEST(Plan, RedistributionBeforeFullyConnected) {
  const NetworkSpec net = build_cosmoflow(32);
  const ExecutionPlan plan = plan_network(net, parse_grid("1x2x1x1"), 2);
  // Depth 2 after the last pool still splits in two; the first fc cannot.
  EXPECT_EQ(plan.redistribution_point, net.find("fc1"));
  EXPECT_FALSE(plan.redistribution_reason.empty());
  const ExecutionPlan one = plan_network(net, parse_grid("2x1x1x1"), 2);
  EXPECT_EQ(one.redistribution_point, static_cast<int>(net.layers.size()));
  EXPECT_TRUE(one.redistribution_reason.empty());
}

TEST(Plan, PointFollowsFirstIndivisibleLayer) {
  const NetworkSpec net = build_cosmoflow(32);
  // 32 -> pool 16 -> pool 8 -> conv4 stride 2 -> 4 -> pool 2; eight parts fail at depth 4 pooling.
  const ExecutionPlan plan = plan_network(net, parse_grid("1x8x1x1"), 1);
  EXPECT_LT(plan.redistribution_point, net.find("fc1"));
  EXPECT_GT(plan.redistribution_point, 0);
}

TEST(Plan, ForcedPoints) {
  const NetworkSpec net = build_cosmoflow(32);
  const ProcessGrid g = parse_grid("1x2x1x1");
  const int natural = plan_network(net, g, 2).redistribution_point;
  EXPECT_EQ(plan_network(net, g, 2, 3).redistribution_point, 3);
  EXPECT_EQ(plan_network(net, g, 2, 0).redistribution_point, 0);
  expect_error(ErrorCode::kNonDivisible, [&] { plan_network(net, g, 2, natural + 1); });
  expect_error(ErrorCode::kConfigError, [&] { plan_network(net, g, 2, -1); });
}

TEST(Plan, Rejections) {
  expect_error(ErrorCode::kBatchIndivisible, [] { plan_network(build_cosmoflow(32), parse_grid("2x1x1x1"), 3); });
  const ExecutionPlan p = plan_network(build_unet_mini(16), parse_grid("1x3x1x1"), 1);
  EXPECT_EQ(p.redistribution_point, 0);
  expect_error(ErrorCode::kNonDivisible,
               [] { verify_network<double>(build_unet_mini(16), parse_grid("1x3x1x1"), 1, 1); });
}

// ---------------------------------------------------------------------------
// Distributed execution against the serial oracle.

struct VerifyCase {
  const char* net;
  const char* grid;
  Extent batch;
};

class Verify : public ::testing::TestWithParam<VerifyCase> {};

NetworkSpec small_net(const std::string& name) { return name == "cosmoflow" ? build_cosmoflow(32) : build_unet_mini(16); }

TEST_P(Verify, Fp64AndFp32) {
  const VerifyCase c = GetParam();
  const NetworkSpec net = small_net(c.net);
  const VerifyResult r64 = verify_network<double>(net, parse_grid(c.grid), c.batch, 5);
  EXPECT_TRUE(r64.pass()) << "worst abs " << r64.worst_abs();
  EXPECT_LE(r64.worst_abs(), 1e-12);
  const VerifyResult r32 = verify_network<float>(net, parse_grid(c.grid), c.batch, 5);
  EXPECT_TRUE(r32.pass()) << "worst rel " << r32.worst_rel();
}

INSTANTIATE_TEST_SUITE_P(Grids, Verify,
                         ::testing::Values(VerifyCase{"cosmoflow", "1x2x1x1", 2}, VerifyCase{"cosmoflow", "2x2x1x1", 2},
                                           VerifyCase{"unet_mini", "1x2x2x1", 1}, VerifyCase{"unet_mini", "2x2x1x1", 2}),
                         [](const auto& info) {
                           std::string s = std::string(info.param.net) + "_" + info.param.grid;
                           for (auto& ch : s) ch = ch == 'x' ? '_' : ch;
                           return s;
                         });

TEST(Execute, SingleRankIsBitwiseSerial) {
  const NetworkSpec net = build_unet_mini(16);
  const auto data = training::batches<double>(net, 2, 2, 9);
  const auto s = training::serial<double>(net, data, 9, 1e-3);
  const auto d = training::distributed<double>(net, parse_grid("1x1x1x1"), data, 9, 1e-3);
  EXPECT_EQ(d.params, s.params);
  EXPECT_EQ(d.state, s.state);
  EXPECT_EQ(d.losses, s.losses);
}

TEST(Execute, SpatialTrainingTracksSerial) {
  const NetworkSpec net = build_unet_mini(16);
  const auto data = training::batches<double>(net, 2, 3, 10);
  const auto s = training::serial<double>(net, data, 10, 1e-3);
  const auto d = training::distributed<double>(net, parse_grid("1x2x1x1"), data, 10, 1e-3);
  EXPECT_TRUE(d.replicated);
  EXPECT_LE(testing::max_abs_diff(d.params, s.params), 1e-12);
  EXPECT_LE(testing::max_abs_diff(d.state, s.state), 1e-12);
  EXPECT_LE(training::max_pointwise_rel(d.losses, s.losses), 1e-12);
}

TEST(Execute, GradientIsMeanOfPerSampleGradients) {
  const NetworkSpec net = build_cosmoflow(32);
  const HostBatch<double> hb = synthetic_batch<double>(net, 4, 12);
  const auto params = init_params<double>(net, 12);
  const auto state = init_state<double>(net);
  const DropoutKey key{12, 0, 0, 0};
  const ExecutionPlan plan = plan_network(net, parse_grid("2x2x1x1"), 4);

  std::vector<double> mean(params.size(), 0.0);
  const Extent per = hb.input.shape.per_sample();
  const std::size_t outs = hb.targets.size() / 4;
  for (Extent n = 0; n < 4; ++n) {
    HostBatch<double> one;
    one.input = HostTensor<double>(with_batch(net.input, 1));
    std::copy_n(hb.input.data.begin() + n * per, per, one.input.data.begin());
    one.targets.assign(hb.targets.begin() + static_cast<long>(n * outs), hb.targets.begin() + static_cast<long>((n + 1) * outs));
    one.sample_ids = {hb.sample_ids[static_cast<std::size_t>(n)]};
    auto tr = serial_forward<double>(net, params, state, one.input, Mode::kTrain, key, one.sample_ids);
    serial_backward<double>(net, params, one.input, one, Mode::kTrain, key, tr);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += tr.param_grad[k] / 4;
  }

  std::vector<std::vector<double>> reduced(4);
  std::vector<double> losses(4);
  Fabric fabric(4);
  fabric.run([&](Comm& comm) {
    const auto b = scatter_batch(hb, plan, comm.rank());
    auto tr = dist_forward<double>(comm, net, plan, params, state, b.input, Mode::kTrain, key, b.sample_ids);
    dist_backward<double>(comm, net, plan, params, b.input, b, Mode::kTrain, key, tr);
    reduced[static_cast<std::size_t>(comm.rank())] = reduce_gradients(comm, tr);
    losses[static_cast<std::size_t>(comm.rank())] = tr.loss;
  });
  reduced[0].resize(mean.size());
  double scale = 0;
  for (double g : mean) scale = std::max(scale, std::abs(g));
  EXPECT_LE(testing::max_abs_diff(reduced[0], mean), 1e-10 * scale);
  for (int r = 1; r < 4; ++r) EXPECT_EQ(losses[static_cast<std::size_t>(r)], losses[0]);
}

TEST(Execute, RedistributionPointMovesTrafficNotResults) {
  const NetworkSpec net = build_cosmoflow(32);
  const auto data = training::batches<double>(net, 2, 1, 13);
  const ProcessGrid g = parse_grid("1x2x1x1");
  TrafficCounters late, early;
  const auto a = training::distributed<double>(net, g, data, 13, 1e-3, ExecMode::kCooperative, OptimizerKind::kSgd,
                                               std::nullopt, &late);
  const auto b = training::distributed<double>(net, g, data, 13, 1e-3, ExecMode::kCooperative, OptimizerKind::kSgd,
                                               net.find("conv3"), &early);
  EXPECT_LE(testing::max_abs_diff(a.params, b.params), 1e-12);
  EXPECT_LE(training::max_pointwise_rel(a.losses, b.losses), 1e-12);
  EXPECT_NE(late.total_sent(), early.total_sent());
  EXPECT_GT(late.halo_bytes(), early.halo_bytes());
}

TEST(Execute, EvalModeIsDeterministicAndDropoutFree) {
  const NetworkSpec net = build_cosmoflow(32);
  const HostBatch<double> hb = synthetic_batch<double>(net, 2, 14);
  const auto params = init_params<double>(net, 14);
  const auto state = init_state<double>(net);
  const auto a = serial_forward<double>(net, params, state, hb.input, Mode::kEval, DropoutKey{1, 0, 0, 0}, hb.sample_ids);
  const auto b = serial_forward<double>(net, params, state, hb.input, Mode::kEval, DropoutKey{2, 0, 0, 0}, hb.sample_ids);
  EXPECT_EQ(a.acts.back().data, b.acts.back().data);
  const auto c = serial_forward<double>(net, params, state, hb.input, Mode::kTrain, DropoutKey{1, 0, 0, 0}, hb.sample_ids);
  const auto d = serial_forward<double>(net, params, state, hb.input, Mode::kTrain, DropoutKey{2, 0, 0, 0}, hb.sample_ids);
  EXPECT_NE(c.acts.back().data, d.acts.back().data);
}

TEST(Execute, WholeNetworkFiniteDifferences) {
  const NetworkSpec net = build_unet_mini(16, UNetOptions{.pool = PoolType::kAverage});
  const HostBatch<double> hb = synthetic_batch<double>(net, 1, 15);
  std::vector<double> params = init_params<double>(net, 15);
  const auto state = init_state<double>(net);
  const DropoutKey key{15, 0, 0, 0};
  auto tr = serial_forward<double>(net, params, state, hb.input, Mode::kTrain, key, hb.sample_ids);
  serial_backward<double>(net, params, hb.input, hb, Mode::kTrain, key, tr);
  const auto objective = [&] {
    auto t = serial_forward<double>(net, params, state, hb.input, Mode::kTrain, key, hb.sample_ids);
    serial_backward<double>(net, params, hb.input, hb, Mode::kTrain, key, t);
    return double(t.loss);
  };
  const gradcheck::Check c = gradcheck::compare("unet_params", params, tr.param_grad, objective, 331, 1e-6);
  EXPECT_GT(c.probes, 10u);
  EXPECT_LE(c.max_rel, 1e-5) << c.probes << " probes";
}

}  // namespace
}  // namespace hybridcnn
