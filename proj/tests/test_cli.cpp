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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "hybridcnn/cli/commands.hpp"
#include "testing.hpp"

namespace hybridcnn::cli {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& tag) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() /
               ("hybridcnn_cli_" + std::string(info->name()) + "_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string run_ok(const RunConfig& c) {
  std::ostringstream out;
  EXPECT_EQ(run_command(c, out), 0);
  return out.str();
}

/// The error message, or "" when the command succeeded.
std::string config_error(const RunConfig& c, ErrorCode code = ErrorCode::kConfigError) {
  std::ostringstream out;
  try {
    run_command(c, out);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    return e.what();
  }
  return "";
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

TEST(Config, ErrorsNameTheField) {
  RunConfig base;
  base.command = "verify";
  auto expect_field = [&](RunConfig c, const std::string& field, ErrorCode code = ErrorCode::kConfigError) {
    const std::string msg = config_error(c, code);
    EXPECT_NE(msg.find("--" + field), std::string::npos) << "field " << field << ": '" << msg << "'";
  };
  {
    RunConfig c = base;
    c.fp = 16;
    expect_field(c, "fp");
  }
  {
    RunConfig c = base;
    c.batch = 0;
    expect_field(c, "batch");
  }
  {
    RunConfig c = base;
    c.grid = "1x2";
    expect_field(c, "grid");
  }
  {
    RunConfig c = base;
    c.grid = "1x0x1x1";
    expect_field(c, "grid");
  }
  {
    RunConfig c = base;
    c.net = "resnet";
    expect_field(c, "net");
  }
  {
    RunConfig c = base;
    c.wi = {48};
    expect_field(c, "wi", ErrorCode::kUnsupportedWidth);
  }
  {
    RunConfig c = base;
    c.grid = "2x1x1x1";
    c.batch = 3;
    expect_field(c, "batch");
  }
  {
    RunConfig c = base;
    c.command = "train";
    expect_field(c, "dataset");
    c.synthetic = 8;
    c.optimizer = "rmsprop";
    expect_field(c, "optimizer");
    c.optimizer = "sgd";
    c.lr = -1;
    expect_field(c, "lr");
  }
  {
    RunConfig c = base;
    c.command = "perf";
    expect_field(c, "kernels");
  }
  {
    RunConfig c = base;
    c.command = "make-fixtures";
    c.dims = "4x4";
    expect_field(c, "dims");
    c.dims = "1x4x4x4";
    c.dtype = "int8";
    expect_field(c, "dtype");
    c.dtype = "int16";
    expect_field(c, "output");
  }
  RunConfig bogus;
  bogus.command = "dance";
  EXPECT_NE(config_error(bogus).find("dance"), std::string::npos);
}

TEST(Config, PrecisionDefaults) {
  RunConfig c;
  c.command = "train";
  EXPECT_EQ(fp_bits(c), 32);
  c.command = "verify";
  EXPECT_EQ(fp_bits(c), 64);
  c.fp = 32;
  EXPECT_EQ(fp_bits(c), 32);
}

TEST(Flops, TableRows) {
  RunConfig c;
  c.command = "flops";
  const auto rows = lines(run_ok(c));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "wi,params,forward_conv_gflops,training_conv_gflops,memory_gib");
  const double expect_total[] = {55.55, 443.8, 3550};
  for (int i = 0; i < 3; ++i) {
    std::istringstream in(rows[static_cast<std::size_t>(i + 1)]);
    long long wi, params;
    double fwd, total, mem;
    char comma;
    in >> wi >> comma >> params >> comma >> fwd >> comma >> total >> comma >> mem;
    EXPECT_EQ(wi, 128 << i);
    EXPECT_NEAR(static_cast<double>(params) / 1e6, 9.44, 0.0944);
    EXPECT_NEAR(total, expect_total[i], expect_total[i] * 0.02);
  }
}

TEST(Verify, TrivialAndSplitGridsPass) {
  RunConfig c;
  c.command = "verify";
  c.wi = {32};
  const std::string one = run_ok(c);
  EXPECT_NE(one.find("-> PASS"), std::string::npos);
  c.grid = "1x2x1x1";
  const std::string two = run_ok(c);
  EXPECT_NE(two.find("-> PASS"), std::string::npos);
  EXPECT_NE(two.find("tolerance abs 1e-12"), std::string::npos);
  EXPECT_NE(two.find("conv1,"), std::string::npos);
}

TEST(Verify, IndivisibleGridNamesTheLayer) {
  RunConfig c;
  c.command = "verify";
  c.net = "unet_mini";
  c.grid = "1x3x1x1";
  std::ostringstream out;
  try {
    run_command(c, out);
    ADD_FAILURE() << "accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonDivisible);
    EXPECT_NE(std::string(e.what()).find("network input"), std::string::npos) << e.what();
  }
  // Divisible at the input but not deeper in: the plan names the layer where
  // the spatial layout ends.
  const ExecutionPlan plan = plan_network(build_cosmoflow(32), parse_grid("1x1x1x16"), 1);
  EXPECT_NE(plan.redistribution_reason.find("layer pool2"), std::string::npos) << plan.redistribution_reason;
}

TEST(Fixtures, FileSizesAndDeterminism) {
  const fs::path a = scratch("a"), b = scratch("b");
  RunConfig c;
  c.command = "make-fixtures";
  c.samples = 8;
  c.dims = "1x16x16x16";
  c.output = a.string();
  const std::string report = run_ok(c);
  EXPECT_NE(report.find("bytes_per_sample 8248"), std::string::npos) << report;
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().extension() != ".hsb") continue;
    ++files;
    EXPECT_EQ(fs::file_size(e.path()), 24u + 32u + 8192u);
  }
  EXPECT_EQ(files, 8);
  c.output = b.string();
  run_ok(c);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(slurp(a / fixture_name(i, "")), slurp(b / fixture_name(i, "")));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Fixtures, DryRunWritesNothing) {
  const fs::path p = scratch("dry");
  RunConfig c;
  c.command = "make-fixtures";
  c.samples = 2;
  c.dims = "4x512x512x512";
  c.dry_run = true;
  c.output = p.string();
  const std::string report = run_ok(c);
  EXPECT_NE(report.find("payload_gib_per_sample 1.000000"), std::string::npos) << report;
  EXPECT_FALSE(fs::exists(p));
}

RunConfig unet_train(const fs::path& dir) {
  RunConfig c;
  c.command = "train";
  c.net = "unet_mini";
  c.synthetic = 16;
  c.batch = 2;
  c.epochs = 2;
  c.seed = 4;
  c.data_dir = dir.string();
  return c;
}

TEST(Train, ZeroEpochsWriteHeaderOnly) {
  const fs::path dir = scratch("zero");
  RunConfig c = unet_train(dir);
  c.epochs = 0;
  EXPECT_EQ(run_ok(c), "epoch,train_loss,val_loss\n");
  fs::remove_all(dir);
}

TEST(Train, RerunIsBitIdentical) {
  const fs::path dir = scratch("rerun");
  const RunConfig c = unet_train(dir);
  const std::string first = run_ok(c);
  const auto rows = lines(first);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].rfind("0,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("1,", 0), 0u);
  EXPECT_EQ(run_ok(c), first);
  fs::remove_all(dir);
}

TEST(Train, ParallelRanksMatchCooperative) {
  const fs::path dir = scratch("par");
  RunConfig c = unet_train(dir);
  c.grid = "2x2x1x1";
  const std::string coop = run_ok(c);
  c.parallel = true;
  EXPECT_EQ(run_ok(c), coop);
  fs::remove_all(dir);
}

TEST(Train, OutputFileMatchesStdout) {
  const fs::path dir = scratch("out");
  RunConfig c = unet_train(dir);
  c.epochs = 1;
  const std::string direct = run_ok(c);
  c.output = (dir / "metrics.csv").string();
  EXPECT_EQ(run_ok(c), "");
  EXPECT_EQ(slurp(dir / "metrics.csv"), direct);
  fs::remove_all(dir);
}

TEST(Train, FiveEpochTrend) {
  const fs::path dir = scratch("trend");
  RunConfig c = unet_train(dir);
  c.synthetic = 64;
  c.batch = 4;
  c.epochs = 5;
  c.lr = 2e-3;
  const auto rows = lines(run_ok(c));
  ASSERT_EQ(rows.size(), 6u);
  auto loss = [&](std::size_t r) { return std::stod(rows[r].substr(rows[r].find(',') + 1)); };
  EXPECT_LT(loss(5), loss(1));
  // Validation loss reported every epoch (S/8 = 8 samples, two batches).
  for (std::size_t r = 1; r < 6; ++r) EXPECT_NE(rows[r].back(), ',');
  fs::remove_all(dir);
}

TEST(Perf, IdealReportResums) {
  RunConfig c;
  c.command = "perf";
  c.ideal = true;
  c.wi = {128};
  c.grid = "1x4x1x1";
  const std::string out = run_ok(c);
  ASSERT_EQ(out.rfind("# net cosmoflow wi 128 grid 1x4x1x1", 0), 0u) << out;
  std::istringstream in(out.substr(out.find('\n') + 1));
  const perf::ReportTotals t = perf::resum_report(in);
  EXPECT_EQ(t.total, t.reported_total);
  EXPECT_GT(t.total, 0);
}

// ---------------------------------------------------------------------------
// The installed binary.

#ifdef HYBRIDCNN_CLI
struct Proc {
  int status = -1;
  std::string out;
};

Proc run_binary(const std::string& args) {
  Proc p;
  const std::string cmd = std::string(HYBRIDCNN_CLI) + " " + args + " 2>&1";
  FILE* f = ::popen(cmd.c_str(), "r");
  if (!f) return p;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) p.out.append(buf, n);
  const int raw = ::pclose(f);
  p.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return p;
}

TEST(Binary, FlopsAndErrors) {
  const Proc ok = run_binary("flops --net cosmoflow --wi 128");
  EXPECT_EQ(ok.status, 0);
  EXPECT_NE(ok.out.find("128,9437636,"), std::string::npos) << ok.out;
  const Proc bad = run_binary("verify --fp 16");
  EXPECT_EQ(bad.status, 2);
  EXPECT_NE(bad.out.find("error: ConfigError"), std::string::npos) << bad.out;
  EXPECT_NE(bad.out.find("--fp"), std::string::npos) << bad.out;
  const Proc none = run_binary("");
  EXPECT_NE(none.status, 0);
}

TEST(Binary, ConfigFile) {
  const fs::path dir = scratch("cfg");
  fs::create_directories(dir);
  std::ofstream(dir / "run.ini") << "[flops]\nnet=cosmoflow\nwi=256\n";
  const Proc p = run_binary("flops --config " + (dir / "run.ini").string());
  EXPECT_EQ(p.status, 0) << p.out;
  EXPECT_NE(p.out.find("\n256,"), std::string::npos) << p.out;
  fs::remove_all(dir);
}
#endif

}  // namespace
}  // namespace hybridcnn::cli
