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

// Acceptance suite. Prints one PASS/FAIL line per criterion with the measured
// values, and exits non-zero if any criterion fails.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "hybridcnn/cli/commands.hpp"
#include "hybridcnn/cli/trainer.hpp"
#include "hybridcnn/datastore/fixtures.hpp"
#include "hybridcnn/layers/flops.hpp"
#include "hybridcnn/model/verify.hpp"
#include "perf_checks.hpp"
#include "store_audit.hpp"
#include "training.hpp"

namespace fs = std::filesystem;
using namespace hybridcnn;

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

fs::path scratch_root() {
  return fs::temp_directory_path() / ("hybridcnn_acceptance_" + std::to_string(::getpid()));
}

// 1 -------------------------------------------------------------------------
Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  double worst64 = 0, worst32 = 0;
  int runs = 0, bad = 0;
  std::string first_bad;
  const std::vector<NetworkSpec> nets = {build_cosmoflow(32), build_unet_mini(16)};
  for (const auto& net : nets) {
    for (const char* g : {"1x2x1x1", "1x4x1x1", "1x2x2x1", "2x2x1x1"}) {
      const ProcessGrid grid = parse_grid(g);
      const VerifyResult a = verify_network<double>(net, grid, 2, 2024);
      const VerifyResult b = verify_network<float>(net, grid, 2, 2024);
      worst64 = std::max(worst64, a.worst_abs());
      worst32 = std::max(worst32, b.worst_rel());
      runs += 2;
      for (const auto* r : {&a, &b}) {
        if (!r->pass()) {
          ++bad;
          if (first_bad.empty()) first_bad = net.name + " " + g + " fp" + std::to_string(r->fp_bits);
        }
      }
    }
  }
  const double t = seconds_since(t0);
  Outcome o;
  o.pass = bad == 0 && t <= 120;
  o.detail = fmt("%d runs, fp64 worst abs %.2e (<= 1e-12), fp32 worst rel %.2e (<= 1e-5), %.1f s (<= 120)", runs,
                 worst64, worst32, t);
  if (bad) o.detail += ", first failure " + first_bad;
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const auto checks = gradcheck::layer_checks(2024);
  double worst = 0;
  std::string where;
  std::size_t probes = 0;
  for (const auto& c : checks) {
    probes += c.probes;
    if (c.max_rel >= worst) {
      worst = c.max_rel;
      where = c.name;
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t <= 60,
          fmt("%zu checks, %zu probes, worst rel %.2e at %s (<= 1e-6), %.1f s (<= 60)", checks.size(), probes, worst,
              where.c_str(), t)};
}

// 3 -------------------------------------------------------------------------
Outcome partition_invariance() {
  const char* grids[] = {"1x1x1x1", "1x2x1x1", "2x1x1x1", "1x4x1x1", "2x2x1x1", "4x1x1x1", "1x2x2x1"};
  double w64 = 0, l32 = 0;
  bool replicated = true;
  int runs = 0;
  const std::vector<NetworkSpec> nets = {build_unet_mini(16), build_cosmoflow(32)};
  for (const auto& net : nets) {
    const auto d64 = training::batches<double>(net, 4, 3, 7);
    const auto d32 = training::batches<float>(net, 4, 3, 7);
    const auto s64 = training::serial<double>(net, d64, 7, 1e-3);
    const auto s32 = training::serial<float>(net, d32, 7, 1e-3);
    for (const char* g : grids) {
      const ProcessGrid grid = parse_grid(g);
      const auto r64 = training::distributed<double>(net, grid, d64, 7, 1e-3);
      const auto r32 = training::distributed<float>(net, grid, d32, 7, 1e-3);
      w64 = std::max(w64, training::rel_error(r64.params, s64.params));
      l32 = std::max(l32, training::max_pointwise_rel(r32.losses, s32.losses));
      replicated = replicated && r64.replicated && r32.replicated;
      ++runs;
    }
  }
  return {w64 <= 1e-10 && l32 <= 1e-4 && replicated,
          fmt("%d grid runs over G*pd in {1,2,4}, fp64 weight rel %.2e (<= 1e-10), fp32 loss rel %.2e (<= 1e-4), "
              "replicas %s",
              runs, w64, l32, replicated ? "identical" : "DIVERGED")};
}

// 4 -------------------------------------------------------------------------
Outcome model_cost() {
  bool ok = true;
  std::string d;
  auto within = [&](double got, double want, double tol) {
    const bool in = std::abs(got - want) <= want * tol;
    ok = ok && in;
    return in ? "" : "(out)";
  };
  const double fwd = conv_flop_report(build_cosmoflow(128)).forward_total / 1e9;
  d += fmt("fwd %.2f GF%s", fwd, within(fwd, 18.52, 0.02));
  const std::pair<Extent, double> rows[] = {{128, 55.55}, {256, 443.8}, {512, 3550.0}};
  for (const auto& [wi, gf] : rows) {
    const double got = conv_flop_report(build_cosmoflow(wi)).training_total / 1e9;
    d += fmt(", total@%lld %.2f GF%s", static_cast<long long>(wi), got, within(got, gf, 0.02));
  }
  const double params = static_cast<double>(parameter_count(build_cosmoflow(128))) / 1e6;
  d += fmt(", params %.3f M%s", params, within(params, 9.44, 0.01));
  const double m128 = memory_estimate(build_cosmoflow(128));
  const double m256 = memory_estimate(build_cosmoflow(256));
  const double m512 = memory_estimate(build_cosmoflow(512));
  d += fmt(", memory %.3f GiB%s", m128 / kGiB, within(m128 / kGiB, 0.824, 0.15));
  // The fc outputs do not grow with W, so the ratio is exactly 8 only to two decimals.
  const double r1 = m256 / m128, r2 = m512 / m256;
  const bool ratio_ok = std::abs(r1 - 8) < 0.005 && std::abs(r2 - 8) < 0.005;
  ok = ok && ratio_ok;
  d += fmt(", ratios %.4f %.4f%s", r1, r2, ratio_ok ? "" : "(out)");
  return {ok, d};
}

// 5 -------------------------------------------------------------------------
Outcome datastore(const fs::path& root) {
  const auto t0 = Clock::now();
  FixtureConfig fc;
  fc.samples = 64;
  fc.dims = {4, 16, 16, 16};
  fc.seed = 5;
  const Manifest m = read_manifest(make_fixtures(root / "store", fc));
  struct Case {
    const char* grid;
    std::int64_t batch;
  };
  bool ok = true;
  std::string d;
  for (const Case c : {Case{"2x2x1x1", 4}, Case{"4x1x2x1", 8}}) {
    const audit::Report r = audit::run(m, parse_grid(c.grid), c.batch, 4, 31, 100);
    const bool good = r.epoch0_bytes == r.dataset_bytes && r.later_bytes == 0 && r.coverage && r.schedule_match &&
                      r.probes == 100 && r.probe_failures == 0;
    ok = ok && good;
    if (!d.empty()) d += "; ";
    d += fmt("%s: epoch0 %llu of %llu B, epochs 1-3 %llu B, coverage %s, %zu probes (%zu slabs, %zu mismatches)", c.grid,
             static_cast<unsigned long long>(r.epoch0_bytes), static_cast<unsigned long long>(r.dataset_bytes),
             static_cast<unsigned long long>(r.later_bytes), r.coverage && r.schedule_match ? "exact" : "WRONG",
             r.probes, r.slabs_checked, r.probe_failures);
  }
  const double t = seconds_since(t0);
  d += fmt(", %.1f s (<= 60)", t);
  return {ok && t <= 60, d};
}

// 6 -------------------------------------------------------------------------
Outcome perf_model() {
  const double share = perfcheck::conv1_share(512);
  bool halves = true;
  std::string pairs;
  const std::pair<const char*, const char*> steps[] = {
      {"1x1x1x1", "1x2x1x1"}, {"1x2x1x1", "1x4x1x1"}, {"1x8x1x1", "1x16x1x1"}, {"1x2x2x1", "1x2x2x2"}};
  for (const auto& [a, b] : steps) {
    const auto h = perfcheck::comp_halving(512, parse_grid(a), parse_grid(b));
    halves = halves && h.exact();
    pairs += fmt(" %s->%s%s", a, b, h.exact() ? "" : "(inexact)");
  }
  const double fit = perfcheck::fitter_recovery().worst();
  const bool share_ok = share >= 0.35 && share <= 0.55;
  return {share_ok && halves && fit <= 1e-6,
          fmt("conv1 share %.3f in [0.35,0.55], comp halves exactly:%s, fitter worst error %.2e (<= 1e-6)", share,
              pairs.c_str(), fit)};
}

// 7 -------------------------------------------------------------------------
std::string run_cli(cli::RunConfig c) {
  std::ostringstream out;
  cli::run_command(c, out);
  return out.str();
}

Outcome determinism(const fs::path& root) {
  std::vector<std::string> bad;
  auto check = [&](bool same, const char* what) {
    if (!same) bad.push_back(what);
  };

  // Training steps at the library level.
  const NetworkSpec unet = build_unet_mini(16);
  const auto data = training::batches<float>(unet, 4, 3, 9);
  const ProcessGrid grid = parse_grid("2x2x1x1");
  const auto a = training::distributed<float>(unet, grid, data, 9, 1e-3, ExecMode::kCooperative);
  const auto b = training::distributed<float>(unet, grid, data, 9, 1e-3, ExecMode::kCooperative);
  const auto p = training::distributed<float>(unet, grid, data, 9, 1e-3, ExecMode::kParallel);
  check(a.params == b.params && a.losses == b.losses, "train steps rerun");
  check(a.params == p.params && a.losses == p.losses, "train steps parallel");

  // Commands.
  cli::RunConfig train;
  train.command = "train";
  train.net = "unet_mini";
  train.synthetic = 16;
  train.batch = 4;
  train.epochs = 2;
  train.seed = 3;
  train.grid = "1x2x2x1";
  train.data_dir = (root / "train").string();
  const std::string t1 = run_cli(train);
  check(run_cli(train) == t1, "train rerun");
  train.parallel = true;
  check(run_cli(train) == t1, "train parallel");

  cli::RunConfig verify;
  verify.command = "verify";
  verify.net = "cosmoflow";
  verify.wi = {32};
  verify.grid = "1x2x2x1";
  const std::string v1 = run_cli(verify);
  check(run_cli(verify) == v1, "verify rerun");
  verify.parallel = true;
  check(run_cli(verify) == v1, "verify parallel");

  cli::RunConfig perf;
  perf.command = "perf";
  perf.wi = {512};
  perf.grid = "2x4x2x1";
  perf.ideal = true;
  const std::string p1 = run_cli(perf);
  check(run_cli(perf) == p1, "perf rerun");

  cli::RunConfig fx;
  fx.command = "make-fixtures";
  fx.samples = 4;
  fx.dims = "2x8x8x8";
  fx.output = (root / "fx1").string();
  run_cli(fx);
  fx.output = (root / "fx2").string();
  run_cli(fx);
  bool same_files = true;
  for (const auto& e : fs::directory_iterator(root / "fx1")) {
    std::ifstream x(e.path(), std::ios::binary), y(root / "fx2" / e.path().filename(), std::ios::binary);
    const std::string sx((std::istreambuf_iterator<char>(x)), {}), sy((std::istreambuf_iterator<char>(y)), {});
    if (e.path().filename() != "manifest.txt" && sx != sy) same_files = false;
  }
  check(same_files, "fixtures rerun");

  // Data delivery.
  FixtureConfig fc;
  fc.samples = 16;
  fc.dims = {1, 8, 8, 8};
  const Manifest m = read_manifest(make_fixtures(root / "det", fc));
  const auto sa = audit::run(m, grid, 4, 2, 5, 20, ExecMode::kCooperative);
  const auto sb = audit::run(m, grid, 4, 2, 5, 20, ExecMode::kParallel);
  check(sa.exchange_bytes == sb.exchange_bytes && sb.probe_failures == 0 && sb.schedule_match, "datastore parallel");

  std::string d = "train steps, train, verify, perf, make-fixtures, datastore: ";
  if (bad.empty()) {
    d += "reruns and parallel runs bit-identical";
  } else {
    d += "mismatch in";
    for (const auto& s : bad) d += " [" + s + "]";
  }
  return {bad.empty(), d};
}

// 8 -------------------------------------------------------------------------
Outcome smoke(const fs::path& root) {
  const auto t0 = Clock::now();
  FixtureConfig fc;
  fc.samples = 64;
  fc.dims = {4, 32, 32, 32};
  fc.seed = 11;
  const Manifest m = read_manifest(make_fixtures(root / "smoke", fc));
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.epochs = 100;
  cfg.max_steps = 50;
  cfg.seed = 1;
  cfg.val_samples = 0;
  cfg.lr.initial = 1e-3;
  cfg.lr.horizon = 50.0 / 16;  // epochs covered by the 50 steps
  const auto r = train<float>(build_cosmoflow(32), ProcessGrid{}, m, cfg);
  const double t = seconds_since(t0);
  const double first = r.step_losses.front(), last = r.step_losses.back();
  const double ratio = first / last;
  return {r.step_losses.size() == 50 && ratio >= 10 && t <= 120,
          fmt("%zu Adam steps, loss %.4g -> %.4g, drop %.1fx (>= 10), %.1f s (<= 120)", r.step_losses.size(), first,
              last, ratio, t)};
}

}  // namespace

int main() {
  const fs::path root = scratch_root();
  fs::create_directories(root);
  report(1, "oracle equivalence", oracle_equivalence);
  report(2, "gradient checks", gradient_checks);
  report(3, "training partition invariance", partition_invariance);
  report(4, "model size and cost", model_cost);
  report(5, "datastore", [&] { return datastore(root); });
  report(6, "performance model", perf_model);
  report(7, "determinism", [&] { return determinism(root); });
  report(8, "smoke learning", [&] { return smoke(root); });
  std::error_code ec;
  fs::remove_all(root, ec);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
