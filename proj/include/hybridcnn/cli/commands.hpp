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


// Command implementations behind the `hybridcnn` executable. Each returns the
// process exit status and writes its primary output to the given stream.

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hybridcnn/cli/trainer.hpp"
#include "hybridcnn/datastore/fixtures.hpp"
#include "hybridcnn/errors.hpp"
#include "hybridcnn/model/network.hpp"
#include "hybridcnn/model/verify.hpp"
#include "hybridcnn/perfmodel/cost.hpp"

namespace hybridcnn::cli {

struct RunConfig {
  std::string command;
  std::string dataset;  // manifest path
  std::string net = "cosmoflow";
  std::vector<Extent> wi;  // one width, or several for `flops`
  std::string grid = "1x1x1x1";
  Extent batch = 2;
  int epochs = 1;
  std::uint64_t seed = 1;
  int fp = 0;  // 0: fp32 for train, fp64 otherwise
  std::string output;  // empty: stdout
  bool parallel = false;
  bool batchnorm = false;  // CosmoFlow variant with BN after each conv

  // train
  std::int64_t synthetic = 0;
  std::string data_dir;
  double lr = 1e-3;
  std::string optimizer = "adam";
  std::int64_t val_samples = -1;  // < 0: one eighth of the dataset

  // perf
  std::string kernels;
  bool ideal = false;
  std::string pingpong;
  std::string allreduce;
  int ranks_per_node = 0;
  std::string inter_pingpong;

  // make-fixtures
  std::int64_t samples = 8;
  std::string dims = "1x16x16x16";
  std::string dtype = "int16";
  bool labels = false;
  bool dry_run = false;
};

[[noreturn]] inline void field_error(const std::string& field, const std::string& msg) {
  fail(ErrorCode::kConfigError, "--" + field + ": " + msg);
}

inline int fp_bits(const RunConfig& c) { return c.fp != 0 ? c.fp : (c.command == "train" ? 32 : 64); }

inline Extent single_width(const RunConfig& c, Extent fallback) {
  if (c.wi.empty()) return fallback;
  if (c.wi.size() != 1) field_error("wi", "expects a single width for " + c.command);
  return c.wi.front();
}

inline NetworkSpec make_network(const RunConfig& c, Extent wi) {
  try {
    if (c.net == "cosmoflow") {
      CosmoFlowOptions o;
      o.with_bn = c.batchnorm;
      return build_cosmoflow(wi, o);
    }
    if (c.net == "unet_mini") return build_unet_mini(wi);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kUnsupportedWidth) fail(e.code(), "--wi: " + e.detail());
    throw;
  }
  field_error("net", "unknown network '" + c.net + "' (expected cosmoflow or unet_mini)");
}

inline ProcessGrid grid_of(const RunConfig& c) {
  try {
    const ProcessGrid g = parse_grid(c.grid);
    if (!g.valid()) field_error("grid", "every factor must be >= 1");
    return g;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigError && std::string(e.what()).find("--grid") != std::string::npos) throw;
    field_error("grid", e.detail());
  }
}

inline void validate_common(const RunConfig& c) {
  if (c.fp != 0 && c.fp != 32 && c.fp != 64) field_error("fp", "must be 32 or 64, got " + std::to_string(c.fp));
  if (c.batch < 1) field_error("batch", "must be >= 1");
  if (c.epochs < 0) field_error("epochs", "must be >= 0");
}

inline FileDims parse_dims(const std::string& text) {
  FileDims d{};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, 'x')) {
    if (i >= 4) field_error("dims", "expected CxDxHxW, got '" + text + "'");
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || v == 0) field_error("dims", "bad extent '" + part + "' in '" + text + "'");
    d[i++] = v;
  }
  if (i != 4) field_error("dims", "expected CxDxHxW, got '" + text + "'");
  return d;
}

/// Opens `path` (or returns `fallback` when empty) for writing.
class OutputTarget {
 public:
  OutputTarget(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (path.empty()) return;
    file_.open(path, std::ios::trunc);
    require(static_cast<bool>(file_), ErrorCode::kIoError, "--output: cannot write " + path);
    stream_ = &file_;
  }
  std::ostream& get() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

inline ExecMode exec_mode(const RunConfig& c) { return c.parallel ? ExecMode::kParallel : ExecMode::kCooperative; }

// ---------------------------------------------------------------------------

inline int cmd_verify(const RunConfig& c, std::ostream& out) {
  validate_common(c);
  const Extent wi = single_width(c, c.net == "unet_mini" ? 16 : 32);
  const NetworkSpec net = make_network(c, wi);
  const ProcessGrid grid = grid_of(c);
  if (c.batch % grid.groups != 0) field_error("batch", "must be divisible by the group count " + std::to_string(grid.groups));
  OutputTarget target(c.output, out);
  const VerifyResult r = fp_bits(c) == 64 ? verify_network<double>(net, grid, c.batch, c.seed, exec_mode(c))
                                          : verify_network<float>(net, grid, c.batch, c.seed, exec_mode(c));
  r.write(target.get());
  return r.pass() ? 0 : 1;
}

inline int cmd_flops(const RunConfig& c, std::ostream& out) {
  const std::vector<Extent> widths = c.wi.empty() ? std::vector<Extent>{128, 256, 512} : c.wi;
  OutputTarget target(c.output, out);
  auto& os = target.get();
  os << "wi,params,forward_conv_gflops,training_conv_gflops,memory_gib\n";
  char buf[256];
  for (Extent wi : widths) {
    const NetworkSpec net = make_network(c, wi);
    const FlopReport f = conv_flop_report(net);
    std::snprintf(buf, sizeof buf, "%lld,%zu,%.6f,%.6f,%.6f\n", static_cast<long long>(wi), parameter_count(net),
                  f.forward_total / 1e9, f.training_total / 1e9, memory_estimate(net) / 1073741824.0);
    os << buf;
  }
  return 0;
}

inline int cmd_perf(const RunConfig& c, std::ostream& out) {
  validate_common(c);
  const Extent wi = single_width(c, 512);
  const NetworkSpec net = make_network(c, wi);
  const ProcessGrid grid = grid_of(c);
  if (c.batch % grid.groups != 0) field_error("batch", "must be divisible by the group count " + std::to_string(grid.groups));
  if (c.ideal == !c.kernels.empty()) field_error("kernels", "give exactly one of --kernels FILE or --ideal");
  const ExecutionPlan plan = plan_network(net, grid, c.batch);
  const perf::KernelTimeTable table =
      c.ideal ? perf::flop_proportional_table(net, c.batch) : perf::read_kernel_table(c.kernels);
  perf::CommModels models;
  OutputTarget target(c.output, out);
  auto& os = target.get();
  char buf[256];
  if (!c.pingpong.empty()) {
    const auto fit = perf::fit_link(perf::read_pingpong(c.pingpong));
    models.link = fit.model;
    std::snprintf(buf, sizeof buf, "# link alpha=%.17g beta=%.17g rms=%.3e\n", fit.model.alpha, fit.model.beta,
                  fit.residual.rms);
    os << buf;
  }
  if (!c.inter_pingpong.empty()) {
    if (c.ranks_per_node < 1) field_error("ranks-per-node", "required with --inter-pingpong");
    const auto fit = perf::fit_link(perf::read_pingpong(c.inter_pingpong));
    models.inter_node = fit.model;
    models.ranks_per_node = c.ranks_per_node;
    std::snprintf(buf, sizeof buf, "# inter-node link alpha=%.17g beta=%.17g rms=%.3e\n", fit.model.alpha,
                  fit.model.beta, fit.residual.rms);
    os << buf;
  }
  if (!c.allreduce.empty()) {
    const auto fit = perf::fit_allreduce(perf::read_allreduce(c.allreduce));
    models.allreduce = fit.model;
    std::snprintf(buf, sizeof buf, "# allreduce c0=%.17g c1=%.17g c2=%.17g rms_log=%.3e\n", fit.model.c0, fit.model.c1,
                  fit.model.c2, fit.residual.rms);
    os << buf;
  }
  const perf::CostBreakdown b = perf::total_cost(net, plan, table, models);
  std::snprintf(buf, sizeof buf, "# net %s wi %lld grid %s batch %lld redistribution_point %d comp_sum %.17g\n",
                net.name.c_str(), static_cast<long long>(wi), to_string(grid).c_str(),
                static_cast<long long>(c.batch), plan.redistribution_point, b.comp_sum());
  os << buf;
  perf::write_report(os, b);
  return 0;
}

inline int cmd_make_fixtures(const RunConfig& c, std::ostream& out) {
  FixtureConfig f;
  if (c.samples < 1) field_error("samples", "must be >= 1");
  f.samples = c.samples;
  f.dims = parse_dims(c.dims);
  try {
    f.dtype = parse_dtype(c.dtype);
  } catch (const Error& e) {
    field_error("dtype", e.detail());
  }
  f.seed = c.seed;
  f.labels = c.labels;
  const FixtureSummary s = fixture_summary(f);
  char buf[256];
  std::snprintf(buf, sizeof buf, "samples %lld files %lld bytes_per_sample %llu payload_gib_per_sample %.6f total_bytes %llu\n",
                static_cast<long long>(f.samples), static_cast<long long>(s.files),
                static_cast<unsigned long long>(s.bytes_per_sample),
                static_cast<double>(SampleHeader{f.dtype, f.dims}.payload_bytes()) / 1073741824.0,
                static_cast<unsigned long long>(s.total_bytes));
  out << buf;
  if (c.dry_run) return 0;
  if (c.output.empty()) field_error("output", "directory required unless --dry-run");
  const auto manifest = make_fixtures(c.output, f);
  out << "manifest " << manifest.string() << "\n";
  return 0;
}

inline int cmd_train(const RunConfig& c, std::ostream& out) {
  validate_common(c);
  const NetworkSpec net = make_network(c, single_width(c, c.net == "unet_mini" ? 16 : 32));
  const ProcessGrid grid = grid_of(c);
  if (c.dataset.empty() == (c.synthetic == 0)) field_error("dataset", "give exactly one of --dataset FILE or --synthetic S");
  if (c.synthetic < 0) field_error("synthetic", "must be >= 1");
  if (c.optimizer != "adam" && c.optimizer != "sgd") field_error("optimizer", "expected adam or sgd");
  if (c.lr <= 0) field_error("lr", "must be positive");
  std::filesystem::path manifest_path = c.dataset;
  if (c.synthetic > 0) {
    std::filesystem::path dir = c.data_dir;
    if (dir.empty()) {
      dir = c.output.empty() ? std::filesystem::temp_directory_path() /
                                   ("hybridcnn_" + net.name + "_" + std::to_string(net.input.d) + "_" +
                                    std::to_string(c.synthetic) + "_" + std::to_string(c.seed))
                             : std::filesystem::path(c.output + ".data");
    }
    FixtureConfig f;
    f.samples = c.synthetic;
    f.dims = {static_cast<std::uint64_t>(net.input.c), static_cast<std::uint64_t>(net.input.d),
              static_cast<std::uint64_t>(net.input.h), static_cast<std::uint64_t>(net.input.w)};
    f.seed = c.seed;
    f.labels = net.loss == LossKind::kCrossEntropy;
    manifest_path = make_fixtures(dir, f);
  }
  const Manifest m = read_manifest(manifest_path);
  TrainConfig t;
  t.batch = c.batch;
  t.epochs = c.epochs;
  t.seed = c.seed;
  t.optimizer = c.optimizer == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
  t.lr.initial = c.lr;
  t.val_samples = c.val_samples >= 0 ? c.val_samples : m.size() / 8;
  t.mode = exec_mode(c);
  if (t.val_samples >= m.size()) field_error("val", "must leave training samples");
  if (m.size() - t.val_samples < c.batch) field_error("batch", "larger than the training set");
  const TrainResult r = fp_bits(c) == 64 ? train<double>(net, grid, m, t) : train<float>(net, grid, m, t);
  OutputTarget target(c.output, out);
  write_metrics(target.get(), r);
  return 0;
}

inline int run_command(const RunConfig& c, std::ostream& out) {
  if (c.command == "verify") return cmd_verify(c, out);
  if (c.command == "train") return cmd_train(c, out);
  if (c.command == "perf") return cmd_perf(c, out);
  if (c.command == "flops") return cmd_flops(c, out);
  if (c.command == "make-fixtures") return cmd_make_fixtures(c, out);
  fail(ErrorCode::kConfigError, "unknown command '" + c.command + "'");
}

}  // namespace hybridcnn::cli
