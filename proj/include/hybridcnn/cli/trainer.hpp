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


// Training loop over a dataset: epoch-0 ingestion into the data store,
// per-iteration hyperslab exchange, distributed train steps and a per-epoch
// evaluation-mode validation pass.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hybridcnn/datastore/manifest.hpp"
#include "hybridcnn/datastore/store.hpp"
#include "hybridcnn/errors.hpp"
#include "hybridcnn/fabric/fabric.hpp"
#include "hybridcnn/model/executor.hpp"

namespace hybridcnn {

struct TrainConfig {
  Extent batch = 4;
  int epochs = 1;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  LrSchedule lr{};
  std::int64_t val_samples = 0;  // taken from the end of the manifest
  std::int64_t max_steps = -1;   // stop early after this many steps (< 0: no limit)
  ExecMode mode = ExecMode::kCooperative;
};

struct EpochRow {
  int epoch = 0;
  double train_loss = 0;
  std::optional<double> val_loss;
};

struct TrainResult {
  std::vector<EpochRow> epochs;
  std::vector<double> step_losses;
  std::vector<double> params;  // final parameters (rank 0), widened to double
  IoCounters::Epoch train_io_epoch0;
  IoCounters::Epoch train_io_later;  // summed over epochs >= 1
};

/// Samples [begin, end) of `m`, re-numbered from 0.
inline Manifest slice_manifest(const Manifest& m, std::int64_t begin, std::int64_t end) {
  Manifest out = m;
  out.samples.clear();
  for (std::int64_t i = begin; i < end; ++i) {
    ManifestEntry e = m.samples[static_cast<std::size_t>(i)];
    e.id = i - begin;
    out.samples.push_back(std::move(e));
  }
  return out;
}

namespace detail {

template <class T>
DistBatch<T> load_batch(Comm& comm, const DataStore& store, const std::vector<CachedSlab>& slabs,
                        std::span<const std::int64_t> ids, const ExecutionPlan& plan) {
  const Layout ingest = Layout::identity(plan.grid);
  const DistTensorMeta in_meta{plan.input.global, ingest, {0, 0, 0}};
  DistBatch<T> b;
  b.input = store.materialize<T>(slabs, in_meta, comm.rank());
  if (!(ingest == plan.input.layout)) b.input = dist::redistribute(comm, b.input, plan.input);
  const Manifest& m = store.manifest();
  if (m.has_labels()) {
    const Shape5D& g = plan.input.global;
    const DistTensorMeta lmeta{Shape5D{g.n, 1, g.d, g.h, g.w}, ingest, {0, 0, 0}};
    b.labels = store.materialize_labels(slabs, lmeta, comm.rank());
    if (!(ingest == plan.input.layout)) {
      b.labels = dist::redistribute(comm, b.labels, DistTensorMeta{lmeta.global, plan.input.layout, {0, 0, 0}});
    }
  } else {
    for (auto id : ids) {
      for (double t : m.samples[static_cast<std::size_t>(id)].targets) b.targets.push_back(T(t));
    }
  }
  b.sample_ids.assign(ids.begin(), ids.end());
  return b;
}

template <class T>
T eval_loss(Comm& comm, const NetworkSpec& net, const ExecutionPlan& plan, std::span<const T> params,
            std::span<const T> state, const DistBatch<T>& b) {
  auto tr = dist_forward<T>(comm, net, plan, params, state, b.input, Mode::kEval, DropoutKey{}, b.sample_ids);
  const DistTensor<T>& out = tr.acts.back();
  if (net.loss == LossKind::kMse) return dist::mse_loss<T>(comm, out, b.targets).loss;
  DistTensor<std::int32_t> labels = b.labels;
  if (!(labels.meta.layout == out.meta.layout)) {
    labels = dist::redistribute(comm, labels, DistTensorMeta{labels.meta.global, out.meta.layout, {0, 0, 0}});
  }
  return dist::cross_entropy<T>(comm, out, labels.data).loss;
}

}  // namespace detail

template <class T>
TrainResult train(const NetworkSpec& net, const ProcessGrid& grid, const Manifest& manifest, const TrainConfig& cfg) {
  require(cfg.epochs >= 0, ErrorCode::kConfigError, "epochs must be >= 0");
  const Shape5D& in = net.input;
  require(manifest.dims == FileDims{static_cast<std::uint64_t>(in.c), static_cast<std::uint64_t>(in.d),
                                    static_cast<std::uint64_t>(in.h), static_cast<std::uint64_t>(in.w)},
          ErrorCode::kShapeMismatch, "dataset sample shape does not match the " + net.name + " input " + to_string(in));
  if (net.loss == LossKind::kMse) {
    require(!manifest.has_labels() &&
                manifest.target_count() == static_cast<std::size_t>(net.output().per_sample()),
            ErrorCode::kShapeMismatch,
            "dataset needs " + std::to_string(net.output().per_sample()) + " regression targets per sample");
  } else {
    require(manifest.has_labels(), ErrorCode::kShapeMismatch, "dataset has no label files for " + net.name);
  }
  require(cfg.val_samples >= 0 && cfg.val_samples < manifest.size(), ErrorCode::kConfigError,
          "validation samples must leave training samples");
  const std::int64_t n_train = manifest.size() - cfg.val_samples;
  const bool with_val = cfg.val_samples >= cfg.batch;
  const ExecutionPlan plan = plan_network(net, grid, cfg.batch);
  // Schedules are validated up front so every rank fails the same way.
  epoch_schedule(cfg.seed, 0, n_train, cfg.batch, grid.groups);

  DataStore train_store(slice_manifest(manifest, 0, n_train), grid, cfg.seed);
  std::optional<DataStore> val_store;
  if (with_val) val_store.emplace(slice_manifest(manifest, n_train, manifest.size()), grid, cfg.seed);

  TrainResult result;
  std::vector<T> final_params;
  Fabric fabric(grid.size(), cfg.mode);
  fabric.run([&](Comm& comm) {
    const bool leader = comm.rank() == 0;
    std::vector<T> params = init_params<T>(net, cfg.seed);
    std::vector<T> state = init_state<T>(net);
    Optimizer<T> opt;
    opt.kind = cfg.optimizer;
    if (cfg.epochs > 0) {
      train_store.ingest_epoch0(comm, cfg.batch);
      if (val_store) val_store->ingest_epoch0(comm, cfg.batch);
    }
    std::int64_t steps = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
      if (cfg.max_steps >= 0 && steps >= cfg.max_steps) break;
      const EpochSchedule s = epoch_schedule(cfg.seed, e, n_train, cfg.batch, grid.groups);
      double sum = 0;
      std::int64_t count = 0;
      for (std::int64_t it = 0; it < s.iterations(); ++it) {
        if (cfg.max_steps >= 0 && steps >= cfg.max_steps) break;
        const auto slabs = train_store.exchange_for_iteration(comm, s, it);
        const auto b = detail::load_batch<T>(comm, train_store, slabs, s.batch_ids(it), plan);
        const DropoutKey key{cfg.seed, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(it), 0};
        const double lr = lr_at(cfg.lr, static_cast<double>(e) + static_cast<double>(it) / s.iterations());
        const T loss = dist_train_step<T>(comm, net, plan, params, state, opt, b, key, lr);
        sum += double(loss);
        ++count;
        ++steps;
        if (leader) result.step_losses.push_back(double(loss));
      }
      EpochRow row;
      row.epoch = e;
      row.train_loss = count > 0 ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
      if (val_store) {
        const EpochSchedule vs = epoch_schedule(cfg.seed, 0, val_store->manifest().size(), cfg.batch, grid.groups);
        double vsum = 0;
        for (std::int64_t it = 0; it < vs.iterations(); ++it) {
          const auto slabs = val_store->exchange_for_iteration(comm, vs, it);
          const auto b = detail::load_batch<T>(comm, *val_store, slabs, vs.batch_ids(it), plan);
          vsum += double(detail::eval_loss<T>(comm, net, plan, params, state, b));
        }
        row.val_loss = vsum / static_cast<double>(vs.iterations());
      }
      if (leader) result.epochs.push_back(row);
    }
    if (leader) final_params = params;
  });
  result.params.assign(final_params.begin(), final_params.end());
  result.train_io_epoch0 = train_store.io().epoch(0);
  for (const auto& [e, v] : train_store.io().breakdown()) {
    if (e == 0) continue;
    result.train_io_later.file_bytes_read += v.file_bytes_read;
    result.train_io_later.file_opens += v.file_opens;
    result.train_io_later.exchange_bytes += v.exchange_bytes;
  }
  return result;
}

/// `epoch,train_loss,val_loss` with round-trip precision; val_loss is empty
/// when no validation pass ran.
inline void write_metrics(std::ostream& out, const TrainResult& r) {
  char buf[64];
  out << "epoch,train_loss,val_loss\n";
  for (const auto& row : r.epochs) {
    std::snprintf(buf, sizeof buf, "%.17g", row.train_loss);
    out << row.epoch << ',' << buf << ',';
    if (row.val_loss) {
      std::snprintf(buf, sizeof buf, "%.17g", *row.val_loss);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace hybridcnn
