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


// Epoch schedules, the owner map and the per-rank in-memory sample cache.
//
// Epoch 0: every rank reads, for each sample its group ingests, the
// hyperslab matching its spatial region, so each byte is read exactly once.
// Later epochs: exchange_for_iteration moves cached hyperslabs from the
// owner group's rank with the same spatial coordinate to the consumer.

#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <span>
#include <vector>

#include "hybridcnn/datastore/manifest.hpp"
#include "hybridcnn/datastore/sample_file.hpp"
#include "hybridcnn/errors.hpp"
#include "hybridcnn/fabric/fabric.hpp"
#include "hybridcnn/rng.hpp"
#include "hybridcnn/tensor/dist_tensor.hpp"

namespace hybridcnn {

/// Seeded permutation of sample ids cut into iterations of N samples, N/G
/// per group. A trailing partial batch is dropped from training.
struct EpochSchedule {
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
  std::int64_t samples = 0;
  std::int64_t batch = 0;
  int groups = 1;
  std::vector<std::int64_t> perm;

  std::int64_t iterations() const { return samples / batch; }
  std::int64_t per_group() const { return batch / groups; }

  /// Sample ids for (iteration, group), in batch order.
  std::span<const std::int64_t> assignment(std::int64_t iter, int group) const {
    require(iter >= 0 && iter < iterations() && group >= 0 && group < groups, ErrorCode::kOutOfBounds,
            "schedule: iteration " + std::to_string(iter) + " group " + std::to_string(group) + " out of range");
    return std::span<const std::int64_t>(perm).subspan(
        static_cast<std::size_t>(iter * batch + group * per_group()), static_cast<std::size_t>(per_group()));
  }
  /// The whole batch of an iteration, groups in order.
  std::span<const std::int64_t> batch_ids(std::int64_t iter) const {
    require(iter >= 0 && iter < iterations(), ErrorCode::kOutOfBounds, "schedule: iteration out of range");
    return std::span<const std::int64_t>(perm).subspan(static_cast<std::size_t>(iter * batch),
                                                       static_cast<std::size_t>(batch));
  }
  std::span<const std::int64_t> tail() const {
    return std::span<const std::int64_t>(perm).subspan(static_cast<std::size_t>(iterations() * batch));
  }
};

inline EpochSchedule epoch_schedule(std::uint64_t seed, std::int64_t epoch, std::int64_t samples, std::int64_t batch,
                                    int groups) {
  require(groups >= 1 && batch >= 1 && batch % groups == 0, ErrorCode::kBadBatch,
          "batch " + std::to_string(batch) + " not divisible by " + std::to_string(groups) + " groups");
  require(samples >= batch, ErrorCode::kBadBatch,
          "dataset of " + std::to_string(samples) + " samples cannot fill a batch of " + std::to_string(batch));
  EpochSchedule s{seed, epoch, samples, batch, groups, {}};
  s.perm.resize(static_cast<std::size_t>(samples));
  for (std::int64_t i = 0; i < samples; ++i) s.perm[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed({seed, static_cast<std::uint64_t>(epoch), 0x5C4EDULL}));
  rng.shuffle(s.perm);
  return s;
}

/// Samples each group reads in epoch 0: its scheduled samples in iteration
/// order, then the dropped tail dealt round-robin so the whole dataset is cached.
inline std::vector<std::vector<std::int64_t>> ingest_assignment(const EpochSchedule& s0) {
  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(s0.groups));
  for (std::int64_t it = 0; it < s0.iterations(); ++it) {
    for (int g = 0; g < s0.groups; ++g) {
      const auto a = s0.assignment(it, g);
      out[static_cast<std::size_t>(g)].insert(out[static_cast<std::size_t>(g)].end(), a.begin(), a.end());
    }
  }
  const auto tail = s0.tail();
  for (std::size_t k = 0; k < tail.size(); ++k) out[k % static_cast<std::size_t>(s0.groups)].push_back(tail[k]);
  return out;
}

/// owner[id] = the group that ingested the sample in epoch 0.
struct OwnerMap {
  std::vector<int> owner;
  int of(std::int64_t id) const { return owner[static_cast<std::size_t>(id)]; }
};

inline OwnerMap build_owner_map(const EpochSchedule& s0) {
  OwnerMap m;
  m.owner.assign(static_cast<std::size_t>(s0.samples), -1);
  const auto groups = ingest_assignment(s0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (auto id : groups[g]) m.owner[static_cast<std::size_t>(id)] = static_cast<int>(g);
  }
  return m;
}

/// One sample's hyperslab as cached by one rank.
struct CachedSlab {
  std::int64_t id = -1;
  Region region;
  std::vector<std::byte> voxels;  // raw, manifest dtype, (C, d, h, w)
  std::vector<std::byte> labels;  // raw int16 class ids, (1, d, h, w); empty without labels
};

/// Shared by all rank workers; each rank only touches its own cache entry.
class DataStore {
 public:
  DataStore(Manifest manifest, const ProcessGrid& grid, std::uint64_t seed)
      : manifest_(std::move(manifest)), grid_(grid), seed_(seed), caches_(static_cast<std::size_t>(grid.size())) {
    require(grid.valid(), ErrorCode::kConfigError, "datastore: invalid grid");
    const Shape5D s{1, static_cast<Extent>(manifest_.dims[0]), static_cast<Extent>(manifest_.dims[1]),
                    static_cast<Extent>(manifest_.dims[2]), static_cast<Extent>(manifest_.dims[3])};
    meta_ = make_partition(s, ProcessGrid{1, grid.pd, grid.ph, grid.pw});
  }

  const Manifest& manifest() const { return manifest_; }
  const ProcessGrid& grid() const { return grid_; }
  const OwnerMap& owners() const { return owners_; }
  IoCounters& io() { return io_; }
  const IoCounters& io() const { return io_; }

  /// Spatial region of `fabric_rank` (identical for every group).
  Region region_of(int fabric_rank) const {
    auto c = grid_.coord(fabric_rank);
    c.group = 0;
    return meta_.region(ProcessGrid{1, grid_.pd, grid_.ph, grid_.pw}.rank_of(c));
  }

  /// Collective-free: each rank reads its hyperslab of every sample its group
  /// ingests. Every rank must call it once per fabric run before exchanges.
  void ingest_epoch0(Comm& comm, std::int64_t batch) {
    auto& cache = caches_[static_cast<std::size_t>(comm.rank())];
    require(cache.empty(), ErrorCode::kCacheNotEmpty,
            "rank " + std::to_string(comm.rank()) + ": cache already populated");
    const EpochSchedule s0 = epoch_schedule(seed_, 0, manifest_.size(), batch, grid_.groups);
    {
      std::lock_guard lk(mu_);
      if (owners_.owner.empty()) owners_ = build_owner_map(s0);
    }
    const int group = grid_.coord(comm.rank()).group;
    const Region region = region_of(comm.rank());
    const auto assigned = ingest_assignment(s0);
    for (auto id : assigned[static_cast<std::size_t>(group)]) {
      CachedSlab slab;
      slab.id = id;
      slab.region = region;
      SampleHeader h;
      slab.voxels = read_hyperslab(manifest_.path_of(id), region, &io_, 0, &h);
      require(h.dims == manifest_.dims && h.dtype == manifest_.dtype, ErrorCode::kShapeMismatch,
              manifest_.path_of(id).string() + ": header disagrees with the manifest");
      if (manifest_.has_labels()) slab.labels = read_hyperslab(manifest_.label_path_of(id), region, &io_, 0);
      cache.emplace(id, std::move(slab));
    }
  }

  bool cached(int fabric_rank, std::int64_t id) const {
    return caches_[static_cast<std::size_t>(fabric_rank)].count(id) > 0;
  }
  std::size_t cache_size(int fabric_rank) const { return caches_[static_cast<std::size_t>(fabric_rank)].size(); }

  /// Collective over the whole grid: delivers this rank's hyperslabs of its
  /// group's samples for iteration `iter`, in batch order. Owners send first,
  /// then consumers receive, pairing ranks with equal spatial coordinates.
  std::vector<CachedSlab> exchange_for_iteration(Comm& comm, const EpochSchedule& s, std::int64_t iter) {
    require(!owners_.owner.empty(), ErrorCode::kMissingSample, "exchange before ingest_epoch0");
    require(s.groups == grid_.groups, ErrorCode::kLayoutMismatch,
            "schedule has " + std::to_string(s.groups) + " groups, cache " + std::to_string(grid_.groups));
    const auto me = grid_.coord(comm.rank());
    auto& cache = caches_[static_cast<std::size_t>(comm.rank())];
    auto peer = [&](int group) {
      auto c = me;
      c.group = group;
      return grid_.rank_of(c);
    };
    auto find = [&](std::int64_t id) -> const CachedSlab& {
      auto it = cache.find(id);
      require(it != cache.end(), ErrorCode::kMissingSample,
              "rank " + std::to_string(comm.rank()) + " owns sample " + std::to_string(id) + " but has not cached it");
      return it->second;
    };
    for (int g = 0; g < grid_.groups; ++g) {
      if (g == me.group) continue;
      for (auto id : s.assignment(iter, g)) {
        if (owners_.of(id) != me.group) continue;
        const CachedSlab& slab = find(id);
        const std::uint64_t bytes = slab.voxels.size() + slab.labels.size();
        Bytes payload(bytes);
        std::copy(slab.voxels.begin(), slab.voxels.end(), payload.begin());
        std::copy(slab.labels.begin(), slab.labels.end(), payload.begin() + static_cast<std::ptrdiff_t>(slab.voxels.size()));
        comm.send(peer(g), tags::kDataExchange, std::move(payload), TrafficKind::kDataExchange);
        io_.add_exchange(s.epoch, bytes);
      }
    }
    std::vector<CachedSlab> out;
    for (auto id : s.assignment(iter, me.group)) {
      const int owner = owners_.of(id);
      if (owner == me.group) {
        out.push_back(find(id));
        continue;
      }
      Bytes payload = comm.recv(peer(owner), tags::kDataExchange);
      CachedSlab slab;
      slab.id = id;
      slab.region = region_of(comm.rank());
      const std::uint64_t vbytes = static_cast<std::uint64_t>(slab.region.voxels()) * manifest_.dims[0] *
                                   elem_bytes(manifest_.dtype);
      require(payload.size() >= vbytes, ErrorCode::kMissingSample, "exchange: short hyperslab for sample " + std::to_string(id));
      slab.voxels.assign(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(vbytes));
      slab.labels.assign(payload.begin() + static_cast<std::ptrdiff_t>(vbytes), payload.end());
      out.push_back(std::move(slab));
    }
    return out;
  }

  /// Builds this rank's block of the batch input under `meta` (whose layout
  /// must be the ingestion grid's identity layout).
  template <class T>
  DistTensor<T> materialize(const std::vector<CachedSlab>& slabs, const DistTensorMeta& meta, int fabric_rank) const {
    check_layout(meta);
    DistTensor<T> t = make_local<T>(meta, fabric_rank);
    if (!t.member()) return t;
    const Shape5D ls = t.local_shape();
    require(static_cast<Extent>(slabs.size()) == ls.n && ls.c == static_cast<Extent>(manifest_.dims[0]),
            ErrorCode::kShapeMismatch, "materialize: batch does not match the tensor meta");
    const std::size_t per = static_cast<std::size_t>(ls.per_sample());
    for (std::size_t n = 0; n < slabs.size(); ++n) {
      require(slabs[n].region == t.region(), ErrorCode::kLayoutMismatch, "materialize: cached region differs");
      convert_voxels<T>(slabs[n].voxels, manifest_.dtype, t.data.data() + n * per, manifest_.scale);
    }
    return t;
  }

  DistTensor<std::int32_t> materialize_labels(const std::vector<CachedSlab>& slabs, const DistTensorMeta& meta,
                                              int fabric_rank) const {
    check_layout(meta);
    DistTensor<std::int32_t> t = make_local<std::int32_t>(meta, fabric_rank);
    if (!t.member()) return t;
    const std::size_t per = static_cast<std::size_t>(t.local_shape().per_sample());
    for (std::size_t n = 0; n < slabs.size(); ++n) {
      require(slabs[n].labels.size() == 2 * per, ErrorCode::kShapeMismatch, "materialize_labels: no labels cached");
      convert_voxels<std::int32_t>(slabs[n].labels, DType::kInt16, t.data.data() + n * per);
    }
    return t;
  }

 private:
  void check_layout(const DistTensorMeta& meta) const {
    require(meta.layout == Layout::identity(grid_), ErrorCode::kLayoutMismatch,
            "cache was ingested on grid " + to_string(grid_) + " but the tensor uses grid " +
                to_string(meta.grid()) + "; re-ingest for the new grid");
  }

  Manifest manifest_;
  ProcessGrid grid_;
  std::uint64_t seed_;
  DistTensorMeta meta_;
  std::vector<std::map<std::int64_t, CachedSlab>> caches_;
  OwnerMap owners_;
  IoCounters io_;
  std::mutex mu_;
};

}  // namespace hybridcnn
