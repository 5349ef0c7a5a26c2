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

#include <algorithm>
#include <span>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/fabric/fabric.hpp"
#include "hybridcnn/tensor/dist_tensor.hpp"

namespace hybridcnn {

/// In-place sum over `group` (any order; sorted internally). The reduction is a
/// fixed binomial tree over the ascending member list: at distance s, member i
/// (i % 2s == 0) computes acc_i + acc_{i+s}; the root's result is then
/// broadcast back down the same tree, so every member holds identical bits
/// regardless of scheduling.
template <class T>
void allreduce_sum(Comm& comm, std::span<T> data, std::span<const int> group) {
  std::vector<int> members(group.begin(), group.end());
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  const auto it = std::find(members.begin(), members.end(), comm.rank());
  require(it != members.end(), ErrorCode::kConfigError,
          "allreduce: rank " + std::to_string(comm.rank()) + " is not a group member");
  comm.note_allreduce(data.size());
  const int k = static_cast<int>(members.size());
  const int i = static_cast<int>(it - members.begin());
  if (k == 1) return;

  int parent = -1;
  int step = 1;
  for (; step < k; step *= 2) {
    if (i % (2 * step) == 0) {
      if (i + step < k) {
        auto other = comm.recv_values<T>(members[static_cast<std::size_t>(i + step)], tags::kAllreduceUp);
        require(other.size() == data.size(), ErrorCode::kLengthMismatch,
                "allreduce: rank " + std::to_string(comm.rank()) + " has " + std::to_string(data.size()) +
                    " elements, partner sent " + std::to_string(other.size()));
        for (std::size_t j = 0; j < data.size(); ++j) data[j] = data[j] + other[j];
      }
    } else {
      parent = members[static_cast<std::size_t>(i - step)];
      comm.send_values<T>(parent, tags::kAllreduceUp, std::span<const T>(data.data(), data.size()),
                          TrafficKind::kAllreduce);
      break;
    }
  }
  if (parent >= 0) {
    auto result = comm.recv_values<T>(parent, tags::kAllreduceDown);
    require(result.size() == data.size(), ErrorCode::kLengthMismatch, "allreduce: broadcast length mismatch");
    std::copy(result.begin(), result.end(), data.begin());
  }
  // Children were attached at distances step/2, step/4, ..., 1.
  for (int s = step / 2; s >= 1; s /= 2) {
    if (i % (2 * s) == 0 && i + s < k) {
      comm.send_values<T>(members[static_cast<std::size_t>(i + s)], tags::kAllreduceDown,
                          std::span<const T>(data.data(), data.size()), TrafficKind::kAllreduce);
    }
  }
}

template <class T>
void allreduce_sum(Comm& comm, std::vector<T>& data, const std::vector<int>& group) {
  allreduce_sum(comm, std::span<T>(data), std::span<const int>(group));
}

inline int halo_tag(int dim, int side) { return tags::kHaloBase - (2 * dim + (side > 0 ? 1 : 0)); }

/// Fills `t.halo` (allocating it) with the neighbours' boundary slabs per
/// t.meta.radii. Outer domain faces stay zero; t.data is untouched. Dimensions
/// are exchanged in order D, H, W. Non-members return immediately.
template <class T>
void halo_exchange(Comm& comm, DistTensor<T>& t) {
  if (!t.member()) return;
  t.init_halo();
  const auto faces = halo_faces(t.meta, t.rank);
  for (int dim = 0; dim < 3; ++dim) {
    std::vector<HaloFace> these;
    for (const auto& f : faces) {
      if (f.dim == dim) these.push_back(f);
    }
    if (these.empty()) continue;
    auto buffers = pack_faces<T>(t, these);
    for (std::size_t i = 0; i < these.size(); ++i) {
      comm.send_values<T>(these[i].neighbor, halo_tag(dim, these[i].side),
                          std::span<const T>(buffers[i].data(), buffers[i].size()), TrafficKind::kHalo);
    }
    std::vector<std::vector<T>> received;
    for (const auto& f : these) {
      // The neighbour on our `side` sent toward us, i.e. in the opposite direction.
      received.push_back(comm.recv_values<T>(f.neighbor, halo_tag(dim, -f.side)));
    }
    unpack_faces<T>(t, these, received);
  }
}

}  // namespace hybridcnn
