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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/tensor/shape.hpp"

namespace hybridcnn {

/// Block decomposition of `extent` into `parts` equal pieces. Uneven splits are
/// rejected with NonDivisible instead of padded.
inline std::vector<Interval> split_extent(Extent extent, int parts) {
  require(parts >= 1, ErrorCode::kNonDivisible, "split_extent: parts must be >= 1");
  require(extent >= 1 && extent % parts == 0, ErrorCode::kNonDivisible,
          "extent " + std::to_string(extent) + " is not divisible into " + std::to_string(parts) + " parts");
  const Extent block = extent / parts;
  std::vector<Interval> out;
  out.reserve(static_cast<std::size_t>(parts));
  for (int i = 0; i < parts; ++i) out.push_back({i * block, block});
  return out;
}

/// Which fabric ranks hold a tensor and how they are arranged. `placement[r]`
/// is the fabric rank of layout rank r; an empty placement means identity.
struct Layout {
  ProcessGrid grid;
  std::vector<int> placement;

  int size() const { return grid.size(); }

  int fabric_rank(int layout_rank) const {
    return placement.empty() ? layout_rank : placement[static_cast<std::size_t>(layout_rank)];
  }

  /// Layout rank held by `fabric_rank`, or -1 when that rank holds nothing.
  int layout_rank(int fabric_rank) const {
    if (placement.empty()) return fabric_rank < grid.size() ? fabric_rank : -1;
    for (std::size_t i = 0; i < placement.size(); ++i) {
      if (placement[i] == fabric_rank) return static_cast<int>(i);
    }
    return -1;
  }

  std::vector<int> fabric_ranks() const {
    std::vector<int> out;
    for (int r = 0; r < size(); ++r) out.push_back(fabric_rank(r));
    return out;
  }

  friend bool operator==(const Layout& a, const Layout& b) {
    if (!(a.grid == b.grid)) return false;
    for (int r = 0; r < a.size(); ++r) {
      if (a.fabric_rank(r) != b.fabric_rank(r)) return false;
    }
    return true;
  }

  static Layout identity(const ProcessGrid& g) { return Layout{g, {}}; }

  /// One rank per data-parallel group (its spatial coordinate (0,0,0)) holds
  /// the group's samples unpartitioned. Used past the redistribution point.
  static Layout sample_parallel(const Layout& src) {
    Layout out;
    out.grid = ProcessGrid{src.grid.groups, 1, 1, 1};
    for (int g = 0; g < src.grid.groups; ++g) {
      out.placement.push_back(src.fabric_rank(src.grid.rank_of({g, {0, 0, 0}})));
    }
    return out;
  }
};

/// Global shape + layout + halo radii: the coordinate system of a distributed tensor.
struct DistTensorMeta {
  Shape5D global;
  Layout layout;
  std::array<int, 3> radii{};

  const ProcessGrid& grid() const { return layout.grid; }
  int size() const { return layout.size(); }

  Extent local_extent(int dim) const { return global.spatial(dim) / grid().parts(dim); }
  Extent local_batch() const { return global.n / grid().groups; }

  Region region(int layout_rank) const {
    const auto coord = grid().coord(layout_rank);
    Region r;
    for (int k = 0; k < 3; ++k) {
      const Extent e = local_extent(k);
      r.dims[k] = {coord.spatial[k] * e, e};
    }
    return r;
  }

  Interval samples(int layout_rank) const {
    const Extent nb = local_batch();
    return {grid().coord(layout_rank).group * nb, nb};
  }

  Shape5D local_shape(int layout_rank) const {
    const Region r = region(layout_rank);
    return {samples(layout_rank).extent, global.c, r.dims[0].extent, r.dims[1].extent, r.dims[2].extent};
  }

  DistTensorMeta with_shape(const Shape5D& s) const { return DistTensorMeta{s, layout, radii}; }
  DistTensorMeta with_radii(std::array<int, 3> r) const { return DistTensorMeta{global, layout, r}; }
  DistTensorMeta with_layout(const Layout& l) const { return DistTensorMeta{global, l, radii}; }
};

/// Validates that `shape` can be laid out on `layout`; throws NonDivisible or BatchIndivisible.
inline void check_partition(const Shape5D& shape, const ProcessGrid& grid, const std::string& what = "tensor") {
  require(shape.valid(), ErrorCode::kShapeMismatch, what + ": all extents must be >= 1, got " + to_string(shape));
  require(grid.valid(), ErrorCode::kShapeMismatch, what + ": invalid grid " + to_string(grid));
  require(shape.n % grid.groups == 0, ErrorCode::kBatchIndivisible,
          what + ": batch " + std::to_string(shape.n) + " not divisible by " + std::to_string(grid.groups) +
              " groups");
  static constexpr const char* kNames[3] = {"depth", "height", "width"};
  for (int k = 0; k < 3; ++k) {
    const Extent e = shape.spatial(k);
    const int p = grid.parts(k);
    require(e % p == 0, ErrorCode::kNonDivisible,
            what + ": " + kNames[k] + " " + std::to_string(e) + " not divisible by " + std::to_string(p) + " parts");
  }
}

inline DistTensorMeta make_meta(const Shape5D& shape, const Layout& layout, std::array<int, 3> radii = {}) {
  check_partition(shape, layout.grid);
  return DistTensorMeta{shape, layout, radii};
}

inline DistTensorMeta make_partition(const Shape5D& shape, const ProcessGrid& grid, std::array<int, 3> radii = {}) {
  return make_meta(shape, Layout::identity(grid), radii);
}

/// One send/recv pair of a halo exchange, in global coordinates.
struct HaloFace {
  int dim = 0;
  int side = 0;           // -1 toward lower coordinates, +1 toward higher
  int neighbor = -1;      // fabric rank
  Region send;            // this rank's boundary layer
  Region recv;            // the halo region adjoining the face
};

/// Halo geometry for `layout_rank`, ordered by dimension then side. Slabs of a
/// later dimension span the already-exchanged halos of earlier dimensions, so
/// edge and corner values travel in two or three hops. Slabs are clipped to
/// the global domain; outer faces have no pair.
inline std::vector<HaloFace> halo_faces(const DistTensorMeta& meta, int layout_rank) {
  std::vector<HaloFace> faces;
  const auto coord = meta.grid().coord(layout_rank);
  const Region own = meta.region(layout_rank);
  for (int k = 0; k < 3; ++k) {
    const int r = meta.radii[k];
    if (r <= 0 || meta.grid().parts(k) == 1) continue;
    require(r <= own.dims[k].extent, ErrorCode::kShapeMismatch,
            "halo radius " + std::to_string(r) + " exceeds local extent " + std::to_string(own.dims[k].extent));
    Region base = own;
    for (int j = 0; j < k; ++j) {
      const Extent lo = std::max<Extent>(0, own.dims[j].offset - meta.radii[j]);
      const Extent hi = std::min<Extent>(meta.global.spatial(j), own.dims[j].end() + meta.radii[j]);
      base.dims[j] = {lo, hi - lo};
    }
    for (int side : {-1, +1}) {
      const int nc = coord.spatial[k] + side;
      if (nc < 0 || nc >= meta.grid().parts(k)) continue;
      auto ncoord = coord;
      ncoord.spatial[k] = nc;
      HaloFace f;
      f.dim = k;
      f.side = side;
      f.neighbor = meta.layout.fabric_rank(meta.grid().rank_of(ncoord));
      f.send = base;
      f.recv = base;
      if (side < 0) {
        f.send.dims[k] = {own.dims[k].offset, r};
        f.recv.dims[k] = {own.dims[k].offset - r, r};
      } else {
        f.send.dims[k] = {own.dims[k].end() - r, r};
        f.recv.dims[k] = {own.dims[k].end(), r};
      }
      faces.push_back(f);
    }
  }
  return faces;
}

/// A contiguous run of bytes relative to the start of a voxel payload.
struct ByteRange {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

/// Maximal contiguous runs covering `region` for every channel of a C-order
/// (C, D, H, W) payload, in ascending offset order.
inline std::vector<ByteRange> hyperslab_byte_ranges(const std::array<std::uint64_t, 4>& file_dims, const Region& region,
                                                    std::uint64_t elem_bytes) {
  for (int k = 0; k < 3; ++k) {
    const auto& iv = region.dims[k];
    require(iv.offset >= 0 && iv.extent >= 1 && static_cast<std::uint64_t>(iv.end()) <= file_dims[k + 1],
            ErrorCode::kOutOfBounds, "hyperslab " + to_string(region) + " outside file dims");
  }
  const std::uint64_t C = file_dims[0], H = file_dims[2], W = file_dims[3];
  std::vector<ByteRange> out;
  const auto& rd = region.dims[0];
  const auto& rh = region.dims[1];
  const auto& rw = region.dims[2];
  for (std::uint64_t c = 0; c < C; ++c) {
    for (Extent d = rd.offset; d < rd.end(); ++d) {
      for (Extent h = rh.offset; h < rh.end(); ++h) {
        const std::uint64_t start = (((c * file_dims[1] + static_cast<std::uint64_t>(d)) * H + static_cast<std::uint64_t>(h)) * W +
                                     static_cast<std::uint64_t>(rw.offset)) * elem_bytes;
        const std::uint64_t len = static_cast<std::uint64_t>(rw.extent) * elem_bytes;
        if (!out.empty() && out.back().offset + out.back().length == start) {
          out.back().length += len;
        } else {
          out.push_back({start, len});
        }
      }
    }
  }
  return out;
}

}  // namespace hybridcnn
