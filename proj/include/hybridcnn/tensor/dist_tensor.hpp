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
#include <array>
#include <cstring>
#include <span>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/tensor/partition.hpp"
#include "hybridcnn/tensor/shape.hpp"

namespace hybridcnn {

/// A whole (unpartitioned) tensor; the currency of the serial reference path.
template <class T>
struct HostTensor {
  Shape5D shape;
  std::vector<T> data;

  HostTensor() = default;
  explicit HostTensor(const Shape5D& s) : shape(s), data(static_cast<std::size_t>(s.elements()), T(0)) {}
  HostTensor(const Shape5D& s, std::vector<T> values) : shape(s), data(std::move(values)) {
    require(data.size() == static_cast<std::size_t>(s.elements()), ErrorCode::kShapeMismatch,
            "host tensor data does not match shape " + to_string(s));
  }

  T& at(Extent n, Extent c, Extent d, Extent h, Extent w) { return data[shape.offset(n, c, d, h, w)]; }
  const T& at(Extent n, Extent c, Extent d, Extent h, Extent w) const { return data[shape.offset(n, c, d, h, w)]; }
};

/// Copies `box` (global spatial coords) for `count` samples and every channel
/// between two dense blocks whose (d,h,w) origins are given in global coords.
template <class T>
void copy_box(const T* src, const Shape5D& src_shape, const std::array<Extent, 3>& src_origin, Extent src_n0, T* dst,
              const Shape5D& dst_shape, const std::array<Extent, 3>& dst_origin, Extent dst_n0, const Region& box,
              Extent count) {
  if (box.empty() || count <= 0) return;
  const Extent len = box.dims[2].extent;
  for (Extent n = 0; n < count; ++n) {
    for (Extent c = 0; c < src_shape.c; ++c) {
      for (Extent d = box.dims[0].offset; d < box.dims[0].end(); ++d) {
        for (Extent h = box.dims[1].offset; h < box.dims[1].end(); ++h) {
          const T* s = src + src_shape.offset(src_n0 + n, c, d - src_origin[0], h - src_origin[1],
                                              box.dims[2].offset - src_origin[2]);
          T* o = dst + dst_shape.offset(dst_n0 + n, c, d - dst_origin[0], h - dst_origin[1],
                                        box.dims[2].offset - dst_origin[2]);
          std::copy(s, s + len, o);
        }
      }
    }
  }
}

/// The local block of a distributed tensor held by one fabric rank, plus the
/// padded halo block filled by halo_exchange.
template <class T>
struct DistTensor {
  DistTensorMeta meta;
  int rank = -1;           // layout rank; -1 when this fabric rank holds no part
  std::vector<T> data;     // local block, C-order (n, c, d, h, w)
  std::vector<T> halo;     // padded block: local extents + 2 * radius per dim

  bool member() const { return rank >= 0; }
  const ProcessGrid& grid() const { return meta.grid(); }
  Shape5D local_shape() const {
    return member() ? meta.local_shape(rank) : Shape5D{0, meta.global.c, 0, 0, 0};
  }
  Region region() const { return meta.region(rank); }
  Interval samples() const { return meta.samples(rank); }

  Shape5D padded_shape() const {
    Shape5D s = local_shape();
    for (int k = 0; k < 3; ++k) s.spatial(k) += 2 * meta.radii[k];
    return s;
  }
  std::array<Extent, 3> origin() const {
    const Region r = region();
    return {r.dims[0].offset, r.dims[1].offset, r.dims[2].offset};
  }
  std::array<Extent, 3> padded_origin() const {
    auto o = origin();
    for (int k = 0; k < 3; ++k) o[k] -= meta.radii[k];
    return o;
  }

  /// Allocates `halo`, zero-filled, with the interior copied in.
  void init_halo() {
    const Shape5D ps = padded_shape();
    halo.assign(static_cast<std::size_t>(ps.elements()), T(0));
    const Shape5D ls = local_shape();
    copy_box(data.data(), ls, origin(), 0, halo.data(), ps, padded_origin(), 0, region(), ls.n);
  }
};

/// A zero-filled local block for `fabric_rank` (empty when the rank is not in the layout).
template <class T>
DistTensor<T> make_local(const DistTensorMeta& meta, int fabric_rank) {
  DistTensor<T> t;
  t.meta = meta;
  t.rank = meta.layout.layout_rank(fabric_rank);
  if (t.member()) t.data.assign(static_cast<std::size_t>(t.local_shape().elements()), T(0));
  return t;
}

/// The slice of a whole tensor that `fabric_rank` holds under `meta`.
template <class T>
DistTensor<T> scatter(const HostTensor<T>& whole, const DistTensorMeta& meta, int fabric_rank) {
  require(whole.shape == meta.global, ErrorCode::kShapeMismatch,
          "scatter: tensor " + to_string(whole.shape) + " vs meta " + to_string(meta.global));
  DistTensor<T> t = make_local<T>(meta, fabric_rank);
  if (!t.member()) return t;
  copy_box(whole.data.data(), whole.shape, {0, 0, 0}, t.samples().offset, t.data.data(), t.local_shape(), t.origin(),
           0, t.region(), t.samples().extent);
  return t;
}

/// Reassembles a whole tensor from every fabric rank's local block.
template <class T>
HostTensor<T> gather(std::span<const DistTensor<T>> parts) {
  require(!parts.empty(), ErrorCode::kShapeMismatch, "gather: no parts");
  const DistTensorMeta& meta = parts.front().meta;
  HostTensor<T> whole(meta.global);
  std::vector<bool> seen(static_cast<std::size_t>(meta.size()), false);
  for (const auto& p : parts) {
    if (!p.member()) continue;
    require(p.meta.global == meta.global, ErrorCode::kShapeMismatch, "gather: parts disagree on global shape");
    seen[static_cast<std::size_t>(p.rank)] = true;
    copy_box(p.data.data(), p.local_shape(), p.origin(), 0, whole.data.data(), whole.shape, {0, 0, 0},
             p.samples().offset, p.region(), p.samples().extent);
  }
  for (bool s : seen) require(s, ErrorCode::kShapeMismatch, "gather: a layout rank is missing");
  return whole;
}

template <class T>
HostTensor<T> gather(const std::vector<DistTensor<T>>& parts) {
  return gather(std::span<const DistTensor<T>>(parts));
}

/// Densely packs the send slab of every face from the padded halo block.
template <class T>
std::vector<std::vector<T>> pack_faces(const DistTensor<T>& t, std::span<const HaloFace> faces) {
  const Shape5D ps = t.padded_shape();
  require(t.halo.size() == static_cast<std::size_t>(ps.elements()), ErrorCode::kShapeMismatch,
          "pack_faces: halo block not initialised");
  std::vector<std::vector<T>> out;
  out.reserve(faces.size());
  const Shape5D ls = t.local_shape();
  for (const auto& f : faces) {
    const Shape5D slab{ls.n, ls.c, f.send.dims[0].extent, f.send.dims[1].extent, f.send.dims[2].extent};
    std::vector<T> buf(static_cast<std::size_t>(f.send.empty() ? 0 : slab.elements()));
    copy_box(t.halo.data(), ps, t.padded_origin(), 0, buf.data(), slab,
             {f.send.dims[0].offset, f.send.dims[1].offset, f.send.dims[2].offset}, 0, f.send, ls.n);
    out.push_back(std::move(buf));
  }
  return out;
}

/// Inverse of pack_faces: writes each buffer into the recv slab of its face.
template <class T>
void unpack_faces(DistTensor<T>& t, std::span<const HaloFace> faces, std::span<const std::vector<T>> buffers) {
  const Shape5D ps = t.padded_shape();
  require(t.halo.size() == static_cast<std::size_t>(ps.elements()), ErrorCode::kShapeMismatch,
          "unpack_faces: halo block not initialised");
  require(faces.size() == buffers.size(), ErrorCode::kShapeMismatch, "unpack_faces: face/buffer count mismatch");
  const Shape5D ls = t.local_shape();
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const auto& f = faces[i];
    const Shape5D slab{ls.n, ls.c, f.recv.dims[0].extent, f.recv.dims[1].extent, f.recv.dims[2].extent};
    const std::size_t want = f.recv.empty() ? 0 : static_cast<std::size_t>(slab.elements());
    require(buffers[i].size() == want, ErrorCode::kShapeMismatch,
            "unpack_faces: buffer of " + std::to_string(buffers[i].size()) + " elements for slab of " +
                std::to_string(want));
    copy_box(buffers[i].data(), slab, {f.recv.dims[0].offset, f.recv.dims[1].offset, f.recv.dims[2].offset}, 0,
             t.halo.data(), ps, t.padded_origin(), 0, f.recv, ls.n);
  }
}

}  // namespace hybridcnn
