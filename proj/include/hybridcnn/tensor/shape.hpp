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
#include <cstdint>
#include <ostream>
#include <string>

#include "hybridcnn/errors.hpp"

namespace hybridcnn {

using Extent = std::int64_t;

/// Dense 5D extents in (N, C, D, H, W) order; W is the fastest-varying axis.
struct Shape5D {
  Extent n = 1;
  Extent c = 1;
  Extent d = 1;
  Extent h = 1;
  Extent w = 1;

  Extent spatial(int dim) const { return dim == 0 ? d : (dim == 1 ? h : w); }
  Extent& spatial(int dim) { return dim == 0 ? d : (dim == 1 ? h : w); }
  Extent voxels() const { return d * h * w; }
  Extent per_sample() const { return c * d * h * w; }
  Extent elements() const { return n * c * d * h * w; }

  bool valid() const { return n >= 1 && c >= 1 && d >= 1 && h >= 1 && w >= 1; }

  std::size_t offset(Extent in, Extent ic, Extent id, Extent ih, Extent iw) const {
    return static_cast<std::size_t>((((in * c + ic) * d + id) * h + ih) * w + iw);
  }

  friend bool operator==(const Shape5D&, const Shape5D&) = default;
};

inline std::string to_string(const Shape5D& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.d) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

inline std::ostream& operator<<(std::ostream& os, const Shape5D& s) { return os << to_string(s); }

/// A half-open interval [offset, offset + extent).
struct Interval {
  Extent offset = 0;
  Extent extent = 0;

  Extent end() const { return offset + extent; }
  bool empty() const { return extent <= 0; }

  friend bool operator==(const Interval&, const Interval&) = default;
};

inline Interval intersect(const Interval& a, const Interval& b) {
  const Extent lo = std::max(a.offset, b.offset);
  const Extent hi = std::min(a.end(), b.end());
  return {lo, std::max<Extent>(0, hi - lo)};
}

/// Axis-aligned spatial box over (D, H, W). Samples and channels are never split spatially.
struct Region {
  std::array<Interval, 3> dims{};

  Extent voxels() const { return dims[0].extent * dims[1].extent * dims[2].extent; }
  bool empty() const { return dims[0].empty() || dims[1].empty() || dims[2].empty(); }
  bool contains(const Region& o) const {
    for (int k = 0; k < 3; ++k) {
      if (o.dims[k].offset < dims[k].offset || o.dims[k].end() > dims[k].end()) return false;
    }
    return true;
  }

  friend bool operator==(const Region&, const Region&) = default;
};

inline Region intersect(const Region& a, const Region& b) {
  Region r;
  for (int k = 0; k < 3; ++k) r.dims[k] = intersect(a.dims[k], b.dims[k]);
  return r;
}

inline Region whole(const Shape5D& s) { return Region{{Interval{0, s.d}, Interval{0, s.h}, Interval{0, s.w}}}; }

inline std::string to_string(const Region& r) {
  std::string out = "[";
  for (int k = 0; k < 3; ++k) {
    if (k) out += "x";
    out += std::to_string(r.dims[k].offset) + ":" + std::to_string(r.dims[k].end());
  }
  return out + ")";
}

/// G data-parallel groups, each splitting one sample pd x ph x pw ways.
/// Rank numbering is row-major with W fastest and the group index slowest.
struct ProcessGrid {
  int groups = 1;
  int pd = 1;
  int ph = 1;
  int pw = 1;

  struct Coord {
    int group = 0;
    std::array<int, 3> spatial{};  // (gd, gh, gw)
    friend bool operator==(const Coord&, const Coord&) = default;
  };

  int parts(int dim) const { return dim == 0 ? pd : (dim == 1 ? ph : pw); }
  int spatial_size() const { return pd * ph * pw; }
  int size() const { return groups * spatial_size(); }
  bool valid() const { return groups >= 1 && pd >= 1 && ph >= 1 && pw >= 1; }

  Coord coord(int rank) const {
    Coord c;
    c.spatial[2] = rank % pw;
    rank /= pw;
    c.spatial[1] = rank % ph;
    rank /= ph;
    c.spatial[0] = rank % pd;
    c.group = rank / pd;
    return c;
  }

  int rank_of(const Coord& c) const {
    return ((c.group * pd + c.spatial[0]) * ph + c.spatial[1]) * pw + c.spatial[2];
  }

  friend bool operator==(const ProcessGrid&, const ProcessGrid&) = default;
};

inline std::string to_string(const ProcessGrid& g) {
  return std::to_string(g.groups) + "x" + std::to_string(g.pd) + "x" + std::to_string(g.ph) + "x" +
         std::to_string(g.pw);
}

/// Parses the `GxPDxPHxPW` flag syntax.
inline ProcessGrid parse_grid(const std::string& text) {
  std::array<int, 4> v{};
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    const std::size_t next = text.find('x', pos);
    const std::string part = text.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      fail(ErrorCode::kConfigError, "grid: expected GxPDxPHxPW, got '" + text + "'");
    }
    v[i] = std::stoi(part);
    if (i < 3) {
      if (next == std::string::npos) fail(ErrorCode::kConfigError, "grid: expected GxPDxPHxPW, got '" + text + "'");
      pos = next + 1;
    } else if (next != std::string::npos) {
      fail(ErrorCode::kConfigError, "grid: expected GxPDxPHxPW, got '" + text + "'");
    }
  }
  ProcessGrid g{v[0], v[1], v[2], v[3]};
  require(g.valid(), ErrorCode::kConfigError, "grid: every factor must be >= 1, got '" + text + "'");
  return g;
}

}  // namespace hybridcnn
