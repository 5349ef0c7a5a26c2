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

#include <map>
#include <set>

#include "hybridcnn/tensor/dist_tensor.hpp"
#include "hybridcnn/tensor/partition.hpp"
#include "testing.hpp"

namespace hybridcnn {
namespace {

using testing::expect_error;

TEST(SplitExtent, EvenDivision) {
  auto iv = split_extent(512, 8);
  ASSERT_EQ(iv.size(), 8u);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(iv[i].offset, 64 * i);
    EXPECT_EQ(iv[i].extent, 64);
  }
}

TEST(SplitExtent, SinglePart) {
  auto iv = split_extent(128, 1);
  ASSERT_EQ(iv.size(), 1u);
  EXPECT_EQ(iv[0].offset, 0);
  EXPECT_EQ(iv[0].extent, 128);
}

TEST(SplitExtent, RejectsUnevenSplit) {
  expect_error(ErrorCode::kNonDivisible, [] { split_extent(7, 2); });
}

TEST(ProcessGrid, RankCoordBijection) {
  const ProcessGrid g{3, 2, 2, 4};
  std::set<std::tuple<int, int, int, int>> seen;
  for (int r = 0; r < g.size(); ++r) {
    auto c = g.coord(r);
    EXPECT_EQ(g.rank_of(c), r);
    seen.insert({c.group, c.spatial[0], c.spatial[1], c.spatial[2]});
  }
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(g.size()));
  // W fastest, group slowest.
  EXPECT_EQ(g.coord(1).spatial[2], 1);
  EXPECT_EQ(g.coord(16).group, 1);
}

TEST(ProcessGrid, Parse) {
  auto g = parse_grid("8x2x1x1");
  EXPECT_EQ(g, (ProcessGrid{8, 2, 1, 1}));
  EXPECT_EQ(g.size(), 16);
  expect_error(ErrorCode::kConfigError, [] { parse_grid("2x2x1"); });
  expect_error(ErrorCode::kConfigError, [] { parse_grid("0x1x1x1"); });
  expect_error(ErrorCode::kConfigError, [] { parse_grid("axbxcxd"); });
}

TEST(MakePartition, GroupsAndDepthSlabs) {
  // 16 ranks arranged as 8 groups of 2-way depth partitions.
  auto meta = make_partition({16, 4, 512, 512, 512}, ProcessGrid{8, 2, 1, 1});
  EXPECT_EQ(meta.size(), 16);
  for (int r = 0; r < 16; ++r) {
    auto reg = meta.region(r);
    EXPECT_EQ(reg.dims[0].extent, 256);
    EXPECT_EQ(reg.dims[0].offset, (r % 2) * 256);
    EXPECT_EQ(reg.dims[1].extent, 512);
    EXPECT_EQ(meta.samples(r).offset, (r / 2) * 2);
    EXPECT_EQ(meta.samples(r).extent, 2);
  }
}

TEST(MakePartition, IdentityGridIsWholeDomain) {
  Shape5D s{1, 2, 8, 6, 4};
  auto meta = make_partition(s, ProcessGrid{});
  EXPECT_EQ(meta.region(0), whole(s));
  EXPECT_EQ(meta.local_shape(0), s);
}

TEST(MakePartition, RejectsIndivisible) {
  expect_error(ErrorCode::kNonDivisible, [] { make_partition({1, 1, 10, 8, 8}, ProcessGrid{1, 4, 1, 1}); });
  expect_error(ErrorCode::kBatchIndivisible, [] { make_partition({3, 1, 8, 8, 8}, ProcessGrid{2, 1, 1, 1}); });
}

TEST(MakePartition, RegionsTileDomainExactly) {
  const Shape5D s{4, 1, 16, 8, 12};
  for (auto g : {ProcessGrid{1, 1, 1, 1}, ProcessGrid{1, 4, 1, 1}, ProcessGrid{2, 2, 2, 1}, ProcessGrid{1, 2, 4, 3},
                 ProcessGrid{4, 8, 2, 2}}) {
    auto meta = make_partition(s, g);
    std::vector<int> hits(static_cast<std::size_t>(s.n * s.voxels()), 0);
    for (int r = 0; r < g.size(); ++r) {
      auto reg = meta.region(r);
      auto smp = meta.samples(r);
      for (Extent n = smp.offset; n < smp.end(); ++n)
        for (Extent d = reg.dims[0].offset; d < reg.dims[0].end(); ++d)
          for (Extent h = reg.dims[1].offset; h < reg.dims[1].end(); ++h)
            for (Extent w = reg.dims[2].offset; w < reg.dims[2].end(); ++w) ++hits[s.offset(n, 0, d, h, w)];
    }
    for (int v : hits) ASSERT_EQ(v, 1) << to_string(g);
  }
}

TEST(HaloFaces, DepthFourWaySlabs) {
  auto meta = make_partition({1, 1, 16, 4, 4}, ProcessGrid{1, 4, 1, 1}, {1, 0, 0});
  for (int r = 0; r < 4; ++r) {
    EXPECT_EQ(meta.region(r).dims[0].offset, 4 * r);
    auto faces = halo_faces(meta, r);
    const std::size_t want = (r == 0 || r == 3) ? 1u : 2u;
    ASSERT_EQ(faces.size(), want) << "rank " << r;
    for (const auto& f : faces) {
      EXPECT_EQ(f.send.dims[0].extent, 1);
      EXPECT_EQ(f.recv.dims[0].extent, 1);
      EXPECT_EQ(f.neighbor, r + f.side);
    }
  }
}

TEST(HaloFaces, TwoWayDepthPair) {
  auto meta = make_partition({1, 1, 16, 4, 4}, ProcessGrid{1, 2, 1, 1}, {1, 1, 1});
  auto faces = halo_faces(meta, 0);
  ASSERT_EQ(faces.size(), 1u);
  EXPECT_EQ(faces[0].neighbor, 1);
  EXPECT_EQ(faces[0].send.dims[0].offset, 7);
  EXPECT_EQ(faces[0].send.dims[0].extent, 1);
  EXPECT_EQ(faces[0].recv.dims[0].offset, 8);
  EXPECT_EQ(faces[0].recv.dims[0].extent, 1);
}

TEST(HaloFaces, ZeroRadiiHaveNoFaces) {
  auto meta = make_partition({1, 1, 16, 16, 16}, ProcessGrid{1, 2, 2, 2});
  for (int r = 0; r < 8; ++r) EXPECT_TRUE(halo_faces(meta, r).empty());
}

TEST(HaloFaces, SendAndRecvPairUp) {
  // Each face's recv slab must be exactly the neighbour's matching send slab.
  auto meta = make_partition({1, 1, 8, 8, 8}, ProcessGrid{1, 2, 2, 2}, {1, 1, 1});
  for (int r = 0; r < 8; ++r) {
    for (const auto& f : halo_faces(meta, r)) {
      bool found = false;
      for (const auto& g : halo_faces(meta, f.neighbor)) {
        if (g.dim == f.dim && g.side == -f.side) {
          EXPECT_EQ(g.send, f.recv);
          EXPECT_EQ(g.neighbor, r);
          found = true;
        }
      }
      EXPECT_TRUE(found);
    }
  }
}

TEST(HyperslabRanges, DepthSliceIsOneRange) {
  Region reg{{Interval{2, 2}, Interval{0, 4}, Interval{0, 4}}};
  auto rs = hyperslab_byte_ranges({1, 4, 4, 4}, reg, 2);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(rs[0], (ByteRange{64, 64}));
}

TEST(HyperslabRanges, WholeFileIsOneRange) {
  Region reg{{Interval{0, 4}, Interval{0, 4}, Interval{0, 4}}};
  auto rs = hyperslab_byte_ranges({3, 4, 4, 4}, reg, 4);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(rs[0], (ByteRange{0, 3 * 64 * 4}));
}

TEST(HyperslabRanges, OneRangePerChannel) {
  Region reg{{Interval{0, 4}, Interval{0, 8}, Interval{0, 8}}};
  auto rs = hyperslab_byte_ranges({4, 8, 8, 8}, reg, 2);
  ASSERT_EQ(rs.size(), 4u);
  for (std::uint64_t c = 0; c < 4; ++c) EXPECT_EQ(rs[c], (ByteRange{c * 1024, 4 * 8 * 8 * 2}));
}

TEST(HyperslabRanges, MatchesVoxelEnumeration) {
  const std::array<std::uint64_t, 4> dims{2, 6, 5, 7};
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Region reg;
    for (int k = 0; k < 3; ++k) {
      const auto e = static_cast<Extent>(dims[k + 1]);
      const Extent a = static_cast<Extent>(rng.below(static_cast<std::uint64_t>(e)));
      const Extent b = a + 1 + static_cast<Extent>(rng.below(static_cast<std::uint64_t>(e - a)));
      reg.dims[k] = {a, b - a};
    }
    const std::uint64_t eb = 1 + rng.below(4);
    std::set<std::uint64_t> want;
    for (std::uint64_t c = 0; c < dims[0]; ++c)
      for (Extent d = reg.dims[0].offset; d < reg.dims[0].end(); ++d)
        for (Extent h = reg.dims[1].offset; h < reg.dims[1].end(); ++h)
          for (Extent w = reg.dims[2].offset; w < reg.dims[2].end(); ++w) {
            const std::uint64_t v = ((c * dims[1] + d) * dims[2] + h) * dims[3] + w;
            for (std::uint64_t b = 0; b < eb; ++b) want.insert(v * eb + b);
          }
    std::set<std::uint64_t> got;
    auto rs = hyperslab_byte_ranges(dims, reg, eb);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (i > 0) {
        EXPECT_LT(rs[i - 1].offset + rs[i - 1].length, rs[i].offset) << "ranges not maximal or not sorted";
      }
      for (std::uint64_t b = rs[i].offset; b < rs[i].offset + rs[i].length; ++b) got.insert(b);
    }
    ASSERT_EQ(got, want) << to_string(reg);
  }
}

TEST(HyperslabRanges, OutOfBounds) {
  Region reg{{Interval{2, 4}, Interval{0, 4}, Interval{0, 4}}};
  expect_error(ErrorCode::kOutOfBounds, [&] { hyperslab_byte_ranges({1, 4, 4, 4}, reg, 2); });
}

TEST(ScatterGather, RoundTrip) {
  const Shape5D s{4, 3, 8, 4, 6};
  auto whole_t = testing::random_tensor<double>(s, 7);
  auto meta = make_partition(s, ProcessGrid{2, 2, 2, 3});
  std::vector<DistTensor<double>> parts;
  for (int r = 0; r < meta.size(); ++r) parts.push_back(scatter(whole_t, meta, r));
  EXPECT_EQ(gather(parts).data, whole_t.data);
}

TEST(PackFaces, PackUnpackIsIdentityBetweenNeighbours) {
  const Shape5D s{2, 3, 8, 8, 8};
  auto g = testing::random_tensor<double>(s, 11);
  auto meta = make_partition(s, ProcessGrid{1, 2, 1, 1}, {2, 0, 0});
  auto a = scatter(g, meta, 0);
  auto b = scatter(g, meta, 1);
  a.init_halo();
  b.init_halo();
  auto fa = halo_faces(meta, 0);
  auto fb = halo_faces(meta, 1);
  auto bufs = pack_faces<double>(a, fa);
  unpack_faces<double>(b, fb, bufs);
  // b's lower halo now holds depths 2..3 of rank 0's block.
  const Shape5D ps = b.padded_shape();
  for (Extent n = 0; n < 2; ++n)
    for (Extent c = 0; c < 3; ++c)
      for (Extent d = 0; d < 2; ++d)
        for (Extent h = 0; h < 8; ++h)
          for (Extent w = 0; w < 8; ++w)
            ASSERT_EQ(b.halo[ps.offset(n, c, d, h, w)], g.at(n, c, 2 + d, h, w));
}

TEST(PackFaces, RampSlabIsRowMajorEnumeration) {
  const Shape5D s{2, 2, 8, 4, 4};
  auto g = testing::ramp_tensor<double>(s);
  auto meta = make_partition(s, ProcessGrid{1, 2, 2, 1}, {1, 1, 0});
  for (int r = 0; r < 4; ++r) {
    auto t = scatter(g, meta, r);
    t.init_halo();
    auto faces = halo_faces(meta, r);
    // Only the first (depth) faces read purely interior data before any exchange.
    for (std::size_t i = 0; i < faces.size(); ++i) {
      if (faces[i].dim != 0) continue;
      auto bufs = pack_faces<double>(t, std::span<const HaloFace>(&faces[i], 1));
      std::vector<double> want;
      const auto& sr = faces[i].send;
      for (Extent n = 0; n < s.n; ++n)
        for (Extent c = 0; c < s.c; ++c)
          for (Extent d = sr.dims[0].offset; d < sr.dims[0].end(); ++d)
            for (Extent h = sr.dims[1].offset; h < sr.dims[1].end(); ++h)
              for (Extent w = sr.dims[2].offset; w < sr.dims[2].end(); ++w) want.push_back(g.at(n, c, d, h, w));
      EXPECT_EQ(bufs[0], want);
    }
  }
}

TEST(PackFaces, ZeroThicknessFaceIsEmpty) {
  const Shape5D s{1, 1, 4, 4, 4};
  auto meta = make_partition(s, ProcessGrid{1, 2, 1, 1}, {1, 0, 0});
  auto t = make_local<float>(meta, 0);
  t.init_halo();
  HaloFace f;
  f.send = Region{{Interval{1, 0}, Interval{0, 4}, Interval{0, 4}}};
  f.recv = f.send;
  auto bufs = pack_faces<float>(t, std::span<const HaloFace>(&f, 1));
  ASSERT_EQ(bufs.size(), 1u);
  EXPECT_TRUE(bufs[0].empty());
}

}  // namespace
}  // namespace hybridcnn
