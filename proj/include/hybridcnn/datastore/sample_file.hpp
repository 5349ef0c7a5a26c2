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


// Self-describing sample container. Layout (all integers little-endian):
//   0  magic "HSB1"
//   4  version u8 = 1
//   5  dtype u8 (0 = int16, 1 = fp32)
//   6  reserved u16 = 0
//   8  16 reserved zero bytes
//   24 dims: four u64 (C, D, H, W)
//   56 payload, C-order with W fastest

#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/tensor/partition.hpp"

namespace hybridcnn {

static_assert(std::endian::native == std::endian::little, "payloads are stored in host order, which must be little-endian");

enum class DType : std::uint8_t { kInt16 = 0, kFloat32 = 1 };

inline std::uint64_t elem_bytes(DType t) { return t == DType::kInt16 ? 2 : 4; }
inline std::string to_string(DType t) { return t == DType::kInt16 ? "int16" : "fp32"; }
inline DType parse_dtype(const std::string& s) {
  if (s == "int16") return DType::kInt16;
  if (s == "fp32") return DType::kFloat32;
  fail(ErrorCode::kConfigError, "unknown dtype '" + s + "' (expected int16 or fp32)");
}

inline constexpr std::uint64_t kPreambleBytes = 24;
inline constexpr std::uint64_t kHeaderBytes = kPreambleBytes + 4 * 8;
inline constexpr char kMagic[4] = {'H', 'S', 'B', '1'};
inline constexpr std::uint8_t kVersion = 1;

using FileDims = std::array<std::uint64_t, 4>;  // C, D, H, W

struct SampleHeader {
  DType dtype = DType::kInt16;
  FileDims dims{};

  std::uint64_t voxels() const { return dims[0] * dims[1] * dims[2] * dims[3]; }
  std::uint64_t payload_bytes() const { return voxels() * elem_bytes(dtype); }
  std::uint64_t file_bytes() const { return kHeaderBytes + payload_bytes(); }
};

/// Per-epoch I/O accounting; shared by every rank, so internally locked.
class IoCounters {
 public:
  struct Epoch {
    std::uint64_t file_bytes_read = 0;
    std::uint64_t file_opens = 0;
    std::uint64_t exchange_bytes = 0;
  };

  void add_read(std::int64_t epoch, std::uint64_t bytes, std::uint64_t opens) {
    std::lock_guard lk(mu_);
    auto& e = per_epoch_[epoch];
    e.file_bytes_read += bytes;
    e.file_opens += opens;
  }
  void add_exchange(std::int64_t epoch, std::uint64_t bytes) {
    std::lock_guard lk(mu_);
    per_epoch_[epoch].exchange_bytes += bytes;
  }
  Epoch epoch(std::int64_t e) const {
    std::lock_guard lk(mu_);
    auto it = per_epoch_.find(e);
    return it == per_epoch_.end() ? Epoch{} : it->second;
  }
  Epoch total() const {
    std::lock_guard lk(mu_);
    Epoch t;
    for (const auto& [k, v] : per_epoch_) {
      t.file_bytes_read += v.file_bytes_read;
      t.file_opens += v.file_opens;
      t.exchange_bytes += v.exchange_bytes;
    }
    return t;
  }
  std::map<std::int64_t, Epoch> breakdown() const {
    std::lock_guard lk(mu_);
    return per_epoch_;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::int64_t, Epoch> per_epoch_;
};

namespace detail {
inline void put_u64(unsigned char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace detail

inline std::array<unsigned char, kHeaderBytes> encode_header(const SampleHeader& h) {
  std::array<unsigned char, kHeaderBytes> b{};
  std::memcpy(b.data(), kMagic, 4);
  b[4] = kVersion;
  b[5] = static_cast<unsigned char>(h.dtype);
  for (int i = 0; i < 4; ++i) detail::put_u64(b.data() + kPreambleBytes + 8 * i, h.dims[i]);
  return b;
}

/// Writes header and payload; `payload` must hold exactly the dims' voxel bytes.
inline void write_sample(const std::filesystem::path& path, const FileDims& dims, DType dtype,
                         std::span<const std::byte> payload) {
  const SampleHeader h{dtype, dims};
  require(payload.size() == h.payload_bytes(), ErrorCode::kShapeMismatch,
          "write_sample: " + std::to_string(payload.size()) + " payload bytes for dims needing " +
              std::to_string(h.payload_bytes()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  const auto hb = encode_header(h);
  out.write(reinterpret_cast<const char*>(hb.data()), static_cast<std::streamsize>(hb.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  require(static_cast<bool>(out), ErrorCode::kIoError, "write failed for " + path.string());
}

template <class V>
void write_sample(const std::filesystem::path& path, const FileDims& dims, std::span<const V> voxels) {
  static_assert(std::is_same_v<V, std::int16_t> || std::is_same_v<V, float>);
  constexpr DType dt = std::is_same_v<V, std::int16_t> ? DType::kInt16 : DType::kFloat32;
  write_sample(path, dims, dt, std::as_bytes(voxels));
}

namespace detail {
inline SampleHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, kHeaderBytes> b{};
  in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size()));
  const auto got = static_cast<std::uint64_t>(in.gcount());
  require(got >= 4 && std::memcmp(b.data(), kMagic, 4) == 0, ErrorCode::kBadMagic,
          path.string() + ": not a sample file (bad magic)");
  require(got == kHeaderBytes, ErrorCode::kIoError,
          path.string() + ": truncated header, expected " + std::to_string(kHeaderBytes) + " bytes, got " +
              std::to_string(got));
  require(b[4] == kVersion, ErrorCode::kBadVersion, path.string() + ": unsupported version " + std::to_string(b[4]));
  require(b[5] <= 1, ErrorCode::kIoError, path.string() + ": unknown dtype code " + std::to_string(b[5]));
  SampleHeader h;
  h.dtype = static_cast<DType>(b[5]);
  for (int i = 0; i < 4; ++i) h.dims[i] = get_u64(b.data() + kPreambleBytes + 8 * i);
  const auto actual = static_cast<std::uint64_t>(std::filesystem::file_size(path));
  require(actual == h.file_bytes(), ErrorCode::kIoError,
          path.string() + ": length " + std::to_string(actual) + " bytes, expected " + std::to_string(h.file_bytes()));
  return h;
}
}  // namespace detail

/// Validates magic, version, dtype and the file length against the dims.
inline SampleHeader read_header(const std::filesystem::path& path, IoCounters* io = nullptr, std::int64_t epoch = 0) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open " + path.string());
  if (io) io->add_read(epoch, 0, 1);
  return detail::parse_header(in, path);
}

/// Reads all channels of `region` (C-order slab, W fastest) using one read
/// per contiguous byte range; only the header and those ranges are read.
inline std::vector<std::byte> read_hyperslab(const std::filesystem::path& path, const Region& region,
                                             IoCounters* io = nullptr, std::int64_t epoch = 0,
                                             SampleHeader* header_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open " + path.string());
  const SampleHeader h = detail::parse_header(in, path);
  if (header_out) *header_out = h;
  const auto ranges = hyperslab_byte_ranges(h.dims, region, elem_bytes(h.dtype));
  std::uint64_t total = 0;
  for (const auto& r : ranges) total += r.length;
  std::vector<std::byte> out(total);
  std::uint64_t pos = 0;
  for (const auto& r : ranges) {
    in.seekg(static_cast<std::streamoff>(kHeaderBytes + r.offset));
    in.read(reinterpret_cast<char*>(out.data() + pos), static_cast<std::streamsize>(r.length));
    require(static_cast<std::uint64_t>(in.gcount()) == r.length, ErrorCode::kIoError,
            path.string() + ": short read at offset " + std::to_string(kHeaderBytes + r.offset));
    pos += r.length;
  }
  if (io) io->add_read(epoch, total, 1);
  return out;
}

/// Converts raw voxels of `dtype` to T.
template <class T>
void convert_voxels(std::span<const std::byte> raw, DType dtype, T* out, double scale = 1.0) {
  const std::size_t n = raw.size() / elem_bytes(dtype);
  if (dtype == DType::kInt16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t v;
      std::memcpy(&v, raw.data() + 2 * i, 2);
      out[i] = static_cast<T>(static_cast<double>(v) * scale);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, raw.data() + 4 * i, 4);
      out[i] = static_cast<T>(static_cast<double>(v) * scale);
    }
  }
}

}  // namespace hybridcnn
