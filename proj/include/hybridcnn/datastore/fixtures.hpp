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


// Synthetic datasets. Sample s draws four parameters p in [-1, 1); channel c
// holds p[c % 4] plus a depth ramp weighted by p[(c + 1) % 4] and uniform
// noise, quantized at 1/1000. Regression targets are p. With labels, each
// voxel's class is 1 where channel 0 is positive, else 0.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "hybridcnn/datastore/manifest.hpp"
#include "hybridcnn/datastore/sample_file.hpp"
#include "hybridcnn/errors.hpp"
#include "hybridcnn/rng.hpp"

namespace hybridcnn {

struct FixtureConfig {
  std::int64_t samples = 8;
  FileDims dims{1, 16, 16, 16};
  DType dtype = DType::kInt16;
  std::uint64_t seed = 1;
  bool labels = false;
  double noise = 0.1;
};

struct FixtureSummary {
  std::int64_t files = 0;
  std::uint64_t bytes_per_sample = 0;  // whole file, header included
  std::uint64_t total_bytes = 0;
};

inline constexpr double kFixtureQuantum = 1e-3;

inline FixtureSummary fixture_summary(const FixtureConfig& cfg) {
  FixtureSummary s;
  s.bytes_per_sample = SampleHeader{cfg.dtype, cfg.dims}.file_bytes();
  s.files = cfg.samples * (cfg.labels ? 2 : 1);
  s.total_bytes = static_cast<std::uint64_t>(cfg.samples) * s.bytes_per_sample;
  if (cfg.labels) {
    s.total_bytes += static_cast<std::uint64_t>(cfg.samples) *
                     SampleHeader{DType::kInt16, {1, cfg.dims[1], cfg.dims[2], cfg.dims[3]}}.file_bytes();
  }
  return s;
}

inline std::string fixture_name(std::int64_t id, const char* suffix) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "sample_%05lld%s.hsb", static_cast<long long>(id), suffix);
  return buf;
}

/// Writes the dataset and `manifest.txt` under `out`; returns the manifest path.
inline std::filesystem::path make_fixtures(const std::filesystem::path& out, const FixtureConfig& cfg) {
  require(cfg.samples >= 1, ErrorCode::kConfigError, "fixtures: samples must be >= 1");
  for (auto d : cfg.dims) require(d >= 1, ErrorCode::kConfigError, "fixtures: dims must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  require(!ec, ErrorCode::kIoError, "cannot create " + out.string() + ": " + ec.message());

  const auto [C, D, H, W] = cfg.dims;
  const std::uint64_t vox = D * H * W;
  const double scale = cfg.dtype == DType::kInt16 ? kFixtureQuantum : 1.0;
  Manifest m;
  m.root = ".";
  m.dtype = cfg.dtype;
  m.dims = cfg.dims;
  m.scale = scale;

  std::vector<std::int16_t> q(C * vox);
  std::vector<float> f(C * vox);
  std::vector<std::int16_t> lab(cfg.labels ? vox : 0);
  for (std::int64_t id = 0; id < cfg.samples; ++id) {
    Rng rng(mix_seed({cfg.seed, static_cast<std::uint64_t>(id), 0xF1C7ULL}));
    std::array<double, 4> p{};
    for (auto& v : p) v = rng.uniform(-1.0, 1.0);
    for (std::uint64_t c = 0; c < C; ++c) {
      for (std::uint64_t d = 0; d < D; ++d) {
        const double ramp = D > 1 ? 2.0 * static_cast<double>(d) / static_cast<double>(D - 1) - 1.0 : 0.0;
        for (std::uint64_t i = 0; i < H * W; ++i) {
          const double v = p[c % 4] + 0.5 * p[(c + 1) % 4] * ramp + cfg.noise * rng.uniform(-1.0, 1.0);
          const std::size_t at = static_cast<std::size_t>((c * D + d) * H * W + i);
          // Quantize identically for both dtypes so fp32 and int16 sets agree.
          const double r = std::nearbyint(v / kFixtureQuantum);
          q[at] = static_cast<std::int16_t>(r);
          f[at] = static_cast<float>(r * kFixtureQuantum);
          if (cfg.labels && c == 0) lab[static_cast<std::size_t>(d * H * W + i)] = r > 0 ? 1 : 0;
        }
      }
    }
    ManifestEntry e;
    e.id = id;
    e.file = fixture_name(id, "");
    if (cfg.dtype == DType::kInt16) {
      write_sample<std::int16_t>(out / e.file, cfg.dims, q);
    } else {
      write_sample<float>(out / e.file, cfg.dims, f);
    }
    if (cfg.labels) {
      e.label_file = fixture_name(id, "_label");
      write_sample<std::int16_t>(out / e.label_file, {1, D, H, W}, lab);
    } else {
      e.targets.assign(p.begin(), p.end());
    }
    m.samples.push_back(std::move(e));
  }
  const auto path = out / "manifest.txt";
  write_manifest(path, m);
  return path;
}

}  // namespace hybridcnn
