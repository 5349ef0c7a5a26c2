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

#include "hybridcnn/errors.hpp"
#include "hybridcnn/rng.hpp"
#include "hybridcnn/tensor/shape.hpp"

namespace hybridcnn {

/// 3D convolution, "same" padding, no bias. Weights are laid out
/// [cout][cin][kd][kh][kw]; output o reads input s*o + k - r with r = (k-1)/2.
struct ConvParams {
  Extent cin = 1;
  Extent cout = 1;
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> stride{1, 1, 1};

  int radius(int dim) const { return (kernel[dim] - 1) / 2; }
  std::array<int, 3> radii() const { return {radius(0), radius(1), radius(2)}; }
  Extent out_extent(Extent in, int dim) const { return (in + stride[dim] - 1) / stride[dim]; }
  Shape5D out_shape(const Shape5D& in) const {
    return {in.n, cout, out_extent(in.d, 0), out_extent(in.h, 1), out_extent(in.w, 2)};
  }
  Extent taps() const { return static_cast<Extent>(kernel[0]) * kernel[1] * kernel[2]; }
  Extent weight_count() const { return cout * cin * taps(); }
  bool unit_stride() const { return stride[0] == 1 && stride[1] == 1 && stride[2] == 1; }

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

/// Transposed convolution. Defined as the adjoint of the convolution returned by
/// as_conv(); weights are laid out [cin][cout][kd][kh][kw].
struct DeconvParams {
  Extent cin = 1;
  Extent cout = 1;
  int kernel = 2;
  int stride = 2;

  ConvParams as_conv() const { return ConvParams{cout, cin, {kernel, kernel, kernel}, {stride, stride, stride}}; }
  Shape5D out_shape(const Shape5D& in) const {
    return {in.n, cout, in.d * stride, in.h * stride, in.w * stride};
  }
  Extent weight_count() const { return cin * cout * kernel * kernel * kernel; }

  friend bool operator==(const DeconvParams&, const DeconvParams&) = default;
};

enum class PoolType { kAverage, kMax };

inline std::string to_string(PoolType p) { return p == PoolType::kMax ? "max" : "avg"; }

/// Non-overlapping 2^3 window, stride 2.
inline Shape5D pool_out_shape(const Shape5D& in) { return {in.n, in.c, in.d / 2, in.h / 2, in.w / 2}; }

enum class Mode { kTrain, kEval };

/// Identifies one dropout draw. Combined with the sample id and the element's
/// global per-sample coordinate, so masks do not depend on partitioning.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t iteration = 0;
  std::uint64_t layer = 0;
};

/// Keep decision for element `feature` (flattened global c,d,h,w index) of sample `sample_id`.
inline bool dropout_keep(const DropoutKey& key, std::uint64_t sample_id, std::uint64_t feature, double keep) {
  std::uint64_t h = splitmix64(key.seed);
  h = splitmix64(h ^ key.epoch);
  h = splitmix64(h ^ key.iteration);
  h = splitmix64(h ^ key.layer);
  h = splitmix64(h ^ sample_id);
  h = splitmix64(h ^ feature);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < keep;
}

struct BatchNormConfig {
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

}  // namespace hybridcnn
