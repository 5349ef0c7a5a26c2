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

#include <cstdint>

#include "hybridcnn/layers/params.hpp"
#include "hybridcnn/tensor/shape.hpp"

namespace hybridcnn {

/// Forward multiply-add flops of one sample: 2 * taps * cin * cout * output voxels.
inline double conv_flops(const ConvParams& p, const Shape5D& in) {
  const Shape5D out = p.out_shape(in);
  return 2.0 * static_cast<double>(p.taps()) * static_cast<double>(p.cin) * static_cast<double>(p.cout) *
         static_cast<double>(out.voxels());
}

/// Same count for the transposed convolution (each input voxel scatters k^3 taps).
inline double deconv_flops(const DeconvParams& p, const Shape5D& in) {
  return 2.0 * static_cast<double>(p.kernel) * p.kernel * p.kernel * static_cast<double>(p.cin) *
         static_cast<double>(p.cout) * static_cast<double>(in.voxels());
}

/// Forward + backward-data + backward-filter, each the size of the forward pass.
inline constexpr double kTrainingPasses = 3.0;

}  // namespace hybridcnn
