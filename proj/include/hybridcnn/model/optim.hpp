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
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hybridcnn/errors.hpp"

namespace hybridcnn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// One bias-corrected Adam update; `grad` is the global (allreduced) mean gradient.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grad, AdamState<T>& st, double lr, const AdamConfig& cfg = {}) {
  require(params.size() == grad.size() && st.m.size() == params.size() && st.v.size() == params.size(),
          ErrorCode::kShapeMismatch,
          "adam: " + std::to_string(params.size()) + " params, " + std::to_string(grad.size()) + " grads, " +
              std::to_string(st.m.size()) + " moments");
  st.t += 1;
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T c1 = T(1) - T(std::pow(cfg.beta1, static_cast<double>(st.t)));
  const T c2 = T(1) - T(std::pow(cfg.beta2, static_cast<double>(st.t)));
  const T eta = T(lr), eps = T(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (T(1) - b1) * grad[i];
    st.v[i] = b2 * st.v[i] + (T(1) - b2) * grad[i] * grad[i];
    const T mhat = st.m[i] / c1;
    const T vhat = st.v[i] / c2;
    params[i] -= eta * mhat / (std::sqrt(vhat) + eps);
  }
}

/// W <- W - lr * grad, with `grad` already the batch mean.
template <class T>
void sgd_step(std::span<T> params, std::span<const T> grad, double lr) {
  require(params.size() == grad.size(), ErrorCode::kShapeMismatch, "sgd: parameter and gradient sizes differ");
  const T eta = T(lr);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= eta * grad[i];
}

/// Linear decay reaching `terminal` x the initial rate at `horizon` epochs, then flat.
struct LrSchedule {
  double initial = 1e-3;
  double horizon = 100.0;
  double terminal = 0.01;
};

inline double lr_at(const LrSchedule& s, double epoch) {
  const double e = std::clamp(epoch, 0.0, s.horizon);
  return s.initial * (1.0 - (1.0 - s.terminal) * e / s.horizon);
}

}  // namespace hybridcnn
