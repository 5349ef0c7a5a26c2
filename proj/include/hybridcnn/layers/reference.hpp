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

// Serial reference implementations. These are the oracles the distributed
// layers are checked against, so they stay direct and unoptimised.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/layers/params.hpp"
#include "hybridcnn/tensor/dist_tensor.hpp"

namespace hybridcnn::ref {

namespace detail {
inline void check_conv(const Shape5D& in, std::size_t wsize, const ConvParams& p) {
  require(in.c == p.cin, ErrorCode::kShapeMismatch,
          "conv input has " + std::to_string(in.c) + " channels, expected " + std::to_string(p.cin));
  require(wsize == static_cast<std::size_t>(p.weight_count()), ErrorCode::kShapeMismatch,
          "conv weights have " + std::to_string(wsize) + " elements, expected " + std::to_string(p.weight_count()));
}
}  // namespace detail

/// y[n,co,o] = sum_ci sum_k w[co,ci,k] * x[n,ci,s*o+k-r], zero outside the domain.
template <class T>
HostTensor<T> conv3d(const HostTensor<T>& x, std::span<const T> w, const ConvParams& p) {
  detail::check_conv(x.shape, w.size(), p);
  const Shape5D& is = x.shape;
  HostTensor<T> y(p.out_shape(is));
  const Shape5D& os = y.shape;
  const int kd = p.kernel[0], kh = p.kernel[1], kw = p.kernel[2];
  for (Extent n = 0; n < os.n; ++n)
    for (Extent co = 0; co < os.c; ++co)
      for (Extent od = 0; od < os.d; ++od)
        for (Extent oh = 0; oh < os.h; ++oh)
          for (Extent ow = 0; ow < os.w; ++ow) {
            T acc = T(0);
            for (Extent ci = 0; ci < is.c; ++ci)
              for (int a = 0; a < kd; ++a) {
                const Extent id = p.stride[0] * od + a - p.radius(0);
                if (id < 0 || id >= is.d) continue;
                for (int b = 0; b < kh; ++b) {
                  const Extent ih = p.stride[1] * oh + b - p.radius(1);
                  if (ih < 0 || ih >= is.h) continue;
                  for (int c = 0; c < kw; ++c) {
                    const Extent iw = p.stride[2] * ow + c - p.radius(2);
                    if (iw < 0 || iw >= is.w) continue;
                    acc += w[static_cast<std::size_t>(((co * is.c + ci) * kd + a) * kh * kw + b * kw + c)] *
                           x.at(n, ci, id, ih, iw);
                  }
                }
              }
            y.at(n, co, od, oh, ow) = acc;
          }
  return y;
}

/// Adjoint of conv3d with respect to x.
template <class T>
HostTensor<T> conv3d_bwd_data(const HostTensor<T>& dy, std::span<const T> w, const ConvParams& p,
                              const Shape5D& in_shape) {
  detail::check_conv(in_shape, w.size(), p);
  require(dy.shape == p.out_shape(in_shape), ErrorCode::kShapeMismatch,
          "conv bwd_data: dy " + to_string(dy.shape) + " does not match output of " + to_string(in_shape));
  HostTensor<T> dx(in_shape);
  const Shape5D& os = dy.shape;
  const int kd = p.kernel[0], kh = p.kernel[1], kw = p.kernel[2];
  for (Extent n = 0; n < in_shape.n; ++n)
    for (Extent ci = 0; ci < in_shape.c; ++ci)
      for (Extent id = 0; id < in_shape.d; ++id)
        for (Extent ih = 0; ih < in_shape.h; ++ih)
          for (Extent iw = 0; iw < in_shape.w; ++iw) {
            T acc = T(0);
            for (Extent co = 0; co < os.c; ++co)
              for (int a = 0; a < kd; ++a) {
                const Extent td = id + p.radius(0) - a;
                if (td < 0 || td % p.stride[0] != 0 || td / p.stride[0] >= os.d) continue;
                for (int b = 0; b < kh; ++b) {
                  const Extent th = ih + p.radius(1) - b;
                  if (th < 0 || th % p.stride[1] != 0 || th / p.stride[1] >= os.h) continue;
                  for (int c = 0; c < kw; ++c) {
                    const Extent tw = iw + p.radius(2) - c;
                    if (tw < 0 || tw % p.stride[2] != 0 || tw / p.stride[2] >= os.w) continue;
                    acc += w[static_cast<std::size_t>(((co * in_shape.c + ci) * kd + a) * kh * kw + b * kw + c)] *
                           dy.at(n, co, td / p.stride[0], th / p.stride[1], tw / p.stride[2]);
                  }
                }
              }
            dx.at(n, ci, id, ih, iw) = acc;
          }
  return dx;
}

/// Gradient of <conv3d(x, w), dy> with respect to w.
template <class T>
std::vector<T> conv3d_bwd_filter(const HostTensor<T>& x, const HostTensor<T>& dy, const ConvParams& p) {
  detail::check_conv(x.shape, static_cast<std::size_t>(p.weight_count()), p);
  require(dy.shape == p.out_shape(x.shape), ErrorCode::kShapeMismatch,
          "conv bwd_filter: dy " + to_string(dy.shape) + " does not match output of " + to_string(x.shape));
  std::vector<T> dw(static_cast<std::size_t>(p.weight_count()), T(0));
  const Shape5D& is = x.shape;
  const Shape5D& os = dy.shape;
  const int kd = p.kernel[0], kh = p.kernel[1], kw = p.kernel[2];
  for (Extent co = 0; co < os.c; ++co)
    for (Extent ci = 0; ci < is.c; ++ci)
      for (int a = 0; a < kd; ++a)
        for (int b = 0; b < kh; ++b)
          for (int c = 0; c < kw; ++c) {
            T acc = T(0);
            for (Extent n = 0; n < os.n; ++n)
              for (Extent od = 0; od < os.d; ++od) {
                const Extent id = p.stride[0] * od + a - p.radius(0);
                if (id < 0 || id >= is.d) continue;
                for (Extent oh = 0; oh < os.h; ++oh) {
                  const Extent ih = p.stride[1] * oh + b - p.radius(1);
                  if (ih < 0 || ih >= is.h) continue;
                  for (Extent ow = 0; ow < os.w; ++ow) {
                    const Extent iw = p.stride[2] * ow + c - p.radius(2);
                    if (iw < 0 || iw >= is.w) continue;
                    acc += dy.at(n, co, od, oh, ow) * x.at(n, ci, id, ih, iw);
                  }
                }
              }
            dw[static_cast<std::size_t>(((co * is.c + ci) * kd + a) * kh * kw + b * kw + c)] = acc;
          }
  return dw;
}

template <class T>
HostTensor<T> deconv3d(const HostTensor<T>& x, std::span<const T> w, const DeconvParams& p) {
  require(x.shape.c == p.cin, ErrorCode::kShapeMismatch, "deconv input channel mismatch");
  return conv3d_bwd_data<T>(x, w, p.as_conv(), p.out_shape(x.shape));
}

template <class T>
HostTensor<T> deconv3d_bwd_data(const HostTensor<T>& dy, std::span<const T> w, const DeconvParams& p) {
  return conv3d<T>(dy, w, p.as_conv());
}

template <class T>
std::vector<T> deconv3d_bwd_filter(const HostTensor<T>& x, const HostTensor<T>& dy, const DeconvParams& p) {
  return conv3d_bwd_filter<T>(dy, x, p.as_conv());
}

template <class T>
struct PoolResult {
  HostTensor<T> y;
  std::vector<std::uint8_t> argmax;  // window-local index 0..7 per output (max pooling only)
};

inline void check_poolable(const Shape5D& s) {
  require(s.d % 2 == 0 && s.h % 2 == 0 && s.w % 2 == 0, ErrorCode::kNonDivisible,
          "pooling needs even extents, got " + to_string(s));
}

/// 2^3 window, stride 2. Max ties go to the lowest window-local linear index.
template <class T>
PoolResult<T> pool3d(const HostTensor<T>& x, PoolType type) {
  check_poolable(x.shape);
  PoolResult<T> r{HostTensor<T>(pool_out_shape(x.shape)), {}};
  const Shape5D& os = r.y.shape;
  if (type == PoolType::kMax) r.argmax.assign(static_cast<std::size_t>(os.elements()), 0);
  for (Extent n = 0; n < os.n; ++n)
    for (Extent c = 0; c < os.c; ++c)
      for (Extent d = 0; d < os.d; ++d)
        for (Extent h = 0; h < os.h; ++h)
          for (Extent w = 0; w < os.w; ++w) {
            T acc = T(0);
            T best = T(0);
            std::uint8_t arg = 0;
            for (int j = 0; j < 8; ++j) {
              const T v = x.at(n, c, 2 * d + (j >> 2), 2 * h + ((j >> 1) & 1), 2 * w + (j & 1));
              acc += v;
              if (j == 0 || v > best) {
                best = v;
                arg = static_cast<std::uint8_t>(j);
              }
            }
            const std::size_t o = os.offset(n, c, d, h, w);
            if (type == PoolType::kMax) {
              r.y.data[o] = best;
              r.argmax[o] = arg;
            } else {
              r.y.data[o] = acc / T(8);
            }
          }
  return r;
}

template <class T>
HostTensor<T> pool3d_bwd(const HostTensor<T>& dy, PoolType type, const Shape5D& in_shape,
                         std::span<const std::uint8_t> argmax) {
  require(dy.shape == pool_out_shape(in_shape), ErrorCode::kShapeMismatch, "pool bwd: dy shape mismatch");
  HostTensor<T> dx(in_shape);
  const Shape5D& os = dy.shape;
  for (Extent n = 0; n < os.n; ++n)
    for (Extent c = 0; c < os.c; ++c)
      for (Extent d = 0; d < os.d; ++d)
        for (Extent h = 0; h < os.h; ++h)
          for (Extent w = 0; w < os.w; ++w) {
            const std::size_t o = os.offset(n, c, d, h, w);
            for (int j = 0; j < 8; ++j) {
              T& t = dx.at(n, c, 2 * d + (j >> 2), 2 * h + ((j >> 1) & 1), 2 * w + (j & 1));
              if (type == PoolType::kMax) {
                t = (argmax[o] == j) ? dy.data[o] : T(0);
              } else {
                t = dy.data[o] / T(8);
              }
            }
          }
  return dx;
}

template <class T>
struct BatchNormCache {
  std::vector<T> mean;
  std::vector<T> var;  // biased batch variance
  std::vector<T> invstd;
  HostTensor<T> xhat;
  Extent count = 0;
};

/// Per-channel statistics over N, D, H, W from (sum, sum of squares).
template <class T>
HostTensor<T> batchnorm_train(const HostTensor<T>& x, std::span<const T> gamma, std::span<const T> beta, double eps,
                              BatchNormCache<T>& cache) {
  const Shape5D& s = x.shape;
  require(gamma.size() == static_cast<std::size_t>(s.c) && beta.size() == gamma.size(), ErrorCode::kShapeMismatch,
          "batchnorm parameter size mismatch");
  const Extent m = s.n * s.voxels();
  cache.count = m;
  cache.mean.assign(static_cast<std::size_t>(s.c), T(0));
  cache.var.assign(static_cast<std::size_t>(s.c), T(0));
  cache.invstd.assign(static_cast<std::size_t>(s.c), T(0));
  cache.xhat = HostTensor<T>(s);
  HostTensor<T> y(s);
  for (Extent c = 0; c < s.c; ++c) {
    T s1 = T(0), s2 = T(0);
    for (Extent n = 0; n < s.n; ++n) {
      const T* p = &x.data[s.offset(n, c, 0, 0, 0)];
      for (Extent v = 0; v < s.voxels(); ++v) {
        s1 += p[v];
        s2 += p[v] * p[v];
      }
    }
    const T mean = s1 / T(m);
    const T var = std::max(T(0), s2 / T(m) - mean * mean);
    const T inv = T(1) / std::sqrt(var + T(eps));
    cache.mean[static_cast<std::size_t>(c)] = mean;
    cache.var[static_cast<std::size_t>(c)] = var;
    cache.invstd[static_cast<std::size_t>(c)] = inv;
    for (Extent n = 0; n < s.n; ++n) {
      const std::size_t base = s.offset(n, c, 0, 0, 0);
      for (Extent v = 0; v < s.voxels(); ++v) {
        const T xh = (x.data[base + v] - mean) * inv;
        cache.xhat.data[base + v] = xh;
        y.data[base + v] = gamma[static_cast<std::size_t>(c)] * xh + beta[static_cast<std::size_t>(c)];
      }
    }
  }
  return y;
}

template <class T>
HostTensor<T> batchnorm_eval(const HostTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                             std::span<const T> running_mean, std::span<const T> running_var, double eps) {
  const Shape5D& s = x.shape;
  HostTensor<T> y(s);
  for (Extent n = 0; n < s.n; ++n)
    for (Extent c = 0; c < s.c; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      const T inv = T(1) / std::sqrt(running_var[cc] + T(eps));
      const std::size_t base = s.offset(n, c, 0, 0, 0);
      for (Extent v = 0; v < s.voxels(); ++v) {
        y.data[base + v] = gamma[cc] * (x.data[base + v] - running_mean[cc]) * inv + beta[cc];
      }
    }
  return y;
}

template <class T>
struct BatchNormGrads {
  HostTensor<T> dx;
  std::vector<T> dgamma;
  std::vector<T> dbeta;
};

template <class T>
BatchNormGrads<T> batchnorm_bwd(const HostTensor<T>& dy, const BatchNormCache<T>& cache, std::span<const T> gamma) {
  const Shape5D& s = dy.shape;
  BatchNormGrads<T> g{HostTensor<T>(s), std::vector<T>(static_cast<std::size_t>(s.c)),
                      std::vector<T>(static_cast<std::size_t>(s.c))};
  const T m = T(cache.count);
  for (Extent c = 0; c < s.c; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    T sdy = T(0), sdyx = T(0);
    for (Extent n = 0; n < s.n; ++n) {
      const std::size_t base = s.offset(n, c, 0, 0, 0);
      for (Extent v = 0; v < s.voxels(); ++v) {
        sdy += dy.data[base + v];
        sdyx += dy.data[base + v] * cache.xhat.data[base + v];
      }
    }
    g.dgamma[cc] = sdyx;
    g.dbeta[cc] = sdy;
    const T scale = gamma[cc] * cache.invstd[cc];
    for (Extent n = 0; n < s.n; ++n) {
      const std::size_t base = s.offset(n, c, 0, 0, 0);
      for (Extent v = 0; v < s.voxels(); ++v) {
        g.dx.data[base + v] = scale * (dy.data[base + v] - sdy / m - cache.xhat.data[base + v] * (sdyx / m));
      }
    }
  }
  return g;
}

/// y = W x + b per sample, x flattened over (C, D, H, W). W is [out][in], then b.
template <class T>
HostTensor<T> fully_connected(const HostTensor<T>& x, std::span<const T> w, std::span<const T> b, Extent out) {
  const Extent in = x.shape.per_sample();
  require(w.size() == static_cast<std::size_t>(out * in) && b.size() == static_cast<std::size_t>(out),
          ErrorCode::kShapeMismatch, "fully_connected parameter size mismatch");
  HostTensor<T> y(Shape5D{x.shape.n, out, 1, 1, 1});
  for (Extent n = 0; n < x.shape.n; ++n)
    for (Extent o = 0; o < out; ++o) {
      T acc = T(0);
      for (Extent i = 0; i < in; ++i) acc += w[static_cast<std::size_t>(o * in + i)] * x.data[static_cast<std::size_t>(n * in + i)];
      y.data[static_cast<std::size_t>(n * out + o)] = acc + b[static_cast<std::size_t>(o)];
    }
  return y;
}

template <class T>
struct FcGrads {
  HostTensor<T> dx;
  std::vector<T> dw;
  std::vector<T> db;
};

template <class T>
FcGrads<T> fully_connected_bwd(const HostTensor<T>& x, const HostTensor<T>& dy, std::span<const T> w) {
  const Extent in = x.shape.per_sample();
  const Extent out = dy.shape.per_sample();
  require(dy.shape.n == x.shape.n && w.size() == static_cast<std::size_t>(in * out), ErrorCode::kShapeMismatch,
          "fully_connected_bwd shape mismatch");
  FcGrads<T> g{HostTensor<T>(x.shape), std::vector<T>(static_cast<std::size_t>(in * out)),
               std::vector<T>(static_cast<std::size_t>(out))};
  const Extent nb = x.shape.n;
  for (Extent n = 0; n < nb; ++n)
    for (Extent i = 0; i < in; ++i) {
      T acc = T(0);
      for (Extent o = 0; o < out; ++o) acc += w[static_cast<std::size_t>(o * in + i)] * dy.data[static_cast<std::size_t>(n * out + o)];
      g.dx.data[static_cast<std::size_t>(n * in + i)] = acc;
    }
  for (Extent o = 0; o < out; ++o) {
    for (Extent i = 0; i < in; ++i) {
      T acc = T(0);
      for (Extent n = 0; n < nb; ++n) acc += dy.data[static_cast<std::size_t>(n * out + o)] * x.data[static_cast<std::size_t>(n * in + i)];
      g.dw[static_cast<std::size_t>(o * in + i)] = acc;
    }
    T acc = T(0);
    for (Extent n = 0; n < nb; ++n) acc += dy.data[static_cast<std::size_t>(n * out + o)];
    g.db[static_cast<std::size_t>(o)] = acc;
  }
  return g;
}

template <class T>
HostTensor<T> leaky_relu(const HostTensor<T>& x, double slope) {
  HostTensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(slope) * x.data[i];
  return y;
}

template <class T>
HostTensor<T> leaky_relu_bwd(const HostTensor<T>& x, const HostTensor<T>& dy, double slope) {
  HostTensor<T> dx(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(slope) * dy.data[i];
  return dx;
}

/// Inverted dropout: kept elements are scaled by 1/keep. Eval mode is the identity.
/// `sample_ids[n]` is the dataset id of batch entry n.
template <class T>
HostTensor<T> dropout(const HostTensor<T>& x, double keep, Mode mode, const DropoutKey& key,
                      std::span<const std::int64_t> sample_ids) {
  if (mode == Mode::kEval) return x;
  require(sample_ids.size() == static_cast<std::size_t>(x.shape.n), ErrorCode::kShapeMismatch,
          "dropout: one sample id per batch entry required");
  HostTensor<T> y(x.shape);
  const Extent f = x.shape.per_sample();
  const T scale = T(1) / T(keep);
  for (Extent n = 0; n < x.shape.n; ++n)
    for (Extent i = 0; i < f; ++i) {
      const std::size_t o = static_cast<std::size_t>(n * f + i);
      y.data[o] = dropout_keep(key, static_cast<std::uint64_t>(sample_ids[static_cast<std::size_t>(n)]),
                               static_cast<std::uint64_t>(i), keep)
                      ? x.data[o] * scale
                      : T(0);
    }
  return y;
}

/// Dropout is linear in x for a fixed mask, so its backward is itself.
template <class T>
HostTensor<T> dropout_bwd(const HostTensor<T>& dy, double keep, Mode mode, const DropoutKey& key,
                          std::span<const std::int64_t> sample_ids) {
  return dropout<T>(dy, keep, mode, key, sample_ids);
}

template <class T>
HostTensor<T> concat_channels(const HostTensor<T>& a, const HostTensor<T>& b) {
  require(a.shape.n == b.shape.n && a.shape.voxels() == b.shape.voxels() && a.shape.d == b.shape.d &&
              a.shape.h == b.shape.h,
          ErrorCode::kShapeMismatch, "concat: spatial shapes differ " + to_string(a.shape) + " vs " + to_string(b.shape));
  Shape5D s = a.shape;
  s.c = a.shape.c + b.shape.c;
  HostTensor<T> y(s);
  const Extent v = s.voxels();
  for (Extent n = 0; n < s.n; ++n) {
    std::copy_n(&a.data[a.shape.offset(n, 0, 0, 0, 0)], a.shape.c * v, &y.data[s.offset(n, 0, 0, 0, 0)]);
    std::copy_n(&b.data[b.shape.offset(n, 0, 0, 0, 0)], b.shape.c * v, &y.data[s.offset(n, a.shape.c, 0, 0, 0)]);
  }
  return y;
}

/// Splits a channel-concatenated gradient back into its two parts.
template <class T>
std::pair<HostTensor<T>, HostTensor<T>> split_channels(const HostTensor<T>& y, Extent ca) {
  Shape5D sa = y.shape, sb = y.shape;
  sa.c = ca;
  sb.c = y.shape.c - ca;
  HostTensor<T> a(sa), b(sb);
  const Extent v = y.shape.voxels();
  for (Extent n = 0; n < y.shape.n; ++n) {
    std::copy_n(&y.data[y.shape.offset(n, 0, 0, 0, 0)], sa.c * v, &a.data[sa.offset(n, 0, 0, 0, 0)]);
    std::copy_n(&y.data[y.shape.offset(n, ca, 0, 0, 0)], sb.c * v, &b.data[sb.offset(n, 0, 0, 0, 0)]);
  }
  return {std::move(a), std::move(b)};
}

template <class T>
struct LossResult {
  T loss = T(0);
  HostTensor<T> grad;
};

/// Mean over all N * T entries of (pred - target)^2.
template <class T>
LossResult<T> mse_loss(const HostTensor<T>& pred, std::span<const T> target) {
  require(target.size() == pred.data.size(), ErrorCode::kShapeMismatch,
          "mse: " + std::to_string(pred.data.size()) + " predictions vs " + std::to_string(target.size()) + " targets");
  LossResult<T> r{T(0), HostTensor<T>(pred.shape)};
  const T count = T(pred.data.size());
  T acc = T(0);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const T d = pred.data[i] - target[i];
    acc += d * d;
    r.grad.data[i] = T(2) * d / count;
  }
  r.loss = acc / count;
  return r;
}

/// Per-voxel softmax cross-entropy over channels, averaged over all N*D*H*W voxels.
template <class T>
LossResult<T> cross_entropy(const HostTensor<T>& logits, std::span<const std::int32_t> labels) {
  const Shape5D& s = logits.shape;
  require(labels.size() == static_cast<std::size_t>(s.n * s.voxels()), ErrorCode::kShapeMismatch,
          "cross_entropy: label count does not match voxel count");
  LossResult<T> r{T(0), HostTensor<T>(s)};
  const T count = T(s.n * s.voxels());
  T acc = T(0);
  std::vector<T> z(static_cast<std::size_t>(s.c));
  for (Extent n = 0; n < s.n; ++n)
    for (Extent v = 0; v < s.voxels(); ++v) {
      const std::int32_t label = labels[static_cast<std::size_t>(n * s.voxels() + v)];
      require(label >= 0 && label < s.c, ErrorCode::kShapeMismatch, "cross_entropy: label out of range");
      T mx = logits.data[s.offset(n, 0, 0, 0, 0) + static_cast<std::size_t>(v)];
      for (Extent c = 0; c < s.c; ++c) {
        z[static_cast<std::size_t>(c)] = logits.data[s.offset(n, c, 0, 0, 0) + static_cast<std::size_t>(v)];
        mx = std::max(mx, z[static_cast<std::size_t>(c)]);
      }
      T se = T(0);
      for (Extent c = 0; c < s.c; ++c) se += std::exp(z[static_cast<std::size_t>(c)] - mx);
      const T lse = mx + std::log(se);
      acc += lse - z[static_cast<std::size_t>(label)];
      for (Extent c = 0; c < s.c; ++c) {
        const T pc = std::exp(z[static_cast<std::size_t>(c)] - lse);
        r.grad.data[s.offset(n, c, 0, 0, 0) + static_cast<std::size_t>(v)] = (pc - (c == label ? T(1) : T(0))) / count;
      }
    }
  r.loss = acc / count;
  return r;
}

}  // namespace hybridcnn::ref
