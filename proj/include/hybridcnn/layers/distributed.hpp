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

// Distributed layers. Every function here is collective over the ranks of
// its input's layout (plus the world for losses) and is called from inside
// Fabric::run with that rank's Comm.
//
// The local convolution kernels run on the padded halo block and accumulate
// every output in the same term order as the reference loops, so an
// unpartitioned run is bit-identical to the reference.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/fabric/collectives.hpp"
#include "hybridcnn/fabric/fabric.hpp"
#include "hybridcnn/layers/params.hpp"
#include "hybridcnn/layers/reference.hpp"
#include "hybridcnn/tensor/dist_tensor.hpp"

namespace hybridcnn::dist {

// ---------------------------------------------------------------------------
// Local kernels on dense blocks.
namespace kernel {

/// y = conv(xp) where xp is the input block padded by p.radii() on every side.
template <class T>
void conv_fwd(const T* xp, const Shape5D& ps, const T* w, const ConvParams& p, T* y, const Shape5D& ys) {
  const int K0 = p.kernel[0], K1 = p.kernel[1], K2 = p.kernel[2];
  const int s0 = p.stride[0], s1 = p.stride[1], s2 = p.stride[2];
  require(s0 * (ys.d - 1) + K0 <= ps.d && s1 * (ys.h - 1) + K1 <= ps.h && s2 * (ys.w - 1) + K2 <= ps.w,
          ErrorCode::kShapeMismatch, "conv: padded input " + to_string(ps) + " too small for output " + to_string(ys));
  const Extent plane = ys.h * ys.w;
  for (Extent n = 0; n < ys.n; ++n)
    for (Extent co = 0; co < ys.c; ++co)
      for (Extent od = 0; od < ys.d; ++od) {
        T* __restrict yp = y + ys.offset(n, co, od, 0, 0);
        std::fill(yp, yp + plane, T(0));
        for (Extent ci = 0; ci < ps.c; ++ci)
          for (int a = 0; a < K0; ++a)
            for (int b = 0; b < K1; ++b)
              for (int c = 0; c < K2; ++c) {
                const T wv = w[static_cast<std::size_t>(((co * ps.c + ci) * K0 + a) * K1 * K2 + b * K2 + c)];
                const T* xb = xp + ps.offset(n, ci, s0 * od + a, b, c);
                for (Extent oh = 0; oh < ys.h; ++oh) {
                  const T* __restrict xr = xb + s1 * oh * ps.w;
                  T* __restrict yr = yp + oh * ys.w;
                  if (s2 == 1) {
                    for (Extent ow = 0; ow < ys.w; ++ow) yr[ow] += wv * xr[ow];
                  } else {
                    for (Extent ow = 0; ow < ys.w; ++ow) yr[ow] += wv * xr[s2 * ow];
                  }
                }
              }
      }
}

/// dx = conv^T(dyp) where dyp is the output-gradient block padded by `pad`.
/// Terms are gathered per dx element in (co, kd, kh, kw) order.
template <class T>
void conv_bwd_data(const T* dyp, const Shape5D& ps, const std::array<int, 3>& pad, const T* w, const ConvParams& p,
                   T* dx, const Shape5D& xs) {
  const int K0 = p.kernel[0], K1 = p.kernel[1], K2 = p.kernel[2];
  const std::array<int, 3> r = p.radii();
  if (p.unit_stride()) {
    // dy index for input i and tap a is i + r - a (local), i.e. i + r + pad - a in the padded block.
    for (int k = 0; k < 3; ++k) {
      require(r[k] + pad[k] - (p.kernel[k] - 1) >= 0 && xs.spatial(k) - 1 + r[k] + pad[k] < ps.spatial(k),
              ErrorCode::kShapeMismatch, "conv bwd_data: gradient halo too narrow");
    }
    const Extent plane = xs.h * xs.w;
    for (Extent n = 0; n < xs.n; ++n)
      for (Extent ci = 0; ci < xs.c; ++ci)
        for (Extent id = 0; id < xs.d; ++id) {
          T* __restrict xp = dx + xs.offset(n, ci, id, 0, 0);
          std::fill(xp, xp + plane, T(0));
          for (Extent co = 0; co < ps.c; ++co)
            for (int a = 0; a < K0; ++a)
              for (int b = 0; b < K1; ++b)
                for (int c = 0; c < K2; ++c) {
                  const T wv = w[static_cast<std::size_t>(((co * xs.c + ci) * K0 + a) * K1 * K2 + b * K2 + c)];
                  const T* db = dyp + ps.offset(n, co, id + r[0] + pad[0] - a, r[1] + pad[1] - b, r[2] + pad[2] - c);
                  for (Extent ih = 0; ih < xs.h; ++ih) {
                    const T* __restrict dr = db + ih * ps.w;
                    T* __restrict xr = xp + ih * xs.w;
                    for (Extent iw = 0; iw < xs.w; ++iw) xr[iw] += wv * dr[iw];
                  }
                }
        }
    return;
  }
  // Strided: input i receives tap a from output (i + r - a) / s when divisible.
  // Local offsets are multiples of the stride, so local parity equals global parity.
  struct Tap {
    int a;
    Extent q;  // padded dy index
  };
  std::array<std::vector<std::vector<Tap>>, 3> taps;
  for (int k = 0; k < 3; ++k) {
    const int s = p.stride[k];
    taps[k].resize(static_cast<std::size_t>(xs.spatial(k)));
    for (Extent i = 0; i < xs.spatial(k); ++i) {
      for (int a = 0; a < p.kernel[k]; ++a) {
        const Extent t = i + r[k] - a;
        if (((t % s) + s) % s != 0) continue;
        const Extent q = (t >= 0 ? t / s : -((-t) / s)) + pad[k];
        require(q >= 0 && q < ps.spatial(k), ErrorCode::kShapeMismatch, "conv bwd_data: gradient halo too narrow");
        taps[k][static_cast<std::size_t>(i)].push_back({a, q});
      }
    }
  }
  for (Extent n = 0; n < xs.n; ++n)
    for (Extent ci = 0; ci < xs.c; ++ci)
      for (Extent id = 0; id < xs.d; ++id)
        for (Extent ih = 0; ih < xs.h; ++ih)
          for (Extent iw = 0; iw < xs.w; ++iw) {
            T acc = T(0);
            for (Extent co = 0; co < ps.c; ++co)
              for (const Tap& ta : taps[0][static_cast<std::size_t>(id)])
                for (const Tap& tb : taps[1][static_cast<std::size_t>(ih)])
                  for (const Tap& tc : taps[2][static_cast<std::size_t>(iw)]) {
                    acc += w[static_cast<std::size_t>(((co * xs.c + ci) * K0 + ta.a) * K1 * K2 + tb.a * K2 + tc.a)] *
                           dyp[ps.offset(n, co, ta.q, tb.q, tc.q)];
                  }
            dx[xs.offset(n, ci, id, ih, iw)] = acc;
          }
}

/// Local weight-gradient partial from the padded input block and the local dy.
/// Each dw element sums its terms in (n, od, oh, ow) order; the inner loop runs
/// over output channels so it vectorises without reassociating any sum.
template <class T>
std::vector<T> conv_bwd_filter(const T* xp, const Shape5D& ps, const T* dy, const Shape5D& ys, const ConvParams& p) {
  const int K0 = p.kernel[0], K1 = p.kernel[1], K2 = p.kernel[2];
  const int s0 = p.stride[0], s1 = p.stride[1], s2 = p.stride[2];
  const Extent CO = ys.c, CI = ps.c, taps = p.taps();
  std::vector<T> dwt(static_cast<std::size_t>(CI * taps * CO), T(0));  // [ci][tap][co]
  std::vector<T> dyt(static_cast<std::size_t>(ys.voxels() * CO));     // [voxel][co]
  for (Extent n = 0; n < ys.n; ++n) {
    for (Extent co = 0; co < CO; ++co) {
      const T* src = dy + ys.offset(n, co, 0, 0, 0);
      for (Extent v = 0; v < ys.voxels(); ++v) dyt[static_cast<std::size_t>(v * CO + co)] = src[v];
    }
    for (Extent od = 0; od < ys.d; ++od)
      for (Extent oh = 0; oh < ys.h; ++oh)
        for (Extent ow = 0; ow < ys.w; ++ow) {
          const T* __restrict g = dyt.data() + ((od * ys.h + oh) * ys.w + ow) * CO;
          for (Extent ci = 0; ci < CI; ++ci) {
            const T* xb = xp + ps.offset(n, ci, s0 * od, s1 * oh, s2 * ow);
            T* dci = dwt.data() + ci * taps * CO;
            for (int a = 0; a < K0; ++a)
              for (int b = 0; b < K1; ++b)
                for (int c = 0; c < K2; ++c) {
                  const T xv = xb[(a * ps.h + b) * ps.w + c];
                  T* __restrict d = dci + ((a * K1 + b) * K2 + c) * CO;
                  for (Extent co = 0; co < CO; ++co) d[co] += xv * g[co];
                }
          }
        }
  }
  std::vector<T> dw(static_cast<std::size_t>(p.weight_count()));
  for (Extent co = 0; co < CO; ++co)
    for (Extent ci = 0; ci < CI; ++ci)
      for (Extent t = 0; t < taps; ++t)
        dw[static_cast<std::size_t>((co * CI + ci) * taps + t)] = dwt[static_cast<std::size_t>((ci * taps + t) * CO + co)];
  return dw;
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Helpers.

inline std::vector<int> group_of(const DistTensorMeta& meta) { return meta.layout.fabric_ranks(); }

inline std::vector<int> world_of(const Comm& comm) {
  std::vector<int> g(static_cast<std::size_t>(comm.size()));
  for (int r = 0; r < comm.size(); ++r) g[static_cast<std::size_t>(r)] = r;
  return g;
}

template <class T>
HostTensor<T> local_host(const DistTensor<T>& t) {
  return HostTensor<T>(t.local_shape(), t.data);
}

template <class T>
DistTensor<T> from_local(const DistTensorMeta& meta, int layout_rank, HostTensor<T>&& h) {
  DistTensor<T> t;
  t.meta = meta;
  t.rank = layout_rank;
  if (t.member()) {
    require(h.shape == t.local_shape(), ErrorCode::kShapeMismatch, "local result does not match its meta");
    t.data = std::move(h.data);
  }
  return t;
}

/// Fills the halo block of `x` for radii `r` (exchanging only when a
/// partitioned dimension has a nonzero radius).
template <class T>
void ensure_halo(Comm& comm, DistTensor<T>& x, const std::array<int, 3>& r) {
  if (x.meta.radii == r && !x.halo.empty()) return;
  x.meta.radii = r;
  if (!x.member()) return;
  halo_exchange(comm, x);
}

inline void check_stride_partition(const DistTensorMeta& in, const ConvParams& p, const std::string& what) {
  static constexpr const char* kNames[3] = {"depth", "height", "width"};
  for (int k = 0; k < 3; ++k) {
    if (in.grid().parts(k) == 1) continue;
    require(in.local_extent(k) % p.stride[k] == 0, ErrorCode::kNonDivisible,
            what + ": local " + kNames[k] + " " + std::to_string(in.local_extent(k)) + " not divisible by stride " +
                std::to_string(p.stride[k]));
    require(p.radius(k) <= in.local_extent(k), ErrorCode::kNonDivisible,
            what + ": local " + std::string(kNames[k]) + " " + std::to_string(in.local_extent(k)) +
                " smaller than the halo radius");
  }
}

inline DistTensorMeta conv_out_meta(const DistTensorMeta& in, const ConvParams& p) {
  require(in.global.c == p.cin, ErrorCode::kShapeMismatch,
          "conv input has " + std::to_string(in.global.c) + " channels, expected " + std::to_string(p.cin));
  check_stride_partition(in, p, "conv");
  const Shape5D out = p.out_shape(in.global);
  check_partition(out, in.grid(), "conv output");
  return DistTensorMeta{out, in.layout, {0, 0, 0}};
}

// ---------------------------------------------------------------------------
// Convolution.

/// Forward. Exchanges x's halo (kept in x.halo for the backward-filter pass).
template <class T>
DistTensor<T> conv3d(Comm& comm, DistTensor<T>& x, std::span<const T> w, const ConvParams& p) {
  require(w.size() == static_cast<std::size_t>(p.weight_count()), ErrorCode::kShapeMismatch,
          "conv weights have " + std::to_string(w.size()) + " elements, expected " + std::to_string(p.weight_count()));
  const DistTensorMeta om = conv_out_meta(x.meta, p);
  ensure_halo(comm, x, p.radii());
  DistTensor<T> y = make_local<T>(om, comm.rank());
  if (!y.member()) return y;
  kernel::conv_fwd(x.halo.data(), x.padded_shape(), w.data(), p, y.data.data(), y.local_shape());
  return y;
}

/// Backward-data. `in_meta` is the forward input's meta.
template <class T>
DistTensor<T> conv3d_bwd_data(Comm& comm, DistTensor<T>& dy, std::span<const T> w, const ConvParams& p,
                              const DistTensorMeta& in_meta) {
  require(dy.meta.global == p.out_shape(in_meta.global), ErrorCode::kShapeMismatch,
          "conv bwd_data: dy " + to_string(dy.meta.global) + " does not match output of " + to_string(in_meta.global));
  const std::array<int, 3> pad = p.radii();
  ensure_halo(comm, dy, pad);
  DistTensor<T> dx = make_local<T>(DistTensorMeta{in_meta.global, in_meta.layout, {0, 0, 0}}, comm.rank());
  if (!dx.member()) return dx;
  kernel::conv_bwd_data(dy.halo.data(), dy.padded_shape(), pad, w.data(), p, dx.data.data(), dx.local_shape());
  return dx;
}

/// Local weight-gradient partial. `x` must carry the forward halo.
template <class T>
std::vector<T> conv3d_bwd_filter_local(Comm& comm, DistTensor<T>& x, const DistTensor<T>& dy, const ConvParams& p) {
  ensure_halo(comm, x, p.radii());
  if (!x.member()) return std::vector<T>(static_cast<std::size_t>(p.weight_count()), T(0));
  return kernel::conv_bwd_filter(x.halo.data(), x.padded_shape(), dy.data.data(), dy.local_shape(), p);
}

/// Weight gradient summed over every rank of the layout.
template <class T>
std::vector<T> conv3d_bwd_filter(Comm& comm, DistTensor<T>& x, const DistTensor<T>& dy, const ConvParams& p) {
  auto dw = conv3d_bwd_filter_local(comm, x, dy, p);
  if (x.member()) allreduce_sum(comm, dw, group_of(x.meta));
  return dw;
}

// ---------------------------------------------------------------------------
// Transposed convolution (adjoint of p.as_conv()).

template <class T>
DistTensor<T> deconv3d(Comm& comm, DistTensor<T>& x, std::span<const T> w, const DeconvParams& p) {
  require(x.meta.global.c == p.cin, ErrorCode::kShapeMismatch, "deconv input channel mismatch");
  require(w.size() == static_cast<std::size_t>(p.weight_count()), ErrorCode::kShapeMismatch,
          "deconv weight count mismatch");
  const Shape5D out = p.out_shape(x.meta.global);
  check_partition(out, x.grid(), "deconv output");
  return conv3d_bwd_data(comm, x, w, p.as_conv(), DistTensorMeta{out, x.meta.layout, {0, 0, 0}});
}

template <class T>
DistTensor<T> deconv3d_bwd_data(Comm& comm, DistTensor<T>& dy, std::span<const T> w, const DeconvParams& p) {
  return conv3d(comm, dy, w, p.as_conv());
}

/// Local weight-gradient partial; dy plays the convolution's input.
template <class T>
std::vector<T> deconv3d_bwd_filter_local(Comm& comm, const DistTensor<T>& x, DistTensor<T>& dy, const DeconvParams& p) {
  return conv3d_bwd_filter_local(comm, dy, x, p.as_conv());
}

template <class T>
std::vector<T> deconv3d_bwd_filter(Comm& comm, const DistTensor<T>& x, DistTensor<T>& dy, const DeconvParams& p) {
  auto dw = deconv3d_bwd_filter_local(comm, x, dy, p);
  if (x.member()) allreduce_sum(comm, dw, group_of(x.meta));
  return dw;
}

// ---------------------------------------------------------------------------
// Pooling: windows never straddle ranks when local extents are even.

inline void check_pool_partition(const DistTensorMeta& m) {
  static constexpr const char* kNames[3] = {"depth", "height", "width"};
  for (int k = 0; k < 3; ++k) {
    require(m.local_extent(k) % 2 == 0, ErrorCode::kNonDivisible,
            std::string("pool: local ") + kNames[k] + " " + std::to_string(m.local_extent(k)) + " is odd");
  }
}

template <class T>
struct PoolResult {
  DistTensor<T> y;
  std::vector<std::uint8_t> argmax;
};

template <class T>
PoolResult<T> pool3d(Comm& comm, const DistTensor<T>& x, PoolType type) {
  check_pool_partition(x.meta);
  const DistTensorMeta om{pool_out_shape(x.meta.global), x.meta.layout, {0, 0, 0}};
  if (!x.member()) return {make_local<T>(om, comm.rank()), {}};
  auto r = ref::pool3d(local_host(x), type);
  return {from_local(om, x.rank, std::move(r.y)), std::move(r.argmax)};
}

template <class T>
DistTensor<T> pool3d_bwd(Comm& comm, const DistTensor<T>& dy, PoolType type, const DistTensorMeta& in_meta,
                         std::span<const std::uint8_t> argmax) {
  const DistTensorMeta im{in_meta.global, in_meta.layout, {0, 0, 0}};
  if (!dy.member()) return make_local<T>(im, comm.rank());
  return from_local(im, dy.rank, ref::pool3d_bwd(local_host(dy), type, im.local_shape(dy.rank), argmax));
}

// ---------------------------------------------------------------------------
// Batch normalisation with statistics over every rank of the layout.

template <class T>
struct BatchNormCache {
  std::vector<T> mean;
  std::vector<T> var;  // biased batch variance
  std::vector<T> invstd;
  std::vector<T> xhat;
  Extent count = 0;
};

template <class T>
DistTensor<T> batchnorm_train(Comm& comm, const DistTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                              double eps, BatchNormCache<T>& cache) {
  const Shape5D& g = x.meta.global;
  const auto C = static_cast<std::size_t>(g.c);
  require(gamma.size() == C && beta.size() == C, ErrorCode::kShapeMismatch, "batchnorm parameter size mismatch");
  DistTensor<T> y = make_local<T>(DistTensorMeta{g, x.meta.layout, {0, 0, 0}}, comm.rank());
  if (!x.member()) return y;
  const Shape5D s = x.local_shape();
  std::vector<T> sums(2 * C, T(0));
  for (Extent c = 0; c < s.c; ++c) {
    T s1 = T(0), s2 = T(0);
    for (Extent n = 0; n < s.n; ++n) {
      const T* p = &x.data[s.offset(n, c, 0, 0, 0)];
      for (Extent v = 0; v < s.voxels(); ++v) {
        s1 += p[v];
        s2 += p[v] * p[v];
      }
    }
    sums[static_cast<std::size_t>(c)] = s1;
    sums[C + static_cast<std::size_t>(c)] = s2;
  }
  allreduce_sum(comm, sums, group_of(x.meta));
  const Extent m = g.n * g.voxels();
  cache.count = m;
  cache.mean.assign(C, T(0));
  cache.var.assign(C, T(0));
  cache.invstd.assign(C, T(0));
  cache.xhat.assign(x.data.size(), T(0));
  for (std::size_t c = 0; c < C; ++c) {
    const T mean = sums[c] / T(m);
    const T var = std::max(T(0), sums[C + c] / T(m) - mean * mean);
    cache.mean[c] = mean;
    cache.var[c] = var;
    cache.invstd[c] = T(1) / std::sqrt(var + T(eps));
  }
  for (Extent n = 0; n < s.n; ++n)
    for (Extent c = 0; c < s.c; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      const std::size_t base = s.offset(n, c, 0, 0, 0);
      for (Extent v = 0; v < s.voxels(); ++v) {
        const T xh = (x.data[base + v] - cache.mean[cc]) * cache.invstd[cc];
        cache.xhat[base + v] = xh;
        y.data[base + v] = gamma[cc] * xh + beta[cc];
      }
    }
  return y;
}

template <class T>
DistTensor<T> batchnorm_eval(Comm& comm, const DistTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                             std::span<const T> running_mean, std::span<const T> running_var, double eps) {
  const DistTensorMeta om{x.meta.global, x.meta.layout, {0, 0, 0}};
  if (!x.member()) return make_local<T>(om, comm.rank());
  return from_local(om, x.rank, ref::batchnorm_eval(local_host(x), gamma, beta, running_mean, running_var, eps));
}

template <class T>
struct BatchNormGrads {
  DistTensor<T> dx;
  std::vector<T> dgamma;  // local partial
  std::vector<T> dbeta;   // local partial
};

template <class T>
BatchNormGrads<T> batchnorm_bwd(Comm& comm, const DistTensor<T>& dy, const BatchNormCache<T>& cache,
                                std::span<const T> gamma) {
  const Shape5D& g = dy.meta.global;
  const auto C = static_cast<std::size_t>(g.c);
  BatchNormGrads<T> out{make_local<T>(DistTensorMeta{g, dy.meta.layout, {0, 0, 0}}, comm.rank()),
                        std::vector<T>(C, T(0)), std::vector<T>(C, T(0))};
  if (!dy.member()) return out;
  const Shape5D s = dy.local_shape();
  std::vector<T> sums(2 * C, T(0));
  for (Extent c = 0; c < s.c; ++c) {
    T sdy = T(0), sdyx = T(0);
    for (Extent n = 0; n < s.n; ++n) {
      const std::size_t base = s.offset(n, c, 0, 0, 0);
      for (Extent v = 0; v < s.voxels(); ++v) {
        sdy += dy.data[base + v];
        sdyx += dy.data[base + v] * cache.xhat[base + v];
      }
    }
    sums[static_cast<std::size_t>(c)] = sdy;
    sums[C + static_cast<std::size_t>(c)] = sdyx;
  }
  std::copy(sums.begin(), sums.begin() + static_cast<std::ptrdiff_t>(C), out.dbeta.begin());
  std::copy(sums.begin() + static_cast<std::ptrdiff_t>(C), sums.end(), out.dgamma.begin());
  allreduce_sum(comm, sums, group_of(dy.meta));
  const T m = T(cache.count);
  for (Extent n = 0; n < s.n; ++n)
    for (Extent c = 0; c < s.c; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      const T scale = gamma[cc] * cache.invstd[cc];
      const std::size_t base = s.offset(n, c, 0, 0, 0);
      for (Extent v = 0; v < s.voxels(); ++v) {
        out.dx.data[base + v] = scale * (dy.data[base + v] - sums[cc] / m - cache.xhat[base + v] * (sums[C + cc] / m));
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Sample-local layers.

/// Requires an unpartitioned spatial layout (every member holds whole samples).
template <class T>
DistTensor<T> fully_connected(Comm& comm, const DistTensor<T>& x, std::span<const T> w, std::span<const T> b,
                              Extent out) {
  require(x.grid().spatial_size() == 1, ErrorCode::kShapeMismatch,
          "fully_connected needs a sample-parallel layout, got grid " + to_string(x.grid()));
  const DistTensorMeta om{Shape5D{x.meta.global.n, out, 1, 1, 1}, x.meta.layout, {0, 0, 0}};
  if (!x.member()) return make_local<T>(om, comm.rank());
  return from_local(om, x.rank, ref::fully_connected(local_host(x), w, b, out));
}

template <class T>
struct FcGrads {
  DistTensor<T> dx;
  std::vector<T> dw;  // local partial
  std::vector<T> db;  // local partial
};

template <class T>
FcGrads<T> fully_connected_bwd(Comm& comm, const DistTensor<T>& x, const DistTensor<T>& dy, std::span<const T> w) {
  const Extent in = x.meta.global.per_sample();
  const Extent out = dy.meta.global.per_sample();
  if (!x.member()) {
    return {make_local<T>(DistTensorMeta{x.meta.global, x.meta.layout, {0, 0, 0}}, comm.rank()),
            std::vector<T>(static_cast<std::size_t>(in * out), T(0)), std::vector<T>(static_cast<std::size_t>(out), T(0))};
  }
  auto g = ref::fully_connected_bwd(local_host(x), local_host(dy), w);
  return {from_local(DistTensorMeta{x.meta.global, x.meta.layout, {0, 0, 0}}, x.rank, std::move(g.dx)),
          std::move(g.dw), std::move(g.db)};
}

template <class T>
DistTensor<T> leaky_relu(const DistTensor<T>& x, double slope) {
  DistTensor<T> y{DistTensorMeta{x.meta.global, x.meta.layout, {0, 0, 0}}, x.rank, x.data, {}};
  for (auto& v : y.data) v = v > T(0) ? v : T(slope) * v;
  return y;
}

template <class T>
DistTensor<T> leaky_relu_bwd(const DistTensor<T>& x, const DistTensor<T>& dy, double slope) {
  DistTensor<T> dx{DistTensorMeta{x.meta.global, x.meta.layout, {0, 0, 0}}, x.rank, dy.data, {}};
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(slope) * dy.data[i];
  return dx;
}

/// Inverted dropout keyed on the global (sample id, c, d, h, w) coordinate.
/// `sample_ids` covers the whole global batch.
template <class T>
DistTensor<T> dropout(const DistTensor<T>& x, double keep, Mode mode, const DropoutKey& key,
                      std::span<const std::int64_t> sample_ids) {
  DistTensor<T> y{DistTensorMeta{x.meta.global, x.meta.layout, {0, 0, 0}}, x.rank, x.data, {}};
  if (mode == Mode::kEval || !x.member()) return y;
  require(sample_ids.size() == static_cast<std::size_t>(x.meta.global.n), ErrorCode::kShapeMismatch,
          "dropout: one sample id per batch entry required");
  const Shape5D& g = x.meta.global;
  const Shape5D s = x.local_shape();
  const Interval ns = x.samples();
  const auto o = x.origin();
  const T scale = T(1) / T(keep);
  for (Extent n = 0; n < s.n; ++n) {
    const auto id = static_cast<std::uint64_t>(sample_ids[static_cast<std::size_t>(ns.offset + n)]);
    for (Extent c = 0; c < s.c; ++c)
      for (Extent d = 0; d < s.d; ++d)
        for (Extent h = 0; h < s.h; ++h)
          for (Extent w = 0; w < s.w; ++w) {
            const auto f = static_cast<std::uint64_t>(((c * g.d + o[0] + d) * g.h + o[1] + h) * g.w + o[2] + w);
            T& v = y.data[s.offset(n, c, d, h, w)];
            v = dropout_keep(key, id, f, keep) ? v * scale : T(0);
          }
  }
  return y;
}

template <class T>
DistTensor<T> dropout_bwd(const DistTensor<T>& dy, double keep, Mode mode, const DropoutKey& key,
                          std::span<const std::int64_t> sample_ids) {
  return dropout(dy, keep, mode, key, sample_ids);
}

template <class T>
DistTensor<T> concat_channels(const DistTensor<T>& a, const DistTensor<T>& b) {
  require(a.meta.layout == b.meta.layout && a.meta.global.n == b.meta.global.n && a.meta.global.d == b.meta.global.d &&
              a.meta.global.h == b.meta.global.h && a.meta.global.w == b.meta.global.w,
          ErrorCode::kShapeMismatch, "concat: operands are not identically partitioned");
  Shape5D g = a.meta.global;
  g.c += b.meta.global.c;
  const DistTensorMeta om{g, a.meta.layout, {0, 0, 0}};
  if (!a.member()) return DistTensor<T>{om, -1, {}, {}};
  return from_local(om, a.rank, ref::concat_channels(local_host(a), local_host(b)));
}

template <class T>
std::pair<DistTensor<T>, DistTensor<T>> split_channels(const DistTensor<T>& y, Extent ca) {
  Shape5D ga = y.meta.global, gb = y.meta.global;
  ga.c = ca;
  gb.c -= ca;
  const DistTensorMeta ma{ga, y.meta.layout, {0, 0, 0}}, mb{gb, y.meta.layout, {0, 0, 0}};
  if (!y.member()) return {DistTensor<T>{ma, -1, {}, {}}, DistTensor<T>{mb, -1, {}, {}}};
  auto [a, b] = ref::split_channels(local_host(y), ca);
  return {from_local(ma, y.rank, std::move(a)), from_local(mb, y.rank, std::move(b))};
}

// ---------------------------------------------------------------------------
// Losses. The loss value is summed over the whole world so every rank holds it.

template <class T>
struct LossResult {
  T loss = T(0);
  DistTensor<T> grad;
};

/// `target` holds the whole batch's targets, row-major [N][per-sample].
template <class T>
LossResult<T> mse_loss(Comm& comm, const DistTensor<T>& pred, std::span<const T> target) {
  const Shape5D& g = pred.meta.global;
  require(target.size() == static_cast<std::size_t>(g.elements()), ErrorCode::kShapeMismatch,
          "mse: " + std::to_string(g.elements()) + " predictions vs " + std::to_string(target.size()) + " targets");
  require(pred.grid().spatial_size() == 1, ErrorCode::kShapeMismatch, "mse needs a sample-parallel layout");
  LossResult<T> r{T(0), make_local<T>(DistTensorMeta{g, pred.meta.layout, {0, 0, 0}}, comm.rank())};
  const T count = T(g.elements());
  std::vector<T> acc(1, T(0));
  if (pred.member()) {
    const std::size_t base = static_cast<std::size_t>(pred.samples().offset * g.per_sample());
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const T d = pred.data[i] - target[base + i];
      acc[0] += d * d;
      r.grad.data[i] = T(2) * d / count;
    }
  }
  allreduce_sum(comm, acc, world_of(comm));
  r.loss = acc[0] / count;
  return r;
}

/// `labels` are the local voxels' class ids, laid out like the local block without channels.
template <class T>
LossResult<T> cross_entropy(Comm& comm, const DistTensor<T>& logits, std::span<const std::int32_t> labels) {
  const Shape5D& g = logits.meta.global;
  LossResult<T> r{T(0), make_local<T>(DistTensorMeta{g, logits.meta.layout, {0, 0, 0}}, comm.rank())};
  const T count = T(g.n * g.voxels());
  std::vector<T> acc(1, T(0));
  if (logits.member()) {
    const Shape5D s = logits.local_shape();
    require(labels.size() == static_cast<std::size_t>(s.n * s.voxels()), ErrorCode::kShapeMismatch,
            "cross_entropy: label count does not match local voxel count");
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
        acc[0] += lse - z[static_cast<std::size_t>(label)];
        for (Extent c = 0; c < s.c; ++c) {
          const T pc = std::exp(z[static_cast<std::size_t>(c)] - lse);
          r.grad.data[s.offset(n, c, 0, 0, 0) + static_cast<std::size_t>(v)] =
              (pc - (c == label ? T(1) : T(0))) / count;
        }
      }
  }
  allreduce_sum(comm, acc, world_of(comm));
  r.loss = acc[0] / count;
  return r;
}

// ---------------------------------------------------------------------------
// Redistribution between layouts of the same global tensor.

/// Moves every voxel to its owner under `target`. Each (source, destination)
/// pair exchanges at most one message; same-rank overlaps are copied locally.
template <class T>
DistTensor<T> redistribute(Comm& comm, const DistTensor<T>& x, const DistTensorMeta& target) {
  require(x.meta.global == target.global, ErrorCode::kShapeMismatch,
          "redistribute: shapes differ " + to_string(x.meta.global) + " vs " + to_string(target.global));
  const int me = comm.rank();
  DistTensor<T> out = make_local<T>(DistTensorMeta{target.global, target.layout, {0, 0, 0}}, me);
  if (x.meta.layout == target.layout) {
    out.data = x.data;
    return out;
  }
  const DistTensorMeta& tm = out.meta;
  const Extent C = x.meta.global.c;
  auto box_shape = [C](const Interval& ns, const Region& box) {
    return Shape5D{ns.extent, C, box.dims[0].extent, box.dims[1].extent, box.dims[2].extent};
  };
  auto box_origin = [](const Region& box) {
    return std::array<Extent, 3>{box.dims[0].offset, box.dims[1].offset, box.dims[2].offset};
  };
  if (x.member()) {
    for (int d = 0; d < tm.size(); ++d) {
      const int dst = tm.layout.fabric_rank(d);
      if (dst == me) continue;
      const Region box = intersect(x.region(), tm.region(d));
      const Interval ns = intersect(x.samples(), tm.samples(d));
      if (box.empty() || ns.empty()) continue;
      const Shape5D bs = box_shape(ns, box);
      std::vector<T> buf(static_cast<std::size_t>(bs.elements()));
      copy_box(x.data.data(), x.local_shape(), x.origin(), ns.offset - x.samples().offset, buf.data(), bs,
               box_origin(box), 0, box, ns.extent);
      comm.send_values<T>(dst, tags::kRedistribute, std::span<const T>(buf), TrafficKind::kRedistribute);
    }
  }
  if (out.member()) {
    for (int s = 0; s < x.meta.size(); ++s) {
      const int src = x.meta.layout.fabric_rank(s);
      const Region box = intersect(x.meta.region(s), out.region());
      const Interval ns = intersect(x.meta.samples(s), out.samples());
      if (box.empty() || ns.empty()) continue;
      if (src == me) {
        copy_box(x.data.data(), x.local_shape(), x.origin(), ns.offset - x.samples().offset, out.data.data(),
                 out.local_shape(), out.origin(), ns.offset - out.samples().offset, box, ns.extent);
        continue;
      }
      const Shape5D bs = box_shape(ns, box);
      auto buf = comm.recv_values<T>(src, tags::kRedistribute);
      require(buf.size() == static_cast<std::size_t>(bs.elements()), ErrorCode::kShapeMismatch,
              "redistribute: received block of unexpected size");
      copy_box(buf.data(), bs, box_origin(box), 0, out.data.data(), out.local_shape(), out.origin(),
               ns.offset - out.samples().offset, box, ns.extent);
    }
  }
  return out;
}

}  // namespace hybridcnn::dist
