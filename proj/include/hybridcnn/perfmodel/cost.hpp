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


// Per-layer iteration cost from kernel timings and communication models.
//
// Only convolution, deconvolution, pooling and batch normalization are
// costed; other layers are treated as free. For a stencil layer on a local
// output domain D:
//
//   FP = max(Comp(D_main), sum_d 2 * SR(halo_d)) + Comp(D_halo)
//
// where D_halo is the shell of thickness ceil(r / s) on each face shared
// with a neighbour (two faces when a dimension has three or more parts,
// otherwise one), D_main the rest, and halo_d the slab received across one
// face of dimension d. BD uses the same split with the output-gradient slab;
// BF reuses the forward halos and so only computes.
//
//   Cost = sum FP + max(sum (BD + BF), sum AR(theta))

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hybridcnn/errors.hpp"
#include "hybridcnn/layers/flops.hpp"
#include "hybridcnn/model/network.hpp"
#include "hybridcnn/perfmodel/fit.hpp"

namespace hybridcnn::perf {

enum class Phase { kFwd, kBwdData, kBwdFilter };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::kFwd: return "fwd";
    case Phase::kBwdData: return "bwd_data";
    case Phase::kBwdFilter: return "bwd_filter";
  }
  return "?";
}

inline std::optional<Phase> parse_phase(const std::string& s) {
  if (s == "fwd") return Phase::kFwd;
  if (s == "bwd_data") return Phase::kBwdData;
  if (s == "bwd_filter") return Phase::kBwdFilter;
  return std::nullopt;
}

/// `kind` is a layer name (most specific) or a layer kind such as "conv".
/// `shape` is the layer's local output domain.
struct KernelEntry {
  std::string kind;
  Phase phase = Phase::kFwd;
  Shape5D shape;
  double seconds = 0;
};

class KernelTimeTable {
 public:
  void add(KernelEntry e) {
    require(e.seconds > 0 && std::isfinite(e.seconds), ErrorCode::kConfigError,
            "kernel time for " + e.kind + " must be positive");
    for (const auto& o : entries_) {
      require(!(o.kind == e.kind && o.phase == e.phase && o.shape == e.shape), ErrorCode::kConfigError,
              "duplicate kernel entry " + e.kind + " " + to_string(e.phase) + " " + hybridcnn::to_string(e.shape));
    }
    entries_.push_back(std::move(e));
  }
  const std::vector<KernelEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<KernelEntry> entries_;
};

inline KernelTimeTable parse_kernel_table(std::istream& in, const std::string& source = "<kernels>") {
  KernelTimeTable t;
  std::string line;
  int lineno = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (!seen_header) {
      require(line == "kind,phase,n,c,d,h,w,seconds", ErrorCode::kParseError,
              where + "expected header 'kind,phase,n,c,d,h,w,seconds'");
      seen_header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    require(cells.size() == 8, ErrorCode::kParseError,
            where + "expected 8 fields, got " + std::to_string(cells.size()));
    KernelEntry e;
    e.kind = cells[0];
    require(!e.kind.empty(), ErrorCode::kParseError, where + "empty kind");
    const auto ph = parse_phase(cells[1]);
    require(ph.has_value(), ErrorCode::kParseError, where + "unknown phase '" + cells[1] + "'");
    e.phase = *ph;
    std::array<Extent, 5> dims{};
    for (int i = 0; i < 5; ++i) {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(cells[static_cast<std::size_t>(2 + i)], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used > 0 && used == cells[static_cast<std::size_t>(2 + i)].size() && v >= 1, ErrorCode::kParseError,
              where + "bad extent '" + cells[static_cast<std::size_t>(2 + i)] + "'");
      dims[static_cast<std::size_t>(i)] = v;
    }
    e.shape = Shape5D{dims[0], dims[1], dims[2], dims[3], dims[4]};
    std::size_t used = 0;
    try {
      e.seconds = std::stod(cells[7], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used > 0 && used == cells[7].size() && e.seconds > 0, ErrorCode::kParseError,
            where + "bad time '" + cells[7] + "'");
    try {
      t.add(std::move(e));
    } catch (const Error& err) {
      fail(ErrorCode::kParseError, where + err.detail());
    }
  }
  require(seen_header, ErrorCode::kParseError, source + ": missing header");
  return t;
}

inline KernelTimeTable read_kernel_table(const std::filesystem::path& p) {
  std::ifstream in(p);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open " + p.string());
  return parse_kernel_table(in, p.string());
}

inline void write_kernel_table(std::ostream& out, const KernelTimeTable& t) {
  out << "kind,phase,n,c,d,h,w,seconds\n";
  char buf[64];
  for (const auto& e : t.entries()) {
    std::snprintf(buf, sizeof buf, "%.17g", e.seconds);
    out << e.kind << ',' << to_string(e.phase) << ',' << e.shape.n << ',' << e.shape.c << ',' << e.shape.d << ','
        << e.shape.h << ',' << e.shape.w << ',' << buf << '\n';
  }
}

struct CompTime {
  double seconds = 0;
  bool exact = false;
  bool extrapolated = false;
};

/// Time for `voxels` output voxels (n * d * h * w) with `channels` output
/// channels. Keys are tried in order; the first with usable rows wins.
inline CompTime comp_time_voxels(const KernelTimeTable& table, const std::vector<std::string>& keys, Phase phase,
                                 Extent channels, double voxels) {
  require(!table.empty(), ErrorCode::kNoComparableEntry, "kernel table is empty");
  if (voxels <= 0) return CompTime{0, true, false};
  for (const auto& key : keys) {
    const KernelEntry* lo = nullptr;
    const KernelEntry* hi = nullptr;
    auto vox = [](const KernelEntry& e) { return static_cast<double>(e.shape.n * e.shape.voxels()); };
    for (const auto& e : table.entries()) {
      if (e.kind != key || e.phase != phase || e.shape.c != channels) continue;
      const double v = vox(e);
      if (v == voxels) return CompTime{e.seconds, false, false};
      if (v < voxels && (!lo || v > vox(*lo))) lo = &e;
      if (v > voxels && (!hi || v < vox(*hi))) hi = &e;
    }
    if (lo && hi) {
      const double f = (voxels - vox(*lo)) / (vox(*hi) - vox(*lo));
      return CompTime{lo->seconds + (hi->seconds - lo->seconds) * f, false, false};
    }
    if (lo || hi) {
      const KernelEntry& e = lo ? *lo : *hi;
      return CompTime{e.seconds * (voxels / vox(e)), false, true};
    }
  }
  std::string names;
  for (const auto& k : keys) names += (names.empty() ? "" : "|") + k;
  fail(ErrorCode::kNoComparableEntry, "no " + to_string(phase) + " entry for " + names + " with " +
                                          std::to_string(channels) + " channels");
}

/// Exact key lookup on `domain`, else interpolation by voxel count.
inline CompTime comp_time(const KernelTimeTable& table, const std::vector<std::string>& keys, Phase phase,
                          const Shape5D& domain) {
  require(!table.empty(), ErrorCode::kNoComparableEntry, "kernel table is empty");
  for (const auto& key : keys) {
    for (const auto& e : table.entries()) {
      if (e.kind == key && e.phase == phase && e.shape == domain) return CompTime{e.seconds, true, false};
    }
  }
  return comp_time_voxels(table, keys, phase, domain.c, static_cast<double>(domain.n * domain.voxels()));
}

/// max(main, comm) + halo.
inline double stencil_cost(double comp_main, double comm, double comp_halo) {
  return std::max(comp_main, comm) + comp_halo;
}

/// Point-to-point links, optionally split into intra- and inter-node classes
/// by fabric rank (rank / ranks_per_node); and the allreduce model.
struct CommModels {
  LinkModel link;
  std::optional<LinkModel> inter_node;
  int ranks_per_node = 0;
  std::optional<CollectiveModel> allreduce;  // absent: allreduce is free

  const LinkModel& link_between(int a, int b) const {
    if (inter_node && ranks_per_node > 0 && a / ranks_per_node != b / ranks_per_node) return *inter_node;
    return link;
  }
  double ar(double elements, int ranks) const { return allreduce ? allreduce->time(elements, ranks) : 0.0; }
};

/// Local decomposition of one layer.
struct LayerGeometry {
  Shape5D in_local;
  Shape5D out_local;
  std::array<int, 3> parts{1, 1, 1};
  std::array<int, 3> faces{0, 0, 0};
  std::array<Extent, 3> shell{0, 0, 0};  // thickness in output voxels
  Shape5D main;
  double halo_voxels = 0;                  // n * shell voxels
  std::array<double, 3> fwd_slab_bytes{};  // received across one face
  std::array<double, 3> bwd_slab_bytes{};
  std::array<int, 3> neighbor{-1, -1, -1};  // fabric rank across the face of the representative rank
  int representative = 0;
  int layout_size = 1;
  bool spatial = false;
};

inline LayerGeometry layer_geometry(const NetworkSpec& net, const ExecutionPlan& plan, int i) {
  const LayerSpec& L = net.layers[static_cast<std::size_t>(i)];
  const Layout& layout = plan.layout_of(i);
  const DistTensorMeta in_meta{plan.meta_of(L.inputs.front()).global, layout, {0, 0, 0}};
  const DistTensorMeta& out_meta = plan.meta_of(i);
  LayerGeometry g;
  g.in_local = in_meta.local_shape(0);
  g.out_local = out_meta.local_shape(0);
  g.layout_size = layout.size();
  g.spatial = layout.grid.spatial_size() > 1;
  g.main = g.out_local;
  std::array<int, 3> radius{0, 0, 0}, stride{1, 1, 1};
  if (L.kind == LayerKind::kConv) {
    radius = L.conv.radii();
    stride = L.conv.stride;
  }
  // Most loaded rank: coordinate 1 in every partitioned dimension.
  ProcessGrid::Coord rc{};
  for (int d = 0; d < 3; ++d) {
    g.parts[static_cast<std::size_t>(d)] = layout.grid.parts(d);
    rc.spatial[static_cast<std::size_t>(d)] = layout.grid.parts(d) > 1 ? 1 : 0;
  }
  g.representative = layout.fabric_rank(layout.grid.rank_of(rc));
  const double in_vox[3] = {static_cast<double>(g.in_local.d), static_cast<double>(g.in_local.h),
                            static_cast<double>(g.in_local.w)};
  const double out_vox[3] = {static_cast<double>(g.out_local.d), static_cast<double>(g.out_local.h),
                             static_cast<double>(g.out_local.w)};
  for (int d = 0; d < 3; ++d) {
    const auto du = static_cast<std::size_t>(d);
    const int p = g.parts[du];
    if (p <= 1 || radius[du] == 0) continue;
    g.faces[du] = p >= 3 ? 2 : 1;
    g.shell[du] = (radius[du] + stride[du] - 1) / stride[du];
    const double other_in = in_vox[(d + 1) % 3] * in_vox[(d + 2) % 3];
    const double other_out = out_vox[(d + 1) % 3] * out_vox[(d + 2) % 3];
    g.fwd_slab_bytes[du] = 4.0 * static_cast<double>(g.in_local.n * g.in_local.c) * radius[du] * other_in;
    g.bwd_slab_bytes[du] = 4.0 * static_cast<double>(g.out_local.n * g.out_local.c) *
                           static_cast<double>(g.shell[du]) * other_out;
    auto nc = rc;
    nc.spatial[du] = 0;
    g.neighbor[du] = layout.fabric_rank(layout.grid.rank_of(nc));
    Extent& e = d == 0 ? g.main.d : d == 1 ? g.main.h : g.main.w;
    e = std::max<Extent>(0, e - g.faces[du] * g.shell[du]);
  }
  g.halo_voxels = static_cast<double>(g.out_local.n) *
                  (static_cast<double>(g.out_local.voxels()) - static_cast<double>(g.main.voxels()));
  return g;
}

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  bool costed = false;  // false for layers outside the model
  bool spatial = false;
  double fp = 0, bd = 0, bf = 0, ar = 0;
  double comp_fp = 0, comp_bd = 0, comp_bf = 0;  // compute terms only
  double comm_fp = 0, comm_bd = 0;               // sum_d 2 * SR terms
  double bn_ar_fp = 0, bn_ar_bd = 0;
  double fp_bytes = 0, bd_bytes = 0, ar_bytes = 0;
  std::vector<std::string> extrapolated;  // phases
};

struct CostBreakdown {
  std::vector<LayerCost> layers;
  double sum_fp = 0;
  double sum_backward = 0;  // sum over layers of (BD + BF)
  double sum_ar = 0;
  double total = 0;

  double comp_sum() const {
    double s = 0;
    for (const auto& l : layers) s += l.comp_fp + l.comp_bd + l.comp_bf;
    return s;
  }
  double comp_sum_spatial() const {
    double s = 0;
    for (const auto& l : layers) {
      if (l.spatial) s += l.comp_fp + l.comp_bd + l.comp_bf;
    }
    return s;
  }
  const LayerCost& layer(const std::string& name) const {
    for (const auto& l : layers) {
      if (l.name == name) return l;
    }
    fail(ErrorCode::kConfigError, "no layer named " + name);
  }
};

inline double combine_total(double sum_fp, double sum_backward, double sum_ar) {
  return sum_fp + std::max(sum_backward, sum_ar);
}

namespace detail {
inline bool costed_kind(LayerKind k) {
  return k == LayerKind::kConv || k == LayerKind::kDeconv || k == LayerKind::kPool || k == LayerKind::kBatchNorm;
}
}  // namespace detail

/// Stencil cost of one phase (fwd or bwd_data) of a layer.
inline double layer_stencil_phase(const KernelTimeTable& table, const std::vector<std::string>& keys, Phase phase,
                                  const LayerGeometry& g, const CommModels& models, LayerCost& lc, double& comp,
                                  double& comm, double& bytes) {
  const CompTime full = comp_time(table, keys, phase, g.out_local);
  if (g.halo_voxels == 0) {
    comp = full.seconds;
    if (full.extrapolated) lc.extrapolated.push_back(to_string(phase));
    return full.seconds;
  }
  const CompTime main = comp_time(table, keys, phase, g.main);
  const CompTime halo = comp_time_voxels(table, keys, phase, g.out_local.c, g.halo_voxels);
  if (main.extrapolated || halo.extrapolated) lc.extrapolated.push_back(to_string(phase));
  comm = 0;
  for (int d = 0; d < 3; ++d) {
    const auto du = static_cast<std::size_t>(d);
    if (g.faces[du] == 0) continue;
    const double b = phase == Phase::kFwd ? g.fwd_slab_bytes[du] : g.bwd_slab_bytes[du];
    comm += 2.0 * models.link_between(g.representative, g.neighbor[du]).sr(b);
    bytes += 2.0 * b;
  }
  comp = main.seconds + halo.seconds;
  return stencil_cost(main.seconds, comm, halo.seconds);
}

/// Forward, backward and allreduce cost of layer `i` under `plan`.
inline LayerCost layer_cost(const NetworkSpec& net, const ExecutionPlan& plan, int i, const KernelTimeTable& table,
                            const CommModels& models) {
  const LayerSpec& L = net.layers[static_cast<std::size_t>(i)];
  LayerCost lc;
  lc.name = L.name;
  lc.kind = L.kind;
  const auto theta = static_cast<double>(param_layout(net).params[static_cast<std::size_t>(i)].count);
  lc.ar = models.ar(theta, plan.grid.size());
  lc.ar_bytes = theta > 0 && plan.grid.size() > 1 ? 4.0 * theta : 0.0;
  if (!detail::costed_kind(L.kind)) return lc;
  lc.costed = true;
  const LayerGeometry g = layer_geometry(net, plan, i);
  lc.spatial = g.spatial;
  const std::vector<std::string> keys{L.name, to_string(L.kind)};
  auto plain = [&](Phase ph) {
    const CompTime c = comp_time(table, keys, ph, g.out_local);
    if (c.extrapolated) lc.extrapolated.push_back(to_string(ph));
    return c.seconds;
  };
  switch (L.kind) {
    case LayerKind::kConv:
      lc.fp = layer_stencil_phase(table, keys, Phase::kFwd, g, models, lc, lc.comp_fp, lc.comm_fp, lc.fp_bytes);
      lc.bd = layer_stencil_phase(table, keys, Phase::kBwdData, g, models, lc, lc.comp_bd, lc.comm_bd, lc.bd_bytes);
      lc.bf = lc.comp_bf = plain(Phase::kBwdFilter);
      break;
    case LayerKind::kDeconv:
      lc.fp = lc.comp_fp = plain(Phase::kFwd);
      lc.bd = lc.comp_bd = plain(Phase::kBwdData);
      lc.bf = lc.comp_bf = plain(Phase::kBwdFilter);
      break;
    case LayerKind::kPool:
      lc.fp = lc.comp_fp = plain(Phase::kFwd);
      lc.bd = lc.comp_bd = plain(Phase::kBwdData);
      break;
    case LayerKind::kBatchNorm: {
      const double m = 2.0 * static_cast<double>(L.out.c);
      lc.comp_fp = plain(Phase::kFwd);
      lc.comp_bd = plain(Phase::kBwdData);
      lc.bn_ar_fp = models.ar(m, g.layout_size);
      lc.bn_ar_bd = models.ar(m, g.layout_size);
      lc.fp = lc.comp_fp + lc.bn_ar_fp;
      lc.bd = lc.comp_bd + lc.bn_ar_bd;
      if (g.layout_size > 1) lc.fp_bytes = lc.bd_bytes = 4.0 * m;
      break;
    }
    default: break;
  }
  return lc;
}

/// BN layer time for one pass: compute plus an allreduce of 2C elements over `ranks`.
inline double bn_cost(double comp, Extent channels, int ranks, const CommModels& models) {
  return comp + models.ar(2.0 * static_cast<double>(channels), ranks);
}

inline CostBreakdown total_cost(const NetworkSpec& net, const ExecutionPlan& plan, const KernelTimeTable& table,
                                const CommModels& models) {
  CostBreakdown b;
  for (int i = 0; i < static_cast<int>(net.layers.size()); ++i) {
    b.layers.push_back(layer_cost(net, plan, i, table, models));
  }
  for (const auto& l : b.layers) {
    b.sum_fp += l.fp;
    b.sum_backward += l.bd + l.bf;
    b.sum_ar += l.ar;
  }
  b.total = combine_total(b.sum_fp, b.sum_backward, b.sum_ar);
  return b;
}

/// `layer,phase,seconds,bytes` rows (phases fwd, bwd_data, bwd_filter,
/// allreduce) for costed layers and layers with parameters, then totals.
/// Re-summing the rows in file order reproduces the totals exactly.
inline void write_report(std::ostream& out, const CostBreakdown& b) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "layer,phase,seconds,bytes\n";
  for (const auto& l : b.layers) {
    if (l.costed) {
      out << l.name << ",fwd," << num(l.fp) << ',' << num(l.fp_bytes) << '\n';
      out << l.name << ",bwd_data," << num(l.bd) << ',' << num(l.bd_bytes) << '\n';
      out << l.name << ",bwd_filter," << num(l.bf) << ",0\n";
    }
    if (l.ar_bytes > 0 || l.ar > 0) out << l.name << ",allreduce," << num(l.ar) << ',' << num(l.ar_bytes) << '\n';
  }
  out << "total,fwd," << num(b.sum_fp) << ",\n";
  out << "total,backward," << num(b.sum_backward) << ",\n";
  out << "total,allreduce," << num(b.sum_ar) << ",\n";
  out << "total,cost," << num(b.total) << ",\n";
  for (const auto& l : b.layers) {
    for (const auto& ph : l.extrapolated) out << "# extrapolated," << l.name << ',' << ph << '\n';
  }
}

/// Totals recomputed from a report's per-layer rows.
struct ReportTotals {
  double sum_fp = 0, sum_backward = 0, sum_ar = 0, total = 0;
  double reported_total = 0;
};

inline ReportTotals resum_report(std::istream& in) {
  ReportTotals t;
  std::string line;
  std::getline(in, line);
  std::string pending_layer;
  double pending_bd = 0;
  bool has_bd = false;
  auto flush = [&] {
    if (has_bd) t.sum_backward += pending_bd;
    has_bd = false;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::stringstream ss(line);
    std::string layer, phase, secs;
    std::getline(ss, layer, ',');
    std::getline(ss, phase, ',');
    std::getline(ss, secs, ',');
    const double v = std::stod(secs);
    if (layer == "total") {
      flush();
      if (phase == "cost") t.reported_total = v;
      continue;
    }
    if (layer != pending_layer) flush();
    pending_layer = layer;
    if (phase == "fwd") t.sum_fp += v;
    if (phase == "bwd_data") {
      pending_bd = v;
      has_bd = true;
    }
    if (phase == "bwd_filter") {
      pending_bd += v;
    }
    if (phase == "allreduce") t.sum_ar += v;
  }
  flush();
  t.total = combine_total(t.sum_fp, t.sum_backward, t.sum_ar);
  return t;
}

/// Seconds proportional to work at `flops_per_second`: convolutions count
/// their multiply-adds (equal in all three phases), pooling 8 operations per
/// output element, batch normalization 4 (fwd) and 8 (bwd_data) per element.
/// Rows describe the unpartitioned domain of each layer, keyed by name.
inline KernelTimeTable flop_proportional_table(const NetworkSpec& net, Extent batch,
                                               double flops_per_second = 8796093022208.0 /* 2^43 */) {
  KernelTimeTable t;
  for (const LayerSpec& L : net.layers) {
    const Shape5D in = L.inputs.front() < 0 ? net.input : net.layers[static_cast<std::size_t>(L.inputs.front())].out;
    const Shape5D out = with_batch(L.out, batch);
    const double elems = static_cast<double>(out.elements());
    auto add = [&](Phase ph, double flops) { t.add(KernelEntry{L.name, ph, out, flops / flops_per_second}); };
    switch (L.kind) {
      case LayerKind::kConv: {
        const double f = conv_flops(L.conv, in) * static_cast<double>(batch);
        add(Phase::kFwd, f);
        add(Phase::kBwdData, f);
        add(Phase::kBwdFilter, f);
        break;
      }
      case LayerKind::kDeconv: {
        const double f = deconv_flops(L.deconv, in) * static_cast<double>(batch);
        add(Phase::kFwd, f);
        add(Phase::kBwdData, f);
        add(Phase::kBwdFilter, f);
        break;
      }
      case LayerKind::kPool:
        add(Phase::kFwd, 8.0 * elems);
        add(Phase::kBwdData, 8.0 * elems);
        break;
      case LayerKind::kBatchNorm:
        add(Phase::kFwd, 4.0 * elems);
        add(Phase::kBwdData, 8.0 * elems);
        break;
      default: break;
    }
  }
  return t;
}

}  // namespace hybridcnn::perf
