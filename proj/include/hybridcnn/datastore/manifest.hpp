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


// Plain-text dataset manifest. One directive per line; '#' starts a comment.
//
//   root <directory>              sample paths are relative to it (default: manifest's directory)
//   dtype int16|fp32
//   dims <C> <D> <H> <W>
//   scale <real>                  multiplier applied when voxels become tensors (default 1)
//   sample <id> <file> targets <t0> <t1> ...
//   sample <id> <file> label <label-file>
//
// Sample ids must be dense 0..S-1 (any order in the file).

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "hybridcnn/datastore/sample_file.hpp"
#include "hybridcnn/errors.hpp"

namespace hybridcnn {

struct ManifestEntry {
  std::int64_t id = 0;
  std::string file;
  std::vector<double> targets;
  std::string label_file;  // empty for regression samples
};

struct Manifest {
  std::filesystem::path root;
  DType dtype = DType::kInt16;
  FileDims dims{};
  double scale = 1.0;
  std::vector<ManifestEntry> samples;  // indexed by id

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
  std::filesystem::path path_of(std::int64_t id) const { return root / samples[static_cast<std::size_t>(id)].file; }
  std::filesystem::path label_path_of(std::int64_t id) const {
    return root / samples[static_cast<std::size_t>(id)].label_file;
  }
  bool has_labels() const { return !samples.empty() && !samples.front().label_file.empty(); }
  std::uint64_t payload_bytes() const { return SampleHeader{dtype, dims}.payload_bytes(); }
  std::size_t target_count() const { return samples.empty() ? 0 : samples.front().targets.size(); }
};

inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base, const std::string& source) {
  Manifest m;
  m.root = base;
  bool have_dims = false;
  std::string line;
  int lineno = 0;
  std::vector<ManifestEntry> entries;
  auto bad = [&](const std::string& msg) {
    fail(ErrorCode::kParseError, source + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "root") {
      std::string r;
      if (!(ls >> std::quoted(r))) bad("root needs a path");
      m.root = std::filesystem::path(r).is_absolute() ? std::filesystem::path(r) : base / r;
    } else if (key == "dtype") {
      std::string d;
      if (!(ls >> d) || (d != "int16" && d != "fp32")) bad("dtype must be int16 or fp32");
      m.dtype = parse_dtype(d);
    } else if (key == "dims") {
      for (auto& v : m.dims) {
        if (!(ls >> v) || v == 0) bad("dims needs four positive integers");
      }
      have_dims = true;
    } else if (key == "scale") {
      if (!(ls >> m.scale)) bad("scale needs a number");
    } else if (key == "sample") {
      ManifestEntry e;
      std::string kind;
      if (!(ls >> e.id >> std::quoted(e.file) >> kind)) bad("expected: sample <id> <file> targets|label ...");
      if (kind == "targets") {
        double t;
        while (ls >> t) e.targets.push_back(t);
        if (!ls.eof()) bad("non-numeric target");
        if (e.targets.empty()) bad("sample has no targets");
      } else if (kind == "label") {
        if (!(ls >> std::quoted(e.label_file))) bad("label needs a file name");
      } else {
        bad("unknown sample kind '" + kind + "'");
      }
      entries.push_back(std::move(e));
      continue;
    } else {
      bad("unknown directive '" + key + "'");
    }
    std::string extra;
    if (ls >> extra) bad("unexpected trailing '" + extra + "'");
  }
  if (!have_dims) fail(ErrorCode::kParseError, source + ": missing dims");
  m.samples.resize(entries.size());
  std::vector<char> seen(entries.size(), 0);
  for (auto& e : entries) {
    require(e.id >= 0 && e.id < static_cast<std::int64_t>(entries.size()) && !seen[static_cast<std::size_t>(e.id)],
            ErrorCode::kParseError, source + ": sample ids must be dense 0..S-1 without repeats (id " +
                                        std::to_string(e.id) + ")");
    seen[static_cast<std::size_t>(e.id)] = 1;
    m.samples[static_cast<std::size_t>(e.id)] = std::move(e);
  }
  for (const auto& e : m.samples) {
    require(e.targets.size() == m.samples.front().targets.size() && e.label_file.empty() == m.samples.front().label_file.empty(),
            ErrorCode::kParseError, source + ": samples disagree on target count or label presence");
  }
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), path.string());
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIoError, "cannot write manifest " + path.string());
  out << "# hybridcnn dataset manifest\n";
  out << "root " << std::quoted(m.root.string()) << "\n";
  out << "dtype " << to_string(m.dtype) << "\n";
  out << "dims " << m.dims[0] << ' ' << m.dims[1] << ' ' << m.dims[2] << ' ' << m.dims[3] << "\n";
  out << "scale " << std::setprecision(17) << m.scale << "\n";
  for (const auto& e : m.samples) {
    out << "sample " << e.id << ' ' << std::quoted(e.file);
    if (e.label_file.empty()) {
      out << " targets";
      for (double t : e.targets) out << ' ' << std::setprecision(17) << t;
    } else {
      out << " label " << std::quoted(e.label_file);
    }
    out << "\n";
  }
  require(static_cast<bool>(out), ErrorCode::kIoError, "write failed for " + path.string());
}

}  // namespace hybridcnn
