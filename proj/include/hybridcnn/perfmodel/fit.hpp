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


// Communication regressions: a point-to-point line t = alpha + beta * bytes and
// an allreduce power law log t = c0 + c1 log m + c2 log p.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hybridcnn/errors.hpp"

namespace hybridcnn::perf {

struct LinkModel {
  double alpha = 0;  // seconds
  double beta = 0;   // seconds per byte

  /// One send-receive of `bytes`; nothing to send costs nothing.
  double sr(double bytes) const { return bytes > 0 ? alpha + beta * bytes : 0.0; }
};

struct CollectiveModel {
  double c0 = 0, c1 = 0, c2 = 0;

  /// Allreduce of `elements` over `ranks`; a single rank costs zero.
  double time(double elements, int ranks) const {
    if (ranks <= 1 || elements <= 0) return 0.0;
    return std::exp(c0 + c1 * std::log(elements) + c2 * std::log(static_cast<double>(ranks)));
  }
};

struct FitResidual {
  double rms = 0;
  double max_abs = 0;
};

struct LinkFit {
  LinkModel model;
  FitResidual residual;  // seconds
};

struct CollectiveFit {
  CollectiveModel model;
  FitResidual residual;  // in log(seconds)
};

struct PingPongSample {
  double bytes = 0;
  double seconds = 0;
};

struct AllreduceSample {
  double elements = 0;
  int ranks = 1;
  double seconds = 0;
};

namespace detail {
inline FitResidual residual_of(const Eigen::VectorXd& r) {
  FitResidual out;
  if (r.size() == 0) return out;
  out.rms = std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
  out.max_abs = r.cwiseAbs().maxCoeff();
  return out;
}
}  // namespace detail

inline LinkFit fit_link(const std::vector<PingPongSample>& samples) {
  std::set<double> sizes;
  for (const auto& s : samples) sizes.insert(s.bytes);
  require(sizes.size() >= 2, ErrorCode::kInsufficientData,
          "link fit needs at least two distinct message sizes, got " + std::to_string(sizes.size()));
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd A(n, 2);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    A(i, 0) = 1.0;
    A(i, 1) = samples[static_cast<std::size_t>(i)].bytes;
    b(i) = samples[static_cast<std::size_t>(i)].seconds;
  }
  const Eigen::VectorXd x = A.colPivHouseholderQr().solve(b);
  require(std::isfinite(x(0)) && std::isfinite(x(1)), ErrorCode::kDegenerateFit, "link fit did not converge");
  require(x(1) >= 0, ErrorCode::kDegenerateFit, "link fit gives negative per-byte time " + std::to_string(x(1)));
  return LinkFit{LinkModel{x(0), x(1)}, detail::residual_of(A * x - b)};
}

inline CollectiveFit fit_allreduce(const std::vector<AllreduceSample>& samples) {
  require(samples.size() >= 3, ErrorCode::kInsufficientData,
          "allreduce fit needs at least three samples, got " + std::to_string(samples.size()));
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    require(s.elements > 0 && s.ranks >= 1 && s.seconds > 0, ErrorCode::kDegenerateFit,
            "allreduce sample " + std::to_string(i) + " must have positive elements, ranks and time");
    A(i, 0) = 1.0;
    A(i, 1) = std::log(s.elements);
    A(i, 2) = std::log(static_cast<double>(s.ranks));
    b(i) = std::log(s.seconds);
  }
  const auto qr = A.colPivHouseholderQr();
  require(qr.rank() == 3, ErrorCode::kDegenerateFit,
          "allreduce samples must vary in both message size and rank count");
  const Eigen::VectorXd x = qr.solve(b);
  return CollectiveFit{CollectiveModel{x(0), x(1), x(2)}, detail::residual_of(A * x - b)};
}

namespace detail {
/// Rows of a comma-separated file with a required header; blank lines and
/// `#` comments are skipped. Each row must have `columns` numeric fields.
inline std::vector<std::vector<double>> read_numeric_csv(std::istream& in, const std::string& source,
                                                         const std::string& header) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  bool seen_header = false;
  const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (!seen_header) {
      require(line == header, ErrorCode::kParseError, where + "expected header '" + header + "'");
      seen_header = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used > 0 && used == cell.size(), ErrorCode::kParseError, where + "not a number: '" + cell + "'");
      row.push_back(v);
    }
    require(row.size() == columns, ErrorCode::kParseError,
            where + "expected " + std::to_string(columns) + " fields, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  require(seen_header, ErrorCode::kParseError, source + ": missing header '" + header + "'");
  return rows;
}

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open " + p.string());
  return in;
}
}  // namespace detail

/// `bytes,seconds`
inline std::vector<PingPongSample> parse_pingpong(std::istream& in, const std::string& source = "<pingpong>") {
  std::vector<PingPongSample> out;
  for (const auto& r : detail::read_numeric_csv(in, source, "bytes,seconds")) out.push_back({r[0], r[1]});
  return out;
}

/// `elements,ranks,seconds`
inline std::vector<AllreduceSample> parse_allreduce(std::istream& in, const std::string& source = "<allreduce>") {
  std::vector<AllreduceSample> out;
  for (const auto& r : detail::read_numeric_csv(in, source, "elements,ranks,seconds")) {
    out.push_back({r[0], static_cast<int>(r[1]), r[2]});
  }
  return out;
}

inline std::vector<PingPongSample> read_pingpong(const std::filesystem::path& p) {
  auto in = detail::open_or_throw(p);
  return parse_pingpong(in, p.string());
}

inline std::vector<AllreduceSample> read_allreduce(const std::filesystem::path& p) {
  auto in = detail::open_or_throw(p);
  return parse_allreduce(in, p.string());
}

}  // namespace hybridcnn::perf
