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
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <type_traits>
#include <vector>

#include "hybridcnn/errors.hpp"

namespace hybridcnn {

/// kCooperative steps rank bodies one at a time in deterministic round-robin
/// order, switching only when the running rank blocks or finishes.
/// kParallel lets every rank thread run freely against blocking queues.
enum class ExecMode { kCooperative, kParallel };

enum class TrafficKind : std::uint8_t { kPointToPoint = 0, kHalo, kAllreduce, kRedistribute, kDataExchange, kCount };

using Bytes = std::vector<std::byte>;

struct RankTraffic {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
  std::uint64_t allreduce_calls = 0;
  std::uint64_t allreduce_elements = 0;
  std::array<std::uint64_t, static_cast<std::size_t>(TrafficKind::kCount)> bytes_sent_by_kind{};

  friend bool operator==(const RankTraffic&, const RankTraffic&) = default;
};

struct TrafficCounters {
  std::vector<RankTraffic> ranks;

  std::uint64_t total_sent() const {
    std::uint64_t s = 0;
    for (const auto& r : ranks) s += r.bytes_sent;
    return s;
  }
  std::uint64_t total_received() const {
    std::uint64_t s = 0;
    for (const auto& r : ranks) s += r.bytes_received;
    return s;
  }
  std::uint64_t total_messages() const {
    std::uint64_t s = 0;
    for (const auto& r : ranks) s += r.messages_sent;
    return s;
  }
  std::uint64_t bytes_of(TrafficKind kind) const {
    std::uint64_t s = 0;
    for (const auto& r : ranks) s += r.bytes_sent_by_kind[static_cast<std::size_t>(kind)];
    return s;
  }
  std::uint64_t halo_bytes() const { return bytes_of(TrafficKind::kHalo); }

  friend bool operator==(const TrafficCounters&, const TrafficCounters&) = default;
};

// Reserved (negative) tags; user point-to-point tags are >= 0.
namespace tags {
inline constexpr int kAllreduceUp = -1;
inline constexpr int kAllreduceDown = -2;
inline constexpr int kRedistribute = -3;
inline constexpr int kDataExchange = -4;
inline constexpr int kHaloBase = -16;  // kHaloBase - (2 * dim + (toward_high ? 1 : 0))
}  // namespace tags

class Fabric;

/// One rank's handle onto the fabric; only valid inside Fabric::run.
class Comm {
 public:
  int rank() const { return rank_; }
  int size() const;

  /// Buffered send: never blocks.
  void send(int dst, int tag, Bytes payload, TrafficKind kind = TrafficKind::kPointToPoint);
  /// Blocks until a message from (src, tag) is available; FIFO per (src, dst, tag).
  Bytes recv(int src, int tag);

  template <class T>
  void send_values(int dst, int tag, std::span<const T> values, TrafficKind kind = TrafficKind::kPointToPoint) {
    static_assert(std::is_trivially_copyable_v<T>);
    Bytes b(values.size_bytes());
    if (!b.empty()) std::memcpy(b.data(), values.data(), b.size());
    send(dst, tag, std::move(b), kind);
  }

  template <class T>
  std::vector<T> recv_values(int src, int tag) {
    static_assert(std::is_trivially_copyable_v<T>);
    Bytes b = recv(src, tag);
    require(b.size() % sizeof(T) == 0, ErrorCode::kLengthMismatch, "payload is not a whole number of elements");
    std::vector<T> out(b.size() / sizeof(T));
    if (!b.empty()) std::memcpy(out.data(), b.data(), b.size());
    return out;
  }

  void note_allreduce(std::size_t elements);

 private:
  friend class Fabric;
  Comm(Fabric& f, int rank) : fabric_(f), rank_(rank) {}
  Fabric& fabric_;
  int rank_;
};

class Fabric {
 public:
  explicit Fabric(int world_size, ExecMode mode = ExecMode::kCooperative)
      : size_(world_size), mode_(mode), traffic_(static_cast<std::size_t>(world_size)) {
    require(world_size >= 1, ErrorCode::kConfigError, "fabric needs at least one rank");
  }

  Fabric(const Fabric&) = delete;
  Fabric& operator=(const Fabric&) = delete;

  int size() const { return size_; }
  ExecMode mode() const { return mode_; }

  /// Runs `body` once per rank and returns when every rank has finished.
  /// Rethrows the lowest-ranked non-deadlock error, else the lowest-ranked deadlock.
  void run(const std::function<void(Comm&)>& body) {
    {
      std::lock_guard lk(mu_);
      state_.assign(static_cast<std::size_t>(size_), State::kRunnable);
      want_.assign(static_cast<std::size_t>(size_), {0, 0});
      errors_.assign(static_cast<std::size_t>(size_), nullptr);
      current_ = 0;
      deadlock_ = false;
      deadlock_report_.clear();
    }
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(size_));
    for (int r = 0; r < size_; ++r) {
      workers.emplace_back([this, r, &body] { worker(r, body); });
    }
    for (auto& t : workers) t.join();

    std::lock_guard lk(mu_);
    mailboxes_.clear();
    std::exception_ptr first_deadlock;
    for (const auto& e : errors_) {
      if (!e) continue;
      try {
        std::rethrow_exception(e);
      } catch (const Error& err) {
        if (err.code() == ErrorCode::kDeadlock) {
          if (!first_deadlock) first_deadlock = e;
          continue;
        }
        throw;
      }
    }
    if (first_deadlock) std::rethrow_exception(first_deadlock);
  }

  TrafficCounters counters() const {
    std::lock_guard lk(mu_);
    return TrafficCounters{traffic_};
  }

  void reset_counters() {
    std::lock_guard lk(mu_);
    traffic_.assign(static_cast<std::size_t>(size_), RankTraffic{});
    step_ = 0;
  }

  /// Optional newline-delimited `step,src,dst,tag,bytes` record per send.
  void set_trace(std::ostream* out) {
    std::lock_guard lk(mu_);
    trace_ = out;
  }

 private:
  friend class Comm;
  enum class State { kRunnable, kBlocked, kDone };

  void worker(int r, const std::function<void(Comm&)>& body) {
    if (mode_ == ExecMode::kCooperative) {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return current_ == r; });
    }
    try {
      Comm c(*this, r);
      body(c);
    } catch (...) {
      std::lock_guard lk(mu_);
      errors_[static_cast<std::size_t>(r)] = std::current_exception();
    }
    std::unique_lock lk(mu_);
    state_[static_cast<std::size_t>(r)] = State::kDone;
    reschedule(r);
  }

  // Called with mu_ held after rank `from` blocked or finished.
  void reschedule(int from) {
    if (mode_ == ExecMode::kCooperative) {
      for (int i = 1; i <= size_; ++i) {
        const int cand = (from + i) % size_;
        if (state_[static_cast<std::size_t>(cand)] == State::kRunnable) {
          current_ = cand;
          cv_.notify_all();
          return;
        }
      }
      current_ = -1;
    } else {
      for (auto s : state_) {
        if (s == State::kRunnable) return;
      }
    }
    bool any_blocked = false;
    for (auto s : state_) any_blocked |= (s == State::kBlocked);
    // Ranks unwinding after a detected deadlock re-enter here; keep the first report.
    if (any_blocked && !deadlock_) {
      deadlock_ = true;
      deadlock_report_ = describe_blocked();
    }
    cv_.notify_all();
  }

  std::string describe_blocked() const {
    std::string out = "every live rank is blocked with no deliverable message:";
    for (int r = 0; r < size_; ++r) {
      if (state_[static_cast<std::size_t>(r)] != State::kBlocked) continue;
      const auto [src, tag] = want_[static_cast<std::size_t>(r)];
      out += " rank " + std::to_string(r) + " waits on recv(src=" + std::to_string(src) + ", tag=" +
             std::to_string(tag) + ");";
    }
    return out;
  }

  void do_send(int src, int dst, int tag, Bytes payload, TrafficKind kind) {
    require(dst >= 0 && dst < size_, ErrorCode::kConfigError, "send to invalid rank " + std::to_string(dst));
    std::lock_guard lk(mu_);
    const std::uint64_t n = payload.size();
    auto& ts = traffic_[static_cast<std::size_t>(src)];
    ts.bytes_sent += n;
    ts.messages_sent += 1;
    ts.bytes_sent_by_kind[static_cast<std::size_t>(kind)] += n;
    if (trace_) *trace_ << step_ << ',' << src << ',' << dst << ',' << tag << ',' << n << '\n';
    ++step_;
    mailboxes_[{src, dst, tag}].push_back(std::move(payload));
    auto& st = state_[static_cast<std::size_t>(dst)];
    if (st == State::kBlocked && want_[static_cast<std::size_t>(dst)] == std::pair{src, tag}) {
      st = State::kRunnable;
      if (mode_ == ExecMode::kParallel) cv_.notify_all();
    }
  }

  Bytes do_recv(int me, int src, int tag) {
    require(src >= 0 && src < size_, ErrorCode::kConfigError, "recv from invalid rank " + std::to_string(src));
    std::unique_lock lk(mu_);
    const auto key = std::tuple{src, me, tag};
    for (;;) {
      if (deadlock_) fail(ErrorCode::kDeadlock, deadlock_report_);
      auto it = mailboxes_.find(key);
      if (it != mailboxes_.end() && !it->second.empty()) {
        Bytes b = std::move(it->second.front());
        it->second.pop_front();
        auto& tr = traffic_[static_cast<std::size_t>(me)];
        tr.bytes_received += b.size();
        tr.messages_received += 1;
        return b;
      }
      state_[static_cast<std::size_t>(me)] = State::kBlocked;
      want_[static_cast<std::size_t>(me)] = {src, tag};
      reschedule(me);
      cv_.wait(lk, [&] {
        if (deadlock_) return true;
        if (state_[static_cast<std::size_t>(me)] != State::kRunnable) return false;
        return mode_ == ExecMode::kParallel || current_ == me;
      });
    }
  }

  int size_;
  ExecMode mode_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::tuple<int, int, int>, std::deque<Bytes>> mailboxes_;
  std::vector<State> state_;
  std::vector<std::pair<int, int>> want_;
  std::vector<std::exception_ptr> errors_;
  std::vector<RankTraffic> traffic_;
  int current_ = 0;
  bool deadlock_ = false;
  std::string deadlock_report_;
  std::uint64_t step_ = 0;
  std::ostream* trace_ = nullptr;
};

inline int Comm::size() const { return fabric_.size(); }

inline void Comm::send(int dst, int tag, Bytes payload, TrafficKind kind) {
  fabric_.do_send(rank_, dst, tag, std::move(payload), kind);
}

inline Bytes Comm::recv(int src, int tag) { return fabric_.do_recv(rank_, src, tag); }

inline void Comm::note_allreduce(std::size_t elements) {
  std::lock_guard lk(fabric_.mu_);
  auto& t = fabric_.traffic_[static_cast<std::size_t>(rank_)];
  t.allreduce_calls += 1;
  t.allreduce_elements += elements;
}

}  // namespace hybridcnn
