// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include "ringscope/types.hpp"

namespace ringscope {

// Single-threaded discrete-event loop over virtual time. Events scheduled for
// the same instant run in scheduling order.
class EventLoop {
 public:
  using Callback = std::function<void()>;

  SimTime now() const { return now_; }

  void at(SimTime when, Callback fn) {
    if (when < now_) when = now_;
    queue_.push(Event{when, next_seq_++, std::move(fn)});
  }
  void after(SimDuration delay, Callback fn) { at(now_ + delay, std::move(fn)); }

  bool step() {
    if (queue_.empty()) return false;
    Event ev = queue_.top();
    queue_.pop();
    now_ = ev.when;
    ev.fn();
    return true;
  }

  void run() {
    while (step()) {
    }
  }

  std::size_t pending() const { return queue_.size(); }

 private:
  struct Event {
    SimTime when;
    std::uint64_t seq;
    Callback fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.when != b.when ? a.when > b.when : a.seq > b.seq;
    }
  };

  SimTime now_{0};
  std::uint64_t next_seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
};

}  // namespace ringscope
