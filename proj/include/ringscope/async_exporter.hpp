// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// Threaded export pipeline for wall-clock runs. Three workers (drain, stage,
// sink) connected by bounded queues; the drain worker is the only ring
// consumer.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "ringscope/exporter.hpp"

namespace ringscope {

// Blocking FIFO with a fixed capacity. close() wakes all waiters; pop()
// returns nullopt once the queue is closed and empty.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    max_depth_ = std::max(max_depth_, items_.size());
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }
  std::size_t max_depth() const {
    std::lock_guard lock(mu_);
    return max_depth_;
  }
  std::size_t capacity() const { return capacity_; }

 private:
  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  std::size_t max_depth_ = 0;
  bool closed_ = false;
};

class AsyncExporter {
 public:
  // Modeled transfer durations are slept for `time_scale` times their value.
  AsyncExporter(Ring2& ring, const DrainConfig& config, const DeviceCopyEngine& engine,
                TensorMetaFIFO& fifo, Sink& sink, double time_scale = 1.0);
  ~AsyncExporter();
  AsyncExporter(const AsyncExporter&) = delete;
  AsyncExporter& operator=(const AsyncExporter&) = delete;

  void start();
  void notify_published();

  // Blocks until every published entry has been drained from the ring.
  void flush();

  // Blocks until the next payload release or the timeout.
  void wait_for_space(std::chrono::milliseconds timeout);

  // Flushes, lets the downstream stages finish, joins the workers.
  void stop();

  ExporterStats stats() const;
  std::vector<ExportEvent> events() const;
  // First exception raised by a worker, rethrown by stop().
  std::exception_ptr error() const;

 private:
  void drain_loop();
  void stage_loop();
  void sink_loop();
  void log(ExportEventKind kind, std::uint32_t reasons, std::uint32_t entries,
           std::uint64_t bytes, std::int32_t buffer);
  void fail(std::exception_ptr e);
  SimTime elapsed() const;

  Ring2& ring_;
  DrainConfig config_;
  DeviceCopyEngine engine_;
  TensorMetaFIFO& fifo_;
  Sink& sink_;
  double time_scale_;
  StagingPool pool_;
  BoundedQueue<StagedBatch> staged_;
  BoundedQueue<PageableBatch> pageable_;

  std::chrono::steady_clock::time_point epoch_;
  mutable std::mutex mu_;
  std::condition_variable drain_cv_;   // producer -> drain worker
  std::condition_variable space_cv_;   // drain worker -> producer
  std::uint64_t published_ = 0;
  std::uint64_t releases_ = 0;
  bool flush_requested_ = false;
  bool stopping_ = false;
  std::vector<ExportEvent> events_;
  ExporterStats stats_;
  std::exception_ptr error_;

  std::atomic<bool> started_{false};
  std::thread drain_thread_;
  std::thread stage_thread_;
  std::thread sink_thread_;
};

}  // namespace ringscope
