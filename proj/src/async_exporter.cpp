// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/async_exporter.hpp"

#include <algorithm>

namespace ringscope {

namespace {

void sleep_scaled(SimDuration d, double scale) {
  if (d.count() <= 0 || scale <= 0.0) return;
  std::this_thread::sleep_for(std::chrono::nanoseconds(
      static_cast<std::int64_t>(static_cast<double>(d.count()) * scale)));
}

}  // namespace

AsyncExporter::AsyncExporter(Ring2& ring, const DrainConfig& config,
                             const DeviceCopyEngine& engine, TensorMetaFIFO& fifo, Sink& sink,
                             double time_scale)
    : ring_(ring),
      config_(config),
      engine_(engine),
      fifo_(fifo),
      sink_(sink),
      time_scale_(time_scale),
      pool_(config.staging_buffer_count, config.staging_buffer_size),
      staged_(config.staging_buffer_count),
      pageable_(config.queue_capacity),
      epoch_(std::chrono::steady_clock::now()) {
  config_.validate();
  stats_.transient_bound = ring.config().payload_capacity +
                           std::uint64_t{config.staging_buffer_count} * config.staging_buffer_size +
                           (std::uint64_t{config.queue_capacity} + 1) * config.staging_buffer_size;
}

AsyncExporter::~AsyncExporter() {
  try {
    stop();
  } catch (...) {
  }
}

SimTime AsyncExporter::elapsed() const {
  return std::chrono::duration_cast<SimTime>(std::chrono::steady_clock::now() - epoch_);
}

void AsyncExporter::log(ExportEventKind kind, std::uint32_t reasons, std::uint32_t entries,
                        std::uint64_t bytes, std::int32_t buffer) {
  std::lock_guard lock(mu_);
  events_.push_back(ExportEvent{elapsed(), kind, reasons, entries, bytes, buffer});
}

void AsyncExporter::fail(std::exception_ptr e) {
  {
    std::lock_guard lock(mu_);
    if (!error_) error_ = e;
  }
  space_cv_.notify_all();
  drain_cv_.notify_all();
}

void AsyncExporter::start() {
  if (started_.exchange(true)) return;
  epoch_ = std::chrono::steady_clock::now();
  drain_thread_ = std::thread([this] { drain_loop(); });
  stage_thread_ = std::thread([this] { stage_loop(); });
  sink_thread_ = std::thread([this] { sink_loop(); });
}

void AsyncExporter::notify_published() {
  {
    std::lock_guard lock(mu_);
    ++published_;
  }
  drain_cv_.notify_one();
}

void AsyncExporter::flush() {
  std::unique_lock lock(mu_);
  flush_requested_ = true;
  drain_cv_.notify_one();
  space_cv_.wait(lock, [&] { return !flush_requested_ || error_ != nullptr; });
}

void AsyncExporter::wait_for_space(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  const std::uint64_t seen = releases_;
  space_cv_.wait_for(lock, timeout, [&] { return releases_ != seen || error_ != nullptr; });
}

void AsyncExporter::stop() {
  if (!started_.load()) return;
  if (drain_thread_.joinable()) {
    flush();
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    drain_cv_.notify_all();
    drain_thread_.join();
    stage_thread_.join();
    sink_thread_.join();
  }
  if (auto e = error()) std::rethrow_exception(e);
}

ExporterStats AsyncExporter::stats() const {
  std::lock_guard lock(mu_);
  ExporterStats s = stats_;
  s.staging_checked_out = pool_.checked_out();
  s.staging_returned = pool_.returned();
  s.staging_max_in_use = pool_.max_in_use();
  return s;
}

std::vector<ExportEvent> AsyncExporter::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::exception_ptr AsyncExporter::error() const {
  std::lock_guard lock(mu_);
  return error_;
}

void AsyncExporter::drain_loop() {
  const auto poll = std::max(std::chrono::microseconds(50),
                             std::chrono::duration_cast<std::chrono::microseconds>(
                                 seconds_to_sim(config_.max_wait) / 4));
  std::deque<PendingEntry> pending;
  try {
    for (;;) {
      bool flush = false;
      bool stopping = false;
      {
        std::unique_lock lock(mu_);
        drain_cv_.wait_for(lock, poll);
        flush = flush_requested_;
        stopping = stopping_;
        if (error_) break;
      }
      for (const auto& d : ring_.poll_ready(ring_.config().meta_slots)) {
        pending.push_back(PendingEntry{d, elapsed()});
      }
      if (pending.empty()) {
        if (ring_.state().occupancy() == 0 && (flush || stopping)) {
          {
            std::lock_guard lock(mu_);
            if (flush_requested_) events_.push_back({elapsed(), ExportEventKind::kFlushComplete,
                                                     kDrainFlush, 0, 0, -1});
            flush_requested_ = false;
          }
          space_cv_.notify_all();
          if (stopping) break;
        }
        continue;
      }

      const std::vector<PendingEntry> view(pending.begin(), pending.end());
      const std::uint32_t reasons =
          evaluate_drain(view, config_, elapsed(), flush || stopping);
      if (reasons == kDrainNone) continue;

      auto buffer = pool_.try_acquire();
      if (!buffer) {
        log(ExportEventKind::kStagingWait, reasons, 0, 0, -1);
        buffer = pool_.acquire();
      }
      const std::size_t n = select_batch(view, pool_.buffer_size());
      std::vector<Descriptor> batch;
      std::uint64_t bytes = 0;
      for (std::size_t i = 0; i < n; ++i) {
        bytes += pending.front().descriptor.payload_len;
        batch.push_back(pending.front().descriptor);
        pending.pop_front();
      }
      log(ExportEventKind::kDrainStart, reasons, static_cast<std::uint32_t>(n), bytes,
          static_cast<std::int32_t>(*buffer));
      sleep_scaled(engine_.d2h_time(bytes), time_scale_);
      StagedBatch staged = copy_to_staging(ring_, std::move(batch), pool_, *buffer);
      {
        std::lock_guard lock(mu_);
        ++releases_;
        ++stats_.transfers;
        stats_.transferred_bytes += bytes;
        events_.push_back({elapsed(), ExportEventKind::kDrainComplete, kDrainNone,
                           static_cast<std::uint32_t>(n), bytes, static_cast<std::int32_t>(*buffer)});
      }
      space_cv_.notify_all();
      staged_.push(std::move(staged));
    }
  } catch (...) {
    fail(std::current_exception());
  }
  staged_.close();
}

void AsyncExporter::stage_loop() {
  while (auto staged = staged_.pop()) {
    const auto buffer = static_cast<std::int32_t>(staged->buffer);
    const auto bytes = staged->bytes;
    const auto entries = static_cast<std::uint32_t>(staged->descriptors.size());
    log(ExportEventKind::kStageStart, kDrainNone, entries, bytes, buffer);
    sleep_scaled(transfer_time(bytes, config_.pageable_copy_bandwidth), time_scale_);
    PageableBatch out = stage_to_pageable(std::move(*staged), pool_);
    log(ExportEventKind::kStagingReleased, kDrainNone, entries, bytes, buffer);
    pageable_.push(std::move(out));
  }
  pageable_.close();
}

void AsyncExporter::sink_loop() {
  while (auto batch = pageable_.pop()) {
    std::vector<CaptureRecord> records;
    try {
      records = reconstruct_batch(*batch, fifo_);
    } catch (...) {
      fail(std::current_exception());
      continue;
    }
    std::uint64_t bytes = 0;
    for (const auto& r : records) bytes += r.payload.size();
    sleep_scaled(seconds_to_sim(config_.record_overhead * static_cast<double>(records.size())),
                 time_scale_);
    try {
      sink_.write(records);
      std::lock_guard lock(mu_);
      stats_.records += records.size();
      stats_.record_bytes += bytes;
      events_.push_back({elapsed(), ExportEventKind::kSinkWrite, kDrainNone,
                         static_cast<std::uint32_t>(records.size()), bytes, -1});
    } catch (const std::exception&) {
      std::lock_guard lock(mu_);
      ++stats_.sink_failures;
      events_.push_back({elapsed(), ExportEventKind::kSinkFailure, kDrainNone,
                         static_cast<std::uint32_t>(records.size()), bytes, -1});
    }
  }
}

}  // namespace ringscope
