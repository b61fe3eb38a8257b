// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// Host-side export pipeline: drain worker, staging pool, pinned-to-pageable
// copy stage, metadata matching and sink delivery.
//
// The building blocks here are shared by the virtual-time exporter
// (SimExporter, below) and the threaded exporter (async_exporter.hpp).

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ringscope/capture.hpp"
#include "ringscope/event_loop.hpp"
#include "ringscope/record.hpp"
#include "ringscope/ring2.hpp"
#include "ringscope/sink.hpp"
#include "ringscope/types.hpp"

namespace ringscope {

struct DrainConfig {
  std::uint32_t min_ready_entries = 8;
  std::uint64_t min_ready_bytes = 1ull << 20;
  double max_wait = 2e-3;  // seconds
  std::uint64_t staging_buffer_size = 8ull << 20;
  std::uint32_t staging_buffer_count = 4;
  std::uint32_t queue_capacity = 8;         // pageable batches between copy and sink stages
  double pageable_copy_bandwidth = 20e9;    // bytes/s, pinned -> pageable
  double record_overhead = 0.5e-6;          // seconds per reconstructed record

  void validate() const;  // throws std::invalid_argument
};

// Semantic metadata for one expected capture, queued before the step runs.
struct TensorMeta {
  std::vector<std::uint64_t> request_ids;
  std::vector<TokenRange> token_ranges;
  std::vector<std::int64_t> shape;  // per-request dims
  DType dtype = DType::kUInt8;
  std::uint32_t hook_id = 0;
  std::string hook_name;
  std::optional<std::int32_t> layer_index;
  RankCoords rank;
  std::uint32_t step_seq = 0;

  std::uint64_t slice_bytes() const;
};

// Metadata queue in expected firing order. The producer pushes, the
// reconstruction stage pops; both may run on different threads.
class TensorMetaFIFO {
 public:
  void push(TensorMeta meta);
  void push(std::span<const TensorMeta> metas);
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  // Pops the head if it matches (step_seq, hook_id); throws MetaMismatch
  // otherwise.
  TensorMeta pop_matching(const Descriptor& d);

 private:
  mutable std::mutex mu_;
  std::deque<TensorMeta> queue_;
};

// Splits a drained payload into per-request records using the FIFO head.
// Throws MetaMismatch when the head does not describe this descriptor.
std::vector<CaptureRecord> reconstruct(const Descriptor& d, std::span<const std::byte> payload,
                                       TensorMetaFIFO& fifo);

// Reference slicing used by synchronous modes and oracles: one record per
// kept request, straight from the source tensor.
std::vector<CaptureRecord> slice_direct(const TensorMeta& meta, const TensorView& view,
                                        const KeepDropVector& keep);

// Fixed set of equally sized buffers emulating pinned host memory.
class StagingPool {
 public:
  StagingPool(std::uint32_t count, std::uint64_t buffer_size);

  std::optional<std::uint32_t> try_acquire();
  std::uint32_t acquire();  // blocks
  void release(std::uint32_t index);

  std::span<std::byte> buffer(std::uint32_t index);
  std::uint64_t buffer_size() const { return buffer_size_; }
  std::uint32_t count() const { return static_cast<std::uint32_t>(buffers_.size()); }

  std::uint32_t in_use() const;
  std::uint32_t max_in_use() const;
  std::uint64_t checked_out() const;
  std::uint64_t returned() const;

 private:
  std::uint64_t buffer_size_;
  std::vector<std::vector<std::byte>> buffers_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::uint32_t> free_;
  std::uint32_t max_in_use_ = 0;
  std::uint64_t checked_out_ = 0;
  std::uint64_t returned_ = 0;
};

enum DrainReason : std::uint32_t {
  kDrainNone = 0,
  kDrainEntries = 1u << 0,
  kDrainBytes = 1u << 1,
  kDrainTimeout = 1u << 2,
  kDrainFlush = 1u << 3,
};

struct PendingEntry {
  Descriptor descriptor;
  SimTime ready_at{0};
};

// Bitmask of satisfied drain conditions; any non-zero result fires a drain.
std::uint32_t evaluate_drain(std::span<const PendingEntry> pending, const DrainConfig& config,
                             SimTime now, bool flush);

// Number of leading pending entries that fit one staging buffer (always at
// least one when pending is non-empty).
std::size_t select_batch(std::span<const PendingEntry> pending, std::uint64_t buffer_size);

struct StagedBatch {
  std::vector<Descriptor> descriptors;
  std::uint32_t buffer = 0;
  std::uint64_t bytes = 0;
};

// Copies each descriptor's payload from the ring into the staging buffer
// (concatenated in order), then releases the payload regions.
StagedBatch copy_to_staging(Ring2& ring, std::vector<Descriptor> batch, StagingPool& pool,
                            std::uint32_t buffer);

struct PageableBatch {
  std::vector<Descriptor> descriptors;
  std::vector<std::byte> bytes;
};

// Copies the staged bytes to pageable memory and returns the staging buffer
// to the pool before returning.
PageableBatch stage_to_pageable(StagedBatch&& staged, StagingPool& pool);

// Reconstructs every descriptor of a pageable batch, in order.
std::vector<CaptureRecord> reconstruct_batch(const PageableBatch& batch, TensorMetaFIFO& fifo);

enum class ExportEventKind : std::uint8_t {
  kDrainStart,
  kDrainComplete,
  kStagingWait,
  kStageStart,
  kStagingReleased,
  kSinkWrite,
  kSinkFailure,
  kFlushRequested,
  kFlushComplete,
};

struct ExportEvent {
  SimTime time{0};
  ExportEventKind kind = ExportEventKind::kDrainStart;
  std::uint32_t reasons = kDrainNone;
  std::uint32_t entries = 0;
  std::uint64_t bytes = 0;
  std::int32_t buffer = -1;
};

struct ExporterStats {
  std::uint64_t transfers = 0;
  std::uint64_t transferred_bytes = 0;
  std::uint64_t records = 0;
  std::uint64_t record_bytes = 0;
  std::uint64_t sink_failures = 0;
  std::uint64_t staging_checked_out = 0;
  std::uint64_t staging_returned = 0;
  std::uint32_t staging_max_in_use = 0;
  std::uint64_t max_transient_bytes = 0;
  std::uint64_t transient_bound = 0;
};

// Virtual-time exporter. Each pipeline stage is a single event-driven worker;
// the drain worker is the sole ring consumer.
class SimExporter {
 public:
  SimExporter(EventLoop& loop, Ring2& ring, const DrainConfig& config,
              const DeviceCopyEngine& engine, TensorMetaFIFO& fifo, Sink& sink);

  // A descriptor was published; the drain worker polls the meta ring.
  void notify_published();

  // Drains every ready entry regardless of thresholds; `done` runs once the
  // payload ring is empty.
  void request_flush(std::function<void()> done);

  // One-shot callback after the next payload release.
  void wait_for_space(std::function<void()> callback);

  // Flushes and waits for all downstream stages to go idle.
  void finish(std::function<void()> done);

  bool idle() const;
  const std::vector<ExportEvent>& events() const { return events_; }
  ExporterStats stats() const;

 private:
  void kick_drain();
  void complete_drain(StagedBatch batch);
  void kick_stage();
  void kick_sink();
  void check_flush_done();
  void check_finished();
  void sample_transient();
  void log(ExportEventKind kind, std::uint32_t reasons, std::uint32_t entries,
           std::uint64_t bytes, std::int32_t buffer);

  EventLoop& loop_;
  Ring2& ring_;
  DrainConfig config_;
  DeviceCopyEngine engine_;
  TensorMetaFIFO& fifo_;
  Sink& sink_;
  StagingPool pool_;

  std::deque<PendingEntry> pending_;
  bool draining_ = false;
  bool waiting_for_staging_ = false;
  std::optional<SimTime> timer_at_;
  bool flush_requested_ = false;
  std::vector<std::function<void()>> flush_waiters_;
  std::vector<std::function<void()>> space_waiters_;
  std::vector<std::function<void()>> finish_waiters_;

  std::deque<StagedBatch> staged_;
  bool stage_busy_ = false;
  std::deque<PageableBatch> pageable_;
  bool sink_busy_ = false;
  std::uint64_t sink_inflight_bytes_ = 0;

  std::vector<ExportEvent> events_;
  ExporterStats stats_;
};

}  // namespace ringscope
