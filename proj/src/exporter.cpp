// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/exporter.hpp"

#include <algorithm>
#include <cstring>
#include <memory>
#include <numeric>

namespace ringscope {

void DrainConfig::validate() const {
  if (min_ready_entries == 0 || min_ready_bytes == 0 || !(max_wait > 0.0)) {
    throw std::invalid_argument("drain thresholds must be positive");
  }
  if (staging_buffer_size == 0 || staging_buffer_count == 0 || queue_capacity == 0) {
    throw std::invalid_argument("staging pool and queues must be non-empty");
  }
}

std::uint64_t TensorMeta::slice_bytes() const {
  std::uint64_t n = dtype_width(dtype);
  for (auto d : shape) n *= static_cast<std::uint64_t>(d);
  return n;
}

// ---------------------------------------------------------------------------
// TensorMetaFIFO

void TensorMetaFIFO::push(TensorMeta meta) {
  std::lock_guard lock(mu_);
  queue_.push_back(std::move(meta));
}

void TensorMetaFIFO::push(std::span<const TensorMeta> metas) {
  std::lock_guard lock(mu_);
  queue_.insert(queue_.end(), metas.begin(), metas.end());
}

std::size_t TensorMetaFIFO::size() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

TensorMeta TensorMetaFIFO::pop_matching(const Descriptor& d) {
  std::lock_guard lock(mu_);
  if (queue_.empty()) {
    throw MetaMismatch("no metadata queued for descriptor (step " + std::to_string(d.step_seq) +
                       ", hook " + std::to_string(d.hook_id) + ")");
  }
  const TensorMeta& head = queue_.front();
  if (head.step_seq != d.step_seq || head.hook_id != d.hook_id) {
    throw MetaMismatch("descriptor (step " + std::to_string(d.step_seq) + ", hook " +
                       std::to_string(d.hook_id) + ") does not match FIFO head (step " +
                       std::to_string(head.step_seq) + ", hook " + head.hook_name + ")");
  }
  TensorMeta out = std::move(queue_.front());
  queue_.pop_front();
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction

namespace {

CaptureRecord make_record(const TensorMeta& meta, std::size_t k,
                          std::span<const std::byte> bytes) {
  CaptureRecord r;
  r.request_id = meta.request_ids[k];
  r.hook_name = meta.hook_name;
  r.layer_index = meta.layer_index;
  r.rank = meta.rank;
  r.step_seq = meta.step_seq;
  r.token_range = meta.token_ranges[k];
  r.shape = meta.shape;
  r.dtype = meta.dtype;
  r.payload.assign(bytes.begin(), bytes.end());
  return r;
}

}  // namespace

std::vector<CaptureRecord> reconstruct(const Descriptor& d, std::span<const std::byte> payload,
                                       TensorMetaFIFO& fifo) {
  const TensorMeta meta = fifo.pop_matching(d);
  const std::uint64_t slice = meta.slice_bytes();
  const std::size_t n = meta.request_ids.size();
  if (meta.token_ranges.size() != n || payload.size() != d.payload_len ||
      slice * n != payload.size()) {
    throw MetaMismatch("payload of " + std::to_string(payload.size()) + " bytes for hook " +
                       meta.hook_name + " does not split into " + std::to_string(n) +
                       " slices of " + std::to_string(slice) + " bytes");
  }
  std::vector<CaptureRecord> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(make_record(meta, k, payload.subspan(k * slice, slice)));
  }
  return out;
}

std::vector<CaptureRecord> slice_direct(const TensorMeta& meta, const TensorView& view,
                                        const KeepDropVector& keep) {
  const std::uint64_t slice = view.slice_bytes();
  std::vector<CaptureRecord> out;
  std::size_t k = 0;
  for (std::size_t b = 0; b < keep.size(); ++b) {
    if (keep.flags[b] == 0) continue;
    out.push_back(make_record(meta, k++, view.bytes.subspan(b * slice, slice)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// StagingPool

StagingPool::StagingPool(std::uint32_t count, std::uint64_t buffer_size)
    : buffer_size_(buffer_size) {
  buffers_.resize(count);
  for (auto& b : buffers_) b.resize(buffer_size);
  for (std::uint32_t i = count; i > 0; --i) free_.push_back(i - 1);
}

std::optional<std::uint32_t> StagingPool::try_acquire() {
  std::lock_guard lock(mu_);
  if (free_.empty()) return std::nullopt;
  const std::uint32_t idx = free_.back();
  free_.pop_back();
  ++checked_out_;
  max_in_use_ = std::max(max_in_use_, count() - static_cast<std::uint32_t>(free_.size()));
  return idx;
}

std::uint32_t StagingPool::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return !free_.empty(); });
  const std::uint32_t idx = free_.back();
  free_.pop_back();
  ++checked_out_;
  max_in_use_ = std::max(max_in_use_, count() - static_cast<std::uint32_t>(free_.size()));
  return idx;
}

void StagingPool::release(std::uint32_t index) {
  {
    std::lock_guard lock(mu_);
    if (index >= buffers_.size() ||
        std::find(free_.begin(), free_.end(), index) != free_.end()) {
      throw std::logic_error("staging buffer released twice or unknown");
    }
    free_.push_back(index);
    ++returned_;
  }
  cv_.notify_one();
}

std::span<std::byte> StagingPool::buffer(std::uint32_t index) { return buffers_.at(index); }

std::uint32_t StagingPool::in_use() const {
  std::lock_guard lock(mu_);
  return count() - static_cast<std::uint32_t>(free_.size());
}

std::uint32_t StagingPool::max_in_use() const {
  std::lock_guard lock(mu_);
  return max_in_use_;
}

std::uint64_t StagingPool::checked_out() const {
  std::lock_guard lock(mu_);
  return checked_out_;
}

std::uint64_t StagingPool::returned() const {
  std::lock_guard lock(mu_);
  return returned_;
}

// ---------------------------------------------------------------------------
// Drain helpers

std::uint32_t evaluate_drain(std::span<const PendingEntry> pending, const DrainConfig& config,
                             SimTime now, bool flush) {
  if (pending.empty()) return kDrainNone;
  std::uint32_t reasons = kDrainNone;
  std::uint64_t bytes = 0;
  for (const auto& e : pending) bytes += e.descriptor.payload_len;
  if (pending.size() >= config.min_ready_entries) reasons |= kDrainEntries;
  if (bytes >= config.min_ready_bytes) reasons |= kDrainBytes;
  if (now - pending.front().ready_at >= seconds_to_sim(config.max_wait)) reasons |= kDrainTimeout;
  if (flush) reasons |= kDrainFlush;
  return reasons;
}

std::size_t select_batch(std::span<const PendingEntry> pending, std::uint64_t buffer_size) {
  std::size_t n = 0;
  std::uint64_t total = 0;
  for (const auto& e : pending) {
    if (n > 0 && total + e.descriptor.payload_len > buffer_size) break;
    total += e.descriptor.payload_len;
    ++n;
  }
  return n;
}

StagedBatch copy_to_staging(Ring2& ring, std::vector<Descriptor> batch, StagingPool& pool,
                            std::uint32_t buffer) {
  std::span<std::byte> dst = pool.buffer(buffer);
  std::uint64_t pos = 0;
  for (const auto& d : batch) {
    if (d.payload_len > dst.size() - pos) {
      throw std::length_error("drain batch exceeds the staging buffer size");
    }
    const auto src = std::as_const(ring).payload(d.payload_offset, d.payload_len);
    std::memcpy(dst.data() + pos, src.data(), src.size());
    pos += d.payload_len;
  }
  for (const auto& d : batch) ring.release_payload(d.payload_offset, d.payload_len);
  return StagedBatch{std::move(batch), buffer, pos};
}

PageableBatch stage_to_pageable(StagedBatch&& staged, StagingPool& pool) {
  PageableBatch out;
  const auto src = pool.buffer(staged.buffer).first(staged.bytes);
  out.bytes.assign(src.begin(), src.end());
  out.descriptors = std::move(staged.descriptors);
  pool.release(staged.buffer);
  return out;
}

std::vector<CaptureRecord> reconstruct_batch(const PageableBatch& batch, TensorMetaFIFO& fifo) {
  std::vector<CaptureRecord> out;
  std::span<const std::byte> bytes = batch.bytes;
  std::uint64_t pos = 0;
  for (const auto& d : batch.descriptors) {
    auto records = reconstruct(d, bytes.subspan(pos, d.payload_len), fifo);
    pos += d.payload_len;
    std::move(records.begin(), records.end(), std::back_inserter(out));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SimExporter

SimExporter::SimExporter(EventLoop& loop, Ring2& ring, const DrainConfig& config,
                         const DeviceCopyEngine& engine, TensorMetaFIFO& fifo, Sink& sink)
    : loop_(loop),
      ring_(ring),
      config_(config),
      engine_(engine),
      fifo_(fifo),
      sink_(sink),
      pool_(config.staging_buffer_count, config.staging_buffer_size) {
  config_.validate();
  stats_.transient_bound = ring.config().payload_capacity +
                           std::uint64_t{config.staging_buffer_count} * config.staging_buffer_size +
                           (std::uint64_t{config.queue_capacity} + 1) * config.staging_buffer_size;
}

void SimExporter::log(ExportEventKind kind, std::uint32_t reasons, std::uint32_t entries,
                      std::uint64_t bytes, std::int32_t buffer) {
  events_.push_back(ExportEvent{loop_.now(), kind, reasons, entries, bytes, buffer});
}

void SimExporter::sample_transient() {
  std::uint64_t pageable = sink_inflight_bytes_;
  for (const auto& b : pageable_) pageable += b.bytes.size();
  const std::uint64_t transient = ring_.state().occupancy() +
                                  std::uint64_t{pool_.in_use()} * pool_.buffer_size() + pageable;
  stats_.max_transient_bytes = std::max(stats_.max_transient_bytes, transient);
}

void SimExporter::notify_published() { kick_drain(); }

void SimExporter::request_flush(std::function<void()> done) {
  log(ExportEventKind::kFlushRequested, kDrainFlush, 0, ring_.state().occupancy(), -1);
  flush_requested_ = true;
  flush_waiters_.push_back(std::move(done));
  kick_drain();
  check_flush_done();
}

void SimExporter::wait_for_space(std::function<void()> callback) {
  space_waiters_.push_back(std::move(callback));
}

void SimExporter::finish(std::function<void()> done) {
  finish_waiters_.push_back(std::move(done));
  request_flush([this] { check_finished(); });
}

bool SimExporter::idle() const {
  return !draining_ && pending_.empty() && staged_.empty() && !stage_busy_ &&
         pageable_.empty() && !sink_busy_ && !flush_requested_ &&
         ring_.state().occupancy() == 0;
}

ExporterStats SimExporter::stats() const {
  ExporterStats s = stats_;
  s.staging_checked_out = pool_.checked_out();
  s.staging_returned = pool_.returned();
  s.staging_max_in_use = pool_.max_in_use();
  return s;
}

void SimExporter::kick_drain() {
  for (const auto& d : ring_.poll_ready(ring_.config().meta_slots)) {
    pending_.push_back(PendingEntry{d, loop_.now()});
  }
  if (draining_) return;
  if (pending_.empty()) {
    check_flush_done();
    return;
  }

  const std::vector<PendingEntry> view(pending_.begin(), pending_.end());
  const std::uint32_t reasons = evaluate_drain(view, config_, loop_.now(), flush_requested_);
  if (reasons == kDrainNone) {
    const SimTime deadline = pending_.front().ready_at + seconds_to_sim(config_.max_wait);
    if (timer_at_ != deadline) {
      timer_at_ = deadline;
      loop_.at(deadline, [this, deadline] {
        if (timer_at_ == deadline) timer_at_.reset();
        kick_drain();
      });
    }
    return;
  }

  const auto buffer = pool_.try_acquire();
  if (!buffer) {
    if (!waiting_for_staging_) log(ExportEventKind::kStagingWait, reasons, 0, 0, -1);
    waiting_for_staging_ = true;
    return;
  }
  waiting_for_staging_ = false;

  const std::size_t n = select_batch(view, pool_.buffer_size());
  auto batch = std::make_shared<std::vector<Descriptor>>();
  std::uint64_t bytes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bytes += pending_.front().descriptor.payload_len;
    batch->push_back(pending_.front().descriptor);
    pending_.pop_front();
  }
  draining_ = true;
  ++stats_.transfers;
  stats_.transferred_bytes += bytes;
  log(ExportEventKind::kDrainStart, reasons, static_cast<std::uint32_t>(n), bytes,
      static_cast<std::int32_t>(*buffer));
  sample_transient();

  const std::uint32_t buf = *buffer;
  loop_.after(engine_.d2h_time(bytes), [this, batch, buf] {
    complete_drain(copy_to_staging(ring_, std::move(*batch), pool_, buf));
  });
}

void SimExporter::complete_drain(StagedBatch batch) {
  draining_ = false;
  log(ExportEventKind::kDrainComplete, kDrainNone,
      static_cast<std::uint32_t>(batch.descriptors.size()), batch.bytes,
      static_cast<std::int32_t>(batch.buffer));
  staged_.push_back(std::move(batch));
  sample_transient();

  auto waiters = std::move(space_waiters_);
  space_waiters_.clear();
  for (auto& w : waiters) loop_.after(SimDuration::zero(), std::move(w));

  kick_stage();
  kick_drain();
  check_flush_done();
}

void SimExporter::kick_stage() {
  if (stage_busy_ || staged_.empty()) return;
  if (pageable_.size() >= config_.queue_capacity) return;
  auto item = std::make_shared<StagedBatch>(std::move(staged_.front()));
  staged_.pop_front();
  stage_busy_ = true;
  log(ExportEventKind::kStageStart, kDrainNone,
      static_cast<std::uint32_t>(item->descriptors.size()), item->bytes,
      static_cast<std::int32_t>(item->buffer));
  loop_.after(transfer_time(item->bytes, config_.pageable_copy_bandwidth), [this, item] {
    const auto buffer = static_cast<std::int32_t>(item->buffer);
    const auto bytes = item->bytes;
    const auto entries = static_cast<std::uint32_t>(item->descriptors.size());
    pageable_.push_back(stage_to_pageable(std::move(*item), pool_));
    log(ExportEventKind::kStagingReleased, kDrainNone, entries, bytes, buffer);
    stage_busy_ = false;
    sample_transient();
    if (waiting_for_staging_) kick_drain();
    kick_sink();
    kick_stage();
    check_finished();
  });
}

void SimExporter::kick_sink() {
  if (sink_busy_ || pageable_.empty()) return;
  PageableBatch batch = std::move(pageable_.front());
  pageable_.pop_front();
  sink_busy_ = true;
  sink_inflight_bytes_ = batch.bytes.size();
  auto records = std::make_shared<std::vector<CaptureRecord>>(reconstruct_batch(batch, fifo_));
  const auto cost = seconds_to_sim(config_.record_overhead * static_cast<double>(records->size()));
  loop_.after(cost, [this, records] {
    std::uint64_t bytes = 0;
    for (const auto& r : *records) bytes += r.payload.size();
    try {
      sink_.write(*records);
      stats_.records += records->size();
      stats_.record_bytes += bytes;
      log(ExportEventKind::kSinkWrite, kDrainNone, static_cast<std::uint32_t>(records->size()),
          bytes, -1);
    } catch (const std::exception&) {
      ++stats_.sink_failures;
      log(ExportEventKind::kSinkFailure, kDrainNone, static_cast<std::uint32_t>(records->size()),
          bytes, -1);
    }
    sink_busy_ = false;
    sink_inflight_bytes_ = 0;
    kick_stage();
    kick_sink();
    check_finished();
  });
}

void SimExporter::check_flush_done() {
  if (!flush_requested_ || draining_ || !pending_.empty()) return;
  if (ring_.state().occupancy() != 0) return;
  flush_requested_ = false;
  log(ExportEventKind::kFlushComplete, kDrainFlush, 0, 0, -1);
  auto waiters = std::move(flush_waiters_);
  flush_waiters_.clear();
  for (auto& w : waiters) loop_.after(SimDuration::zero(), std::move(w));
}

void SimExporter::check_finished() {
  if (finish_waiters_.empty() || !idle()) return;
  auto waiters = std::move(finish_waiters_);
  finish_waiters_.clear();
  for (auto& w : waiters) loop_.after(SimDuration::zero(), std::move(w));
}

}  // namespace ringscope
