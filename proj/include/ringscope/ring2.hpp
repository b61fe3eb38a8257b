// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// Dual ring-buffer staging layer.
//
// A payload ring holds raw tensor bytes in a (simulated) device arena and a
// meta ring holds fixed 64-byte descriptors in host-visible memory. Exactly
// one producer (the capture path) and one consumer (the drain worker) operate
// on a ring pair. Positions are kept as monotonically increasing 64-bit byte
// counters; the physical offset is `pos % capacity`.
//
// Payload regions are always contiguous. When the space left before the end
// of the ring is too small for a reservation the producer skips to offset 0
// and the skipped bytes stay dead until the consumer's tail passes them.

#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace ringscope {

inline constexpr std::uint64_t kCopyUnit = 16;
inline constexpr std::size_t kDescriptorSize = 64;
inline constexpr std::uint64_t kSentinel = ~std::uint64_t{0};

constexpr std::uint64_t round_up_copy_unit(std::uint64_t n) {
  return (n + kCopyUnit - 1) / kCopyUnit * kCopyUnit;
}

class AllocationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when the consumer releases a payload region that does not start at
// the current tail (after any dead skip).
class OutOfOrderRelease : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct RingConfig {
  std::uint64_t payload_capacity = 0;
  std::uint32_t meta_slots = 0;
  double high_watermark = 0.8;

  // Throws std::invalid_argument.
  void validate() const;
};

// Wire layout, little-endian:
//   [0,8) payload_offset  [8,16) payload_len  [16,20) hook_id
//   [20,24) step_seq      [24,32) ready_seq   [32,64) reserved
struct Descriptor {
  std::uint64_t payload_offset = 0;
  std::uint64_t payload_len = 0;
  std::uint32_t hook_id = 0;
  std::uint32_t step_seq = 0;
  std::uint64_t ready_seq = kSentinel;
  std::array<std::byte, 32> reserved{};

  bool operator==(const Descriptor&) const = default;
};

std::array<std::byte, kDescriptorSize> encode_descriptor(const Descriptor& d);
Descriptor decode_descriptor(std::span<const std::byte, kDescriptorSize> bytes);

// Simulated device memory with a fixed byte budget. Blocks hand their bytes
// back to the arena when destroyed, so the arena may die before its blocks.
class DeviceArena {
 public:
  class Block {
   public:
    Block() = default;
    Block(Block&&) noexcept = default;
    Block& operator=(Block&&) noexcept;
    Block(const Block&) = delete;
    Block& operator=(const Block&) = delete;
    ~Block();

    std::byte* data() const { return data_.get(); }
    std::uint64_t size() const { return size_; }

   private:
    friend class DeviceArena;
    struct Ledger;
    std::shared_ptr<Ledger> ledger_;
    std::unique_ptr<std::byte[]> data_;
    std::uint64_t size_ = 0;
  };

  explicit DeviceArena(std::uint64_t budget_bytes);

  // Bytes are left uninitialized so that large simulated rings stay lazily
  // committed. Throws AllocationError.
  Block allocate(std::uint64_t bytes);

  std::uint64_t budget() const;
  std::uint64_t used() const;

 private:
  std::shared_ptr<Block::Ledger> ledger_;
};

// Producer/consumer cursor over the payload ring. This is the reservation
// arithmetic shared by the live ring and by planners that replay a sequence
// of reservations against a snapshot.
struct PayloadCursor {
  std::uint64_t capacity = 0;
  std::uint64_t head = 0;
  std::uint64_t tail = 0;

  struct Placement {
    std::uint64_t offset = 0;      // physical offset of the region
    std::uint64_t reserved = 0;    // rounded length
    std::uint64_t dead = 0;        // bytes skipped at the end of the ring
    bool tail_realigned = false;   // ring was empty and the tail moved with the skip
  };

  // Computes where a region of `len` bytes would land and advances the
  // cursor. Returns nullopt (cursor unchanged) when the ring is full.
  std::optional<Placement> reserve(std::uint64_t len);

  std::uint64_t used() const { return head - tail; }
};

struct RingState {
  std::uint64_t payload_capacity = 0;
  std::uint64_t payload_head = 0;   // monotonic byte position
  std::uint64_t payload_tail = 0;   // monotonic byte position
  std::uint64_t meta_head = 0;      // monotonic slot index
  std::uint64_t meta_tail = 0;      // monotonic slot index
  std::uint32_t meta_slots = 0;
  std::uint64_t dead_outstanding = 0;

  // head - tail: live bytes plus dead skip bytes not yet passed by the tail.
  std::uint64_t occupancy() const { return payload_head - payload_tail; }
  std::uint64_t live_bytes() const { return occupancy() - dead_outstanding; }
  std::uint64_t meta_occupancy() const { return meta_head - meta_tail; }
  double pressure() const {
    return payload_capacity == 0 ? 0.0
                                 : static_cast<double>(occupancy()) /
                                       static_cast<double>(payload_capacity);
  }
  PayloadCursor cursor() const { return {payload_capacity, payload_head, payload_tail}; }
};

struct RingCounters {
  std::uint64_t bytes_reserved = 0;   // rounded
  std::uint64_t bytes_released = 0;   // rounded
  std::uint64_t dead_skipped = 0;
  std::uint64_t dead_passed = 0;
  std::uint64_t published = 0;
  std::uint64_t consumed = 0;
};

class Ring2 {
 public:
  Ring2(const RingConfig& config, DeviceArena& arena);
  Ring2(Ring2&&) noexcept;
  Ring2& operator=(Ring2&&) noexcept;
  ~Ring2();

  const RingConfig& config() const;

  // --- producer side ---

  // Reserves a contiguous region of round_up(len) bytes. nullopt means the
  // ring is full (backpressure). Throws std::invalid_argument when len is 0
  // or larger than the ring.
  std::optional<std::uint64_t> reserve_payload(std::uint64_t len);

  // Writable/readable view of payload bytes; [offset, offset+len) must not
  // cross the end of the ring.
  std::span<std::byte> payload(std::uint64_t offset, std::uint64_t len);
  std::span<const std::byte> payload(std::uint64_t offset, std::uint64_t len) const;

  bool meta_slot_available() const;

  // Stores the descriptor fields, then publishes ready_seq with release
  // ordering. The descriptor's ready_seq is ignored; the ring assigns the
  // publication sequence. Returns false when the meta ring is full.
  [[nodiscard]] bool publish(const Descriptor& d);

  // --- consumer side ---

  // Up to max_n consecutive ready descriptors in publication order. Consumed
  // slots are reset to the sentinel.
  std::vector<Descriptor> poll_ready(std::size_t max_n);

  // Advances the tail past the region (and any dead skip before it).
  void release_payload(std::uint64_t offset, std::uint64_t len);

  // --- inspection (safe from either side) ---
  RingState state() const;
  RingCounters counters() const;
  double pressure() const { return state().pressure(); }

  // Raw 64-byte image of a meta slot, for wire-format checks.
  std::array<std::byte, kDescriptorSize> meta_slot_bytes(std::uint32_t slot) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Ring2 allocate_rings(const RingConfig& config, DeviceArena& arena);

// Allocates from a fresh arena sized to the payload ring.
Ring2 allocate_rings(const RingConfig& config);

}  // namespace ringscope
