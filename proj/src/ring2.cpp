// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/ring2.hpp"

#include <cstddef>
#include <cstring>
#include <mutex>
#include <new>
#include <string>

namespace ringscope {

namespace {

template <typename T>
void put_le(std::byte* out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  }
}

template <typename T>
T get_le(const std::byte* in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(in[i])) << (8 * i);
  }
  return static_cast<T>(v);
}

// Host-visible meta slot. Field order mirrors the wire layout.
struct alignas(64) MetaSlot {
  std::uint64_t payload_offset = 0;
  std::uint64_t payload_len = 0;
  std::uint32_t hook_id = 0;
  std::uint32_t step_seq = 0;
  std::atomic<std::uint64_t> ready_seq{kSentinel};
  std::array<std::byte, 32> reserved{};
};
static_assert(sizeof(MetaSlot) == kDescriptorSize);
static_assert(offsetof(MetaSlot, ready_seq) == 24);
static_assert(offsetof(MetaSlot, reserved) == 32);
static_assert(std::atomic<std::uint64_t>::is_always_lock_free);

}  // namespace

void RingConfig::validate() const {
  if (payload_capacity == 0 || payload_capacity % kCopyUnit != 0) {
    throw std::invalid_argument("payload_capacity must be a positive multiple of 16 bytes");
  }
  if (meta_slots == 0) {
    throw std::invalid_argument("meta_slots must be positive");
  }
  if (!(high_watermark > 0.0 && high_watermark <= 1.0)) {
    throw std::invalid_argument("high_watermark must be in (0, 1]");
  }
}

std::array<std::byte, kDescriptorSize> encode_descriptor(const Descriptor& d) {
  std::array<std::byte, kDescriptorSize> out{};
  put_le(out.data() + 0, d.payload_offset);
  put_le(out.data() + 8, d.payload_len);
  put_le(out.data() + 16, d.hook_id);
  put_le(out.data() + 20, d.step_seq);
  put_le(out.data() + 24, d.ready_seq);
  std::memcpy(out.data() + 32, d.reserved.data(), d.reserved.size());
  return out;
}

Descriptor decode_descriptor(std::span<const std::byte, kDescriptorSize> bytes) {
  Descriptor d;
  d.payload_offset = get_le<std::uint64_t>(bytes.data() + 0);
  d.payload_len = get_le<std::uint64_t>(bytes.data() + 8);
  d.hook_id = get_le<std::uint32_t>(bytes.data() + 16);
  d.step_seq = get_le<std::uint32_t>(bytes.data() + 20);
  d.ready_seq = get_le<std::uint64_t>(bytes.data() + 24);
  std::memcpy(d.reserved.data(), bytes.data() + 32, d.reserved.size());
  return d;
}

// ---------------------------------------------------------------------------
// DeviceArena

struct DeviceArena::Block::Ledger {
  std::mutex mu;
  std::uint64_t budget = 0;
  std::uint64_t used = 0;
};

DeviceArena::Block& DeviceArena::Block::operator=(Block&& other) noexcept {
  if (this != &other) {
    this->~Block();
    new (this) Block(std::move(other));
  }
  return *this;
}

DeviceArena::Block::~Block() {
  if (ledger_ && data_) {
    std::lock_guard lock(ledger_->mu);
    ledger_->used -= size_;
  }
}

DeviceArena::DeviceArena(std::uint64_t budget_bytes)
    : ledger_(std::make_shared<Block::Ledger>()) {
  ledger_->budget = budget_bytes;
}

DeviceArena::Block DeviceArena::allocate(std::uint64_t bytes) {
  {
    std::lock_guard lock(ledger_->mu);
    if (bytes > ledger_->budget - ledger_->used) {
      throw AllocationError("device arena exhausted: requested " + std::to_string(bytes) +
                            " bytes, " + std::to_string(ledger_->budget - ledger_->used) +
                            " available");
    }
    ledger_->used += bytes;
  }
  Block block;
  block.ledger_ = ledger_;
  block.size_ = bytes;
  try {
    block.data_ = std::make_unique_for_overwrite<std::byte[]>(bytes);
  } catch (const std::bad_alloc&) {
    block.data_.reset();
    std::lock_guard lock(ledger_->mu);
    ledger_->used -= bytes;
    throw AllocationError("host allocation failed for simulated device arena");
  }
  return block;
}

std::uint64_t DeviceArena::budget() const {
  std::lock_guard lock(ledger_->mu);
  return ledger_->budget;
}

std::uint64_t DeviceArena::used() const {
  std::lock_guard lock(ledger_->mu);
  return ledger_->used;
}

// ---------------------------------------------------------------------------
// PayloadCursor

std::optional<PayloadCursor::Placement> PayloadCursor::reserve(std::uint64_t len) {
  const std::uint64_t want = round_up_copy_unit(len);
  if (len == 0 || want > capacity) {
    throw std::invalid_argument("reservation length must be in (0, capacity]");
  }
  const std::uint64_t off = head % capacity;
  const std::uint64_t dead = off + want > capacity ? capacity - off : 0;

  Placement p;
  p.reserved = want;
  p.dead = dead;
  if (dead != 0 && head == tail) {
    // Nothing is outstanding, so the skipped bytes are passed immediately.
    tail += dead;
    head += dead;
    p.tail_realigned = true;
  } else {
    const std::uint64_t free_bytes = capacity - (head - tail);
    if (dead + want > free_bytes) return std::nullopt;
    head += dead;
  }
  p.offset = head % capacity;
  head += want;
  return p;
}

// ---------------------------------------------------------------------------
// Ring2

struct Ring2::Impl {
  RingConfig config;
  DeviceArena::Block payload;
  std::unique_ptr<MetaSlot[]> slots;

  alignas(64) std::atomic<std::uint64_t> payload_head{0};
  std::atomic<std::uint64_t> meta_head{0};
  alignas(64) std::atomic<std::uint64_t> payload_tail{0};
  std::atomic<std::uint64_t> meta_tail{0};

  // Absolute start position of the dead skip for laps with parity 0 and 1.
  // The producer can be at most one lap ahead of the tail.
  std::array<std::atomic<std::uint64_t>, 2> skip_start{kSentinel, kSentinel};

  alignas(64) std::atomic<std::uint64_t> bytes_reserved{0};
  std::atomic<std::uint64_t> dead_skipped{0};
  std::atomic<std::uint64_t> published{0};
  alignas(64) std::atomic<std::uint64_t> bytes_released{0};
  std::atomic<std::uint64_t> dead_passed{0};
  std::atomic<std::uint64_t> consumed{0};
};

Ring2::Ring2(const RingConfig& config, DeviceArena& arena) : impl_(std::make_unique<Impl>()) {
  config.validate();
  impl_->config = config;
  impl_->payload = arena.allocate(config.payload_capacity);
  impl_->slots = std::make_unique<MetaSlot[]>(config.meta_slots);
}

Ring2::Ring2(Ring2&&) noexcept = default;
Ring2& Ring2::operator=(Ring2&&) noexcept = default;
Ring2::~Ring2() = default;

const RingConfig& Ring2::config() const { return impl_->config; }

std::optional<std::uint64_t> Ring2::reserve_payload(std::uint64_t len) {
  Impl& s = *impl_;
  const std::uint64_t head = s.payload_head.load(std::memory_order_relaxed);
  const std::uint64_t tail = s.payload_tail.load(std::memory_order_acquire);
  PayloadCursor cursor{s.config.payload_capacity, head, tail};
  const auto placed = cursor.reserve(len);
  if (!placed) return std::nullopt;

  if (placed->dead != 0) {
    s.dead_skipped.fetch_add(placed->dead, std::memory_order_relaxed);
    if (placed->tail_realigned) {
      // The consumer has nothing outstanding and cannot touch the tail now.
      s.dead_passed.fetch_add(placed->dead, std::memory_order_relaxed);
      s.payload_tail.store(cursor.tail, std::memory_order_release);
    } else {
      const std::uint64_t lap = head / s.config.payload_capacity;
      s.skip_start[lap & 1].store(head, std::memory_order_release);
    }
  }
  s.bytes_reserved.fetch_add(placed->reserved, std::memory_order_relaxed);
  s.payload_head.store(cursor.head, std::memory_order_release);
  return placed->offset;
}

std::span<std::byte> Ring2::payload(std::uint64_t offset, std::uint64_t len) {
  if (offset > impl_->config.payload_capacity || len > impl_->config.payload_capacity - offset) {
    throw std::out_of_range("payload view crosses the end of the ring");
  }
  return {impl_->payload.data() + offset, static_cast<std::size_t>(len)};
}

std::span<const std::byte> Ring2::payload(std::uint64_t offset, std::uint64_t len) const {
  if (offset > impl_->config.payload_capacity || len > impl_->config.payload_capacity - offset) {
    throw std::out_of_range("payload view crosses the end of the ring");
  }
  return {impl_->payload.data() + offset, static_cast<std::size_t>(len)};
}

bool Ring2::meta_slot_available() const {
  const std::uint64_t head = impl_->meta_head.load(std::memory_order_relaxed);
  const MetaSlot& slot = impl_->slots[head % impl_->config.meta_slots];
  return slot.ready_seq.load(std::memory_order_acquire) == kSentinel;
}

bool Ring2::publish(const Descriptor& d) {
  Impl& s = *impl_;
  const std::uint64_t head = s.meta_head.load(std::memory_order_relaxed);
  MetaSlot& slot = s.slots[head % s.config.meta_slots];
  if (slot.ready_seq.load(std::memory_order_acquire) != kSentinel) return false;
  slot.payload_offset = d.payload_offset;
  slot.payload_len = d.payload_len;
  slot.hook_id = d.hook_id;
  slot.step_seq = d.step_seq;
  slot.reserved = d.reserved;
  slot.ready_seq.store(head, std::memory_order_release);
  s.published.fetch_add(1, std::memory_order_relaxed);
  s.meta_head.store(head + 1, std::memory_order_release);
  return true;
}

std::vector<Descriptor> Ring2::poll_ready(std::size_t max_n) {
  Impl& s = *impl_;
  std::vector<Descriptor> out;
  std::uint64_t tail = s.meta_tail.load(std::memory_order_relaxed);
  while (out.size() < max_n) {
    MetaSlot& slot = s.slots[tail % s.config.meta_slots];
    const std::uint64_t seq = slot.ready_seq.load(std::memory_order_acquire);
    if (seq == kSentinel) break;
    if (seq != tail) {
      throw std::logic_error("meta ring sequence gap: expected " + std::to_string(tail) +
                             ", found " + std::to_string(seq));
    }
    Descriptor d;
    d.payload_offset = slot.payload_offset;
    d.payload_len = slot.payload_len;
    d.hook_id = slot.hook_id;
    d.step_seq = slot.step_seq;
    d.ready_seq = seq;
    d.reserved = slot.reserved;
    out.push_back(d);
    slot.ready_seq.store(kSentinel, std::memory_order_release);
    ++tail;
    s.meta_tail.store(tail, std::memory_order_release);
  }
  s.consumed.fetch_add(out.size(), std::memory_order_relaxed);
  return out;
}

void Ring2::release_payload(std::uint64_t offset, std::uint64_t len) {
  Impl& s = *impl_;
  const std::uint64_t cap = s.config.payload_capacity;
  const std::uint64_t want = round_up_copy_unit(len);
  std::uint64_t tail = s.payload_tail.load(std::memory_order_acquire);
  const std::uint64_t head = s.payload_head.load(std::memory_order_acquire);

  std::uint64_t dead = 0;
  if (tail % cap != offset && tail != head &&
      s.skip_start[(tail / cap) & 1].load(std::memory_order_acquire) == tail) {
    dead = cap - tail % cap;
  }
  const std::uint64_t start = tail + dead;
  if (len == 0 || start % cap != offset || start + want > head) {
    throw OutOfOrderRelease("release of [" + std::to_string(offset) + ", +" +
                            std::to_string(len) + ") does not start at tail offset " +
                            std::to_string(start % cap));
  }
  if (dead != 0) s.dead_passed.fetch_add(dead, std::memory_order_relaxed);
  s.bytes_released.fetch_add(want, std::memory_order_relaxed);
  s.payload_tail.store(start + want, std::memory_order_release);
}

RingState Ring2::state() const {
  const Impl& s = *impl_;
  RingState st;
  st.payload_capacity = s.config.payload_capacity;
  st.meta_slots = s.config.meta_slots;
  st.payload_tail = s.payload_tail.load(std::memory_order_acquire);
  st.payload_head = s.payload_head.load(std::memory_order_acquire);
  st.meta_tail = s.meta_tail.load(std::memory_order_acquire);
  st.meta_head = s.meta_head.load(std::memory_order_acquire);
  const std::uint64_t skipped = s.dead_skipped.load(std::memory_order_acquire);
  const std::uint64_t passed = s.dead_passed.load(std::memory_order_acquire);
  st.dead_outstanding = skipped >= passed ? skipped - passed : 0;
  if (st.payload_tail > st.payload_head) st.payload_tail = st.payload_head;
  return st;
}

RingCounters Ring2::counters() const {
  const Impl& s = *impl_;
  return {s.bytes_reserved.load(), s.bytes_released.load(), s.dead_skipped.load(),
          s.dead_passed.load(),    s.published.load(),      s.consumed.load()};
}

std::array<std::byte, kDescriptorSize> Ring2::meta_slot_bytes(std::uint32_t slot_index) const {
  const MetaSlot& slot = impl_->slots.get()[slot_index % impl_->config.meta_slots];
  Descriptor d;
  d.payload_offset = slot.payload_offset;
  d.payload_len = slot.payload_len;
  d.hook_id = slot.hook_id;
  d.step_seq = slot.step_seq;
  d.ready_seq = slot.ready_seq.load(std::memory_order_acquire);
  d.reserved = slot.reserved;
  return encode_descriptor(d);
}

Ring2 allocate_rings(const RingConfig& config, DeviceArena& arena) { return Ring2(config, arena); }

Ring2 allocate_rings(const RingConfig& config) {
  config.validate();
  DeviceArena arena(config.payload_capacity);
  return Ring2(config, arena);
}

}  // namespace ringscope
