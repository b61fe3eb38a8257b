// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <deque>
#include <random>
#include <utility>

#include "doctest.h"
#include "oracles.hpp"
#include "ringscope/ring2.hpp"

using namespace ringscope;

namespace {

Descriptor make_desc(std::uint64_t off, std::uint64_t len, std::uint32_t hook, std::uint32_t step) {
  Descriptor d;
  d.payload_offset = off;
  d.payload_len = len;
  d.hook_id = hook;
  d.step_seq = step;
  return d;
}

void validate_ring(std::uint64_t cap, std::uint32_t slots, double wm) {
  RingConfig{cap, slots, wm}.validate();
}

}  // namespace

TEST_CASE("ring config validation") {
  CHECK_NOTHROW(RingConfig{16, 1, 0.8}.validate());
  CHECK_THROWS_AS(validate_ring(0, 1, 0.8), std::invalid_argument);
  CHECK_THROWS_AS(validate_ring(24, 1, 0.8), std::invalid_argument);
  CHECK_THROWS_AS(validate_ring(16, 0, 0.8), std::invalid_argument);
  CHECK_THROWS_AS(validate_ring(16, 1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(validate_ring(16, 1, 1.5), std::invalid_argument);
  CHECK_NOTHROW(RingConfig{16, 1, 1.0}.validate());
}

TEST_CASE("allocate rings") {
  SUBCASE("large ring starts empty") {
    Ring2 ring = allocate_rings(RingConfig{2ull << 30, 4096, 0.8});
    CHECK(ring.state().occupancy() == 0);
    CHECK(ring.state().meta_occupancy() == 0);
  }
  SUBCASE("smallest legal ring") {
    Ring2 ring = allocate_rings(RingConfig{16, 1, 0.8});
    CHECK(ring.reserve_payload(16) == 0u);
    CHECK_FALSE(ring.reserve_payload(1).has_value());
  }
  SUBCASE("every meta slot starts as the sentinel") {
    Ring2 ring = allocate_rings(RingConfig{64, 3, 0.8});
    for (std::uint32_t s = 0; s < 3; ++s) {
      const auto img = ring.meta_slot_bytes(s);
      CHECK(oracle::read_le(img, 24, 8) == kSentinel);
    }
  }
  SUBCASE("two handles are independent") {
    DeviceArena arena(4096);
    Ring2 a = allocate_rings(RingConfig{1024, 4, 0.8}, arena);
    Ring2 b = allocate_rings(RingConfig{1024, 4, 0.8}, arena);
    const auto oa = a.reserve_payload(32);
    REQUIRE(oa);
    std::fill_n(a.payload(*oa, 32).data(), 32, std::byte{0xAA});
    const auto ob = b.reserve_payload(32);
    REQUIRE(ob);
    std::fill_n(b.payload(*ob, 32).data(), 32, std::byte{0x55});
    CHECK(a.payload(*oa, 32)[0] == std::byte{0xAA});
    CHECK(a.payload(*oa, 32).data() != b.payload(*ob, 32).data());
    CHECK(arena.used() == 2048);
  }
  SUBCASE("arena budget exhausted") {
    DeviceArena arena(1024);
    Ring2 a = allocate_rings(RingConfig{1024, 4, 0.8}, arena);
    CHECK_THROWS_AS(allocate_rings(RingConfig{16, 1, 0.8}, arena), AllocationError);
  }
}

TEST_CASE("descriptor wire format") {
  Descriptor d = make_desc(0x0102030405060708ull, 0x1112131415161718ull, 0xA1A2A3A4u, 0xB1B2B3B4u);
  d.ready_seq = 0xC1C2C3C4C5C6C7C8ull;
  const auto img = encode_descriptor(d);
  CHECK(img.size() == 64);
  CHECK(oracle::read_le(img, 0, 8) == d.payload_offset);
  CHECK(oracle::read_le(img, 8, 8) == d.payload_len);
  CHECK(oracle::read_le(img, 16, 4) == d.hook_id);
  CHECK(oracle::read_le(img, 20, 4) == d.step_seq);
  CHECK(oracle::read_le(img, 24, 8) == d.ready_seq);
  for (std::size_t i = 32; i < 64; ++i) CHECK(img[i] == std::byte{0});
  CHECK(decode_descriptor(img) == d);

  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    Descriptor r = make_desc(rng(), rng(), static_cast<std::uint32_t>(rng()),
                             static_cast<std::uint32_t>(rng()));
    r.ready_seq = rng();
    for (auto& b : r.reserved) b = static_cast<std::byte>(rng());
    REQUIRE(decode_descriptor(encode_descriptor(r)) == r);
  }
}

TEST_CASE("payload cursor arithmetic") {
  SUBCASE("empty ring") {
    PayloadCursor c{1024, 0, 0};
    const auto p = c.reserve(256);
    REQUIRE(p);
    CHECK(p->offset == 0);
    CHECK(c.head == 256);
  }
  SUBCASE("wrap with dead bytes") {
    // The oracle replays the same sequence on a byte map.
    oracle::ReferenceAllocator ref(1024);
    REQUIRE(ref.reserve(512) == 0u);
    REQUIRE(ref.reserve(388) == 512u);  // rounds to 400: write position 912
    REQUIRE(ref.release(0));
    const auto expected = ref.reserve(200);
    CHECK(expected == 0u);
    CHECK(ref.dead_bytes() == 112);

    PayloadCursor c{1024, 912, 512};
    const auto p = c.reserve(200);
    REQUIRE(p);
    CHECK(p->offset == *expected);
    CHECK(p->dead == 112);
    CHECK(p->reserved == 208);
    CHECK(c.head % 1024 == 208);
  }
  SUBCASE("wrap blocked by the tail") {
    oracle::ReferenceAllocator ref(1024);
    REQUIRE(ref.reserve(96) == 0u);
    REQUIRE(ref.reserve(816) == 96u);  // write position 912
    REQUIRE(ref.release(0));           // tail at 96
    CHECK_FALSE(ref.reserve(200).has_value());

    PayloadCursor c{1024, 912, 96};
    CHECK_FALSE(c.reserve(200).has_value());
    CHECK(c.head == 912);
  }
  SUBCASE("misaligned arithmetic") {
    PayloadCursor c{1024, 900, 512};
    const auto p = c.reserve(200);
    REQUIRE(p);
    CHECK(p->offset == 0);
    CHECK(p->dead == 124);
    CHECK(c.head - 900 == 124 + 208);
    PayloadCursor full{1024, 900, 100};
    CHECK_FALSE(full.reserve(200).has_value());
  }
  SUBCASE("invalid lengths") {
    PayloadCursor c{1024, 0, 0};
    CHECK_THROWS_AS(c.reserve(0), std::invalid_argument);
    CHECK_THROWS_AS(c.reserve(1025), std::invalid_argument);
  }
}

TEST_CASE("publish and poll") {
  Ring2 ring = allocate_rings(RingConfig{1024, 4, 0.8});

  SUBCASE("idle poll") { CHECK(ring.poll_ready(8).empty()); }

  SUBCASE("fields survive publication") {
    const auto off = ring.reserve_payload(48);
    REQUIRE(off);
    REQUIRE(ring.publish(make_desc(*off, 48, 5, 9)));
    const auto got = ring.poll_ready(4);
    REQUIRE(got.size() == 1);
    CHECK(got[0].payload_offset == *off);
    CHECK(got[0].payload_len == 48);
    CHECK(got[0].hook_id == 5);
    CHECK(got[0].step_seq == 9);
    CHECK(got[0].ready_seq == 0);
  }

  SUBCASE("bounded polls keep publication order") {
    for (std::uint32_t i = 0; i < 3; ++i) REQUIRE(ring.publish(make_desc(0, 16, i, 0)));
    const auto first = ring.poll_ready(2);
    REQUIRE(first.size() == 2);
    CHECK(first[0].hook_id == 0);
    CHECK(first[1].hook_id == 1);
    const auto second = ring.poll_ready(2);
    REQUIRE(second.size() == 1);
    CHECK(second[0].hook_id == 2);
  }

  SUBCASE("consumed slots return to the sentinel") {
    REQUIRE(ring.publish(make_desc(0, 16, 1, 0)));
    CHECK(oracle::read_le(ring.meta_slot_bytes(0), 24, 8) == 0);
    ring.poll_ready(1);
    CHECK(oracle::read_le(ring.meta_slot_bytes(0), 24, 8) == kSentinel);
  }
}

TEST_CASE("one-slot meta ring is full after one publish") {
  Ring2 ring = allocate_rings(RingConfig{64, 1, 0.8});
  REQUIRE(ring.publish(make_desc(0, 16, 0, 0)));
  CHECK_FALSE(ring.meta_slot_available());
  CHECK_FALSE(ring.publish(make_desc(16, 16, 0, 0)));
  ring.poll_ready(1);
  CHECK(ring.publish(make_desc(16, 16, 0, 0)));
}

TEST_CASE("release") {
  Ring2 ring = allocate_rings(RingConfig{1024, 8, 0.8});
  SUBCASE("single region") {
    const auto off = ring.reserve_payload(100);
    REQUIRE(off);
    ring.release_payload(*off, 100);
    CHECK(ring.state().occupancy() == 0);
  }
  SUBCASE("release jumps the dead skip") {
    const auto a = ring.reserve_payload(512);
    const auto b = ring.reserve_payload(400);
    REQUIRE(a);
    REQUIRE(b);
    ring.release_payload(*a, 512);
    const auto c = ring.reserve_payload(200);
    REQUIRE(c == 0u);
    CHECK(ring.state().dead_outstanding == 112);
    ring.release_payload(*b, 400);
    CHECK(ring.state().occupancy() == 112 + 208);
    ring.release_payload(*c, 200);
    CHECK(ring.state().occupancy() == 0);
    CHECK(ring.state().dead_outstanding == 0);
  }
  SUBCASE("out of order") {
    const auto a = ring.reserve_payload(64);
    const auto b = ring.reserve_payload(64);
    REQUIRE(a);
    REQUIRE(b);
    CHECK_THROWS_AS(ring.release_payload(*b, 64), OutOfOrderRelease);
  }
}

TEST_CASE("randomized protocol against the byte-map allocator") {
  // Also the acceptance workload at a smaller operation count.
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    std::mt19937_64 rng(seed);
    const std::uint64_t cap = 16 * (8 + rng() % 120);
    const auto slots = static_cast<std::uint32_t>(1 + rng() % 9);
    Ring2 ring = allocate_rings(RingConfig{cap, slots, 0.8});
    oracle::ReferenceAllocator ref(cap);
    struct Pending {
      std::uint64_t off, len;
      std::uint8_t tag;
    };
    std::deque<Pending> reserved;  // reserved, not yet published
    std::deque<Pending> published;
    std::deque<Pending> polled;
    std::uint64_t next_seq = 0;
    std::uint64_t total_reserved = 0;
    std::uint64_t total_released = 0;
    for (int op = 0; op < 5000; ++op) {
      const auto kind = rng() % 4;
      if (kind == 0 && reserved.empty()) {
        const std::uint64_t len = 1 + rng() % (cap / 2);
        const auto got = ring.reserve_payload(len);
        const auto want = ref.reserve(len);
        REQUIRE(got == want);
        if (got) {
          const auto tag = static_cast<std::uint8_t>(rng());
          std::fill_n(ring.payload(*got, len).data(), len, std::byte{tag});
          reserved.push_back({*got, len, tag});
          total_reserved += round_up_copy_unit(len);
        }
      } else if (kind == 1 && !reserved.empty()) {
        const auto p = reserved.front();
        if (ring.publish(make_desc(p.off, p.len, p.tag, 0))) {
          reserved.pop_front();
          published.push_back(p);
        } else {
          CHECK(ring.state().meta_occupancy() == slots);
        }
      } else if (kind == 2) {
        for (const auto& d : ring.poll_ready(1 + rng() % 4)) {
          REQUIRE(!published.empty());
          CHECK(d.ready_seq == next_seq++);
          CHECK(d.payload_offset == published.front().off);
          CHECK(d.hook_id == published.front().tag);
          polled.push_back(published.front());
          published.pop_front();
        }
      } else if (kind == 3 && !polled.empty()) {
        const auto p = polled.front();
        polled.pop_front();
        for (const auto b : std::as_const(ring).payload(p.off, p.len)) {
          REQUIRE(b == std::byte{p.tag});
        }
        ring.release_payload(p.off, p.len);
        REQUIRE(ref.release(p.off));
        total_released += round_up_copy_unit(p.len);
      }
      const RingState s = ring.state();
      REQUIRE(s.occupancy() <= cap);
      REQUIRE(s.live_bytes() == ref.live_bytes());
      REQUIRE(s.dead_outstanding == ref.dead_bytes());
      REQUIRE(total_reserved == total_released + s.live_bytes());
    }
  }
}
