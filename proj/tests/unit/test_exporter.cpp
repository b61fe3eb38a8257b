// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "ringscope/exporter.hpp"

using namespace ringscope;

namespace {

DrainConfig quiet_drain() {
  DrainConfig c;
  c.min_ready_entries = 1000;
  c.min_ready_bytes = 1ull << 40;
  c.max_wait = 1000.0;
  c.staging_buffer_size = 1 << 20;
  c.staging_buffer_count = 4;
  return c;
}

TensorMeta single_meta(std::uint32_t hook, std::uint32_t step, std::uint64_t len,
                       std::uint64_t request) {
  TensorMeta m;
  m.request_ids = {request};
  m.token_ranges = {TokenRange{0, 1}};
  m.shape = {static_cast<std::int64_t>(len)};
  m.dtype = DType::kUInt8;
  m.hook_id = hook;
  m.hook_name = "h" + std::to_string(hook);
  m.step_seq = step;
  return m;
}

struct Harness {
  explicit Harness(const DrainConfig& drain, RingConfig rc = RingConfig{1 << 20, 256, 0.8},
                   Sink* sink_override = nullptr)
      : ring(allocate_rings(rc)),
        exporter(loop, ring, drain, engine, fifo, sink_override ? *sink_override : sink) {}

  // Publishes one single-request entry whose bytes are a seeded pattern.
  std::vector<std::byte> put(std::uint64_t len, std::uint32_t hook = 0, std::uint32_t step = 0) {
    std::mt19937_64 rng(next_request * 7919 + len);
    std::vector<std::byte> bytes(len);
    for (auto& b : bytes) b = static_cast<std::byte>(rng());
    const auto off = ring.reserve_payload(len);
    REQUIRE(off);
    std::copy(bytes.begin(), bytes.end(), ring.payload(*off, len).begin());
    fifo.push(single_meta(hook, step, len, next_request++));
    Descriptor d;
    d.payload_offset = *off;
    d.payload_len = len;
    d.hook_id = hook;
    d.step_seq = step;
    REQUIRE(ring.publish(d));
    exporter.notify_published();
    return bytes;
  }

  std::vector<ExportEvent> of_kind(ExportEventKind k) const {
    std::vector<ExportEvent> out;
    for (const auto& e : exporter.events()) {
      if (e.kind == k) out.push_back(e);
    }
    return out;
  }

  EventLoop loop;
  DeviceCopyEngine engine;
  TensorMetaFIFO fifo;
  MemorySink sink;
  Ring2 ring;
  SimExporter exporter;
  std::uint64_t next_request = 0;
};

}  // namespace

TEST_CASE("drain config validation") {
  DrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.min_ready_entries = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = DrainConfig{};
  c.max_wait = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = DrainConfig{};
  c.staging_buffer_count = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("tensor meta FIFO matching") {
  TensorMetaFIFO fifo;
  fifo.push(single_meta(1, 0, 16, 0));
  fifo.push(single_meta(2, 0, 16, 1));
  Descriptor d;
  d.hook_id = 2;
  d.step_seq = 0;
  CHECK_THROWS_AS(fifo.pop_matching(d), MetaMismatch);
  CHECK(fifo.size() == 2);
  d.hook_id = 1;
  CHECK(fifo.pop_matching(d).hook_id == 1);
  d.step_seq = 1;
  d.hook_id = 2;
  CHECK_THROWS_AS(fifo.pop_matching(d), MetaMismatch);
  TensorMetaFIFO empty;
  CHECK_THROWS_AS(empty.pop_matching(d), MetaMismatch);
}

TEST_CASE("reconstruct splits along the batch dimension") {
  std::vector<std::byte> payload(48);
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::byte>(i);
  TensorMeta m;
  m.request_ids = {10, 11, 12};
  m.token_ranges = {{0, 4}, {4, 8}, {8, 12}};
  m.shape = {4, 2};
  m.dtype = DType::kFloat16;
  m.hook_id = 3;
  m.hook_name = "attn.1";
  m.layer_index = 1;
  m.rank = RankCoords{1, 0};
  m.step_seq = 5;
  Descriptor d;
  d.payload_len = 48;
  d.hook_id = 3;
  d.step_seq = 5;

  SUBCASE("three requests") {
    TensorMetaFIFO fifo;
    fifo.push(m);
    const auto recs = reconstruct(d, payload, fifo);
    REQUIRE(recs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(recs[i].request_id == 10 + i);
      CHECK(recs[i].token_range == m.token_ranges[i]);
      CHECK(recs[i].rank == m.rank);
      CHECK(recs[i].hook_name == "attn.1");
      CHECK(recs[i].layer_index == 1);
      CHECK(recs[i].shape == m.shape);
      CHECK(std::vector<std::byte>(payload.begin() + 16 * i, payload.begin() + 16 * (i + 1)) ==
            recs[i].payload);
    }
    CHECK(fifo.empty());
  }
  SUBCASE("single request") {
    TensorMeta one = m;
    one.request_ids = {7};
    one.token_ranges = {{0, 4}};
    TensorMetaFIFO fifo;
    fifo.push(one);
    Descriptor d1 = d;
    d1.payload_len = 16;
    const auto recs = reconstruct(d1, std::span(payload).first(16), fifo);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].payload == std::vector<std::byte>(payload.begin(), payload.begin() + 16));
  }
  SUBCASE("length disagreement") {
    TensorMetaFIFO fifo;
    fifo.push(m);
    Descriptor bad = d;
    bad.payload_len = 32;
    CHECK_THROWS_AS(reconstruct(bad, std::span(payload).first(32), fifo), MetaMismatch);
  }
}

TEST_CASE("staging pool") {
  StagingPool pool(2, 64);
  const auto a = pool.try_acquire();
  const auto b = pool.try_acquire();
  REQUIRE(a);
  REQUIRE(b);
  CHECK(*a != *b);
  CHECK_FALSE(pool.try_acquire());
  CHECK(pool.in_use() == 2);
  pool.release(*a);
  CHECK(pool.try_acquire() == a);
  pool.release(*a);
  pool.release(*b);
  CHECK(pool.checked_out() == 3);
  CHECK(pool.returned() == 3);
  CHECK(pool.max_in_use() == 2);
  CHECK(pool.buffer(0).size() == 64);
}

TEST_CASE("drain thresholds") {
  SUBCASE("nothing ready") {
    Harness h(quiet_drain());
    h.exporter.notify_published();
    h.loop.run();
    CHECK(h.exporter.events().empty());
    CHECK(h.exporter.stats().transfers == 0);
  }
  SUBCASE("entry count") {
    DrainConfig c = quiet_drain();
    c.min_ready_entries = 4;
    Harness h(c);
    for (int i = 0; i < 3; ++i) h.put(1024);
    CHECK(h.of_kind(ExportEventKind::kDrainStart).empty());
    h.put(1024);
    const auto starts = h.of_kind(ExportEventKind::kDrainStart);
    REQUIRE(starts.size() == 1);
    CHECK(starts[0].reasons == kDrainEntries);
    CHECK(starts[0].entries == 4);
    CHECK(starts[0].bytes == 4096);
    h.loop.run();
    CHECK(h.exporter.stats().transfers == 1);
    CHECK(h.exporter.stats().transferred_bytes == 4096);
    CHECK(h.sink.records().size() == 4);
  }
  SUBCASE("byte count with a single entry") {
    DrainConfig c = quiet_drain();
    c.min_ready_bytes = 64 << 10;
    Harness h(c);
    h.put(64 << 10);
    const auto starts = h.of_kind(ExportEventKind::kDrainStart);
    REQUIRE(starts.size() == 1);
    CHECK(starts[0].reasons == kDrainBytes);
    CHECK(starts[0].entries == 1);
  }
  SUBCASE("timeout") {
    DrainConfig c = quiet_drain();
    c.max_wait = 2e-3;
    Harness h(c);
    h.put(256);
    CHECK(h.of_kind(ExportEventKind::kDrainStart).empty());
    h.loop.run();
    const auto starts = h.of_kind(ExportEventKind::kDrainStart);
    REQUIRE(starts.size() == 1);
    CHECK(starts[0].reasons == kDrainTimeout);
    CHECK(starts[0].time == std::chrono::milliseconds(2));
  }
}

TEST_CASE("one staging buffer serializes drains behind the pageable copy") {
  DrainConfig c = quiet_drain();
  c.min_ready_entries = 1;
  c.staging_buffer_count = 1;
  Harness h(c);
  const auto first = h.put(4096);
  const auto second = h.put(4096);
  h.loop.run();
  const auto& ev = h.exporter.events();
  std::vector<std::size_t> starts;
  std::size_t first_release = ev.size();
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (ev[i].kind == ExportEventKind::kDrainStart) starts.push_back(i);
    if (ev[i].kind == ExportEventKind::kStagingReleased && first_release == ev.size()) first_release = i;
  }
  REQUIRE(starts.size() == 2);
  CHECK(first_release < starts[1]);
  CHECK(ev[first_release].time <= ev[starts[1]].time);
  CHECK_FALSE(h.of_kind(ExportEventKind::kStagingWait).empty());
  // Payload bytes survive the staging hop.
  REQUIRE(h.sink.records().size() == 2);
  CHECK(oracle::reference_crc32(h.sink.records()[0].payload) == oracle::reference_crc32(first));
  CHECK(oracle::reference_crc32(h.sink.records()[1].payload) == oracle::reference_crc32(second));
  CHECK(h.exporter.stats().staging_max_in_use == 1);
}

TEST_CASE("flush") {
  SUBCASE("empty ring returns at once") {
    Harness h(quiet_drain());
    bool done = false;
    h.exporter.request_flush([&] { done = true; });
    h.loop.run();
    CHECK(done);
    CHECK(h.loop.now().count() == 0);
  }
  SUBCASE("full ring drains to zero in about bytes over bandwidth") {
    DrainConfig c = quiet_drain();
    c.staging_buffer_size = 8 << 20;
    Harness h(c, RingConfig{16 << 20, 64, 0.8});
    for (int i = 0; i < 16; ++i) h.put(1 << 20);
    const std::uint64_t occupancy = h.ring.state().occupancy();
    CHECK(occupancy == h.ring.config().payload_capacity);
    SimTime done_at{-1};
    h.exporter.request_flush([&] { done_at = h.loop.now(); });
    h.loop.run();
    CHECK(h.ring.state().occupancy() == 0);
    const double expected = static_cast<double>(occupancy) / h.engine.d2h_bandwidth;
    CHECK(sim_to_seconds(done_at) == doctest::Approx(expected).epsilon(0.10));
    CHECK(h.sink.records().size() == 16);
  }
}

TEST_CASE("sink failures are counted and the run continues") {
  MemorySink inner;
  FaultInjectingSink faulty(inner, {0, 2});
  DrainConfig c = quiet_drain();
  c.min_ready_entries = 1;
  Harness h(c, RingConfig{1 << 20, 256, 0.8}, &faulty);
  for (int i = 0; i < 4; ++i) {
    h.put(512);
    h.loop.run();
  }
  bool finished = false;
  h.exporter.finish([&] { finished = true; });
  h.loop.run();
  CHECK(finished);
  CHECK(faulty.injected() == 2);
  CHECK(h.exporter.stats().sink_failures == 2);
  CHECK(h.exporter.stats().records == 2);
  CHECK(inner.records().size() == 2);
}

TEST_CASE("pool conservation and transient bound under load") {
  DrainConfig c;
  c.min_ready_entries = 3;
  c.min_ready_bytes = 16 << 10;
  c.max_wait = 1e-4;
  c.staging_buffer_size = 32 << 10;
  c.staging_buffer_count = 2;
  c.queue_capacity = 2;
  Harness h(c, RingConfig{64 << 10, 32, 0.8});
  std::mt19937_64 rng(5);
  std::uint64_t published = 0;
  for (int i = 0; i < 400; ++i) {
    const std::uint64_t len = 16 + rng() % 6000;
    // Let the exporter make progress until the ring has headroom.
    while (h.ring.state().occupancy() + 2 * len + 32 > h.ring.config().payload_capacity ||
           !h.ring.meta_slot_available()) {
      REQUIRE(h.loop.step());
    }
    h.put(len, 0, static_cast<std::uint32_t>(i));
    ++published;
    if (rng() % 3 == 0) h.loop.step();
  }
  bool finished = false;
  h.exporter.finish([&] { finished = true; });
  h.loop.run();
  const auto s = h.exporter.stats();
  CHECK(finished);
  CHECK(s.records == published);
  CHECK(s.staging_checked_out == s.staging_returned);
  CHECK(s.staging_max_in_use <= c.staging_buffer_count);
  CHECK(s.max_transient_bytes <= s.transient_bound);
  CHECK(h.exporter.idle());
}
