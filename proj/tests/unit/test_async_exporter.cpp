// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <thread>

#include "doctest.h"
#include "ringscope/async_exporter.hpp"

using namespace ringscope;

namespace {

DrainConfig fast_drain() {
  DrainConfig c;
  c.min_ready_entries = 4;
  c.min_ready_bytes = 8 << 10;
  c.max_wait = 1e-3;
  c.staging_buffer_size = 16 << 10;
  c.staging_buffer_count = 2;
  c.queue_capacity = 2;
  return c;
}

TensorMeta meta_for(std::uint32_t step, std::uint64_t len) {
  TensorMeta m;
  m.request_ids = {step};
  m.token_ranges = {TokenRange{0, 1}};
  m.shape = {static_cast<std::int64_t>(len)};
  m.dtype = DType::kUInt8;
  m.hook_name = "h";
  m.step_seq = step;
  return m;
}

}  // namespace

TEST_CASE("bounded queue") {
  BoundedQueue<int> q(2);
  CHECK(q.push(1));
  CHECK(q.push(2));
  std::thread producer([&] { q.push(3); });
  CHECK(q.pop() == 1);
  producer.join();
  CHECK(q.max_depth() == 2);
  CHECK(q.pop() == 2);
  CHECK(q.pop() == 3);
  q.close();
  CHECK_FALSE(q.pop().has_value());
  CHECK_FALSE(q.push(4));
}

TEST_CASE("threaded exporter delivers every entry in order") {
  Ring2 ring = allocate_rings(RingConfig{32 << 10, 16, 0.8});
  DeviceCopyEngine engine;
  TensorMetaFIFO fifo;
  MemorySink sink;
  AsyncExporter exporter(ring, fast_drain(), engine, fifo, sink, 0.01);
  exporter.start();
  std::mt19937_64 rng(4);
  std::vector<std::vector<std::byte>> sent;
  for (std::uint32_t i = 0; i < 300; ++i) {
    const std::uint64_t len = 1 + rng() % 3000;
    std::vector<std::byte> bytes(len);
    for (auto& b : bytes) b = static_cast<std::byte>(rng());
    std::optional<std::uint64_t> off;
    while (!(off = ring.reserve_payload(len))) exporter.wait_for_space(std::chrono::milliseconds(5));
    std::copy(bytes.begin(), bytes.end(), ring.payload(*off, len).begin());
    fifo.push(meta_for(i, len));
    Descriptor d;
    d.payload_offset = *off;
    d.payload_len = len;
    d.step_seq = i;
    while (!ring.publish(d)) exporter.wait_for_space(std::chrono::milliseconds(5));
    exporter.notify_published();
    sent.push_back(std::move(bytes));
  }
  exporter.stop();
  CHECK_FALSE(exporter.error());
  REQUIRE(sink.records().size() == sent.size());
  for (std::size_t i = 0; i < sent.size(); ++i) {
    REQUIRE(sink.records()[i].step_seq == i);
    REQUIRE(sink.records()[i].payload == sent[i]);
  }
  const auto s = exporter.stats();
  CHECK(s.staging_checked_out == s.staging_returned);
  CHECK(s.staging_max_in_use <= 2);
  CHECK(ring.state().occupancy() == 0);
}

TEST_CASE("metadata mismatch stops the threaded exporter") {
  Ring2 ring = allocate_rings(RingConfig{4096, 8, 0.8});
  DeviceCopyEngine engine;
  TensorMetaFIFO fifo;
  MemorySink sink;
  AsyncExporter exporter(ring, fast_drain(), engine, fifo, sink, 0.01);
  exporter.start();
  const auto off = ring.reserve_payload(64);
  REQUIRE(off);
  fifo.push(meta_for(5, 64));
  Descriptor d;
  d.payload_offset = *off;
  d.payload_len = 64;
  d.step_seq = 6;
  REQUIRE(ring.publish(d));
  exporter.notify_published();
  CHECK_THROWS_AS(exporter.stop(), MetaMismatch);
}
