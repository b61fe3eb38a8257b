// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <deque>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "ringscope/policy.hpp"

using namespace ringscope;

namespace {

HookRegistry registry_of(std::uint64_t layers, std::vector<std::string> dims,
                         DType dtype = DType::kFloat16, std::uint64_t hidden = 128) {
  const std::vector<HookDecl> decls{HookDecl{"h", true, ShapeTemplate::parse(dims), dtype, {}}};
  return install_hooks(ModelSpec{static_cast<std::uint32_t>(layers), hidden}, decls);
}

// Requests listed in batch order; `arrivals[i]` is request i's arrival rank.
std::vector<StepRequest> batch_of(const std::vector<std::uint64_t>& arrivals, std::uint32_t tokens = 1) {
  std::vector<StepRequest> out;
  for (std::size_t i = 0; i < arrivals.size(); ++i) {
    out.push_back(StepRequest{100 + i, arrivals[i], "p" + std::to_string(i), TokenRange{0, tokens}});
  }
  return out;
}

RingState empty_state(std::uint64_t capacity, std::uint32_t slots = 64) {
  RingState s;
  s.payload_capacity = capacity;
  s.meta_slots = slots;
  return s;
}

PolicyConfig best_effort(DropStrategy s, std::optional<KeepPredicate> p = std::nullopt) {
  PolicyConfig c;
  c.mode = PolicyMode::kBestEffort;
  c.strategy = s;
  c.predicate = std::move(p);
  return c;
}

std::vector<std::size_t> kept_indices(const StepPlan& plan) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < plan.keep.size(); ++i) {
    if (plan.keep.flags[i]) out.push_back(i);
  }
  return out;
}

}  // namespace

TEST_CASE("policy config validation") {
  PolicyConfig c;
  CHECK_NOTHROW(c.validate());
  // A strategy under completeness is carried along unused.
  c.strategy = DropStrategy::kDropRecent;
  CHECK_NOTHROW(c.validate());
  c.mode = PolicyMode::kBestEffort;
  c.strategy.reset();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = best_effort(DropStrategy::kDropRecent);
  CHECK_NOTHROW(c.validate());
  c.predicate = KeepPredicate{{1}, {}};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = best_effort(DropStrategy::kKeepByPattern);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.predicate = KeepPredicate{{}, std::string("chat:")};
  CHECK_NOTHROW(c.validate());
  c.pressure_watermark = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("keep predicate") {
  const KeepPredicate by_id{{7}, {}};
  const KeepPredicate by_prefix{{}, std::string("code:")};
  CHECK(by_id.matches(StepRequest{7, 0, "x", {}}));
  CHECK_FALSE(by_id.matches(StepRequest{8, 0, "code: y", {}}));
  CHECK(by_prefix.matches(StepRequest{8, 0, "code: y", {}}));
  CHECK_FALSE(by_prefix.matches(StepRequest{8, 0, "chat: code:", {}}));
}

TEST_CASE("step byte estimates") {
  SUBCASE("one hidden-state hook at decode") {
    const auto reg = registry_of(1, {"tokens", "hidden"}, DType::kFloat16, 1024);
    const auto b = batch_of({0, 1});
    CHECK(estimate_step_bytes(reg, b, 1024) == std::vector<std::uint64_t>{2048, 2048});
  }
  SUBCASE("no enabled hooks") {
    auto reg = registry_of(3, {"tokens", "hidden"});
    reg.set_hook_filter({});
    reg.commit_filter();
    CHECK(estimate_step_bytes(reg, batch_of({0}), 128) == std::vector<std::uint64_t>{0});
  }
  SUBCASE("prefill of 128 tokens against decode") {
    const auto reg = registry_of(2, {"tokens", "3*hidden"}, DType::kFloat32);
    const auto prefill = estimate_step_bytes(reg, batch_of({0}, 128), 128);
    const auto decode = estimate_step_bytes(reg, batch_of({0}, 1), 128);
    CHECK(prefill[0] == 128 * decode[0]);
    CHECK(decode[0] == 2 * 3 * 128 * 4);
  }
}

TEST_CASE("completeness plans") {
  const auto reg = registry_of(2, {"tokens", "hidden"});
  const auto b = batch_of({0, 1, 2});
  const StepContext ctx{3, RankCoords{}, 128};
  RingState s = empty_state(1000);
  s.payload_head = 900;
  auto plan = prepare_step(PolicyConfig{}, b, s, reg, ctx);
  CHECK(plan.flush_before);
  CHECK(plan.keep.all_kept());
  CHECK(plan.dropped.empty());
  CHECK(plan.fifo_entries.size() == 2);
  CHECK(plan.fifo_entries[0].request_ids == std::vector<std::uint64_t>{100, 101, 102});
  CHECK(plan.fifo_entries[1].step_seq == 3);
  s.payload_head = 799;
  plan = prepare_step(PolicyConfig{}, b, s, reg, ctx);
  CHECK_FALSE(plan.flush_before);
}

TEST_CASE("drop-recent keeps the earliest arrivals") {
  // One hook of 256 bytes per request; the ring holds exactly four.
  const auto reg = registry_of(1, {"tokens", "hidden"});
  const auto b = batch_of({3, 0, 5, 1, 4, 2});
  const StepContext ctx{0, RankCoords{}, 128};
  const auto plan = prepare_step(best_effort(DropStrategy::kDropRecent), b, empty_state(1024), reg, ctx);
  CHECK_FALSE(plan.flush_before);
  CHECK(plan.capacity_requests == 4);
  CHECK(kept_indices(plan) == std::vector<std::size_t>{0, 1, 3, 5});
  CHECK(plan.dropped == std::vector<std::uint64_t>{102, 104});
  REQUIRE(plan.fifo_entries.size() == 1);
  CHECK(plan.fifo_entries[0].request_ids == std::vector<std::uint64_t>{100, 101, 103, 105});

  const auto roomy = prepare_step(best_effort(DropStrategy::kDropRecent), b, empty_state(4096), reg, ctx);
  CHECK(roomy.keep.all_kept());
  CHECK(roomy.dropped.empty());
}

TEST_CASE("nothing fits: no fifo entries") {
  const auto reg = registry_of(1, {"tokens", "hidden"});
  RingState s = empty_state(1024);
  s.payload_head = 1000;
  const auto plan = prepare_step(best_effort(DropStrategy::kDropRecent), batch_of({0, 1}), s, reg,
                                 StepContext{0, {}, 128});
  CHECK(plan.keep.kept() == 0);
  CHECK(plan.fifo_entries.empty());
  CHECK(plan.dropped.size() == 2);
}

TEST_CASE("keep-by-pattern with room for one") {
  const auto reg = registry_of(1, {"tokens", "hidden"});
  auto b = batch_of({0, 1, 2, 3});
  b[2].id = 7;
  const auto plan = prepare_step(best_effort(DropStrategy::kKeepByPattern, KeepPredicate{{7}, {}}), b,
                                 empty_state(256), reg, StepContext{0, {}, 128});
  CHECK(kept_indices(plan) == std::vector<std::size_t>{2});
}

TEST_CASE("keep-by-pattern matches exhaustive enumeration") {
  std::mt19937_64 rng(17);
  const auto reg = registry_of(2, {"tokens", "hidden"});
  const std::uint64_t per_request = 2 * 256;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<std::uint64_t> arrivals(n);
    std::iota(arrivals.begin(), arrivals.end(), 0);
    std::shuffle(arrivals.begin(), arrivals.end(), rng);
    auto b = batch_of(arrivals);
    KeepPredicate pred;
    std::vector<bool> flagged(n);
    for (std::size_t i = 0; i < n; ++i) {
      flagged[i] = rng() % 3 == 0;
      if (flagged[i]) pred.request_ids.insert(b[i].id);
    }
    // Two regions of kept*256 bytes each must fit an empty ring of this size.
    const std::uint64_t cap = 16 * (1 + rng() % (n * per_request / 16 + 2));
    const auto plan = prepare_step(best_effort(DropStrategy::kKeepByPattern, pred), b,
                                   empty_state(cap), reg, StepContext{0, {}, 128});
    std::size_t k = 0;
    while (k < n && (k + 1) * 256 * 2 <= cap) ++k;
    REQUIRE(plan.keep.kept() == k);
    REQUIRE(kept_indices(plan) == oracle::best_keep_set(flagged, arrivals, k));
    // Dominance: no dropped flagged request next to a kept unflagged one.
    bool dropped_flagged = false;
    bool kept_unflagged = false;
    for (std::size_t i = 0; i < n; ++i) {
      dropped_flagged |= flagged[i] && !plan.keep.flags[i];
      kept_unflagged |= !flagged[i] && plan.keep.flags[i];
    }
    REQUIRE_FALSE((dropped_flagged && kept_unflagged));
  }
}

TEST_CASE("best-effort plans never overflow the real ring") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const std::uint64_t cap = 16 * (16 + rng() % 256);
    const auto slots = static_cast<std::uint32_t>(2 + rng() % 12);
    Ring2 ring = allocate_rings(RingConfig{cap, slots, 0.8});
    // Leave the ring in a random partially drained state.
    std::deque<Descriptor> live;
    for (int i = 0; i < 20; ++i) {
      const std::uint64_t len = 1 + rng() % (cap / 4);
      if (rng() % 2 == 0 && ring.meta_slot_available()) {
        if (const auto off = ring.reserve_payload(len)) {
          Descriptor d;
          d.payload_offset = *off;
          d.payload_len = len;
          REQUIRE(ring.publish(d));
        }
      } else {
        for (const auto& d : ring.poll_ready(1)) live.push_back(d);
        if (!live.empty() && rng() % 2 == 0) {
          ring.release_payload(live.front().payload_offset, live.front().payload_len);
          live.pop_front();
        }
      }
    }
    const std::uint32_t hooks = 1 + rng() % 4;
    const std::uint64_t hidden = 8 * (1 + rng() % 8);
    const auto reg = registry_of(hooks, {"tokens", "hidden"}, DType::kFloat16, hidden);
    std::vector<std::uint64_t> arrivals(1 + rng() % 8);
    std::iota(arrivals.begin(), arrivals.end(), 0);
    const std::uint32_t tokens = 1 + rng() % 3;
    const auto b = batch_of(arrivals, tokens);
    const auto plan = prepare_step(best_effort(DropStrategy::kDropRecent), b, ring.state(), reg,
                                   StepContext{0, {}, hidden});
    // Suffix property.
    for (std::size_t i = 1; i < plan.keep.size(); ++i) REQUIRE(plan.keep.flags[i] <= plan.keep.flags[i - 1]);
    if (plan.keep.kept() == 0) continue;
    const std::uint64_t slice = tokens * hidden * 2;
    std::vector<std::byte> data(b.size() * slice, std::byte{1});
    const TensorView view{data, {static_cast<std::int64_t>(b.size()), tokens, static_cast<std::int64_t>(hidden)},
                          DType::kFloat16};
    for (const auto id : reg.enabled_ids()) {
      const auto staged = stage_capture(ring, id, 0, view, plan.keep);
      REQUIRE(staged.has_value());
      commit_capture(ring, *staged);
    }
  }
}

TEST_CASE("plans are deterministic") {
  const auto reg = registry_of(3, {"tokens", "hidden"});
  const auto b = batch_of({4, 2, 0, 1, 3});
  RingState s = empty_state(4096);
  s.payload_head = 3000;
  s.payload_tail = 1200;
  const auto policy = best_effort(DropStrategy::kKeepByPattern, KeepPredicate{{}, std::string("p1")});
  const auto a = prepare_step(policy, b, s, reg, StepContext{1, {}, 128});
  const auto c = prepare_step(policy, b, s, reg, StepContext{1, {}, 128});
  CHECK(a.keep == c.keep);
  CHECK(a.dropped == c.dropped);
  CHECK(a.fifo_entries.size() == c.fifo_entries.size());
}
