// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// Per-step policy manager. Runs before each forward step and decides which
// requests are observed and whether the ring must be flushed first.

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ringscope/capture.hpp"
#include "ringscope/exporter.hpp"
#include "ringscope/ring2.hpp"
#include "ringscope/types.hpp"

namespace ringscope {

enum class DropStrategy : std::uint8_t { kDropRecent, kKeepByPattern };

struct StepRequest {
  std::uint64_t id = 0;
  std::uint64_t arrival_seq = 0;
  std::string prompt;
  TokenRange tokens;  // tokens processed for this request in this step
};

struct KeepPredicate {
  std::set<std::uint64_t> request_ids;
  std::optional<std::string> prompt_prefix;

  bool matches(const StepRequest& r) const;
};

struct PolicyConfig {
  PolicyMode mode = PolicyMode::kCompleteness;
  std::optional<DropStrategy> strategy;      // best-effort only
  std::optional<KeepPredicate> predicate;    // keep-by-pattern only
  double pressure_watermark = 0.8;

  void validate() const;  // throws std::invalid_argument
};

struct StepContext {
  std::uint32_t step_seq = 0;
  RankCoords rank;
  std::uint64_t hidden = 1;  // hidden width local to this rank
};

struct StepPlan {
  KeepDropVector keep;
  bool flush_before = false;
  std::vector<TensorMeta> fifo_entries;
  std::vector<std::uint64_t> dropped;     // request ids, batch order
  std::size_t capacity_requests = 0;      // largest request count the ring could take
};

// Bytes each request contributes to the step across all enabled hooks.
std::vector<std::uint64_t> estimate_step_bytes(const HookRegistry& registry,
                                               std::span<const StepRequest> batch,
                                               std::uint64_t hidden);

// True when the reservations in `region_lens` (in firing order) would all
// succeed against `state` with no further consumer progress.
bool plan_fits(const RingState& state, std::span<const std::uint64_t> region_lens);

// Requests in retention priority order (indices into batch).
std::vector<std::size_t> retention_order(const PolicyConfig& policy,
                                         std::span<const StepRequest> batch);

// All requests of a batch must process the same number of tokens in a step.
StepPlan prepare_step(const PolicyConfig& policy, std::span<const StepRequest> batch,
                      const RingState& ring_state, const HookRegistry& registry,
                      const StepContext& ctx);

}  // namespace ringscope
