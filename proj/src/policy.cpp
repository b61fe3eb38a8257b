// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/policy.hpp"

#include <algorithm>
#include <numeric>

namespace ringscope {

bool KeepPredicate::matches(const StepRequest& r) const {
  if (request_ids.count(r.id) != 0) return true;
  return prompt_prefix && r.prompt.starts_with(*prompt_prefix);
}

void PolicyConfig::validate() const {
  if (!(pressure_watermark > 0.0 && pressure_watermark <= 1.0)) {
    throw std::invalid_argument("pressure_watermark must be in (0, 1]");
  }
  if (mode == PolicyMode::kBestEffort && !strategy) {
    throw std::invalid_argument("best-effort policy needs a drop strategy");
  }
  const bool wants_predicate = strategy == DropStrategy::kKeepByPattern;
  if (wants_predicate != predicate.has_value()) {
    throw std::invalid_argument("a predicate is required exactly for keep-by-pattern");
  }
}

std::vector<std::uint64_t> estimate_step_bytes(const HookRegistry& registry,
                                               std::span<const StepRequest> batch,
                                               std::uint64_t hidden) {
  std::vector<std::uint64_t> out(batch.size(), 0);
  for (const auto id : registry.enabled_ids()) {
    const HookSpec& h = registry.hook(id);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out[i] += h.slice_bytes(batch[i].tokens.size(), hidden);
    }
  }
  return out;
}

bool plan_fits(const RingState& state, std::span<const std::uint64_t> region_lens) {
  const std::uint64_t meta_free = state.meta_slots - state.meta_occupancy();
  if (region_lens.size() > meta_free) return false;
  PayloadCursor cursor = state.cursor();
  for (const auto len : region_lens) {
    if (len == 0) continue;
    if (round_up_copy_unit(len) > cursor.capacity || !cursor.reserve(len)) return false;
  }
  return true;
}

std::vector<std::size_t> retention_order(const PolicyConfig& policy,
                                         std::span<const StepRequest> batch) {
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  auto by_arrival = [&](std::size_t a, std::size_t b) {
    return batch[a].arrival_seq < batch[b].arrival_seq;
  };
  if (policy.strategy == DropStrategy::kKeepByPattern && policy.predicate) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const bool fa = policy.predicate->matches(batch[a]);
      const bool fb = policy.predicate->matches(batch[b]);
      if (fa != fb) return fa;
      return by_arrival(a, b);
    });
  } else {
    std::stable_sort(order.begin(), order.end(), by_arrival);
  }
  return order;
}

namespace {

// Region sizes, in firing order, when the first `k` requests of `order` are
// kept.
std::vector<std::uint64_t> region_lengths(const HookRegistry& registry,
                                          std::span<const StepRequest> batch,
                                          std::span<const std::size_t> order, std::size_t k,
                                          std::uint64_t hidden) {
  std::vector<std::uint64_t> lens;
  for (const auto id : registry.enabled_ids()) {
    const HookSpec& h = registry.hook(id);
    std::uint64_t len = 0;
    for (std::size_t i = 0; i < k; ++i) len += h.slice_bytes(batch[order[i]].tokens.size(), hidden);
    if (len > 0) lens.push_back(len);
  }
  return lens;
}

}  // namespace

StepPlan prepare_step(const PolicyConfig& policy, std::span<const StepRequest> batch,
                      const RingState& ring_state, const HookRegistry& registry,
                      const StepContext& ctx) {
  for (const auto& r : batch) {
    if (r.tokens.size() == 0) throw std::invalid_argument("step request with empty token range");
    if (r.tokens.size() != batch.front().tokens.size()) {
      throw std::invalid_argument("all requests in a step must process the same token count");
    }
  }

  StepPlan plan;
  plan.keep = KeepDropVector::all(batch.size());

  if (policy.mode == PolicyMode::kCompleteness) {
    plan.flush_before = ring_state.pressure() >= policy.pressure_watermark;
    plan.capacity_requests = batch.size();
  } else {
    const auto order = retention_order(policy, batch);
    std::size_t k = batch.size();
    while (k > 0 && !plan_fits(ring_state, region_lengths(registry, batch, order, k, ctx.hidden))) {
      --k;
    }
    plan.capacity_requests = k;
    std::fill(plan.keep.flags.begin(), plan.keep.flags.end(), std::uint8_t{0});
    for (std::size_t i = 0; i < k; ++i) plan.keep.flags[order[i]] = 1;
  }

  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (plan.keep.flags[i] == 0) plan.dropped.push_back(batch[i].id);
  }
  if (plan.keep.kept() == 0) return plan;

  for (const auto id : registry.enabled_ids()) {
    const HookSpec& h = registry.hook(id);
    TensorMeta meta;
    meta.hook_id = id;
    meta.hook_name = h.name;
    meta.layer_index = h.layer_index;
    meta.dtype = h.dtype;
    meta.rank = ctx.rank;
    meta.step_seq = ctx.step_seq;
    meta.shape = h.shape.evaluate(batch.front().tokens.size(), ctx.hidden);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (plan.keep.flags[i] == 0) continue;
      meta.request_ids.push_back(batch[i].id);
      meta.token_ranges.push_back(batch[i].tokens);
    }
    plan.fifo_entries.push_back(std::move(meta));
  }
  return plan;
}

}  // namespace ringscope
