// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic inference workload driving the capture path.
//
// Every rank runs its own ring, exporter and policy manager on a private
// virtual clock. A run is a sequence of forward passes ("steps"): a prefill
// pass for each admission cohort and a decode pass over all requests still
// generating. Tensor contents are seeded pseudo-random bytes addressed by
// their position in the full (unsharded) tensor, so records from different
// topologies can be compared byte for byte.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ringscope/capture.hpp"
#include "ringscope/exporter.hpp"
#include "ringscope/policy.hpp"
#include "ringscope/record.hpp"
#include "ringscope/ring2.hpp"
#include "ringscope/sink.hpp"

namespace ringscope {

struct Admission {
  std::uint32_t iteration = 0;
  std::uint32_t count = 0;
};

struct WorkloadSpec {
  std::uint32_t layers = 4;
  std::uint64_t hidden = 256;
  std::uint32_t batch = 8;
  std::uint32_t prefill_tokens = 16;
  std::uint32_t decode_steps = 8;
  double prefill_time = 4e-3;  // seconds of compute per prefill pass
  double decode_time = 2e-3;   // seconds of compute per decode pass
  std::vector<Admission> admission;  // empty: whole batch at iteration 0
  std::vector<std::string> prompt_prefixes{"chat:", "code:", "math:"};

  void validate() const;
};

struct RankTopology {
  std::uint32_t tp = 1;
  std::uint32_t pp = 1;

  std::uint32_t ranks() const { return tp * pp; }
  std::uint32_t stage_of_layer(std::uint32_t layer, std::uint32_t layers) const;
  std::uint64_t shard_width(std::uint64_t hidden) const { return hidden / tp; }
  std::vector<RankCoords> coords() const;
  void validate(const WorkloadSpec& w) const;
};

enum class RunMode : std::uint8_t { kNoCapture, kSynchronous, kCallback, kRing2 };

std::string_view run_mode_name(RunMode m);
RunMode parse_run_mode(std::string_view name);  // throws std::invalid_argument

struct RunConfig {
  std::uint64_t seed = 1;
  RunMode mode = RunMode::kRing2;
  WorkloadSpec workload;
  RankTopology topology;
  std::vector<HookDecl> hooks;
  std::optional<std::set<std::string>> enabled_hooks;  // default: all
  PolicyConfig policy;
  RingConfig ring{64ull << 20, 4096, 0.8};
  DrainConfig drain;
  DeviceCopyEngine engine;

  // When set, each rank's d2h bandwidth becomes generation_rate / ratio.
  std::optional<double> ratio;
  // Measure the generation rate with every hook enabled rather than the
  // enabled subset (used when sweeping hook sets at a fixed link speed).
  bool ratio_uses_all_hooks = false;

  // Run real worker threads against the wall clock instead of virtual time.
  bool wall_clock = false;

  void validate() const;  // throws std::invalid_argument
};

// --- schedule -------------------------------------------------------------

struct Pass {
  std::uint32_t step_seq = 0;
  bool prefill = false;
  std::vector<StepRequest> batch;  // arrival order
  SimDuration compute{0};
};

std::vector<Pass> build_schedule(const WorkloadSpec& w, std::uint64_t seed);

// --- synthetic tensors ----------------------------------------------------

struct SliceGeometry {
  std::vector<std::int64_t> dims;          // per-request dims on this rank
  std::optional<std::size_t> hidden_axis;  // sharded axis, if any
  std::int64_t shard_offset = 0;           // start of this shard along the axis
  std::int64_t full_axis = 0;              // unsharded length of the axis
  std::uint32_t width = 1;
};

SliceGeometry slice_geometry(const HookSpec& hook, std::uint32_t tokens, std::uint64_t hidden,
                             const RankTopology& topology, std::uint32_t tp_rank);

std::uint64_t tensor_key(std::uint64_t seed, std::uint32_t step_seq, std::string_view hook_name,
                         std::uint64_t request_id);

// Fills one request's slice. Element values depend only on (key, position in
// the full tensor).
void synthesize_slice(std::span<std::byte> out, std::uint64_t key, const SliceGeometry& g);

// --- metrics --------------------------------------------------------------

struct StepMetrics {
  std::uint32_t step = 0;
  bool prefill = false;
  SimDuration wall{0};
  SimDuration stall{0};
  std::uint32_t stall_events = 0;
  std::uint32_t drops = 0;  // requests not observed in this step
  std::uint64_t exported_bytes = 0;
  std::uint32_t hooks_enabled = 0;
  double overhead_pct = 0.0;
};

struct MetricsReport {
  std::vector<StepMetrics> steps;
  SimDuration total_time{0};      // until every record reached the sink
  SimDuration inference_time{0};  // until the last forward pass finished
  SimDuration total_stall{0};
  std::uint64_t stall_events = 0;
  std::optional<std::uint32_t> first_stall_step;
  std::uint64_t dropped_request_steps = 0;
  std::uint64_t exported_bytes = 0;
  std::uint64_t records = 0;
  std::uint64_t sink_failures = 0;
  double d2h_bandwidth = 0.0;
  double generation_rate = 0.0;  // bytes per second of compute
  double overhead_pct = 0.0;     // vs the paired no-capture run
  ExporterStats exporter;
};

// Fills overhead fields of `run` from a no-capture run of the same schedule.
void pair_with_baseline(MetricsReport& run, const MetricsReport& baseline);

struct DropLogEntry {
  std::uint32_t step = 0;
  RankCoords rank;
  std::vector<std::uint64_t> batch;  // arrival order
  std::vector<std::uint64_t> kept;
  std::vector<std::uint64_t> dropped;
  std::vector<std::uint64_t> flagged;
  std::size_t capacity_requests = 0;
};

struct RankResult {
  RankCoords rank;
  MetricsReport metrics;
  std::vector<CaptureRecord> records;  // sink arrival order
  std::vector<DropLogEntry> drops;
  std::vector<ExportEvent> events;
};

struct RunResult {
  MetricsReport metrics;  // merged across ranks
  std::vector<RankResult> ranks;

  std::vector<CaptureRecord> all_records() const;
};

struct RunOptions {
  // Optional extra sink per rank (e.g. a FileSink); may return nullptr.
  std::function<Sink*(RankCoords)> sink_for_rank;
  // Skip the paired no-capture run used for overhead_pct.
  bool skip_baseline = false;
  // Retain records in RankResult::records (disable for long sweeps).
  bool keep_records = true;
};

// Generation rate (bytes per compute second) of one rank for the config's
// hook set.
double generation_rate(const RunConfig& cfg, RankCoords rank, bool all_hooks);

// Runs one rank to completion.
RankResult run_rank(const RunConfig& cfg, RankCoords rank, Sink* extra_sink = nullptr);

// One independent instance per rank; no cross-rank traffic.
std::vector<RankResult> run_multirank(const RunConfig& cfg, const RunOptions& options = {});

// Runs every rank and merges metrics; overhead_pct is paired against a
// no-capture run of the same config unless disabled.
RunResult run_offline(const RunConfig& cfg, const RunOptions& options = {});

// --- cross-rank join ------------------------------------------------------

struct JoinKey {
  std::uint64_t request_id = 0;
  std::uint32_t step_seq = 0;
  std::string hook_name;
  std::optional<std::int32_t> layer_index;
  auto operator<=>(const JoinKey&) const = default;
};

struct JoinResult {
  std::vector<CaptureRecord> records;  // rank coordinates cleared
  std::vector<JoinKey> missing_shards;
};

// Concatenates tensor-parallel shards along the hidden axis in tp_rank order.
// Hooks without a hidden axis are replicated; the tp_rank 0 copy is used.
JoinResult join_records(std::span<const CaptureRecord> records, const RankTopology& topology,
                        const HookRegistry& registry);

// The full hook registry for a config (all layers, no stage filtering).
HookRegistry build_registry(const RunConfig& cfg);

}  // namespace ringscope
