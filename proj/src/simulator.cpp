// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <thread>

#include "ringscope/async_exporter.hpp"
#include "ringscope/event_loop.hpp"

namespace ringscope {

// ---------------------------------------------------------------------------
// Config

void WorkloadSpec::validate() const {
  // decode_steps may be 0: a prefill-only run expresses a single-step burst.
  if (layers == 0 || hidden == 0 || batch == 0 || prefill_tokens == 0) {
    throw std::invalid_argument("workload counts must be positive");
  }
  if (!(prefill_time > 0.0) || !(decode_time > 0.0) || !std::isfinite(prefill_time) ||
      !std::isfinite(decode_time)) {
    throw std::invalid_argument("step compute times must be positive");
  }
  if (prompt_prefixes.empty()) throw std::invalid_argument("prompt_prefixes must not be empty");
  if (!admission.empty()) {
    std::uint64_t total = 0;
    std::optional<std::uint32_t> last;
    for (const auto& a : admission) {
      if (a.count == 0) throw std::invalid_argument("admission cohorts must be non-empty");
      if (last && a.iteration <= *last) {
        throw std::invalid_argument("admission iterations must be strictly increasing");
      }
      last = a.iteration;
      total += a.count;
    }
    if (total != batch) throw std::invalid_argument("admission schedule must admit exactly batch requests");
  }
}

std::uint32_t RankTopology::stage_of_layer(std::uint32_t layer, std::uint32_t layers) const {
  // Stage s owns layers [s*L/pp, (s+1)*L/pp).
  for (std::uint32_t s = pp; s > 0; --s) {
    const std::uint64_t first = std::uint64_t{s - 1} * layers / pp;
    if (layer >= first) return s - 1;
  }
  return 0;
}

std::vector<RankCoords> RankTopology::coords() const {
  std::vector<RankCoords> out;
  for (std::uint32_t s = 0; s < pp; ++s) {
    for (std::uint32_t t = 0; t < tp; ++t) out.push_back(RankCoords{t, s});
  }
  return out;
}

void RankTopology::validate(const WorkloadSpec& w) const {
  if (tp == 0 || pp == 0) throw std::invalid_argument("tp and pp must be positive");
  if (w.hidden % tp != 0) throw std::invalid_argument("hidden must be divisible by tp");
  if (w.layers < pp) throw std::invalid_argument("every pipeline stage needs at least one layer");
}

std::string_view run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::kNoCapture: return "no-capture";
    case RunMode::kSynchronous: return "synchronous";
    case RunMode::kCallback: return "callback";
    case RunMode::kRing2: return "ring2";
  }
  return "unknown";
}

RunMode parse_run_mode(std::string_view name) {
  if (name == "no-capture" || name == "none") return RunMode::kNoCapture;
  if (name == "synchronous" || name == "sync") return RunMode::kSynchronous;
  if (name == "callback") return RunMode::kCallback;
  if (name == "ring2") return RunMode::kRing2;
  throw std::invalid_argument("unknown mode: " + std::string(name));
}

HookRegistry build_registry(const RunConfig& cfg) {
  HookRegistry reg = install_hooks(ModelSpec{cfg.workload.layers, cfg.workload.hidden}, cfg.hooks);
  if (cfg.enabled_hooks) {
    reg.set_hook_filter(*cfg.enabled_hooks);
    reg.commit_filter();
  }
  return reg;
}

void RunConfig::validate() const {
  workload.validate();
  topology.validate(workload);
  build_registry(*this);
  policy.validate();
  ring.validate();
  drain.validate();
  engine.validate();
  if (ratio && !(*ratio > 0.0 && std::isfinite(*ratio))) {
    throw std::invalid_argument("ratio must be positive");
  }
}

// ---------------------------------------------------------------------------
// Schedule

std::vector<Pass> build_schedule(const WorkloadSpec& w, std::uint64_t seed) {
  w.validate();
  std::vector<Admission> cohorts = w.admission;
  if (cohorts.empty()) cohorts.push_back(Admission{0, w.batch});

  struct Req {
    StepRequest base;
    std::uint32_t admitted = 0;
    std::uint32_t decoded = 0;
  };
  std::mt19937_64 rng(seed);
  std::vector<Req> reqs;
  for (const auto& c : cohorts) {
    for (std::uint32_t i = 0; i < c.count; ++i) {
      const auto id = static_cast<std::uint64_t>(reqs.size());
      Req r;
      r.base.id = id;
      r.base.arrival_seq = id;
      r.base.prompt = w.prompt_prefixes[rng() % w.prompt_prefixes.size()] + " request " +
                      std::to_string(id);
      r.admitted = c.iteration;
      reqs.push_back(std::move(r));
    }
  }

  std::vector<Pass> passes;
  std::size_t finished = 0;
  for (std::uint32_t it = 0; finished < reqs.size(); ++it) {
    Pass prefill{static_cast<std::uint32_t>(passes.size()), true, {}, seconds_to_sim(w.prefill_time)};
    Pass decode{0, false, {}, seconds_to_sim(w.decode_time)};
    for (auto& r : reqs) {
      if (r.admitted == it) {
        StepRequest s = r.base;
        s.tokens = TokenRange{0, w.prefill_tokens};
        prefill.batch.push_back(std::move(s));
        if (w.decode_steps == 0) ++finished;
      } else if (r.admitted < it && r.decoded < w.decode_steps) {
        StepRequest s = r.base;
        s.tokens = TokenRange{w.prefill_tokens + r.decoded, w.prefill_tokens + r.decoded + 1};
        decode.batch.push_back(std::move(s));
        if (++r.decoded == w.decode_steps) ++finished;
      }
    }
    if (!prefill.batch.empty()) passes.push_back(std::move(prefill));
    if (!decode.batch.empty()) {
      decode.step_seq = static_cast<std::uint32_t>(passes.size());
      passes.push_back(std::move(decode));
    }
  }
  return passes;
}

// ---------------------------------------------------------------------------
// Synthetic tensors

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

std::uint64_t tensor_key(std::uint64_t seed, std::uint32_t step_seq, std::string_view hook_name,
                         std::uint64_t request_id) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ step_seq);
  k = splitmix64(k ^ fnv1a(hook_name));
  return splitmix64(k ^ request_id);
}

SliceGeometry slice_geometry(const HookSpec& hook, std::uint32_t tokens, std::uint64_t hidden,
                             const RankTopology& topology, std::uint32_t tp_rank) {
  SliceGeometry g;
  g.dims = hook.shape.evaluate(tokens, topology.shard_width(hidden));
  g.hidden_axis = hook.shape.hidden_axis();
  g.width = dtype_width(hook.dtype);
  if (g.hidden_axis) {
    const std::int64_t local = g.dims[*g.hidden_axis];
    g.full_axis = local * static_cast<std::int64_t>(topology.tp);
    g.shard_offset = local * static_cast<std::int64_t>(tp_rank);
  }
  return g;
}

void synthesize_slice(std::span<std::byte> out, std::uint64_t key, const SliceGeometry& g) {
  std::uint64_t outer = 1;
  std::uint64_t mid = 1;
  std::uint64_t inner = 1;
  std::uint64_t full_mid = 1;
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < g.dims.size(); ++i) {
    const auto d = static_cast<std::uint64_t>(g.dims[i]);
    if (g.hidden_axis && i < *g.hidden_axis) outer *= d;
    else if (g.hidden_axis && i == *g.hidden_axis) mid = d;
    else inner *= d;
  }
  if (g.hidden_axis) {
    full_mid = static_cast<std::uint64_t>(g.full_axis);
    offset = g.shard_offset;
  } else {
    full_mid = 1;
  }
  if (out.size() != outer * mid * inner * g.width) {
    throw std::invalid_argument("slice buffer does not match its geometry");
  }
  std::byte* p = out.data();
  for (std::uint64_t o = 0; o < outer; ++o) {
    for (std::uint64_t m = 0; m < mid; ++m) {
      const std::uint64_t base = (o * full_mid + static_cast<std::uint64_t>(offset) + m) * inner;
      for (std::uint64_t i = 0; i < inner; ++i) {
        std::uint64_t v = splitmix64(key ^ ((base + i) * 0xD6E8FEB86659FD93ull));
        for (std::uint32_t b = 0; b < g.width; ++b) {
          *p++ = static_cast<std::byte>(v & 0xFF);
          v >>= 8;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics

void pair_with_baseline(MetricsReport& run, const MetricsReport& baseline) {
  auto pct = [](SimDuration t, SimDuration base) {
    if (base.count() <= 0) return 0.0;
    return (sim_to_seconds(t) - sim_to_seconds(base)) / sim_to_seconds(base) * 100.0;
  };
  run.overhead_pct = pct(run.total_time, baseline.total_time);
  const std::size_t n = std::min(run.steps.size(), baseline.steps.size());
  for (std::size_t i = 0; i < n; ++i) {
    run.steps[i].overhead_pct = pct(run.steps[i].wall, baseline.steps[i].wall);
  }
}

std::vector<CaptureRecord> RunResult::all_records() const {
  std::vector<CaptureRecord> out;
  for (const auto& r : ranks) out.insert(out.end(), r.records.begin(), r.records.end());
  return out;
}

namespace {

// Hooks owned by one pipeline stage, with the user filter applied.
HookRegistry rank_registry(const RunConfig& cfg, RankCoords rank, bool all_hooks) {
  HookRegistry full = install_hooks(ModelSpec{cfg.workload.layers, cfg.workload.hidden}, cfg.hooks);
  if (cfg.enabled_hooks && !all_hooks) {
    full.set_hook_filter(*cfg.enabled_hooks);
    full.commit_filter();
  }
  std::map<std::string, HookPlacement> placement;
  for (const auto& d : cfg.hooks) placement[d.name] = d.placement;

  std::vector<HookSpec> owned;
  std::set<std::string> enabled;
  for (std::uint32_t id = 0; id < full.size(); ++id) {
    const HookSpec& h = full.hook(id);
    std::uint32_t stage = 0;
    if (h.layer_index) {
      stage = cfg.topology.stage_of_layer(static_cast<std::uint32_t>(*h.layer_index),
                                          cfg.workload.layers);
    } else if (placement.at(h.group) == HookPlacement::kAfterLayers) {
      stage = cfg.topology.pp - 1;
    }
    if (stage != rank.pp_stage) continue;
    owned.push_back(h);
    if (full.enabled(id)) enabled.insert(h.name);
  }
  HookRegistry reg(std::move(owned));
  reg.set_hook_filter(enabled);
  reg.commit_filter();
  return reg;
}

double rank_d2h_bandwidth(const RunConfig& cfg, RankCoords rank) {
  if (!cfg.ratio) return cfg.engine.d2h_bandwidth;
  const double gen = generation_rate(cfg, rank, cfg.ratio_uses_all_hooks);
  return gen > 0.0 ? gen / *cfg.ratio : cfg.engine.d2h_bandwidth;
}

StepContext context_for(const Pass& pass, RankCoords rank, const RunConfig& cfg) {
  return StepContext{pass.step_seq, rank, cfg.topology.shard_width(cfg.workload.hidden)};
}

// Synthesizes the full batch tensor of one hook firing into `buf`.
TensorView synthesize_tensor(std::vector<std::byte>& buf, const RunConfig& cfg, RankCoords rank,
                             const Pass& pass, const HookSpec& hook) {
  const std::uint32_t tokens = pass.batch.front().tokens.size();
  const SliceGeometry g = slice_geometry(hook, tokens, cfg.workload.hidden, cfg.topology, rank.tp_rank);
  const std::uint64_t slice = hook.slice_bytes(tokens, cfg.topology.shard_width(cfg.workload.hidden));
  buf.resize(slice * pass.batch.size());
  for (std::size_t b = 0; b < pass.batch.size(); ++b) {
    synthesize_slice(std::span<std::byte>(buf).subspan(b * slice, slice),
                     tensor_key(cfg.seed, pass.step_seq, hook.name, pass.batch[b].id), g);
  }
  TensorView view;
  view.bytes = buf;
  view.shape.push_back(static_cast<std::int64_t>(pass.batch.size()));
  view.shape.insert(view.shape.end(), g.dims.begin(), g.dims.end());
  view.dtype = hook.dtype;
  return view;
}

DropLogEntry drop_entry(const RunConfig& cfg, RankCoords rank, const Pass& pass,
                        const StepPlan& plan) {
  DropLogEntry e;
  e.step = pass.step_seq;
  e.rank = rank;
  e.capacity_requests = plan.capacity_requests;
  for (std::size_t i = 0; i < pass.batch.size(); ++i) {
    const auto& r = pass.batch[i];
    e.batch.push_back(r.id);
    (plan.keep.flags[i] != 0 ? e.kept : e.dropped).push_back(r.id);
    if (cfg.policy.predicate && cfg.policy.predicate->matches(r)) e.flagged.push_back(r.id);
  }
  return e;
}

void check_capture_sizes(const RunConfig& cfg, const HookRegistry& reg,
                         const std::vector<Pass>& schedule) {
  const std::uint64_t hidden = cfg.topology.shard_width(cfg.workload.hidden);
  for (const auto& pass : schedule) {
    for (const auto id : reg.enabled_ids()) {
      const std::uint64_t bytes =
          reg.hook(id).slice_bytes(pass.batch.front().tokens.size(), hidden) * pass.batch.size();
      if (round_up_copy_unit(bytes) > cfg.ring.payload_capacity) {
        throw std::invalid_argument("capture of hook " + reg.hook(id).name + " (" +
                                    std::to_string(bytes) + " bytes) exceeds the payload ring");
      }
      if (bytes > cfg.drain.staging_buffer_size) {
        throw std::invalid_argument("capture of hook " + reg.hook(id).name + " (" +
                                    std::to_string(bytes) + " bytes) exceeds a staging buffer");
      }
    }
  }
}

// One rank's run on a private virtual clock.
class RankSim {
 public:
  RankSim(const RunConfig& cfg, RankCoords rank, const std::vector<Pass>& schedule,
          Sink* extra_sink, bool keep_records)
      : cfg_(cfg),
        rank_(rank),
        schedule_(schedule),
        registry_(rank_registry(cfg, rank, false)),
        keep_records_(keep_records) {
    engine_ = cfg.engine;
    engine_.d2h_bandwidth = rank_d2h_bandwidth(cfg, rank);
    std::vector<Sink*> sinks{keep_records ? static_cast<Sink*>(&memory_) : &counter_};
    if (extra_sink != nullptr) sinks.push_back(extra_sink);
    tee_ = std::make_unique<TeeSink>(std::move(sinks));
    if (cfg.mode == RunMode::kRing2) {
      check_capture_sizes(cfg, registry_, schedule);
      ring_.emplace(allocate_rings(cfg.ring));
      exporter_ = std::make_unique<SimExporter>(loop_, *ring_, cfg.drain, engine_, fifo_, *tee_);
    }
  }

  RankResult run() {
    loop_.at(SimTime{0}, [this] { start_pass(); });
    loop_.run();
    if (!export_end_) throw std::logic_error("export pipeline did not drain");
    if (!fifo_.empty()) throw MetaMismatch("metadata left over after the run");

    MetricsReport& m = result_.metrics;
    m.inference_time = inference_end_;
    m.total_time = std::max(*export_end_, inference_end_);
    if (!m.steps.empty()) m.steps.back().wall += m.total_time - inference_end_;
    for (const auto& s : m.steps) {
      m.total_stall += s.stall;
      m.stall_events += s.stall_events;
      m.dropped_request_steps += s.drops;
      m.exported_bytes += s.exported_bytes;
    }
    m.d2h_bandwidth = engine_.d2h_bandwidth;
    m.generation_rate = generation_rate(cfg_, rank_, false);
    if (exporter_) {
      m.exporter = exporter_->stats();
      result_.events = exporter_->events();
      m.records = m.exporter.records;
      m.sink_failures = m.exporter.sink_failures;
    } else {
      m.records = sync_records_;
      m.sink_failures = sync_failures_;
    }
    result_.rank = rank_;
    result_.records = memory_.take();
    return std::move(result_);
  }

 private:
  const Pass& pass() const { return schedule_[pass_]; }

  void start_pass() {
    if (pass_ == schedule_.size()) return finish();
    registry_.commit_filter();
    const Pass& p = pass();
    cur_ = StepMetrics{};
    cur_.step = p.step_seq;
    cur_.prefill = p.prefill;
    cur_.hooks_enabled = static_cast<std::uint32_t>(registry_.enabled_count());
    pass_start_ = loop_.now();
    firing_.clear();
    fire_idx_ = 0;

    if (cfg_.mode != RunMode::kNoCapture) firing_ = registry_.enabled_ids();
    const bool live_policy = cfg_.mode == RunMode::kRing2;
    plan_ = prepare_step(live_policy ? cfg_.policy : PolicyConfig{}, p.batch,
                         live_policy ? ring_->state() : RingState{}, registry_,
                         context_for(p, rank_, cfg_));
    if (live_policy && cfg_.policy.mode == PolicyMode::kBestEffort) {
      result_.drops.push_back(drop_entry(cfg_, rank_, p, plan_));
    }
    cur_.drops = static_cast<std::uint32_t>(plan_.dropped.size());
    if (live_policy) fifo_.push(plan_.fifo_entries);

    if (live_policy && plan_.flush_before) {
      begin_stall();
      exporter_->request_flush([this] {
        end_stall();
        next_segment();
      });
      return;
    }
    next_segment();
  }

  void next_segment() {
    const Pass& p = pass();
    const auto n = static_cast<std::int64_t>(firing_.size());
    const SimDuration segment = p.compute / (n + 1);
    if (fire_idx_ < firing_.size()) {
      loop_.after(segment, [this] { fire(); });
    } else {
      loop_.after(p.compute - segment * n, [this] { end_pass(); });
    }
  }

  void fired() {
    ++fire_idx_;
    next_segment();
  }

  void fire() {
    if (plan_.keep.kept() == 0) return fired();
    const HookSpec& hook = registry_.hook(firing_[fire_idx_]);
    view_ = synthesize_tensor(tensor_, cfg_, rank_, pass(), hook);

    if (cfg_.mode == RunMode::kRing2) return try_capture();

    auto records = slice_direct(plan_.fifo_entries[fire_idx_], view_, plan_.keep);
    std::uint64_t bytes = 0;
    for (const auto& r : records) bytes += r.payload.size();
    SimDuration cost = engine_.d2h_time(bytes);
    if (cfg_.mode == RunMode::kCallback) cost += seconds_to_sim(engine_.callback_overhead);
    loop_.after(cost, [this, records = std::move(records), bytes] {
      try {
        tee_->write(records);
        sync_records_ += records.size();
      } catch (const std::exception&) {
        ++sync_failures_;
      }
      cur_.exported_bytes += bytes;
      fired();
    });
  }

  void try_capture() {
    auto staged = stage_capture(*ring_, firing_[fire_idx_], pass().step_seq, view_, plan_.keep);
    if (!staged) {
      if (cfg_.policy.mode == PolicyMode::kBestEffort) {
        throw PolicyUnderestimate("ring backpressure in a best-effort step (step " +
                                  std::to_string(pass().step_seq) + ")");
      }
      begin_stall();
      exporter_->wait_for_space([this] { try_capture(); });
      return;
    }
    end_stall();
    const StagedCapture s = *staged;
    loop_.after(engine_.d2d_time(s.bytes_written), [this, s] {
      commit_capture(*ring_, s);
      cur_.exported_bytes += s.bytes_written;
      exporter_->notify_published();
      fired();
    });
  }

  void begin_stall() {
    if (stall_since_) return;
    stall_since_ = loop_.now();
    ++cur_.stall_events;
    if (!result_.metrics.first_stall_step) result_.metrics.first_stall_step = cur_.step;
  }

  void end_stall() {
    if (!stall_since_) return;
    cur_.stall += loop_.now() - *stall_since_;
    stall_since_.reset();
  }

  void end_pass() {
    cur_.wall = loop_.now() - pass_start_;
    result_.metrics.steps.push_back(cur_);
    ++pass_;
    start_pass();
  }

  void finish() {
    inference_end_ = loop_.now();
    if (exporter_) {
      exporter_->finish([this] { export_end_ = loop_.now(); });
    } else {
      export_end_ = loop_.now();
    }
  }

  const RunConfig& cfg_;
  RankCoords rank_;
  const std::vector<Pass>& schedule_;
  HookRegistry registry_;
  bool keep_records_;
  DeviceCopyEngine engine_;
  EventLoop loop_;
  std::optional<Ring2> ring_;
  TensorMetaFIFO fifo_;
  MemorySink memory_;
  NullSink counter_;
  std::unique_ptr<TeeSink> tee_;
  std::unique_ptr<SimExporter> exporter_;

  std::size_t pass_ = 0;
  SimTime pass_start_{0};
  StepPlan plan_;
  std::vector<std::uint32_t> firing_;
  std::size_t fire_idx_ = 0;
  std::vector<std::byte> tensor_;
  TensorView view_;
  std::optional<SimTime> stall_since_;
  StepMetrics cur_;
  SimTime inference_end_{0};
  std::optional<SimTime> export_end_;
  std::uint64_t sync_records_ = 0;
  std::uint64_t sync_failures_ = 0;
  RankResult result_;
};

// Same producer contract against real threads and the wall clock. Metrics are
// measured, not modeled, and therefore not reproducible.
RankResult run_rank_wall_clock(const RunConfig& cfg, RankCoords rank,
                               const std::vector<Pass>& schedule, Sink* extra_sink) {
  using Clock = std::chrono::steady_clock;
  HookRegistry registry = rank_registry(cfg, rank, false);
  DeviceCopyEngine engine = cfg.engine;
  engine.d2h_bandwidth = rank_d2h_bandwidth(cfg, rank);
  MemorySink memory;
  std::vector<Sink*> sinks{&memory};
  if (extra_sink != nullptr) sinks.push_back(extra_sink);
  TeeSink tee(std::move(sinks));

  RankResult result;
  result.rank = rank;
  MetricsReport& m = result.metrics;
  m.d2h_bandwidth = engine.d2h_bandwidth;
  m.generation_rate = generation_rate(cfg, rank, false);

  std::optional<Ring2> ring;
  TensorMetaFIFO fifo;
  std::unique_ptr<AsyncExporter> exporter;
  if (cfg.mode == RunMode::kRing2) {
    check_capture_sizes(cfg, registry, schedule);
    ring.emplace(allocate_rings(cfg.ring));
    exporter = std::make_unique<AsyncExporter>(*ring, cfg.drain, engine, fifo, tee);
    exporter->start();
  }
  auto since = [](Clock::time_point t) {
    return std::chrono::duration_cast<SimDuration>(Clock::now() - t);
  };

  const auto run_start = Clock::now();
  std::vector<std::byte> buf;
  for (const Pass& p : schedule) {
    registry.commit_filter();
    StepMetrics cur;
    cur.step = p.step_seq;
    cur.prefill = p.prefill;
    cur.hooks_enabled = static_cast<std::uint32_t>(registry.enabled_count());
    const auto pass_start = Clock::now();
    const bool live = cfg.mode == RunMode::kRing2;
    const StepPlan plan = prepare_step(live ? cfg.policy : PolicyConfig{}, p.batch,
                                       live ? ring->state() : RingState{}, registry,
                                       context_for(p, rank, cfg));
    if (live && cfg.policy.mode == PolicyMode::kBestEffort) {
      result.drops.push_back(drop_entry(cfg, rank, p, plan));
    }
    cur.drops = static_cast<std::uint32_t>(plan.dropped.size());
    if (live) fifo.push(plan.fifo_entries);
    if (live && plan.flush_before) {
      const auto t0 = Clock::now();
      exporter->flush();
      cur.stall += since(t0);
      ++cur.stall_events;
      if (!m.first_stall_step) m.first_stall_step = p.step_seq;
    }

    const std::vector<std::uint32_t> firing =
        cfg.mode == RunMode::kNoCapture ? std::vector<std::uint32_t>{} : registry.enabled_ids();
    const auto segment = p.compute / static_cast<std::int64_t>(firing.size() + 1);
    for (std::size_t i = 0; i < firing.size(); ++i) {
      std::this_thread::sleep_for(segment);
      if (plan.keep.kept() == 0) continue;
      const TensorView view = synthesize_tensor(buf, cfg, rank, p, registry.hook(firing[i]));
      if (live) {
        const auto t0 = Clock::now();
        const auto out = capture(registry, *ring, firing[i], p.step_seq, view, plan.keep,
                                 cfg.policy.mode, [&] {
                                   exporter->wait_for_space(std::chrono::milliseconds(5));
                                   if (auto e = exporter->error()) std::rethrow_exception(e);
                                 });
        if (out.stalled.count() > 0) {
          cur.stall += since(t0);
          ++cur.stall_events;
          if (!m.first_stall_step) m.first_stall_step = p.step_seq;
        }
        cur.exported_bytes += out.bytes_written;
        exporter->notify_published();
      } else {
        auto records = slice_direct(plan.fifo_entries[i], view, plan.keep);
        std::uint64_t bytes = 0;
        for (const auto& r : records) bytes += r.payload.size();
        SimDuration cost = engine.d2h_time(bytes);
        if (cfg.mode == RunMode::kCallback) cost += seconds_to_sim(engine.callback_overhead);
        std::this_thread::sleep_for(cost);
        try {
          tee.write(records);
          ++m.records;
        } catch (const std::exception&) {
          ++m.sink_failures;
        }
        cur.exported_bytes += bytes;
      }
    }
    std::this_thread::sleep_for(p.compute - segment * static_cast<std::int64_t>(firing.size()));
    cur.wall = since(pass_start);
    m.steps.push_back(cur);
  }
  m.inference_time = since(run_start);
  if (exporter) {
    exporter->stop();
    m.exporter = exporter->stats();
    result.events = exporter->events();
    m.records = m.exporter.records;
    m.sink_failures = m.exporter.sink_failures;
    if (!fifo.empty()) throw MetaMismatch("metadata left over after the run");
  }
  m.total_time = since(run_start);
  if (!m.steps.empty()) m.steps.back().wall += m.total_time - m.inference_time;
  for (const auto& s : m.steps) {
    m.total_stall += s.stall;
    m.stall_events += s.stall_events;
    m.dropped_request_steps += s.drops;
    m.exported_bytes += s.exported_bytes;
  }
  result.records = memory.take();
  return result;
}

RankResult run_rank_impl(const RunConfig& cfg, RankCoords rank, const std::vector<Pass>& schedule,
                         Sink* extra_sink, bool keep_records) {
  if (cfg.wall_clock) return run_rank_wall_clock(cfg, rank, schedule, extra_sink);
  RankSim sim(cfg, rank, schedule, extra_sink, keep_records);
  return sim.run();
}

MetricsReport merge_metrics(const std::vector<RankResult>& ranks) {
  MetricsReport out;
  bool first = true;
  for (const auto& rr : ranks) {
    const MetricsReport& m = rr.metrics;
    if (first) {
      out.steps = m.steps;
      out.d2h_bandwidth = m.d2h_bandwidth;
    } else {
      for (std::size_t i = 0; i < out.steps.size() && i < m.steps.size(); ++i) {
        StepMetrics& s = out.steps[i];
        const StepMetrics& o = m.steps[i];
        s.wall = std::max(s.wall, o.wall);
        s.stall += o.stall;
        s.stall_events += o.stall_events;
        s.drops += o.drops;
        s.exported_bytes += o.exported_bytes;
        s.hooks_enabled += o.hooks_enabled;
      }
      out.d2h_bandwidth = std::min(out.d2h_bandwidth, m.d2h_bandwidth);
    }
    out.total_time = std::max(out.total_time, m.total_time);
    out.inference_time = std::max(out.inference_time, m.inference_time);
    out.total_stall += m.total_stall;
    out.stall_events += m.stall_events;
    if (m.first_stall_step &&
        (!out.first_stall_step || *m.first_stall_step < *out.first_stall_step)) {
      out.first_stall_step = m.first_stall_step;
    }
    out.dropped_request_steps += m.dropped_request_steps;
    out.exported_bytes += m.exported_bytes;
    out.records += m.records;
    out.sink_failures += m.sink_failures;
    out.generation_rate = std::max(out.generation_rate, m.generation_rate);

    ExporterStats& e = out.exporter;
    const ExporterStats& x = m.exporter;
    e.transfers += x.transfers;
    e.transferred_bytes += x.transferred_bytes;
    e.records += x.records;
    e.record_bytes += x.record_bytes;
    e.sink_failures += x.sink_failures;
    e.staging_checked_out += x.staging_checked_out;
    e.staging_returned += x.staging_returned;
    e.staging_max_in_use = std::max(e.staging_max_in_use, x.staging_max_in_use);
    e.max_transient_bytes = std::max(e.max_transient_bytes, x.max_transient_bytes);
    e.transient_bound = std::max(e.transient_bound, x.transient_bound);
    first = false;
  }
  return out;
}

}  // namespace

double generation_rate(const RunConfig& cfg, RankCoords rank, bool all_hooks) {
  const HookRegistry reg = rank_registry(cfg, rank, all_hooks);
  const auto schedule = build_schedule(cfg.workload, cfg.seed);
  const std::uint64_t hidden = cfg.topology.shard_width(cfg.workload.hidden);
  double bytes = 0.0;
  double compute = 0.0;
  for (const auto& p : schedule) {
    compute += sim_to_seconds(p.compute);
    for (const auto id : reg.enabled_ids()) {
      bytes += static_cast<double>(reg.hook(id).slice_bytes(p.batch.front().tokens.size(), hidden) *
                                   p.batch.size());
    }
  }
  return compute > 0.0 ? bytes / compute : 0.0;
}

RankResult run_rank(const RunConfig& cfg, RankCoords rank, Sink* extra_sink) {
  cfg.validate();
  const auto schedule = build_schedule(cfg.workload, cfg.seed);
  return run_rank_impl(cfg, rank, schedule, extra_sink, true);
}

std::vector<RankResult> run_multirank(const RunConfig& cfg, const RunOptions& options) {
  cfg.validate();
  const auto schedule = build_schedule(cfg.workload, cfg.seed);
  std::vector<RankResult> out;
  for (const auto& coords : cfg.topology.coords()) {
    Sink* extra = options.sink_for_rank ? options.sink_for_rank(coords) : nullptr;
    out.push_back(run_rank_impl(cfg, coords, schedule, extra, options.keep_records));
  }
  return out;
}

RunResult run_offline(const RunConfig& cfg, const RunOptions& options) {
  RunResult result;
  result.ranks = run_multirank(cfg, options);
  result.metrics = merge_metrics(result.ranks);
  if (!options.skip_baseline && !cfg.wall_clock) {
    RunConfig base = cfg;
    base.mode = RunMode::kNoCapture;
    RunOptions base_options;
    base_options.keep_records = false;
    const auto baseline = merge_metrics(run_multirank(base, base_options));
    pair_with_baseline(result.metrics, baseline);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Join

JoinResult join_records(std::span<const CaptureRecord> records, const RankTopology& topology,
                        const HookRegistry& registry) {
  std::map<JoinKey, std::vector<const CaptureRecord*>> groups;
  for (const auto& r : records) {
    groups[JoinKey{r.request_id, r.step_seq, r.hook_name, r.layer_index}].push_back(&r);
  }

  JoinResult out;
  for (const auto& [key, shards] : groups) {
    const auto id = registry.find(key.hook_name);
    if (!id) throw std::invalid_argument("record for unknown hook " + key.hook_name);
    const auto axis = registry.hook(*id).shape.hidden_axis();

    std::vector<const CaptureRecord*> by_rank(axis ? topology.tp : 1, nullptr);
    for (const auto* r : shards) {
      if (r->rank.tp_rank < by_rank.size() && by_rank[r->rank.tp_rank] == nullptr) {
        by_rank[r->rank.tp_rank] = r;
      }
    }
    if (std::any_of(by_rank.begin(), by_rank.end(), [](auto* p) { return p == nullptr; })) {
      out.missing_shards.push_back(key);
      continue;
    }

    CaptureRecord joined = *by_rank[0];
    joined.rank = RankCoords{};
    if (axis && topology.tp > 1) {
      const std::size_t a = *axis;
      const auto& dims = by_rank[0]->shape;
      std::uint64_t outer = 1;
      std::uint64_t inner = dtype_width(joined.dtype);
      for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i < a) outer *= static_cast<std::uint64_t>(dims[i]);
        if (i > a) inner *= static_cast<std::uint64_t>(dims[i]);
      }
      std::int64_t axis_total = 0;
      for (const auto* s : by_rank) {
        if (s->shape.size() != dims.size() || s->dtype != joined.dtype ||
            s->token_range != joined.token_range) {
          throw std::invalid_argument("inconsistent shards for hook " + key.hook_name);
        }
        for (std::size_t i = 0; i < dims.size(); ++i) {
          if (i != a && s->shape[i] != dims[i]) {
            throw std::invalid_argument("inconsistent shard shapes for hook " + key.hook_name);
          }
        }
        if (s->payload.size() != outer * inner * static_cast<std::uint64_t>(s->shape[a])) {
          throw std::invalid_argument("shard payload size mismatch for hook " + key.hook_name);
        }
        axis_total += s->shape[a];
      }
      joined.payload.clear();
      joined.payload.reserve(outer * inner * static_cast<std::uint64_t>(axis_total));
      for (std::uint64_t o = 0; o < outer; ++o) {
        for (const auto* s : by_rank) {
          const std::uint64_t chunk = inner * static_cast<std::uint64_t>(s->shape[a]);
          const auto* src = s->payload.data() + o * chunk;
          joined.payload.insert(joined.payload.end(), src, src + chunk);
        }
      }
      joined.shape[a] = axis_total;
    }
    out.records.push_back(std::move(joined));
  }
  return out;
}

}  // namespace ringscope
