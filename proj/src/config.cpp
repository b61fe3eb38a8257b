// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

namespace ringscope {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& obj, std::string_view where,
                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

HookPlacement parse_placement(const std::string& s) {
  if (s == "before_layers") return HookPlacement::kBeforeLayers;
  if (s == "after_layers") return HookPlacement::kAfterLayers;
  throw ConfigError("unknown hook placement: " + s);
}

std::string placement_name(HookPlacement p) {
  return p == HookPlacement::kBeforeLayers ? "before_layers" : "after_layers";
}

void parse_workload(const json& j, WorkloadSpec& w) {
  check_keys(j, "workload",
             {"layers", "hidden", "batch", "prefill_tokens", "decode_steps", "prefill_time",
              "decode_time", "admission", "prompt_prefixes"});
  read(j, "layers", w.layers);
  read(j, "hidden", w.hidden);
  read(j, "batch", w.batch);
  read(j, "prefill_tokens", w.prefill_tokens);
  read(j, "decode_steps", w.decode_steps);
  read(j, "prefill_time", w.prefill_time);
  read(j, "decode_time", w.decode_time);
  read(j, "prompt_prefixes", w.prompt_prefixes);
  if (j.contains("admission")) {
    w.admission.clear();
    for (const auto& a : j.at("admission")) {
      check_keys(a, "admission", {"iteration", "count"});
      Admission adm;
      read(a, "iteration", adm.iteration);
      read(a, "count", adm.count);
      w.admission.push_back(adm);
    }
  }
}

HookDecl parse_hook(const json& j) {
  check_keys(j, "hook", {"name", "per_layer", "shape", "dtype", "placement"});
  HookDecl d;
  read(j, "name", d.name);
  read(j, "per_layer", d.per_layer);
  std::vector<std::string> shape;
  read(j, "shape", shape);
  d.shape = ShapeTemplate::parse(shape);
  std::string dtype = std::string(dtype_name(d.dtype));
  read(j, "dtype", dtype);
  d.dtype = parse_dtype(dtype);
  std::string placement = placement_name(d.placement);
  read(j, "placement", placement);
  d.placement = parse_placement(placement);
  return d;
}

void parse_policy(const json& j, PolicyConfig& p) {
  check_keys(j, "policy",
             {"mode", "strategy", "keep_request_ids", "keep_prompt_prefix", "pressure_watermark"});
  std::string mode = "completeness";
  read(j, "mode", mode);
  if (mode == "completeness") p.mode = PolicyMode::kCompleteness;
  else if (mode == "best_effort") p.mode = PolicyMode::kBestEffort;
  else throw ConfigError("unknown policy mode: " + mode);
  if (j.contains("strategy")) {
    const auto s = j.at("strategy").get<std::string>();
    if (s == "drop_recent") p.strategy = DropStrategy::kDropRecent;
    else if (s == "keep_by_pattern") p.strategy = DropStrategy::kKeepByPattern;
    else throw ConfigError("unknown drop strategy: " + s);
  }
  if (j.contains("keep_request_ids") || j.contains("keep_prompt_prefix")) {
    KeepPredicate pred;
    read(j, "keep_request_ids", pred.request_ids);
    if (j.contains("keep_prompt_prefix")) {
      pred.prompt_prefix = j.at("keep_prompt_prefix").get<std::string>();
    }
    p.predicate = std::move(pred);
  }
  read(j, "pressure_watermark", p.pressure_watermark);
}

RunConfig from_json(const json& j) {
  check_keys(j, "config",
             {"seed", "mode", "workload", "topology", "hooks", "enabled_hooks", "policy", "ring",
              "drain", "engine", "ratio", "ratio_uses_all_hooks", "wall_clock", "sweep"});
  RunConfig c;
  c.hooks.clear();
  read(j, "seed", c.seed);
  if (j.contains("mode")) c.mode = parse_run_mode(j.at("mode").get<std::string>());
  if (j.contains("workload")) parse_workload(j.at("workload"), c.workload);
  if (j.contains("topology")) {
    const auto& t = j.at("topology");
    check_keys(t, "topology", {"tp", "pp"});
    read(t, "tp", c.topology.tp);
    read(t, "pp", c.topology.pp);
  }
  if (j.contains("hooks")) {
    for (const auto& h : j.at("hooks")) c.hooks.push_back(parse_hook(h));
  }
  if (j.contains("enabled_hooks")) {
    c.enabled_hooks = j.at("enabled_hooks").get<std::set<std::string>>();
  }
  if (j.contains("policy")) parse_policy(j.at("policy"), c.policy);
  if (j.contains("ring")) {
    const auto& r = j.at("ring");
    check_keys(r, "ring", {"payload_capacity", "meta_slots", "high_watermark"});
    read(r, "payload_capacity", c.ring.payload_capacity);
    read(r, "meta_slots", c.ring.meta_slots);
    read(r, "high_watermark", c.ring.high_watermark);
  }
  if (j.contains("drain")) {
    const auto& d = j.at("drain");
    check_keys(d, "drain",
               {"min_ready_entries", "min_ready_bytes", "max_wait", "staging_buffer_size",
                "staging_buffer_count", "queue_capacity", "pageable_copy_bandwidth",
                "record_overhead"});
    read(d, "min_ready_entries", c.drain.min_ready_entries);
    read(d, "min_ready_bytes", c.drain.min_ready_bytes);
    read(d, "max_wait", c.drain.max_wait);
    read(d, "staging_buffer_size", c.drain.staging_buffer_size);
    read(d, "staging_buffer_count", c.drain.staging_buffer_count);
    read(d, "queue_capacity", c.drain.queue_capacity);
    read(d, "pageable_copy_bandwidth", c.drain.pageable_copy_bandwidth);
    read(d, "record_overhead", c.drain.record_overhead);
  }
  if (j.contains("engine")) {
    const auto& e = j.at("engine");
    check_keys(e, "engine",
               {"d2d_bandwidth", "d2h_bandwidth", "d2h_latency", "launch_overhead",
                "callback_overhead"});
    read(e, "d2d_bandwidth", c.engine.d2d_bandwidth);
    read(e, "d2h_bandwidth", c.engine.d2h_bandwidth);
    read(e, "d2h_latency", c.engine.d2h_latency);
    read(e, "launch_overhead", c.engine.launch_overhead);
    read(e, "callback_overhead", c.engine.callback_overhead);
  }
  if (j.contains("ratio") && !j.at("ratio").is_null()) c.ratio = j.at("ratio").get<double>();
  read(j, "ratio_uses_all_hooks", c.ratio_uses_all_hooks);
  read(j, "wall_clock", c.wall_clock);
  c.policy.pressure_watermark = j.contains("policy") && j.at("policy").contains("pressure_watermark")
                                    ? c.policy.pressure_watermark
                                    : c.ring.high_watermark;
  return c;
}

}  // namespace

RunConfig parse_config(std::string_view json_text) {
  RunConfig cfg;
  try {
    cfg = from_json(json::parse(json_text));
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["mode"] = std::string(run_mode_name(c.mode));
  const auto& w = c.workload;
  j["workload"] = {{"layers", w.layers},
                   {"hidden", w.hidden},
                   {"batch", w.batch},
                   {"prefill_tokens", w.prefill_tokens},
                   {"decode_steps", w.decode_steps},
                   {"prefill_time", w.prefill_time},
                   {"decode_time", w.decode_time},
                   {"prompt_prefixes", w.prompt_prefixes}};
  j["workload"]["admission"] = ordered_json::array();
  for (const auto& a : w.admission) {
    j["workload"]["admission"].push_back({{"iteration", a.iteration}, {"count", a.count}});
  }
  j["topology"] = {{"tp", c.topology.tp}, {"pp", c.topology.pp}};
  j["hooks"] = ordered_json::array();
  for (const auto& h : c.hooks) {
    j["hooks"].push_back({{"name", h.name},
                          {"per_layer", h.per_layer},
                          {"shape", h.shape.to_strings()},
                          {"dtype", std::string(dtype_name(h.dtype))},
                          {"placement", placement_name(h.placement)}});
  }
  if (c.enabled_hooks) j["enabled_hooks"] = *c.enabled_hooks;
  ordered_json p;
  p["mode"] = c.policy.mode == PolicyMode::kCompleteness ? "completeness" : "best_effort";
  if (c.policy.strategy) {
    p["strategy"] = *c.policy.strategy == DropStrategy::kDropRecent ? "drop_recent"
                                                                    : "keep_by_pattern";
  }
  if (c.policy.predicate) {
    p["keep_request_ids"] = c.policy.predicate->request_ids;
    if (c.policy.predicate->prompt_prefix) {
      p["keep_prompt_prefix"] = *c.policy.predicate->prompt_prefix;
    }
  }
  p["pressure_watermark"] = c.policy.pressure_watermark;
  j["policy"] = p;
  j["ring"] = {{"payload_capacity", c.ring.payload_capacity},
               {"meta_slots", c.ring.meta_slots},
               {"high_watermark", c.ring.high_watermark}};
  const auto& d = c.drain;
  j["drain"] = {{"min_ready_entries", d.min_ready_entries},
                {"min_ready_bytes", d.min_ready_bytes},
                {"max_wait", d.max_wait},
                {"staging_buffer_size", d.staging_buffer_size},
                {"staging_buffer_count", d.staging_buffer_count},
                {"queue_capacity", d.queue_capacity},
                {"pageable_copy_bandwidth", d.pageable_copy_bandwidth},
                {"record_overhead", d.record_overhead}};
  const auto& e = c.engine;
  j["engine"] = {{"d2d_bandwidth", e.d2d_bandwidth},
                 {"d2h_bandwidth", e.d2h_bandwidth},
                 {"d2h_latency", e.d2h_latency},
                 {"launch_overhead", e.launch_overhead},
                 {"callback_overhead", e.callback_overhead}};
  if (c.ratio) j["ratio"] = *c.ratio;
  j["ratio_uses_all_hooks"] = c.ratio_uses_all_hooks;
  j["wall_clock"] = c.wall_clock;
  return j.dump(2);
}

RunConfig default_config() {
  RunConfig c;
  c.seed = 7;
  c.workload.layers = 4;
  c.workload.hidden = 64;
  c.workload.batch = 4;
  c.workload.prefill_tokens = 8;
  c.workload.decode_steps = 4;
  c.hooks.push_back(HookDecl{"hidden_state", true, ShapeTemplate::parse(std::vector<std::string>{"tokens", "hidden"}),
                             DType::kFloat16, HookPlacement::kAfterLayers});
  c.hooks.push_back(HookDecl{"mlp_out", true, ShapeTemplate::parse(std::vector<std::string>{"tokens", "4*hidden"}),
                             DType::kBFloat16, HookPlacement::kAfterLayers});
  c.hooks.push_back(HookDecl{"logit_stats", false, ShapeTemplate::parse(std::vector<std::string>{"tokens", "3"}),
                             DType::kFloat32, HookPlacement::kAfterLayers});
  c.ring = RingConfig{1ull << 20, 256, 0.8};
  c.drain.staging_buffer_size = 256ull << 10;
  c.drain.min_ready_bytes = 64ull << 10;
  return c;
}

}  // namespace ringscope
