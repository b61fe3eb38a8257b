// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <tuple>

#include "CLI11.hpp"
#include "json.hpp"
#include "ringscope/sink.hpp"

namespace ringscope {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt_seconds(SimDuration d) { return fmt_double(sim_to_seconds(d)); }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw SinkError("cannot write " + p.string());
}

std::uint32_t file_crc(const fs::path& p) {
  if (!fs::exists(p)) return 0;
  const std::string bytes = read_file(p);
  return crc32_of(std::as_bytes(std::span<const char>(bytes)));
}

std::string rank_dir_name(RankCoords r) {
  return "tp" + std::to_string(r.tp_rank) + "_pp" + std::to_string(r.pp_stage);
}

std::string policy_name(PolicyMode m) {
  return m == PolicyMode::kCompleteness ? "completeness" : "best_effort";
}

std::string drop_line(const DropLogEntry& e) {
  ordered_json j;
  j["step"] = e.step;
  j["tp_rank"] = e.rank.tp_rank;
  j["pp_stage"] = e.rank.pp_stage;
  j["batch"] = e.batch;
  j["kept"] = e.kept;
  j["dropped"] = e.dropped;
  j["flagged"] = e.flagged;
  j["capacity_requests"] = e.capacity_requests;
  return j.dump();
}

std::set<std::pair<std::uint32_t, std::uint64_t>> read_drop_log(const fs::path& p) {
  std::set<std::pair<std::uint32_t, std::uint64_t>> dropped;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    for (const auto id : j.at("dropped").get<std::vector<std::uint64_t>>()) {
      dropped.emplace(j.at("step").get<std::uint32_t>(), id);
    }
  }
  return dropped;
}

RunConfig point_config(const RunManifest& m, RunMode mode, std::optional<double> ratio) {
  RunConfig cfg = m.config;
  if (m.seed) cfg.seed = *m.seed;
  cfg.mode = mode;
  cfg.ratio = ratio;
  return cfg;
}

std::vector<std::optional<double>> ratio_axis(const RunManifest& m) {
  std::vector<std::optional<double>> out;
  for (const double r : m.ratios) out.emplace_back(r);
  if (out.empty()) out.push_back(m.config.ratio);
  return out;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const MetaMismatch& e) {
    err << "protocol error: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const PolicyUnderestimate& e) {
    err << "protocol error: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitMismatch;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

void RunManifest::validate() const {
  for (const double r : ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("sweep values must be positive");
  }
  for (const auto c : ring_capacities) {
    if (c == 0) throw ConfigError("ring capacities must be positive");
  }
  if (out_dir.empty()) throw ConfigError("output directory is empty");
}

RunManifest load_manifest(const fs::path& config_path) {
  RunManifest m;
  m.config_path = config_path;
  const std::string text = read_file(config_path);
  m.config = parse_config(text);
  const json j = json::parse(text);
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    try {
      if (s.contains("ratios")) m.ratios = s.at("ratios").get<std::vector<double>>();
      if (s.contains("modes")) {
        for (const auto& name : s.at("modes").get<std::vector<std::string>>()) {
          m.modes.push_back(parse_run_mode(name));
        }
      }
      if (s.contains("hook_sets")) {
        m.hook_sets = s.at("hook_sets").get<std::vector<std::vector<std::string>>>();
      }
      if (s.contains("ring_capacities")) {
        m.ring_capacities = s.at("ring_capacities").get<std::vector<std::uint64_t>>();
      }
      if (s.contains("policies")) {
        for (const auto& name : s.at("policies").get<std::vector<std::string>>()) {
          if (name == "completeness") m.policies.push_back(PolicyMode::kCompleteness);
          else if (name == "best_effort") m.policies.push_back(PolicyMode::kBestEffort);
          else throw ConfigError("unknown policy in sweep: " + name);
        }
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad sweep section: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  m.out_dir = resolve_out_dir(std::nullopt);
  return m;
}

fs::path resolve_out_dir(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return *flag;
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
  return "ringscope-out";
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("not a number: " + item);
    }
  }
  return out;
}

std::vector<RunMode> parse_mode_list(const std::string& csv) {
  std::vector<RunMode> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(parse_run_mode(item));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

std::string point_name(RunMode mode, std::optional<double> ratio) {
  std::string name(run_mode_name(mode));
  if (ratio) name += "_r" + fmt_double(*ratio);
  return name;
}

std::string metrics_csv_rows(const MetricsReport& m, RunMode mode, std::optional<double> ratio,
                             std::uint64_t ring_bytes) {
  const std::string mode_s(run_mode_name(mode));
  const std::string ratio_s = ratio ? fmt_double(*ratio) : "";
  const std::string ring_s = mode == RunMode::kRing2 ? std::to_string(ring_bytes) : "0";
  std::string out;
  std::uint32_t hooks = 0;
  for (const auto& s : m.steps) {
    hooks = std::max(hooks, s.hooks_enabled);
    out += std::to_string(s.step) + "," + mode_s + "," + ratio_s + "," +
           std::to_string(s.hooks_enabled) + "," + ring_s + "," + fmt_seconds(s.wall) + "," +
           fmt_seconds(s.stall) + "," + std::to_string(s.drops) + "," +
           std::to_string(s.exported_bytes) + "," + fmt_double(s.overhead_pct) + "\n";
  }
  out += "summary," + mode_s + "," + ratio_s + "," + std::to_string(hooks) + "," + ring_s + "," +
         fmt_seconds(m.total_time) + "," + fmt_seconds(m.total_stall) + "," +
         std::to_string(m.dropped_request_steps) + "," + std::to_string(m.exported_bytes) + "," +
         fmt_double(m.overhead_pct) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Verify

VerifyReport verify_dataset(const fs::path& point_dir, const RunConfig& cfg) {
  RunConfig ref_cfg = cfg;
  ref_cfg.mode = RunMode::kSynchronous;
  ref_cfg.wall_clock = false;
  RunOptions options;
  options.skip_baseline = true;
  const auto reference = run_multirank(ref_cfg, options);
  const HookRegistry registry = build_registry(cfg);

  using Key = std::tuple<RankCoords, std::uint64_t, std::uint32_t, std::string,
                         std::optional<std::int32_t>>;
  auto key_of = [](const CaptureRecord& r) {
    return Key{r.rank, r.request_id, r.step_seq, r.hook_name, r.layer_index};
  };

  VerifyReport report;
  for (const auto& h : registry.hooks()) {
    if (registry.enabled(*registry.find(h.name))) report.diffs_per_hook[h.name] = 0;
  }
  for (const auto& rank : reference) {
    const fs::path dir = point_dir / rank_dir_name(rank.rank);
    DatasetReadResult data;
    if (fs::exists(dir / "index.ndjson")) data = read_dataset(dir);
    report.checksum_failures += data.checksum_failures;
    report.dataset_records += data.records.size();

    std::set<std::pair<std::uint32_t, std::uint64_t>> dropped;
    if (cfg.policy.mode == PolicyMode::kBestEffort) dropped = read_drop_log(dir / "drops.ndjson");

    std::map<Key, std::vector<const CaptureRecord*>> expected;
    std::map<Key, std::vector<const CaptureRecord*>> actual;
    for (const auto& r : rank.records) {
      if (dropped.count({r.step_seq, r.request_id}) != 0) continue;
      expected[key_of(r)].push_back(&r);
      ++report.reference_records;
    }
    for (const auto& r : data.records) actual[key_of(r)].push_back(&r);

    auto count = [&](const std::string& hook, std::uint64_t n) {
      report.diffs_per_hook[hook] += n;
      report.total_diffs += n;
    };
    for (const auto& [key, exp] : expected) {
      const auto it = actual.find(key);
      const std::size_t have = it == actual.end() ? 0 : it->second.size();
      std::uint64_t diffs = exp.size() > have ? exp.size() - have : have - exp.size();
      for (std::size_t i = 0; i < std::min(exp.size(), have); ++i) {
        if (!(*exp[i] == *it->second[i])) ++diffs;
      }
      if (diffs > 0) count(std::get<3>(key), diffs);
    }
    for (const auto& [key, act] : actual) {
      if (expected.count(key) == 0) count(std::get<3>(key), act.size());
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_run(const RunManifest& manifest, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    manifest.validate();
    fs::create_directories(manifest.out_dir);
    std::vector<RunMode> modes = manifest.modes;
    if (modes.empty()) modes.push_back(manifest.config.mode);

    std::string csv = std::string(kMetricsCsvHeader) + "\n";
    ordered_json summary = ordered_json::array();
    int status = kExitOk;

    for (const RunMode mode : modes) {
      for (const auto ratio : ratio_axis(manifest)) {
        const RunConfig cfg = point_config(manifest, mode, ratio);
        const fs::path point_dir = manifest.out_dir / point_name(mode, ratio);
        fs::create_directories(point_dir);
        write_file(point_dir / "config.json", dump_config(cfg) + "\n");

        std::vector<std::unique_ptr<FileSink>> sinks;
        RunOptions options;
        options.keep_records = false;
        options.sink_for_rank = [&](RankCoords r) -> Sink* {
          const fs::path dir = point_dir / rank_dir_name(r);
          fs::create_directories(dir);
          sinks.push_back(std::make_unique<FileSink>(dir));
          return sinks.back().get();
        };
        const RunResult result = run_offline(cfg, options);
        sinks.clear();

        ordered_json checksums = ordered_json::object();
        for (const auto& rank : result.ranks) {
          const fs::path dir = point_dir / rank_dir_name(rank.rank);
          std::string drops;
          for (const auto& d : rank.drops) drops += drop_line(d) + "\n";
          write_file(dir / "drops.ndjson", drops);
          checksums[rank_dir_name(rank.rank)] = {{"index", file_crc(dir / "index.ndjson")},
                                                 {"payload", file_crc(dir / "payload.bin")}};
        }

        const MetricsReport& m = result.metrics;
        csv += metrics_csv_rows(m, mode, ratio, cfg.ring.payload_capacity);
        ordered_json row;
        row["point"] = point_name(mode, ratio);
        row["mode"] = std::string(run_mode_name(mode));
        row["ratio"] = ratio ? json(*ratio) : json(nullptr);
        row["overhead_pct"] = m.overhead_pct;
        row["total_time"] = sim_to_seconds(m.total_time);
        row["stall_time"] = sim_to_seconds(m.total_stall);
        row["stall_events"] = m.stall_events;
        row["first_stall_step"] = m.first_stall_step ? json(*m.first_stall_step) : json(nullptr);
        row["dropped_request_steps"] = m.dropped_request_steps;
        row["records"] = m.records;
        row["exported_bytes"] = m.exported_bytes;
        row["sink_failures"] = m.sink_failures;
        row["d2h_bandwidth"] = m.d2h_bandwidth;
        row["checksums"] = checksums;
        summary.push_back(row);
        out << point_name(mode, ratio) << ": overhead " << fmt_double(m.overhead_pct)
            << "%, stalls " << m.stall_events << ", drops " << m.dropped_request_steps
            << ", records " << m.records << "\n";

        if (manifest.verify_after_run && mode == RunMode::kRing2) {
          const VerifyReport v = verify_dataset(point_dir, cfg);
          out << "  verify: " << (v.identical() ? "identical" : "MISMATCH") << " ("
              << v.total_diffs << " diffs)\n";
          if (!v.identical()) status = kExitMismatch;
        }
      }
    }
    write_file(manifest.out_dir / "metrics.csv", csv);
    write_file(manifest.out_dir / "summary.json", summary.dump(2) + "\n");
    return status;
  });
}

int cmd_verify(const fs::path& point_dir, const std::optional<RunConfig>& cfg_in,
               std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!fs::is_directory(point_dir)) throw ConfigError("no dataset at " + point_dir.string());
    RunConfig cfg = cfg_in ? *cfg_in : load_config(point_dir / "config.json");
    if (seed) cfg.seed = *seed;
    const VerifyReport v = verify_dataset(point_dir, cfg);
    for (const auto& [hook, n] : v.diffs_per_hook) out << hook << ": " << n << " diffs\n";
    out << "records: " << v.dataset_records << " dataset, " << v.reference_records
        << " reference\n";
    out << "checksum failures: " << v.checksum_failures << "\n";
    out << "total diffs: " << v.total_diffs << "\n";
    return v.identical() ? kExitOk : kExitMismatch;
  });
}

int cmd_sweep_overload(const RunManifest& manifest, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    manifest.validate();
    fs::create_directories(manifest.out_dir);
    std::vector<std::optional<std::set<std::string>>> hook_sets;
    for (const auto& hs : manifest.hook_sets) hook_sets.emplace_back(std::set<std::string>(hs.begin(), hs.end()));
    if (hook_sets.empty()) hook_sets.push_back(manifest.config.enabled_hooks);
    std::vector<std::uint64_t> rings = manifest.ring_capacities;
    if (rings.empty()) rings.push_back(manifest.config.ring.payload_capacity);
    std::vector<PolicyMode> policies = manifest.policies;
    if (policies.empty()) policies.push_back(manifest.config.policy.mode);

    std::string csv =
        "hook_set,hooks_enabled,ring_bytes,ratio,policy,overhead_pct,first_stall_step,"
        "stall_events,stall_time,drops,total_time\n";
    for (const auto& hooks : hook_sets) {
      for (const auto ring : rings) {
        for (const auto ratio : ratio_axis(manifest)) {
          for (const auto policy : policies) {
            RunConfig cfg = point_config(manifest, RunMode::kRing2, ratio);
            cfg.enabled_hooks = hooks;
            cfg.ring.payload_capacity = ring;
            cfg.ratio_uses_all_hooks = true;
            cfg.policy.mode = policy;
            if (policy == PolicyMode::kBestEffort && !cfg.policy.strategy) {
              cfg.policy.strategy = DropStrategy::kDropRecent;
            }
            RunOptions options;
            options.keep_records = false;
            const RunResult r = run_offline(cfg, options);
            std::string set_name = "all";
            if (hooks) {
              set_name.clear();
              for (const auto& h : *hooks) set_name += (set_name.empty() ? "" : "+") + h;
            }
            const auto& m = r.metrics;
            csv += set_name + "," + std::to_string(build_registry(cfg).enabled_count()) + "," +
                   std::to_string(ring) + "," + (ratio ? fmt_double(*ratio) : "") + "," +
                   policy_name(policy) + "," + fmt_double(m.overhead_pct) + "," +
                   (m.first_stall_step ? std::to_string(*m.first_stall_step) : "") + "," +
                   std::to_string(m.stall_events) + "," + fmt_seconds(m.total_stall) + "," +
                   std::to_string(m.dropped_request_steps) + "," + fmt_seconds(m.total_time) +
                   "\n";
          }
        }
      }
    }
    write_file(manifest.out_dir / "overload.csv", csv);
    out << csv;
    return kExitOk;
  });
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Capture, export and replay of inference-time tensors on a simulated device."};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::string modes;
  std::string sweep;
  bool verify_after = false;
  std::string verify_dir;

  auto* run = app.add_subcommand("run", "Run every (mode, ratio) point and write metrics and datasets");
  run->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Output directory (default: $RINGSCOPE_OUT or ./ringscope-out)");
  run->add_option("--mode", modes, "Comma-separated modes: no-capture, synchronous, callback, ring2");
  run->add_option("--sweep", sweep, "Comma-separated generation/bandwidth ratios");
  run->add_flag("--verify", verify_after, "Verify every ring2 dataset after the run");

  auto* verify = app.add_subcommand("verify", "Compare a dataset against a synchronous reference run");
  verify->add_option("--verify", verify_dir, "Point directory written by `run`")
      ->required()
      ->check(CLI::ExistingDirectory);
  verify->add_option("--config", config_path, "Config (default: <dataset>/config.json)")
      ->check(CLI::ExistingFile);
  verify->add_option("--seed", seed, "Override the config seed");

  auto* overload = app.add_subcommand("sweep-overload", "Emit the overload-onset grid as CSV");
  overload->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  overload->add_option("--seed", seed, "Override the config seed");
  overload->add_option("--out", out_dir, "Output directory");
  overload->add_option("--sweep", sweep, "Comma-separated generation/bandwidth ratios");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfigError;
  }

  if (verify->parsed()) {
    return guarded(std::cerr, [&] {
      std::optional<RunConfig> cfg;
      if (!config_path.empty()) cfg = load_config(config_path);
      return cmd_verify(verify_dir, cfg, seed, std::cout, std::cerr);
    });
  }

  return guarded(std::cerr, [&] {
    RunManifest manifest = load_manifest(config_path);
    manifest.seed = seed;
    manifest.out_dir = resolve_out_dir(out_dir);
    if (!modes.empty()) manifest.modes = parse_mode_list(modes);
    if (!sweep.empty()) manifest.ratios = parse_double_list(sweep);
    manifest.verify_after_run = verify_after;
    if (run->parsed()) return cmd_run(manifest, std::cout, std::cerr);
    return cmd_sweep_overload(manifest, std::cout, std::cerr);
  });
}

}  // namespace ringscope
