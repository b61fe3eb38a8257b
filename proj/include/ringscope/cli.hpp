// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment driver behind the `ringscope` executable. Output layout of
// cmd_run, per (mode, ratio) point:
//
//   <out>/metrics.csv                    one row per step plus a summary row per point
//   <out>/summary.json                   per-point totals and dataset checksums
//   <out>/<point>/config.json            resolved config of the point
//   <out>/<point>/tp<T>_pp<P>/index.ndjson, payload.bin, drops.ndjson
//
// where <point> is "<mode>" or "<mode>_r<ratio>".

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ringscope/config.hpp"
#include "ringscope/simulator.hpp"

namespace ringscope {

enum ExitCode : int { kExitOk = 0, kExitMismatch = 1, kExitConfigError = 2 };

inline constexpr const char* kOutputDirEnv = "RINGSCOPE_OUT";

struct RunManifest {
  std::filesystem::path config_path;
  RunConfig config;
  std::optional<std::uint64_t> seed;   // overrides config.seed
  std::filesystem::path out_dir;
  std::vector<RunMode> modes;          // empty: config.mode
  std::vector<double> ratios;          // empty: config.ratio
  // Overload grid axes; empty means "the config's value".
  std::vector<std::vector<std::string>> hook_sets;
  std::vector<std::uint64_t> ring_capacities;
  std::vector<PolicyMode> policies;
  bool verify_after_run = false;

  void validate() const;  // throws ConfigError
};

// Reads the config and its optional "sweep" section:
//   {"ratios": [..], "modes": [..], "hook_sets": [[..], ..],
//    "ring_capacities": [..], "policies": ["completeness", "best_effort"]}
RunManifest load_manifest(const std::filesystem::path& config_path);

// --out flag, else $RINGSCOPE_OUT, else "ringscope-out".
std::filesystem::path resolve_out_dir(const std::optional<std::string>& flag);

std::vector<double> parse_double_list(const std::string& csv);   // throws ConfigError
std::vector<RunMode> parse_mode_list(const std::string& csv);    // throws ConfigError

inline constexpr const char* kMetricsCsvHeader =
    "step,mode,ratio,hooks_enabled,ring_bytes,wall_time,stall_time,drops,exported_bytes,"
    "overhead_pct";

// Per-step rows followed by one "summary" row.
std::string metrics_csv_rows(const MetricsReport& m, RunMode mode, std::optional<double> ratio,
                             std::uint64_t ring_bytes);

std::string point_name(RunMode mode, std::optional<double> ratio);

struct VerifyReport {
  std::map<std::string, std::uint64_t> diffs_per_hook;
  std::uint64_t total_diffs = 0;
  std::uint64_t checksum_failures = 0;
  std::uint64_t dataset_records = 0;
  std::uint64_t reference_records = 0;
  bool identical() const { return total_diffs == 0 && checksum_failures == 0; }
};

// Compares a point dataset with a synchronous reference run of `cfg`.
// Best-effort datasets are compared against the reference filtered by the
// logged drop decisions.
VerifyReport verify_dataset(const std::filesystem::path& point_dir, const RunConfig& cfg);

int cmd_run(const RunManifest& manifest, std::ostream& out, std::ostream& err);
int cmd_verify(const std::filesystem::path& point_dir, const std::optional<RunConfig>& cfg,
               std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);
int cmd_sweep_overload(const RunManifest& manifest, std::ostream& out, std::ostream& err);

// Full command line entry point (argv[0] included).
int cli_main(int argc, const char* const* argv);

}  // namespace ringscope
