// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// JSON run configuration. Every section and key is optional; omitted values
// take the defaults of the corresponding structs. Unknown keys are rejected.
//
//   {
//     "seed": 7, "mode": "ring2",
//     "workload": {"layers": 4, "hidden": 256, "batch": 8, "prefill_tokens": 16,
//                  "decode_steps": 8, "prefill_time": 0.004, "decode_time": 0.002,
//                  "admission": [{"iteration": 0, "count": 8}]},
//     "topology": {"tp": 1, "pp": 1},
//     "hooks": [{"name": "hidden_state", "per_layer": true,
//                "shape": ["tokens", "hidden"], "dtype": "float16"}],
//     "enabled_hooks": ["hidden_state"],
//     "policy": {"mode": "best_effort", "strategy": "keep_by_pattern",
//                "keep_prompt_prefix": "chat:", "keep_request_ids": [3]},
//     "ring": {"payload_capacity": 67108864, "meta_slots": 4096},
//     "drain": {...}, "engine": {...},
//     "ratio": 2.0,
//     "sweep": {...}   // read by the command-line driver only
//   }

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ringscope/simulator.hpp"

namespace ringscope {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parses and validates. Throws ConfigError.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);

// Round-trips through parse_config.
std::string dump_config(const RunConfig& cfg);

// A small ready-to-run configuration (two per-layer hooks and one global
// hook) used by examples and smoke tests.
RunConfig default_config();

}  // namespace ringscope
