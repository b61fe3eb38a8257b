// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ringscope {

// Virtual time is kept in integer nanoseconds so that runs are bit-for-bit
// reproducible.
using SimDuration = std::chrono::nanoseconds;
using SimTime = std::chrono::nanoseconds;  // offset from the start of a run

SimDuration seconds_to_sim(double seconds);
double sim_to_seconds(SimDuration d);

// Duration of moving `bytes` over a link, excluding any fixed latency.
// A non-finite or non-positive bandwidth is treated as unbounded.
SimDuration transfer_time(std::uint64_t bytes, double bytes_per_second);

enum class DType : std::uint8_t { kUInt8, kInt8, kFloat16, kBFloat16, kFloat32, kInt32, kFloat64, kInt64 };

std::uint32_t dtype_width(DType t);
std::string_view dtype_name(DType t);
DType parse_dtype(std::string_view name);  // throws std::invalid_argument

enum class PolicyMode : std::uint8_t { kCompleteness, kBestEffort };

struct RankCoords {
  std::uint32_t tp_rank = 0;
  std::uint32_t pp_stage = 0;
  bool operator==(const RankCoords&) const = default;
  auto operator<=>(const RankCoords&) const = default;
};

// Half-open token index range [start, end).
struct TokenRange {
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  std::uint32_t size() const { return end - start; }
  bool operator==(const TokenRange&) const = default;
  auto operator<=>(const TokenRange&) const = default;
};

// Raised when a best-effort plan under-estimated ring demand and a capture
// hit backpressure it was promised not to see.
class PolicyUnderestimate : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised when a drained descriptor does not match the head of the metadata
// FIFO. Fatal for the run.
class MetaMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ringscope
