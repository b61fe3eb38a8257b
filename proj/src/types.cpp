// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/types.hpp"

#include <array>
#include <cmath>
#include <string>
#include <utility>

namespace ringscope {

namespace {

constexpr std::array<std::pair<std::string_view, DType>, 8> kDTypeNames{{
    {"uint8", DType::kUInt8},
    {"int8", DType::kInt8},
    {"float16", DType::kFloat16},
    {"bfloat16", DType::kBFloat16},
    {"float32", DType::kFloat32},
    {"int32", DType::kInt32},
    {"float64", DType::kFloat64},
    {"int64", DType::kInt64},
}};

}  // namespace

SimDuration seconds_to_sim(double seconds) {
  return SimDuration(std::llround(seconds * 1e9));
}

double sim_to_seconds(SimDuration d) { return static_cast<double>(d.count()) * 1e-9; }

SimDuration transfer_time(std::uint64_t bytes, double bytes_per_second) {
  if (!std::isfinite(bytes_per_second) || bytes_per_second <= 0.0) return SimDuration::zero();
  return SimDuration(std::llround(static_cast<double>(bytes) * 1e9 / bytes_per_second));
}

std::uint32_t dtype_width(DType t) {
  switch (t) {
    case DType::kUInt8:
    case DType::kInt8:
      return 1;
    case DType::kFloat16:
    case DType::kBFloat16:
      return 2;
    case DType::kFloat32:
    case DType::kInt32:
      return 4;
    case DType::kFloat64:
    case DType::kInt64:
      return 8;
  }
  return 0;
}

std::string_view dtype_name(DType t) {
  for (const auto& [name, value] : kDTypeNames) {
    if (value == t) return name;
  }
  return "unknown";
}

DType parse_dtype(std::string_view name) {
  for (const auto& [n, value] : kDTypeNames) {
    if (n == name) return value;
  }
  throw std::invalid_argument("unknown dtype: " + std::string(name));
}

}  // namespace ringscope
