// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ringscope/types.hpp"

namespace ringscope {

// One request's slice of one captured tensor, with its full semantic
// context. This is the unit delivered to sinks.
struct CaptureRecord {
  std::uint64_t request_id = 0;
  std::string hook_name;
  std::optional<std::int32_t> layer_index;
  RankCoords rank;
  std::uint32_t step_seq = 0;
  TokenRange token_range;
  std::vector<std::int64_t> shape;  // per-request dims
  DType dtype = DType::kUInt8;
  std::vector<std::byte> payload;

  bool operator==(const CaptureRecord&) const = default;
};

// Ordering used wherever datasets are compared as multisets.
bool record_key_less(const CaptureRecord& a, const CaptureRecord& b);

}  // namespace ringscope
