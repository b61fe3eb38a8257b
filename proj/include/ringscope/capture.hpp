// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// Capture points and the gather-compact copy into the payload ring.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ringscope/ring2.hpp"
#include "ringscope/types.hpp"

namespace ringscope {

enum class DimSymbol : std::uint8_t { kConst, kTokens, kHidden };

// One dimension of a per-request tensor: `factor` times the symbol's value
// (1 for kConst).
struct ShapeDim {
  DimSymbol symbol = DimSymbol::kConst;
  std::int64_t factor = 1;
  bool operator==(const ShapeDim&) const = default;
};

// Per-request tensor shape as a function of token count and hidden width.
// At most one dimension may reference the hidden width; that axis is the one
// split across tensor-parallel ranks.
class ShapeTemplate {
 public:
  ShapeTemplate() = default;
  explicit ShapeTemplate(std::vector<ShapeDim> dims);

  // Accepts "tokens", "hidden", "<k>*tokens", "<k>*hidden" or "<k>".
  static ShapeTemplate parse(std::span<const std::string> dims);

  std::vector<std::int64_t> evaluate(std::uint32_t tokens, std::uint64_t hidden) const;
  std::uint64_t element_count(std::uint32_t tokens, std::uint64_t hidden) const;
  std::optional<std::size_t> hidden_axis() const;
  bool token_major() const;
  const std::vector<ShapeDim>& dims() const { return dims_; }
  std::vector<std::string> to_strings() const;

  bool operator==(const ShapeTemplate&) const = default;

 private:
  std::vector<ShapeDim> dims_;
};

enum class HookPlacement : std::uint8_t { kBeforeLayers, kAfterLayers };

// A declared observation site. Per-layer declarations expand into one hook
// per layer at install time.
struct HookDecl {
  std::string name;
  bool per_layer = false;
  ShapeTemplate shape;
  DType dtype = DType::kFloat16;
  HookPlacement placement = HookPlacement::kAfterLayers;  // global hooks only
};

struct ModelSpec {
  std::uint32_t layers = 1;
  std::uint64_t hidden = 1;
};

struct HookSpec {
  std::string name;   // unique, e.g. "hidden_state.3"
  std::string group;  // declaration name, shared by all layers
  std::optional<std::int32_t> layer_index;
  ShapeTemplate shape;
  DType dtype = DType::kFloat16;

  std::uint64_t slice_bytes(std::uint32_t tokens, std::uint64_t hidden) const {
    return shape.element_count(tokens, hidden) * dtype_width(dtype);
  }
};

// Ordered hook set with a step-boundary filter. Hook ids are positions in
// declaration (graph) order, which is also the firing order.
class HookRegistry {
 public:
  HookRegistry() = default;
  explicit HookRegistry(std::vector<HookSpec> hooks);

  const std::vector<HookSpec>& hooks() const { return hooks_; }
  std::size_t size() const { return hooks_.size(); }
  const HookSpec& hook(std::uint32_t id) const { return hooks_.at(id); }
  std::optional<std::uint32_t> find(std::string_view name) const;

  // Names may be exact hook names or group names. The new set takes effect
  // at the next commit_filter(). Throws std::invalid_argument on unknown
  // names.
  void set_hook_filter(const std::set<std::string>& enabled);
  void enable_all();
  void commit_filter();

  bool enabled(std::uint32_t id) const { return enabled_.at(id); }
  std::vector<std::uint32_t> enabled_ids() const;
  std::size_t enabled_count() const;

 private:
  std::vector<HookSpec> hooks_;
  std::vector<bool> enabled_;
  std::vector<bool> pending_;
};

// Throws std::invalid_argument on duplicate names or invalid shapes.
HookRegistry install_hooks(const ModelSpec& model, std::span<const HookDecl> decls);

// Batch-major contiguous tensor: shape[0] is the batch dimension.
struct TensorView {
  std::span<const std::byte> bytes;
  std::vector<std::int64_t> shape;
  DType dtype = DType::kUInt8;

  std::uint64_t batch() const { return shape.empty() ? 0 : static_cast<std::uint64_t>(shape[0]); }
  std::uint64_t slice_bytes() const;
  void validate() const;  // throws std::invalid_argument
};

struct KeepDropVector {
  std::vector<std::uint8_t> flags;

  static KeepDropVector all(std::size_t n) { return {std::vector<std::uint8_t>(n, 1)}; }
  std::size_t size() const { return flags.size(); }
  std::size_t kept() const;
  bool all_kept() const { return kept() == flags.size(); }
  bool operator==(const KeepDropVector&) const = default;
};

struct DeviceCopyEngine {
  double d2d_bandwidth = 2.0e12;      // bytes/s
  double d2h_bandwidth = 25.0e9;      // bytes/s
  double d2h_latency = 10e-6;         // seconds per transfer
  double launch_overhead = 2e-6;      // seconds per copy-kernel launch
  double callback_overhead = 50e-6;   // host cost per hook in callback-style mode

  void validate() const;
  SimDuration d2d_time(std::uint64_t bytes) const;
  SimDuration d2h_time(std::uint64_t bytes) const;
};

// Copies src into dst in 16-byte units followed by the residual tail bytes.
void copy_chunked(std::span<std::byte> dst, std::span<const std::byte> src);

// Writes the kept batch slices of `view`, in batch order, contiguously into
// dst. Returns the number of bytes written.
std::uint64_t gather_compact(std::span<std::byte> dst, const TensorView& view,
                             const KeepDropVector& keep);

// A capture whose payload is in the ring but whose descriptor is not yet
// published.
struct StagedCapture {
  Descriptor descriptor;
  std::uint64_t bytes_written = 0;
};

// Reserves a payload region and performs the gather-compact copy. Returns
// nullopt on backpressure (payload ring or meta ring full). The keep vector
// must select at least one slice.
std::optional<StagedCapture> stage_capture(Ring2& ring, std::uint32_t hook_id,
                                           std::uint32_t step_seq, const TensorView& view,
                                           const KeepDropVector& keep);

// Publishes a staged capture. The producer checked the meta slot before
// staging, so this cannot fail in a single-producer ring.
void commit_capture(Ring2& ring, const StagedCapture& staged);

struct CaptureOutcome {
  std::uint64_t bytes_written = 0;
  std::chrono::nanoseconds stalled{0};
  bool skipped = false;  // hook disabled or nothing kept: no ring interaction
};

// Blocks until the consumer has freed ring space (or a short timeout).
using WaitForSpace = std::function<void()>;

// Full capture for a live producer. Under kCompleteness backpressure is
// absorbed by calling `wait` until space appears; under kBestEffort it
// raises PolicyUnderestimate.
CaptureOutcome capture(const HookRegistry& registry, Ring2& ring, std::uint32_t hook_id,
                       std::uint32_t step_seq, const TensorView& view,
                       const KeepDropVector& keep, PolicyMode mode, const WaitForSpace& wait);

}  // namespace ringscope
