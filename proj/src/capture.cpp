// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/capture.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace ringscope {

namespace {

std::int64_t parse_factor(std::string_view text, std::string_view whole) {
  std::int64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || value <= 0) {
    throw std::invalid_argument("bad shape dimension: " + std::string(whole));
  }
  return value;
}

ShapeDim parse_dim(std::string_view text) {
  std::string_view factor_text;
  std::string_view symbol_text = text;
  if (const auto star = text.find('*'); star != std::string_view::npos) {
    factor_text = text.substr(0, star);
    symbol_text = text.substr(star + 1);
  }
  ShapeDim dim;
  if (symbol_text == "tokens") {
    dim.symbol = DimSymbol::kTokens;
  } else if (symbol_text == "hidden") {
    dim.symbol = DimSymbol::kHidden;
  } else if (factor_text.empty()) {
    dim.symbol = DimSymbol::kConst;
    dim.factor = parse_factor(symbol_text, text);
    return dim;
  } else {
    throw std::invalid_argument("bad shape dimension: " + std::string(text));
  }
  dim.factor = factor_text.empty() ? 1 : parse_factor(factor_text, text);
  return dim;
}

}  // namespace

// ---------------------------------------------------------------------------
// ShapeTemplate

ShapeTemplate::ShapeTemplate(std::vector<ShapeDim> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw std::invalid_argument("shape template needs at least one dimension");
  int hidden_dims = 0;
  for (const auto& d : dims_) {
    if (d.factor <= 0) throw std::invalid_argument("shape factors must be positive");
    if (d.symbol == DimSymbol::kHidden) ++hidden_dims;
  }
  if (hidden_dims > 1) {
    throw std::invalid_argument("shape template may reference the hidden width at most once");
  }
}

ShapeTemplate ShapeTemplate::parse(std::span<const std::string> dims) {
  std::vector<ShapeDim> out;
  out.reserve(dims.size());
  for (const auto& d : dims) out.push_back(parse_dim(d));
  return ShapeTemplate(std::move(out));
}

std::vector<std::int64_t> ShapeTemplate::evaluate(std::uint32_t tokens, std::uint64_t hidden) const {
  std::vector<std::int64_t> out;
  out.reserve(dims_.size());
  for (const auto& d : dims_) {
    switch (d.symbol) {
      case DimSymbol::kConst:
        out.push_back(d.factor);
        break;
      case DimSymbol::kTokens:
        out.push_back(d.factor * static_cast<std::int64_t>(tokens));
        break;
      case DimSymbol::kHidden:
        out.push_back(d.factor * static_cast<std::int64_t>(hidden));
        break;
    }
  }
  return out;
}

std::uint64_t ShapeTemplate::element_count(std::uint32_t tokens, std::uint64_t hidden) const {
  std::uint64_t n = 1;
  for (auto v : evaluate(tokens, hidden)) n *= static_cast<std::uint64_t>(v);
  return n;
}

std::optional<std::size_t> ShapeTemplate::hidden_axis() const {
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i].symbol == DimSymbol::kHidden) return i;
  }
  return std::nullopt;
}

bool ShapeTemplate::token_major() const {
  return std::any_of(dims_.begin(), dims_.end(),
                     [](const ShapeDim& d) { return d.symbol == DimSymbol::kTokens; });
}

std::vector<std::string> ShapeTemplate::to_strings() const {
  std::vector<std::string> out;
  for (const auto& d : dims_) {
    std::string prefix = d.factor == 1 ? "" : std::to_string(d.factor) + "*";
    switch (d.symbol) {
      case DimSymbol::kConst:
        out.push_back(std::to_string(d.factor));
        break;
      case DimSymbol::kTokens:
        out.push_back(prefix + "tokens");
        break;
      case DimSymbol::kHidden:
        out.push_back(prefix + "hidden");
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// HookRegistry

HookRegistry::HookRegistry(std::vector<HookSpec> hooks)
    : hooks_(std::move(hooks)), enabled_(hooks_.size(), true), pending_(hooks_.size(), true) {
  std::unordered_set<std::string> seen;
  for (const auto& h : hooks_) {
    if (!seen.insert(h.name).second) throw std::invalid_argument("duplicate hook name: " + h.name);
  }
}

std::optional<std::uint32_t> HookRegistry::find(std::string_view name) const {
  for (std::uint32_t i = 0; i < hooks_.size(); ++i) {
    if (hooks_[i].name == name) return i;
  }
  return std::nullopt;
}

void HookRegistry::set_hook_filter(const std::set<std::string>& enabled) {
  std::vector<bool> next(hooks_.size(), false);
  for (const auto& name : enabled) {
    bool matched = false;
    for (std::size_t i = 0; i < hooks_.size(); ++i) {
      if (hooks_[i].name == name || hooks_[i].group == name) {
        next[i] = true;
        matched = true;
      }
    }
    if (!matched) throw std::invalid_argument("unknown hook: " + name);
  }
  pending_ = std::move(next);
}

void HookRegistry::enable_all() { pending_.assign(hooks_.size(), true); }

void HookRegistry::commit_filter() { enabled_ = pending_; }

std::vector<std::uint32_t> HookRegistry::enabled_ids() const {
  std::vector<std::uint32_t> ids;
  for (std::uint32_t i = 0; i < hooks_.size(); ++i) {
    if (enabled_[i]) ids.push_back(i);
  }
  return ids;
}

std::size_t HookRegistry::enabled_count() const {
  return static_cast<std::size_t>(std::count(enabled_.begin(), enabled_.end(), true));
}

HookRegistry install_hooks(const ModelSpec& model, std::span<const HookDecl> decls) {
  if (model.layers == 0 || model.hidden == 0) {
    throw std::invalid_argument("model needs at least one layer and a positive hidden width");
  }
  auto make = [](const HookDecl& d, std::optional<std::int32_t> layer) {
    HookSpec h;
    h.name = layer ? d.name + "." + std::to_string(*layer) : d.name;
    h.group = d.name;
    h.layer_index = layer;
    h.shape = d.shape;
    h.dtype = d.dtype;
    if (h.shape.dims().empty()) throw std::invalid_argument("hook " + d.name + " has no shape");
    return h;
  };

  std::vector<HookSpec> hooks;
  for (const auto& d : decls) {
    if (!d.per_layer && d.placement == HookPlacement::kBeforeLayers) hooks.push_back(make(d, {}));
  }
  for (std::uint32_t layer = 0; layer < model.layers; ++layer) {
    for (const auto& d : decls) {
      if (d.per_layer) hooks.push_back(make(d, static_cast<std::int32_t>(layer)));
    }
  }
  for (const auto& d : decls) {
    if (!d.per_layer && d.placement == HookPlacement::kAfterLayers) hooks.push_back(make(d, {}));
  }
  return HookRegistry(std::move(hooks));
}

// ---------------------------------------------------------------------------
// TensorView / KeepDropVector / DeviceCopyEngine

std::uint64_t TensorView::slice_bytes() const {
  std::uint64_t n = dtype_width(dtype);
  for (std::size_t i = 1; i < shape.size(); ++i) n *= static_cast<std::uint64_t>(shape[i]);
  return n;
}

void TensorView::validate() const {
  if (shape.empty()) throw std::invalid_argument("tensor view needs a batch dimension");
  std::uint64_t n = dtype_width(dtype);
  for (auto d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= static_cast<std::uint64_t>(d);
  }
  if (n != bytes.size()) {
    throw std::invalid_argument("tensor byte length " + std::to_string(bytes.size()) +
                                " does not match shape (" + std::to_string(n) + ")");
  }
}

std::size_t KeepDropVector::kept() const {
  return static_cast<std::size_t>(std::count_if(flags.begin(), flags.end(),
                                                [](std::uint8_t f) { return f != 0; }));
}

void DeviceCopyEngine::validate() const {
  if (!(d2h_bandwidth > 0.0)) throw std::invalid_argument("d2h_bandwidth must be positive");
  if (d2h_latency < 0.0 || launch_overhead < 0.0 || callback_overhead < 0.0) {
    throw std::invalid_argument("latencies must be non-negative");
  }
}

SimDuration DeviceCopyEngine::d2d_time(std::uint64_t bytes) const {
  return seconds_to_sim(launch_overhead) + transfer_time(bytes, d2d_bandwidth);
}

SimDuration DeviceCopyEngine::d2h_time(std::uint64_t bytes) const {
  return seconds_to_sim(d2h_latency) + transfer_time(bytes, d2h_bandwidth);
}

// ---------------------------------------------------------------------------
// Copies

void copy_chunked(std::span<std::byte> dst, std::span<const std::byte> src) {
  if (dst.size() < src.size()) throw std::out_of_range("copy destination too small");
  const std::size_t chunks = src.size() / kCopyUnit;
  std::byte* out = dst.data();
  const std::byte* in = src.data();
  for (std::size_t i = 0; i < chunks; ++i) {
    std::memcpy(out + i * kCopyUnit, in + i * kCopyUnit, kCopyUnit);
  }
  for (std::size_t i = chunks * kCopyUnit; i < src.size(); ++i) out[i] = in[i];
}

std::uint64_t gather_compact(std::span<std::byte> dst, const TensorView& view,
                             const KeepDropVector& keep) {
  if (keep.size() != view.batch()) {
    throw std::invalid_argument("keep vector length does not match the batch dimension");
  }
  const std::uint64_t slice = view.slice_bytes();
  std::uint64_t written = 0;
  for (std::size_t b = 0; b < keep.size(); ++b) {
    if (keep.flags[b] == 0) continue;
    copy_chunked(dst.subspan(written, slice), view.bytes.subspan(b * slice, slice));
    written += slice;
  }
  return written;
}

std::optional<StagedCapture> stage_capture(Ring2& ring, std::uint32_t hook_id,
                                           std::uint32_t step_seq, const TensorView& view,
                                           const KeepDropVector& keep) {
  view.validate();
  if (keep.size() != view.batch()) {
    throw std::invalid_argument("keep vector length does not match the batch dimension");
  }
  const std::uint64_t len = view.slice_bytes() * keep.kept();
  if (len == 0) throw std::invalid_argument("capture must keep at least one slice");
  if (!ring.meta_slot_available()) return std::nullopt;
  const auto offset = ring.reserve_payload(len);
  if (!offset) return std::nullopt;

  StagedCapture staged;
  staged.bytes_written = gather_compact(ring.payload(*offset, len), view, keep);
  staged.descriptor.payload_offset = *offset;
  staged.descriptor.payload_len = len;
  staged.descriptor.hook_id = hook_id;
  staged.descriptor.step_seq = step_seq;
  return staged;
}

void commit_capture(Ring2& ring, const StagedCapture& staged) {
  if (!ring.publish(staged.descriptor)) {
    throw std::logic_error("meta slot taken between staging and publication");
  }
}

CaptureOutcome capture(const HookRegistry& registry, Ring2& ring, std::uint32_t hook_id,
                       std::uint32_t step_seq, const TensorView& view,
                       const KeepDropVector& keep, PolicyMode mode, const WaitForSpace& wait) {
  CaptureOutcome outcome;
  if (!registry.enabled(hook_id) || keep.kept() == 0) {
    outcome.skipped = true;
    return outcome;
  }
  auto staged = stage_capture(ring, hook_id, step_seq, view, keep);
  if (!staged) {
    if (mode == PolicyMode::kBestEffort) {
      throw PolicyUnderestimate("best-effort capture of hook " + registry.hook(hook_id).name +
                                " hit a full ring");
    }
    const auto start = std::chrono::steady_clock::now();
    while (!staged) {
      wait();
      staged = stage_capture(ring, hook_id, step_seq, view, keep);
    }
    outcome.stalled = std::chrono::steady_clock::now() - start;
  }
  commit_capture(ring, *staged);
  outcome.bytes_written = staged->bytes_written;
  return outcome;
}

}  // namespace ringscope
