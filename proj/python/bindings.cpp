// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "ringscope/cli.hpp"
#include "ringscope/config.hpp"
#include "ringscope/simulator.hpp"

namespace py = pybind11;
using namespace ringscope;

namespace {

py::bytes to_bytes(std::span<const std::byte> b) {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

std::vector<std::byte> from_buffer(const py::buffer& buf) {
  const py::buffer_info info = buf.request();
  std::vector<std::byte> out(static_cast<std::size_t>(info.size * info.itemsize));
  if (!out.empty()) std::memcpy(out.data(), info.ptr, out.size());
  return out;
}

py::dict record_dict(const CaptureRecord& r) {
  py::dict d;
  d["request_id"] = r.request_id;
  d["hook_name"] = r.hook_name;
  d["layer"] = r.layer_index ? py::cast(*r.layer_index) : py::none();
  d["tp_rank"] = r.rank.tp_rank;
  d["pp_stage"] = r.rank.pp_stage;
  d["step"] = r.step_seq;
  d["token_range"] = py::make_tuple(r.token_range.start, r.token_range.end);
  d["shape"] = r.shape;
  d["dtype"] = std::string(dtype_name(r.dtype));
  d["payload"] = to_bytes(r.payload);
  return d;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["total_time"] = sim_to_seconds(m.total_time);
  d["inference_time"] = sim_to_seconds(m.inference_time);
  d["total_stall"] = sim_to_seconds(m.total_stall);
  d["stall_events"] = m.stall_events;
  d["first_stall_step"] = m.first_stall_step ? py::cast(*m.first_stall_step) : py::none();
  d["dropped_request_steps"] = m.dropped_request_steps;
  d["exported_bytes"] = m.exported_bytes;
  d["records"] = m.records;
  d["sink_failures"] = m.sink_failures;
  d["d2h_bandwidth"] = m.d2h_bandwidth;
  d["generation_rate"] = m.generation_rate;
  d["overhead_pct"] = m.overhead_pct;
  py::list steps;
  for (const auto& s : m.steps) {
    py::dict row;
    row["step"] = s.step;
    row["prefill"] = s.prefill;
    row["wall"] = sim_to_seconds(s.wall);
    row["stall"] = sim_to_seconds(s.stall);
    row["drops"] = s.drops;
    row["exported_bytes"] = s.exported_bytes;
    row["overhead_pct"] = s.overhead_pct;
    steps.append(row);
  }
  d["steps"] = steps;
  return d;
}

RunConfig configure(const std::string& config_json, const std::optional<std::string>& mode,
                    std::optional<double> ratio, std::optional<std::uint64_t> seed) {
  RunConfig c = parse_config(config_json);
  if (mode) c.mode = parse_run_mode(*mode);
  if (ratio) c.ratio = ratio;
  if (seed) c.seed = *seed;
  c.validate();
  return c;
}

py::dict simulate(const std::string& config_json, const std::optional<std::string>& mode,
                  std::optional<double> ratio, std::optional<std::uint64_t> seed, bool records) {
  const RunConfig c = configure(config_json, mode, ratio, seed);
  RunResult res;
  {
    py::gil_scoped_release nogil;
    res = run_offline(c, RunOptions{{}, false, records});
  }
  py::dict out = metrics_dict(res.metrics);
  if (records) {
    py::list recs;
    for (const auto& r : res.all_records()) recs.append(record_dict(r));
    out["record_list"] = recs;
  }
  py::list drops;
  for (const auto& rank : res.ranks) {
    for (const auto& e : rank.drops) {
      py::dict d;
      d["step"] = e.step;
      d["tp_rank"] = e.rank.tp_rank;
      d["pp_stage"] = e.rank.pp_stage;
      d["batch"] = e.batch;
      d["kept"] = e.kept;
      d["dropped"] = e.dropped;
      d["flagged"] = e.flagged;
      drops.append(d);
    }
  }
  out["drops"] = drops;
  return out;
}

py::bytes gather(const py::buffer& tensor, const std::vector<std::int64_t>& shape,
                 const std::string& dtype, const std::vector<bool>& keep) {
  const std::vector<std::byte> bytes = from_buffer(tensor);
  const TensorView view{bytes, shape, parse_dtype(dtype)};
  view.validate();
  KeepDropVector k;
  for (const bool b : keep) k.flags.push_back(b ? 1 : 0);
  std::vector<std::byte> out(view.slice_bytes() * k.kept());
  const auto n = gather_compact(out, view, k);
  out.resize(n);
  return to_bytes(out);
}

py::dict descriptor_dict(const Descriptor& d) {
  py::dict out;
  out["offset"] = d.payload_offset;
  out["len"] = d.payload_len;
  out["hook_id"] = d.hook_id;
  out["step_seq"] = d.step_seq;
  out["ready_seq"] = d.ready_seq;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Activation capture through a device-side ring pair with asynchronous export";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MetaMismatch>(m, "MetaMismatch", PyExc_RuntimeError);
  py::register_exception<PolicyUnderestimate>(m, "PolicyUnderestimate", PyExc_RuntimeError);
  py::register_exception<OutOfOrderRelease>(m, "OutOfOrderRelease", PyExc_RuntimeError);

  m.def("default_config", [] { return dump_config(default_config()); },
        "Small built-in configuration as JSON text.");
  m.def("normalize_config", [](const std::string& text) { return dump_config(parse_config(text)); },
        py::arg("config_json"), "Parse, validate and re-serialize a configuration.");

  m.def("simulate", &simulate, py::arg("config_json"), py::arg("mode") = py::none(),
        py::arg("ratio") = py::none(), py::arg("seed") = py::none(), py::arg("records") = false,
        "Run one configuration on the virtual clock and return its metrics.");

  m.def(
      "verify",
      [](const std::filesystem::path& point_dir) {
        const VerifyReport v = verify_dataset(point_dir, load_config(point_dir / "config.json"));
        py::dict d;
        d["identical"] = v.identical();
        d["total_diffs"] = v.total_diffs;
        d["checksum_failures"] = v.checksum_failures;
        d["dataset_records"] = v.dataset_records;
        d["reference_records"] = v.reference_records;
        d["diffs_per_hook"] = v.diffs_per_hook;
        return d;
      },
      py::arg("point_dir"), "Compare a stored dataset with its regenerated reference.");

  m.def(
      "read_dataset",
      [](const std::filesystem::path& dir) {
        const auto ds = read_dataset(dir);
        py::list recs;
        for (const auto& r : ds.records) recs.append(record_dict(r));
        return py::make_tuple(recs, ds.checksum_failures);
      },
      py::arg("dir"), "Records of one rank directory and the number of checksum failures.");

  m.def(
      "main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "ringscope");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release nogil;
        return cli_main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Command-line entry point; returns the exit code.");

  m.def("gather_compact", &gather, py::arg("tensor"), py::arg("shape"), py::arg("dtype"),
        py::arg("keep"), "Pack the kept batch slices of a row-major tensor.");
  m.def("crc32", [](const py::buffer& b) { return crc32_of(from_buffer(b)); }, py::arg("data"));
  m.def("dtype_width", [](const std::string& name) { return dtype_width(parse_dtype(name)); });

  m.def(
      "encode_descriptor",
      [](std::uint64_t offset, std::uint64_t len, std::uint32_t hook_id, std::uint32_t step_seq,
         std::uint64_t ready_seq) {
        const Descriptor d{offset, len, hook_id, step_seq, ready_seq, {}};
        return to_bytes(encode_descriptor(d));
      },
      py::arg("offset"), py::arg("len"), py::arg("hook_id") = 0, py::arg("step_seq") = 0,
      py::arg("ready_seq") = kSentinel);
  m.def(
      "decode_descriptor",
      [](const py::bytes& raw) {
        const std::string s = raw;
        if (s.size() != kDescriptorSize) throw py::value_error("descriptor must be 64 bytes");
        std::array<std::byte, kDescriptorSize> a;
        std::memcpy(a.data(), s.data(), a.size());
        return descriptor_dict(decode_descriptor(a));
      },
      py::arg("raw"));

  py::class_<Ring2>(m, "Ring")
      .def(py::init([](std::uint64_t capacity, std::uint32_t slots, double watermark) {
             return allocate_rings(RingConfig{capacity, slots, watermark});
           }),
           py::arg("capacity"), py::arg("meta_slots"), py::arg("high_watermark") = 0.8)
      .def("reserve", &Ring2::reserve_payload, py::arg("len"))
      .def(
          "write",
          [](Ring2& r, std::uint64_t offset, const py::buffer& data) {
            const auto bytes = from_buffer(data);
            auto dst = r.payload(offset, bytes.size());
            std::copy(bytes.begin(), bytes.end(), dst.begin());
          },
          py::arg("offset"), py::arg("data"))
      .def(
          "read",
          [](const Ring2& r, std::uint64_t offset, std::uint64_t len) { return to_bytes(r.payload(offset, len)); },
          py::arg("offset"), py::arg("len"))
      .def(
          "publish",
          [](Ring2& r, std::uint64_t offset, std::uint64_t len, std::uint32_t hook_id, std::uint32_t step_seq) {
            return r.publish(Descriptor{offset, len, hook_id, step_seq, kSentinel, {}});
          },
          py::arg("offset"), py::arg("len"), py::arg("hook_id") = 0, py::arg("step_seq") = 0)
      .def(
          "poll",
          [](Ring2& r, std::size_t max_n) {
            py::list out;
            for (const auto& d : r.poll_ready(max_n)) out.append(descriptor_dict(d));
            return out;
          },
          py::arg("max_n") = 64)
      .def("release", &Ring2::release_payload, py::arg("offset"), py::arg("len"))
      .def("slot_bytes", [](const Ring2& r, std::uint32_t slot) { return to_bytes(r.meta_slot_bytes(slot)); })
      .def_property_readonly("pressure", &Ring2::pressure)
      .def_property_readonly("state", [](const Ring2& r) {
        const RingState s = r.state();
        py::dict d;
        d["capacity"] = s.payload_capacity;
        d["head"] = s.payload_head;
        d["tail"] = s.payload_tail;
        d["occupancy"] = s.occupancy();
        d["dead"] = s.dead_outstanding;
        d["meta_head"] = s.meta_head;
        d["meta_tail"] = s.meta_tail;
        d["meta_slots"] = s.meta_slots;
        return d;
      });

  m.attr("SENTINEL") = kSentinel;
  m.attr("__version__") = "0.1.0";
}
