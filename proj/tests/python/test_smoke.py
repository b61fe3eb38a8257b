# SPDX-FileCopyrightText: © 2026 The ringscope Authors
# SPDX-License-Identifier: Apache-2.0

import json
import zlib

import pytest

import ringscope


def test_ring_roundtrip():
    ring = ringscope.Ring(1024, 4)
    off = ring.reserve(20)
    assert off == 0
    ring.write(off, b"x" * 20)
    assert ring.publish(off, 20, hook_id=3, step_seq=9)
    (d,) = ring.poll()
    assert (d["offset"], d["len"], d["hook_id"], d["step_seq"], d["ready_seq"]) == (0, 20, 3, 9, 0)
    assert ring.read(off, 20) == b"x" * 20
    assert ring.state["occupancy"] == 32
    ring.release(off, 20)
    assert ring.state["occupancy"] == 0
    assert ringscope.decode_descriptor(ring.slot_bytes(0))["ready_seq"] == ringscope.SENTINEL


def test_full_ring_and_release_order():
    ring = ringscope.Ring(64, 8)
    a = ring.reserve(32)
    b = ring.reserve(32)
    assert ring.reserve(1) is None
    with pytest.raises(ringscope.OutOfOrderRelease):
        ring.release(b, 32)
    ring.release(a, 32)


def test_descriptor_wire_format():
    raw = ringscope.encode_descriptor(0x1122, 48, hook_id=7, step_seq=2, ready_seq=5)
    assert len(raw) == 64
    assert raw[:8] == (0x1122).to_bytes(8, "little")
    assert raw[32:] == bytes(32)
    assert ringscope.decode_descriptor(raw) == {
        "offset": 0x1122, "len": 48, "hook_id": 7, "step_seq": 2, "ready_seq": 5}


def test_gather_compact_and_crc():
    tensor = bytes(range(48))
    out = ringscope.gather_compact(tensor, [3, 8], "float16", [True, False, True])
    assert out == tensor[:16] + tensor[32:]
    assert ringscope.crc32(b"123456789") == 0xCBF43926
    assert ringscope.crc32(out) == zlib.crc32(out)
    assert ringscope.dtype_width("bfloat16") == 2


def test_simulate_default_config():
    m = ringscope.run(ratio=0.5, records=True)
    assert m["records"] == 180
    assert len(m["record_list"]) == 180
    assert 0 <= m["overhead_pct"] <= 10
    sync = ringscope.run(mode="synchronous", ratio=0.5, records=True)
    key = lambda r: (r["request_id"], r["step"], r["hook_name"])
    assert sorted(m["record_list"], key=key) == sorted(sync["record_list"], key=key)
    assert sync["overhead_pct"] > m["overhead_pct"]


def test_best_effort_drops_a_suffix():
    cfg = json.loads(ringscope.default_config())
    cfg["workload"]["decode_steps"] = 16
    cfg["ring"]["payload_capacity"] = 16384
    cfg["ratio_uses_all_hooks"] = True
    cfg["policy"] = {"mode": "best_effort", "strategy": "drop_recent"}
    m = ringscope.run(cfg, ratio=4.0)
    assert m["stall_events"] == 0
    assert m["dropped_request_steps"] > 0
    for e in m["drops"]:
        assert e["kept"] + e["dropped"] == e["batch"]


def test_config_errors():
    with pytest.raises(ringscope.ConfigError):
        ringscope.normalize_config('{"bogus": 1}')
    with pytest.raises(ValueError):
        ringscope.run(mode="ring3")


def test_cli_and_verify(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(ringscope.default_config())
    assert ringscope.main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    point = tmp_path / "out" / "ring2"
    report = ringscope.verify(point)
    assert report["identical"] and report["dataset_records"] == 180
    records, failures = ringscope.read_dataset(point / "tp0_pp0")
    assert failures == 0 and len(records) == 180
    assert ringscope.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
