import base64
import json

import pytest

from conftest import scenario
from lorawan_sim.codec import MType
from lorawan_sim.device import local_to_fix, position_at
from lorawan_sim.harness.cli import ParseError, decode_dump, main, parse_frame_text
from lorawan_sim.harness.config import SHIPPED
from lorawan_sim.harness.engine import run


def is_uplink(row):
    return base64.b64decode(row["wire_b64"])[0] >> 5 == MType.UNCONFIRMED_DATA_UP


@pytest.fixture(scope="module")
def s2b():
    return run(scenario("s2b_uplink_replay"))


def test_decode_all_zero_join_request(capsys):
    assert main(["decode", "00" * 23]) == 0
    out = capsys.readouterr().out
    assert "dev_eui     0000000000000000" in out
    assert "dev_nonce   0x0000" in out


def test_decode_base64_equals_hex():
    wire = bytes(range(23))
    wire = b"\x00" + wire[1:]
    assert parse_frame_text(base64.b64encode(wire).decode()) == parse_frame_text(wire.hex())
    assert parse_frame_text("00:01 02") == b"\x00\x01\x02"


def test_truncated_input(capsys):
    with pytest.raises(ParseError) as err:
        decode_dump(bytes(5))
    assert err.value.offset is not None
    assert main(["decode", "00" * 5]) == 1
    assert "at byte" in capsys.readouterr().err


def test_garbage_input():
    assert main(["decode", "not a frame!"]) == 1


def test_decode_uplink_with_keys(s2b, tmp_path, capsys):
    sim = s2b.simulation
    (dc, dev) = next(iter(sim.devices.values()))
    keys = tmp_path / "keys.yaml"
    keys.write_text(f"nwk_s_key: {dev.session.nwk_s_key.raw.hex()}\napp_s_key: {dev.session.app_s_key.raw.hex()}\n")
    up = next(r for r in sim.capture if r.decoded.mtype is MType.UNCONFIRMED_DATA_UP and r.rx.gateway_id == "gw-01")
    assert main(["decode", up.wire.hex(), "--keys", str(keys)]) == 0
    out = capsys.readouterr().out
    fix = local_to_fix(position_at(dc.movement, up.rx.timestamp), *sim.config.origin, alt_m=dc.alt_m)
    assert "(valid)" in out
    assert f"gnss        lat={fix.lat_deg:.7f} lon={fix.lon_deg:.7f} alt={fix.alt_m} m" in out


def test_decode_uplink_without_keys(s2b, capsys):
    up = next(r for r in s2b.simulation.capture if r.decoded.mtype is MType.UNCONFIRMED_DATA_UP)
    main(["decode", up.wire.hex()])
    out = capsys.readouterr().out
    assert "ciphertext  10 bytes" in out and "not verified" in out and "gnss" not in out


def test_analyze_s1(tmp_path, capsys):
    art = run(scenario("s1_sniff"))
    cap = tmp_path / "capture.jsonl"
    cap.write_text(art.capture)
    assert main(["analyze", str(cap)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["receiver"] == "attacker"
    (intel,) = report["intel"]
    assert intel["manufacturer"] == "Heltec"
    assert intel["est_distance_m"] == pytest.approx(10.0, rel=1e-3)
    assert report["movement"][0]["movement"] == "Moving"


def test_analyze_empty(tmp_path, capsys):
    cap = tmp_path / "empty.jsonl"
    cap.write_text("")
    assert main(["analyze", str(cap), "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["intel"] == [] and report["movement"] == []


def test_analyze_uplinks_only(tmp_path, capsys):
    art = run(scenario("s1_sniff"))
    rows = [line for line in art.capture.splitlines()
            if '"gateway_id": "attacker"' in line and is_uplink(json.loads(line))]
    cap = tmp_path / "ups.jsonl"
    cap.write_text("\n".join(rows) + "\n")
    assert main(["analyze", str(cap)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["intel"] == []
    assert report["movement"] and report["movement"][0]["movement"] == "Moving"


def test_analyze_bad_line(tmp_path, capsys):
    cap = tmp_path / "bad.jsonl"
    cap.write_text(run(scenario("s1_sniff")).capture + "{oops\n")
    assert main(["analyze", str(cap)]) == 1
    n = len(run(scenario("s1_sniff")).capture.splitlines()) + 1
    assert f"line {n}:" in capsys.readouterr().err


def test_replay_file(s2b, tmp_path, capsys):
    cap = tmp_path / "capture.jsonl"
    cap.write_text(s2b.capture)
    rows = [json.loads(line) for line in s2b.capture.splitlines()]
    idx = next(i for i, r in enumerate(rows) if r["gateway_id"] == "gw-01" and is_uplink(r))
    assert main(["replay-file", str(cap), "--scenario", "s2b_uplink_replay", "--select", str(idx), "--count", "2"]) == 0
    verdicts = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [v["reason"] for v in verdicts] == ["FCnt has already been used"] * 2


def test_replay_file_select_out_of_range(s2b, tmp_path):
    cap = tmp_path / "capture.jsonl"
    cap.write_text(s2b.capture)
    assert main(["replay-file", str(cap), "--scenario", "s2b_uplink_replay", "--select", "9999"]) == 1


def test_run_writes_artifacts(tmp_path, capsys):
    assert main(["run", "s2a_join_replay", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "verdicts.jsonl").read_text() == run(scenario("s2a_join_replay")).verdicts
    assert "DevNonce has already been used" in capsys.readouterr().out


def test_run_invalid_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\n")
    assert main(["run", str(bad)]) == 1
    assert "seed" in capsys.readouterr().err


def test_run_missing_file():
    assert main(["run", "/nonexistent/scenario.yaml"]) == 1


def test_scenarios_list(capsys):
    assert main(["scenarios", "list"]) == 0
    assert capsys.readouterr().out.split() == list(SHIPPED)


def test_internal_error_exit_code(monkeypatch):
    import lorawan_sim.harness.cli as cli

    def boom(*a, **k):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "run", boom)
    assert main(["run", "s1_sniff"]) == 2
