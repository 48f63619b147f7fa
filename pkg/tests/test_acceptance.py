"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL
line with the measured value and the tolerance it was held to."""

import json
import os
import random
import statistics
import subprocess
import sys
import time

import pytest

from conftest import (
    ACCEPTANCE_LINES,
    FIXTURES,
    GOLDEN,
    IDENTITY,
    REPLAY_COUNTS,
    golden_configs,
    join,
    rec,
    scenario,
)
from lorawan_sim import crypto
from lorawan_sim.codec import (
    DataUpPayload,
    Fhdr,
    FrameError,
    JoinAcceptPayload,
    JoinRequestPayload,
    Mhdr,
    MType,
    PhyFrame,
    decode_phy,
    encode_phy,
)
from lorawan_sim.crypto import Aes128Key, Direction, KeyRole
from lorawan_sim.device import Device, DeviceIdentity, Phase
from lorawan_sim.harness.config import SHIPPED
from lorawan_sim.harness.engine import ARTIFACT_FILES, run
from lorawan_sim.radio import PathLossModel, estimate_distance, rssi_at
from lorawan_sim.server import DEVNONCE_REUSED, FCNT_REUSED, NetworkServer


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------

INTEL_FIELDS = ("dev_eui", "dev_nonce", "sf", "bw_khz", "cr", "frequency_hz", "timestamp",
                "rssi_dbm", "freq_offset_hz", "snr_db")


def test_c1_s1_metadata_exposure():
    start = time.perf_counter()
    art = run(scenario("s1_sniff"))
    elapsed = time.perf_counter() - start
    intel = [e["intel"] for e in json.loads(art.reports)["intel"]]
    complete = bool(intel) and all(all(i.get(k) is not None for k in INTEL_FIELDS) for i in intel)
    freq_ok = bool(intel) and all(i["frequency_hz"] == 868_300_000 for i in intel)
    record(1, complete and freq_ok and elapsed < 5.0,
           f"{len(intel)} join intel entries, all 8 fields present={complete}, "
           f"frequency 868300000 Hz={freq_ok}, runtime {elapsed:.2f} s (limit 5 s)")


# 2 ---------------------------------------------------------------------------

def test_c2_join_request_plaintext():
    rng = random.Random(0xC2)
    failures = 0
    for _ in range(1000):
        ident = DeviceIdentity(rng.getrandbits(64), rng.getrandbits(64), Aes128Key(rng.randbytes(16), KeyRole.APP_KEY))
        dev = Device(ident, random.Random(rng.getrandbits(32)))
        wire = encode_phy(dev.build_join_request())
        try:
            body = decode_phy(wire).body
            ok = (isinstance(body, JoinRequestPayload) and body.dev_eui == ident.dev_eui
                  and body.app_eui == ident.app_eui and body.dev_nonce == dev.state.pending_nonce)
        except FrameError:
            ok = False
        failures += not ok
    record(2, failures == 0, f"{failures} failures over 1000 identities parsed without keys (tolerance 0)")


# 3 ---------------------------------------------------------------------------

def test_c3_join_replay_golden():
    problems = []
    for k in REPLAY_COUNTS:
        name = f"s2a_k{k}"
        art = run(golden_configs()[name])
        sim = art.simulation
        golden = (GOLDEN / f"{name}.verdicts.jsonl").read_text()
        log_ = sim.server.verdict_log
        rejected = [v.reason for v in log_ if not v.accepted]
        joins_ok = sum(v.accepted and v.kind == "join" for v in log_) == 1
        (_, dev) = next(iter(sim.devices.values()))
        uplinks = [v for v in log_ if v.kind == "uplink"]
        undisturbed = (dev.phase is Phase.JOINED and joins_ok and all(v.accepted for v in uplinks)
                       and [v.fcnt for v in uplinks] == list(range(len(uplinks))))
        if art.verdicts != golden:
            problems.append(f"k={k}: verdict log differs from golden")
        if rejected != [DEVNONCE_REUSED] * k:
            problems.append(f"k={k}: rejections {rejected}")
        if not undisturbed:
            problems.append(f"k={k}: legitimate session disrupted")
    record(3, not problems,
           f"k in {REPLAY_COUNTS}: exactly k 'DevNonce has already been used', session intact, golden match"
           + (f"; problems: {problems}" if problems else ""))


# 4 ---------------------------------------------------------------------------

def _replay_uplink(index):
    def edit(d):
        d["attacker"]["script"] = [
            {"at": 0, "action": "sniff", "duration_s": 60},
            {"at": 45, "action": "replay", "target": {"frame": "uplink", "index": index}, "gain_db": 6},
        ]
    return scenario("s2b_uplink_replay", edit)


def test_c4_uplink_replay_golden():
    problems = []
    art = run(golden_configs()["s2b_uplink_replay"])
    if art.verdicts != (GOLDEN / "s2b_uplink_replay.verdicts.jsonl").read_text():
        problems.append("shipped S2b verdict log differs from golden")
    configs = [golden_configs()["s2b_uplink_replay"]] + [_replay_uplink(i) for i in range(4)]
    for config in configs:
        sim = run(config).simulation
        log_ = sim.server.verdict_log
        (report,) = sim.attack_reports
        (v,) = report.verdicts
        if v is None or v.reason != FCNT_REUSED or v.reason.encode() != b"FCnt has already been used":
            problems.append(f"replay verdict {v}")
            continue
        i = log_.index(v)
        nxt = next((u for u in log_[i + 1:] if u.kind == "uplink" and u.tx_seqs != v.tx_seqs), None)
        if nxt is None or not nxt.accepted:
            problems.append(f"next legitimate uplink after t={v.time} not accepted")
    record(4, not problems,
           f"{len(configs)} uplink replays (fcnt 0..3 plus shipped) rejected byte-exact, next uplink accepted, "
           f"golden match" + (f"; problems: {problems}" if problems else ""))


# 5 ---------------------------------------------------------------------------

def test_c5_anti_replay_oracle():
    rng = random.Random(0xC5)
    mismatches = 0
    decisions = 0
    start = time.perf_counter()
    for trial in range(10_000):
        server = NetworkServer(seed=trial)
        server.register_device(IDENTITY)
        dev = Device(IDENTITY, random.Random(trial))
        join(server, dev)
        sent = []
        seen = set()
        t = 10.0
        for _ in range(rng.randint(1, 12)):
            if sent and rng.random() < 0.45:
                fcnt, wire = rng.choice(sent)
            else:
                if rng.random() < 0.2:
                    dev.session.fcnt_up = min(0xFFFE, dev.session.fcnt_up + rng.randint(1, 5))
                fcnt = dev.session.fcnt_up
                wire = encode_phy(dev.build_uplink(2, rng.randbytes(rng.randint(0, 10))))
                sent.append((fcnt, wire))
            expect = not seen or fcnt > max(seen)
            before = len(server.verdict_log)
            server.receive(rec(wire, t, "gw-01"), t)
            server.tick(t + server.dedup_window_s)
            (v,) = server.verdict_log[before:]
            decisions += 1
            if v.accepted != expect or (not expect and v.reason != FCNT_REUSED):
                mismatches += 1
            if v.accepted:
                seen.add(fcnt)
            t += 3.0
    elapsed = time.perf_counter() - start
    record(5, mismatches == 0 and elapsed < 60.0,
           f"{mismatches} mismatches over {decisions} decisions in 10000 interleavings "
           f"(tolerance 0), runtime {elapsed:.1f} s (limit 60 s)")


# 6 ---------------------------------------------------------------------------

def _cmac_vectors():
    for line in (FIXTURES / "crypto_vectors.txt").read_text().splitlines():
        if line and not line.startswith("#"):
            k, m, t = (p.strip() for p in line.split("|"))
            yield bytes.fromhex(k), bytes.fromhex("" if m == "-" else m), bytes.fromhex(t)


def test_c6_crypto_vectors_and_tamper():
    vectors = list(_cmac_vectors())
    matched = sum(crypto.aes_cmac(k, m) == t for k, m, t in vectors)

    rng = random.Random(0xC6)
    server = NetworkServer()
    server.register_device(IDENTITY)
    dev = Device(IDENTITY, random.Random(6))
    join(server, dev)
    joiner = Device(IDENTITY, random.Random(60))
    nwk = dev.session.nwk_s_key
    app_key = IDENTITY.app_key
    false_accepts = 0
    for i in range(10_000):
        if i % 2:
            joiner.reset()
            frame = joiner.build_join_request()
        else:
            frame = dev.build_uplink(2, rng.randbytes(rng.randint(0, 20)))
        wire = bytearray(encode_phy(frame))
        bit = rng.randrange(len(wire) * 8)
        wire[bit // 8] ^= 1 << (bit % 8)
        wire = bytes(wire)
        if frame.mtype is MType.JOIN_REQUEST:
            try:
                tampered = decode_phy(wire)
            except FrameError:
                continue  # undecodable, so never accepted
            if isinstance(tampered.body, JoinRequestPayload):
                ok = crypto.mic_equal(crypto.join_request_mic(app_key, wire[0], tampered.body), tampered.mic)
            else:
                ok = crypto.verify_data_frame(nwk, wire, Direction.UP)
        else:
            ok = crypto.verify_data_frame(nwk, wire, Direction.UP)
        false_accepts += ok
    record(6, matched == 4 == len(vectors) and false_accepts == 0,
           f"{matched}/4 CMAC reference vectors exact; {false_accepts} false accepts over "
           f"10000 single-bit flips (tolerance 0)")


# 7 ---------------------------------------------------------------------------

def _random_valid_frame(rng):
    kind = rng.randrange(3)
    mic = rng.randbytes(4)
    if kind == 0:
        return PhyFrame(Mhdr(MType.JOIN_REQUEST),
                        JoinRequestPayload(rng.getrandbits(64), rng.getrandbits(64), rng.getrandbits(16)), mic)
    if kind == 1:
        cf = rng.choice([b"", rng.randbytes(16)])
        return PhyFrame(Mhdr(MType.JOIN_ACCEPT), JoinAcceptPayload(
            rng.getrandbits(24), rng.getrandbits(24), rng.getrandbits(32), rng.getrandbits(8), rng.getrandbits(8), cf,
        ), mic)
    mtype = rng.choice([m for m in MType if m.is_data])
    fopts = rng.randbytes(rng.randint(0, 15))
    fhdr = Fhdr(rng.getrandbits(32), rng.getrandbits(16), fopts, rng.getrandbits(4))
    if rng.random() < 0.2:
        body = DataUpPayload(fhdr)
    else:
        room = 255 - 13 - len(fopts)
        body = DataUpPayload(fhdr, rng.randint(1, 223), rng.randbytes(rng.randint(0, room)))
    return PhyFrame(Mhdr(mtype), body, mic)


def test_c7_codec_fuzz():
    rng = random.Random(0xC7)
    mhdrs = [m << 5 for m in range(6)]
    crashes = decoded = 0
    for i in range(1_000_000):
        data = bytearray(rng.randbytes(rng.randint(0, 256)))
        if data and i % 2:
            data[0] = rng.choice(mhdrs)
        try:
            decode_phy(bytes(data))
            decoded += 1
        except FrameError:
            pass
        except Exception:  # noqa: BLE001
            crashes += 1
    mismatches = 0
    for _ in range(100_000):
        frame = _random_valid_frame(rng)
        wire = encode_phy(frame)
        if decode_phy(wire) != frame or encode_phy(decode_phy(wire)) != wire:
            mismatches += 1
    record(7, crashes == 0 and mismatches == 0,
           f"{crashes} crashes over 10^6 random inputs ({decoded} decoded); "
           f"{mismatches} round-trip mismatches over 10^5 valid frames (tolerance 0 each)")


# 8 ---------------------------------------------------------------------------

def test_c8_distance_estimation():
    model = PathLossModel()
    worst = max(abs(estimate_distance(model, 14.0, rssi_at(model, 14.0, d)) - d) / d for d in (1, 10, 100, 1000))

    bound = json.loads((FIXTURES / "distance_bound.json").read_text())
    nominal = PathLossModel(exponent=bound["exponent"])
    shadowed = PathLossModel(exponent=bound["exponent"], shadow_sigma_db=bound["sigma_db"])
    d = bound["distance_m"]
    rng = random.Random(0xC8)
    errors = [abs(estimate_distance(nominal, 14.0, rssi_at(shadowed, 14.0, d, rng)) - d) / d
              for _ in range(bound["trials"])]
    median = statistics.median(errors)
    record(8, worst <= 1e-9 and median < bound["bound"],
           f"max inverse error {worst:.2e} relative (limit 1e-9); median error under sigma=2 dB "
           f"{median:.4f} vs Monte-Carlo bound {bound['bound']}")


# 9 ---------------------------------------------------------------------------

def test_c9_movement_inference():
    def fixed(d):
        d["devices"][0]["waypoints"] = d["devices"][0]["waypoints"][:1]

    def verdict(config):
        movement = json.loads(run(config).reports)["movement"]
        return movement[-1]["movement"] if movement else None

    moving, still = verdict(scenario("s1_sniff")), verdict(scenario("s1_sniff", fixed))
    record(9, moving == "Moving" and still == "Stationary",
           f"moving device classified {moving} (want Moving), fixed device classified {still} (want Stationary)")


# 10 --------------------------------------------------------------------------

def _cli_run(name, out, hashseed):
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    subprocess.run([sys.executable, "-m", "lorawan_sim", "run", name, "--out", str(out)],
                   check=True, env=env, capture_output=True)
    return {f: (out / f).read_bytes() for f in ARTIFACT_FILES}


@pytest.mark.slow
def test_c10_determinism(tmp_path):
    differing = []
    for name in SHIPPED:
        first = _cli_run(name, tmp_path / name / "a", 1)
        second = _cli_run(name, tmp_path / name / "b", 2)
        in_process = {f: t.encode() for f, t in run(scenario(name)).files().items()}
        for f in ARTIFACT_FILES:
            if not first[f] == second[f] == in_process[f]:
                differing.append(f"{name}/{f}")
    record(10, not differing,
           f"{len(SHIPPED)} scenarios x 2 runs (separate processes, different hash seeds) byte-identical "
           f"across {len(ARTIFACT_FILES)} artifact files" + (f"; differing: {differing}" if differing else ""))
