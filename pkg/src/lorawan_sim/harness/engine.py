"""Deterministic discrete-event runner for attack scenarios.

Simulated time is kept as integer milliseconds; every random draw comes from
a named stream derived from the scenario seed, so a run is a pure function
of its config.
"""

from __future__ import annotations

import heapq
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from ..attacker import (
    DEAUTH_HYPOTHESIS,
    AttackReport,
    Attacker,
    OuiTable,
    extract_join_intel,
    movement_by_device,
)
from ..codec import MType, PhyFrame, display_eui, encode_phy
from ..crypto import redact_key
from ..device import (
    GNSS_FPORT,
    Device,
    Phase,
    decode_gnss,
    local_to_fix,
    position_at,
)
from ..radio import CaptureRecord, PathLossModel, RadioChannel
from ..server import NetworkServer, Verdict
from .config import AttackAction, DeviceConfig, ScenarioConfig, shipped_oui_text
from .formats import dump_capture, dump_json, dump_verdicts

log = logging.getLogger(__name__)

ARTIFACT_FILES = ("capture.jsonl", "verdicts.jsonl", "reports.json", "summary.json")


def _ms(seconds: float) -> int:
    return int(round(seconds * 1000))


def make_server(config: ScenarioConfig) -> NetworkServer:
    server = NetworkServer(
        net_id=config.server.net_id,
        dedup_window_s=config.server.dedup_window_s,
        dev_addr_base=config.server.dev_addr_base,
        seed=config.seed,
    )
    by_eui = {d.identity.dev_eui: d for d in config.devices}
    for eui in config.registered:
        server.register_device(by_eui[eui].identity)
    return server


@dataclass
class RunArtifacts:
    capture: str
    verdicts: str
    reports: str
    summary: str
    simulation: "Simulation | None" = field(default=None, compare=False, repr=False)

    def files(self) -> dict[str, str]:
        return dict(zip(ARTIFACT_FILES, (self.capture, self.verdicts, self.reports, self.summary)))

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files().items():
            (out / name).write_text(text)
        return out


class Simulation:
    def __init__(self, config: ScenarioConfig, oui: OuiTable | None = None):
        self.config = config
        self._queue: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self.now_ms = 0
        self.end_ms = _ms(config.duration_s)

        self.server = make_server(config)
        self.capture: list[CaptureRecord] = []
        self.channel = RadioChannel(
            config.model,
            [(g.id, g.position) for g in config.gateways],
            seed=config.seed,
            noise_floor_dbm=config.noise_floor_dbm,
            gateway_sink=self._gateway_rx,
        )

        self.devices: dict[int, tuple[DeviceConfig, Device]] = {}
        self.freq_offsets: dict[int, int] = {}
        self.uplinks_sent: Counter[int] = Counter()
        for dc in config.devices:
            eui = dc.identity.dev_eui
            dev = Device(dc.identity, random.Random(f"{config.seed}/device/{eui:016X}"))
            self.devices[eui] = (dc, dev)
            if dc.freq_offset_hz is not None:
                self.freq_offsets[eui] = dc.freq_offset_hz
            else:
                self.freq_offsets[eui] = random.Random(f"{config.seed}/xtal/{eui:016X}").randint(-5000, 5000)

        self.attacker: Attacker | None = None
        self.intel: list[dict] = []
        self.movement: list[dict] = []
        self.attack_reports: list[AttackReport] = []
        self.notes: list[str] = []
        if config.attacker is not None:
            self.attacker = Attacker(
                self.channel, config.attacker.position,
                assumed_tx_power_dbm=config.attacker.assumed_tx_power_dbm,
            )
            if oui is None:
                oui = OuiTable.load(config.attacker.oui_file) if config.attacker.oui_file else OuiTable.parse(shipped_oui_text())
        self.oui = oui or OuiTable()
        self.channel.observers.append(self.capture.append)

    # -- event loop -----------------------------------------------------

    @property
    def now(self) -> float:
        return self.now_ms / 1000

    def schedule(self, at: float, action: Callable[[], None]) -> None:
        t = _ms(at)
        if t < self.now_ms:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, (t, self._seq, action))
        self._seq += 1

    def run(self) -> RunArtifacts:
        for dc, _ in self.devices.values():
            self.schedule(dc.join_at_s, self._device_tick(dc.identity.dev_eui))
        if self.config.attacker is not None:
            for act in self.config.attacker.script:
                self.schedule(act.at, self._attacker_action(act))

        while self._queue and self._queue[0][0] <= self.end_ms:
            t, _, action = heapq.heappop(self._queue)
            self.now_ms = t
            action()
        self.now_ms = self.end_ms
        self._handle_results(self.server.tick(self.now, force=True))

        for report in self.attack_reports:
            report.collect(self.server.verdict_log)
        return self._artifacts()

    # -- radio plumbing ---------------------------------------------------

    def _gateway_rx(self, record: CaptureRecord) -> None:
        self._handle_results(self.server.receive(record, self.now))
        self.schedule(self.now + self.server.dedup_window_s, self._server_tick)

    def _server_tick(self) -> None:
        self._handle_results(self.server.tick(self.now))

    def _handle_results(self, results: Iterable[tuple[Verdict, object]]) -> None:
        for verdict, result in results:
            if verdict.kind == "join" and verdict.accepted and isinstance(result, PhyFrame):
                self._deliver_join_accept(verdict, result)

    def _deliver_join_accept(self, verdict: Verdict, accept: PhyFrame) -> None:
        eui = int(verdict.dev_eui, 16)
        _, dev = self.devices[eui]
        if dev.phase is not Phase.JOIN_PENDING:
            log.debug("device %s not waiting for a join-accept", verdict.dev_eui)
            return
        pending = dev.state.pending_nonce
        if pending != verdict.dev_nonce:
            # Accept answers a stale request (e.g. a replay); the device cannot use it.
            log.debug("join-accept for nonce %s ignored, device waits on %s", verdict.dev_nonce, pending)
            return
        dev.process_join_accept(accept)

    # -- device behaviour -------------------------------------------------

    def _device_tick(self, eui: int) -> Callable[[], None]:
        def tick() -> None:
            dc, dev = self.devices[eui]
            if dev.phase is Phase.JOINED:
                pos = position_at(dc.movement, self.now)
                fix = local_to_fix(pos, *self.config.origin, alt_m=dc.alt_m)
                frame, _ = dev.build_gnss_uplink(fix)
                self.uplinks_sent[eui] += 1
                self._transmit(dc, frame)
            else:
                dev.join_timeout()
                self._transmit(dc, dev.build_join_request())
            nxt = self.now + dc.uplink_period_s
            if _ms(nxt) <= self.end_ms:
                self.schedule(nxt, tick)
        return tick

    def _transmit(self, dc: DeviceConfig, frame: PhyFrame) -> None:
        pos = position_at(dc.movement, self.now)
        eui = dc.identity.dev_eui
        self.channel.transmit(encode_phy(frame), dc.tx, pos, self.now, f"device:{eui:016X}", self.freq_offsets[eui])

    # -- attacker script ----------------------------------------------------

    def _attacker_action(self, act: AttackAction) -> Callable[[], None]:
        def run() -> None:
            assert self.attacker is not None and self.config.attacker is not None
            if act.action == "sniff":
                self.attacker.sniff(self.now, act.duration_s)
            elif act.action == "extract":
                self._extract()
            elif act.action == "infer":
                for addr, verdict in movement_by_device(self.attacker.sniff_log(), act.window_s, act.threshold_db).items():
                    self.movement.append({
                        "t": round(self.now, 3), "dev_addr": f"{addr:08X}", "movement": verdict.value,
                        "window_s": act.window_s, "threshold_db": act.threshold_db,
                    })
            elif act.action == "replay":
                self._replay(act)
        return run

    def _nominal_model(self) -> PathLossModel:
        m = self.config.model
        return PathLossModel(m.rssi_ref_dbm, m.ref_distance_m, m.exponent, 0.0)

    def _extract(self) -> None:
        notes: list[str] = []
        att = self.config.attacker
        intel = extract_join_intel(
            self.attacker.sniff_log(), self.oui, self._nominal_model(), att.assumed_tx_power_dbm, notes,
        )
        self.notes.extend(notes)
        for item in intel:
            entry = {"t": round(self.now, 3), "intel": item.to_dict()}
            dev = self.devices.get(int(item.dev_eui, 16))
            if dev is not None:
                true_d = position_at(dev[0].movement, item.timestamp).distance_to(att.position)
                entry["ground_truth"] = {
                    "distance_m": round(true_d, 2),
                    "distance_error_m": round(item.est_distance_m - true_d, 2),
                    "tx_power_dbm": dev[0].tx.tx_power_dbm,
                }
            self.intel.append(entry)

    def _replay(self, act: AttackAction) -> None:
        mtypes = (MType.JOIN_REQUEST,) if act.target.frame == "join_request" else (
            MType.UNCONFIRMED_DATA_UP, MType.CONFIRMED_DATA_UP)
        candidates = self.attacker.sniff_log().frames_of(*mtypes)
        if act.target.index >= len(candidates):
            self.notes.append(
                f"t={self.now:.3f}: replay skipped, no sniffed {act.target.frame} #{act.target.index}"
            )
            return
        report = self.attacker.replay(self, candidates[act.target.index], act.gain_db, act.count, act.inter_frame_s)
        if report.kind.value == "JoinReplay":
            report.notes.append(DEAUTH_HYPOTHESIS)
        self.attack_reports.append(report)

    # -- output -------------------------------------------------------------

    def _artifacts(self) -> RunArtifacts:
        reports = {
            "scenario": self.config.name,
            "seed": self.config.seed,
            "intel": self.intel,
            "movement": self.movement,
            "attacks": [r.to_dict() for r in self.attack_reports],
            "hypotheses": [{"statement": DEAUTH_HYPOTHESIS, "status": "unvalidated"}],
            "notes": self.notes,
        }
        return RunArtifacts(
            capture=dump_capture(self.capture),
            verdicts=dump_verdicts(self.server.verdict_log),
            reports=dump_json(reports),
            summary=dump_json(self.summary()),
            simulation=self,
        )

    def summary(self) -> dict:
        verdicts = self.server.verdict_log
        rejected = Counter(v.reason for v in verdicts if not v.accepted)
        devices = []
        for eui, (dc, dev) in sorted(self.devices.items()):
            session = dev.session
            devices.append({
                "dev_eui": display_eui(eui),
                "name": dc.name,
                "phase": dev.phase.value,
                "dev_addr": None if session is None else f"{session.dev_addr:08X}",
                "nwk_s_key": None if session is None else redact_key(session.nwk_s_key),
                "app_s_key": None if session is None else redact_key(session.app_s_key),
                "fcnt_up": None if session is None else session.fcnt_up,
                "uplinks_sent": self.uplinks_sent[eui],
                "dev_nonces_used": len(dev.state.used_dev_nonces),
            })
        app = []
        for up in self.server.app_log:
            entry = {
                "t": round(up.time, 3), "dev_eui": display_eui(up.dev_eui), "fcnt": up.fcnt,
                "fport": up.fport, "payload_hex": up.payload.hex(),
            }
            if up.fport == GNSS_FPORT:
                try:
                    fix = decode_gnss(up.payload)
                    entry["fix"] = {"lat": fix.lat_deg, "lon": fix.lon_deg, "alt_m": fix.alt_m}
                except ValueError:
                    pass
            app.append(entry)
        return {
            "scenario": self.config.name,
            "seed": self.config.seed,
            "duration_s": self.config.duration_s,
            "transmissions": self.channel.tx_count,
            "receptions": len(self.capture),
            "verdicts": {
                "accepted": sum(v.accepted for v in verdicts),
                "rejected": dict(sorted(rejected.items())),
            },
            "devices": devices,
            "application_uplinks": app,
        }


def run(config: ScenarioConfig, oui: OuiTable | None = None) -> RunArtifacts:
    return Simulation(config, oui).run()


def refeed(config: ScenarioConfig, records: Iterable[CaptureRecord]) -> list[Verdict]:
    """Push the gateway receptions of a capture through a fresh server."""
    server = make_server(config)
    gateways = {g.id for g in config.gateways}
    for rec in records:
        if rec.rx.gateway_id in gateways:
            server.receive(rec, rec.rx.timestamp)
    server.tick(config.duration_s, force=True)
    return server.verdict_log
