"""Passive sniffer with metadata analytics, and the frame replayer.

The attacker holds no key material. Everything it learns comes from the
plaintext parts of frames and from the radio metadata of each reception.
"""

from __future__ import annotations

import enum
import logging
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .codec import DataRateSpec, DataUpPayload, FrameError, JoinRequestPayload, MType, decode_phy, display_eui
from .radio import CaptureRecord, PathLossModel, Position, RadioChannel, TxParams, estimate_distance
from .server import Verdict, frame_digest

log = logging.getLogger(__name__)

ATTACKER_ID = "attacker"
DEFAULT_ASSUMED_TX_POWER_DBM = 14.0
DEFAULT_MOVEMENT_WINDOW_S = 60.0
DEFAULT_MOVEMENT_THRESHOLD_DB = 3.0
MIN_MOVEMENT_SAMPLES = 4

DEAUTH_HYPOTHESIS = (
    "High-volume join-request replay might knock the device off the network. "
    "Unvalidated: not modelled by this simulator."
)


class Movement(enum.Enum):
    MOVING = "Moving"
    STATIONARY = "Stationary"
    INSUFFICIENT = "Insufficient"


class AttackKind(enum.Enum):
    JOIN_REPLAY = "JoinReplay"
    UPLINK_REPLAY = "UplinkReplay"


@dataclass
class SniffLog:
    records: list[CaptureRecord] = field(default_factory=list)

    def __post_init__(self):
        given, self.records = self.records, []
        for record in given:
            self.append(record)

    def append(self, record: CaptureRecord) -> None:
        if self.records and record.rx.timestamp < self.records[-1].rx.timestamp:
            raise ValueError("sniff log must be time-ordered")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def frames_of(self, *mtypes: MType) -> list[CaptureRecord]:
        return [r for r in self.records if r.decoded is not None and r.decoded.mtype in mtypes]


@dataclass(frozen=True)
class JoinIntel:
    dev_eui: str
    dev_nonce: int
    data_rate: DataRateSpec
    frequency_hz: int
    timestamp: float
    rssi_dbm: float
    freq_offset_hz: int
    snr_db: float
    manufacturer: str | None = None
    est_distance_m: float | None = None

    def to_dict(self) -> dict:
        return {
            "dev_eui": self.dev_eui,
            "dev_nonce": self.dev_nonce,
            "sf": self.data_rate.spreading_factor,
            "bw_khz": self.data_rate.bandwidth_khz,
            "cr": self.data_rate.coding_rate,
            "frequency_hz": self.frequency_hz,
            "timestamp": round(self.timestamp, 3),
            "rssi_dbm": round(self.rssi_dbm, 2),
            "freq_offset_hz": self.freq_offset_hz,
            "snr_db": round(self.snr_db, 2),
            "manufacturer": self.manufacturer,
            "est_distance_m": None if self.est_distance_m is None else round(self.est_distance_m, 2),
        }


class OuiTable(dict):
    """EUI prefix (6 hex digits, display order) to manufacturer name."""

    @classmethod
    def parse(cls, text: str) -> "OuiTable":
        table = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            prefix, _, name = line.partition(" ")
            prefix = prefix.upper()
            if len(prefix) != 6 or any(c not in "0123456789ABCDEF" for c in prefix) or not name.strip():
                raise ValueError(f"line {lineno}: expected '<6 hex digits> <name>', got {line!r}")
            if prefix in table:
                raise ValueError(f"line {lineno}: duplicate prefix {prefix}")
            table[prefix] = name.strip()
        return table

    @classmethod
    def load(cls, path: str | Path) -> "OuiTable":
        return cls.parse(Path(path).read_text())

    def lookup(self, eui: int | str) -> str | None:
        text = eui if isinstance(eui, str) else display_eui(eui)
        return self.get(text[:6].upper())


def sniff(records: Iterable[CaptureRecord], start: float = 0.0, duration: float = float("inf")) -> SniffLog:
    """Collect the receptions that fall inside a listening window."""
    out = SniffLog()
    for rec in sorted(records, key=lambda r: r.rx.timestamp):
        if start <= rec.rx.timestamp <= start + duration:
            out.append(rec)
    return out


def extract_join_intel(
    log_: SniffLog,
    oui: OuiTable,
    model: PathLossModel,
    assumed_tx_power_dbm: float = DEFAULT_ASSUMED_TX_POWER_DBM,
    notes: list[str] | None = None,
) -> list[JoinIntel]:
    intel = []
    for rec in log_:
        frame = rec.decoded
        if frame is None:
            try:
                frame = decode_phy(rec.wire)
            except FrameError as exc:
                msg = f"t={rec.rx.timestamp:.3f}: skipped unparseable frame ({exc})"
                log.debug(msg)
                if notes is not None:
                    notes.append(msg)
                continue
        if not isinstance(frame.body, JoinRequestPayload):
            continue
        jr = frame.body
        intel.append(JoinIntel(
            dev_eui=display_eui(jr.dev_eui),
            dev_nonce=jr.dev_nonce,
            data_rate=rec.tx_params.data_rate,
            frequency_hz=rec.rx.frequency_hz,
            timestamp=rec.rx.timestamp,
            rssi_dbm=rec.rx.rssi_dbm,
            freq_offset_hz=rec.rx.freq_offset_hz,
            snr_db=rec.rx.snr_db,
            manufacturer=oui.lookup(jr.dev_eui),
            est_distance_m=estimate_distance(model, assumed_tx_power_dbm, rec.rx.rssi_dbm),
        ))
    return intel


def _uplinks_by_addr(log_: SniffLog) -> dict[int, list[CaptureRecord]]:
    by_addr: dict[int, list[CaptureRecord]] = {}
    for rec in log_.frames_of(MType.UNCONFIRMED_DATA_UP, MType.CONFIRMED_DATA_UP):
        body = rec.decoded.body
        assert isinstance(body, DataUpPayload)
        by_addr.setdefault(body.fhdr.dev_addr, []).append(rec)
    return by_addr


def infer_movement(
    log_: SniffLog,
    window_s: float = DEFAULT_MOVEMENT_WINDOW_S,
    threshold_db: float = DEFAULT_MOVEMENT_THRESHOLD_DB,
    dev_addr: int | None = None,
) -> Movement:
    """Classify one device from the RSSI spread of its uplinks.

    Uses the ``window_s`` seconds ending at the device's last uplink. Without
    ``dev_addr`` the most frequently heard device is taken.
    """
    by_addr = _uplinks_by_addr(log_)
    if not by_addr:
        return Movement.INSUFFICIENT
    if dev_addr is None:
        dev_addr = Counter({a: len(r) for a, r in by_addr.items()}).most_common(1)[0][0]
    records = by_addr.get(dev_addr, [])
    if not records:
        return Movement.INSUFFICIENT
    end = records[-1].rx.timestamp
    rssi = [r.rx.rssi_dbm for r in records if r.rx.timestamp >= end - window_s]
    if len(rssi) < MIN_MOVEMENT_SAMPLES:
        return Movement.INSUFFICIENT
    return Movement.MOVING if statistics.pstdev(rssi) > threshold_db else Movement.STATIONARY


def movement_by_device(log_: SniffLog, window_s: float, threshold_db: float) -> dict[int, Movement]:
    return {
        addr: infer_movement(log_, window_s, threshold_db, addr)
        for addr in sorted(_uplinks_by_addr(log_))
    }


@dataclass(frozen=True)
class ReplayTx:
    time: float
    tx_seq: int
    gain_offset_db: float
    tx_power_dbm: float


@dataclass
class AttackReport:
    kind: AttackKind
    target_digest: str
    gain_offset_db: float
    transmissions: list[ReplayTx] = field(default_factory=list)
    verdicts: list[Verdict | None] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def collect(self, verdict_log: Sequence[Verdict]) -> None:
        """Attach the server verdict that covered each transmission."""
        self.verdicts = []
        for tx in self.transmissions:
            match = next((v for v in verdict_log if tx.tx_seq in v.tx_seqs and v.kind != "duplicate"), None)
            self.verdicts.append(match)

    @property
    def summary(self) -> str:
        reasons = Counter(v.reason or v.outcome.value for v in self.verdicts if v is not None)
        unseen = sum(v is None for v in self.verdicts)
        parts = [f"{n}x {r}" for r, n in sorted(reasons.items())]
        if unseen:
            parts.append(f"{unseen}x not received by the network")
        return f"{len(self.transmissions)} frame(s) replayed: " + (", ".join(parts) or "no verdicts")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "target_digest": self.target_digest,
            "frames_transmitted": len(self.transmissions),
            "gain_offset_db": self.gain_offset_db,
            "transmissions": [
                {"t": round(tx.time, 3), "tx": tx.tx_seq, "tx_power_dbm": round(tx.tx_power_dbm, 2)}
                for tx in self.transmissions
            ],
            "verdicts": [None if v is None else v.to_dict() for v in self.verdicts],
            "notes": list(self.notes),
            "summary": self.summary,
        }


class Scheduler(Protocol):
    now: float

    def schedule(self, at: float, action) -> None: ...


class Attacker:
    """One radio at a fixed position: listens passively and can retransmit captures."""

    def __init__(
        self,
        channel: RadioChannel,
        position: Position,
        receiver_id: str = ATTACKER_ID,
        assumed_tx_power_dbm: float = DEFAULT_ASSUMED_TX_POWER_DBM,
    ):
        self.channel = channel
        self.position = position
        self.receiver_id = receiver_id
        self.assumed_tx_power_dbm = assumed_tx_power_dbm
        self.heard: list[CaptureRecord] = []
        self.windows: list[tuple[float, float]] = []
        self.reports: list[AttackReport] = []
        channel.add_tap(receiver_id, position, self._on_receive)

    def _on_receive(self, record: CaptureRecord) -> None:
        self.heard.append(record)

    def sniff(self, start: float, duration: float) -> None:
        self.windows.append((start, duration))

    def sniff_log(self) -> SniffLog:
        out = SniffLog()
        for rec in self.heard:
            if any(s <= rec.rx.timestamp <= s + d for s, d in self.windows):
                out.append(rec)
        return out

    def replay(
        self,
        scheduler: Scheduler,
        target: CaptureRecord,
        gain_offset_db: float = 0.0,
        count: int = 1,
        inter_frame_s: float = 0.0,
    ) -> AttackReport:
        """Retransmit the captured bytes ``count`` times, unchanged.

        The report fills in as the transmissions fire; call
        :meth:`AttackReport.collect` once the server has ruled.
        """
        if not target.wire:
            raise ValueError("nothing to replay")
        frame = target.decoded
        kind = AttackKind.JOIN_REPLAY if frame is not None and frame.mtype == MType.JOIN_REQUEST else AttackKind.UPLINK_REPLAY
        report = AttackReport(kind, frame_digest(target.wire), gain_offset_db)
        power = min(30.0, max(-20.0, self.assumed_tx_power_dbm + gain_offset_db))
        tx = TxParams(target.rx.frequency_hz, target.tx_params.data_rate, power)
        wire = bytes(target.wire)

        def fire() -> None:
            seq = self.channel.tx_count
            self.channel.transmit(wire, tx, self.position, scheduler.now, self.receiver_id)
            report.transmissions.append(ReplayTx(scheduler.now, seq, gain_offset_db, power))

        for i in range(count):
            scheduler.schedule(scheduler.now + i * inter_frame_s, fire)
        self.reports.append(report)
        return report
