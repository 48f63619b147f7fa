"""Broadcast radio medium: log-distance path loss, reception metadata, and the
inverse problem of ranging a transmitter from its RSSI."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .codec import DataRateSpec, FrameError, PhyFrame, decode_phy

DEFAULT_FREQUENCY_HZ = 868_300_000
EU868_BAND_HZ = (863_000_000, 870_000_000)
DEFAULT_NOISE_FLOOR_DBM = -100.0
FREQ_JITTER_HZ = 200
# Free-space loss at 1 m for 868.3 MHz is 31.2 dB.
DEFAULT_RSSI_REF_DBM = -31.2


class TooClose(ValueError):
    pass


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"position must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class TxParams:
    frequency_hz: int = DEFAULT_FREQUENCY_HZ
    data_rate: DataRateSpec = field(default_factory=DataRateSpec)
    # None when read back from a capture: receivers never learn the tx power.
    tx_power_dbm: float | None = 14.0

    def __post_init__(self):
        lo, hi = EU868_BAND_HZ
        if not lo <= self.frequency_hz <= hi:
            raise ValueError(f"frequency {self.frequency_hz} Hz outside EU868 band")
        if self.tx_power_dbm is not None and not -20 <= self.tx_power_dbm <= 30:
            raise ValueError(f"tx power {self.tx_power_dbm} dBm outside [-20, 30]")


@dataclass(frozen=True)
class PathLossModel:
    rssi_ref_dbm: float = DEFAULT_RSSI_REF_DBM
    ref_distance_m: float = 1.0
    exponent: float = 2.7
    shadow_sigma_db: float = 0.0

    def __post_init__(self):
        if self.ref_distance_m <= 0:
            raise ValueError("ref_distance_m must be positive")
        if self.exponent <= 0:
            raise ValueError("path-loss exponent must be positive")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be non-negative")


@dataclass(frozen=True)
class RxMetadata:
    rssi_dbm: float
    snr_db: float
    frequency_hz: int
    freq_offset_hz: int
    timestamp: float
    gateway_id: str


@dataclass(frozen=True)
class CaptureRecord:
    rx: RxMetadata
    tx_params: TxParams
    wire: bytes
    decoded: PhyFrame | None = None
    # Transmission sequence number; shared by every receiver of one transmission.
    tx_seq: int | None = None

    @classmethod
    def build(cls, rx: RxMetadata, tx_params: TxParams, wire: bytes, tx_seq: int | None = None) -> "CaptureRecord":
        try:
            decoded = decode_phy(wire)
        except FrameError:
            decoded = None
        return cls(rx, tx_params, bytes(wire), decoded, tx_seq)


def sensitivity_floor(spreading_factor: int) -> float:
    return -120.0 if spreading_factor <= 9 else -130.0


def rssi_at(
    model: PathLossModel,
    tx_power_dbm: float,
    distance_m: float,
    rng: random.Random | None = None,
) -> float:
    if distance_m < model.ref_distance_m:
        raise TooClose(f"distance {distance_m} m is below reference distance {model.ref_distance_m} m")
    rssi = tx_power_dbm + model.rssi_ref_dbm - 10 * model.exponent * math.log10(distance_m / model.ref_distance_m)
    if model.shadow_sigma_db > 0:
        if rng is None:
            raise ValueError("shadowing requires a seeded rng")
        rssi += rng.gauss(0.0, model.shadow_sigma_db)
    return rssi


def estimate_distance(model: PathLossModel, tx_power_dbm: float, rssi_dbm: float) -> float:
    """Invert the nominal (unshadowed) model."""
    return model.ref_distance_m * 10 ** ((tx_power_dbm + model.rssi_ref_dbm - rssi_dbm) / (10 * model.exponent))


def propagate(
    wire: bytes,
    tx: TxParams,
    tx_pos: Position,
    gateways: Iterable[tuple[str, Position]],
    model: PathLossModel,
    now: float,
    rng: random.Random | Callable[[str], random.Random],
    base_freq_offset_hz: int = 0,
    noise_floor_dbm: float = DEFAULT_NOISE_FLOOR_DBM,
    tx_seq: int | None = None,
) -> list[CaptureRecord]:
    """Deliver one transmission to every receiver that hears it.

    ``rng`` may be a single generator or a factory returning the generator for
    a receiver id; the harness uses per-receiver streams so that adding a
    passive listener never perturbs what the gateways see.
    """
    if tx.tx_power_dbm is None:
        raise ValueError("transmitter power must be known to propagate")
    floor = sensitivity_floor(tx.data_rate.spreading_factor)
    out = []
    for gw_id, gw_pos in gateways:
        r = rng(gw_id) if callable(rng) else rng
        distance = max(tx_pos.distance_to(gw_pos), model.ref_distance_m)
        rssi = rssi_at(model, tx.tx_power_dbm, distance, r)
        jitter = r.randint(-FREQ_JITTER_HZ, FREQ_JITTER_HZ)
        if rssi < floor:
            continue
        meta = RxMetadata(
            rssi_dbm=round(rssi, 2),
            snr_db=round(rssi - noise_floor_dbm, 2),
            frequency_hz=tx.frequency_hz,
            freq_offset_hz=base_freq_offset_hz + jitter,
            timestamp=now,
            gateway_id=gw_id,
        )
        out.append(CaptureRecord.build(meta, tx, wire, tx_seq))
    return out


class RadioChannel:
    """The shared medium: fixed gateways plus passive taps, one rng stream per receiver."""

    def __init__(
        self,
        model: PathLossModel,
        gateways: Sequence[tuple[str, Position]],
        seed: int = 0,
        noise_floor_dbm: float = DEFAULT_NOISE_FLOOR_DBM,
        gateway_sink: Callable[[CaptureRecord], None] | None = None,
    ):
        self.model = model
        self.gateways = list(gateways)
        self.seed = seed
        self.noise_floor_dbm = noise_floor_dbm
        self.taps: dict[str, tuple[Position, Callable[[CaptureRecord], None]]] = {}
        self.gateway_sink = gateway_sink
        # Called for every reception, gateway or tap, in delivery order.
        self.observers: list[Callable[[CaptureRecord], None]] = []
        self._rngs: dict[str, random.Random] = {}
        self.tx_count = 0

    def rng_for(self, receiver_id: str) -> random.Random:
        if receiver_id not in self._rngs:
            self._rngs[receiver_id] = random.Random(f"{self.seed}/channel/{receiver_id}")
        return self._rngs[receiver_id]

    def add_tap(self, receiver_id: str, position: Position, callback: Callable[[CaptureRecord], None]) -> None:
        if receiver_id in self.taps or any(receiver_id == g for g, _ in self.gateways):
            raise ValueError(f"receiver id {receiver_id!r} already in use")
        self.taps[receiver_id] = (position, callback)

    def transmit(
        self,
        wire: bytes,
        tx: TxParams,
        tx_pos: Position,
        now: float,
        source: str,
        base_freq_offset_hz: int = 0,
    ) -> list[CaptureRecord]:
        """Broadcast; returns the gateway receptions and feeds every tap in range."""
        seq = self.tx_count
        self.tx_count += 1
        received = propagate(
            wire, tx, tx_pos, self.gateways, self.model, now, self.rng_for,
            base_freq_offset_hz, self.noise_floor_dbm, seq,
        )
        for rec in received:
            for observe in self.observers:
                observe(rec)
            if self.gateway_sink is not None:
                self.gateway_sink(rec)
        for tap_id, (pos, callback) in self.taps.items():
            if tap_id == source:
                continue
            for rec in propagate(
                wire, tx, tx_pos, [(tap_id, pos)], self.model, now, self.rng_for,
                base_freq_offset_hz, self.noise_floor_dbm, seq,
            ):
                for observe in self.observers:
                    observe(rec)
                callback(rec)
        return received
