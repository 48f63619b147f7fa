"""Class-A OTAA end-device: join, session keys, GNSS uplinks, movement."""

from __future__ import annotations

import bisect
import enum
import logging
import math
import random
import struct
from dataclasses import dataclass, field

from . import crypto
from .codec import (
    DataUpPayload,
    Fhdr,
    JoinAcceptPayload,
    JoinRequestPayload,
    Mhdr,
    MType,
    PhyFrame,
    decode_phy,
    encode_body,
    encode_phy,
)
from .crypto import Aes128Key, Direction
from .radio import Position

log = logging.getLogger(__name__)

GNSS_FPORT = 2
GNSS_PAYLOAD_LEN = 10
NONCE_SPACE = 1 << 16
METERS_PER_DEG_LAT = 111_320.0


class DeviceError(Exception):
    pass


class NoncesExhausted(DeviceError):
    pass


class BadMic(DeviceError):
    pass


class NotPending(DeviceError):
    pass


class NotJoined(DeviceError):
    pass


class CounterExhausted(DeviceError):
    pass


class Phase(enum.Enum):
    IDLE = "Idle"
    JOIN_PENDING = "JoinPending"
    JOINED = "Joined"


@dataclass(frozen=True)
class DeviceIdentity:
    dev_eui: int
    app_eui: int
    app_key: Aes128Key


@dataclass
class Session:
    dev_addr: int
    nwk_s_key: Aes128Key
    app_s_key: Aes128Key
    fcnt_up: int = 0


@dataclass
class DeviceState:
    phase: Phase = Phase.IDLE
    used_dev_nonces: set[int] = field(default_factory=set)
    pending_nonce: int | None = None
    session: Session | None = None


@dataclass(frozen=True)
class GnssFix:
    lat_deg: float
    lon_deg: float
    alt_m: int = 0

    def __post_init__(self):
        if abs(self.lat_deg) > 90 or abs(self.lon_deg) > 180:
            raise ValueError(f"fix out of range: {self.lat_deg}, {self.lon_deg}")
        if not 0 <= self.alt_m <= 0xFFFF:
            raise ValueError(f"altitude {self.alt_m} m does not fit the payload")


def encode_gnss(fix: GnssFix) -> bytes:
    return struct.pack(
        "<iiH", round(fix.lat_deg * 1e7), round(fix.lon_deg * 1e7), int(round(fix.alt_m))
    )


def decode_gnss(payload: bytes) -> GnssFix:
    if len(payload) != GNSS_PAYLOAD_LEN:
        raise ValueError(f"GNSS payload must be {GNSS_PAYLOAD_LEN} bytes, got {len(payload)}")
    lat, lon, alt = struct.unpack("<iiH", payload)
    return GnssFix(lat / 1e7, lon / 1e7, alt)


def local_to_fix(pos: Position, origin_lat: float, origin_lon: float, alt_m: int = 0) -> GnssFix:
    """Equirectangular projection of planar metres around an origin."""
    lat = origin_lat + pos.y / METERS_PER_DEG_LAT
    lon = origin_lon + pos.x / (METERS_PER_DEG_LAT * math.cos(math.radians(origin_lat)))
    return GnssFix(round(lat, 7), round(lon, 7), alt_m)


@dataclass(frozen=True)
class MovementModel:
    waypoints: tuple[tuple[Position, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        times = [t for _, t in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    @classmethod
    def fixed(cls, pos: Position) -> "MovementModel":
        return cls(((pos, 0.0),))


def position_at(m: MovementModel, t: float) -> Position:
    if not m.waypoints:
        raise ValueError("movement model has no waypoints")
    times = [wt for _, wt in m.waypoints]
    if t <= times[0]:
        return m.waypoints[0][0]
    if t >= times[-1]:
        return m.waypoints[-1][0]
    i = bisect.bisect_right(times, t)
    (p0, t0), (p1, t1) = m.waypoints[i - 1], m.waypoints[i]
    f = (t - t0) / (t1 - t0)
    return Position(p0.x + f * (p1.x - p0.x), p0.y + f * (p1.y - p0.y))


class Device:
    """End-device state machine. All transitions go through these methods."""

    def __init__(self, identity: DeviceIdentity, rng: random.Random, state: DeviceState | None = None):
        self.identity = identity
        self.rng = rng
        self.state = state or DeviceState()

    @property
    def phase(self) -> Phase:
        return self.state.phase

    @property
    def session(self) -> Session | None:
        return self.state.session

    def _draw_nonce(self) -> int:
        used = self.state.used_dev_nonces
        if len(used) >= NONCE_SPACE:
            raise NoncesExhausted(f"all DevNonces used by {self.identity.dev_eui:016X}")
        if len(used) < NONCE_SPACE // 2:
            while True:
                nonce = self.rng.randrange(NONCE_SPACE)
                if nonce not in used:
                    return nonce
        free = [n for n in range(NONCE_SPACE) if n not in used]
        return self.rng.choice(free)

    def build_join_request(self) -> PhyFrame:
        if self.state.phase is not Phase.IDLE:
            raise DeviceError(f"cannot join from phase {self.state.phase.value}")
        nonce = self._draw_nonce()
        self.state.used_dev_nonces.add(nonce)
        self.state.pending_nonce = nonce
        self.state.phase = Phase.JOIN_PENDING

        jr = JoinRequestPayload(self.identity.app_eui, self.identity.dev_eui, nonce)
        mhdr = Mhdr(MType.JOIN_REQUEST)
        mic = crypto.join_request_mic(self.identity.app_key, mhdr.to_byte(), jr)
        return PhyFrame(mhdr, jr, mic)

    def join_timeout(self) -> None:
        """Give up on the pending join; the next attempt draws a fresh nonce."""
        if self.state.phase is Phase.JOIN_PENDING:
            self.state.phase = Phase.IDLE
            self.state.pending_nonce = None

    def reset(self) -> None:
        # DevNonce history survives a reset (kept in non-volatile memory).
        self.state.phase = Phase.IDLE
        self.state.pending_nonce = None
        self.state.session = None

    def process_join_accept(self, frame: PhyFrame) -> DeviceState:
        if self.state.phase is not Phase.JOIN_PENDING:
            raise NotPending("no join in progress")
        wire = encode_phy(frame)
        mhdr = wire[0]
        plain = crypto.decrypt_join_accept(self.identity.app_key, wire[1:])
        body, mic = plain[:-4], plain[-4:]
        if not crypto.mic_equal(crypto.join_accept_mic(self.identity.app_key, mhdr, body), mic):
            raise BadMic("join-accept MIC mismatch")
        ja = decode_phy(bytes([mhdr]) + plain).body
        assert isinstance(ja, JoinAcceptPayload)

        nwk, app = crypto.derive_session_keys(
            self.identity.app_key, ja.app_nonce, ja.net_id, self.state.pending_nonce
        )
        self.state.session = Session(ja.dev_addr, nwk, app, 0)
        self.state.phase = Phase.JOINED
        self.state.pending_nonce = None
        log.debug("device %016X joined as %08X", self.identity.dev_eui, ja.dev_addr)
        return self.state

    def build_uplink(self, fport: int, payload: bytes) -> PhyFrame:
        session = self.state.session
        if self.state.phase is not Phase.JOINED or session is None:
            raise NotJoined("device has no session")
        if session.fcnt_up >= 0xFFFF:
            raise CounterExhausted("16-bit uplink counter exhausted")
        fcnt = session.fcnt_up
        enc = crypto.frm_payload_crypt(session.app_s_key, session.dev_addr, fcnt, Direction.UP, payload)
        body = DataUpPayload(Fhdr(session.dev_addr, fcnt), fport, enc)
        mhdr = Mhdr(MType.UNCONFIRMED_DATA_UP)
        msg = bytes([mhdr.to_byte()]) + encode_body(mhdr.mtype, body)
        mic = crypto.data_mic(session.nwk_s_key, session.dev_addr, fcnt, Direction.UP, msg)
        session.fcnt_up += 1
        return PhyFrame(mhdr, body, mic)

    def build_gnss_uplink(self, fix: GnssFix) -> tuple[PhyFrame, DeviceState]:
        return self.build_uplink(GNSS_FPORT, encode_gnss(fix)), self.state
