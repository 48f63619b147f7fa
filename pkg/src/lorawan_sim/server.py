"""Network server: OTAA joins with DevNonce history, uplinks with MIC and strict
frame-counter anti-replay, multi-gateway deduplication, and a verdict log."""

from __future__ import annotations

import copy
import enum
import hashlib
import logging
import random
from dataclasses import dataclass, field
from typing import Sequence

from . import crypto
from .codec import (
    DataUpPayload,
    FrameError,
    JoinAcceptPayload,
    JoinRequestPayload,
    Mhdr,
    MType,
    PhyFrame,
    decode_phy,
    display_eui,
    encode_body,
)
from .crypto import Aes128Key, Direction
from .device import DeviceIdentity
from .radio import CaptureRecord

log = logging.getLogger(__name__)

DEVNONCE_REUSED = "DevNonce has already been used"
FCNT_REUSED = "FCnt has already been used"
MIC_FAILED = "MIC check failed"
UNKNOWN_DEVICE = "unknown device"
UNKNOWN_DEVADDR = "unknown DevAddr"
DUPLICATE_FRAME = "duplicate frame"

REJECT_REASONS = frozenset(
    {DEVNONCE_REUSED, FCNT_REUSED, MIC_FAILED, UNKNOWN_DEVICE, UNKNOWN_DEVADDR, DUPLICATE_FRAME}
)


class DuplicateDevEui(ValueError):
    pass


class Outcome(enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


def frame_digest(wire: bytes) -> str:
    return hashlib.sha256(bytes(wire)).hexdigest()[:16]


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    reason: str
    digest: str
    gateway_ids: tuple[str, ...]
    time: float
    kind: str
    dev_eui: str | None = None
    fcnt: int | None = None
    dev_nonce: int | None = None
    tx_seqs: tuple[int, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPTED

    def to_dict(self) -> dict:
        return {
            "t": round(self.time, 3),
            "kind": self.kind,
            "outcome": self.outcome.value,
            "reason": self.reason,
            "dev_eui": self.dev_eui,
            "fcnt": self.fcnt,
            "dev_nonce": self.dev_nonce,
            "digest": self.digest,
            "gateways": list(self.gateway_ids),
            "tx": list(self.tx_seqs),
        }


@dataclass
class ServerSession:
    dev_addr: int
    nwk_s_key: Aes128Key
    app_s_key: Aes128Key
    highest_fcnt_up: int = -1
    joined_at: float = 0.0


@dataclass
class DeviceRecord:
    identity: DeviceIdentity
    seen_dev_nonces: set[int] = field(default_factory=set)
    session: ServerSession | None = None


@dataclass
class AppUplink:
    time: float
    dev_eui: int
    fcnt: int
    fport: int | None
    payload: bytes


@dataclass
class _Bucket:
    first_seen: float
    records: list[CaptureRecord]
    delivered: bool = False


Batch = list[CaptureRecord]


class NetworkServer:
    def __init__(
        self,
        net_id: int = 0x000013,
        dedup_window_s: float = 2.0,
        dev_addr_base: int | None = None,
        seed: int = 0,
    ):
        self.net_id = net_id
        self.dedup_window_s = dedup_window_s
        self.devices: dict[int, DeviceRecord] = {}
        self.addr_index: dict[int, int] = {}
        # NwkID (low 7 bits of NetID) in the top 7 bits of every DevAddr
        self.next_dev_addr = dev_addr_base if dev_addr_base is not None else ((net_id & 0x7F) << 25) | 1
        self.rng = random.Random(f"{seed}/server")
        self.recent_frames: dict[str, _Bucket] = {}
        self.verdict_log: list[Verdict] = []
        self.app_log: list[AppUplink] = []

    # -- provisioning -------------------------------------------------

    def register_device(self, identity: DeviceIdentity) -> DeviceRecord:
        if identity.dev_eui in self.devices:
            raise DuplicateDevEui(f"DevEUI {display_eui(identity.dev_eui)} already registered")
        rec = DeviceRecord(identity)
        self.devices[identity.dev_eui] = rec
        return rec

    def snapshot(self) -> dict:
        """Everything but the logs, for no-mutation-on-reject checks."""
        return copy.deepcopy({
            "devices": self.devices,
            "addr_index": self.addr_index,
            "next_dev_addr": self.next_dev_addr,
            "rng": self.rng.getstate(),
        })

    # -- deduplication ------------------------------------------------

    def dedup_ingest(self, record: CaptureRecord, now: float) -> list[Batch]:
        """Absorb one gateway copy; return batches whose window has closed.

        Copies with identical bytes are merged while ``now`` is within
        ``dedup_window_s`` of the first copy. A copy arriving later opens a
        fresh batch, which is how a delayed replay reaches the handlers.
        """
        closed = self.dedup_flush(now)
        digest = frame_digest(record.wire)
        bucket = self.recent_frames.get(digest)
        if bucket is not None and now < bucket.first_seen + self.dedup_window_s:
            if bucket.delivered:
                # Copy straggling in after a forced early flush.
                self._log(Verdict(
                    Outcome.REJECTED, DUPLICATE_FRAME, digest, (record.rx.gateway_id,), now, "duplicate",
                    tx_seqs=_seqs([record]),
                ))
            else:
                bucket.records.append(record)
            return closed
        self.recent_frames[digest] = _Bucket(now, [record])
        return closed

    def dedup_flush(self, now: float, force: bool = False) -> list[Batch]:
        out = []
        for digest, bucket in list(self.recent_frames.items()):
            expired = now >= bucket.first_seen + self.dedup_window_s
            if not bucket.delivered and (expired or force):
                bucket.delivered = True
                out.append(bucket.records)
            if expired:
                del self.recent_frames[digest]
        return out

    def batch_close_time(self, batch: Batch) -> float:
        return batch[0].rx.timestamp + self.dedup_window_s

    # -- dispatch -----------------------------------------------------

    def receive(self, record: CaptureRecord, now: float) -> list[tuple[Verdict, object]]:
        results = []
        for batch in self.dedup_ingest(record, now):
            result = self.process(batch, self.batch_close_time(batch))
            if result is not None:
                results.append(result)
        return results

    def tick(self, now: float, force: bool = False) -> list[tuple[Verdict, object]]:
        results = []
        for batch in self.dedup_flush(now, force):
            when = min(now, self.batch_close_time(batch))
            result = self.process(batch, when)
            if result is not None:
                results.append(result)
        return results

    def process(self, batch: Batch, now: float) -> tuple[Verdict, object] | None:
        frame = batch[0].decoded
        if frame is None:
            try:
                frame = decode_phy(batch[0].wire)
            except FrameError as exc:
                log.debug("dropping undecodable frame: %s", exc)
                return None
        if frame.mtype == MType.JOIN_REQUEST:
            return self.handle_join_request(batch, now)
        if frame.mtype in (MType.UNCONFIRMED_DATA_UP, MType.CONFIRMED_DATA_UP):
            return self.handle_uplink(batch, now)
        log.debug("ignoring %s frame on uplink path", frame.mtype.name)
        return None

    def _log(self, verdict: Verdict) -> Verdict:
        self.verdict_log.append(verdict)
        log.info("%s %s %s %s", verdict.kind, verdict.outcome.value, verdict.reason, verdict.dev_eui)
        return verdict

    # -- joins --------------------------------------------------------

    def handle_join_request(self, records: Sequence[CaptureRecord], now: float) -> tuple[Verdict, PhyFrame | None]:
        wire = records[0].wire
        frame = records[0].decoded or decode_phy(wire)
        jr = frame.body
        assert isinstance(jr, JoinRequestPayload)

        def verdict(outcome: Outcome, reason: str = "") -> Verdict:
            return self._log(Verdict(
                outcome, reason, frame_digest(wire), _gateways(records), now, "join",
                display_eui(jr.dev_eui), dev_nonce=jr.dev_nonce, tx_seqs=_seqs(records),
            ))

        dev = self.devices.get(jr.dev_eui)
        if dev is None:
            return verdict(Outcome.REJECTED, UNKNOWN_DEVICE), None
        expected = crypto.join_request_mic(dev.identity.app_key, wire[0], jr)
        if not crypto.mic_equal(expected, frame.mic):
            return verdict(Outcome.REJECTED, MIC_FAILED), None
        if jr.dev_nonce in dev.seen_dev_nonces:
            return verdict(Outcome.REJECTED, DEVNONCE_REUSED), None

        dev.seen_dev_nonces.add(jr.dev_nonce)
        app_nonce = self.rng.randrange(1 << 24)
        dev_addr = self._allocate_dev_addr()
        nwk, app = crypto.derive_session_keys(dev.identity.app_key, app_nonce, self.net_id, jr.dev_nonce)
        if dev.session is not None:
            self.addr_index.pop(dev.session.dev_addr, None)
        dev.session = ServerSession(dev_addr, nwk, app, -1, now)
        self.addr_index[dev_addr] = jr.dev_eui

        accept = self._build_join_accept(dev.identity.app_key, app_nonce, dev_addr)
        return verdict(Outcome.ACCEPTED), accept

    def _allocate_dev_addr(self) -> int:
        addr = self.next_dev_addr
        self.next_dev_addr = (self.next_dev_addr + 1) & 0xFFFFFFFF
        return addr

    def _build_join_accept(self, app_key: Aes128Key, app_nonce: int, dev_addr: int) -> PhyFrame:
        mhdr = Mhdr(MType.JOIN_ACCEPT)
        body = encode_body(MType.JOIN_ACCEPT, JoinAcceptPayload(app_nonce, self.net_id, dev_addr, 0, 1))
        mic = crypto.join_accept_mic(app_key, mhdr.to_byte(), body)
        wire = bytes([mhdr.to_byte()]) + crypto.encrypt_join_accept(app_key, body + mic)
        return decode_phy(wire)

    # -- uplinks ------------------------------------------------------

    def handle_uplink(self, records: Sequence[CaptureRecord], now: float) -> tuple[Verdict, bytes | None]:
        wire = records[0].wire
        frame = records[0].decoded or decode_phy(wire)
        body = frame.body
        assert isinstance(body, DataUpPayload)
        fcnt = body.fhdr.fcnt
        dev_eui = self.addr_index.get(body.fhdr.dev_addr)

        def verdict(outcome: Outcome, reason: str = "") -> Verdict:
            return self._log(Verdict(
                outcome, reason, frame_digest(wire), _gateways(records), now, "uplink",
                display_eui(dev_eui) if dev_eui is not None else None, fcnt, tx_seqs=_seqs(records),
            ))

        if dev_eui is None:
            return verdict(Outcome.REJECTED, UNKNOWN_DEVADDR), None
        session = self.devices[dev_eui].session
        assert session is not None
        if not crypto.verify_data_frame(session.nwk_s_key, wire, Direction.UP):
            return verdict(Outcome.REJECTED, MIC_FAILED), None
        if fcnt <= session.highest_fcnt_up:
            return verdict(Outcome.REJECTED, FCNT_REUSED), None

        session.highest_fcnt_up = fcnt
        plain = None
        if body.fport is not None:
            plain = crypto.frm_payload_crypt(
                session.app_s_key, session.dev_addr, fcnt, Direction.UP, body.frm_payload
            )
            self.app_log.append(AppUplink(now, dev_eui, fcnt, body.fport, plain))
        return verdict(Outcome.ACCEPTED), plain


def _gateways(records: Sequence[CaptureRecord]) -> tuple[str, ...]:
    return tuple(sorted({r.rx.gateway_id for r in records}))


def _seqs(records: Sequence[CaptureRecord]) -> tuple[int, ...]:
    return tuple(sorted({r.tx_seq for r in records if r.tx_seq is not None}))
