"""LoRaWAN 1.0.x PHYPayload encoding and decoding.

Wire layout (all multi-byte fields little-endian)::

    PHYPayload  = MHDR(1) | body | MIC(4)
    JoinRequest = AppEUI(8) | DevEUI(8) | DevNonce(2)                       -> 23 bytes total
    JoinAccept  = AppNonce(3) | NetID(3) | DevAddr(4) | DLSettings(1)
                  | RxDelay(1) [| CFList(16)]                              -> 17 or 33 bytes total
    MACPayload  = DevAddr(4) | FCtrl(1) | FCnt(2) | FOpts(0..15)
                  [| FPort(1) | FRMPayload]                                -> >= 12 bytes total

Decoding is purely structural: MICs are preserved but never checked, and a
join-accept read off the air decodes with its ciphertext in the field slots.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

MIC_LEN = 4
JOIN_REQUEST_LEN = 23
JOIN_ACCEPT_LEN = 17
JOIN_ACCEPT_CFLIST_LEN = 33
MIN_FRAME_LEN = 12
MAX_FRAME_LEN = 255
MAX_FOPTS_LEN = 15

BANDWIDTHS_KHZ = (125, 250, 500)
CODING_RATES = ("4/5", "4/6", "4/7", "4/8")


class FrameError(ValueError):
    """Base class for codec errors; ``offset`` points at the offending byte."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class InvalidFrame(FrameError):
    pass


class TooShort(FrameError):
    pass


class UnknownMType(FrameError):
    pass


class UnsupportedMajor(FrameError):
    pass


class LengthMismatch(FrameError):
    pass


class MType(enum.IntEnum):
    JOIN_REQUEST = 0
    JOIN_ACCEPT = 1
    UNCONFIRMED_DATA_UP = 2
    UNCONFIRMED_DATA_DOWN = 3
    CONFIRMED_DATA_UP = 4
    CONFIRMED_DATA_DOWN = 5

    @property
    def is_data(self) -> bool:
        return self >= MType.UNCONFIRMED_DATA_UP

    @property
    def is_uplink(self) -> bool:
        return self in (MType.JOIN_REQUEST, MType.UNCONFIRMED_DATA_UP, MType.CONFIRMED_DATA_UP)


@dataclass(frozen=True)
class Mhdr:
    mtype: MType
    major: int = 0

    def to_byte(self) -> int:
        if self.major != 0:
            raise InvalidFrame(f"major version must be 0, got {self.major}")
        return (int(self.mtype) << 5) | self.major

    @classmethod
    def from_byte(cls, value: int) -> "Mhdr":
        mtype = value >> 5
        if mtype > MType.CONFIRMED_DATA_DOWN:
            raise UnknownMType(f"unsupported MType {mtype}", 0)
        if value & 0x1C:
            raise InvalidFrame("MHDR RFU bits set", 0)
        if value & 0x03:
            raise UnsupportedMajor(f"major version {value & 0x03} is not LoRaWAN R1", 0)
        return cls(MType(mtype))


def display_eui(eui: int) -> str:
    """Big-endian display form, e.g. ``70B3D57ED0000001``."""
    if not 0 <= eui < 1 << 64:
        raise ValueError(f"EUI out of range: {eui!r}")
    return f"{eui:016X}"


def parse_eui(text: str) -> int:
    cleaned = text.replace("-", "").replace(":", "").replace(" ", "")
    if len(cleaned) != 16:
        raise ValueError(f"EUI must be 16 hex digits, got {text!r}")
    return int(cleaned, 16)


def eui_from_wire(raw: bytes) -> int:
    return int.from_bytes(raw, "little")


def eui_to_wire(eui: int) -> bytes:
    return eui.to_bytes(8, "little")


@dataclass(frozen=True)
class DataRateSpec:
    spreading_factor: int = 7
    bandwidth_khz: int = 125
    coding_rate: str = "4/5"

    def __post_init__(self):
        if self.spreading_factor not in range(7, 13):
            raise ValueError(f"spreading factor must be 7..12, got {self.spreading_factor}")
        if self.bandwidth_khz not in BANDWIDTHS_KHZ:
            raise ValueError(f"bandwidth must be one of {BANDWIDTHS_KHZ}, got {self.bandwidth_khz}")
        if self.coding_rate not in CODING_RATES:
            raise ValueError(f"coding rate must be one of {CODING_RATES}, got {self.coding_rate!r}")

    def __str__(self) -> str:
        return f"SF{self.spreading_factor}BW{self.bandwidth_khz} CR{self.coding_rate}"


@dataclass(frozen=True)
class JoinRequestPayload:
    app_eui: int
    dev_eui: int
    dev_nonce: int


@dataclass(frozen=True)
class JoinAcceptPayload:
    app_nonce: int
    net_id: int
    dev_addr: int
    dl_settings: int = 0
    rx_delay: int = 1
    cf_list: bytes = b""


@dataclass(frozen=True)
class Fhdr:
    dev_addr: int
    fcnt: int
    fopts: bytes = b""
    # ADR / ADRACKReq / ACK / FPending; always 0 in generated frames
    fctrl_flags: int = 0

    @property
    def fctrl(self) -> int:
        return (self.fctrl_flags << 4) | len(self.fopts)


@dataclass(frozen=True)
class DataUpPayload:
    fhdr: Fhdr
    fport: int | None = None
    frm_payload: bytes = b""


# Same layout serves every data MType.
MacPayload = DataUpPayload

Body = Union[JoinRequestPayload, JoinAcceptPayload, DataUpPayload]

_BODY_FOR_MTYPE = {
    MType.JOIN_REQUEST: JoinRequestPayload,
    MType.JOIN_ACCEPT: JoinAcceptPayload,
}


@dataclass(frozen=True)
class PhyFrame:
    mhdr: Mhdr
    body: Body
    mic: bytes = bytes(MIC_LEN)

    @property
    def mtype(self) -> MType:
        return self.mhdr.mtype


def _check_uint(name: str, value: int, nbytes: int) -> None:
    if not isinstance(value, int) or not 0 <= value < 1 << (8 * nbytes):
        raise InvalidFrame(f"{name} out of range for {nbytes} byte(s): {value!r}")


def encode_body(mtype: MType, body: Body) -> bytes:
    """Encode only the body (between MHDR and MIC)."""
    expected = _BODY_FOR_MTYPE.get(mtype, DataUpPayload)
    if not isinstance(body, expected):
        raise InvalidFrame(f"{type(body).__name__} body does not match MType {mtype.name}")

    if isinstance(body, JoinRequestPayload):
        _check_uint("app_eui", body.app_eui, 8)
        _check_uint("dev_eui", body.dev_eui, 8)
        _check_uint("dev_nonce", body.dev_nonce, 2)
        return eui_to_wire(body.app_eui) + eui_to_wire(body.dev_eui) + body.dev_nonce.to_bytes(2, "little")

    if isinstance(body, JoinAcceptPayload):
        _check_uint("app_nonce", body.app_nonce, 3)
        _check_uint("net_id", body.net_id, 3)
        _check_uint("dev_addr", body.dev_addr, 4)
        _check_uint("dl_settings", body.dl_settings, 1)
        _check_uint("rx_delay", body.rx_delay, 1)
        if len(body.cf_list) not in (0, 16):
            raise InvalidFrame(f"CFList must be empty or 16 bytes, got {len(body.cf_list)}")
        return (
            body.app_nonce.to_bytes(3, "little")
            + body.net_id.to_bytes(3, "little")
            + body.dev_addr.to_bytes(4, "little")
            + bytes([body.dl_settings, body.rx_delay])
            + bytes(body.cf_list)
        )

    fhdr = body.fhdr
    _check_uint("dev_addr", fhdr.dev_addr, 4)
    _check_uint("fcnt", fhdr.fcnt, 2)
    if not 0 <= fhdr.fctrl_flags <= 0x0F:
        raise InvalidFrame(f"fctrl_flags must fit in 4 bits, got {fhdr.fctrl_flags!r}")
    if len(fhdr.fopts) > MAX_FOPTS_LEN:
        raise InvalidFrame(f"FOpts longer than {MAX_FOPTS_LEN} bytes")
    out = (
        fhdr.dev_addr.to_bytes(4, "little")
        + bytes([fhdr.fctrl])
        + fhdr.fcnt.to_bytes(2, "little")
        + bytes(fhdr.fopts)
    )
    if body.fport is None:
        if body.frm_payload:
            raise InvalidFrame("FRMPayload present without FPort")
        return out
    if not 1 <= body.fport <= 223:
        raise InvalidFrame(f"FPort must be 1..223, got {body.fport!r}")
    return out + bytes([body.fport]) + bytes(body.frm_payload)


def encode_phy(frame: PhyFrame) -> bytes:
    if not isinstance(frame.mhdr.mtype, MType):
        raise InvalidFrame(f"unknown MType {frame.mhdr.mtype!r}")
    if len(frame.mic) != MIC_LEN:
        raise InvalidFrame(f"MIC must be {MIC_LEN} bytes, got {len(frame.mic)}")
    wire = bytes([frame.mhdr.to_byte()]) + encode_body(frame.mhdr.mtype, frame.body) + bytes(frame.mic)
    if len(wire) > MAX_FRAME_LEN:
        raise InvalidFrame(f"frame is {len(wire)} bytes, limit is {MAX_FRAME_LEN}")
    return wire


def decode_phy(wire: bytes) -> PhyFrame:
    wire = bytes(wire)
    if len(wire) < MIN_FRAME_LEN:
        raise TooShort(f"frame is {len(wire)} bytes, need at least {MIN_FRAME_LEN}", len(wire))
    if len(wire) > MAX_FRAME_LEN:
        raise LengthMismatch(f"frame is {len(wire)} bytes, limit is {MAX_FRAME_LEN}", MAX_FRAME_LEN)

    mhdr = Mhdr.from_byte(wire[0])
    payload, mic = wire[1:-MIC_LEN], wire[-MIC_LEN:]

    if mhdr.mtype == MType.JOIN_REQUEST:
        if len(wire) != JOIN_REQUEST_LEN:
            raise LengthMismatch(f"join-request must be {JOIN_REQUEST_LEN} bytes, got {len(wire)}", len(wire))
        body: Body = JoinRequestPayload(
            app_eui=eui_from_wire(payload[0:8]),
            dev_eui=eui_from_wire(payload[8:16]),
            dev_nonce=int.from_bytes(payload[16:18], "little"),
        )
    elif mhdr.mtype == MType.JOIN_ACCEPT:
        if len(wire) not in (JOIN_ACCEPT_LEN, JOIN_ACCEPT_CFLIST_LEN):
            raise LengthMismatch(f"join-accept must be 17 or 33 bytes, got {len(wire)}", len(wire))
        body = JoinAcceptPayload(
            app_nonce=int.from_bytes(payload[0:3], "little"),
            net_id=int.from_bytes(payload[3:6], "little"),
            dev_addr=int.from_bytes(payload[6:10], "little"),
            dl_settings=payload[10],
            rx_delay=payload[11],
            cf_list=payload[12:],
        )
    else:
        body = _decode_mac_payload(payload)
    return PhyFrame(mhdr, body, mic)


def _decode_mac_payload(payload: bytes) -> DataUpPayload:
    fctrl = payload[4]
    fopts_len = fctrl & 0x0F
    fopts_end = 7 + fopts_len
    if fopts_end > len(payload):
        raise LengthMismatch(f"FOptsLen {fopts_len} exceeds remaining bytes", 1 + 4)
    fhdr = Fhdr(
        dev_addr=int.from_bytes(payload[0:4], "little"),
        fcnt=int.from_bytes(payload[5:7], "little"),
        fopts=payload[7:fopts_end],
        fctrl_flags=fctrl >> 4,
    )
    if fopts_end == len(payload):
        return DataUpPayload(fhdr)
    fport = payload[fopts_end]
    if not 1 <= fport <= 223:
        raise InvalidFrame(f"FPort {fport} outside 1..223", 1 + fopts_end)
    return DataUpPayload(fhdr, fport, payload[fopts_end + 1:])
