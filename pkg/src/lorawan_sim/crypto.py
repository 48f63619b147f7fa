"""LoRaWAN 1.0.x cryptographic constructions on top of the AES-128 block cipher.

Only the raw block primitive comes from ``cryptography``; CMAC (RFC 4493),
the OTAA key derivation, join-accept encryption and the A/B block schemes
are built here.
"""

from __future__ import annotations

import enum
import functools
import hmac
from dataclasses import dataclass, field
from typing import Union

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .codec import JoinRequestPayload, eui_to_wire

BLOCK = 16
MAX_FRM_PAYLOAD = 222
_RB = 0x87


class KeyRole(enum.Enum):
    APP_KEY = "AppKey"
    NWK_S_KEY = "NwkSKey"
    APP_S_KEY = "AppSKey"


class Direction(enum.IntEnum):
    UP = 0
    DOWN = 1


class BadLength(ValueError):
    pass


@dataclass(frozen=True)
class Aes128Key:
    raw: bytes
    role: KeyRole | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.raw) != BLOCK:
            raise ValueError(f"AES-128 key must be 16 bytes, got {len(self.raw)}")
        object.__setattr__(self, "raw", bytes(self.raw))

    @classmethod
    def from_hex(cls, text: str, role: KeyRole | None = None) -> "Aes128Key":
        return cls(bytes.fromhex(text), role)

    def __bytes__(self) -> bytes:
        return self.raw

    def __repr__(self) -> str:
        role = self.role.value if self.role else "key"
        return f"Aes128Key({role}={redact_key(self.raw)})"

    __str__ = __repr__


KeyLike = Union[Aes128Key, bytes, bytearray]


def redact_key(key: KeyLike) -> str:
    """First four hex digits and an ellipsis; the only form keys take in logs."""
    return bytes(key)[:2].hex().upper() + "..."


@functools.lru_cache(maxsize=1024)
def _cipher(key: bytes) -> Cipher:
    return Cipher(algorithms.AES(key), modes.ECB())


def _key(key: KeyLike) -> bytes:
    raw = bytes(key)
    if len(raw) != BLOCK:
        raise ValueError(f"AES-128 key must be 16 bytes, got {len(raw)}")
    return raw


def aes_encrypt(key: KeyLike, data: bytes) -> bytes:
    """AES-128 ECB over whole blocks."""
    if len(data) % BLOCK:
        raise BadLength(f"input length {len(data)} is not a multiple of {BLOCK}")
    enc = _cipher(_key(key)).encryptor()
    return enc.update(bytes(data)) + enc.finalize()


def aes_decrypt(key: KeyLike, data: bytes) -> bytes:
    if len(data) % BLOCK:
        raise BadLength(f"input length {len(data)} is not a multiple of {BLOCK}")
    dec = _cipher(_key(key)).decryptor()
    return dec.update(bytes(data)) + dec.finalize()


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def _dbl(block: bytes) -> bytes:
    v = int.from_bytes(block, "big") << 1
    if v >> 128:
        v = (v & ((1 << 128) - 1)) ^ _RB
    return v.to_bytes(BLOCK, "big")


def cmac_subkeys(key: KeyLike) -> tuple[bytes, bytes]:
    k1 = _dbl(aes_encrypt(key, bytes(BLOCK)))
    return k1, _dbl(k1)


def aes_cmac(key: KeyLike, message: bytes) -> bytes:
    """RFC 4493 AES-CMAC, full 16-byte tag."""
    k1, k2 = cmac_subkeys(key)
    message = bytes(message)
    n = max(1, -(-len(message) // BLOCK))
    last = message[(n - 1) * BLOCK:]
    if len(last) == BLOCK:
        last = _xor(last, k1)
    else:
        last = _xor(last + b"\x80" + bytes(BLOCK - len(last) - 1), k2)

    # CBC-MAC with zero IV over the prepared blocks; only the final block is kept.
    blocks = message[: (n - 1) * BLOCK] + last
    enc = _cipher(_key(key)).encryptor()
    x = bytes(BLOCK)
    for i in range(0, len(blocks), BLOCK):
        x = enc.update(_xor(x, blocks[i:i + BLOCK]))
    return x


def mic(key: KeyLike, message: bytes) -> bytes:
    return aes_cmac(key, message)[:4]


def mic_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(bytes(a), bytes(b))


def join_request_mic(app_key: KeyLike, mhdr: int, jr: JoinRequestPayload) -> bytes:
    msg = bytes([mhdr]) + eui_to_wire(jr.app_eui) + eui_to_wire(jr.dev_eui) + jr.dev_nonce.to_bytes(2, "little")
    return mic(app_key, msg)


def join_accept_mic(app_key: KeyLike, mhdr: int, plain_body: bytes) -> bytes:
    """MIC over MHDR | AppNonce | NetID | DevAddr | DLSettings | RxDelay [| CFList]."""
    return mic(app_key, bytes([mhdr]) + bytes(plain_body))


def derive_session_keys(
    app_key: KeyLike, app_nonce: int, net_id: int, dev_nonce: int
) -> tuple[Aes128Key, Aes128Key]:
    """Return (NwkSKey, AppSKey) for an OTAA join."""
    tail = app_nonce.to_bytes(3, "little") + net_id.to_bytes(3, "little") + dev_nonce.to_bytes(2, "little")
    tail += bytes(BLOCK - 1 - len(tail))
    nwk = aes_encrypt(app_key, b"\x01" + tail)
    app = aes_encrypt(app_key, b"\x02" + tail)
    return Aes128Key(nwk, KeyRole.NWK_S_KEY), Aes128Key(app, KeyRole.APP_S_KEY)


def encrypt_join_accept(app_key: KeyLike, plaintext_body_with_mic: bytes) -> bytes:
    # The network side applies AES *decrypt* so end-devices only need encrypt.
    return aes_decrypt(app_key, plaintext_body_with_mic)


def decrypt_join_accept(app_key: KeyLike, wire_body: bytes) -> bytes:
    return aes_encrypt(app_key, wire_body)


def _block(prefix: int, direction: Direction, dev_addr: int, fcnt: int, last: int) -> bytes:
    return (
        bytes([prefix, 0, 0, 0, 0, int(direction)])
        + dev_addr.to_bytes(4, "little")
        + fcnt.to_bytes(4, "little")
        + bytes([0, last])
    )


def frm_payload_crypt(
    key: KeyLike, dev_addr: int, fcnt: int, direction: Direction, payload: bytes
) -> bytes:
    """Encrypt or decrypt FRMPayload; the operation is its own inverse."""
    if len(payload) > MAX_FRM_PAYLOAD:
        raise ValueError(f"FRMPayload longer than {MAX_FRM_PAYLOAD} bytes")
    if not payload:
        return b""
    n = -(-len(payload) // BLOCK)
    a_blocks = b"".join(_block(0x01, direction, dev_addr, fcnt, i) for i in range(1, n + 1))
    stream = aes_encrypt(key, a_blocks)
    return _xor(bytes(payload), stream[: len(payload)])


def data_mic(key: KeyLike, dev_addr: int, fcnt: int, direction: Direction, msg: bytes) -> bytes:
    """MIC of a data frame; ``msg`` is MHDR | MACPayload."""
    b0 = _block(0x49, direction, dev_addr, fcnt, len(msg))
    return mic(key, b0 + bytes(msg))


def verify_data_frame(key: KeyLike, wire: bytes, direction: Direction = Direction.UP) -> bool:
    """Check the MIC of raw data-frame bytes, reading DevAddr/FCnt at fixed offsets."""
    wire = bytes(wire)
    if len(wire) < 12:
        return False
    dev_addr = int.from_bytes(wire[1:5], "little")
    fcnt = int.from_bytes(wire[6:8], "little")
    return mic_equal(data_mic(key, dev_addr, fcnt, direction, wire[:-4]), wire[-4:])
