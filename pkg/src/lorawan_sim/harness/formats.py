"""Capture, verdict and report file formats.

Capture files are JSON lines, one reception per line::

    {"t": 0.0, "tx": 0, "gateway_id": "gw-01", "freq_hz": 868300000, "sf": 7,
     "bw_khz": 125, "cr": "4/5", "rssi_dbm": -44.2, "snr_db": 55.8,
     "freq_offset_hz": 1312, "wire_b64": "AAAA..."}

dB values carry 2 decimals, times 3 decimals (1 ms), frequencies whole Hz.
"""

from __future__ import annotations

import base64
import binascii
import json
from pathlib import Path
from typing import Iterable

from ..codec import DataRateSpec
from ..radio import CaptureRecord, RxMetadata, TxParams
from ..server import Verdict

CAPTURE_KEYS = (
    "t", "tx", "gateway_id", "freq_hz", "sf", "bw_khz", "cr",
    "rssi_dbm", "snr_db", "freq_offset_hz", "wire_b64",
)


class FileFormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)
        self.lineno = lineno


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=True, separators=(", ", ": "))


def record_to_dict(rec: CaptureRecord) -> dict:
    dr = rec.tx_params.data_rate
    return {
        "t": round(rec.rx.timestamp, 3),
        "tx": rec.tx_seq,
        "gateway_id": rec.rx.gateway_id,
        "freq_hz": int(rec.rx.frequency_hz),
        "sf": dr.spreading_factor,
        "bw_khz": dr.bandwidth_khz,
        "cr": dr.coding_rate,
        "rssi_dbm": round(rec.rx.rssi_dbm, 2),
        "snr_db": round(rec.rx.snr_db, 2),
        "freq_offset_hz": int(rec.rx.freq_offset_hz),
        "wire_b64": base64.b64encode(rec.wire).decode("ascii"),
    }


def record_from_dict(obj: dict, lineno: int | None = None) -> CaptureRecord:
    if not isinstance(obj, dict):
        raise FileFormatError("expected a JSON object", lineno)
    missing = [k for k in CAPTURE_KEYS if k not in obj and k != "tx"]
    if missing:
        raise FileFormatError(f"missing keys: {', '.join(missing)}", lineno)
    try:
        wire = base64.b64decode(obj["wire_b64"], validate=True)
        rx = RxMetadata(
            rssi_dbm=float(obj["rssi_dbm"]),
            snr_db=float(obj["snr_db"]),
            frequency_hz=int(obj["freq_hz"]),
            freq_offset_hz=int(obj["freq_offset_hz"]),
            timestamp=float(obj["t"]),
            gateway_id=str(obj["gateway_id"]),
        )
        tx = TxParams(rx.frequency_hz, DataRateSpec(int(obj["sf"]), int(obj["bw_khz"]), str(obj["cr"])), None)
        tx_seq = obj.get("tx")
        tx_seq = None if tx_seq is None else int(tx_seq)
    except (TypeError, ValueError, binascii.Error) as exc:
        raise FileFormatError(str(exc), lineno) from exc
    if rx.timestamp < 0:
        raise FileFormatError("negative timestamp", lineno)
    return CaptureRecord.build(rx, tx, wire, tx_seq)


def dump_capture(records: Iterable[CaptureRecord]) -> str:
    return "".join(dumps(record_to_dict(r)) + "\n" for r in records)


def parse_capture(text: str) -> list[CaptureRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"invalid JSON: {exc.msg}", lineno) from exc
        out.append(record_from_dict(obj, lineno))
    return out


def load_capture(path: str | Path) -> list[CaptureRecord]:
    return parse_capture(Path(path).read_text())


def dump_verdicts(verdicts: Iterable[Verdict]) -> str:
    return "".join(dumps(v.to_dict()) + "\n" for v in verdicts)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=True) + "\n"
