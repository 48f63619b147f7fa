"""Command-line entry point: ``lorawan-sim``.

Exit codes: 0 success, 1 invalid input (scenario, capture, frame), 2 internal error.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import json
import logging
import re
import sys
from pathlib import Path

import yaml

from .. import crypto
from ..attacker import OuiTable, extract_join_intel, movement_by_device, sniff
from ..codec import (
    DataUpPayload,
    FrameError,
    JoinAcceptPayload,
    JoinRequestPayload,
    PhyFrame,
    decode_phy,
    display_eui,
)
from ..crypto import Aes128Key, Direction, KeyRole
from ..device import GNSS_FPORT, decode_gnss
from ..radio import CaptureRecord, PathLossModel, RxMetadata
from .config import SHIPPED, ConfigInvalid, ScenarioConfig, load_config, shipped_oui_text, shipped_scenario
from .engine import make_server, run
from .formats import FileFormatError, dump_json, dumps, load_capture

log = logging.getLogger(__name__)


class ParseError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(f"{message} (at byte {offset})" if offset is not None else message)
        self.offset = offset


_HEX = re.compile(r"^(0x)?[0-9a-fA-F\s:]+$")


def parse_frame_text(text: str) -> bytes:
    """Accept hex (spaces/colons allowed) or base64."""
    text = text.strip()
    if _HEX.match(text):
        cleaned = re.sub(r"[\s:]", "", text.removeprefix("0x"))
        if len(cleaned) % 2 == 0:
            return bytes.fromhex(cleaned)
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ParseError(f"neither hex nor base64: {exc}") from exc


def load_keys(path: str | Path) -> dict[str, Aes128Key]:
    """Key file: YAML/JSON mapping with any of app_key, nwk_s_key, app_s_key (hex)."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    roles = {"app_key": KeyRole.APP_KEY, "nwk_s_key": KeyRole.NWK_S_KEY, "app_s_key": KeyRole.APP_S_KEY}
    keys = {}
    for name, role in roles.items():
        if name in data:
            keys[name] = Aes128Key.from_hex(str(data[name]).replace(" ", ""), role)
    return keys


def decode_dump(wire: bytes, keys: dict[str, Aes128Key] | None = None) -> list[str]:
    keys = keys or {}
    try:
        frame = decode_phy(wire)
    except FrameError as exc:
        raise ParseError(str(exc).split(" (at byte")[0], exc.offset) from exc

    lines = [
        f"length      {len(wire)} bytes",
        f"mtype       {frame.mtype.name}",
        f"major       {frame.mhdr.major}",
    ]
    body = frame.body
    if isinstance(body, JoinRequestPayload):
        lines += [
            f"app_eui     {display_eui(body.app_eui)}",
            f"dev_eui     {display_eui(body.dev_eui)}",
            f"dev_nonce   0x{body.dev_nonce:04X}",
        ]
        if "app_key" in keys:
            ok = crypto.mic_equal(crypto.join_request_mic(keys["app_key"], wire[0], body), frame.mic)
            lines.append(f"mic         {frame.mic.hex().upper()} ({'valid' if ok else 'INVALID'})")
        else:
            lines.append(f"mic         {frame.mic.hex().upper()} (not verified)")
    elif isinstance(body, JoinAcceptPayload):
        if "app_key" not in keys:
            lines.append(f"encrypted   {wire[1:].hex().upper()}")
        else:
            plain = crypto.decrypt_join_accept(keys["app_key"], wire[1:])
            ok = crypto.mic_equal(crypto.join_accept_mic(keys["app_key"], wire[0], plain[:-4]), plain[-4:])
            ja = decode_phy(wire[:1] + plain).body
            lines += [
                f"app_nonce   0x{ja.app_nonce:06X}",
                f"net_id      0x{ja.net_id:06X}",
                f"dev_addr    {ja.dev_addr:08X}",
                f"dl_settings 0x{ja.dl_settings:02X}",
                f"rx_delay    {ja.rx_delay}",
                f"mic         {plain[-4:].hex().upper()} ({'valid' if ok else 'INVALID'})",
            ]
    else:
        lines += _data_dump(wire, frame, body, keys)
    return lines


def _data_dump(wire: bytes, frame: PhyFrame, body: DataUpPayload, keys: dict[str, Aes128Key]) -> list[str]:
    fhdr = body.fhdr
    direction = Direction.UP if frame.mtype.is_uplink else Direction.DOWN
    lines = [
        f"dev_addr    {fhdr.dev_addr:08X}",
        f"fctrl       0x{fhdr.fctrl:02X}",
        f"fcnt        {fhdr.fcnt}",
        f"fopts       {fhdr.fopts.hex().upper() or '-'}",
        f"fport       {'-' if body.fport is None else body.fport}",
        f"ciphertext  {len(body.frm_payload)} bytes",
    ]
    if "nwk_s_key" in keys:
        ok = crypto.verify_data_frame(keys["nwk_s_key"], wire, direction)
        lines.append(f"mic         {frame.mic.hex().upper()} ({'valid' if ok else 'INVALID'})")
    else:
        lines.append(f"mic         {frame.mic.hex().upper()} (not verified)")
    if "app_s_key" in keys and body.fport is not None:
        plain = crypto.frm_payload_crypt(keys["app_s_key"], fhdr.dev_addr, fhdr.fcnt, direction, body.frm_payload)
        lines.append(f"plaintext   {plain.hex().upper()}")
        if body.fport == GNSS_FPORT and len(plain) == 10:
            fix = decode_gnss(plain)
            lines.append(f"gnss        lat={fix.lat_deg:.7f} lon={fix.lon_deg:.7f} alt={fix.alt_m} m")
    return lines


def analyze_capture(
    records: list[CaptureRecord],
    oui: OuiTable,
    model: PathLossModel,
    assumed_tx_power_dbm: float = 14.0,
    receiver: str | None = None,
    window_s: float = 60.0,
    threshold_db: float = 3.0,
) -> dict:
    """Offline sniff analysis of one receiver's view of a capture."""
    notes: list[str] = []
    receivers = list(dict.fromkeys(r.rx.gateway_id for r in records))
    if receiver is None and receivers:
        receiver = "attacker" if "attacker" in receivers else receivers[0]
        if len(receivers) > 1:
            notes.append(f"capture holds receivers {receivers}; analysed {receiver!r}")
    mine = sniff(r for r in records if r.rx.gateway_id == receiver)
    intel = extract_join_intel(mine, oui, model, assumed_tx_power_dbm, notes)
    movement = movement_by_device(mine, window_s, threshold_db)
    return {
        "receiver": receiver,
        "records": len(mine),
        "intel": [i.to_dict() for i in intel],
        "movement": [{"dev_addr": f"{a:08X}", "movement": m.value} for a, m in movement.items()],
        "notes": notes,
    }


def replay_file(
    config: ScenarioConfig,
    records: list[CaptureRecord],
    select: int,
    gain_db: float = 0.0,
    count: int = 1,
) -> list[dict]:
    """Rebuild server state from a capture, then inject copies of one record."""
    if not 0 <= select < len(records):
        raise FileFormatError(f"--select {select} out of range (capture has {len(records)} records)")
    server = make_server(config)
    gateways = [g.id for g in config.gateways]
    for rec in records:
        if rec.rx.gateway_id in gateways:
            server.receive(rec, rec.rx.timestamp)
    t = max((r.rx.timestamp for r in records), default=0.0)
    server.tick(t + server.dedup_window_s)
    already = len(server.verdict_log)

    target = records[select]
    for i in range(count):
        t += server.dedup_window_s + 1.0
        rx = RxMetadata(
            round(target.rx.rssi_dbm + gain_db, 2), round(target.rx.snr_db + gain_db, 2),
            target.rx.frequency_hz, target.rx.freq_offset_hz, round(t, 3), gateways[0] if gateways else "gw",
        )
        server.receive(CaptureRecord.build(rx, target.tx_params, target.wire), rx.timestamp)
    server.tick(t + server.dedup_window_s)
    return [v.to_dict() for v in server.verdict_log[already:]]


def _model_from_args(args) -> PathLossModel:
    return PathLossModel(args.rssi_ref, args.ref_distance, args.exponent, 0.0)


def _resolve_scenario(ref: str) -> ScenarioConfig:
    if ref in SHIPPED and not Path(ref).exists():
        return shipped_scenario(ref)
    return load_config(ref)


def cmd_run(args) -> int:
    config = _resolve_scenario(args.scenario)
    artifacts = run(config)
    out = artifacts.write(args.out or Path("runs") / config.name)
    summary = json.loads(artifacts.summary)
    print(f"scenario {config.name}: {summary['transmissions']} transmissions, "
          f"{summary['verdicts']['accepted']} accepted, rejected {summary['verdicts']['rejected']}")
    print(f"artifacts written to {out}")
    return 0


def cmd_decode(args) -> int:
    wire = parse_frame_text(args.frame)
    keys = load_keys(args.keys) if args.keys else None
    print("\n".join(decode_dump(wire, keys)))
    return 0


def cmd_analyze(args) -> int:
    records = load_capture(args.capture)
    oui = OuiTable.load(args.oui) if args.oui else OuiTable.parse(shipped_oui_text())
    report = analyze_capture(
        records, oui, _model_from_args(args), args.tx_power, args.receiver, args.window, args.threshold,
    )
    text = dump_json(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_replay_file(args) -> int:
    config = _resolve_scenario(args.scenario)
    records = load_capture(args.capture)
    for v in replay_file(config, records, args.select, args.gain, args.count):
        print(dumps(v))
    return 0


def cmd_scenarios(args) -> int:
    for name in SHIPPED:
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lorawan-sim", description="LoRaWAN sniffing and replay attack simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or shipped scenario name")
    r.add_argument("scenario")
    r.add_argument("--out", help="output directory (default runs/<name>)")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("decode", help="dump a frame given as hex or base64")
    d.add_argument("frame")
    d.add_argument("--keys", help="YAML/JSON file with app_key / nwk_s_key / app_s_key")
    d.set_defaults(func=cmd_decode)

    a = sub.add_parser("analyze", help="extract intel and movement from a capture file")
    a.add_argument("capture")
    a.add_argument("--oui", help="OUI table file (default: shipped sample table)")
    a.add_argument("--receiver", help="receiver id to analyse (default: attacker, else first seen)")
    a.add_argument("--tx-power", type=float, default=14.0, help="assumed transmitter power, dBm")
    a.add_argument("--rssi-ref", type=float, default=PathLossModel.rssi_ref_dbm)
    a.add_argument("--ref-distance", type=float, default=1.0)
    a.add_argument("--exponent", type=float, default=2.7)
    a.add_argument("--window", type=float, default=60.0)
    a.add_argument("--threshold", type=float, default=3.0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    rf = sub.add_parser("replay-file", help="replay a captured frame against a fresh simulated server")
    rf.add_argument("capture")
    rf.add_argument("--scenario", required=True, help="scenario providing server registrations")
    rf.add_argument("--select", type=int, required=True, help="capture line index (0-based)")
    rf.add_argument("--gain", type=float, default=0.0)
    rf.add_argument("--count", type=int, default=1)
    rf.set_defaults(func=cmd_replay_file)

    s = sub.add_parser("scenarios", help="shipped scenarios")
    s.add_argument("action", choices=["list"])
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, FileFormatError, ParseError, FrameError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
