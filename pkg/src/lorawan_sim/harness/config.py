"""Scenario documents (YAML) and their validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from ..codec import DataRateSpec, parse_eui
from ..crypto import Aes128Key, KeyRole
from ..device import DeviceIdentity, MovementModel
from ..radio import DEFAULT_NOISE_FLOOR_DBM, PathLossModel, Position, TxParams

SHIPPED = ("s1_sniff", "s2a_join_replay", "s2b_uplink_replay")
ACTIONS = ("sniff", "extract", "infer", "replay")
TARGET_FRAMES = ("join_request", "uplink")


class ConfigInvalid(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class GatewayConfig:
    id: str
    position: Position


@dataclass(frozen=True)
class DeviceConfig:
    name: str
    identity: DeviceIdentity
    movement: MovementModel
    uplink_period_s: float
    tx: TxParams
    alt_m: int = 100
    freq_offset_hz: int | None = None
    join_at_s: float = 0.0


@dataclass(frozen=True)
class ReplayTarget:
    frame: str = "join_request"
    index: int = 0


@dataclass(frozen=True)
class AttackAction:
    at: float
    action: str
    duration_s: float = math.inf
    window_s: float = 60.0
    threshold_db: float = 3.0
    target: ReplayTarget = field(default_factory=ReplayTarget)
    gain_db: float = 0.0
    count: int = 1
    inter_frame_s: float = 5.0


@dataclass(frozen=True)
class AttackerConfig:
    position: Position
    assumed_tx_power_dbm: float = 14.0
    oui_file: str | None = None
    script: tuple[AttackAction, ...] = ()


@dataclass(frozen=True)
class ServerConfig:
    net_id: int = 0x000013
    dedup_window_s: float = 2.0
    dev_addr_base: int | None = None
    register: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    duration_s: float
    model: PathLossModel
    gateways: tuple[GatewayConfig, ...]
    devices: tuple[DeviceConfig, ...]
    server: ServerConfig = field(default_factory=ServerConfig)
    attacker: AttackerConfig | None = None
    origin: tuple[float, float] = (48.7130, 2.2010)
    noise_floor_dbm: float = DEFAULT_NOISE_FLOOR_DBM
    source: str | None = None

    @property
    def registered(self) -> tuple[int, ...]:
        if self.server.register is None:
            return tuple(d.identity.dev_eui for d in self.devices)
        return self.server.register


class _Reader:
    """Collects field-level errors instead of stopping at the first one."""

    def __init__(self):
        self.errors: list[str] = []

    def get(self, data: Any, key: str, path: str, kind, default=..., check=None, why: str = ""):
        where = f"{path}.{key}" if path else key
        if not isinstance(data, dict):
            self.errors.append(f"{path or '<root>'}: expected a mapping")
            return None if default is ... else default
        if key not in data:
            if default is ...:
                self.errors.append(f"{where}: required")
                return None
            return default
        value = data[key]
        try:
            value = kind(value)
        except (TypeError, ValueError, KeyError) as exc:
            self.errors.append(f"{where}: {exc}")
            return None if default is ... else default
        if check is not None and not check(value):
            self.errors.append(f"{where}: {why or 'invalid value'} (got {data[key]!r})")
            return None if default is ... else default
        return value

    def build(self, path: str, factory, *args, **kwargs):
        try:
            return factory(*args, **kwargs)
        except (TypeError, ValueError) as exc:
            self.errors.append(f"{path}: {exc}")
            return None


def _hex_int(nbytes: int):
    def conv(value) -> int:
        if isinstance(value, int):
            v = value
        else:
            text = str(value).replace(" ", "")
            if len(text) != 2 * nbytes:
                raise ValueError(f"expected {2 * nbytes} hex digits")
            v = int(text, 16)
        if not 0 <= v < 1 << (8 * nbytes):
            raise ValueError(f"does not fit in {nbytes} bytes")
        return v
    return conv


def _eui(value) -> int:
    return parse_eui(str(value))


def _key(role: KeyRole):
    def conv(value) -> Aes128Key:
        text = str(value).replace(" ", "")
        if len(text) != 32:
            raise ValueError("key must be 32 hex digits")
        return Aes128Key.from_hex(text, role)
    return conv


def _position(value) -> Position:
    if isinstance(value, dict):
        return Position(float(value["x"]), float(value["y"]))
    x, y = value
    return Position(float(x), float(y))


def _finite(v: float) -> bool:
    return math.isfinite(v)


def parse_config(data: Any, source: str | None = None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid(["<root>: expected a mapping of scenario sections"])
    r = _Reader()
    name = r.get(data, "name", "", str, default="scenario")
    seed = r.get(data, "seed", "", int, check=lambda v: 0 <= v < 1 << 64, why="must be a 64-bit unsigned integer")
    duration = r.get(data, "duration_s", "", float, check=lambda v: v > 0 and _finite(v), why="must be positive")

    origin_raw = data.get("origin", {}) if isinstance(data, dict) else {}
    origin = (
        r.get(origin_raw, "lat", "origin", float, default=48.7130, check=lambda v: abs(v) <= 90, why="latitude"),
        r.get(origin_raw, "lon", "origin", float, default=2.2010, check=lambda v: abs(v) <= 180, why="longitude"),
    )

    ch = data.get("channel", {}) if isinstance(data, dict) else {}
    model = r.build(
        "channel", PathLossModel,
        rssi_ref_dbm=r.get(ch, "rssi_ref_dbm", "channel", float, default=PathLossModel.rssi_ref_dbm),
        ref_distance_m=r.get(ch, "ref_distance_m", "channel", float, default=1.0),
        exponent=r.get(ch, "exponent", "channel", float, default=2.7),
        shadow_sigma_db=r.get(ch, "shadow_sigma_db", "channel", float, default=0.0),
    )
    noise = r.get(ch, "noise_floor_dbm", "channel", float, default=DEFAULT_NOISE_FLOOR_DBM)

    gateways = []
    for i, gw in enumerate(r.get(data, "gateways", "", list, default=[])):
        path = f"gateways[{i}]"
        gw_id = r.get(gw, "id", path, str)
        pos = r.get(gw, "position", path, _position)
        if gw_id == "attacker":
            r.errors.append(f"{path}.id: 'attacker' is reserved")
        if gw_id is not None and pos is not None:
            gateways.append(GatewayConfig(gw_id, pos))
    ids = [g.id for g in gateways]
    if len(set(ids)) != len(ids):
        r.errors.append("gateways: duplicate gateway id")

    devices = []
    for i, dev in enumerate(r.get(data, "devices", "", list, default=[])):
        devices.append(_parse_device(r, dev, f"devices[{i}]", duration))
    devices = [d for d in devices if d is not None]
    euis = [d.identity.dev_eui for d in devices]
    if len(set(euis)) != len(euis):
        r.errors.append("devices: dev_eui must be unique per scenario")

    srv = data.get("server", {}) if isinstance(data, dict) else {}
    register = None
    if isinstance(srv, dict) and "register" in srv:
        register = []
        for j, e in enumerate(srv["register"] or []):
            try:
                register.append(_eui(e))
            except ValueError as exc:
                r.errors.append(f"server.register[{j}]: {exc}")
        for e in register:
            if e not in euis:
                r.errors.append(f"server.register: {e:016X} is not a scenario device")
        register = tuple(register)
    server = ServerConfig(
        net_id=r.get(srv, "net_id", "server", _hex_int(3), default=0x000013),
        dedup_window_s=r.get(srv, "dedup_window_s", "server", float, default=2.0, check=lambda v: v > 0, why="must be positive"),
        dev_addr_base=r.get(srv, "dev_addr_base", "server", _hex_int(4), default=None),
        register=register,
    )

    attacker = None
    if isinstance(data, dict) and data.get("attacker") is not None:
        attacker = _parse_attacker(r, data["attacker"], duration)

    if r.errors:
        raise ConfigInvalid(r.errors)
    return ScenarioConfig(
        name=name, seed=seed, duration_s=duration, model=model, gateways=tuple(gateways),
        devices=tuple(devices), server=server, attacker=attacker, origin=origin,
        noise_floor_dbm=noise, source=source,
    )


def _parse_device(r: _Reader, dev: Any, path: str, duration: float | None) -> DeviceConfig | None:
    n_err = len(r.errors)
    dev_eui = r.get(dev, "dev_eui", path, _eui)
    app_eui = r.get(dev, "app_eui", path, _eui)
    app_key = r.get(dev, "app_key", path, _key(KeyRole.APP_KEY))
    period = r.get(dev, "uplink_period_s", path, float, default=10.0, check=lambda v: v > 0, why="must be positive")
    dr_raw = dev.get("data_rate", {}) if isinstance(dev, dict) else {}
    data_rate = r.build(
        f"{path}.data_rate", DataRateSpec,
        r.get(dr_raw, "sf", f"{path}.data_rate", int, default=7),
        r.get(dr_raw, "bw_khz", f"{path}.data_rate", int, default=125),
        r.get(dr_raw, "cr", f"{path}.data_rate", str, default="4/5"),
    )
    tx = None
    if data_rate is not None:
        tx = r.build(
            path, TxParams,
            r.get(dev, "frequency_hz", path, int, default=868_300_000),
            data_rate,
            r.get(dev, "tx_power_dbm", path, float, default=14.0),
        )
    waypoints = []
    for j, wp in enumerate(r.get(dev, "waypoints", path, list, default=[])):
        wpath = f"{path}.waypoints[{j}]"
        t = r.get(wp, "t", wpath, float)
        pos = r.get(wp, "position", wpath, _position)
        if t is not None and duration is not None and not 0 <= t <= duration:
            r.errors.append(f"{wpath}.t: must lie within [0, duration_s]")
        waypoints.append((pos, t))
    if not waypoints:
        r.errors.append(f"{path}.waypoints: at least one waypoint required")
    movement = None
    if len(r.errors) == n_err:
        movement = r.build(f"{path}.waypoints", MovementModel, tuple(waypoints))
    alt = r.get(dev, "alt_m", path, int, default=100, check=lambda v: 0 <= v <= 0xFFFF, why="0..65535")
    offset = r.get(dev, "freq_offset_hz", path, int, default=None)
    join_at = r.get(dev, "join_at_s", path, float, default=0.0, check=lambda v: v >= 0, why="must be >= 0")
    if len(r.errors) != n_err:
        return None
    return DeviceConfig(
        name=str(dev.get("name", f"{dev_eui:016X}")),
        identity=DeviceIdentity(dev_eui, app_eui, app_key),
        movement=movement, uplink_period_s=period, tx=tx, alt_m=alt,
        freq_offset_hz=offset, join_at_s=join_at,
    )


def _parse_attacker(r: _Reader, att: Any, duration: float | None) -> AttackerConfig | None:
    pos = r.get(att, "position", "attacker", _position)
    power = r.get(att, "assumed_tx_power_dbm", "attacker", float, default=14.0)
    oui = r.get(att, "oui_file", "attacker", str, default=None)
    script = []
    for i, act in enumerate(r.get(att, "script", "attacker", list, default=[])):
        path = f"attacker.script[{i}]"
        at = r.get(act, "at", path, float, check=lambda v: v >= 0, why="must be >= 0")
        if at is not None and duration is not None and at > duration:
            r.errors.append(f"{path}.at: beyond duration_s")
        kind = r.get(act, "action", path, str, check=lambda v: v in ACTIONS, why=f"one of {ACTIONS}")
        tgt = act.get("target", {}) if isinstance(act, dict) else {}
        target = ReplayTarget(
            r.get(tgt, "frame", f"{path}.target", str, default="join_request",
                  check=lambda v: v in TARGET_FRAMES, why=f"one of {TARGET_FRAMES}"),
            r.get(tgt, "index", f"{path}.target", int, default=0, check=lambda v: v >= 0, why="must be >= 0"),
        )
        script.append(AttackAction(
            at=at, action=kind,
            duration_s=r.get(act, "duration_s", path, float, default=math.inf, check=lambda v: v > 0, why="must be positive"),
            window_s=r.get(act, "window_s", path, float, default=60.0, check=lambda v: v > 0, why="must be positive"),
            threshold_db=r.get(act, "threshold_db", path, float, default=3.0, check=lambda v: v >= 0, why="must be >= 0"),
            target=target,
            gain_db=r.get(act, "gain_db", path, float, default=0.0),
            count=r.get(act, "count", path, int, default=1, check=lambda v: v >= 1, why="must be >= 1"),
            inter_frame_s=r.get(act, "inter_frame_s", path, float, default=5.0, check=lambda v: v >= 0, why="must be >= 0"),
        ))
    if pos is None:
        return None
    return AttackerConfig(pos, power, oui, tuple(script))


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigInvalid([f"{path}: {exc}"]) from exc
    return parse_config(data, str(path))


def shipped_scenario_text(name: str) -> str:
    if name not in SHIPPED:
        raise KeyError(f"unknown shipped scenario {name!r}; choose from {', '.join(SHIPPED)}")
    return resources.files("lorawan_sim.scenarios").joinpath(f"{name}.yaml").read_text()


def shipped_scenario(name: str) -> ScenarioConfig:
    return parse_config(yaml.safe_load(shipped_scenario_text(name)), name)


def shipped_oui_text() -> str:
    return resources.files("lorawan_sim.scenarios").joinpath("oui.txt").read_text()
