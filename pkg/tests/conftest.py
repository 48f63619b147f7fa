import random
import sys
from pathlib import Path

import pytest

from lorawan_sim.crypto import Aes128Key, KeyRole
from lorawan_sim.device import Device, DeviceIdentity

FIXTURES = Path(__file__).parent / "fixtures"
sys.path.insert(0, str(Path(__file__).parent / "oracles"))


def read_kv(name: str) -> dict[str, str]:
    out = {}
    for line in (FIXTURES / name).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            key, value = line.split(None, 1)
            out[key] = value.strip()
    return out


IDENTITY = DeviceIdentity(
    dev_eui=0x4854C00000A1B2C3,
    app_eui=0x70B3D57ED0000000,
    app_key=Aes128Key.from_hex("8A1F3C5D7E9B2A4C6D8E0F1A3B5C7D9E", KeyRole.APP_KEY),
)


@pytest.fixture
def identity() -> DeviceIdentity:
    return IDENTITY


@pytest.fixture
def device(identity) -> Device:
    return Device(identity, random.Random(7))


def rec(wire, t=0.0, gw="gw-01", seq=None):
    from lorawan_sim.radio import CaptureRecord, RxMetadata, TxParams

    return CaptureRecord.build(RxMetadata(-80.0, 20.0, 868_300_000, 0, t, gw), TxParams(), wire, seq)


def join(server, device, t=0.0):
    """Run one join through the server's handler; returns the verdict."""
    from lorawan_sim.codec import encode_phy

    verdict, accept = server.handle_join_request([rec(encode_phy(device.build_join_request()), t)], t)
    if accept is not None:
        device.process_join_accept(accept)
    return verdict


def scenario(name, edit=None):
    """Shipped scenario, optionally mutated as a plain dict before validation."""
    import yaml

    from lorawan_sim.harness.config import parse_config, shipped_scenario_text

    data = yaml.safe_load(shipped_scenario_text(name))
    if edit is not None:
        edit(data)
    return parse_config(data, name)


GOLDEN = FIXTURES / "golden"
REPLAY_COUNTS = (1, 3, 10)


def s2a_with_count(k):
    """S2a with ``k`` join replays, 2.5 s apart so ten fit inside the run."""

    def edit(d):
        step = next(s for s in d["attacker"]["script"] if s["action"] == "replay")
        step.update(count=k, inter_frame_s=2.5)

    return scenario("s2a_join_replay", edit)


def golden_configs():
    configs = {f"s2a_k{k}": s2a_with_count(k) for k in REPLAY_COUNTS}
    configs["s2b_uplink_replay"] = scenario("s2b_uplink_replay")
    return configs


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
