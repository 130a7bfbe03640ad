"""Scenario files: experiment configuration schema, defaults, validation.

A scenario is JSON with the following fields (all optional unless noted):

    topology        "paper" or {"nodes": [{"id": "gw", "parent": null}, ...]}
    strategy        "concurrent" | "cascading" (required)
    image_size      firmware size in bytes (required)
    chunk_size      chunk payload size in bytes (default 32)
    seed            RNG seed (default 1)
    duration_s      simulated cutoff in seconds (default 1800)
    deployment / vendor / device_class
                    name components (defaults "oilrig"/"acme"/"valve")
    epoch           published firmware epoch (default 1632261600)
    granularity     {"period_s": 86400, "offset_s": -7200}
    multiparty      if true, every device gets its own device class and image
    trunc_len       HMAC tag truncation: 8, 16, or 32 (default 8)
    poll_period_s   manifest polling period (default 3600)
    poll_stagger_s  initial poll spread across devices (default 5.0)
    nacks_enabled   repository answers unknown epochs with Nacks (default false)
    loss            {"per_transmission": 0.1, "collision": 0.6}
    link            {"bandwidth_bps": 250000, "propagation_us": 0,
                     "base_slot_us": 1000, "retries": 3, "mtu_bytes": 128,
                     "link_header_bytes": 23}
    node            {"cs_capacity": 64, "pit_capacity": 16, "seen_capacity": 128,
                     "proc_delay_us": 1000, "turnaround_us": 2000,
                     "flash_write_us": 0, "verify_delay_us": 2000,
                     "install_delay_us": 2000}
    agent           {"app_retx_base_s": 10.0, "app_retx_jitter_s": 5.0,
                     "manifest_retries": 3, "digest_retries": 1}
    attacker        {"edge": ["n6", "n7"], "mode": "tamper_payload" |
                     "forge_tag" | "replay_stale", "rate": 1.0}
    outage          {"edge": ["gw", "n1"], "at_s": 120.0} or
                    {"edge": ["gw", "n1"], "after_install": "n1"}
    name_encoding   {"component_overhead": 2, "name_overhead": 2}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .naming import EncodingModel, Granularity
from .topology import Topology, build_paper_topology, from_node_list, TopologyError

STRATEGIES = ("concurrent", "cascading")
ATTACK_MODES = ("tamper_payload", "forge_tag", "replay_stale")


class ScenarioInvalid(ValueError):
    """Scenario validation failure; the message names the offending field."""

    def __init__(self, fieldname: str, message: str):
        self.fieldname = fieldname
        super().__init__(f"{fieldname}: {message}")


@dataclass(frozen=True, slots=True)
class LossParams:
    per_transmission: float = 0.10
    collision: float = 0.60


@dataclass(frozen=True, slots=True)
class LinkParams:
    bandwidth_bps: int = 250_000
    propagation_us: int = 0
    base_slot_us: int = 1000
    retries: int = 3
    mtu_bytes: int = 128
    link_header_bytes: int = 23


@dataclass(frozen=True, slots=True)
class NodeParams:
    cs_capacity: int = 64
    pit_capacity: int = 16
    seen_capacity: int = 128
    proc_delay_us: int = 1000
    turnaround_us: int = 2000
    flash_write_us: int = 0
    verify_delay_us: int = 2000
    install_delay_us: int = 2000


@dataclass(frozen=True, slots=True)
class AgentParams:
    app_retx_base_s: float = 10.0
    app_retx_jitter_s: float = 5.0
    manifest_retries: int = 3
    digest_retries: int = 1


@dataclass(frozen=True, slots=True)
class AttackerSpec:
    edge: tuple[str, str]
    mode: str
    rate: float


@dataclass(frozen=True, slots=True)
class OutageSpec:
    edge: tuple[str, str]
    at_s: float | None = None
    after_install: str | None = None


@dataclass(slots=True)
class Scenario:
    strategy: str
    image_size: int
    topology: Topology = field(default_factory=build_paper_topology)
    chunk_size: int = 32
    seed: int = 1
    duration_s: float = 1800.0
    deployment: str = "oilrig"
    vendor: str = "acme"
    device_class: str = "valve"
    epoch: int = 1632261600
    granularity: Granularity = Granularity(86400, -7200)
    multiparty: bool = False
    trunc_len: int = 8
    poll_period_s: float = 3600.0
    poll_stagger_s: float = 5.0
    nacks_enabled: bool = False
    loss: LossParams = LossParams()
    link: LinkParams = LinkParams()
    node: NodeParams = NodeParams()
    agent: AgentParams = AgentParams()
    attacker: AttackerSpec | None = None
    outage: OutageSpec | None = None
    name_encoding: EncodingModel = EncodingModel()

    def chunk_count(self) -> int:
        return -(-self.image_size // self.chunk_size)

    def duration_us(self) -> int:
        return int(self.duration_s * 1_000_000)


def _require(cond: bool, fieldname: str, message: str) -> None:
    if not cond:
        raise ScenarioInvalid(fieldname, message)


def _take(raw: dict, key: str, types, default, fieldname: str | None = None):
    value = raw.get(key, default)
    if value is None and default is None:
        return None
    _require(isinstance(value, types) and not isinstance(value, bool) or types is bool,
             fieldname or key, f"expected {types}, got {value!r}")
    return value


def _sub(raw: dict, key: str, cls, fieldname: str):
    block = raw.get(key)
    if block is None:
        return cls()
    _require(isinstance(block, dict), fieldname, "expected an object")
    known = {f for f in cls.__dataclass_fields__}
    for k in block:
        _require(k in known, f"{fieldname}.{k}", "unknown field")
    return cls(**block)


def scenario_from_dict(raw: dict) -> Scenario:
    _require(isinstance(raw, dict), "scenario", "top level must be an object")
    known = {
        "topology", "strategy", "image_size", "chunk_size", "seed", "duration_s",
        "deployment", "vendor", "device_class", "epoch", "granularity", "multiparty",
        "trunc_len", "poll_period_s", "poll_stagger_s", "nacks_enabled", "loss",
        "link", "node", "agent", "attacker", "outage", "name_encoding",
    }
    for key in raw:
        _require(key in known, key, "unknown field")

    strategy = raw.get("strategy")
    _require(strategy in STRATEGIES, "strategy", f"must be one of {STRATEGIES}, got {strategy!r}")
    image_size = raw.get("image_size")
    _require(isinstance(image_size, int) and image_size > 0, "image_size", "must be a positive integer")

    chunk_size = _take(raw, "chunk_size", int, 32)
    _require(chunk_size > 0, "chunk_size", "must be positive")
    seed = _take(raw, "seed", int, 1)
    duration_s = _take(raw, "duration_s", (int, float), 1800.0)
    _require(duration_s >= 0, "duration_s", "must be non-negative")
    epoch = _take(raw, "epoch", int, 1632261600)
    _require(epoch > 0, "epoch", "must be positive")
    trunc_len = _take(raw, "trunc_len", int, 8)
    _require(trunc_len in (8, 16, 32), "trunc_len", "must be 8, 16, or 32")

    topo_raw = raw.get("topology", "paper")
    if topo_raw == "paper":
        topology = build_paper_topology()
    elif isinstance(topo_raw, dict) and isinstance(topo_raw.get("nodes"), list):
        try:
            topology = from_node_list(topo_raw["nodes"])
        except TopologyError as exc:
            raise ScenarioInvalid("topology", str(exc)) from exc
    else:
        raise ScenarioInvalid("topology", f"'paper' or a node list, got {topo_raw!r}")

    gran_raw = raw.get("granularity", {"period_s": 86400, "offset_s": -7200})
    _require(isinstance(gran_raw, dict), "granularity", "expected an object")
    try:
        granularity = Granularity(gran_raw.get("period_s", 86400), gran_raw.get("offset_s", 0))
    except (ValueError, TypeError) as exc:
        raise ScenarioInvalid("granularity", str(exc)) from exc

    poll_period_s = _take(raw, "poll_period_s", (int, float), 3600.0)
    _require(poll_period_s > 0, "poll_period_s", "must be positive")
    poll_stagger_s = _take(raw, "poll_stagger_s", (int, float), 5.0)
    _require(poll_stagger_s >= 0, "poll_stagger_s", "must be non-negative")

    loss = _sub(raw, "loss", LossParams, "loss")
    _require(0 <= loss.per_transmission < 1 or loss.per_transmission == 1.0,
             "loss.per_transmission", "must lie in [0, 1]")
    _require(0 <= loss.collision <= 1, "loss.collision", "must lie in [0, 1]")
    link = _sub(raw, "link", LinkParams, "link")
    _require(link.bandwidth_bps > 0, "link.bandwidth_bps", "must be positive")
    _require(link.mtu_bytes > link.link_header_bytes, "link.mtu_bytes",
             "must exceed the link header size")
    node = _sub(raw, "node", NodeParams, "node")
    agent = _sub(raw, "agent", AgentParams, "agent")

    attacker = None
    if raw.get("attacker") is not None:
        blk = raw["attacker"]
        _require(isinstance(blk, dict), "attacker", "expected an object")
        edge = blk.get("edge")
        _require(isinstance(edge, list) and len(edge) == 2, "attacker.edge", "expected [a, b]")
        mode = blk.get("mode")
        _require(mode in ATTACK_MODES, "attacker.mode", f"must be one of {ATTACK_MODES}")
        rate = blk.get("rate", 1.0)
        _require(isinstance(rate, (int, float)) and 0 <= rate <= 1, "attacker.rate", "must lie in [0, 1]")
        attacker = AttackerSpec((edge[0], edge[1]), mode, float(rate))

    outage = None
    if raw.get("outage") is not None:
        blk = raw["outage"]
        _require(isinstance(blk, dict), "outage", "expected an object")
        edge = blk.get("edge")
        _require(isinstance(edge, list) and len(edge) == 2, "outage.edge", "expected [a, b]")
        at_s = blk.get("at_s")
        after = blk.get("after_install")
        _require((at_s is None) != (after is None), "outage",
                 "exactly one of at_s / after_install required")
        outage = OutageSpec((edge[0], edge[1]), at_s, after)

    enc_raw = raw.get("name_encoding", {})
    _require(isinstance(enc_raw, dict), "name_encoding", "expected an object")
    encoding = EncodingModel(
        component_overhead=enc_raw.get("component_overhead", 2),
        name_overhead=enc_raw.get("name_overhead", 2),
    )

    scenario = Scenario(
        strategy=strategy,
        image_size=image_size,
        topology=topology,
        chunk_size=chunk_size,
        seed=seed,
        duration_s=float(duration_s),
        deployment=_take(raw, "deployment", str, "oilrig"),
        vendor=_take(raw, "vendor", str, "acme"),
        device_class=_take(raw, "device_class", str, "valve"),
        epoch=epoch,
        granularity=granularity,
        multiparty=bool(raw.get("multiparty", False)),
        trunc_len=trunc_len,
        poll_period_s=float(poll_period_s),
        poll_stagger_s=float(poll_stagger_s),
        nacks_enabled=bool(raw.get("nacks_enabled", False)),
        loss=loss,
        link=link,
        node=node,
        agent=agent,
        attacker=attacker,
        outage=outage,
        name_encoding=encoding,
    )

    names = set(scenario.topology.nodes)
    if attacker is not None:
        _require(attacker.edge[0] in names and attacker.edge[1] in names,
                 "attacker.edge", "edge endpoints must be topology nodes")
    if outage is not None:
        _require(outage.edge[0] in names and outage.edge[1] in names,
                 "outage.edge", "edge endpoints must be topology nodes")
        if outage.after_install is not None:
            _require(outage.after_install in names, "outage.after_install", "unknown node")
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioInvalid("file", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(raw)
