"""Run configuration for the command-line front end.

A configuration file (TOML or JSON) maps one-to-one onto :class:`RunConfig`.
Every field has a default; the defaults describe the two-stream 2x2
reference scenario (200-bit packets, ``lam tau = 0.02``, buffer of 4
packets, 1% symbol error target, weights 1 and 10).

Example TOML::

    scenario = "two-stream-2x2"
    p0 = "20dB"
    buffer_size = 4
    [phy]
    n_tx = 2
    n_rx = 2
    sigma_e2 = 0.1
    [[streams]]
    beta = 1
    lam = 0.02
    nbar = 200
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import ChainParams, StreamProfile
from .phy import PhyConfig

SOLVER_MODES = ("full", "decomposed", "both")
POLICY_NAMES = {"full": "full-optimal", "decomposed": "decomposed", "rr": "round-robin",
                "csit": "csit-only"}


def parse_power(value) -> float:
    """Linear power from a number or a string such as ``"20dB"``.

    Decibels are relative to the unit noise power.
    """
    if isinstance(value, (int, float)):
        return float(value)
    m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*(dB)?\s*", str(value), flags=re.IGNORECASE)
    if m is None:
        raise ConfigError(f"cannot parse power value {value!r}")
    x = float(m.group(1))
    return 10.0 ** (x / 10.0) if m.group(2) else x


def default_streams():
    return (StreamProfile(beta=1.0, lam=0.02, nbar=200.0),
            StreamProfile(beta=10.0, lam=0.02, nbar=200.0))


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "two-stream-2x2"
    phy: PhyConfig = field(default_factory=PhyConfig)
    streams: tuple = field(default_factory=default_streams)
    buffer_size: int = 4
    tau: float = 1.0
    gamma: float | None = None
    p0: float | None = None
    mode: str = "both"
    calibration: str = "root-find"
    cache_rows: int = 100_000
    cache_seed: int = 1
    slots: int = 1_000_000
    seeds: tuple = (0,)
    policies: tuple = ("full", "decomposed")
    match_average: bool = True
    max_states: int = 10**6
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(
            s if isinstance(s, StreamProfile) else StreamProfile(**s) for s in self.streams))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "policies", tuple(self.policies))
        if self.p0 is not None:
            object.__setattr__(self, "p0", parse_power(self.p0))
        if self.gamma is None and self.p0 is None:
            object.__setattr__(self, "gamma", 1e-2)
        if (self.gamma is None) == (self.p0 is None):
            raise ConfigError("give exactly one of gamma and p0")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.p0 is not None and not self.p0 > 0:
            raise ConfigError("p0 must be positive")
        if self.mode not in SOLVER_MODES:
            raise ConfigError(f"mode must be one of {SOLVER_MODES}, got {self.mode!r}")
        if self.calibration not in ("sweep", "root-find"):
            raise ConfigError(f"unknown calibration mode {self.calibration!r}")
        bad = [p for p in self.policies if p not in POLICY_NAMES]
        if bad:
            raise ConfigError(f"unknown policies {bad}; choose from {sorted(POLICY_NAMES)}")
        if len(self.streams) != self.phy.n_streams:
            raise ConfigError(f"{len(self.streams)} streams configured but the PHY carries "
                              f"{self.phy.n_streams}")
        if self.slots < 1 or self.cache_rows < 1:
            raise ConfigError("slots and cache_rows must be positive")
        # regime check on lam*tau happens here, before any solve
        self.chain(self.gamma or 1.0)

    def chain(self, gamma: float) -> ChainParams:
        return ChainParams(streams=self.streams, buffer_size=self.buffer_size, gamma=gamma,
                           tau=self.tau, alpha=self.phy.alpha, max_states=self.max_states)

    def replace(self, **changes) -> "RunConfig":
        if "gamma" in changes and changes["gamma"] is not None:
            changes.setdefault("p0", None)
        if "p0" in changes and changes["p0"] is not None:
            changes.setdefault("gamma", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["streams"] = [dataclasses.asdict(s) for s in self.streams]
        d["seeds"] = list(self.seeds)
        d["policies"] = list(self.policies)
        return d

    def digest(self) -> str:
        """Hash of the fields that affect results (not ``out`` or ``workers``)."""
        d = self.to_dict()
        del d["out"], d["workers"]
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    if "phy" in data:
        try:
            data["phy"] = PhyConfig(**data["phy"])
        except TypeError as exc:
            raise ConfigError(f"bad [phy] table: {exc}") from exc
    return RunConfig(**data)


def load_config(path=None) -> RunConfig:
    """Read a TOML or JSON file; ``None`` gives the default scenario."""
    if path is None:
        return RunConfig()
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)
