"""Queue-side model shared by the solvers, the analysis and the simulator."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RegimeError, StateSpaceTooLarge
from .phy import alpha_from_ser

DEFAULT_STATE_CAP = 10**6


@dataclass(frozen=True)
class StreamProfile:
    """Traffic and weighting of one stream.

    ``lam`` is the arrival rate in packets per channel use and ``nbar`` the
    mean packet size in bits.
    """

    beta: float
    lam: float
    nbar: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not self.nbar > 0:
            raise ConfigError(f"nbar must be positive, got {self.nbar}")
        if not self.lam >= 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")


@dataclass(frozen=True)
class ChainParams:
    """Everything the embedded queue chain needs besides the channel law."""

    streams: tuple
    buffer_size: int
    gamma: float
    tau: float = 1.0
    alpha: float = field(default_factory=lambda: alpha_from_ser(0.01, 4.0))
    max_states: int = DEFAULT_STATE_CAP

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(self.streams))
        if not self.streams:
            raise ConfigError("at least one stream is required")
        if int(self.buffer_size) != self.buffer_size or self.buffer_size < 1:
            raise ConfigError(f"buffer_size must be a positive integer, got {self.buffer_size}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        arrivals = self.lambdas * self.tau
        if np.any(arrivals >= 1.0):
            raise RegimeError(f"arrival probabilities lam*tau={arrivals} must be < 1")
        if arrivals.sum() >= 1.0:
            raise RegimeError(f"sum of arrival probabilities {arrivals.sum()} must be < 1")

    @property
    def n_streams(self) -> int:
        return len(self.streams)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([s.lam for s in self.streams], dtype=float)

    @property
    def betas(self) -> np.ndarray:
        return np.array([s.beta for s in self.streams], dtype=float)

    @property
    def nbars(self) -> np.ndarray:
        return np.array([s.nbar for s in self.streams], dtype=float)

    @property
    def n_states(self) -> int:
        return (self.buffer_size + 1) ** self.n_streams

    def with_gamma(self, gamma: float) -> "ChainParams":
        return dataclasses.replace(self, gamma=float(gamma))

    def single(self, i: int) -> "ChainParams":
        """The one-stream chain of stream ``i``."""
        return dataclasses.replace(self, streams=(self.streams[i],))

    def to_dict(self) -> dict:
        return {
            "streams": [dataclasses.asdict(s) for s in self.streams],
            "buffer_size": int(self.buffer_size),
            "gamma": float(self.gamma),
            "tau": float(self.tau),
            "alpha": float(self.alpha),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class StateSpace:
    """Lexicographic enumeration of the joint queue states ``{0..N}^L``.

    ``up[s, i]`` / ``down[s, i]`` give the index reached by an arrival to /
    departure from stream ``i`` (with the buffer truncation and the
    reflection at zero folded in).
    """

    def __init__(self, n_streams: int, buffer_size: int, max_states: int = DEFAULT_STATE_CAP):
        self.n_streams = int(n_streams)
        self.buffer_size = int(buffer_size)
        self.shape = (self.buffer_size + 1,) * self.n_streams
        self.size = (self.buffer_size + 1) ** self.n_streams
        if self.size > max_states:
            raise StateSpaceTooLarge(
                f"(N+1)^L = {self.size} joint states exceeds the cap of {max_states}")
        self.states = np.array(list(np.ndindex(*self.shape)), dtype=np.int64).reshape(
            self.size, self.n_streams)
        strides = np.array([(self.buffer_size + 1) ** (self.n_streams - 1 - i)
                            for i in range(self.n_streams)], dtype=np.int64)
        self.strides = strides
        idx = np.arange(self.size)
        full = self.states == self.buffer_size
        empty = self.states == 0
        self.up = np.where(full, idx[:, None], idx[:, None] + strides[None, :])
        self.down = np.where(empty, idx[:, None], idx[:, None] - strides[None, :])

    @classmethod
    def for_params(cls, params: ChainParams) -> "StateSpace":
        return cls(params.n_streams, params.buffer_size, params.max_states)

    def index(self, q) -> int:
        q = np.asarray(q, dtype=np.int64)
        if q.shape != (self.n_streams,) or np.any(q < 0) or np.any(q > self.buffer_size):
            raise ValueError(f"state {tuple(q)} outside {{0..{self.buffer_size}}}^{self.n_streams}")
        return int(q @ self.strides)


@dataclass(frozen=True)
class ControlAction:
    """Per-slot transmit decision.

    ``assignment[i]`` is the eigenvalue rank (0 = strongest) used by stream
    ``i``; ``precoder`` has one column ``sqrt(p_i) u_rank(i)`` per stream.
    """

    assignment: np.ndarray
    powers: np.ndarray
    precoder: np.ndarray | None = None

    @property
    def total_power(self) -> float:
        return float(np.sum(self.powers))


def build_precoder(eigvecs: np.ndarray, assignment, powers) -> np.ndarray:
    return eigvecs[:, np.asarray(assignment)] * np.sqrt(np.asarray(powers))[None, :]
