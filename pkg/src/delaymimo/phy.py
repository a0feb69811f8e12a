"""MIMO physical layer: channel draws, eigenmodes and the rate mappings.

Channels are i.i.d. Rayleigh (unit-variance circularly symmetric complex
Gaussian entries).  With imperfect CSIT the transmitter sees an estimate
``h_hat`` and the true channel is ``h_hat - dH`` where the error ``dH`` is
independent of the estimate, so the total channel variance stays one.

Rates follow the QAM SEP bound inverted at the target error probability::

    R = log2(1 + alpha * SINR),   alpha = 3 / (2 ln(kappa1 / (2 eps)))
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = [
    "PhyConfig",
    "ChannelSample",
    "EigenSampleCache",
    "alpha_from_ser",
    "sample_channel",
    "draw_eigvals",
    "effective_matrix",
    "mse_matrix",
    "wiener_sinr",
    "rate_per_stream",
    "service_rate",
]

CSIT_VARIANTS = ("scaled", "unscaled")
MSE_COND_LIMIT = 1e12


def alpha_from_ser(target_ser: float, kappa1: float = 4.0) -> float:
    """SINR gap factor for a target symbol error probability.

    Obtained by solving ``eps = kappa1/2 * exp(-3 SINR / (2 (2^R - 1)))``
    for ``2^R - 1``.
    """
    if not 0.0 < target_ser < 1.0:
        raise ConfigError(f"target_ser must lie in (0, 1), got {target_ser}")
    if kappa1 <= 0:
        raise ConfigError(f"kappa1 must be positive, got {kappa1}")
    ratio = kappa1 / (2.0 * target_ser)
    if ratio <= 1.0:
        raise ConfigError(
            f"kappa1/(2*target_ser) = {ratio} <= 1 gives a non-positive alpha")
    return 3.0 / (2.0 * np.log(ratio))


@dataclass(frozen=True)
class PhyConfig:
    """Antenna counts, link adaptation target and CSIT quality.

    ``csit_variant`` selects the effective matrix used for precoding when
    ``sigma_e2 > 0``: ``"scaled"`` adds ``sigma_e2 * n_rx * I`` to the
    estimate's Gram matrix (continuous at perfect CSIT), ``"unscaled"`` adds
    ``n_rx * I``.
    """

    n_tx: int = 2
    n_rx: int = 2
    n_streams: int = 2
    target_ser: float = 0.01
    kappa1: float = 4.0
    sigma_e2: float = 0.0
    rng_seed: int = 0
    csit_variant: str = "scaled"

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_streams"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val}")
        if self.n_streams > min(self.n_tx, self.n_rx):
            raise ConfigError(
                f"n_streams={self.n_streams} exceeds min(n_tx, n_rx)="
                f"{min(self.n_tx, self.n_rx)}")
        if not 0.0 <= self.sigma_e2 < 1.0:
            raise ConfigError(f"sigma_e2 must lie in [0, 1), got {self.sigma_e2}")
        if self.csit_variant not in CSIT_VARIANTS:
            raise ConfigError(f"csit_variant must be one of {CSIT_VARIANTS}")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be non-negative")
        # validates target_ser / kappa1
        alpha_from_ser(self.target_ser, self.kappa1)

    @property
    def alpha(self) -> float:
        return alpha_from_ser(self.target_ser, self.kappa1)

    @property
    def diagonal_offset(self) -> float:
        """Identity term added to the estimate's Gram matrix."""
        if self.sigma_e2 == 0.0:
            return 0.0
        if self.csit_variant == "unscaled":
            return float(self.n_rx)
        return self.sigma_e2 * self.n_rx


@dataclass(frozen=True)
class ChannelSample:
    """One CSIT realisation with its top-``L`` eigenmodes."""

    h_hat: np.ndarray
    h_true: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def delta_h(self) -> np.ndarray:
        return self.h_hat - self.h_true


def _complex_gaussian(rng, shape, variance=1.0):
    z = rng.standard_normal(tuple(shape) + (2,))
    return np.sqrt(variance / 2.0) * (z[..., 0] + 1j * z[..., 1])


def _draw_pair(cfg: PhyConfig, rng, batch=()):
    shape = tuple(batch) + (cfg.n_rx, cfg.n_tx)
    if cfg.sigma_e2 == 0.0:
        h = _complex_gaussian(rng, shape)
        return h, h
    h_hat = _complex_gaussian(rng, shape, 1.0 - cfg.sigma_e2)
    delta = _complex_gaussian(rng, shape, cfg.sigma_e2)
    return h_hat, h_hat - delta


def effective_matrix(h_hat: np.ndarray, cfg: PhyConfig) -> np.ndarray:
    """Gram matrix whose eigenvectors form the optimal precoder."""
    gram = np.conj(np.swapaxes(h_hat, -1, -2)) @ h_hat
    offset = cfg.diagonal_offset
    if offset:
        gram = gram + offset * np.eye(cfg.n_tx)
    return gram


def _normalize_phase(vecs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # first non-negligible component of every column made real positive
    out = vecs.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        idx = int(np.argmax(np.abs(col) > tol))
        pivot = col[idx]
        if abs(pivot) > tol:
            out[:, k] = col * (np.conj(pivot) / abs(pivot))
    return out


def sample_channel(cfg: PhyConfig, rng: np.random.Generator) -> ChannelSample:
    """Draw one channel and eigendecompose its effective matrix."""
    h_hat, h_true = _draw_pair(cfg, rng)
    w, u = np.linalg.eigh(effective_matrix(h_hat, cfg))
    order = np.argsort(-w, kind="stable")[: cfg.n_streams]
    eigvals = np.clip(w[order], 0.0, None)
    eigvecs = _normalize_phase(u[:, order])
    return ChannelSample(h_hat=h_hat, h_true=h_true, eigvals=eigvals, eigvecs=eigvecs)


def draw_eigvals(cfg: PhyConfig, rng: np.random.Generator, size: int) -> np.ndarray:
    """Descending top-``L`` eigenvalues of ``size`` independent channels."""
    h_hat, _ = _draw_pair(cfg, rng, batch=(size,))
    gram = effective_matrix(h_hat, cfg)
    if cfg.n_tx == 2:
        # closed form for 2x2 Hermitian matrices; batched LAPACK is ~5x slower
        a, d = gram[:, 0, 0].real, gram[:, 1, 1].real
        mid = 0.5 * (a + d)
        rad = np.hypot(0.5 * (a - d), np.abs(gram[:, 0, 1]))
        top = np.stack([mid + rad, mid - rad], axis=1)[:, : cfg.n_streams]
        return np.ascontiguousarray(np.clip(top, 0.0, None))
    w = np.linalg.eigvalsh(gram)
    top = w[:, ::-1][:, : cfg.n_streams]
    return np.ascontiguousarray(np.clip(top, 0.0, None))


@dataclass(frozen=True)
class EigenSampleCache:
    """Frozen eigenvalue samples used for every expectation over H.

    Rows are descending.  Column ``k`` holds the ``(k+1)``-th largest
    eigenvalue, which is what a stream statically mapped to rank ``k``
    experiences.
    """

    samples: np.ndarray
    seed: int
    sigma_e2: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[0] == 0:
            raise ConfigError("samples must be a non-empty 2-D array")
        if np.any(s < 0) or np.any(np.diff(s, axis=1) > 0):
            raise ConfigError("every row must be non-negative and sorted descending")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def build(cls, cfg: PhyConfig, n_samples: int = 100_000, seed: int | None = None):
        seed = cfg.rng_seed if seed is None else int(seed)
        rng = np.random.default_rng(seed)
        samples = draw_eigvals(cfg, rng, n_samples)
        meta = {"n_tx": cfg.n_tx, "n_rx": cfg.n_rx, "variant": cfg.csit_variant}
        return cls(samples=samples, seed=seed, sigma_e2=cfg.sigma_e2, meta=meta)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_streams(self) -> int:
        return self.samples.shape[1]

    def column(self, rank: int) -> np.ndarray:
        return self.samples[:, rank]

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.samples.tobytes())
        h.update(json.dumps([self.seed, self.sigma_e2]).encode())
        return h.hexdigest()[:16]

    def save(self, path) -> Path:
        """Write as CSV (``.csv``) or compressed numpy archive (otherwise)."""
        path = Path(path)
        header = {"seed": self.seed, "sigma_e2": self.sigma_e2,
                  "n_samples": self.n_samples, "n_streams": self.n_streams, **self.meta}
        if path.suffix == ".csv":
            with open(path, "w") as fh:
                fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
                fh.write(",".join(f"xi_{k + 1}" for k in range(self.n_streams)) + "\n")
                np.savetxt(fh, self.samples, delimiter=",", fmt="%.17g")
        else:
            with open(path, "wb") as fh:
                np.savez(fh, samples=self.samples,
                         header=np.array(json.dumps(header, sort_keys=True)))
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.suffix == ".csv":
            with open(path) as fh:
                header = json.loads(fh.readline()[1:])
                fh.readline()
                samples = np.loadtxt(fh, delimiter=",", ndmin=2)
        else:
            with np.load(path) as data:
                samples = data["samples"]
                header = json.loads(str(data["header"]))
        if samples.shape != (header["n_samples"], header["n_streams"]):
            raise ConfigError(f"cache file {path} does not match its header")
        meta = {k: v for k, v in header.items()
                if k not in ("seed", "sigma_e2", "n_samples", "n_streams")}
        return cls(samples=samples, seed=header["seed"], sigma_e2=header["sigma_e2"],
                   meta=meta)


def mse_matrix(p: np.ndarray, h: np.ndarray) -> np.ndarray:
    """MSE matrix ``(I + P^H H^H H P)^-1`` of the Wiener receiver."""
    hp = h @ p
    a = np.eye(p.shape[1]) + np.conj(hp.T) @ hp
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > MSE_COND_LIMIT:
        raise NumericalError(f"MSE matrix condition number {cond:.3g} too large")
    e = np.linalg.inv(a)
    return 0.5 * (e + np.conj(e.T))


def wiener_sinr(p: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-stream SINR after the Wiener filter ``p_i^H H^H A_i^-1 H p_i``.

    Reference implementation for checking the MSE-matrix route.
    """
    hp = h @ p
    n_rx, n_streams = hp.shape
    out = np.empty(n_streams)
    for i in range(n_streams):
        others = np.delete(hp, i, axis=1)
        a_i = others @ np.conj(others.T) + np.eye(n_rx)
        out[i] = np.real(np.conj(hp[:, i]) @ np.linalg.solve(a_i, hp[:, i]))
    return out


def rate_per_stream(mse_diag, cfg_or_alpha) -> np.ndarray:
    """Bits per symbol supported at the target SEP for each stream."""
    alpha = cfg_or_alpha.alpha if isinstance(cfg_or_alpha, PhyConfig) else float(cfg_or_alpha)
    d = np.asarray(mse_diag, dtype=float)
    if np.any(~(d > 0)) or np.any(d > 1):
        raise ValueError("MSE diagonal entries must lie in (0, 1]")
    return np.log2(1.0 + alpha * (1.0 / d - 1.0))


def service_rate(rate, nbar):
    """Mean packet service rate (packets per channel use)."""
    return np.asarray(rate) / nbar if np.ndim(rate) else float(rate) / nbar
