"""Versioned solution files and CSV exports.

Solution files are JSON with a header (format tag, version, mode, config
hash, cache fingerprint, gamma, theta) followed by the tables in
lexicographic state order.  Floats are written with ``repr`` precision, so
a file read back reproduces the arrays exactly and identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__
from .decomposed import StreamSolution
from .errors import ConfigError
from .mdp_full import FullSolution

FORMAT_TAG = "delaymimo-solution"
FORMAT_VERSION = 1


def _floats(a):
    return [float(x) for x in np.asarray(a).ravel()]


def save_full_solution(sol: FullSolution, path, config_hash: str = "", cache_id: str = "") -> Path:
    path = Path(path)
    n_states, n_streams = sol.delta_v.shape
    body = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "mode": "full",
        "package": __version__,
        "config_hash": config_hash,
        "cache": cache_id,
        "gamma": float(sol.gamma),
        "theta": float(sol.theta),
        "converged": bool(sol.converged),
        "iterations": int(sol.iterations),
        "span_residual": float(sol.span_residual),
        "n_streams": int(n_streams),
        "n_states": int(n_states),
        "v": _floats(sol.v),
        "delta_v": [_floats(row) for row in sol.delta_v],
    }
    path.write_text(json.dumps(body, indent=1) + "\n")
    return path


def save_stream_solutions(sols, path, config_hash: str = "", cache_id: str = "") -> Path:
    path = Path(path)
    body = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "mode": "decomposed",
        "package": __version__,
        "config_hash": config_hash,
        "cache": cache_id,
        "gamma": float(sols[0].gamma),
        "theta": float(sum(s.theta for s in sols)),
        "streams": [{
            "stream": int(s.stream),
            "rank": int(s.rank),
            "theta": float(s.theta),
            "residual": float(s.residual),
            "iterations": int(s.iterations),
            "delta_v": _floats(s.delta_v),
        } for s in sols],
    }
    path.write_text(json.dumps(body, indent=1) + "\n")
    return path


def load_solution(path):
    """Return ``(mode, solution, header)``; solution is a FullSolution or a list."""
    body = json.loads(Path(path).read_text())
    if body.get("format") != FORMAT_TAG:
        raise ConfigError(f"{path} is not a solution file")
    if body.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported solution file version {body.get('version')}")
    header = {k: body[k] for k in ("mode", "config_hash", "cache", "gamma", "theta", "package")}
    if body["mode"] == "full":
        sol = FullSolution(theta=body["theta"], v=np.array(body["v"]),
                           delta_v=np.array(body["delta_v"]).reshape(body["n_states"],
                                                                     body["n_streams"]),
                           gamma=body["gamma"], converged=body["converged"],
                           iterations=body["iterations"], span_residual=body["span_residual"])
        return "full", sol, header
    if body["mode"] == "decomposed":
        sols = [StreamSolution(theta=s["theta"], delta_v=np.array(s["delta_v"]),
                               stream=s["stream"], gamma=body["gamma"], rank=s["rank"],
                               residual=s["residual"], iterations=s["iterations"])
                for s in body["streams"]]
        return "decomposed", sols, header
    raise ConfigError(f"unknown solution mode {body['mode']!r}")


def provenance_lines(config_hash: str, cache_seed, extra: dict | None = None) -> list:
    items = {"version": __version__, "config_hash": config_hash, "cache_seed": cache_seed}
    items.update(extra or {})
    return ["# " + " ".join(f"{k}={v}" for k, v in items.items())]


def write_rows(path, rows: list, header_lines=(), columns=None) -> Path:
    """Write dict rows as CSV preceded by ``#`` provenance lines."""
    path = Path(path)
    if columns is None:
        columns = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def steady_state_rows(ss, label: str = "") -> list:
    rows = []
    for i, (t, d) in enumerate(zip(ss.avg_queue, ss.drop_rate), start=1):
        rows.append({"label": label, "stream": i, "avg_queue": float(t), "drop_rate": float(d),
                     "avg_power": float(ss.avg_power)})
    return rows
