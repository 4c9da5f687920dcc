"""Plain-text checkpoints, key/value config files, CSV tables and run manifests.

Checkpoint files are ``key = value`` lines. Floats are written with ``repr``
so they round-trip exactly. Recognized keys::

    format_version  integer, currently 1
    model_kind      qd3pm | factorized
    N, L, T         integers (L is 0 for factorized models)
    topology        all-to-all | chain | star
    s               schedule offset
    mode            posterior mode used in training
    target_kind     step-predictor | x0-predictor
    params          space-separated flat parameters (denoiser order, or
                    factorized logits in (N, T, 2) C order)
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .sim import BitString

FORMAT_VERSION = 1
OUT_ENV = "QD3PM_OUT"
DEFAULT_OUT = "qd3pm-out"


class FormatError(ValueError):
    """A file does not follow the documented layout."""


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


# --------------------------------------------------------------------------
# key/value files


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


@dataclass(frozen=True)
class Checkpoint:
    model_kind: str
    N: int
    L: int
    topology: str
    T: int
    s: float
    mode: str
    target_kind: str
    params: np.ndarray
    format_version: int = FORMAT_VERSION


def write_checkpoint(path, ck: Checkpoint) -> None:
    items = {"format_version": ck.format_version, "model_kind": ck.model_kind, "N": ck.N,
             "L": ck.L, "topology": ck.topology, "T": ck.T, "s": repr(float(ck.s)),
             "mode": ck.mode, "target_kind": ck.target_kind,
             "params": " ".join(repr(float(x)) for x in np.ravel(ck.params))}
    Path(path).write_text(format_kv(items))


def read_checkpoint(path) -> Checkpoint:
    kv = parse_kv(Path(path).read_text())
    missing = {f.name for f in fields(Checkpoint)} - kv.keys()
    if missing:
        raise FormatError(f"checkpoint missing keys {sorted(missing)}")
    version = int(kv["format_version"])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        params = np.array([float(x) for x in kv["params"].split()])
        return Checkpoint(model_kind=kv["model_kind"], N=int(kv["N"]), L=int(kv["L"]),
                          topology=kv["topology"], T=int(kv["T"]), s=float(kv["s"]),
                          mode=kv["mode"], target_kind=kv["target_kind"], params=params,
                          format_version=version)
    except ValueError as exc:
        raise FormatError(f"bad checkpoint value: {exc}") from exc


# --------------------------------------------------------------------------
# CSV


def fmt(value) -> str:
    """Exact, platform-independent text for table cells."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def distribution_rows(p: np.ndarray) -> list[tuple]:
    width = int(np.log2(len(p)))
    return [(i, str(BitString.from_index(i, width)), float(p[i])) for i in range(len(p))]


def write_distribution(path, p: np.ndarray) -> None:
    write_csv(path, ("index", "bitstring", "probability"), distribution_rows(p))


def write_manifest(path, command: str, config: dict, seed: Optional[int], timings: dict) -> None:
    data = {"format_version": FORMAT_VERSION, "command": command, "seed": seed,
            "config": config, "timings": timings}
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
