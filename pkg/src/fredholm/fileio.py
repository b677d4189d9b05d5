"""Experiment configuration, portable graymap I/O and CSV emission."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "write_image",
    "read_image",
    "write_metrics_csv",
    "write_manifest",
    "METRICS_HEADER",
]

EXPERIMENTS = ("analytic", "mixture", "deblur", "pet", "sweep")
METHODS = ("smc", "smc-exact", "em", "ems-gaussian", "ems-3point", "ib", "rl")

METRICS_HEADER = ("replicate,method,N,M,epsilon,ise_f,mse_p95,kl,"
                  "match_distance,mean,variance,runtime_ms")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment description; every run echoes one to its manifest."""

    experiment: str
    method: str
    N: int
    M: Optional[int] = None
    B: int = 100
    D: int = 100
    n_iterations: int = 100
    epsilon: float = 1e-3
    resample_threshold: float = 0.5
    seed: int = 0
    replicates: int = 1
    output_dir: str = "out"
    emit_per_iteration: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; pick one of {EXPERIMENTS}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; pick one of {METHODS}")
        for key in ("N", "B", "D", "n_iterations", "replicates"):
            v = getattr(self, key)
            if v <= 0:
                raise ValueError(f"config key {key} must be positive, got {v}")
        if self.M is not None and self.M <= 0:
            raise ValueError(f"config key M must be positive, got {self.M}")
        if self.epsilon < 0:
            raise ValueError(f"config key epsilon must be nonnegative, got {self.epsilon}")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ValueError("config key resample_threshold must lie in (0, 1]")

    @property
    def m_or_n(self) -> int:
        return self.M if self.M is not None else self.N

    def as_items(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}

_FIELD_PARSERS = {
    "experiment": str,
    "method": str,
    "N": int,
    "M": int,
    "B": int,
    "D": int,
    "n_iterations": int,
    "epsilon": float,
    "resample_threshold": float,
    "seed": int,
    "replicates": int,
    "output_dir": str,
    "emit_per_iteration": "bool",
}


def _convert(key: str, raw):
    kind = _FIELD_PARSERS[key]
    if kind == "bool":
        if isinstance(raw, bool):
            return raw
        word = str(raw).strip().lower()
        if word not in _BOOL_WORDS:
            raise ValueError(f"config key {key}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[word]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ValueError(f"config key {key}: expected {kind.__name__}, got {raw!r}") from None


def _read_config_file(path) -> dict:
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        if key not in _FIELD_PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _convert(key, raw)
    return values


def parse_config(file=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a config from an optional key=value file plus overrides.

    The file holds one ``key = value`` per line with ``#`` comments;
    overrides (CLI flags) win over file values.  Unknown keys and type
    mismatches are rejected by name; ``experiment``, ``method`` and ``N``
    are required.
    """
    values = _read_config_file(file) if file is not None else {}
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in _FIELD_PARSERS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _convert(key, raw)
    for required in ("experiment", "method", "N"):
        if required not in values:
            raise ValueError(f"missing required config key {required!r}")
    return ExperimentConfig(**values)


def write_image(pixels, path) -> None:
    """Write a nonnegative array as a 16-bit binary graymap (magic P5).

    Values are scaled by the array maximum onto 0..65535, so the format
    is exact up to that quantization.
    """
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2 or np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("image must be a finite nonnegative 2-d array")
    peak = arr.max()
    scaled = np.zeros(arr.shape, dtype=np.uint16) if peak <= 0 else \
        np.round(arr / peak * 65535.0).astype(np.uint16)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(scaled.astype(">u2").tobytes())


def read_image(path):
    """Read a binary (P5) or ASCII (P2) graymap into floats in [0, 1]."""
    blob = Path(path).read_bytes()

    def bail(offset, msg):
        raise ValueError(f"{path}: byte {offset}: {msg}")

    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(blob):
            if blob[pos:pos + 1].isspace():
                pos += 1
            elif blob[pos:pos + 1] == b"#":
                while pos < len(blob) and blob[pos] != 0x0A:
                    pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            bail(start, "unexpected end of header")
        return blob[start:pos]

    magic = next_token()
    if magic not in (b"P5", b"P2"):
        bail(0, f"bad magic {magic!r}; expected P5 or P2")
    try:
        w = int(next_token())
        h = int(next_token())
        maxval = int(next_token())
    except ValueError:
        bail(pos, "non-integer header field")
    if w <= 0 or h <= 0 or maxval <= 0 or maxval > 65535:
        bail(pos, f"invalid dimensions or maxval: {w}x{h}, {maxval}")

    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        per = 2 if maxval > 255 else 1
        need = w * h * per
        payload = blob[pos:pos + need]
        if len(payload) < need:
            bail(pos + len(payload), f"truncated payload; expected {need} bytes")
        dtype = ">u2" if per == 2 else "u1"
        data = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        tokens = blob[pos:].split()
        if len(tokens) < w * h:
            bail(len(blob), f"truncated ASCII payload; expected {w * h} samples")
        try:
            data = np.array([int(t) for t in tokens[:w * h]], dtype=np.float64)
        except ValueError:
            bail(pos, "non-integer ASCII sample")
    if data.max(initial=0) > maxval:
        bail(pos, "sample value exceeds declared maxval")
    return (data / maxval).reshape(h, w)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(rows, path) -> None:
    """Emit metric rows under the fixed header; floats keep full precision.

    Each row is a mapping with the header's field names; missing or None
    entries become empty cells.  UTF-8, LF line endings, deterministic
    input order preserved.
    """
    names = METRICS_HEADER.split(",")
    lines = [METRICS_HEADER]
    for row in rows:
        lines.append(",".join(_cell(row.get(name)) for name in names))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_manifest(config: ExperimentConfig, path, extra: Optional[dict] = None) -> None:
    """Echo the fully resolved configuration for exact replay."""
    lines = [f"{key} = {value}" for key, value in config.as_items()]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
