"""Experiment config files, per-round metrics files and model checkpoints.

Config files are INI documents with three sections::

    [experiment]
    seed = 0
    n = 10
    S = 500

    [task]
    kind = imbalanced-classification
    rho = 0.8

    [algorithm]
    name = comfedl
    tau = 5

Metrics are CSV (fixed header) or JSONL, one row per round, every float
written with 17 significant digits so files round-trip exactly and replays
are byte-identical.
"""

from __future__ import annotations

import ast
import configparser
import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .core import derive_stream
from .runtime import ConfigError, ExperimentConfig, RoundRecord
from .tasks import CompositionTask, TASK_KINDS, make_task, task_parameters

__all__ = [
    "CheckpointError",
    "MetricsSink",
    "apply_overrides",
    "build_task",
    "checkpoint_model",
    "config_hash",
    "config_to_dict",
    "config_to_text",
    "load_checkpoint",
    "parse_config",
    "read_metrics",
    "write_round",
]

# section -> {key in file: ExperimentConfig field}
_LAYOUT = {
    "experiment": {"seed": "seed", "n": "n", "m": "m", "S": "S"},
    "algorithm": {"name": "algorithm", "tau": "tau", "eta": "eta", "b": "b", "b1": "b1",
                  "gamma": "gamma", "eta_in": "eta_in"},
}
_INT_FIELDS = {"seed", "n", "m", "S", "tau", "b", "b1"}
_FLOAT_FIELDS = {"eta", "gamma", "eta_in"}
_OPTIONAL = {"m", "b", "b1", "eta_in"}


def _scalar(text: str):
    t = text.strip()
    if t.lower() in ("none", "full", "null"):
        return None
    try:
        return ast.literal_eval(t)
    except (ValueError, SyntaxError):
        return t


def _coerce(field: str, raw):
    value = _scalar(raw) if isinstance(raw, str) else raw
    if value is None:
        if field in _OPTIONAL:
            return None
        raise ConfigError(field, "may not be empty")
    try:
        if field in _INT_FIELDS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if field in _FLOAT_FIELDS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(field, f"cannot interpret {raw!r}") from None
    return str(value)


def _check_task_params(params: dict) -> dict:
    kind = params.get("kind")
    if kind is None:
        raise ConfigError("task.kind", "missing")
    if kind not in TASK_KINDS:
        raise ConfigError("task.kind", f"unknown kind {kind!r}; choose from {sorted(TASK_KINDS)}")
    allowed = task_parameters(kind)
    out = {"kind": kind}
    for key, raw in params.items():
        if key == "kind":
            continue
        if key == "data_seed":
            out[key] = _coerce("seed", raw)
            continue
        if key not in allowed:
            raise ConfigError(f"task.{key}", f"unknown key for task kind {kind!r}")
        value = _scalar(raw) if isinstance(raw, str) else raw
        default = allowed[key]
        if isinstance(default, bool) or default is None or value is None:
            out[key] = value
        elif isinstance(default, int) and not isinstance(value, str):
            if float(value) != int(value):
                raise ConfigError(f"task.{key}", f"expected an integer, got {raw!r}")
            out[key] = int(value)
        elif isinstance(default, float) and not isinstance(value, str):
            out[key] = float(value)
        elif type(value) is not type(default):
            raise ConfigError(f"task.{key}", f"expected {type(default).__name__}, got {raw!r}")
        else:
            out[key] = value
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate an experiment config; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    kwargs = {}
    for section in parser.sections():
        if section == "task":
            continue
        if section not in _LAYOUT:
            raise ConfigError(section, "unknown section")
        for key, raw in parser.items(section):
            if key not in _LAYOUT[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            name = _LAYOUT[section][key]
            kwargs[name] = _coerce(name, raw)
    if not parser.has_section("task"):
        raise ConfigError("task", "missing section")
    kwargs["task"] = _check_task_params(dict(parser.items("task")))
    return ExperimentConfig(**kwargs)


def _field_for(key: str) -> tuple[str, str]:
    # "eta" / "algorithm.eta" / "name" -> ("cfg", field); "task.rho" / "rho" -> ("task", key)
    section, _, name = key.rpartition(".")
    if section == "task":
        return "task", name
    for sec, mapping in _LAYOUT.items():
        if section in ("", sec) and name in mapping:
            return "cfg", mapping[name]
    if section == "" and name in {f.name for f in fields(ExperimentConfig)} - {"task"}:
        return "cfg", name
    if section == "":
        return "task", name
    raise ConfigError(key, "unknown override key")


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``key=value`` strings; bare keys resolve to config fields first, then task parameters."""
    changes, task = {}, dict(cfg.task)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(item, "override must look like key=value")
        where, name = _field_for(key.strip())
        if where == "cfg":
            changes[name] = _coerce(name, raw)
        else:
            task[name] = raw
    if task != cfg.task:
        changes["task"] = _check_task_params(task)
    return replace(cfg, **changes) if changes else cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["task"] = dict(sorted(cfg.task.items()))
    return d


def config_to_text(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, mapping in _LAYOUT.items():
        parser[section] = {key: _fmt_cfg(getattr(cfg, name)) for key, name in mapping.items()}
    parser["task"] = {k: _fmt_cfg(v) for k, v in cfg.task.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _fmt_cfg(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def config_hash(cfg: ExperimentConfig) -> bytes:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, default=_fmt_cfg).encode("utf-8")
    return hashlib.sha256(blob).digest()[:8]


def build_task(cfg: ExperimentConfig) -> CompositionTask:
    """Generate the task named in ``cfg.task``; data come from a stream keyed on the data seed."""
    params = dict(cfg.task)
    kind = params.pop("kind")
    data_seed = params.pop("data_seed", cfg.seed)
    rng = derive_stream(data_seed, 0, 0, 0, "task-data")
    try:
        return make_task(kind, cfg.n, cfg.gamma, rng, eta_in=cfg.eta_in, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError("task", str(exc)) from None


# ---------------------------------------------------------------------------
# metrics

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _json_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_json_value(x) for x in v) + "]"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    x = float(v)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


class MetricsSink:
    """Append-only per-round writer (CSV or JSONL), flushed after every record.

    ``timing=False`` leaves the wall-clock column out so files depend only on
    the config.
    """

    def __init__(self, path, fmt: str | None = None, timing: bool = False):
        self.path = Path(path)
        self.format = (fmt or ("jsonl" if self.path.suffix in (".jsonl", ".json") else "csv")).lower()
        if self.format not in ("csv", "jsonl"):
            raise ValueError(f"unknown metrics format {self.format!r}")
        self.columns = RoundRecord.field_names()
        if not timing:
            self.columns.remove("wall_clock")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        if self.format == "csv":
            self._fh.write(",".join(self.columns) + "\n")
            self._fh.flush()

    def write(self, record: RoundRecord):
        if self.format == "csv":
            cells = []
            for name in self.columns:
                v = getattr(record, name)
                cells.append(";".join(_fmt(x) for x in v) if isinstance(v, list) else _fmt(v))
            line = ",".join(cells)
        else:
            line = "{" + ",".join(f'"{name}":{_json_value(getattr(record, name))}'
                                  for name in self.columns) + "}"
        self._fh.write(line + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_round(sink: MetricsSink, record: RoundRecord) -> None:
    sink.write(record)


_LIST_INT = {"participants"}
_LIST_FLOAT = {"client_losses", "weights"}
_INT = {"round", "clamp_events"}


def _record_from(mapping: dict) -> RoundRecord:
    kw = {}
    for name in RoundRecord.field_names():
        if name not in mapping:
            continue
        v = mapping[name]
        if name in _LIST_INT:
            kw[name] = [int(x) for x in (v.split(";") if isinstance(v, str) and v else v or [])]
        elif name in _LIST_FLOAT:
            kw[name] = [float(x) for x in (v.split(";") if isinstance(v, str) and v else v or [])]
        elif name in _INT:
            kw[name] = int(v)
        else:
            kw[name] = float(v)
    return RoundRecord(**kw)


def read_metrics(path) -> list[RoundRecord]:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        if path.suffix in (".jsonl", ".json"):
            return [_record_from(json.loads(line)) for line in fh if line.strip()]
        return [_record_from(row) for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# checkpoints: <u64 length> <length doubles> <8-byte config hash>, little-endian

class CheckpointError(ValueError):
    pass


def checkpoint_model(path, w, cfg_hash: bytes) -> None:
    w = np.ascontiguousarray(w, dtype="<f8")
    if w.ndim != 1:
        raise ValueError("checkpoints hold 1-d parameter vectors")
    if len(cfg_hash) != 8:
        raise ValueError("config hash must be 8 bytes")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", w.size))
        fh.write(w.tobytes())
        fh.write(bytes(cfg_hash))


def load_checkpoint(path, expected_hash: bytes | None = None) -> tuple[np.ndarray, bytes]:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated checkpoint")
    (size,) = struct.unpack_from("<Q", data, 0)
    if len(data) != 8 + 8 * size + 8:
        raise CheckpointError(f"{path}: length field says {size} values, file has {len(data)} bytes")
    w = np.frombuffer(data, dtype="<f8", count=size, offset=8).astype(np.float64)
    h = data[8 + 8 * size:]
    if expected_hash is not None and h != bytes(expected_hash):
        raise CheckpointError(f"{path}: config hash {h.hex()} does not match expected {bytes(expected_hash).hex()}")
    return w, h
