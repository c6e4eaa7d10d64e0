import json
import struct
from dataclasses import asdict, replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from comfedl.runtime import ConfigError, RoundRecord, run
from comfedl.telemetry import (
    CheckpointError,
    MetricsSink,
    apply_overrides,
    build_task,
    checkpoint_model,
    config_hash,
    config_to_text,
    load_checkpoint,
    parse_config,
    read_metrics,
    write_round,
)

MINIMAL = """
[experiment]
seed = 3

[task]
kind = quadratic-dro
"""

FULL = """
[experiment]
seed = 1
n = 4
m = 2
S = 12

[task]
kind = quadratic-dro
samples = 30
noise = 0.2

[algorithm]
name = comfedl
tau = 3
eta = 0.02
b = 5
b1 = 4
gamma = 0.5
"""


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert (cfg.tau, cfg.gamma, cfg.eta) == (5, 0.2, 0.01)
    assert cfg.seed == 3 and cfg.task == {"kind": "quadratic-dro"}
    assert cfg.algorithm == "comfedl"


def test_full_config():
    cfg = parse_config(FULL)
    assert (cfg.n, cfg.m, cfg.S, cfg.tau, cfg.b, cfg.b1) == (4, 2, 12, 3, 5, 4)
    assert cfg.task == {"kind": "quadratic-dro", "samples": 30, "noise": 0.2}


def test_m_larger_than_n_names_m():
    with pytest.raises(ConfigError, match="m") as err:
        parse_config("[experiment]\nn = 10\nm = 11\n[task]\nkind = quadratic-dro\n")
    assert err.value.field == "m"


def test_negative_gamma_names_gamma():
    with pytest.raises(ConfigError, match="gamma") as err:
        parse_config(MINIMAL + "[algorithm]\ngamma = -1\n")
    assert err.value.field == "gamma"


@pytest.mark.parametrize("text,field", [
    (MINIMAL + "[extra]\nx = 1\n", "extra"),
    (MINIMAL + "[algorithm]\nlr = 0.1\n", "algorithm.lr"),
    ("[experiment]\nseed = 1\n", "task"),
    ("[task]\nkind = mnist\n", "task.kind"),
    ("[task]\nkind = quadratic-dro\nrho = 0.3\n", "task.rho"),
    ("[task]\nkind = quadratic-dro\nsamples = 2.5\n", "task.samples"),
    (MINIMAL + "[algorithm]\ntau = 2.5\n", "tau"),
    (MINIMAL + "[algorithm]\neta = fast\n", "eta"),
    ("[experiment\n", "config"),
])
def test_invalid_configs(text, field):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.field == field


def test_full_batches_spelled_out():
    cfg = parse_config(MINIMAL + "[algorithm]\nb = full\nb1 = none\n")
    assert cfg.b is None and cfg.b1 is None


def test_overrides():
    cfg = parse_config(FULL)
    new = apply_overrides(cfg, ["eta=0.05", "algorithm.tau=4", "task.noise=0.1", "samples=40", "seed=9"])
    assert (new.eta, new.tau, new.seed) == (0.05, 4, 9)
    assert new.task["noise"] == 0.1 and new.task["samples"] == 40
    assert cfg.eta == 0.02  # original untouched
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["eta"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["m=9"])


def test_config_text_round_trip():
    cfg = apply_overrides(parse_config(FULL), ["eta=0.1234567890123"])
    assert parse_config(config_to_text(cfg)) == cfg


def test_config_hash_tracks_content():
    cfg = parse_config(FULL)
    assert len(config_hash(cfg)) == 8
    assert config_hash(cfg) == config_hash(parse_config(FULL))
    assert config_hash(cfg) != config_hash(replace(cfg, seed=2))


def test_build_task_is_deterministic():
    cfg = parse_config(FULL)
    a, b = build_task(cfg), build_task(cfg)
    assert a.n == 4 and a.shard_sizes() == [30] * 4
    assert a.full_objective(np.ones(5)) == b.full_objective(np.ones(5))
    data_seed = apply_overrides(cfg, ["task.data_seed=7"])
    assert build_task(data_seed).full_objective(np.ones(5)) != a.full_objective(np.ones(5))


# -- metrics ----------------------------------------------------------------------------------

def sample_records(n=5):
    cfg = parse_config(FULL)
    return run(build_task(cfg), replace(cfg, S=n)).records


def test_csv_header_matches_record_fields(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsSink(path, timing=True) as sink:
        pass
    assert path.read_text().strip().split(",") == RoundRecord.field_names()
    with MetricsSink(path) as sink:
        assert "wall_clock" not in sink.columns


@pytest.mark.parametrize("suffix", [".csv", ".jsonl"])
def test_metrics_round_trip(tmp_path, suffix):
    records = sample_records()
    path = tmp_path / f"m{suffix}"
    with MetricsSink(path, timing=True) as sink:
        for r in records:
            write_round(sink, r)
    lines = path.read_text().splitlines()
    assert len(lines) == len(records) + (suffix == ".csv")
    assert [asdict(r) for r in read_metrics(path)] == [asdict(r) for r in records]


def test_jsonl_lines_are_json(tmp_path):
    path = tmp_path / "m.jsonl"
    with MetricsSink(path) as sink:
        for r in sample_records(3):
            sink.write(r)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [row["round"] for row in rows] == [0, 1, 2]


def test_metrics_flushed_per_record(tmp_path):
    path = tmp_path / "m.csv"
    sink = MetricsSink(path)
    sink.write(sample_records(1)[0])
    assert len(path.read_text().splitlines()) == 2  # visible before close
    sink.close()


def test_metrics_files_identical_on_replay(tmp_path):
    for name in ("a.csv", "b.csv"):
        with MetricsSink(tmp_path / name) as sink:
            for r in sample_records():
                sink.write(r)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(finite, finite, st.lists(finite, min_size=1, max_size=5), finite)
def test_float_serialization_round_trip(tmp_path_factory, objective, grad, losses, drift):
    rec = RoundRecord(0, objective, losses, max(losses), [1.0 / len(losses)] * len(losses), abs(grad),
                      abs(drift), 0.0, 1.0, 0.0, 0, list(range(len(losses))))
    path = tmp_path_factory.mktemp("rt") / "m.csv"
    with MetricsSink(path) as sink:
        sink.write(rec)
    back = read_metrics(path)[0]
    assert asdict(back) == asdict(rec)


def test_unknown_metrics_format(tmp_path):
    with pytest.raises(ValueError):
        MetricsSink(tmp_path / "m.csv", fmt="parquet")


# -- checkpoints ------------------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(0, 40), elements=finite))
def test_checkpoint_round_trip(tmp_path_factory, w):
    path = tmp_path_factory.mktemp("ck") / "w.ckpt"
    h = bytes(range(8))
    checkpoint_model(path, w, h)
    back, h2 = load_checkpoint(path, expected_hash=h)
    assert back.tobytes() == w.tobytes() and h2 == h


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "w.ckpt"
    checkpoint_model(path, [1.5, -2.0], b"\x01" * 8)
    data = path.read_bytes()
    assert struct.unpack("<Q", data[:8])[0] == 2
    assert struct.unpack("<2d", data[8:24]) == (1.5, -2.0)
    assert data[24:] == b"\x01" * 8


def test_checkpoint_empty_vector(tmp_path):
    path = tmp_path / "w.ckpt"
    checkpoint_model(path, np.zeros(0), b"\x00" * 8)
    w, _ = load_checkpoint(path)
    assert w.shape == (0,)


def test_checkpoint_hash_mismatch(tmp_path):
    cfg = parse_config(FULL)
    path = tmp_path / "w.ckpt"
    checkpoint_model(path, np.ones(3), config_hash(cfg))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(path, expected_hash=config_hash(replace(cfg, eta=0.5)))


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "w.ckpt"
    checkpoint_model(path, np.ones(3), b"\x00" * 8)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_inline_comments_are_ignored():
    cfg = parse_config("[experiment]\nn = 4   ; clients\n[task]\nkind = quadratic-dro  # smooth\n")
    assert cfg.n == 4 and cfg.task == {"kind": "quadratic-dro"}


def test_metrics_sink_creates_parent_directories(tmp_path):
    path = tmp_path / "runs" / "deep" / "m.csv"
    with MetricsSink(path):
        pass
    assert path.exists()
