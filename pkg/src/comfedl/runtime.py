"""Server/client loop for compositional local SGD and the sample-weighted FedAvg baseline."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

from .core import SmoothnessEstimate, derive_stream, update_smoothness
from .robust import softmax_weights
from .tasks import CompositionTask, Samples, estimate_step

__all__ = [
    "ALGORITHMS",
    "ConfigError",
    "DIVERGENCE_LIMIT",
    "DriftReport",
    "ExperimentConfig",
    "LocalResult",
    "RoundRecord",
    "RunResult",
    "drift_check",
    "fedavg_weights",
    "local_round",
    "run",
    "run_comfedl",
    "run_fedavg",
    "sample_clients",
    "server_average",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("comfedl", "fedavg", "comfedl-damaml")
DIVERGENCE_LIMIT = 1e12
DRIFT_SLACK = 0.05


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    """Hyperparameters of one run.  ``b``/``b1`` of ``None`` mean full shards."""

    n: int = 10
    m: int | None = None
    tau: int = 5
    S: int = 100
    eta: float = 0.01
    b: int | None = 10
    b1: int | None = 10
    gamma: float = 0.2
    eta_in: float | None = None
    seed: int = 0
    algorithm: str = "comfedl"
    task: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m is None:
            object.__setattr__(self, "m", self.n)
        self.validate()

    def validate(self):
        if self.n < 1:
            raise ConfigError("n", f"must be >= 1, got {self.n}")
        if not 1 <= self.m <= self.n:
            raise ConfigError("m", f"must satisfy 1 <= m <= n={self.n}, got {self.m}")
        if self.tau < 1:
            raise ConfigError("tau", f"must be >= 1, got {self.tau}")
        if self.S < 0:
            raise ConfigError("S", f"must be >= 0, got {self.S}")
        if not self.eta >= 0 or not np.isfinite(self.eta):
            raise ConfigError("eta", f"must be >= 0, got {self.eta}")
        for name in ("b", "b1"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(name, f"must be >= 1 or full, got {v}")
        if not self.gamma > 0 or not np.isfinite(self.gamma):
            raise ConfigError("gamma", f"must be > 0, got {self.gamma}")
        if self.eta_in is not None and not self.eta_in > 0:
            raise ConfigError("eta_in", f"must be > 0, got {self.eta_in}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.algorithm == "comfedl-damaml" and self.eta_in is None:
            raise ConfigError("eta_in", "required for comfedl-damaml")
        if self.seed < 0:
            raise ConfigError("seed", f"must be >= 0, got {self.seed}")

    def check_task(self, task: CompositionTask):
        if task.n != self.n:
            raise ConfigError("n", f"config says {self.n} clients, task has {task.n}")
        if self.b is not None and self.b > min(task.shard_sizes()):
            raise ConfigError("b", f"{self.b} exceeds the smallest inner shard ({min(task.shard_sizes())})")
        outer_min = min(len(sh.outer) for sh in task.shards)
        if self.b1 is not None and self.b1 > outer_min:
            raise ConfigError("b1", f"{self.b1} exceeds the smallest outer shard ({outer_min})")
        if self.algorithm == "comfedl-damaml" and not task.is_maml:
            raise ConfigError("algorithm", "comfedl-damaml needs a MAML task")


@dataclass
class RoundRecord:
    """Diagnostics at the round-start model ``w_s`` plus drift observed during the round."""

    round: int
    objective: float
    client_losses: list[float]
    worst_loss: float
    weights: list[float]
    grad_norm: float
    max_drift: float
    max_avg_drift: float
    drift_bound: float
    deviation: float
    clamp_events: int
    participants: list[int]
    wall_clock: float = 0.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class RunResult:
    records: list[RoundRecord]
    w: np.ndarray
    estimate: SmoothnessEstimate
    diverged: bool = False
    message: str = ""

    @property
    def final(self) -> RoundRecord | None:
        return self.records[-1] if self.records else None


# ---------------------------------------------------------------------------

def sample_clients(s: int, n: int, m: int, seed: int) -> list[int]:
    """Uniform ``m``-subset of ``range(n)`` without replacement, sorted ascending."""
    if not 1 <= m <= n:
        raise ConfigError("m", f"must satisfy 1 <= m <= n={n}, got {m}")
    if m == n:
        return list(range(n))
    rng = derive_stream(seed, s, 0, 0, "client-sample")
    return sorted(int(i) for i in rng.choice(n, size=m, replace=False))


def _draw(samples: Samples, size: int | None, rng) -> Samples | None:
    if size is None:
        return None
    return samples.take(rng.integers(0, len(samples), size=size))


class NonFiniteUpdate(FloatingPointError):
    pass


@dataclass
class LocalResult:
    w: np.ndarray
    drifts: list[float]
    directions: list[np.ndarray]
    outer_norms: list[float]
    jac_norms: list[float]
    clamps: int


def local_round(task: CompositionTask, i: int, w_start, cfg: ExperimentConfig, s: int = 0,
                plain: bool = False) -> LocalResult:
    """``tau`` local steps of client ``i`` from ``w_start``.

    Each step draws an inner batch of size ``b`` (shared by the value and the
    Jacobian) and an outer batch of size ``b1``, both with replacement, from
    streams keyed on ``(seed, s, i, t)``.  ``plain`` switches to ordinary SGD
    on the client's base loss (the FedAvg local solver).
    """
    w = np.array(w_start, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NonFiniteUpdate(f"client {i}: non-finite starting point")
    shard = task.shards[i]
    res = LocalResult(w, [], [], [], [], 0)
    for t in range(cfg.tau):
        ib = _draw(shard.inner, cfg.b, derive_stream(cfg.seed, s, i, t, "inner-batch"))
        if plain:
            S = shard.inner if ib is None else ib
            u = task.inner[i].loss.grad(w, S)
            res.jac_norms.append(float(np.linalg.norm(u)))
            res.outer_norms.append(1.0)
        else:
            ob = _draw(shard.outer, cfg.b1, derive_stream(cfg.seed, s, i, t, "outer-batch"))
            step = estimate_step(task, i, w, ib, ob)
            u = step.u
            res.clamps += step.clamped
            res.outer_norms.append(step.outer_grad_norm)
            res.jac_norms.append(step.jac_norm)
        if not np.all(np.isfinite(u)):
            raise NonFiniteUpdate(f"client {i}, round {s}, step {t}: non-finite direction "
                                  f"({res.clamps} clamp events so far)")
        res.directions.append(u)
        w = w - cfg.eta * u
        res.drifts.append(float(np.sum((w - w_start) ** 2)))
    res.w = w
    return res


def server_average(models, weights=None) -> np.ndarray:
    """Plain mean of ``models`` (or a weighted mean).

    Each coordinate is reduced as ``pivot + fsum(offsets)`` with the column
    minimum as pivot; ``math.fsum`` is correctly rounded, so the result is
    bitwise independent of the order the models arrive in, and identical
    models average to themselves exactly.
    """
    if len(models) == 0:
        raise ValueError("cannot average an empty list of models")
    stacked = np.array([np.asarray(w, dtype=np.float64) for w in models])
    if stacked.ndim != 2:
        raise ValueError("models must be 1-d vectors sharing one length")
    pivot = stacked.min(axis=0)
    offsets = stacked - pivot
    if weights is None:
        return pivot + np.array([math.fsum(col) for col in offsets.T]) / len(models)
    r = np.asarray(weights, dtype=np.float64)
    if r.shape != (len(models),):
        raise ValueError("need one weight per model")
    return pivot + np.array([math.fsum(col) for col in (r[:, None] * offsets).T])


def fedavg_weights(task: CompositionTask, clients) -> list[float]:
    sizes = np.array([len(task.shards[i].inner) for i in clients], dtype=np.float64)
    return list(sizes / sizes.sum())


@dataclass
class _Diagnostics:
    objective: float
    losses: np.ndarray
    grad: np.ndarray
    client_grads: list


def _diagnose(task: CompositionTask, w) -> _Diagnostics:
    losses, objs, grads = [], [], []
    for i in range(task.n):
        y = task.inner_value(i, w)
        outer = task.outer[i]
        S = task.shards[i].outer
        losses.append(outer.loss(y, S))
        with np.errstate(over="ignore"):  # an overflowing objective is reported as divergence
            objs.append(outer.value(y, S))
        grads.append(task.inner_vjp(i, w, None, outer.grad(y, S)))
    return _Diagnostics(float(np.mean(objs)), np.array(losses), np.mean(grads, axis=0), grads)


def _run(task: CompositionTask, cfg: ExperimentConfig, w0, plain: bool, parallel: bool,
         timing: bool, callback) -> RunResult:
    cfg.check_task(task)
    w = np.zeros(task.d) if w0 is None else np.array(w0, dtype=np.float64)
    if w.shape != (task.d,):
        raise ConfigError("w0", f"expected shape ({task.d},), got {w.shape}")
    gamma = task.gamma if task.gamma is not None else cfg.gamma
    est = SmoothnessEstimate()
    records: list[RoundRecord] = []
    t0 = time.perf_counter()
    pool = ThreadPoolExecutor() if parallel else None
    try:
        for s in range(cfg.S):
            diag = _diagnose(task, w)
            if not np.isfinite(diag.objective) or diag.objective > DIVERGENCE_LIMIT or \
                    not np.all(np.isfinite(diag.grad)):
                return RunResult(records, w, est, True, f"objective {diag.objective:.3e} at round {s}")
            clients = sample_clients(s, cfg.n, cfg.m, cfg.seed)

            def work(i, w=w, s=s):
                return local_round(task, i, w, cfg, s, plain=plain)

            try:
                if pool is None:
                    results = [work(i) for i in clients]
                else:
                    results = list(pool.map(work, clients))
            except NonFiniteUpdate as exc:
                log.warning("aborting: %s", exc)
                return RunResult(records, w, est, True, str(exc))

            for r in results:
                for gn in r.outer_norms:
                    est = update_smoothness(est, "G_g", gn)
                for jn in r.jac_norms:
                    est = update_smoothness(est, "G_f", jn)

            models = [r.w for r in results]
            if plain:
                w_next = server_average(models, fedavg_weights(task, clients))
            else:
                w_next = server_average(models)

            # U0: exact gradient of the participants at w_s; deviation monitors |u_bar_t - U0|^2
            U0 = np.mean([diag.client_grads[i] for i in clients], axis=0)
            deviation = 0.0
            avg_drift = 0.0
            cum = np.zeros(task.d)
            for t in range(cfg.tau):
                u_bar = np.mean([r.directions[t] for r in results], axis=0)
                deviation = max(deviation, float(np.sum((u_bar - U0) ** 2)))
                cum = cum + u_bar
                avg_drift = max(avg_drift, float(np.sum((cfg.eta * cum) ** 2)))

            max_drift = max(max(r.drifts) for r in results)
            bound = (cfg.tau * cfg.eta * est.G_g * est.G_f) ** 2
            records.append(RoundRecord(
                round=s,
                objective=diag.objective,
                client_losses=[float(v) for v in diag.losses],
                worst_loss=float(diag.losses.max()),
                weights=[float(v) for v in softmax_weights(diag.losses, gamma)],
                grad_norm=float(np.linalg.norm(diag.grad)),
                max_drift=max_drift,
                max_avg_drift=avg_drift,
                drift_bound=bound,
                deviation=deviation,
                clamp_events=int(sum(r.clamps for r in results)),
                participants=list(clients),
                wall_clock=time.perf_counter() - t0 if timing else 0.0,
            ))
            if callback is not None:
                callback(records[-1])
            w = w_next
            if not np.all(np.isfinite(w)):
                return RunResult(records, w, est, True, f"non-finite model after round {s}")
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(records, w, est)


def run_comfedl(task: CompositionTask, cfg: ExperimentConfig, w0=None, parallel: bool = False,
                timing: bool = False, callback=None) -> RunResult:
    """Compositional federated learning: sampled clients run ``tau`` biased compositional
    SGD steps from the broadcast model, the server takes the unweighted mean.

    Round ``s`` of the returned records describes the broadcast model
    ``w_s``; ``RunResult.w`` is the model after the last round.
    """
    return _run(task, cfg, w0, plain=False, parallel=parallel, timing=timing, callback=callback)


def run_fedavg(task: CompositionTask, cfg: ExperimentConfig, w0=None, parallel: bool = False,
                timing: bool = False, callback=None) -> RunResult:
    """FedAvg baseline: local SGD on each client's base loss, sample-size weighted averaging."""
    return _run(task, cfg, w0, plain=True, parallel=parallel, timing=timing, callback=callback)


def run(task: CompositionTask, cfg: ExperimentConfig, **kw) -> RunResult:
    if cfg.algorithm == "fedavg":
        return run_fedavg(task, cfg, **kw)
    return run_comfedl(task, cfg, **kw)


# ---------------------------------------------------------------------------

@dataclass
class DriftReport:
    passed: bool
    worst_ratio: float
    bound: float
    violations: list[dict[str, Any]]

    def to_dict(self):
        return {"passed": self.passed, "worst_ratio": self.worst_ratio, "bound": self.bound,
                "violations": self.violations}


def drift_check(records, est: SmoothnessEstimate | None = None, cfg: ExperimentConfig | None = None,
                slack: float = DRIFT_SLACK) -> DriftReport:
    """Check every recorded squared drift against ``(tau * eta * G_g * G_f)^2 * (1 + slack)``.

    With ``est`` and ``cfg`` the bound uses the final estimates; otherwise each
    record's own running bound is used.  Both the per-client drift and the
    drift of the participants' average are checked.
    """
    violations = []
    worst = 0.0
    global_bound = None
    if est is not None and cfg is not None:
        global_bound = (cfg.tau * cfg.eta * est.G_g * est.G_f) ** 2
    for rec in records:
        bound = global_bound if global_bound is not None else rec.drift_bound
        for name in ("max_drift", "max_avg_drift"):
            value = getattr(rec, name)
            if value == 0.0:
                continue
            ratio = value / bound if bound > 0 else np.inf
            worst = max(worst, ratio)
            if ratio > 1.0 + slack:
                violations.append({"round": rec.round, "quantity": name, "value": value, "bound": bound})
    return DriftReport(not violations, float(worst), float(global_bound or 0.0), violations)
