"""Ground-truth machinery kept apart from the federated loop.

Finite differences, a Monte-Carlo probe of the local estimator's bias, plain
full-batch gradient descent on the composite objective, smoothness-constant
estimation, and the log-log slope fit used for rate checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import SmoothnessEstimate, derive_stream, update_smoothness
from .runtime import ExperimentConfig, RunResult, run_comfedl
from .tasks import CompositionTask, Samples, client_grad_estimator

__all__ = [
    "BiasProbe",
    "GradCheckReport",
    "Trajectory",
    "best_objective",
    "check_task_gradients",
    "deviation_bound",
    "estimate_smoothness",
    "finite_diff_grad",
    "grad_check",
    "mc_bias_probe",
    "rate_experiment",
    "rate_fit",
    "reference_composition_gd",
    "remark1_config",
    "theorem1_bound",
]


def finite_diff_grad(objective: Callable[[np.ndarray], float], w, h: float = 1e-6) -> np.ndarray:
    """Central differences ``(F(w + h e_j) - F(w - h e_j)) / 2h``."""
    if not h > 0:
        raise ValueError(f"h must be > 0, got {h}")
    w = np.asarray(w, dtype=np.float64)
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        fp, fm = objective(w + e), objective(w - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite objective while differencing coordinate {j}")
        g[j] = (fp - fm) / (2 * h)
    return g


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    h: float

    def merge(self, other: "GradCheckReport") -> "GradCheckReport":
        return self if self.max_rel_error >= other.max_rel_error else other

    def to_dict(self):
        return {"max_rel_error": self.max_rel_error, "worst_index": self.worst_index, "h": self.h}


def grad_check(analytic, objective, w, h: float = 1e-6) -> GradCheckReport:
    fd = finite_diff_grad(objective, w, h)
    analytic = np.asarray(analytic, dtype=np.float64)
    diff = analytic - fd
    rel = float(np.linalg.norm(diff) / max(1.0, np.linalg.norm(fd)))
    return GradCheckReport(rel, int(np.argmax(np.abs(diff))) if diff.size else -1, h)


def check_task_gradients(task: CompositionTask, points: int = 20, rng=None, h: float = 1e-6,
                         radius: float = 1.0) -> GradCheckReport:
    """Full-batch estimator of a random client against finite differences of that client's objective."""
    rng = np.random.default_rng(0) if rng is None else rng
    report = GradCheckReport(0.0, -1, h)
    for _ in range(points):
        i = int(rng.integers(task.n))
        w = radius * rng.standard_normal(task.d) / math.sqrt(task.d)
        u = client_grad_estimator(task, i, w, None, None)
        report = report.merge(grad_check(u, lambda v: task.client_objective(i, v), w, h))
    return report


# ---------------------------------------------------------------------------

@dataclass
class BiasProbe:
    mean: np.ndarray
    full_gradient: np.ndarray
    deviation: float
    mc_band: float

    @property
    def inside_band(self) -> bool:
        return self.deviation <= self.mc_band


def mc_bias_probe(task: CompositionTask, i: int, w, b: int | None, b1: int | None, reps: int = 1000,
                  rng=None) -> BiasProbe:
    """Average ``reps`` independent estimator draws and measure the distance to the exact client gradient.

    ``mc_band`` is three standard errors of the Monte-Carlo mean (Euclidean
    norm), the distance an unbiased estimator stays within almost always.
    """
    if reps < 1000:
        raise ValueError(f"reps must be >= 1000, got {reps}")
    rng = np.random.default_rng(0) if rng is None else rng
    shard = task.shards[i]
    draws = np.empty((reps, task.d))
    for k in range(reps):
        ib = None if b is None else shard.inner.take(rng.integers(0, len(shard.inner), size=b))
        ob = None if b1 is None else shard.outer.take(rng.integers(0, len(shard.outer), size=b1))
        draws[k] = client_grad_estimator(task, i, w, ib, ob)
    mean = draws.mean(axis=0)
    full = task.client_gradient(i, w)
    band = 3.0 * math.sqrt(draws.var(axis=0, ddof=1).sum() / reps)
    return BiasProbe(mean, full, float(np.linalg.norm(mean - full)), band)


# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    w: np.ndarray            # (T + 1, d)
    objective: np.ndarray    # (T + 1,)
    grad_norm: np.ndarray    # (T + 1,)
    diverged: bool = False


def _composite_gradient(task: CompositionTask, w) -> np.ndarray:
    # explicit Jacobians: a different code path from the runtime's vector-Jacobian products
    total = np.zeros(task.d)
    for i in range(task.n):
        shard = task.shards[i]
        y = task.inner[i].value(w, shard.inner)
        J = task.inner[i].jacobian(w, shard.inner)
        total += J.T @ task.outer[i].grad(y, shard.outer)
    return total / task.n


def reference_composition_gd(task: CompositionTask, w0, eta: float, T: int) -> Trajectory:
    """``T`` steps of exact gradient descent on the full composite objective."""
    w = np.array(w0, dtype=np.float64)
    ws, objs, norms = [w.copy()], [], []
    diverged = False
    for t in range(T + 1):
        g = _composite_gradient(task, w)
        with np.errstate(over="ignore"):
            objs.append(task.full_objective(w))
        norms.append(float(np.linalg.norm(g)))
        if not np.isfinite(objs[-1]) or objs[-1] > 1e12:
            diverged = True
            break
        if t == T:
            break
        w = w - eta * g
        ws.append(w.copy())
    return Trajectory(np.array(ws), np.array(objs), np.array(norms), diverged)


# ---------------------------------------------------------------------------

def rate_fit(T, values, min_points: int = 10, min_decades: float = 2.0) -> tuple[float, float]:
    """Least-squares ``(slope, intercept)`` of ``log(values)`` against ``log(T)``."""
    T = np.asarray(T, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if T.shape != v.shape or T.ndim != 1:
        raise ValueError("T and values must be 1-d and of equal length")
    if T.size < min_points:
        raise ValueError(f"need at least {min_points} points, got {T.size}")
    if np.any(T <= 0) or np.any(v <= 0):
        raise ValueError("T and values must be positive for a log-log fit")
    if math.log10(T.max() / T.min()) < min_decades - 1e-9:
        raise ValueError(f"T must span at least {min_decades} decades")
    slope, intercept = np.polyfit(np.log(T), np.log(v), 1)
    return float(slope), float(intercept)


def remark1_config(T: int, tau: int, n: int, m: int | None = None, alpha1: float = 0.5,
                   alpha2: float = 1.0, alpha3: float = 1.0, batch_scale: float = 0.01,
                   max_batch: int | None = None, seed: int = 0, gamma: float = 1.0) -> ExperimentConfig:
    """Config with ``eta = T^-alpha1`` and batches growing like ``batch_scale * T^alpha``.

    Batches are capped at ``max_batch`` (the smallest shard) since they are
    drawn from finite shards.
    """
    def batch(alpha):
        size = max(1, int(math.ceil(batch_scale * T ** alpha)))
        return size if max_batch is None else min(size, max_batch)

    S = max(1, T // tau)
    return ExperimentConfig(n=n, m=m, tau=tau, S=S, eta=T ** -alpha1, b=batch(alpha2), b1=batch(alpha3),
                            gamma=gamma, seed=seed)


def rate_experiment(task: CompositionTask, Ts: Sequence[int], tau: int = 2, seeds: Sequence[int] = (0,),
                    m: int | None = None, on_result=None, **schedule) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For each horizon ``T`` run with the decaying schedule and report the running average
    and the running minimum of the squared full-gradient norm (seed means).

    ``on_result(T, seed, result)`` is called after every run.
    """
    max_batch = min(min(task.shard_sizes()), min(len(sh.outer) for sh in task.shards))
    avg, best = [], []
    for T in Ts:
        a, b = [], []
        for seed in seeds:
            cfg = remark1_config(int(T), tau, task.n, m=m, seed=seed, max_batch=max_batch,
                                 gamma=task.gamma or 1.0, **schedule)
            res = run_comfedl(task, cfg)
            if on_result is not None:
                on_result(int(T), seed, res)
            if res.diverged:
                raise FloatingPointError(f"run diverged at T={T}: {res.message}")
            sq = np.array([r.grad_norm ** 2 for r in res.records])
            a.append(sq.mean())
            b.append(sq.min())
        avg.append(np.mean(a))
        best.append(np.mean(b))
    return np.asarray(Ts, dtype=np.float64), np.array(avg), np.array(best)


# ---------------------------------------------------------------------------

def estimate_smoothness(task: CompositionTask, points, rng=None, batch: int = 1, pairs: int = 5,
                        radius: float = 1e-2) -> SmoothnessEstimate:
    """Running maxima of the boundedness, smoothness and variance quantities around ``points``.

    Lipschitz ratios use pairs ``(w, w + delta)`` with ``|delta| = radius``
    evaluated on the same single-sample batch.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    est = SmoothnessEstimate()
    for w in points:
        w = np.asarray(w, dtype=np.float64)
        g_full = task.full_gradient(w)
        for i in range(task.n):
            shard = task.shards[i]
            inner, outer = task.inner[i], task.outer[i]
            y_full = inner.value(w, shard.inner)
            J_full = inner.jacobian(w, shard.inner)
            gy_full = outer.grad(y_full, shard.outer)
            for _ in range(pairs):
                ib = shard.inner.take(rng.integers(0, len(shard.inner), size=batch))
                ob = shard.outer.take(rng.integers(0, len(shard.outer), size=batch))
                y = inner.value(w, ib)
                J = inner.jacobian(w, ib)
                gy = outer.grad(y, ob)
                est = update_smoothness(est, "G_f", np.linalg.norm(J))
                est = update_smoothness(est, "G_g", np.linalg.norm(gy))
                est = update_smoothness(est, "sigma", max(np.linalg.norm(J - J_full),
                                                          np.linalg.norm(y - y_full),
                                                          np.linalg.norm(outer.grad(y_full, ob) - gy_full)))
                delta = rng.standard_normal(task.d)
                delta *= radius / np.linalg.norm(delta)
                est = update_smoothness(est, "L_f", np.linalg.norm(inner.jacobian(w + delta, ib) - J) / radius)
                dy = rng.standard_normal(task.p)
                dy *= radius / np.linalg.norm(dy)
                est = update_smoothness(est, "L_g", np.linalg.norm(outer.grad(y_full + dy, ob)
                                                                   - outer.grad(y_full, ob)) / radius)
        delta = rng.standard_normal(task.d)
        delta *= radius / np.linalg.norm(delta)
        est = update_smoothness(est, "L", np.linalg.norm(task.full_gradient(w + delta) - g_full) / radius)
    return est


def best_objective(result: RunResult) -> float:
    """Smallest full objective seen along a run, the empirical stand-in for ``F*``."""
    return float(min(r.objective for r in result.records)) if result.records else math.inf


def deviation_bound(est: SmoothnessEstimate, tau: int, eta: float, b: int, b1: int) -> float:
    """Upper bound on ``E|u_bar - U0|^2`` from drift, both batch sizes and the estimated constants."""
    e = est
    drift = 5 * (e.G_g**2 * e.L_f**2 + e.G_f**4 * e.L_g**2) * tau**2 * eta**2 * e.G_g**2 * e.G_f**2
    return drift + 5 * e.G_f**2 * e.sigma**2 / b1 + 5 * e.G_g**2 * e.sigma**2 / b \
        + 5 * e.L_g**2 * e.G_f**2 * e.sigma**2 / b


def theorem1_bound(gap: float, T: int, eta: float, tau: int, b: int, b1: int,
                   est: SmoothnessEstimate) -> float:
    """Bound on the running average of ``|grad F(w_s)|^2``; the bracket is a sum of the four
    deviation terms (the summed form that the smoothness argument produces)."""
    e = est
    H = math.sqrt(e.G_g**2 * e.L_f**2 + e.G_f**4 * e.L_g**2)
    bracket = (math.sqrt(5) * H * tau * e.G_g * e.G_f * eta
               + math.sqrt(5) * e.G_f * e.sigma / math.sqrt(b1)
               + math.sqrt(5) * e.G_g * e.sigma / math.sqrt(b)
               + math.sqrt(5) * e.L_g * e.G_f * e.sigma / math.sqrt(b))
    return gap / (T * eta) + e.G_f * e.G_g * bracket + e.L * tau * eta * e.G_g**2 * e.G_f**2 \
        + 0.5 * e.L * eta * e.G_f**2 * e.G_g**2
