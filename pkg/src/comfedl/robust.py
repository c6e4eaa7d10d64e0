"""KL-regularized worst-case weighting and its log-sum-exp closed form.

Two routes compute the same number:

* :func:`minimax_value` evaluates the regularized inner objective
  ``sum r_i f_i - gamma * KL(r || uniform)`` at the maximizing weights;
* :func:`lse_value` evaluates ``gamma * log(mean(exp(f / gamma)))``.

They deliberately share no helper so that comparing them means something.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "Lemma1Report",
    "kl_to_uniform",
    "lse_value",
    "minimax_value",
    "regularized_objective",
    "softmax_weights",
    "verify_lemma1",
]

SIMPLEX_TOL = 1e-12


def _check_gamma(gamma):
    if not gamma > 0 or not np.isfinite(gamma):
        raise ValueError(f"gamma must be a finite positive number, got {gamma}")


def _check_losses(losses):
    f = np.asarray(losses, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("losses must be a nonempty 1-d vector")
    if not np.all(np.isfinite(f)):
        raise ValueError("losses must be finite")
    return f


def kl_to_uniform(r) -> float:
    """``sum r_i log(n r_i)`` with ``0 log 0 = 0``."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("r must be a nonempty 1-d vector")
    if np.any(r < 0) or abs(r.sum() - 1.0) > SIMPLEX_TOL * max(1, r.size):
        raise ValueError("r is not on the probability simplex")
    pos = r > 0
    return float(np.sum(r[pos] * np.log(r.size * r[pos])))


def softmax_weights(losses, gamma: float) -> np.ndarray:
    """Maximizing weights ``r_i proportional to exp(f_i / gamma)``."""
    _check_gamma(gamma)
    f = _check_losses(losses)
    e = np.exp((f - f.max()) / gamma)
    return e / e.sum()


def regularized_objective(r, losses, gamma: float) -> np.ndarray:
    """Inner objective ``sum r_i f_i - gamma KL(r)``; ``r`` may be a stack of simplex points (rows)."""
    r = np.asarray(r, dtype=np.float64)
    f = np.asarray(losses, dtype=np.float64)
    n = f.size
    with np.errstate(divide="ignore", invalid="ignore"):
        rlog = np.where(r > 0, r * np.log(n * r), 0.0)
    return r @ f - gamma * rlog.sum(axis=-1)


def minimax_value(losses, gamma: float) -> float:
    f = _check_losses(losses)
    r = softmax_weights(f, gamma)
    return float(r @ f - gamma * kl_to_uniform(r))


def lse_value(losses, gamma: float) -> float:
    _check_gamma(gamma)
    f = _check_losses(losses)
    return float(gamma * (logsumexp(f / gamma) - np.log(f.size)))


@dataclass
class Lemma1Report:
    passed: bool
    trials: int
    worst_gap: float
    worst_optimality_slack: float
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {
            "passed": self.passed,
            "trials": self.trials,
            "worst_gap": self.worst_gap,
            "worst_optimality_slack": self.worst_optimality_slack,
            "failures": self.failures,
        }


def _competitors(r_star, rng, random_points, perturbations):
    n = r_star.size
    pts = [rng.dirichlet(np.ones(n), size=random_points)]
    # multiplicative jitter keeps points strictly inside the simplex; mixed radii probe near and far
    scales = np.geomspace(1e-3, 1.0, perturbations)[:, None]
    q = r_star[None, :] * np.exp(scales * rng.standard_normal((perturbations, n)))
    pts.append(q / q.sum(axis=1, keepdims=True))
    # a few vertices as boundary probes
    pts.append(np.eye(n)[rng.integers(n, size=min(n, 5))])
    return np.vstack(pts)


def verify_lemma1(
    n: int | None = None,
    gamma: float | None = None,
    trials: int = 100,
    rng: np.random.Generator | None = None,
    losses=None,
    ns=None,
    gammas=None,
    random_points: int = 200,
    perturbations: int = 50,
    rtol: float = 1e-9,
) -> Lemma1Report:
    """Compare both routes on random losses in ``[-10, 10]^n`` and confirm the softmax weights win the inner max.

    Pass ``ns``/``gammas`` sequences to draw ``n`` and ``gamma`` per trial,
    or ``losses`` to check one fixed vector.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    worst_gap = 0.0
    worst_slack = -np.inf
    failures = []
    for k in range(trials):
        nk = int(rng.choice(ns)) if ns is not None else n
        gk = float(rng.choice(gammas)) if gammas is not None else gamma
        f = np.asarray(losses, dtype=np.float64) if losses is not None else rng.uniform(-10, 10, size=nk)
        a = minimax_value(f, gk)
        b = lse_value(f, gk)
        scale = max(1.0, abs(b))
        gap = abs(a - b) / scale
        worst_gap = max(worst_gap, gap)
        r_star = softmax_weights(f, gk)
        best = regularized_objective(r_star, f, gk)
        others = regularized_objective(_competitors(r_star, rng, random_points, perturbations), f, gk)
        slack = float(others.max() - best) / scale
        worst_slack = max(worst_slack, slack)
        if gap > rtol or slack > 1e-12:
            failures.append({"trial": k, "n": int(f.size), "gamma": gk, "gap": gap, "slack": slack,
                             "losses": f.tolist()})
    return Lemma1Report(not failures, trials, float(worst_gap), float(worst_slack), failures)
