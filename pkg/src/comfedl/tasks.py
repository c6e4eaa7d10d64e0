"""Two-level composition tasks ``F(w) = 1/n sum_i g_i(f_i(w))`` and their generators.

A task is assembled from three pieces per client:

* a :class:`ClientShard` holding the inner sample set and the outer sample set,
* an inner map (:class:`LossInner` with ``p = 1`` or :class:`MamlInner` with ``p = d``),
* an outer function (:class:`IdentityOuter`, :class:`ExpOuter` or :class:`LossOuter`).

Every derivative is analytic.  Batches are :class:`Samples` objects; the full
shard is the exact (full-batch) case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .core import DimensionError

__all__ = [
    "EXP_CLAMP",
    "TASK_KINDS",
    "BinaryLogisticLoss",
    "ClientShard",
    "CompositionTask",
    "EstimatorStep",
    "ExpOuter",
    "IdentityOuter",
    "LossInner",
    "LossOuter",
    "MamlInner",
    "QuadraticLoss",
    "Samples",
    "SoftmaxLoss",
    "SquaredLoss",
    "client_grad_estimator",
    "estimate_step",
    "label_skew_counts",
    "make_imbalanced_classification",
    "make_logistic_dro",
    "make_logistic_maml",
    "make_quadratic_dro",
    "make_quadratic_maml",
    "make_task",
    "maml_inner",
    "maml_inner_vjp",
    "task_parameters",
]

# exponent arguments above this are clamped inside the gradient estimator
EXP_CLAMP = 40.0


@dataclass(frozen=True)
class Samples:
    """A finite set of sample records: feature rows ``x`` and optional labels ``y``."""

    x: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "x", x)
        if self.y is not None:
            y = np.asarray(self.y)
            if y.shape != (x.shape[0],):
                raise DimensionError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
            object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx) -> "Samples":
        idx = np.asarray(idx, dtype=np.intp)
        return Samples(self.x[idx], None if self.y is None else self.y[idx])


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    inner: Samples
    outer: Samples

    def __post_init__(self):
        if len(self.inner) == 0 or len(self.outer) == 0:
            raise ValueError(f"client {self.client_id}: shards must be nonempty")


def _require_batch(batch: Samples) -> Samples:
    if not isinstance(batch, Samples):
        raise TypeError(f"batch must be Samples, got {type(batch).__name__}")
    if len(batch) == 0:
        raise ValueError("empty batch")
    return batch


# ---------------------------------------------------------------------------
# single-level losses: mean value, gradient, Hessian-vector product, Hessian

class _Loss:
    def value(self, w, S: Samples) -> float:
        return float(np.mean(self.sample_values(w, S)))

    def grad(self, w, S: Samples) -> np.ndarray:
        return self.sample_grads(w, S).mean(axis=0)

    def hessian(self, w, S: Samples) -> np.ndarray:
        eye = np.eye(w.shape[0])
        return np.column_stack([self.hvp(w, S, e) for e in eye])


class SquaredLoss(_Loss):
    """``(x.w - y)^2`` per sample."""

    def sample_values(self, w, S):
        return (S.x @ w - S.y) ** 2

    def sample_grads(self, w, S):
        return 2.0 * (S.x @ w - S.y)[:, None] * S.x

    def hvp(self, w, S, v):
        return 2.0 * S.x.T @ (S.x @ v) / len(S)


class QuadraticLoss(_Loss):
    """``1/2 w'Aw - xi'w + offset`` per sample ``xi``; the Hessian is the constant ``A``."""

    def __init__(self, A, offset: float = 0.0):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if not np.allclose(A, A.T, rtol=0.0, atol=1e-12):
            raise ValueError("A must be symmetric")
        if np.linalg.eigvalsh(A).min() < -1e-12:
            raise ValueError("A must be positive semidefinite")
        self.A = A
        self.offset = float(offset)

    def sample_values(self, w, S):
        return 0.5 * w @ self.A @ w - S.x @ w + self.offset

    def sample_grads(self, w, S):
        return (self.A @ w)[None, :] - S.x

    def grad(self, w, S):
        return self.A @ w - S.x.mean(axis=0)

    def hvp(self, w, S, v):
        return self.A @ v

    def hessian(self, w, S):
        return self.A.copy()


class _Regularized(_Loss):
    """Adds ``reg/2 |w|^2 + ncvx * sum w_j^2 / (1 + w_j^2)`` to a data loss."""

    reg: float
    ncvx: float

    def _penalty(self, w):
        return 0.5 * self.reg * (w @ w) + self.ncvx * np.sum(w**2 / (1.0 + w**2))

    def _penalty_grad(self, w):
        return self.reg * w + self.ncvx * 2.0 * w / (1.0 + w**2) ** 2

    def _penalty_curv(self, w):
        return self.reg + self.ncvx * (2.0 - 6.0 * w**2) / (1.0 + w**2) ** 3


class BinaryLogisticLoss(_Regularized):
    """Logistic loss with labels in {0, 1}, optional ridge and nonconvex penalties."""

    def __init__(self, reg: float = 0.0, ncvx: float = 0.0):
        self.reg = float(reg)
        self.ncvx = float(ncvx)

    def sample_values(self, w, S):
        z = S.x @ w
        # log(1 + e^z) - y z  ==  -log sigma(z) + (1 - y) z ... written stably
        data = -log_expit(z) + (1.0 - S.y) * z
        return data + self._penalty(w)

    def sample_grads(self, w, S):
        z = S.x @ w
        return (expit(z) - S.y)[:, None] * S.x + self._penalty_grad(w)[None, :]

    def grad(self, w, S):
        z = S.x @ w
        return S.x.T @ (expit(z) - S.y) / len(S) + self._penalty_grad(w)

    def hvp(self, w, S, v):
        s = expit(S.x @ w)
        return S.x.T @ (s * (1.0 - s) * (S.x @ v)) / len(S) + self._penalty_curv(w) * v


class SoftmaxLoss(_Regularized):
    """Multinomial logistic (cross-entropy) loss; ``w`` is the flattened ``classes x k`` weight matrix."""

    def __init__(self, classes: int, reg: float = 0.0, ncvx: float = 0.0):
        self.classes = int(classes)
        self.reg = float(reg)
        self.ncvx = float(ncvx)

    def _probs(self, w, S):
        W = w.reshape(self.classes, -1)
        z = S.x @ W.T
        return z, np.exp(z - logsumexp(z, axis=1, keepdims=True))

    def sample_values(self, w, S):
        W = w.reshape(self.classes, -1)
        z = S.x @ W.T
        labels = S.y.astype(np.intp)
        data = logsumexp(z, axis=1) - z[np.arange(len(S)), labels]
        return data + self._penalty(w)

    def _residual(self, w, S):
        _, P = self._probs(w, S)
        P[np.arange(len(S)), S.y.astype(np.intp)] -= 1.0
        return P

    def sample_grads(self, w, S):
        R = self._residual(w, S)
        G = R[:, :, None] * S.x[:, None, :]
        return G.reshape(len(S), -1) + self._penalty_grad(w)[None, :]

    def grad(self, w, S):
        R = self._residual(w, S)
        return (R.T @ S.x).ravel() / len(S) + self._penalty_grad(w)

    def hvp(self, w, S, v):
        _, P = self._probs(w, S)
        Z = S.x @ v.reshape(self.classes, -1).T
        Q = P * Z - P * np.sum(P * Z, axis=1, keepdims=True)
        return (Q.T @ S.x).ravel() / len(S) + self._penalty_curv(w) * v


# ---------------------------------------------------------------------------
# inner maps

class LossInner:
    """Inner map ``f(w) = mean loss`` with output dimension 1."""

    p_is_d = False

    def __init__(self, loss):
        self.loss = loss

    def value(self, w, S):
        return np.array([self.loss.value(w, S)])

    def vjp(self, w, S, v):
        return v[0] * self.loss.grad(w, S)

    def jacobian(self, w, S):
        return self.loss.grad(w, S)[None, :]


class MamlInner:
    """One adaptation step ``w - eta_in * grad f(w)``; Jacobian ``I - eta_in * Hessian``."""

    p_is_d = True

    def __init__(self, loss, eta_in: float):
        if eta_in < 0:
            raise ValueError(f"eta_in must be >= 0, got {eta_in}")
        self.loss = loss
        self.eta_in = float(eta_in)

    def value(self, w, S):
        return w - self.eta_in * self.loss.grad(w, S)

    def vjp(self, w, S, v):
        # the Hessian is symmetric, so J^T v = J v
        return v - self.eta_in * self.loss.hvp(w, S, v)

    def jacobian(self, w, S):
        return np.eye(w.shape[0]) - self.eta_in * self.loss.hessian(w, S)


# ---------------------------------------------------------------------------
# outer functions; ``loss`` is the per-client loss the outer transform acts on

class IdentityOuter:
    stochastic = False
    gamma = None

    def loss(self, y, S=None):
        return float(y[0])

    def value(self, y, S=None):
        return float(y[0])

    def grad_info(self, y, S=None):
        return np.ones(1), False

    def grad(self, y, S=None):
        return self.grad_info(y, S)[0]


class ExpOuter:
    """``g(y) = exp(y / gamma)`` on a scalar inner value."""

    stochastic = False

    def __init__(self, gamma: float, clamp: float = EXP_CLAMP):
        if not gamma > 0:
            raise ValueError(f"gamma must be > 0, got {gamma}")
        self.gamma = float(gamma)
        self.clamp = float(clamp)

    def loss(self, y, S=None):
        return float(y[0])

    def value(self, y, S=None):
        return float(np.exp(y[0] / self.gamma))

    def grad_info(self, y, S=None):
        arg = y[0] / self.gamma
        clamped = arg > self.clamp
        return np.array([np.exp(min(arg, self.clamp)) / self.gamma]), bool(clamped)

    def grad(self, y, S=None):
        return self.grad_info(y, S)[0]


class LossOuter:
    """Outer ``g(y) = l(y)`` or, with ``gamma``, ``exp(l(y) / gamma)``; ``l`` is averaged over the outer batch.

    The exponential is applied to the batch-mean loss (plug-in estimate),
    so the full outer shard gives the exact outer function.
    """

    stochastic = True

    def __init__(self, loss, gamma: float | None = None, clamp: float = EXP_CLAMP):
        if gamma is not None and not gamma > 0:
            raise ValueError(f"gamma must be > 0, got {gamma}")
        self.base = loss
        self.gamma = None if gamma is None else float(gamma)
        self.clamp = float(clamp)

    def loss(self, y, S):
        return self.base.value(y, _require_batch(S))

    def value(self, y, S):
        l = self.loss(y, S)
        return l if self.gamma is None else float(np.exp(l / self.gamma))

    def grad_info(self, y, S):
        S = _require_batch(S)
        g = self.base.grad(y, S)
        if self.gamma is None:
            return g, False
        arg = self.base.value(y, S) / self.gamma
        return np.exp(min(arg, self.clamp)) / self.gamma * g, bool(arg > self.clamp)

    def grad(self, y, S):
        return self.grad_info(y, S)[0]


# ---------------------------------------------------------------------------

def _per_client(obj, n, what):
    if isinstance(obj, (list, tuple)):
        if len(obj) != n:
            raise DimensionError(f"expected {n} {what}, got {len(obj)}")
        return list(obj)
    return [obj] * n


class CompositionTask:
    """Per-client inner maps and outer functions over finite shards."""

    def __init__(self, shards: Sequence[ClientShard], inner, outer, d: int, name: str = "task"):
        self.shards = list(shards)
        self.n = len(self.shards)
        if self.n < 1:
            raise ValueError("a task needs at least one client")
        for i, sh in enumerate(self.shards):
            if sh.client_id != i:
                raise ValueError(f"shard {i} has client_id {sh.client_id}")
        self.inner = _per_client(inner, self.n, "inner maps")
        self.outer = _per_client(outer, self.n, "outer functions")
        self.d = int(d)
        kinds = {m.p_is_d for m in self.inner}
        if len(kinds) != 1:
            raise ValueError("mixed inner output dimensions are not supported")
        self.p = self.d if kinds.pop() else 1
        self.name = name

    @property
    def gamma(self) -> float | None:
        gammas = {o.gamma for o in self.outer}
        return gammas.pop() if len(gammas) == 1 else None

    @property
    def is_maml(self) -> bool:
        return self.p == self.d and isinstance(self.inner[0], MamlInner)

    def shard_sizes(self) -> list[int]:
        return [len(sh.inner) for sh in self.shards]

    def _check_w(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.d,):
            raise DimensionError(f"w must have shape ({self.d},), got {w.shape}")
        return w

    def _outer_batch(self, i, batch):
        if batch is None:
            return self.shards[i].outer
        if self.outer[i].stochastic:
            return _require_batch(batch)
        return batch

    # -- stochastic oracles -------------------------------------------------
    def inner_value(self, i: int, w, batch: Samples | None = None) -> np.ndarray:
        S = self.shards[i].inner if batch is None else _require_batch(batch)
        return self.inner[i].value(self._check_w(w), S)

    def inner_vjp(self, i: int, w, batch: Samples | None, v) -> np.ndarray:
        S = self.shards[i].inner if batch is None else _require_batch(batch)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.p,):
            raise DimensionError(f"v must have shape ({self.p},), got {v.shape}")
        return self.inner[i].vjp(self._check_w(w), S, v)

    def inner_jacobian(self, i: int, w, batch: Samples | None = None) -> np.ndarray:
        S = self.shards[i].inner if batch is None else _require_batch(batch)
        return self.inner[i].jacobian(self._check_w(w), S)

    def outer_grad(self, i: int, y, batch: Samples | None = None) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.p,):
            raise DimensionError(f"y must have shape ({self.p},), got {y.shape}")
        return self.outer[i].grad(y, self._outer_batch(i, batch))

    # -- exact full-batch quantities ----------------------------------------
    def client_loss(self, i: int, w) -> float:
        y = self.inner_value(i, w)
        return self.outer[i].loss(y, self.shards[i].outer)

    def client_objective(self, i: int, w) -> float:
        y = self.inner_value(i, w)
        return self.outer[i].value(y, self.shards[i].outer)

    def client_gradient(self, i: int, w) -> np.ndarray:
        y = self.inner_value(i, w)
        return self.inner_vjp(i, w, None, self.outer[i].grad(y, self.shards[i].outer))

    def client_losses(self, w) -> np.ndarray:
        return np.array([self.client_loss(i, w) for i in range(self.n)])

    def full_objective(self, w) -> float:
        return float(np.mean([self.client_objective(i, w) for i in range(self.n)]))

    def full_gradient(self, w) -> np.ndarray:
        return np.mean([self.client_gradient(i, w) for i in range(self.n)], axis=0)

    def __repr__(self):
        return f"CompositionTask({self.name!r}, n={self.n}, d={self.d}, p={self.p})"


@dataclass
class EstimatorStep:
    u: np.ndarray
    outer_grad_norm: float
    jac_norm: float
    clamped: bool


def estimate_step(task: CompositionTask, i: int, w, inner_batch, outer_batch, track: bool = True) -> EstimatorStep:
    """Form the biased local direction and, with ``track``, the norms feeding the drift bound."""
    w = task._check_w(w)
    S = task.shards[i].inner if inner_batch is None else _require_batch(inner_batch)
    inner = task.inner[i]
    y = inner.value(w, S)
    gy, clamped = task.outer[i].grad_info(y, task._outer_batch(i, outer_batch))
    u = inner.vjp(w, S, gy)
    if not track:
        return EstimatorStep(u, 0.0, 0.0, clamped)
    return EstimatorStep(u, float(np.linalg.norm(gy)), float(np.linalg.norm(inner.jacobian(w, S))), clamped)


def client_grad_estimator(task: CompositionTask, i: int, w, inner_batch, outer_batch) -> np.ndarray:
    """``u = J_B(w)^T grad g_B'(f_B(w))`` with one inner batch shared by value and Jacobian.

    Biased for minibatches whenever the outer function is nonlinear; exact
    when both batches are the full shards (pass ``None``).
    """
    return estimate_step(task, i, w, inner_batch, outer_batch, track=False).u


def maml_inner(task: CompositionTask, i: int, w, batch=None) -> np.ndarray:
    if not isinstance(task.inner[i], MamlInner):
        raise TypeError("maml_inner needs a task built on MamlInner maps")
    return task.inner_value(i, w, batch)


def maml_inner_vjp(task: CompositionTask, i: int, w, batch, v) -> np.ndarray:
    if not isinstance(task.inner[i], MamlInner):
        raise TypeError("maml_inner_vjp needs a task built on MamlInner maps")
    return task.inner_vjp(i, w, batch, v)


# ---------------------------------------------------------------------------
# generators

def _random_spd(rng, d, lo, hi):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    A = (Q * rng.uniform(lo, hi, size=d)) @ Q.T
    return 0.5 * (A + A.T)


def _quadratic_offset(A, xi_mean, floor):
    # makes min_w 1/2 w'Aw - xi'w + offset equal to ``floor``
    return floor + 0.5 * xi_mean @ np.linalg.solve(A, xi_mean)


def make_quadratic_dro(
    n: int = 4,
    d: int = 5,
    gamma: float = 0.5,
    rng: np.random.Generator | None = None,
    samples: int = 50,
    noise: float = 0.3,
    radius: float = 0.5,
    outer: str = "exp",
) -> CompositionTask:
    """Heterogeneous strongly convex quadratic clients under the exponential (or identity) outer."""
    rng = np.random.default_rng(0) if rng is None else rng
    shards, inner = [], []
    for i in range(n):
        A = _random_spd(rng, d, 0.5, 1.5)
        center = rng.standard_normal(d)
        center *= radius / np.linalg.norm(center)
        xi = (A @ center)[None, :] + noise * rng.standard_normal((samples, d))
        offset = _quadratic_offset(A, xi.mean(axis=0), rng.uniform(0.0, 0.2))
        S = Samples(xi)
        shards.append(ClientShard(i, S, S))
        inner.append(LossInner(QuadraticLoss(A, offset)))
    out = _make_outer(outer, gamma)
    return CompositionTask(shards, inner, out, d, name=f"quadratic-dro[{outer}]")


def _make_outer(kind, gamma):
    if kind == "exp":
        return ExpOuter(gamma)
    if kind == "identity":
        return IdentityOuter()
    raise ValueError(f"unknown outer kind {kind!r}")


def label_skew_counts(size: int, classes: int, dominant: int, rho: float) -> np.ndarray:
    """Class counts with ``rho`` of ``size`` on class ``dominant`` and the rest spread evenly (largest remainder)."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    share = np.full(classes, (1.0 - rho) / (classes - 1))
    share[dominant] = rho
    raw = share * size
    counts = np.floor(raw + 1e-9).astype(int)
    short = size - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def make_imbalanced_classification(
    n: int = 10,
    dominant_client_size: int = 500,
    minority_size: int = 20,
    d: int = 10,
    classes: int = 10,
    rng: np.random.Generator | None = None,
    rho: float | None = None,
    gamma: float = 0.2,
    scale: float = 1.0,
    noise: float = 1.0,
    reg: float = 0.0,
    outer: str = "exp",
    dominant_client: int | None = None,
) -> CompositionTask:
    """Gaussian-mixture classification with one data-rich client and ``n - 1`` small ones.

    Class means are ``scale`` times the simplex vertices (first ``classes``
    coordinates of the feature space, so ``d >= classes``), covariance is
    ``noise**2 I``.  Without ``rho`` every client draws labels uniformly; with
    ``rho`` client ``i`` holds a ``rho`` share of class ``i mod classes``.
    The model is multinomial logistic regression on ``d`` features, so the
    parameter dimension is ``classes * d``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if n < 2:
        raise ValueError(f"need n >= 2 clients, got {n}")
    if dominant_client_size < 1 or minority_size < 1:
        raise ValueError("shard sizes must be >= 1")
    if classes < 2 or d < classes:
        raise ValueError(f"need 2 <= classes <= d, got classes={classes}, d={d}")
    big = int(rng.integers(n)) if dominant_client is None else int(dominant_client)
    means = np.zeros((classes, d))
    means[np.arange(classes), np.arange(classes)] = scale
    shards = []
    for i in range(n):
        size = dominant_client_size if i == big else minority_size
        if rho is None:
            labels = rng.integers(classes, size=size)
        else:
            counts = label_skew_counts(size, classes, i % classes, rho)
            labels = np.repeat(np.arange(classes), counts)
            labels = labels[rng.permutation(size)]
        x = means[labels] + noise * rng.standard_normal((size, d))
        S = Samples(x, labels.astype(np.float64))
        shards.append(ClientShard(i, S, S))
    loss = SoftmaxLoss(classes, reg=reg)
    task = CompositionTask(shards, LossInner(loss), _make_outer(outer, gamma), classes * d,
                           name="imbalanced-classification")
    task.dominant_client = big
    return task


def make_logistic_dro(
    n: int = 10,
    d: int = 10,
    gamma: float = 1.0,
    rng: np.random.Generator | None = None,
    samples: int = 200,
    ncvx: float = 0.1,
    shift: float = 1.0,
    outer: str = "exp",
) -> CompositionTask:
    """Binary logistic clients with a nonconvex penalty; each client has its own label-generating direction."""
    rng = np.random.default_rng(0) if rng is None else rng
    base = rng.standard_normal(d)
    shards = []
    for i in range(n):
        w_true = base + shift * rng.standard_normal(d)
        x = rng.standard_normal((samples, d)) / np.sqrt(d)
        y = (rng.random(samples) < 1.0 / (1.0 + np.exp(-x @ w_true))).astype(np.float64)
        S = Samples(x, y)
        shards.append(ClientShard(i, S, S))
    loss = BinaryLogisticLoss(ncvx=ncvx)
    return CompositionTask(shards, LossInner(loss), _make_outer(outer, gamma), d, name="logistic-dro")


def make_quadratic_maml(
    n: int = 5,
    d: int = 4,
    eta_in: float = 0.05,
    gamma: float | None = 0.5,
    rng: np.random.Generator | None = None,
    inner_samples: int = 20,
    outer_samples: int = 20,
    noise: float = 0.1,
    radius: float = 0.5,
) -> CompositionTask:
    """One-step MAML over heterogeneous quadratic tasks; ``gamma`` switches on the exp-wrapped variant."""
    rng = np.random.default_rng(0) if rng is None else rng
    shards, inner, outer = [], [], []
    for i in range(n):
        A = _random_spd(rng, d, 0.5, 2.0)
        center = rng.standard_normal(d)
        center *= radius / np.linalg.norm(center)
        b = A @ center
        xi_in = b[None, :] + noise * rng.standard_normal((inner_samples, d))
        xi_out = b[None, :] + noise * rng.standard_normal((outer_samples, d))
        floor = rng.uniform(0.0, 0.2)
        shards.append(ClientShard(i, Samples(xi_in), Samples(xi_out)))
        inner.append(MamlInner(QuadraticLoss(A, _quadratic_offset(A, xi_in.mean(axis=0), floor)), eta_in))
        outer.append(LossOuter(QuadraticLoss(A, _quadratic_offset(A, xi_out.mean(axis=0), floor)), gamma))
    return CompositionTask(shards, inner, outer, d, name="quadratic-maml")


def make_logistic_maml(
    n: int = 5,
    d: int = 5,
    eta_in: float = 0.05,
    gamma: float | None = 0.5,
    rng: np.random.Generator | None = None,
    inner_samples: int = 40,
    outer_samples: int = 40,
    reg: float = 0.01,
    shift: float = 1.0,
) -> CompositionTask:
    """One-step MAML over binary logistic tasks (support set inside, query set outside)."""
    rng = np.random.default_rng(0) if rng is None else rng
    base = rng.standard_normal(d)
    shards = []
    for i in range(n):
        w_true = base + shift * rng.standard_normal(d)
        def draw(m):
            x = rng.standard_normal((m, d)) / np.sqrt(d)
            y = (rng.random(m) < 1.0 / (1.0 + np.exp(-x @ w_true))).astype(np.float64)
            return Samples(x, y)
        shards.append(ClientShard(i, draw(inner_samples), draw(outer_samples)))
    loss = BinaryLogisticLoss(reg=reg)
    return CompositionTask(shards, MamlInner(loss, eta_in), LossOuter(loss, gamma), d, name="logistic-maml")


# name -> (generator, whether it takes eta_in)
TASK_KINDS = {
    "quadratic-dro": (make_quadratic_dro, False),
    "imbalanced-classification": (make_imbalanced_classification, False),
    "logistic-dro": (make_logistic_dro, False),
    "quadratic-maml": (make_quadratic_maml, True),
    "logistic-maml": (make_logistic_maml, True),
}

_RESERVED = {"n", "rng", "gamma", "eta_in"}


def task_parameters(kind: str) -> dict:
    """Tunable keyword arguments (and defaults) of the generator behind ``kind``."""
    import inspect

    if kind not in TASK_KINDS:
        raise KeyError(f"unknown task kind {kind!r}; choose from {sorted(TASK_KINDS)}")
    sig = inspect.signature(TASK_KINDS[kind][0])
    return {k: p.default for k, p in sig.parameters.items() if k not in _RESERVED}


def make_task(kind: str, n: int, gamma: float, rng, eta_in: float | None = None, **params) -> CompositionTask:
    gen, takes_eta = TASK_KINDS[kind] if kind in TASK_KINDS else (None, False)
    allowed = task_parameters(kind)
    unknown = set(params) - set(allowed)
    if unknown:
        raise KeyError(f"unknown parameters for {kind}: {sorted(unknown)}")
    kw = dict(params, n=n, gamma=gamma, rng=rng)
    if takes_eta:
        kw["eta_in"] = 0.05 if eta_in is None else eta_in
    return gen(**kw)
