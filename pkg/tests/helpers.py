"""Small hand-checkable tasks and the acceptance reporting hook shared by the tests."""

from __future__ import annotations

import contextlib
import time

import numpy as np

from comfedl.tasks import (
    ClientShard,
    CompositionTask,
    ExpOuter,
    IdentityOuter,
    LossInner,
    LossOuter,
    MamlInner,
    QuadraticLoss,
    Samples,
    SquaredLoss,
)

ACCEPTANCE: list[str] = []


def shard(i, x, y=None, outer=None):
    s = Samples(np.asarray(x, dtype=float), None if y is None else np.asarray(y, dtype=float))
    return ClientShard(i, s, s if outer is None else outer)


def squared_task(x, y) -> CompositionTask:
    """One client, ``(x.w - y)^2`` inside, identity outside."""
    return CompositionTask([shard(0, x, y)], LossInner(SquaredLoss()), IdentityOuter(), d=np.shape(x)[1])


def half_norm_task(d=2, n=1, outer=None) -> CompositionTask:
    """``f(w) = 1/2 |w|^2`` on every client (samples are zero vectors)."""
    return CompositionTask([shard(i, np.zeros((3, d))) for i in range(n)],
                           LossInner(QuadraticLoss(np.eye(d))), outer or IdentityOuter(), d=d)


def affine_task(grad, value, gamma) -> CompositionTask:
    """Inner loss with value ``value`` and gradient ``grad`` at the origin under ``exp(./gamma)``."""
    grad = np.asarray(grad, dtype=float)
    d = grad.size
    loss = QuadraticLoss(np.zeros((d, d)), offset=value)
    return CompositionTask([shard(0, -grad[None, :])], LossInner(loss), ExpOuter(gamma), d=d)


def constant_losses_task(values, gamma) -> CompositionTask:
    d = 1
    inner = [LossInner(QuadraticLoss(np.zeros((d, d)), offset=v)) for v in values]
    return CompositionTask([shard(i, np.zeros((1, d))) for i in range(len(values))], inner,
                           ExpOuter(gamma), d=d)


def maml_quadratic(A, b, eta_in, gamma=1.0, outer_A=None) -> CompositionTask:
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    xi = np.asarray(b, dtype=float)[None, :]
    outer_loss = QuadraticLoss(np.eye(d) if outer_A is None else outer_A)
    return CompositionTask([shard(0, xi, outer=Samples(np.zeros((1, d))))],
                           MamlInner(QuadraticLoss(A), eta_in), LossOuter(outer_loss, gamma), d=d)


@contextlib.contextmanager
def criterion(number: int, title: str, limit: float | None = None):
    """Time the block, record one PASS/FAIL line, re-raise failures."""
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit}s"
    except BaseException as exc:
        line = f"criterion {number:2d} FAIL  {title}: {exc}".splitlines()[0]
        ACCEPTANCE.append(line)
        print(line)
        raise
    line = f"criterion {number:2d} PASS  {title} ({elapsed:.1f}s)"
    ACCEPTANCE.append(line)
    print(line)
