"""Single-SIS and bi-SIS vector fields and a fixed-step RK4 integrator.

The integrator advances a batch of trajectories at once (rows of a K x N
array), which is how the multi-start searches stay cheap at N ~ 100.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import Graph

CLAMP_TOL = 1e-12


class IntegrationError(RuntimeError):
    """The integrated state left the invariant simplex or became non-finite."""


@dataclass(frozen=True)
class VirusParams:
    beta: float
    delta: float

    def __post_init__(self) -> None:
        if not (self.beta > 0 and self.delta > 0) or not np.isfinite(self.beta + self.delta):
            raise ValueError(f"beta and delta must be positive, got beta={self.beta}, delta={self.delta}")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def tau(self) -> float:
        return self.beta / self.delta

    @classmethod
    def from_tau(cls, tau: float, delta: float = 1.0) -> "VirusParams":
        """Realize an effective rate with the given recovery rate (beta = tau * delta)."""
        return cls(beta=tau * delta, delta=delta)


@dataclass(frozen=True, eq=False)
class BiState:
    """Infection probabilities of both viruses, ``x_i + y_i <= 1``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError(f"x and y must be vectors of equal length, got {x.shape} and {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("state contains non-finite values")
        if x.min() < -CLAMP_TOL or y.min() < -CLAMP_TOL or (x + y).max() > 1 + CLAMP_TOL:
            raise ValueError("state violates 0 <= x, 0 <= y, x + y <= 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "BiState":
        return cls(np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class IntegratorConfig:
    """RK4 settings.  ``step=None`` picks ``step_fraction / max rate``."""

    step: float | None = None
    convergence_tol: float = 1e-10
    max_time: float = 1e6
    log_interval: float | None = None
    step_fraction: float = 0.01

    def __post_init__(self) -> None:
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if not (self.convergence_tol > 0 and self.max_time > 0 and self.step_fraction > 0):
            raise ValueError("convergence_tol, max_time and step_fraction must be positive")
        if self.log_interval is not None and not self.log_interval > 0:
            raise ValueError("log_interval must be positive")

    def resolve_step(self, p1: VirusParams, p2: VirusParams | None, g_a: Graph, g_b: Graph | None) -> float:
        if self.step is not None:
            return self.step
        rates = [p1.beta * g_a.spectral_radius, p1.delta]
        if p2 is not None and g_b is not None:
            rates += [p2.beta * g_b.spectral_radius, p2.delta]
        return self.step_fraction / max(rates)


@dataclass
class IntegrationResult:
    final: BiState
    converged: bool
    elapsed: float
    steps: int
    residual: float
    trajectory: list[tuple[float, np.ndarray, np.ndarray]] | None = field(default=None, repr=False)


def _check_dims(n: int, *graphs: Graph) -> None:
    for g in graphs:
        if g.node_count != n:
            raise ValueError(f"state has {n} entries but graph has {g.node_count} nodes")


def bisis_rhs(state: BiState, p1: VirusParams, p2: VirusParams, g_a: Graph, g_b: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Bi-SIS field: ``(b1 diag(1-x-y) A x - d1 x,  b2 diag(1-x-y) B y - d2 y)``."""
    _check_dims(state.n, g_a, g_b)
    x, y = state.x, state.y
    free = 1.0 - x - y
    dx = p1.beta * free * (g_a.adjacency @ x) - p1.delta * x
    dy = p2.beta * free * (g_b.adjacency @ y) - p2.delta * y
    return dx, dy


def sis_rhs(x: np.ndarray, p: VirusParams, g: Graph) -> np.ndarray:
    """Single-SIS field ``b diag(1-x) A x - d x``."""
    x = np.asarray(x, dtype=float)
    _check_dims(x.shape[0], g)
    return p.beta * (1.0 - x) * (g.adjacency @ x) - p.delta * x


class _StackedField:
    """Bi-SIS field on stacked rows ``z = [x, y]`` (shape K x 2N).

    One matmul per evaluation: ``z @ Q`` yields both ``x + y`` (duplicated
    into each half) and ``[A x, B y]``; A and B are symmetric, so right
    multiplication is the row-wise matvec.
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, rates: tuple[float, float, float, float]):
        n = a.shape[0]
        self.n = n
        eye = np.eye(n)
        q = np.zeros((2 * n, 4 * n))
        q[:n, :n] = q[:n, n:2 * n] = q[n:, :n] = q[n:, n:2 * n] = eye
        q[:n, 2 * n:3 * n] = a
        q[n:, 3 * n:] = b
        self.q = q
        b1, d1, b2, d2 = rates
        self.beta = np.concatenate([np.full(n, b1), np.full(n, b2)])
        self.delta = np.concatenate([np.full(n, d1), np.full(n, d2)])

    def __call__(self, z: np.ndarray) -> np.ndarray:
        w = z @ self.q
        m = 2 * self.n
        return self.beta * (1.0 - w[:, :m]) * w[:, m:] - self.delta * z


def _integrate_batch(X, Y, A, B, rates, dt, cfg: IntegratorConfig, log: bool):
    """Advance every row until its field sup-norm drops below tolerance.

    Converged rows are frozen; the rest keep stepping until ``max_time``.
    """
    k, n = X.shape
    field_ = _StackedField(A, B, rates)
    Z = np.concatenate([X, Y], axis=1)
    converged = np.zeros(k, dtype=bool)
    steps = np.zeros(k, dtype=np.int64)
    residual = np.full(k, np.inf)
    max_steps = int(np.ceil(cfg.max_time / dt))
    logs: list[list] | None = [[] for _ in range(k)] if log else None
    next_sample = 0.0
    active = np.arange(k)
    Za = Z
    h, h2, h6 = dt, 0.5 * dt, dt / 6.0
    step = 0
    while True:
        k1 = field_(Za)
        res = np.abs(k1).max(axis=1)
        residual[active] = res
        if logs is not None and step * dt >= next_sample - 1e-12 * dt:
            for j, r in enumerate(active):
                logs[r].append((step * dt, Za[j, :n].copy(), Za[j, n:].copy()))
            next_sample += cfg.log_interval
        done = res < cfg.convergence_tol
        if done.any():
            Z[active] = Za
            converged[active[done]] = True
            steps[active[done]] = step
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            Za, k1 = Za[keep], k1[keep]
        if step >= max_steps:
            break
        k2 = field_(Za + h2 * k1)
        k3 = field_(Za + h2 * k2)
        k4 = field_(Za + h * k3)
        Za = Za + h6 * (k1 + 2.0 * (k2 + k3) + k4)
        step += 1
        _enforce_invariants(Za, n, step * dt, dt)
    if active.size:
        Z[active] = Za
        steps[active] = step
    X, Y = Z[:, :n], Z[:, n:]
    if logs is not None:
        # Close each log with the final state if it fell between samples.
        for r in range(k):
            t_end = steps[r] * dt
            if not logs[r] or logs[r][-1][0] < t_end:
                logs[r].append((t_end, X[r].copy(), Y[r].copy()))
    return X, Y, converged, steps, residual, logs


def _enforce_invariants(Z: np.ndarray, n: int, t: float, dt: float) -> None:
    low = Z.min()
    if not low >= -CLAMP_TOL:
        what = "became non-finite" if np.isnan(low) else f"undershot zero by {-low:.3e}"
        raise IntegrationError(f"state {what} at t={t:.6g}; retry with a step smaller than dt={dt:.3g}")
    if low < 0:
        np.maximum(Z, 0.0, out=Z)
    high = (Z[:, :n] + Z[:, n:]).max()
    if not high <= 1 + CLAMP_TOL:
        raise IntegrationError(
            f"x + y reached {high:.15g} at t={t:.6g}; retry with a step smaller than dt={dt:.3g}"
        )


def integrate_many(
    initials: Sequence[BiState],
    p1: VirusParams,
    p2: VirusParams,
    g_a: Graph,
    g_b: Graph,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> list[IntegrationResult]:
    """Integrate several initial states with a shared step; results keep input order."""
    if not initials:
        return []
    n = initials[0].n
    _check_dims(n, g_a, g_b)
    for s in initials:
        if s.n != n:
            raise ValueError("initial states differ in length")
    dt = cfg.resolve_step(p1, p2, g_a, g_b)
    X = np.stack([s.x for s in initials])
    Y = np.stack([s.y for s in initials])
    X, Y, conv, steps, res, logs = _integrate_batch(
        X, Y, g_a.adjacency, g_b.adjacency, (p1.beta, p1.delta, p2.beta, p2.delta), dt, cfg,
        cfg.log_interval is not None,
    )
    return [
        IntegrationResult(
            final=BiState(X[r], Y[r]),
            converged=bool(conv[r]),
            elapsed=float(steps[r] * dt),
            steps=int(steps[r]),
            residual=float(res[r]),
            trajectory=None if logs is None else logs[r],
        )
        for r in range(len(initials))
    ]


def integrate(
    initial: BiState,
    p1: VirusParams,
    p2: VirusParams,
    g_a: Graph,
    g_b: Graph,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> IntegrationResult:
    """Integrate the bi-SIS system from ``initial`` until the field vanishes."""
    return integrate_many([initial], p1, p2, g_a, g_b, cfg)[0]


def integrate_sis(x0: np.ndarray, p: VirusParams, g: Graph, cfg: IntegratorConfig = IntegratorConfig()) -> IntegrationResult:
    """Single-SIS trajectory, run as a bi-SIS system whose second virus is absent."""
    x0 = np.asarray(x0, dtype=float)
    _check_dims(x0.shape[0], g)
    dt = cfg.resolve_step(p, None, g, None)
    X, Y, conv, steps, res, logs = _integrate_batch(
        x0[None, :], np.zeros((1, x0.shape[0])), g.adjacency, g.adjacency,
        (p.beta, p.delta, p.beta, p.delta), dt, cfg, cfg.log_interval is not None,
    )
    return IntegrationResult(BiState(X[0], Y[0]), bool(conv[0]), float(steps[0] * dt), int(steps[0]),
                             float(res[0]), None if logs is None else logs[0])


def write_trajectory_csv(trajectory: list[tuple[float, np.ndarray, np.ndarray]], path: str | Path) -> None:
    """Columns ``t, x_0..x_{N-1}, y_0..y_{N-1}``."""
    if not trajectory:
        raise ValueError("empty trajectory")
    n = trajectory[0][1].shape[0]
    header = ["t"] + [f"x_{i}" for i in range(n)] + [f"y_{i}" for i in range(n)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, x, y in trajectory:
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in y])
