"""Single-virus equilibria, regime classification and coexistence equilibria."""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import BiState, IntegratorConfig, VirusParams, integrate_many, integrate_sis, sis_rhs, bisis_rhs
from .graph import Graph

EPS_THRESH = 1e-9
DEDUP_TOL = 1e-6
NEAR_TOL = 1e-3
NEWTON_TOL = 1e-12
CROSS_CHECK_MAX_STEPS = 200_000
# Multi-start trajectories pause at these residuals to try Newton early.
STAGE_TOLS = (1e-4, 1e-6)
EARLY_JUMP_TOL = 0.05
# Newton converging onto a boundary equilibrium leaves ~1e-13 in the dead
# virus's coordinates; anything this small is not a coexistence state.
INTERIOR_FLOOR = 1e-9


class EquilibriumError(RuntimeError):
    """A solver failed to converge or two independent solvers disagree."""


class Regime(str, enum.Enum):
    BOTH_DIE = "BOTH_DIE"
    VIRUS1_ONLY = "VIRUS1_ONLY"
    VIRUS2_ONLY = "VIRUS2_ONLY"
    COEXIST = "COEXIST"
    BELOW_SINGLE_THRESHOLD_1 = "BELOW_SINGLE_THRESHOLD_1"
    BELOW_SINGLE_THRESHOLD_2 = "BELOW_SINGLE_THRESHOLD_2"
    # Both viruses clear their single thresholds but neither can invade the
    # other's equilibrium; none of the three convergence conditions applies.
    BISTABLE = "BISTABLE"
    # Both invasion quantities sit on 1 within tolerance: the measure-zero
    # case (e.g. A = B, tau1 = tau2) where equilibria form a continuum.
    NEUTRAL = "NEUTRAL"

    @property
    def survivors(self) -> tuple[bool, bool] | None:
        """Long-run (virus 1 survives, virus 2 survives), or None if start-dependent."""
        return _SURVIVORS[self]


_SURVIVORS = {
    Regime.BOTH_DIE: (False, False),
    Regime.VIRUS1_ONLY: (True, False),
    Regime.BELOW_SINGLE_THRESHOLD_2: (True, False),
    Regime.VIRUS2_ONLY: (False, True),
    Regime.BELOW_SINGLE_THRESHOLD_1: (False, True),
    Regime.COEXIST: (True, True),
    Regime.BISTABLE: None,
    Regime.NEUTRAL: None,
}


@dataclass(eq=False)
class SingleVirusEquilibrium:
    xstar: np.ndarray
    tau: float
    residual: float
    survived: bool
    iterations: int = 0
    cross_check_error: float | None = None

    @property
    def mean(self) -> float:
        return float(self.xstar.mean())


def _sis_jacobian(x: np.ndarray, tau: float, a: np.ndarray) -> np.ndarray:
    """Jacobian of ``tau (1-x) A x - x``."""
    ax = a @ x
    j = tau * (1.0 - x)[:, None] * a
    j[np.diag_indices_from(j)] -= tau * ax + 1.0
    return j


def _slowest_sis_rate(x: np.ndarray, p: VirusParams, a: np.ndarray) -> float:
    """Smallest decay rate of the single-SIS linearization at ``x``.

    ``diag(1-x) A`` is similar to a symmetric matrix, so the spectrum is real.
    """
    r = np.sqrt(1.0 - x)
    sym = p.beta * r[:, None] * a * r[None, :]
    sym[np.diag_indices_from(sym)] -= p.beta * (a @ x) + p.delta
    return float(-np.linalg.eigvalsh(sym).max())


def single_sis_equilibrium(
    p: VirusParams,
    g: Graph,
    tol: float = 1e-10,
    cross_check: bool = True,
    eps_thresh: float = EPS_THRESH,
    max_iter: int = 20_000,
) -> SingleVirusEquilibrium:
    """Positive equilibrium of the single-SIS system, or zero below threshold.

    The monotone iteration ``x <- tau Ax / (1 + tau Ax)`` from the all-ones
    vector is run to ``tol`` or ``max_iter`` sweeps and then polished with
    Newton steps; near threshold the iteration alone would need ~1/(tau*lambda-1)
    sweeps.  With ``cross_check`` the result is compared with an RK4 run from
    ``0.5 * 1``, unless the slowest linear rate puts that run beyond
    ``CROSS_CHECK_MAX_STEPS`` steps; ``cross_check_error`` is then None.
    """
    a = g.adjacency
    n = g.node_count
    tau = p.tau
    if tau * g.spectral_radius <= 1.0 + eps_thresh:
        return SingleVirusEquilibrium(np.zeros(n), tau, 0.0, False)

    x = np.ones(n)
    it = 0
    for it in range(1, max_iter + 1):
        tax = tau * (a @ x)
        x_new = tax / (1.0 + tax)
        change = np.abs(x_new - x).max()
        x = x_new
        if change < tol:
            break

    def resid(v):
        return tau * (1.0 - v) * (a @ v) - v

    r = resid(x)
    rnorm = np.abs(r).max()
    step_size = np.inf
    for _ in range(100):
        # Near threshold the field is flat in x, so a small residual alone
        # does not pin x down; also require a relatively small Newton step.
        if rnorm < 1e-3 * tol and step_size <= 1e-12 * x.max():
            break
        step = np.linalg.solve(_sis_jacobian(x, tau, a), -r)
        lam = 1.0
        while lam > 1e-10:
            cand = x + lam * step
            if cand.min() > 0 and cand.max() < 1:
                rc = resid(cand)
                if np.abs(rc).max() < rnorm:
                    break
            lam *= 0.5
        else:
            break
        step_size = float(np.abs(cand - x).max())
        x, r = cand, rc
        rnorm = np.abs(r).max()
    if x.min() <= 0:
        raise EquilibriumError("single-SIS solve collapsed onto the zero equilibrium above threshold")
    residual = float(np.abs(sis_rhs(x, p, g)).max())
    if residual >= max(tol, 1e-13 * p.beta * g.spectral_radius):
        raise EquilibriumError(f"single-SIS solve did not converge (residual {residual:.3e})")

    err = None
    if cross_check:
        rate = _slowest_sis_rate(x, p, a)
        ode_tol = tol * min(1.0, rate)
        horizon = 4.0 * (np.log(1.0 / ode_tol) + 10.0) / rate
        ode_cfg = IntegratorConfig(convergence_tol=ode_tol, max_time=horizon, step_fraction=0.05)
        if horizon / ode_cfg.resolve_step(p, None, g, None) > CROSS_CHECK_MAX_STEPS:
            return SingleVirusEquilibrium(x, tau, residual, True, it, None)
        out = integrate_sis(np.full(n, 0.5), p, g, ode_cfg)
        if not out.converged:
            raise EquilibriumError(f"single-SIS cross-check integration did not converge by t={horizon:.3g}")
        err = float(np.abs(out.final.x - x).max())
        if err > 100 * tol:
            raise EquilibriumError(f"fixed-point and ODE equilibria disagree by {err:.3e}")
    return SingleVirusEquilibrium(x, tau, residual, True, it, err)


@dataclass(eq=False)
class RegimeReport:
    t1_lambdaA: float
    t2_lambdaB: float
    t1_lambda_scaledA: float
    t2_lambda_scaledB: float
    classification: Regime
    margin: float
    virus1: SingleVirusEquilibrium = field(repr=False)
    virus2: SingleVirusEquilibrium = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "t1_lambdaA": self.t1_lambdaA,
            "t2_lambdaB": self.t2_lambdaB,
            "t1_lambda_scaledA": self.t1_lambda_scaledA,
            "t2_lambda_scaledB": self.t2_lambda_scaledB,
            "classification": self.classification.value,
            "margin": self.margin,
        }


def classify_regime(
    p1: VirusParams,
    p2: VirusParams,
    g_a: Graph,
    g_b: Graph,
    eps_thresh: float = EPS_THRESH,
    cross_check: bool = True,
) -> RegimeReport:
    """Evaluate the four threshold quantities and classify the long-run outcome.

    Quantities within ``eps_thresh`` of 1 count as "<= 1" (die-out).
    """
    if g_a.node_count != g_b.node_count:
        raise ValueError("overlaid graphs must share the node set")
    ex = single_sis_equilibrium(p1, g_a, eps_thresh=eps_thresh, cross_check=cross_check)
    ey = single_sis_equilibrium(p2, g_b, eps_thresh=eps_thresh, cross_check=cross_check)
    r1 = float(p1.tau * g_a.spectral_radius)
    r2 = p2.tau * g_b.spectral_radius
    s1 = p1.tau * g_a.scaled(1.0 - ey.xstar).spectral_radius
    s2 = p2.tau * g_b.scaled(1.0 - ex.xstar).spectral_radius

    def above(q: float) -> bool:
        return q > 1.0 + eps_thresh

    if not above(r1) or not above(r2):
        deciding = (r1, r2)
        if above(r2):
            cls = Regime.BELOW_SINGLE_THRESHOLD_1
        elif above(r1):
            cls = Regime.BELOW_SINGLE_THRESHOLD_2
        else:
            cls = Regime.BOTH_DIE
    else:
        deciding = (r1, r2, s1, s2)
        cls = {
            (True, True): Regime.COEXIST,
            (True, False): Regime.VIRUS1_ONLY,
            (False, True): Regime.VIRUS2_ONLY,
            (False, False): Regime.BISTABLE,
        }[(above(s1), above(s2))]
        if cls is Regime.BISTABLE and abs(s1 - 1.0) <= eps_thresh and abs(s2 - 1.0) <= eps_thresh:
            cls = Regime.NEUTRAL
    margin = min(abs(q - 1.0) for q in deciding)
    return RegimeReport(r1, r2, s1, s2, cls, margin, ex, ey)


@dataclass(eq=False)
class CoexistenceEquilibrium:
    xhat: np.ndarray
    yhat: np.ndarray
    residual: float
    basin_hits: int = 1
    refined: bool = True
    degenerate: bool = False

    @property
    def state(self) -> BiState:
        return BiState(self.xhat, self.yhat)

    @property
    def total(self) -> float:
        return float(self.xhat.sum())

    def to_dict(self, vectors: bool = True) -> dict:
        d = {
            "residual": self.residual,
            "basin_hits": self.basin_hits,
            "refined": self.refined,
            "degenerate": self.degenerate,
        }
        if vectors:
            d["xhat"] = self.xhat.tolist()
            d["yhat"] = self.yhat.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CoexistenceEquilibrium":
        return cls(np.array(d["xhat"], dtype=float), np.array(d["yhat"], dtype=float), d["residual"],
                   d["basin_hits"], d["refined"], d["degenerate"])


def bisis_jacobian(x, y, p1: VirusParams, p2: VirusParams, g_a: Graph, g_b: Graph) -> np.ndarray:
    """Exact 2N x 2N Jacobian of the bi-SIS field, blocks ordered (x, y)."""
    a, b = g_a.adjacency, g_b.adjacency
    n = x.shape[0]
    free = 1.0 - x - y
    ax, by = a @ x, b @ y
    j = np.empty((2 * n, 2 * n))
    j[:n, :n] = p1.beta * free[:, None] * a
    j[:n, :n][np.diag_indices(n)] -= p1.beta * ax + p1.delta
    j[:n, n:] = np.diag(-p1.beta * ax)
    j[n:, :n] = np.diag(-p2.beta * by)
    j[n:, n:] = p2.beta * free[:, None] * b
    j[n:, n:][np.diag_indices(n)] -= p2.beta * by + p2.delta
    return j


def _field_norm(x, y, p1, p2, g_a, g_b) -> float:
    dx, dy = bisis_rhs(BiState(x, y), p1, p2, g_a, g_b)
    return float(max(np.abs(dx).max(), np.abs(dy).max()))


def _interior(x: np.ndarray, y: np.ndarray) -> bool:
    return bool(x.min() > INTERIOR_FLOOR and y.min() > INTERIOR_FLOOR and (x + y).max() < 1)


def newton_refine(x, y, p1, p2, g_a, g_b, tol: float = NEWTON_TOL, max_iter: int = 50):
    """Damped Newton on the bi-SIS field; returns (x, y, residual, success).

    Steps are halved until the residual decreases and the iterate stays
    strictly inside the simplex.  A singular Jacobian (continuum of
    equilibria) falls back to the minimum-norm least-squares step.
    """
    x = np.array(x, dtype=float)
    y = np.array(y, dtype=float)
    n = x.shape[0]
    res = _field_norm(x, y, p1, p2, g_a, g_b)
    for _ in range(max_iter):
        if res < tol:
            return x, y, res, True
        dx, dy = bisis_rhs(BiState(x, y), p1, p2, g_a, g_b)
        jac = bisis_jacobian(x, y, p1, p2, g_a, g_b)
        rhs = -np.concatenate([dx, dy])
        try:
            step = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, rhs, rcond=None)[0]
        lam = 1.0
        while lam > 1e-12:
            cx, cy = x + lam * step[:n], y + lam * step[n:]
            if _interior(cx, cy):
                cres = _field_norm(cx, cy, p1, p2, g_a, g_b)
                if cres < res:
                    break
            lam *= 0.5
        else:
            return x, y, res, False
        x, y, res = cx, cy, cres
    return x, y, res, res < tol


def _jacobian_singular(ce: CoexistenceEquilibrium, p1, p2, g_a, g_b, rtol: float = 1e-9) -> bool:
    sv = np.linalg.svd(bisis_jacobian(ce.xhat, ce.yhat, p1, p2, g_a, g_b), compute_uv=False)
    return bool(sv[-1] <= rtol * sv[0])


def _structured_starts(xstar: np.ndarray, ystar: np.ndarray, starts: int, rng: np.random.Generator) -> list[BiState]:
    grid = np.linspace(0.1, 0.9, min(9, starts))
    out = [BiState(alpha * xstar, (1.0 - alpha) * ystar) for alpha in grid]
    n = xstar.shape[0]
    for _ in range(starts - len(out)):
        u = rng.dirichlet(np.ones(3), size=n)
        out.append(BiState(u[:, 0], u[:, 1]))
    return out


def _run_starts(initials, p1, p2, g_a, g_b, cfg, jobs):
    if jobs <= 1 or len(initials) < 2:
        return integrate_many(initials, p1, p2, g_a, g_b, cfg)
    chunks = np.array_split(np.arange(len(initials)), min(jobs, len(initials)))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = pool.map(lambda idx: integrate_many([initials[i] for i in idx], p1, p2, g_a, g_b, cfg), chunks)
        return [r for part in parts for r in part]


def _refine_candidate(state: BiState, ode_residual: float, p1, p2, g_a, g_b) -> CoexistenceEquilibrium:
    x, y, res, ok = newton_refine(state.x, state.y, p1, p2, g_a, g_b)
    moved = max(np.abs(x - state.x).max(), np.abs(y - state.y).max())
    if ok and moved < NEAR_TOL:
        return CoexistenceEquilibrium(x, y, res, refined=True)
    return CoexistenceEquilibrium(state.x.copy(), state.y.copy(), ode_residual, refined=False)


def _linearly_stable(x, y, p1, p2, g_a, g_b) -> bool:
    return bool(np.linalg.eigvals(bisis_jacobian(x, y, p1, p2, g_a, g_b)).real.max() < 0)


def _settle_starts(initials, p1, p2, g_a, g_b, cfg: IntegratorConfig, jobs: int) -> list[CoexistenceEquilibrium | None]:
    """Integrate every start to an interior limit, refined by Newton.

    Slowly contracting instances spend most of their time creeping toward
    the attractor, so trajectories stop at the coarse ``STAGE_TOLS`` first.
    A Newton root found there is accepted only if it is interior, linearly
    stable and within ``EARLY_JUMP_TOL`` of the trajectory; otherwise the
    trajectory resumes at the next tolerance.  Entries are None for starts
    that never reach an interior limit.
    """
    states = list(initials)
    done: list[CoexistenceEquilibrium | None] = [None] * len(states)
    pending = list(range(len(states)))
    stages = [t for t in STAGE_TOLS if t > cfg.convergence_tol] + [cfg.convergence_tol]
    for k, tol in enumerate(stages):
        if not pending:
            break
        final = k == len(stages) - 1
        results = _run_starts([states[i] for i in pending], p1, p2, g_a, g_b, replace(cfg, convergence_tol=tol), jobs)
        still = []
        for i, r in zip(pending, results):
            if not r.converged or not _interior(r.final.x, r.final.y):
                continue
            if final:
                done[i] = _refine_candidate(r.final, r.residual, p1, p2, g_a, g_b)
                continue
            x, y, res, ok = newton_refine(r.final.x, r.final.y, p1, p2, g_a, g_b)
            moved = max(np.abs(x - r.final.x).max(), np.abs(y - r.final.y).max())
            if ok and moved < EARLY_JUMP_TOL and _linearly_stable(x, y, p1, p2, g_a, g_b):
                done[i] = CoexistenceEquilibrium(x, y, res)
            else:
                states[i] = r.final
                still.append(i)
        pending = still
    return done


def _sup_dist(a: CoexistenceEquilibrium, b: CoexistenceEquilibrium) -> float:
    return float(max(np.abs(a.xhat - b.xhat).max(), np.abs(a.yhat - b.yhat).max()))


def find_coexistence_equilibria(
    p1: VirusParams,
    p2: VirusParams,
    g_a: Graph,
    g_b: Graph,
    starts: int = 50,
    cfg: IntegratorConfig = IntegratorConfig(),
    seed: int = 0,
    report: RegimeReport | None = None,
    warm: Sequence[BiState] = (),
    jobs: int = 1,
) -> list[CoexistenceEquilibrium]:
    """Enumerate coexistence equilibria by multi-start integration plus Newton.

    Starts are any ``warm`` states, the blends ``(a x*, (1-a) y*)`` for ``a``
    in 0.1..0.9, then uniform random interior points.  Limits
    closer than ``DEDUP_TOL`` are merged; the result is sorted by
    ``sum(xhat)`` descending.  All entries are flagged ``degenerate`` when the
    equilibria appear to form a continuum.
    """
    if starts < 1:
        raise ValueError("starts must be positive")
    if report is None:
        report = classify_regime(p1, p2, g_a, g_b)
    if report.classification not in (Regime.COEXIST, Regime.NEUTRAL):
        raise ValueError(f"regime is {report.classification.value}, not COEXIST")
    rng = np.random.default_rng(seed)
    initials = list(warm) + _structured_starts(report.virus1.xstar, report.virus2.xstar, starts, rng)
    found: list[CoexistenceEquilibrium] = []
    for ce in _settle_starts(initials, p1, p2, g_a, g_b, cfg, jobs):
        if ce is None:
            continue
        for other in found:
            if _sup_dist(ce, other) < DEDUP_TOL:
                other.basin_hits += 1
                if ce.refined and not other.refined:
                    other.xhat, other.yhat, other.residual, other.refined = ce.xhat, ce.yhat, ce.residual, True
                break
        else:
            found.append(ce)
    if not found:
        raise EquilibriumError(f"none of {len(initials)} trajectories converged to an interior equilibrium")

    if _looks_degenerate(found, p1, p2, g_a, g_b):
        for ce in found:
            ce.degenerate = True
    found.sort(key=lambda c: -c.total)
    return found


def _looks_degenerate(found, p1, p2, g_a, g_b) -> bool:
    if any(ce.refined and _jacobian_singular(ce, p1, p2, g_a, g_b) for ce in found):
        return True
    for i, a in enumerate(found):
        for b in found[i + 1:]:
            if _sup_dist(a, b) >= NEAR_TOL:
                continue
            mx, my = 0.5 * (a.xhat + b.xhat), 0.5 * (a.yhat + b.yhat)
            x, y, _, ok = newton_refine(mx, my, p1, p2, g_a, g_b)
            if ok:
                mid = CoexistenceEquilibrium(x, y, 0.0)
                if _sup_dist(mid, a) >= DEDUP_TOL and _sup_dist(mid, b) >= DEDUP_TOL:
                    return True
    return False


def continue_branch(
    prev: CoexistenceEquilibrium,
    p1: VirusParams,
    p2: VirusParams,
    g_a: Graph,
    g_b: Graph,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> CoexistenceEquilibrium:
    """Track a CE branch to new parameters, seeded from ``prev``.

    Newton from the previous equilibrium first.  A large parameter step can
    land Newton on a boundary equilibrium, so a non-interior root counts as
    a failure; the ODE is then run from ``prev`` (which stays on the same
    branch by monotonicity) and its limit refined.
    """
    x, y, res, ok = newton_refine(prev.xhat, prev.yhat, p1, p2, g_a, g_b)
    if ok and _interior(x, y):
        return CoexistenceEquilibrium(x, y, res)
    (ce,) = _settle_starts([prev.state], p1, p2, g_a, g_b, cfg, 1)
    if ce is None:
        raise EquilibriumError("continuation lost the coexistence branch")
    return ce


def fixed_point_residual(ce: CoexistenceEquilibrium, p1: VirusParams, p2: VirusParams, g_a: Graph, g_b: Graph) -> float:
    """Sup-norm mismatch in ``A x = x / (tau1 (1-x-y))`` and its virus-2 analogue."""
    free = 1.0 - ce.xhat - ce.yhat
    rx = g_a.adjacency @ ce.xhat - ce.xhat / (p1.tau * free)
    ry = g_b.adjacency @ ce.yhat - ce.yhat / (p2.tau * free)
    return float(max(np.abs(rx).max(), np.abs(ry).max()))


@dataclass(eq=False)
class EquilibriumSet:
    report: RegimeReport
    coexistence: list[CoexistenceEquilibrium]
    starts: int = 0

    @property
    def virus1(self) -> SingleVirusEquilibrium:
        return self.report.virus1

    @property
    def virus2(self) -> SingleVirusEquilibrium:
        return self.report.virus2

    @property
    def degenerate(self) -> bool:
        return any(ce.degenerate for ce in self.coexistence)

    def to_dict(self, p1: VirusParams, p2: VirusParams, g_a: Graph, g_b: Graph) -> dict:
        return {
            "tau1": p1.tau,
            "tau2": p2.tau,
            "beta1": p1.beta,
            "delta1": p1.delta,
            "beta2": p2.beta,
            "delta2": p2.delta,
            "regime": self.report.to_dict(),
            "node_ids": list(g_a.node_ids),
            "xstar": self.virus1.xstar.tolist(),
            "ystar": self.virus2.xstar.tolist(),
            "xstar_residual": self.virus1.residual,
            "ystar_residual": self.virus2.residual,
            "starts": self.starts,
            "degenerate": self.degenerate,
            "coexistence": [
                dict(ce.to_dict(), fixed_point_residual=fixed_point_residual(ce, p1, p2, g_a, g_b))
                for ce in self.coexistence
            ],
        }


def solve_equilibria(
    p1: VirusParams,
    p2: VirusParams,
    g_a: Graph,
    g_b: Graph,
    starts: int = 50,
    cfg: IntegratorConfig = IntegratorConfig(),
    seed: int = 0,
    jobs: int = 1,
) -> EquilibriumSet:
    """Classify the instance and, in COEXIST, enumerate its coexistence equilibria."""
    report = classify_regime(p1, p2, g_a, g_b)
    ces: list[CoexistenceEquilibrium] = []
    if report.classification in (Regime.COEXIST, Regime.NEUTRAL):
        ces = find_coexistence_equilibria(p1, p2, g_a, g_b, starts, cfg, seed, report, jobs=jobs)
    return EquilibriumSet(report, ces, starts)


def write_equilibrium_json(eqset: EquilibriumSet, p1, p2, g_a: Graph, g_b: Graph, path: str | Path) -> None:
    d = eqset.to_dict(p1, p2, g_a, g_b)
    Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
