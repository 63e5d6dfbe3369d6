"""Numerical checks of the equilibrium bounds and monotonicity results.

Every strict inequality is checked as ``margin > -tol``: certified
equilibria carry residual-level noise, and regular graphs make some of the
bounds tight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .dynamics import IntegratorConfig, VirusParams
from .equilibria import (
    CoexistenceEquilibrium,
    EquilibriumSet,
    Regime,
    SingleVirusEquilibrium,
    classify_regime,
    continue_branch,
)
from .graph import Graph

SLACK = 1e-9


class Prop1Check(NamedTuple):
    avg: float
    bound: float
    xmax: float
    holds_lower: bool
    holds_upper: bool

    @property
    def holds(self) -> bool:
        return self.holds_lower and self.holds_upper


class Cor1Check(NamedTuple):
    margins_x: np.ndarray
    margins_y: np.ndarray
    min_margin: float
    holds: bool


class Prop2Check(NamedTuple):
    lhs: float
    rhs: float
    margin: float
    holds: bool


class MonotonicityCheck(NamedTuple):
    holds: bool
    first_violation: tuple | None
    ties: int


def check_prop1(eq: SingleVirusEquilibrium, g: Graph, p: VirusParams, slack: float = SLACK) -> Prop1Check:
    """``mean(x*) <= 1 - 1/(tau lambda) <= max(x*)``; ``holds_lower`` is the
    left inequality (average below bound), ``holds_upper`` the right."""
    if not eq.survived:
        raise ValueError("single-virus equilibrium is zero; the bound needs tau * lambda > 1")
    avg = float(eq.xstar.mean())
    bound = 1.0 - 1.0 / (p.tau * g.spectral_radius)
    xmax = float(eq.xstar.max())
    return Prop1Check(avg, bound, xmax, bound - avg > -slack, xmax - bound > -slack)


def _vectors(ce) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(ce, CoexistenceEquilibrium):
        return ce.xhat, ce.yhat
    x, y = ce
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def coupled_ratios(ce) -> tuple[np.ndarray, np.ndarray]:
    """Per-node ``f = y/(1-x)`` and ``g = x/(1-y)``."""
    x, y = _vectors(ce)
    return y / (1.0 - x), x / (1.0 - y)


def mu_nu(ce) -> tuple[float, float]:
    """``mu = mean(y/(1-x))``, ``nu = mean(x/(1-y))``."""
    f, g = coupled_ratios(ce)
    return float(f.mean()), float(g.mean())


def check_cor1(
    ce: CoexistenceEquilibrium, ex: SingleVirusEquilibrium, ey: SingleVirusEquilibrium, tol: float = SLACK
) -> Cor1Check:
    """Margins of ``x_i < x*_i (1 - y_i)`` and ``y_i < y*_i (1 - x_i)``."""
    if not (ex.survived and ey.survived):
        raise ValueError("both single-virus equilibria must be positive")
    x, y = _vectors(ce)
    mx = ex.xstar * (1.0 - y) - x
    my = ey.xstar * (1.0 - x) - y
    low = float(min(mx.min(), my.min()))
    return Cor1Check(mx, my, low, low > -tol)


def prop2_rhs(t1_lambdaA: float, t2_lambdaB: float) -> float:
    """``1 - 1/(tau1 lambda(A) + tau2 lambda(B) - 1)``; depends only on the sum."""
    return 1.0 - 1.0 / (t1_lambdaA + t2_lambdaB - 1.0)


def check_prop2(
    ce: CoexistenceEquilibrium, g_a: Graph, g_b: Graph, p1: VirusParams, p2: VirusParams, tol: float = SLACK
) -> Prop2Check:
    x, y = _vectors(ce)
    r1, r2 = p1.tau * g_a.spectral_radius, p2.tau * g_b.spectral_radius
    if r1 <= 1 or r2 <= 1:
        raise ValueError("both viruses must exceed their single-virus thresholds")
    lhs = float((x.sum() + y.sum()) / x.shape[0])
    rhs = prop2_rhs(r1, r2)
    return Prop2Check(lhs, rhs, rhs - lhs, rhs - lhs > -tol)


def _sweep_arrays(sweep: Sequence[tuple[float, CoexistenceEquilibrium]]):
    taus = np.array([t for t, _ in sweep], dtype=float)
    if np.any(np.diff(taus) <= 0):
        raise ValueError("sweep parameter must be strictly increasing")
    xs, ys = [], []
    for _, ce in sweep:
        x, y = _vectors(ce)
        if x.min() <= 0 or y.min() <= 0:
            raise ValueError("sweep point is not a coexistence equilibrium")
        xs.append(x)
        ys.append(y)
    return taus, np.array(xs), np.array(ys)


def _trend(name: str, values: np.ndarray, sign: int, tol: float):
    """Check ``sign * diff > -tol`` along axis 0; returns (violation, ties)."""
    d = sign * np.diff(values, axis=0)
    if d.ndim == 1:
        d = d[:, None]
    ties = int(np.count_nonzero(np.abs(d) <= tol))
    bad = np.argwhere(d <= -tol)
    if bad.size:
        k, i = bad[0]
        return (name, int(k), int(i), float(sign * d[k, i])), ties
    return None, ties


def _combine(checks) -> MonotonicityCheck:
    first = next((v for v, _ in checks if v is not None), None)
    return MonotonicityCheck(first is None, first, sum(t for _, t in checks))


def _direction(param: str) -> int:
    if param not in ("tau1", "tau2"):
        raise ValueError("param must be 'tau1' or 'tau2'")
    return 1 if param == "tau1" else -1


def verify_lemma1_monotonicity(
    sweep: Sequence[tuple[float, CoexistenceEquilibrium]], param: str = "tau1", tol: float = SLACK
) -> MonotonicityCheck:
    """Per node, ``xhat`` rises and ``yhat`` falls along a tau1 sweep (mirrored for tau2).

    ``first_violation`` is ``(quantity, step, node, signed change)``.
    """
    s = _direction(param)
    if len(sweep) < 2:
        return MonotonicityCheck(True, None, 0)
    _, xs, ys = _sweep_arrays(sweep)
    return _combine([_trend("xhat", xs, s, tol), _trend("yhat", ys, -s, tol)])


def verify_thm1_monotonicity(
    sweep: Sequence[tuple[float, CoexistenceEquilibrium]], param: str = "tau1", tol: float = SLACK
) -> MonotonicityCheck:
    """``f = y/(1-x)`` falls and ``g = x/(1-y)`` rises per node along a tau1
    sweep, as do their averages ``mu`` and ``nu`` (all mirrored for tau2)."""
    s = _direction(param)
    if len(sweep) < 2:
        return MonotonicityCheck(True, None, 0)
    _, xs, ys = _sweep_arrays(sweep)
    f = ys / (1.0 - xs)
    g = xs / (1.0 - ys)
    return _combine([
        _trend("f", f, -s, tol),
        _trend("g", g, s, tol),
        _trend("mu", f.mean(axis=1), -s, tol),
        _trend("nu", g.mean(axis=1), s, tol),
    ])


def exchange_rate_diagnostic(sweep: Sequence[tuple[float, CoexistenceEquilibrium]]) -> np.ndarray:
    """Finite-difference ``dy_i/dx_i`` along a sweep minus ``-y_i/(1-x_i)``.

    Negative entries agree with the sharper per-node exchange-rate
    inequality underlying the ratio monotonicity.  Shape (steps, N).
    """
    _, xs, ys = _sweep_arrays(sweep)
    dx, dy = np.diff(xs, axis=0), np.diff(ys, axis=0)
    xm, ym = 0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1])
    return dy / dx + ym / (1.0 - xm)


def local_monotonicity(
    ce: CoexistenceEquilibrium,
    p1: VirusParams,
    p2: VirusParams,
    g_a: Graph,
    g_b: Graph,
    rel_step: float = 1e-3,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> dict[str, tuple[MonotonicityCheck, MonotonicityCheck] | None]:
    """Lemma-1 and ratio checks on a 3-point continuation around ``ce``.

    Keys ``tau1`` / ``tau2`` map to (lemma check, ratio check), or None when
    a neighbouring point leaves the coexistence regime.
    """
    out: dict = {}
    for param in ("tau1", "tau2"):
        base = p1 if param == "tau1" else p2
        sweep = []
        for factor in (1.0 - rel_step, 1.0, 1.0 + rel_step):
            q = VirusParams(base.beta * factor, base.delta)
            q1, q2 = (q, p2) if param == "tau1" else (p1, q)
            if factor == 1.0:
                sweep.append((q.tau, ce))
                continue
            if classify_regime(q1, q2, g_a, g_b, cross_check=False).classification is not Regime.COEXIST:
                sweep = None
                break
            sweep.append((q.tau, continue_branch(ce, q1, q2, g_a, g_b, cfg)))
        out[param] = None if sweep is None else (
            verify_lemma1_monotonicity(sweep, param), verify_thm1_monotonicity(sweep, param)
        )
    return out


@dataclass
class BoundsReport:
    prop1_v1: Prop1Check | None
    prop1_v2: Prop1Check | None
    cor1: Cor1Check | None = None
    prop2: Prop2Check | None = None
    mu: float | None = None
    nu: float | None = None
    ce_index: int | None = None
    monotonicity: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def _mono_checks(self) -> list[MonotonicityCheck]:
        return [c for pair in self.monotonicity.values() if pair is not None for c in pair]

    @property
    def all_satisfied(self) -> bool:
        checks = [c.holds for c in (self.prop1_v1, self.prop1_v2, self.cor1, self.prop2) if c is not None]
        return all(checks) and all(c.holds for c in self._mono_checks())

    def to_dict(self) -> dict:
        def p1(c):
            return None if c is None else {
                "avg": c.avg, "bound": c.bound, "xmax": c.xmax,
                "holds_lower": c.holds_lower, "holds_upper": c.holds_upper,
            }

        def mono(c):
            return {"holds": c.holds, "first_violation": c.first_violation, "ties": c.ties}

        return {
            "ce_index": self.ce_index,
            "prop1_v1": p1(self.prop1_v1),
            "prop1_v2": p1(self.prop1_v2),
            "cor1": None if self.cor1 is None else {
                "margins_x": self.cor1.margins_x.tolist(),
                "margins_y": self.cor1.margins_y.tolist(),
                "min_margin": self.cor1.min_margin,
                "holds": self.cor1.holds,
            },
            "prop2": None if self.prop2 is None else self.prop2._asdict(),
            "mu": self.mu,
            "nu": self.nu,
            "monotonicity": {
                k: None if v is None else {"lemma1": mono(v[0]), "ratios": mono(v[1])}
                for k, v in self.monotonicity.items()
            },
            "all_satisfied": self.all_satisfied,
            "notes": list(self.notes),
        }


def evaluate_bounds(
    eqset: EquilibriumSet,
    p1: VirusParams,
    p2: VirusParams,
    g_a: Graph,
    g_b: Graph,
    monotonicity: bool = False,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> list[BoundsReport]:
    """One report per coexistence equilibrium, or a single single-virus report
    when the regime has none.  ``monotonicity`` adds the local continuation
    checks for each non-degenerate equilibrium."""
    ex, ey = eqset.virus1, eqset.virus2
    pa = check_prop1(ex, g_a, p1) if ex.survived else None
    pb = check_prop1(ey, g_b, p2) if ey.survived else None
    if not eqset.coexistence:
        return [BoundsReport(pa, pb, notes=[f"regime {eqset.report.classification.value}: no coexistence equilibria"])]
    out = []
    for k, ce in enumerate(eqset.coexistence):
        mu, nu = mu_nu(ce)
        rep = BoundsReport(pa, pb, check_cor1(ce, ex, ey), check_prop2(ce, g_a, g_b, p1, p2), mu, nu, k)
        if ce.degenerate:
            rep.notes.append("equilibria form a continuum; representatives only")
        elif monotonicity:
            rep.monotonicity = local_monotonicity(ce, p1, p2, g_a, g_b, cfg=cfg)
            for k, v in rep.monotonicity.items():
                if v is None:
                    rep.notes.append(f"{k} neighbourhood leaves the coexistence regime; monotonicity skipped")
        if not ce.refined:
            rep.notes.append(f"Newton refinement failed; ODE residual {ce.residual:.3e}")
        out.append(rep)
    return out
