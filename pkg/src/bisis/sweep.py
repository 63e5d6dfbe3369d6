"""Parameter sweeps over tau1 or tau2 and their CSV/JSON records."""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bounds import check_cor1, check_prop2, mu_nu, prop2_rhs
from .dynamics import IntegratorConfig, VirusParams
from .equilibria import (
    CoexistenceEquilibrium,
    EquilibriumError,
    Regime,
    classify_regime,
    continue_branch,
    find_coexistence_equilibria,
    single_sis_equilibrium,
)
from .graph import Graph, load_pair

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "tau1", "tau2", "classification", "ce_index", "ce_count", "mu", "nu", "avg_infected",
    "prop1_bound_v1", "prop1_bound_v2", "prop2_lhs", "prop2_rhs", "cor1_min_margin",
    "residual", "converged",
)
METRICS = ("regime", "mu", "nu", "avg_infected", "prop2_bound", "per_ce_vectors")
DEFAULT_METRICS = ("regime", "mu", "nu", "avg_infected", "prop2_bound")


@dataclass
class SweepSpec:
    graph_a_path: Path
    graph_b_path: Path
    fixed_param: str
    fixed_value: float
    swept_values: tuple[float, ...]
    delta1: float = 1.0
    delta2: float = 1.0
    outputs: tuple[str, ...] = DEFAULT_METRICS
    seed: int = 0
    starts: int = 50
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    jobs: int = 1

    def __post_init__(self) -> None:
        self.graph_a_path = Path(self.graph_a_path)
        self.graph_b_path = Path(self.graph_b_path)
        if self.fixed_param not in ("tau1", "tau2"):
            raise ValueError("fixed_param must be 'tau1' or 'tau2'")
        if not self.fixed_value > 0:
            raise ValueError("fixed_value must be positive")
        self.swept_values = tuple(float(v) for v in self.swept_values)
        if not self.swept_values or any(not v > 0 for v in self.swept_values):
            raise ValueError("swept values must be a non-empty list of positive numbers")
        if not (self.delta1 > 0 and self.delta2 > 0):
            raise ValueError("recovery rates must be positive")
        unknown = set(self.outputs) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown outputs {sorted(unknown)}; choose from {list(METRICS)}")
        if self.starts < 1 or self.jobs < 1:
            raise ValueError("starts and jobs must be positive")
        for p in (self.graph_a_path, self.graph_b_path):
            if not p.is_file():
                raise ValueError(f"graph file not readable: {p}")

    @property
    def swept_param(self) -> str:
        return "tau2" if self.fixed_param == "tau1" else "tau1"

    def params(self, swept: float) -> tuple[VirusParams, VirusParams]:
        t1, t2 = (self.fixed_value, swept) if self.fixed_param == "tau1" else (swept, self.fixed_value)
        return VirusParams.from_tau(t1, self.delta1), VirusParams.from_tau(t2, self.delta2)


def swept_range(lo: float, hi: float, points: int) -> tuple[float, ...]:
    if points < 1:
        raise ValueError("point count must be at least 1")
    if points == 1:
        return (float(lo),)
    if not lo < hi:
        raise ValueError("swept range needs lo < hi")
    return tuple(float(v) for v in np.linspace(lo, hi, points))


def load_spec(path: str | Path) -> SweepSpec:
    """Read a sweep config (TOML).  Graph paths resolve relative to the file.

    ::

        [sweep]
        graph_a = "as733_A.edges"
        graph_b = "as733_B.edges"
        fixed = "tau2"          # the held parameter
        fixed_value = 0.3173
        lo = 0.06               # swept range ...
        hi = 0.22
        points = 20             # ... or: values = [0.06, 0.1]
        delta1 = 1.0            # beta = tau * delta
        delta2 = 1.0
        outputs = ["regime", "mu", "nu", "avg_infected", "prop2_bound"]
        seed = 0
        starts = 50
        jobs = 1                # threads per multi-start

        [integrator]
        convergence_tol = 1e-10
        step_fraction = 0.01
        max_time = 1e6
    """
    path = Path(path)
    with path.open("rb") as fh:
        doc = tomllib.load(fh)
    try:
        sw = dict(doc["sweep"])
    except KeyError:
        raise ValueError(f"{path}: missing [sweep] table") from None
    integ = dict(doc.get("integrator", {}))
    known = {"graph_a", "graph_b", "fixed", "fixed_value", "lo", "hi", "points", "values",
             "delta1", "delta2", "outputs", "seed", "starts", "jobs"}
    extra = set(sw) - known
    if extra:
        raise ValueError(f"{path}: unknown [sweep] keys {sorted(extra)}")
    missing = {"graph_a", "graph_b", "fixed", "fixed_value"} - set(sw)
    if missing:
        raise ValueError(f"{path}: missing [sweep] keys {sorted(missing)}")
    if "values" in sw:
        if {"lo", "hi", "points"} & set(sw):
            raise ValueError(f"{path}: give either values or lo/hi/points, not both")
        values = tuple(sw["values"])
    else:
        try:
            values = swept_range(sw["lo"], sw["hi"], int(sw.get("points", 1)))
        except KeyError as e:
            raise ValueError(f"{path}: missing swept range key {e}") from None
    base = path.parent
    return SweepSpec(
        graph_a_path=base / sw["graph_a"],
        graph_b_path=base / sw["graph_b"],
        fixed_param=sw["fixed"],
        fixed_value=float(sw["fixed_value"]),
        swept_values=values,
        delta1=float(sw.get("delta1", 1.0)),
        delta2=float(sw.get("delta2", 1.0)),
        outputs=tuple(sw.get("outputs", DEFAULT_METRICS)),
        seed=int(sw.get("seed", 0)),
        starts=int(sw.get("starts", 50)),
        jobs=int(sw.get("jobs", 1)),
        integrator=IntegratorConfig(**integ),
    )


@dataclass
class SweepRecord:
    tau1: float
    tau2: float
    classification: str
    ce_index: int | None
    ce_count: int
    mu: float | None = None
    nu: float | None = None
    avg_infected: float | None = None
    prop1_bound_v1: float | None = None
    prop1_bound_v2: float | None = None
    prop2_lhs: float | None = None
    prop2_rhs: float | None = None
    cor1_min_margin: float | None = None
    residual: float | None = None
    converged: bool = True
    basin_hits: int | None = None
    refined: bool | None = None
    degenerate: bool | None = None
    error: str | None = None
    xhat: list[float] | None = None
    yhat: list[float] | None = None

    def csv_row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _point_records(tau1, tau2, p1, p2, g_a, g_b, spec: SweepSpec, warm: Sequence[CoexistenceEquilibrium]):
    report = classify_regime(p1, p2, g_a, g_b)
    cls = report.classification
    want = set(spec.outputs)
    r1, r2 = report.t1_lambdaA, report.t2_lambdaB
    ex, ey = report.virus1, report.virus2
    common = dict(
        tau1=tau1,
        tau2=tau2,
        classification=cls.value,
        prop1_bound_v1=1.0 - 1.0 / r1 if ex.survived else None,
        prop1_bound_v2=1.0 - 1.0 / r2 if ey.survived else None,
    )
    rhs = prop2_rhs(r1, r2) if (r1 > 1 and r2 > 1 and "prop2_bound" in want) else None
    if cls not in (Regime.COEXIST, Regime.NEUTRAL):
        n = g_a.node_count
        survivors = cls.survivors
        if survivors is None:
            return [SweepRecord(ce_index=None, ce_count=0, converged=False,
                                error="no convergence condition applies", **common)], []
        x = ex.xstar if survivors[0] else np.zeros(n)
        y = ey.xstar if survivors[1] else np.zeros(n)
        mu, nu = mu_nu((x, y))
        avg = float((x.sum() + y.sum()) / n)
        rec = SweepRecord(
            ce_index=None, ce_count=0,
            mu=mu if "mu" in want else None,
            nu=nu if "nu" in want else None,
            avg_infected=avg if "avg_infected" in want else None,
            prop2_lhs=avg if rhs is not None else None,
            prop2_rhs=rhs,
            residual=max(ex.residual, ey.residual),
            **common,
        )
        return [rec], []

    ces = find_coexistence_equilibria(
        p1, p2, g_a, g_b, spec.starts, spec.integrator, spec.seed, report,
        warm=[c.state for c in warm], jobs=spec.jobs,
    )
    out = []
    for k, ce in enumerate(ces):
        mu, nu = mu_nu(ce)
        p2c = check_prop2(ce, g_a, g_b, p1, p2)
        cor = check_cor1(ce, ex, ey)
        out.append(SweepRecord(
            ce_index=k, ce_count=len(ces),
            mu=mu if "mu" in want else None,
            nu=nu if "nu" in want else None,
            avg_infected=p2c.lhs if "avg_infected" in want else None,
            prop2_lhs=p2c.lhs if rhs is not None else None,
            prop2_rhs=rhs,
            cor1_min_margin=cor.min_margin,
            residual=ce.residual,
            converged=ce.refined,
            basin_hits=ce.basin_hits,
            refined=ce.refined,
            degenerate=ce.degenerate,
            xhat=ce.xhat.tolist() if "per_ce_vectors" in want else None,
            yhat=ce.yhat.tolist() if "per_ce_vectors" in want else None,
            **common,
        ))
    return out, ces


def run_sweep(spec: SweepSpec, g_a: Graph | None = None, g_b: Graph | None = None) -> list[SweepRecord]:
    """Evaluate every swept point in order, warm-starting from the previous
    point's equilibria.  Solver failures become error records."""
    if g_a is None or g_b is None:
        g_a, g_b = load_pair(spec.graph_a_path, spec.graph_b_path)
    records: list[SweepRecord] = []
    warm: list[CoexistenceEquilibrium] = []
    for value in spec.swept_values:
        p1, p2 = spec.params(value)
        try:
            recs, warm = _point_records(p1.tau, p2.tau, p1, p2, g_a, g_b, spec, warm)
        except (EquilibriumError, RuntimeError, ValueError) as e:
            log.warning("sweep point %s=%g failed: %s", spec.swept_param, value, e)
            recs, warm = [SweepRecord(p1.tau, p2.tau, "ERROR", None, 0, converged=False, error=str(e))], []
        records.extend(recs)
    return records


def records_to_csv(records: Sequence[SweepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def emit_csv(records: Sequence[SweepRecord], path: str | Path) -> None:
    if not records:
        raise ValueError("no records to write")
    Path(path).write_text(records_to_csv(records), encoding="utf-8")


def records_to_json(records: Sequence[SweepRecord], meta: dict | None = None) -> str:
    doc = {"meta": meta or {}, "records": [asdict(r) for r in records]}
    return json.dumps(doc, indent=2) + "\n"


def emit_json(records: Sequence[SweepRecord], path: str | Path, meta: dict | None = None) -> None:
    if not records:
        raise ValueError("no records to write")
    Path(path).write_text(records_to_json(records, meta), encoding="utf-8")


def records_from_json(text: str) -> tuple[list[SweepRecord], dict]:
    doc = json.loads(text)
    names = {f.name for f in fields(SweepRecord)}
    recs = []
    for d in doc["records"]:
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown record fields {sorted(extra)}")
        recs.append(SweepRecord(**d))
    return recs, doc.get("meta", {})


def spec_meta(spec: SweepSpec) -> dict:
    return {
        "graph_a": spec.graph_a_path.name,
        "graph_b": spec.graph_b_path.name,
        "fixed_param": spec.fixed_param,
        "fixed_value": spec.fixed_value,
        "swept_param": spec.swept_param,
        "delta1": spec.delta1,
        "delta2": spec.delta2,
        "seed": spec.seed,
        "starts": spec.starts,
    }


def _bisect(fn, lo: float, hi: float, iters: int = 60) -> float:
    """Boundary of ``fn(t) > 1`` between ``lo`` (true) and ``hi`` (false)."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fn(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def coexistence_corridor(g_a: Graph, g_b: Graph, param: str, fixed: float) -> tuple[float, float] | None:
    """Open interval of the swept tau where both invasion quantities exceed 1.

    ``param`` names the swept parameter; the other is held at ``fixed``.
    Along a tau1 sweep ``tau1 lambda(diag(1-y*) A)`` is linear in tau1 and
    ``tau2 lambda(diag(1-x*) B)`` decreases, so the lower end is closed form
    and the upper end is found by bisection.  Returns None if empty.
    """
    if param == "tau1":
        held, held_g, swept_g = VirusParams.from_tau(fixed), g_b, g_a
    elif param == "tau2":
        held, held_g, swept_g = VirusParams.from_tau(fixed), g_a, g_b
    else:
        raise ValueError("param must be 'tau1' or 'tau2'")
    eh = single_sis_equilibrium(held, held_g, cross_check=False)
    if not eh.survived:
        return None
    lo = 1.0 / swept_g.scaled(1.0 - eh.xstar).spectral_radius

    def invasion_of_held(t: float) -> float:
        es = single_sis_equilibrium(VirusParams.from_tau(t), swept_g, cross_check=False)
        return fixed * held_g.scaled(1.0 - es.xstar).spectral_radius

    if invasion_of_held(lo) <= 1.0:
        return None
    hi = 2.0 * lo
    while invasion_of_held(hi) > 1.0:
        hi *= 2.0
        if hi > 1e6 * lo:
            raise EquilibriumError("coexistence corridor appears unbounded")
    return lo, _bisect(invasion_of_held, hi / 2.0 if hi > 2.0 * lo else lo, hi)


def continuation_sweep(
    g_a: Graph,
    g_b: Graph,
    param: str,
    fixed: float,
    values: Iterable[float],
    delta1: float = 1.0,
    delta2: float = 1.0,
    cfg: IntegratorConfig = IntegratorConfig(),
    starts: int = 20,
    seed: int = 0,
    branch: int = 0,
) -> list[tuple[float, CoexistenceEquilibrium]]:
    """Track one CE branch along increasing ``values`` of ``param``.

    The first point is solved by multi-start and ``branch`` picks among its
    equilibria (sorted by total virus-1 mass, descending); each later point
    is seeded from the previous equilibrium.
    """
    values = [float(v) for v in values]

    def params(v):
        t1, t2 = (v, fixed) if param == "tau1" else (fixed, v)
        return VirusParams.from_tau(t1, delta1), VirusParams.from_tau(t2, delta2)

    p1, p2 = params(values[0])
    ces = find_coexistence_equilibria(p1, p2, g_a, g_b, starts, cfg, seed)
    ce = ces[min(branch, len(ces) - 1)]
    out = [(values[0], ce)]
    for v in values[1:]:
        p1, p2 = params(v)
        ce = continue_branch(ce, p1, p2, g_a, g_b, cfg)
        out.append((v, ce))
    return out
