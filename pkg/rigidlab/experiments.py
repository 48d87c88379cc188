"""Named experiments: generate fields, run the operators and checks, write tables.

Each experiment writes <name>.csv (fixed header, %.12e numbers), optional secondary
tables <name>_<table>.csv and <name>_summary.json (sorted keys, config echo, version).
"""

from __future__ import annotations

import csv
import json
import subprocess
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import special_ortho_group

from rigidlab import __version__
from rigidlab.bv import PROP_CSV_HEADER, l1_convergence
from rigidlab.config import RigidLabConfig
from rigidlab.cz import (
    cz_decompose,
    find_lambda,
    jensen_check,
    oscillation_tail_fit,
    split_i_ii,
    tail_integral_check,
    verify_decomposition,
)
from rigidlab.event_log import ExperimentLog
from rigidlab.fields import FamilySpec, generate
from rigidlab.grid import bmo_seminorm, fsum, magnitude
from rigidlab.homotopy import (
    KernelSpec,
    envelope_constant,
    homotopy_residual,
    smooth_test_form,
    t_direct,
    t_kernel,
    weak_bound_ratio,
)
from rigidlab.log import logger
from rigidlab.rigidity import (
    REPORT_CSV_HEADER,
    estimate_constant,
    lp_rigidity_check,
    scaling_sweep,
    weak_rigidity_check,
)
from rigidlab.types import GridDomain, InvariantError, critical_exponent

FLOAT_FMT = "{:.12e}"
TEST_FORM_SUPPORT = 0.6
CROSSCHECK_MAX_RES = 9
WEAK_FAMILIES = ("screw_dislocation", "rotation_jump")
SCALE_SWEEP = [0.25, 0.4, 0.6, 1.0]
FRAME_TOL = 1e-4


def version_string() -> str:
    """git describe of the working tree, or v<package version> outside a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
        tag = out.stdout.strip()
        if tag:
            return tag
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def _fmt(v: Any) -> str:
    if v is None:
        return "degenerate"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    return path


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_summary(path: Path, summary: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, sort_keys=True, indent=2, default=_jsonable) + "\n", encoding="utf-8")
    return path


class Context:
    """Everything one experiment needs: config, output paths, event log."""

    def __init__(self, config: RigidLabConfig, events: ExperimentLog) -> None:
        self.config = config
        self.exp = config.experiment
        self.out = Path(self.exp.output_dir)
        self.events = events
        k = self.exp.kernel
        self.spec = KernelSpec(m_s=k.m_s, variant=k.variant, singular=k.singular, chunk=self.exp.chunk, threads=self.exp.threads)

    def domain(self, res: int | None = None) -> GridDomain:
        d = self.exp.domain
        return GridDomain(n=d.n, res=d.res if res is None else res, radius=d.radius)

    def table(self, suffix: str, header: list[str], rows: list[list[Any]]) -> Path:
        name = self.exp.name if not suffix else f"{self.exp.name}_{suffix}"
        path = write_csv(self.out / f"{name}.csv", header, rows)
        self.events.log_table(name, path, len(rows))
        return path

    def check(self, name: str, passed: bool, **detail: Any) -> bool:
        self.events.log_check(name, passed, detail or None)
        if not passed:
            logger.warning(f"check {name} failed: {detail}")
        return passed


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def run_verify_homotopy(ctx: Context) -> dict[str, Any]:
    exp = ctx.exp
    n = exp.domain.n
    rows, series = [], {}
    for res in exp.domain.res_list:
        dom = ctx.domain(res)
        for k in range(exp.forms):
            for degree in range(1, n):
                omega = smooth_test_form(dom, degree, seed=exp.seed + k, support=TEST_FORM_SUPPORT * dom.radius)
                value = homotopy_residual(omega, ctx.spec)
                rows.append([res, k, degree, value])
                series.setdefault((k, degree), []).append(value)
                logger.info(f"verify-homotopy res={res} form={k} degree={degree}: residual {value:.4e}")
    ctx.table("", ["res", "form", "degree", "residual"], rows)

    cross_rows = []
    coarse = exp.domain.res_list[0]
    if coarse <= CROSSCHECK_MAX_RES:
        dom = ctx.domain(coarse)
        for k in range(exp.forms):
            for degree in range(1, n):
                omega = smooth_test_form(dom, degree, seed=exp.seed + 100 + k)
                direct = t_direct(omega, ctx.spec)
                kern = t_kernel(omega, ctx.spec)
                gap = fsum(magnitude(kern - direct)[dom.mask]) / max(fsum(magnitude(direct)[dom.mask]), 1e-300)
                cross_rows.append([k, degree, gap, envelope_constant(omega, ctx.spec)])
        ctx.table("crosscheck", ["form", "degree", "direct_kernel_gap", "envelope_constant"], cross_rows)

    decreasing = {f"{k}/{d}": all(b < a for a, b in zip(v, v[1:])) for (k, d), v in series.items()}
    ok = ctx.check("residual_decreasing", all(decreasing.values()), series=decreasing)
    if not ok:
        raise InvariantError(f"homotopy residual does not decrease under refinement: {decreasing}")
    return {
        "residuals": {f"{k}/{d}": v for (k, d), v in series.items()},
        "finest_max": max(v[-1] for v in series.values()),
        "crosscheck_max_gap": max((r[2] for r in cross_rows), default=None),
    }


def _weak_families(ctx: Context, dom: GridDomain) -> list[FamilySpec]:
    """The configured family, then the screw dislocation and rotation jump it does not already cover."""
    exp = ctx.exp
    families = [exp.family]
    floor = 2 * dom.h
    for kind in WEAK_FAMILIES:
        if kind == exp.family.kind or (kind == "screw_dislocation" and dom.n != 3):
            continue
        base = FamilySpec(kind=kind, seed=exp.family.seed)
        # coarse grids need the core and the band at least two steps wide
        families.append(base.model_copy(update={
            "core_radius": max(base.core_radius, floor),
            "width": max(base.width, floor),
        }))
    return families


def run_rigidity_weak(ctx: Context) -> dict[str, Any]:
    exp = ctx.exp
    dom = ctx.domain()
    rows, reports, bounds = [], [], []
    frame = special_ortho_group.rvs(dom.n, random_state=exp.seed)
    frame_gaps: dict[str, float] = {}
    for family in _weak_families(ctx, dom):
        for s in exp.strengths:
            a, mu = generate(family.model_copy(update={"strength": s}), dom)
            label = f"{family.kind} strength={s:g}"
            report = weak_rigidity_check(a, mu, label=label, rotation=exp.rotation_source, spec=ctx.spec)
            ratio = weak_bound_ratio(mu, ctx.spec) if report.rhs_terms["curl_term"] > 0 else None
            reports.append(report)
            bounds.append(ratio)
            rows.append([family.kind, s, *report.csv_row(), ratio])
        if report.ratio is not None:
            turned = weak_rigidity_check(
                a.left_multiply(frame), mu.left_multiply(frame),
                label=f"{label} rotated", rotation=exp.rotation_source, spec=ctx.spec,
            )
            frame_gaps[family.kind] = abs(turned.ratio - report.ratio) / report.ratio
    ctx.table("", ["family", "strength", *REPORT_CSV_HEADER, "weak_bound_ratio"], rows)
    live = [r for r in reports if r.ratio is not None]
    constant = estimate_constant(live) if live else None
    ctx.check("weak_rigidity_finite", all(np.isfinite(r.ratio) for r in live), constant=constant)
    ctx.check("frame_invariance", all(g <= FRAME_TOL for g in frame_gaps.values()), gaps=frame_gaps)
    return {
        "constant": constant,
        "weak_bound_max": max((b for b in bounds if b is not None), default=None),
        "frame_gaps": frame_gaps,
        "reports": [r.to_dict() for r in reports],
    }


def run_rigidity_lp(ctx: Context) -> dict[str, Any]:
    exp = ctx.exp
    dom = ctx.domain()
    q = critical_exponent(dom.n)
    rows, reports = [], []
    for p in exp.exponents():
        for s in exp.strengths:
            a, mu = generate(exp.family.model_copy(update={"strength": s}), dom)
            report = lp_rigidity_check(
                a, mu, p, exp.m_bound, use_log_factor=exp.use_log_factor,
                label=f"strength={s:g}", rotation=exp.rotation_source, spec=ctx.spec,
            )
            reports.append(report)
            rows.append([s, *report.csv_row()])
    ctx.table("", ["strength", *REPORT_CSV_HEADER], rows)

    values = exp.sweep_values or (exp.strengths if exp.sweep_parameter == "strength" else SCALE_SWEEP)
    sweep_rows, sweeps = [], []
    for p in exp.exponents():
        variants = [exp.use_log_factor] + ([False] if abs(p - q) < 1e-12 and exp.use_log_factor else [])
        for use_log in variants:
            result = scaling_sweep(
                exp.family, dom, p, values,
                parameter=exp.sweep_parameter, use_log_factor=use_log, threads=exp.threads,
                rotation=exp.rotation_source, spec=ctx.spec,
            )
            sweeps.append({"p": p, "use_log_factor": use_log, **result.to_dict()})
            sweep_rows.append([p, exp.sweep_parameter, str(use_log).lower(), result.slope])
    ctx.table("sweep", ["p", "parameter", "use_log_factor", "slope"], sweep_rows)
    live = [r for r in reports if r.ratio is not None]
    return {
        "constant": estimate_constant(live) if live else None,
        "degenerate": sum(r.degenerate for r in reports),
        "reports": [r.to_dict() for r in reports],
        "sweeps": sweeps,
    }


def run_cz_demo(ctx: Context) -> dict[str, Any]:
    exp = ctx.exp
    dom = ctx.domain()
    a, mu = generate(exp.family, dom)
    tda = t_kernel(mu, ctx.spec)
    rows, details = [], []
    for p in exp.exponents():
        f = magnitude(tda) ** p
        dec = cz_decompose(f, exp.lam, p, domain=dom)
        ctx.check(f"cz_invariants_p={p:.6g}", all(dec.checks.values()), **dec.checks)
        verify_decomposition(dec)
        jensen = jensen_check(tda, dec)
        if not ctx.check(f"jensen_p={p:.6g}", bool(jensen["ok"]), max_ratio=jensen["max_ratio"]):
            raise InvariantError(f"Jensen bound fails on a selected cube: {jensen['max_ratio']}")
        split = split_i_ii(tda, exp.lam, p)
        lam_star = find_lambda(tda, p)
        detail = {"p": p, "decomposition": dec.summary(), "jensen": jensen, "split": split, "lambda_half": lam_star}
        if bmo_seminorm(tda) > 0:
            family = [c for c in dec.cubes if c.side >= 2] or None
            detail["oscillation_tail"] = oscillation_tail_fit(tda, family)
        details.append(detail)
        rows.append([
            p, exp.lam, len(dec.cubes), dec.union_measure, dec.total_integral,
            split["I"], split["I_prime"], split["II"], split["bmo"], jensen["max_ratio"], lam_star,
        ])
    ctx.table(
        "",
        ["p", "lam", "cubes", "union_measure", "total_integral", "I", "I_prime", "II", "bmo", "jensen_max", "lambda_half"],
        rows,
    )

    tail_rows = []
    for x in np.linspace(1.0, 5.0, 10):
        for qv in np.linspace(0.0, 1.0, 10):
            t = tail_integral_check(float(x), float(qv))
            tail_rows.append([t["x"], t["q"], t["lhs"], t["rhs"], t["margin"]])
    ctx.table("tail", ["x", "q", "lhs", "rhs", "margin"], tail_rows)
    ctx.check("tail_estimate", True, cases=len(tail_rows))
    return {"levels": details, "tail_min_margin": min(r[4] for r in tail_rows)}


def run_bv_check(ctx: Context) -> dict[str, Any]:
    exp = ctx.exp
    dom = ctx.domain()
    a, mu = generate(exp.family, dom)
    table = l1_convergence(a, mu, exp.rho_list, objective=exp.objective, threads=exp.threads)
    ctx.table("", PROP_CSV_HEADER, [r.csv_row() for r in table.rows])
    ctx.check("l1_monotone", True, errors=table.errors)
    return table.to_dict()


RUNNERS: dict[str, Callable[[Context], dict[str, Any]]] = {
    "verify-homotopy": run_verify_homotopy,
    "rigidity-weak": run_rigidity_weak,
    "rigidity-lp": run_rigidity_lp,
    "cz-demo": run_cz_demo,
    "bv-check": run_bv_check,
}


def run(config: RigidLabConfig) -> dict[str, Any]:
    """Run the configured experiment and write its artifacts; returns the summary."""
    exp = config.experiment
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    events_path = Path(config.event_log.file) if config.event_log.file else out / "events.jsonl"
    events = ExperimentLog(events_path, enabled=config.event_log.enabled)
    version = version_string()
    echo = config.model_dump(mode="json")
    events.log_run_start(exp.name, version, echo)
    ctx = Context(config, events)
    logger.info(f"running {exp.name} (n={exp.domain.n}, res={exp.domain.res}, threads={exp.threads})")
    try:
        results = RUNNERS[exp.name](ctx)
    except Exception as e:
        events.log_run_end(exp.name, 1, f"{type(e).__name__}: {e}")
        raise
    summary = {"experiment": exp.name, "version": version, "config": echo, "results": results}
    write_summary(out / f"{exp.name}_summary.json", summary)
    events.log_run_end(exp.name, 0)
    return summary
