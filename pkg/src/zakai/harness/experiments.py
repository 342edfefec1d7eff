"""Per-kind experiment bodies.

Path-based kinds split into a worker ``_work_<kind>(cfg, indices)`` that
returns per-path arrays (first axis over ``indices``) and an aggregator
``_sum_<kind>(cfg, per_path, indices)`` that reduces them.  Workers only
see their own paths, so a failing path cannot touch another one, and every
reduction is over paths sorted by index, so results do not depend on how
indices are split among workers.
"""

from __future__ import annotations

import numpy as np

from ..direct import solve_direct_batch, strong_distances, summarize_strong
from ..fitting import fit_order
from ..grid import lp_norm
from ..hypotheses import check_parabolicity
from ..instances import INSTANCES
from ..pathwise import SolveConfig, fourier_oracle, solve_transformed_batch
from ..paths import BrownianPath, TimeGrid, sample_path, smooth
from ..suites import hypothesis_suite, ito_suite
from ..wong_zakai import solve_wz_batch, stratonovich_gap, summarize_wz, wz_distances
from .config import RunConfig
from .reporting import Table

__all__ = ["Outcome", "WORKERS", "SUMMARIZERS", "SUITE_RUNNERS", "check", "instance_for", "parabolicity_check"]


class Outcome:
    def __init__(self):
        self.tables = {}
        self.checks = []
        self.orders = {}
        self.summary = {}
        self.ladders = []


def check(name, value, threshold, passed) -> dict:
    return {"name": name, "value": float(value), "threshold": threshold, "passed": bool(passed)}


def instance_for(cfg: RunConfig):
    name = cfg.instance_name
    kw = dict(cfg.model)
    if name != "gbm_exact":
        kw["n"] = cfg.n
    return INSTANCES[name](**kw)


def parabolicity_check(cfg: RunConfig) -> dict | None:
    inst = instance_for(cfg)
    if inst.grid.scalar:
        return None
    rep = check_parabolicity(inst.model, np.linspace(0.0, cfg.horizon, 11), inst.grid)
    return check("parabolicity_min_eig", rep.min_eig, f">= {rep.nu:g}", rep.passed)


def _paths(cfg: RunConfig, indices, steps=None):
    tg = TimeGrid(cfg.horizon, cfg.steps if steps is None else steps)
    out = []
    for i in indices:
        p = sample_path(tg, 1, cfg.seed, int(i))
        if i in cfg.inject_nan:
            v = p.values.copy()
            v[tg.steps // 2:] = np.nan
            p = BrownianPath(tg, v, cfg.seed, int(i))
        out.append(p)
    return out


def _W(paths):
    return np.stack([p.values for p in paths])


def _levels(cfg):
    return sorted(cfg.ladder, reverse=True)


# -- gbm_exact ------------------------------------------------------------------


def _work_gbm_exact(cfg, indices):
    inst = instance_for(cfg)
    paths = _paths(cfg, indices)
    W = _W(paths)
    tg = paths[0].grid
    exact = inst.closed_form(cfg.horizon, W[:, -1, 0])
    sol = solve_transformed_batch(inst.model, W, tg, inst.grid, inst.u0, SolveConfig(**{**cfg.solver, "exact_scalar": True}), stride=0)
    fail = sol.fail_step.copy()
    rel = np.abs(sol.U_T[:, 0] - exact) / np.abs(exact)
    errs = []
    theta_cfg = SolveConfig(**{**cfg.solver, "exact_scalar": False})
    for f in _levels(cfg):
        s = solve_transformed_batch(inst.model, np.ascontiguousarray(W[:, ::f]), tg.coarsen(f), inst.grid, inst.u0, theta_cfg, stride=0)
        fail = np.where(fail < 0, s.fail_step, fail)
        errs.append(np.abs(s.U_T[:, 0] - exact) / np.abs(exact))
    return {"rel_error_exact": rel, "rel_error_theta": np.array(errs).T, "fail_step": fail}


def _sum_gbm_exact(cfg, pp, ok, out: Outcome):
    rel = pp["rel_error_exact"][ok]
    worst = float(np.max(rel)) if rel.size else float("nan")
    out.checks.append(check("exact_stepping_max_rel_error", worst, "<= 1e-12", worst <= 1e-12))
    tg = TimeGrid(cfg.horizon, cfg.steps)
    dts = [tg.coarsen(f).dt for f in _levels(cfg)]
    rms = np.sqrt(np.mean(pp["rel_error_theta"][ok] ** 2, axis=0))
    theta = cfg.solve_config().theta
    target = 2.0 if theta == 0.5 else 1.0
    tol = float(cfg.options.get("order_tol", 0.3))
    rows = [[dt, int(ok.sum()), e] for dt, e in zip(dts, rms)]
    out.tables["theta_ladder"] = Table(["dt", "n_paths", "rms_rel_error"], rows)
    if len(dts) >= 2:
        order, _ = fit_order(dts, rms)
        out.orders["theta"] = order
        out.checks.append(check("theta_order", order, f"{target:g} +/- {tol:g}", abs(order - target) <= tol))
        out.ladders.append({"name": "theta_ladder", "table": "theta_ladder", "x": "dt",
                            "series": [{"y": "rms_rel_error", "label": f"theta={theta:g}", "order": order}], "loglog": True})
    rows = [[int(i), float(e)] for i, e in zip(pp["index"], pp["rel_error_exact"])]
    out.tables["per_path"] = Table(["path", "rel_error_exact"], rows)
    out.summary["max_rel_error_exact"] = worst


# -- const_coeff_1d -------------------------------------------------------------


def _work_const_coeff_1d(cfg, indices):
    inst = instance_for(cfg)
    paths = _paths(cfg, indices)
    W = _W(paths)
    tg = paths[0].grid
    scfg = cfg.solve_config()
    exact = np.stack([g.values for g in fourier_oracle(inst.model, paths, inst.u0, symbol="exact")])
    disc = np.stack([g.values for g in fourier_oracle(inst.model, paths, inst.u0, symbol="discrete")])
    fail = np.full(len(paths), -1, dtype=np.int64)
    e_exact, e_disc = [], []
    for f in _levels(cfg):
        s = solve_transformed_batch(inst.model, np.ascontiguousarray(W[:, ::f]), tg.coarsen(f), inst.grid, inst.u0, scfg, stride=0)
        fail = np.where(fail < 0, s.fail_step, fail)
        e_exact.append(lp_norm(s.U_T - exact, inst.grid, 2))
        e_disc.append(lp_norm(s.U_T - disc, inst.grid, 2))
    return {"err_exact": np.array(e_exact).T, "err_discrete": np.array(e_disc).T, "fail_step": fail}


def _sum_const_coeff_1d(cfg, pp, ok, out: Outcome):
    tg = TimeGrid(cfg.horizon, cfg.steps)
    dts = [tg.coarsen(f).dt for f in _levels(cfg)]
    ee, ed = pp["err_exact"][ok], pp["err_discrete"][ok]
    rms_d = np.sqrt(np.mean(ed**2, axis=0))
    rows = [[dt, int(ok.sum()), a, b] for dt, a, b in zip(dts, np.max(ee, axis=0), rms_d)]
    out.tables["oracle_ladder"] = Table(["dt", "n_paths", "max_err_exact_symbol", "rms_err_discrete_symbol"], rows)
    tol = float(cfg.options.get("error_tol", 1e-3))
    worst = float(np.max(ee[:, -1]))
    out.checks.append(check("max_l2_error_vs_oracle", worst, f"<= {tol:g}", worst <= tol))
    if len(dts) >= 2:
        order, _ = fit_order(dts, rms_d)
        otol = float(cfg.options.get("order_tol", 0.3))
        target = 2.0 if cfg.solve_config().theta == 0.5 else 1.0
        out.orders["time"] = order
        out.checks.append(check("time_order", order, f"{target:g} +/- {otol:g}", abs(order - target) <= otol))
        out.ladders.append({"name": "oracle_ladder", "table": "oracle_ladder", "x": "dt",
                            "series": [{"y": "rms_err_discrete_symbol", "label": "vs discrete symbol", "order": order}],
                            "loglog": True})
    out.summary["max_err_exact_symbol_finest"] = worst


# -- zakai_default --------------------------------------------------------------


def _work_zakai_default(cfg, indices):
    inst = instance_for(cfg)
    paths = _paths(cfg, indices)
    W = _W(paths)
    tg = paths[0].grid
    scfg = cfg.solve_config()
    t = solve_transformed_batch(inst.model, W, tg, inst.grid, inst.u0, scfg, stride=0)
    d = solve_direct_batch(inst.model, W, tg, inst.grid, inst.u0, scfg, True, stride=0)
    fail = np.where(t.fail_step >= 0, t.fail_step, d.fail_step)
    h = inst.grid.h
    return {
        "l2_norm": lp_norm(t.U_T, inst.grid, 2),
        "mass": np.sum(t.U_T.reshape(len(paths), -1), axis=1) * h ** inst.grid.dim,
        "direct_distance": lp_norm(t.U_T - d.U_T, inst.grid, 2),
        "fail_step": fail,
    }


def _sum_zakai_default(cfg, pp, ok, out: Outcome):
    cols = ["l2_norm", "mass", "direct_distance"]
    out.tables["per_path"] = Table(["path"] + cols, [[int(i)] + [float(pp[c][j]) for c in cols] for j, i in enumerate(pp["index"])])
    for c in cols:
        v = pp[c][ok]
        out.summary[f"mean_{c}"] = float(np.mean(v))
        out.summary[f"median_{c}"] = float(np.median(v))
    finite = bool(np.all(np.isfinite(np.stack([pp[c][ok] for c in cols]))))
    out.checks.append(check("finite_solutions", float(finite), "== 1", finite))


# -- wong_zakai_ladder ----------------------------------------------------------


def _work_wong_zakai_ladder(cfg, indices):
    inst = instance_for(cfg)
    paths = _paths(cfg, indices)
    scfg = cfg.solve_config()
    stride = int(cfg.options.get("stride", 1))
    ref = solve_transformed_batch(inst.model, _W(paths), paths[0].grid, inst.grid, inst.u0, scfg, stride)
    sup, term, failed = wz_distances(inst.model, paths, inst.u0, cfg.meshes, scfg, True, stride, ref)
    out = {"sup_dist": sup.T, "terminal_dist": term.T, "fail_step": np.where(failed, 0, -1)}
    if inst.grid.scalar:
        nc = solve_wz_batch(inst.model, [smooth(p, cfg.meshes[-1]) for p in paths], inst.u0, scfg, False, 0)
        gap = np.abs(nc.U_T[:, 0] - ref.U_T[:, 0])
        par = inst.model.constant
        pred = stratonovich_gap(par["alpha"], par["b"], cfg.horizon, _W(paths)[:, -1, 0], float(inst.u0.values[0]))
        out["gap_error"] = np.abs(gap - pred)
    return out


def _sum_wong_zakai_ladder(cfg, pp, ok, out: Outcome):
    slack = float(cfg.options.get("slack", 0.1))
    rep = summarize_wz(cfg.meshes, pp["sup_dist"][ok].T, pp["terminal_dist"][ok].T, slack, True)
    rows = [[m, rep.n_paths, a, b] for m, a, b in zip(rep.meshes, rep.median_dist, rep.mean_dist)]
    out.tables["wz_ladder"] = Table(["m", "n_paths", "median_dist", "mean_dist"], rows)
    out.summary["wz"] = rep.as_dict()
    out.checks.append(check("medians_non_increasing", float(rep.monotone), f"slack {slack:g}", rep.monotone))
    if cfg.meshes[-1] == 1:
        worst = float(np.max(pp["sup_dist"][ok][:, -1]))
        out.checks.append(check("knot_coincidence", worst, "<= 1e-12", worst <= 1e-12))
    if "gap_error" in pp:
        worst = float(np.max(pp["gap_error"][ok]))
        out.checks.append(check("stratonovich_gap_error", worst, "<= 1e-10", worst <= 1e-10))
    out.ladders.append({"name": "wz_ladder", "table": "wz_ladder", "x": "m",
                        "series": [{"y": "median_dist", "label": "median", "order": None}], "loglog": False})


# -- strong_order ---------------------------------------------------------------


def _work_strong_order(cfg, indices):
    inst = instance_for(cfg)
    paths = _paths(cfg, indices)
    _, dist, failed = strong_distances(inst.model, _W(paths), paths[0].grid, inst.u0, cfg.solve_config(), cfg.ladder)
    return {"sq_dist_em": dist[False].T, "sq_dist_milstein": dist[True].T, "fail_step": np.where(failed, 0, -1)}


def _sum_strong_order(cfg, pp, ok, out: Outcome):
    tg = TimeGrid(cfg.horizon, cfg.steps)
    dts = [tg.coarsen(f).dt for f in _levels(cfg)]
    series = []
    for key, flag, lo, name in (("sq_dist_em", False, cfg.options.get("min_order", 0.4), "em"),
                                ("sq_dist_milstein", True, cfg.options.get("min_order_milstein", 0.8), "milstein")):
        rep = summarize_strong(dts, pp[key][ok].T, flag)
        rows = [[dt, rep.n_paths, e, s] for dt, e, s in zip(rep.dts, rep.errors, rep.stderr)]
        out.tables[f"strong_{name}"] = Table(["dt", "n_paths", "e_strong", "stderr"], rows)
        out.orders[name] = rep.order
        out.summary[name] = rep.as_dict()
        out.checks.append(check(f"{name}_monotone", float(rep.monotone), "non-increasing", rep.monotone))
        out.checks.append(check(f"{name}_order", rep.order, f">= {lo:g}", rep.order >= lo))
        series.append({"table": f"strong_{name}", "y": "e_strong", "label": name, "order": rep.order})
    out.ladders.append({"name": "strong_order", "x": "dt", "series": series, "loglog": True})


# -- suites ---------------------------------------------------------------------


def _run_ito_suite(cfg, out: Outcome):
    o = cfg.options
    res = ito_suite(cfg.seed, cfg.paths, cfg.steps, tuple(cfg.ladder), int(o.get("trace_instances", 1000)),
                    float(o.get("min_order", 0.35)))
    for c in res.checks:
        out.checks.append(check(c.name, c.value, c.threshold, c.passed))
    out.summary["exactness"] = res.details["exactness"]
    series = []
    for key in ("ito_ladder", "bilinear_ladder", "adjoint_ladder"):
        lad = res.details[key]
        out.tables[key] = Table(["dt", "n_paths", "rms_residual"], [[d, lad["n_paths"], r] for d, r in zip(lad["dts"], lad["rms"])])
        out.orders[key] = lad["order"]
        series.append({"table": key, "y": "rms_residual", "label": key.split("_")[0], "order": lad["order"]})
    out.ladders.append({"name": "ito_residuals", "x": "dt", "series": series, "loglog": True})


def _run_hypothesis_suite(cfg, out: Outcome):
    o = cfg.options
    res = hypothesis_suite(cfg.n, cfg.horizon, ratio_tol=float(o.get("ratio_tol", 0.2)),
                           slope_tol=float(o.get("slope_tol", 0.25)), mu_tol=float(o.get("mu_tol", 0.1)),
                           rough_growth=float(o.get("rough_growth", 1.5)))
    for c in res.checks:
        out.checks.append(check(c.name, c.value, c.threshold, c.passed))
    out.tables["checks"] = Table(["check", "value", "threshold", "passed"],
                                 [[c.name, c.value, c.threshold, c.passed] for c in res.checks])
    out.summary.update(res.details)


WORKERS = {
    "gbm_exact": _work_gbm_exact,
    "const_coeff_1d": _work_const_coeff_1d,
    "zakai_default": _work_zakai_default,
    "wong_zakai_ladder": _work_wong_zakai_ladder,
    "strong_order": _work_strong_order,
}

SUMMARIZERS = {
    "gbm_exact": _sum_gbm_exact,
    "const_coeff_1d": _sum_const_coeff_1d,
    "zakai_default": _sum_zakai_default,
    "wong_zakai_ladder": _sum_wong_zakai_ladder,
    "strong_order": _sum_strong_order,
}

SUITE_RUNNERS = {"ito_suite": _run_ito_suite, "hypothesis_suite": _run_hypothesis_suite}
