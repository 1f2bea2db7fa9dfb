"""Experiment kinds driven by JSON configs.

Each runner takes a validated, default-filled config and a seed sequence and
returns ``(results, checks, tables)``.  ``checks`` is a list of
``Check`` records comparing a measured value with a tolerance taken from the
config; ``tables`` maps file stems to (columns, rows) written as CSV.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import conformal as cf
from . import grid as gg
from . import product as pl
from . import solver as sv
from . import variation as vl
from .io import field_to_dict

KINDS = ("curvature", "solve", "branch", "derivative", "identities", "localmax")


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    op: str  # "<=" or ">="
    passed: bool

    @classmethod
    def le(cls, name, value, tol):
        return cls(name, float(value), float(tol), "<=", bool(value <= tol))

    @classmethod
    def ge(cls, name, value, tol):
        return cls(name, float(value), float(tol), ">=", bool(value >= tol))


# --------------------------------------------------------------------------
# geometry construction

def make_grid(spec: dict, points=None) -> gg.PeriodicGrid:
    pts = tuple(points or spec["points"])
    periods = tuple(spec.get("periods") or (2 * math.pi,) * len(pts))
    return gg.PeriodicGrid(pts, periods)


def make_metric(spec: dict, rng: np.random.Generator, points=None) -> gg.MetricField:
    """Metric families.

    ``flat``: the identity.  ``conformally_flat``: ``e^{2w}`` times the
    identity.  ``negative_torus``: ``diag(1, e^{2w}, 1, ...)``.  In both, w is
    ``amplitude * sin(x_axis)``.  ``perturbed``: identity plus a seeded
    band-limited symmetric tensor of the given amplitude.
    """
    grid = make_grid(spec, points)
    fam = spec["metric"]
    amp = spec.get("amplitude", 0.2)
    x = grid.coords()
    if fam == "flat":
        return gg.MetricField.flat(grid)
    if fam == "conformally_flat":
        return gg.MetricField.conformally_flat(grid, amp * np.sin(x[spec.get("axis", 0)]))
    if fam == "negative_torus":
        w = amp * np.sin(x[spec.get("axis", 0)])
        vals = np.broadcast_to(np.eye(grid.dim), grid.points + (grid.dim, grid.dim)).copy()
        vals[..., 1, 1] = np.exp(2 * w)
        return gg.MetricField(grid, vals)
    if fam == "perturbed":
        vals = np.eye(grid.dim) + grid.band_limited_tensor(rng, amp, max_mode=spec.get("max_mode", 2))
        return gg.MetricField(grid, vals)
    raise ValueError(f"unknown metric family {fam!r}")


def conformally_flat_scalar(grid: gg.PeriodicGrid, w: np.ndarray, dw: list, d2w: list) -> np.ndarray:
    """Closed-form scalar curvature of ``e^{2w} delta``: ``-e^{-2w}(2(n-1) lap w + (n-1)(n-2)|dw|^2)``."""
    n = grid.dim
    lap = sum(d2w)
    grad2 = sum(d * d for d in dw)
    return -np.exp(-2 * w) * (2 * (n - 1) * lap + (n - 1) * (n - 2) * grad2)


def solver_config(cfg: dict) -> sv.SolverConfig:
    return sv.SolverConfig(**cfg.get("solver", {}))


def _rng(ss: np.random.SeedSequence, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + key))


def _grid_gamma(cfg: dict, ss) -> tuple[gg.MetricField, sv.YamabeSolution]:
    """Unit-volume CSC representative of the configured class after recentering."""
    g = make_metric(cfg["geometry"], _rng(ss, 0))
    scfg = solver_config(cfg)
    sol = sv.recenter(sv.solve_csc(g, scfg), scfg)
    return gg.normalize_volume(sol.metric), sol


def _h_samples(gamma: gg.MetricField, spec: dict, ss) -> list[tuple[str, gg.SymTensorField]]:
    out = []
    for i in range(spec.get("count", 5)):
        h = gamma.grid.band_limited_tensor(_rng(ss, 1, i), spec.get("amplitude", 1.0), max_mode=spec.get("max_mode", 2))
        out.append((f"h{i}", vl.project_trace_free(gamma, h)))
    if spec.get("include_minus_z", False):
        out.append(("minus_z", gg.SymTensorField(gamma.grid, -gg.curvature(gamma)[2].values)))
    return out


# --------------------------------------------------------------------------
# curvature

def run_curvature(cfg, ss):
    geo, chk = cfg["geometry"], cfg["checks"]
    res, checks = {}, []
    measure = cfg.get("measure", ["scalar"])
    if "scalar" in measure:
        g = make_metric(geo, _rng(ss, 0))
        s = g.scalar
        res["max_abs_scalar"] = float(np.abs(s).max())
        res["scalar_mean"] = float(s.mean())
        if "max_abs_scalar" in chk:
            checks.append(Check.le("max_abs_scalar", res["max_abs_scalar"], chk["max_abs_scalar"]))
    if "order" in measure:
        amp = geo.get("amplitude", 0.2)
        errs = []
        for N in cfg.get("resolutions", [16, 32, 64]):
            grid = gg.PeriodicGrid.cube(len(geo["points"]), N)
            x = grid.coords()[0]
            w = amp * np.sin(x)
            g = gg.MetricField.conformally_flat(grid, w)
            zero = np.zeros_like(x)
            dw = [amp * np.cos(x)] + [zero] * (grid.dim - 1)
            d2w = [-amp * np.sin(x)] + [zero] * (grid.dim - 1)
            exact = conformally_flat_scalar(grid, w, dw, d2w)
            errs.append(float(np.abs(g.scalar - exact).max()))
        orders = [gg.observed_order(a, b) for a, b in zip(errs, errs[1:])]
        res["order_errors"], res["orders"] = errs, orders
        if "min_order" in chk:
            checks.append(Check.ge("curvature_order", min(orders), chk["min_order"]))
    if "adjoint" in measure:
        g = make_metric({**geo, "metric": "perturbed", "amplitude": geo.get("amplitude", 0.1)}, _rng(ss, 2))
        rels = []
        for i in range(cfg.get("pairs", 10)):
            rng = _rng(ss, 3, i)
            f = gg.ScalarField(g.grid, g.grid.band_limited(rng, 1.0, max_mode=2))
            h = gg.SymTensorField(g.grid, g.grid.band_limited_tensor(rng, 1.0, max_mode=2))
            a = gg.integrate(g, gg.ScalarField(g.grid, f.values * gg.lin_scalar(g, h).values))
            b = gg.integrate(g, gg.tensor_inner(g, gg.lin_scalar_adjoint(g, f), h))
            rels.append(abs(a - b) / max(abs(a), abs(b), 1e-300))
        res["adjoint_relative_errors"] = rels
        if "adjoint_rel_error" in chk:
            checks.append(Check.le("adjoint_rel_error", max(rels), chk["adjoint_rel_error"]))
    if "psi" in measure:
        rng = _rng(ss, 4)
        worst = 0.0
        for _ in range(cfg.get("psi_samples", 1000)):
            n = int(rng.integers(3, 9))
            phi = float(np.exp(rng.uniform(np.log(0.05), np.log(20.0))))
            q = cf.YamabeConstants(n).q
            lhs = cf.positive_power(phi, q) - phi
            rhs = cf.psi(phi, n) * (phi - 1.0)
            worst = max(worst, abs(lhs - rhs) / (cf.positive_power(phi, q) + phi))
        at_one = {n: cf.psi(1.0, n) for n in range(3, 9)}
        exact = all(at_one[n] == 4.0 / (n - 2) for n in at_one)
        res["psi_max_rel_error"], res["psi_at_one"], res["psi_at_one_exact"] = worst, at_one, exact
        if "psi_rel_error" in chk:
            checks.append(Check.le("psi_rel_error", worst, chk["psi_rel_error"]))
            checks.append(Check.ge("psi_at_one_exact", float(exact), 1.0))
    if "cotton" in measure:
        errs = []
        for N in cfg.get("resolutions", [16, 32, 64]):
            grid = gg.PeriodicGrid.cube(3, N)
            x = grid.coords()
            # fixed smooth data so every resolution samples the same (g, phi)
            rng = _rng(ss, 5)
            c = rng.normal(size=6)
            vals = np.broadcast_to(np.eye(3), grid.points + (3, 3)).copy()
            vals[..., 0, 1] += 0.1 * c[0] * np.sin(x[2] + c[1])
            vals[..., 1, 0] = vals[..., 0, 1]
            vals[..., 2, 2] += 0.1 * c[2] * np.cos(x[0] + x[1])
            vals[..., 0, 0] += 0.1 * c[3] * np.sin(x[1])
            g = gg.MetricField(grid, vals)
            u = np.exp(0.1 * c[4] * np.sin(x[0] + x[2]) + 0.1 * c[5] * np.cos(x[1]))
            gt = cf.conformal_metric(g, cf.ConformalFactor.from_values(grid, u))
            errs.append(float(np.abs(gg.cotton3(g).values - gg.cotton3(gt).values).max()))
        orders = [gg.observed_order(a, b) for a, b in zip(errs, errs[1:])]
        res["cotton_errors"], res["cotton_orders"] = errs, orders
        if "cotton_min_order" in chk:
            checks.append(Check.ge("cotton_order", min(orders), chk["cotton_min_order"]))
    return res, checks, {}


# --------------------------------------------------------------------------
# solve

def run_solve(cfg, ss):
    chk = cfg["checks"]
    g = make_metric(cfg["geometry"], _rng(ss, 0))
    scfg = solver_config(cfg)
    sols, dmap, failures = sv.multistart_run(g, scfg)
    spread_sols, spread = sv.multistart_spread(g, scfg)
    best = sols[0]
    phi_diag = sv.phi_diagnostic(best)
    res = sv.solution_report(sols, scfg, dmap, failures)
    res.update({
        "multistart_spread": spread,
        "multistart_residuals": [s.residual_linf for s in spread_sols],
        "phi_diagnostic": phi_diag,
        "raw_metric_phi_map_linf": float(np.abs(gg.phi_map(best.metric).values).max()),
        "phi": field_to_dict(best.phi.phi) if cfg.get("write_phi", False) else None,
    })
    checks = []
    allsols = sols + spread_sols
    if "residual" in chk:
        checks.append(Check.le("residual", max(s.residual_linf for s in allsols), chk["residual"]))
    if "volume" in chk:
        checks.append(Check.le("volume", max(abs(s.volume - 1) for s in allsols), chk["volume"]))
    if "multistart_spread" in chk:
        checks.append(Check.le("multistart_spread", spread, chk["multistart_spread"]))
    if "phi_diagnostic" in chk:
        checks.append(Check.le("phi_diagnostic", phi_diag, chk["phi_diagnostic"]))
    return res, checks, {}


# --------------------------------------------------------------------------
# branch

def run_branch(cfg, ss):
    geo, chk = cfg["geometry"], cfg["checks"]
    geom = pl.ProductGeometry(geo["n"], geo["L"], geo.get("m", 128), geo.get("method", "spectral"))
    L0, L1 = cfg.get("L_range", [0.5 * geom.bifurcation_length(1), geom.L])
    root = pl.continue_branch(geom, (L0, L1))
    bifs = [p for br in root.all_branches() for p in br.bifurcation_points if p["kind"] == "bifurcation"]
    res = {"branches": pl.branch_json(root), "bifurcations": bifs,
           "analytic_bifurcations": [geom.bifurcation_length(k) for k in (1, 2, 3)]}
    checks = []
    if "bifurcation_L" in chk:
        target = geom.bifurcation_length(1)
        first = min((p["L"] for p in root.bifurcation_points), default=math.inf)
        checks.append(Check.le("bifurcation_L1", abs(first - target), chk["bifurcation_L"]))
    L_eval = cfg.get("L_eval")
    if L_eval is not None:
        sols = pl.enumerate_yamabe(geom.with_L(L_eval))
        const = [s for s in sols if s.is_constant]
        nonconst = [s for s in sols if not s.is_constant]
        margin = (const[0].energy - min(s.energy for s in nonconst)) if const and nonconst else -math.inf
        res["L_eval"] = {"L": L_eval, "solutions": [s.summary() for s in sols], "energy_margin": margin}
        if "energy_margin" in chk:
            checks.append(Check.ge("energy_margin", margin, chk["energy_margin"]))
    rows = pl.branch_rows(root, (L0, L1))
    return res, checks, {"branches": (pl.CSV_COLUMNS, rows)}


# --------------------------------------------------------------------------
# derivative

def _product_setup(cfg):
    geo = cfg["geometry"]
    geom = pl.ProductGeometry(geo["n"], geo["L"], geo.get("m", 128), geo.get("method", "spectral"))
    sols = pl.enumerate_yamabe(geom)
    star = sols[0]
    return geom, sols, star, vl.WarpedProduct.from_solution(star)


def _product_beta(geom, spec, rng):
    """Random trigonometric beta with a nonzero mean, deliberately not even in theta."""
    modes = spec.get("modes", 3)
    th = 2 * np.pi * geom.theta / geom.L
    beta = np.full(geom.m, spec.get("mean", 0.2))
    for k in range(1, modes + 1):
        a, b = rng.normal(size=2) / k ** 2
        beta += a * np.cos(k * th) + b * np.sin(k * th)
    return spec.get("amplitude", 0.1) * beta


def run_derivative(cfg, ss):
    chk, tl = cfg["checks"], cfg.get("t_list")
    if cfg["geometry"]["type"] == "product":
        geom, sols, star, wp = _product_setup(cfg)
        orbit = vl.orbit_factors(star, cfg.get("orbit_samples", 16))
        reports = []
        for i in range(cfg.get("h_samples", {}).get("count", 1)):
            beta = _product_beta(geom, cfg.get("h_samples", {}), _rng(ss, 1, i))
            curve = vl.ProductCurve(wp, beta)
            reports.append(vl.derivative_report(curve, f"beta{i}", phi_list=orbit, t_list=tl or (4e-3, 2e-3, 1e-3)))
        res = {"reports": [r.to_dict() for r in reports], "yamabe_energy": star.energy}
        checks = []
        if "min_law_rel" in chk:
            checks.append(Check.le("min_law_rel", max(r.relative_error_min for r in reports), chk["min_law_rel"]))
        return res, checks, {"derivatives": (vl.CSV_COLUMNS, [row for r in reports for row in r.rows()])}

    gamma, _ = _grid_gamma(cfg, ss)
    scfg = solver_config(cfg)
    s_ref = sv.solve_csc(gamma, scfg).s_const
    hs = _h_samples(gamma, cfg.get("h_samples", {}), ss)
    t_list = tl or (4e-4, 2e-4, 1e-4)
    reports = []
    for hid, h in hs:
        curve = vl.VariationCurve(gamma, h)
        reports.append(vl.derivative_report(curve, hid, t_list=t_list, cfg=scfg, s_ref=s_ref))
    res = {"reports": [r.to_dict() for r in reports], "s_gamma": s_ref,
           "phi_map_linf": float(np.abs(gg.phi_map(gamma).values).max())}
    checks = []
    if "relative_error" in chk:
        checks.append(Check.le("fd_vs_formula_rel", max(r.relative_error_z for r in reports), chk["relative_error"]))
    if "linearity" in chk and len(hs) >= 2:
        a, b = cfg.get("linearity_coefficients", [0.7, -0.4])
        h = gg.SymTensorField(gamma.grid, a * hs[0][1].values + b * hs[1][1].values)
        comb = vl.fd_derivative(vl.VariationCurve(gamma, h), t_list, cfg=scfg, s_ref=s_ref).extrapolated
        lin = a * reports[0].fd_value + b * reports[1].fd_value
        # combined tolerance: the per-direction relative tolerance applied to each term
        scale = abs(comb) + abs(a * reports[0].fd_value) + abs(b * reports[1].fd_value)
        res["linearity"] = {"coefficients": [a, b], "fd_combined": comb, "fd_linear": lin,
                            "relative": abs(comb - lin) / scale}
        checks.append(Check.le("linearity_rel", abs(comb - lin) / scale, chk["linearity"]))
    return res, checks, {"derivatives": (vl.CSV_COLUMNS, [row for r in reports for row in r.rows()])}


# --------------------------------------------------------------------------
# identities

def run_identities(cfg, ss):
    chk = cfg["checks"]
    gamma, _ = _grid_gamma(cfg, ss)
    hs = _h_samples(gamma, cfg.get("h_samples", {"count": 1, "amplitude": 0.1}), ss)
    scfg = solver_config(cfg)
    out, checks = [], []
    for hid, h in hs:
        rep = vl.identity_checks(vl.VariationCurve(gamma, h), cfg.get("t_list", [1e-2, 1e-3, 1e-4]), cfg=scfg,
                                 rng=_rng(ss, 6), random_factors=cfg.get("random_factors", 20))
        rep["h_id"] = hid
        out.append(rep)
    res = {"reports": out}
    if "vol_quantity" in chk:
        checks.append(Check.le("vol_quantity", max(r["max_vol_quantity"] for r in out), chk["vol_quantity"]))
    if "gap_order" in chk:
        target, tol = chk["gap_order"]
        checks.append(Check.le("gap_order_deviation", max(abs(r["gap_order"] - target) for r in out), tol))
    if "min_slack" in chk:
        checks.append(Check.ge("min_slack", min(r["min_slack"] for r in out), chk["min_slack"]))
    rows = [{"h_id": r["h_id"], "t": row["t"], "s_t": row["s_t"], "quotient": math.nan, "extrapolated": math.nan,
             "formula_z": math.nan, "formula_min_Zphi": math.nan, "gap_2_9": row["gap"]}
            for r in out for row in r["rows"]]
    return res, checks, {"identities": (vl.CSV_COLUMNS, rows)}


# --------------------------------------------------------------------------
# local max and uniqueness residuals

def _uniqueness_pairs(cfg):
    """Residual norms of ``Z_phi - z`` for the nonconstant minimizer at two resolutions.

    ``product_base``: gamma is the unit-volume product metric and phi the
    nonconstant minimizer.  ``yamabe_base``: gamma is the Yamabe metric and
    phi relates it to its half-period translate, so both metrics are Yamabe.
    The discretization estimate is the change of the norm under doubling m.
    """
    geo = cfg["geometry"]
    out = {}
    norms = {"product_base": [], "yamabe_base": []}
    for m in (geo.get("m", 128), 2 * geo.get("m", 128)):
        geom = pl.ProductGeometry(geo["n"], geo["L"], m, geo.get("method", "spectral"))
        star = pl.enumerate_yamabe(geom)[0]
        prod = vl.WarpedProduct.unit_product(geom)
        c = math.exp((geom.n - 2) / 2.0 * prod.w[0])
        norms["product_base"].append(prod.l2_norm(prod.uniqueness_residual(star.phi / c)))
        wp = vl.WarpedProduct.from_solution(star)
        half = vl.orbit_factors(star, 2)[1]
        norms["yamabe_base"].append(wp.l2_norm(wp.uniqueness_residual(half)))
        if m == geo.get("m", 128):
            out["identity_residual_at_one"] = float(np.abs(wp.uniqueness_residual(np.ones(m))).max())
            out["z_norm"] = wp.l2_norm(wp.z)
    for key, (a, b) in norms.items():
        est = abs(a - b)
        out[key] = {"residual_l2": a, "residual_l2_refined": b, "discretization_estimate": est,
                    "ratio": a / est if est > 0 else math.inf}
    return out


def run_localmax(cfg, ss):
    chk = cfg["checks"]
    checks = []
    if cfg["geometry"]["type"] == "product":
        geom, sols, star, wp = _product_setup(cfg)
        orbit = vl.orbit_factors(star, cfg.get("orbit_samples", 16))
        hs = [vl.ProductCurve(wp, _product_beta(geom, cfg.get("h_samples", {}), _rng(ss, 1, i))).h
              for i in range(cfg.get("h_samples", {}).get("count", 3))]
        res = {"localmax": vl.localmax_test(wp, orbit, hs)}
        uq = _uniqueness_pairs(cfg)
        res["uniqueness"] = uq
        if "uniqueness_ratio" in chk:
            for key in ("product_base", "yamabe_base"):
                checks.append(Check.ge(f"uniqueness_ratio_{key}", uq[key]["ratio"], chk["uniqueness_ratio"]))
        if "uniqueness_at_one" in chk:
            checks.append(Check.le("uniqueness_at_one", uq["identity_residual_at_one"], chk["uniqueness_at_one"]))
        return res, checks, {}

    gamma, _ = _grid_gamma(cfg, ss)
    hs = _h_samples(gamma, {**cfg.get("h_samples", {}), "include_minus_z": True}, ss)
    res = {"localmax": vl.localmax_test(gamma, [cf.ConformalFactor.one(gamma.grid)], [h for _, h in hs]),
           "uniqueness_at_one": float(np.abs(cf.uniqueness_residual(gamma, cf.ConformalFactor.one(gamma.grid)).values).max())}
    if "uniqueness_at_one" in chk:
        checks.append(Check.le("uniqueness_at_one", res["uniqueness_at_one"], chk["uniqueness_at_one"]))
    return res, checks, {}


RUNNERS = {
    "curvature": run_curvature, "solve": run_solve, "branch": run_branch,
    "derivative": run_derivative, "identities": run_identities, "localmax": run_localmax,
}


def checks_to_dicts(checks: list[Check]) -> list[dict]:
    return [asdict(c) for c in checks]
