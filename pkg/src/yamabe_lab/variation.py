"""Volume-preserving metric curves and one-sided derivatives of the Yamabe constant.

Two settings share the same report types:

* grid metrics on the torus, where the Yamabe constant of ``[g_t]`` comes from
  ``solver.solve_csc``;
* warped products ``e^{2w(theta)} (dtheta^2 + g_sphere)`` over a circle, where
  tensors of the form ``a dtheta^2 + b g_sphere`` are stored as diagonal 2x2
  blocks and the Yamabe constant comes from ``product``.  Directions
  ``h = beta (-(n-1) dtheta^2 + g_sphere)`` keep the class inside the product
  family, so only the circle length changes along the curve.

Quotients are one-sided (t > 0) and extrapolated to t = 0 by fitting a
polynomial in t through all samples; the observed order of the remainder is
reported next to the value.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .conformal import (
    ConformalFactor, YamabeConstants, _maxpoint, _Z, as_factor, conformal_metric,
    positive_power, psi, sobolev_quotient, yamabe_energy,
)
from .grid import (
    GeometryError, MetricField, ScalarField, SymTensorField, _integrate, curvature,
    lin_scalar, phi_map, tensor_inner, volume,
)
from .product import (
    ProductGeometry, ProductSolution, ProductSolveError, first_derivative, product_energy,
    second_derivative_matrix, solve_product,
)
from .solver import SolverConfig, SolverFailure, YamabeSolution, solve_csc

CSC_TOL = 1e-6
CSV_COLUMNS = ["h_id", "t", "s_t", "quotient", "extrapolated", "formula_z", "formula_min_Zphi", "gap_2_9"]


class CurveError(ValueError):
    """Requested t leaves the set where ``gamma + t h`` is positive definite."""

    def __init__(self, message: str, t_max: float):
        super().__init__(message)
        self.t_max = t_max


# --------------------------------------------------------------------------
# curves on grid metrics

def project_trace_free(g: MetricField, h: SymTensorField) -> SymTensorField:
    """``h - (tr_g h / n) g``.

    A pointwise trace within rounding of zero is left alone, which makes the
    projection bitwise idempotent.
    """
    n = g.grid.dim
    hv = h.values if isinstance(h, SymTensorField) else np.asarray(h, dtype=float)
    tr = g.trace(hv)
    noise = 16 * n * np.finfo(float).eps * np.einsum("...ij,...ij->...", np.abs(g.inverse), np.abs(hv))
    tr = np.where(np.abs(tr) <= noise, 0.0, tr)
    return SymTensorField(g.grid, hv - (tr / n)[..., None, None] * g.values)


@dataclass(frozen=True, eq=False)
class VariationCurve:
    """``t -> (gamma + t h) (det gamma / det(gamma + t h))**(1/n)``."""

    gamma: MetricField
    h: SymTensorField
    correction_rule: str = "determinant"

    @cached_property
    def max_safe_t(self) -> float:
        # gamma + t h > 0 iff 1 + t lam > 0 for the eigenvalues of gamma^{-1} h
        a = np.einsum("...ij,...jk->...ik", self.gamma.inverse, self.h.values)
        lam = np.linalg.eigvals(a).real
        neg = lam.min()
        return math.inf if neg >= 0 else float(-1.0 / neg)

    def metric_at(self, t: float) -> MetricField:
        if t == 0:
            return self.gamma
        if abs(t) >= self.max_safe_t:
            raise CurveError(f"t={t:g} exceeds the maximal safe t={self.max_safe_t:.6g}", self.max_safe_t)
        n = self.gamma.grid.dim
        raw = self.gamma.values + t * self.h.values
        ratio = np.linalg.det(self.gamma.values) / np.linalg.det(raw)
        return MetricField(self.gamma.grid, positive_power(ratio, 1.0 / n)[..., None, None] * raw)

    def second_order_term(self, t: float) -> np.ndarray:
        """``g_t - gamma - t h``, which is O(t^2)."""
        return self.metric_at(t).values - self.gamma.values - t * self.h.values

    def taylor_constant(self, t: float) -> float:
        return float(np.abs(self.second_order_term(t)).max() / t ** 2)


def make_curve(gamma: MetricField, h_raw: SymTensorField, volume_tol: float = 1e-10) -> VariationCurve:
    v = volume(gamma)
    if abs(v - 1.0) > volume_tol:
        raise GeometryError(f"gamma must have unit volume, got {v:.15g}")
    return VariationCurve(gamma, project_trace_free(gamma, h_raw))


# --------------------------------------------------------------------------
# extrapolation

def richardson_extrapolate(ts, values) -> tuple[float, float]:
    """Value at t = 0 of the interpolating polynomial, and the observed order of the remainder.

    The order compares successive differences and is only meaningful for
    geometric ``ts``; it is nan when fewer than three samples are given or
    the differences vanish.
    """
    ts = np.asarray(ts, dtype=float)
    vs = np.asarray(values, dtype=float)
    if len(ts) == 0:
        return math.nan, math.nan
    if len(ts) == 1:
        return float(vs[0]), math.nan
    V = np.vander(ts, len(ts), increasing=True)
    coef = np.linalg.solve(V, vs)
    order = math.nan
    if len(ts) >= 3:
        d1, d2 = abs(vs[0] - vs[1]), abs(vs[1] - vs[2])
        if d1 > 0 and d2 > 0:
            order = math.log(d1 / d2) / math.log(ts[0] / ts[1])
    return float(coef[0]), order


def measured_order(ts, errors) -> float:
    """Least-squares slope of log(error) against log(t)."""
    ts, errors = np.asarray(ts, dtype=float), np.abs(np.asarray(errors, dtype=float))
    return float(np.polyfit(np.log(ts), np.log(errors), 1)[0])


@dataclass
class FDResult:
    t_samples: list[float]
    s_values: list[float]
    s_reference: float
    quotients: list[float]
    basins: list[int]
    extrapolated: float
    extrapolation_order: float
    per_basin: dict[int, float] = field(default_factory=dict)
    split: bool = False
    solutions: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("solutions")
        d["per_basin"] = {str(k): v for k, v in self.per_basin.items()}
        return d


def _split_by_basin(ts, qs, basins) -> tuple[dict[int, float], bool]:
    per = {}
    for b in sorted(set(basins)):
        idx = [i for i, x in enumerate(basins) if x == b]
        per[b] = richardson_extrapolate([ts[i] for i in idx], [qs[i] for i in idx])[0]
    return per, len(per) > 1


def _grid_fd(curve: VariationCurve, ts, cfg, reference, s_ref) -> FDResult:
    g = curve.gamma
    refs = reference or [ConformalFactor.one(g.grid)]
    refs = [as_factor(p, g.grid) for p in refs]
    if s_ref is None:
        s_ref = solve_csc(g, cfg, init=refs[0]).s_const
    s_vals, basins, sols = [], [], []
    # solve from the smallest t outward so each warm start is close
    order = np.argsort(ts)
    prev = refs[0]
    results = {}
    for i in order:
        sol = solve_csc(curve.metric_at(ts[i]), cfg, init=prev)
        prev = sol.phi
        dist = [np.sqrt(_integrate(g, (sol.phi.values - r.values) ** 2)) for r in refs]
        results[i] = (sol, int(np.argmin(dist)))
    for i in range(len(ts)):
        sol, b = results[i]
        s_vals.append(sol.s_const)
        basins.append(b)
        sols.append(sol)
    return _finish_fd(ts, s_vals, s_ref, basins, sols)


def _finish_fd(ts, s_vals, s_ref, basins, sols) -> FDResult:
    qs = [(s - s_ref) / t for s, t in zip(s_vals, ts)]
    per, split = _split_by_basin(ts, qs, basins)
    if split:
        value, order = math.nan, math.nan
    else:
        value, order = richardson_extrapolate(ts, qs)
    return FDResult(t_samples=list(map(float, ts)), s_values=list(map(float, s_vals)), s_reference=float(s_ref),
                    quotients=list(map(float, qs)), basins=basins, extrapolated=value,
                    extrapolation_order=order, per_basin=per, split=split, solutions=sols)


def fd_derivative(curve, t_list=(4e-4, 2e-4, 1e-4), cfg: SolverConfig | None = None,
                  reference=None, s_ref: float | None = None) -> FDResult:
    """One-sided quotients ``(s_[g_t] - s_gamma) / t`` and their extrapolation to t = 0.

    ``reference`` lists the Yamabe factors of ``[gamma]`` used to label the
    basin each solution lands in; when the samples fall into more than one
    basin no combined value is formed and ``per_basin`` carries the split.
    """
    ts = [float(t) for t in t_list]
    if len(ts) < 3 or any(t <= 0 for t in ts):
        raise ValueError("need at least three positive t values")
    if list(ts) != sorted(ts, reverse=True):
        raise ValueError("t_list must be decreasing")
    if isinstance(curve, ProductCurve):
        return _product_fd(curve, ts, s_ref)
    return _grid_fd(curve, ts, cfg or SolverConfig(descent_steps=0), reference, s_ref)


# --------------------------------------------------------------------------
# formulas

def _check_csc(g: MetricField, tol: float = CSC_TOL) -> float:
    phi = float(np.abs(phi_map(g).values).max())
    if phi > tol:
        warnings.warn(f"gamma is not CSC to {tol:g}: max |Phi(gamma)| = {phi:.3e}", stacklevel=3)
    return phi


def formula_derivative(gamma, h) -> float:
    """``int <-z, h> dV_gamma``."""
    if isinstance(gamma, WarpedProduct):
        return gamma.integrate(-gamma.inner(gamma.z, h))
    _check_csc(gamma)
    z = curvature(gamma)[2]
    return -_integrate(gamma, tensor_inner(gamma, z, h).values)


def formula_derivative_Zphi(gamma, h, phi_list) -> tuple[list[float], float]:
    """``int <-Z_phi, h> dV_gamma`` for each factor, and their minimum."""
    if not phi_list:
        raise ValueError("phi_list is empty")
    if isinstance(gamma, WarpedProduct):
        vals = [gamma.integrate(-gamma.inner(gamma.Z_phi(p), h)) for p in phi_list]
    else:
        from .conformal import Z_phi
        _check_csc(gamma)
        vals = [-_integrate(gamma, tensor_inner(gamma, Z_phi(gamma, p), h).values) for p in phi_list]
    vals = [float(v) for v in vals]
    return vals, min(vals)


@dataclass
class DerivativeReport:
    h_id: str
    fd_value: float
    formula_value_z: float
    formula_values_Zphi: list[float]
    min_Zphi: float
    t_samples: list[float]
    extrapolation_order: float
    quotients: list[float] = field(default_factory=list)
    s_values: list[float] = field(default_factory=list)
    basins: list[int] = field(default_factory=list)
    per_basin: dict = field(default_factory=dict)
    tracked_basin_value: float = math.nan
    gaps: list[float] = field(default_factory=list)

    @property
    def relative_error_z(self) -> float:
        return abs(self.fd_value - self.formula_value_z) / max(abs(self.fd_value), 1e-8)

    @property
    def relative_error_min(self) -> float:
        return abs(self.fd_value - self.min_Zphi) / max(abs(self.fd_value), 1e-8)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_basin"] = {str(k): v for k, v in self.per_basin.items()}
        d["relative_error_z"] = self.relative_error_z
        d["relative_error_min"] = self.relative_error_min
        return d

    def rows(self) -> list[dict]:
        gaps = self.gaps or [math.nan] * len(self.t_samples)
        return [{"h_id": self.h_id, "t": t, "s_t": s, "quotient": q, "extrapolated": self.fd_value,
                 "formula_z": self.formula_value_z, "formula_min_Zphi": self.min_Zphi, "gap_2_9": gap}
                for t, s, q, gap in zip(self.t_samples, self.s_values, self.quotients, gaps)]


def derivative_report(curve, h_id: str, phi_list=None, t_list=(4e-4, 2e-4, 1e-4),
                      cfg: SolverConfig | None = None, s_ref: float | None = None) -> DerivativeReport:
    gamma = curve.gamma
    fd = fd_derivative(curve, t_list, cfg=cfg, reference=phi_list, s_ref=s_ref)
    if phi_list is None:
        phi_list = [ConformalFactor.one(gamma.grid)] if isinstance(gamma, MetricField) else [np.ones(gamma.m)]
    fz = formula_derivative(gamma, curve.h)
    vals, mn = formula_derivative_Zphi(gamma, curve.h, phi_list)
    tracked = vals[fd.basins[-1]] if fd.basins and fd.basins[-1] < len(vals) else math.nan
    return DerivativeReport(
        h_id=h_id, fd_value=fd.extrapolated, formula_value_z=fz, formula_values_Zphi=vals, min_Zphi=mn,
        t_samples=fd.t_samples, extrapolation_order=fd.extrapolation_order, quotients=fd.quotients,
        s_values=fd.s_values, basins=fd.basins, per_basin=fd.per_basin, tracked_basin_value=tracked)


def write_reports_csv(reports: list[DerivativeReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerows(r.rows())


def write_reports_json(reports: list[DerivativeReport], path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)


# --------------------------------------------------------------------------
# finite-t identities

def _linearized_gap(g_t: MetricField, gamma: MetricField, h: SymTensorField, sol: YamabeSolution,
             s_gamma: np.ndarray, t: float) -> dict:
    """Both sides of the integrated linearized equation at finite t.

    ``s_gamma`` is the scalar curvature field of gamma; for a CSC metric it is
    the constant of the identity, and using the field keeps the algebra exact
    when gamma is CSC only to rounding.
    """
    n = gamma.grid.dim
    k = YamabeConstants(n)
    phi = sol.phi.values
    lhs = -_integrate(g_t, s_gamma * (phi - 1.0) / t * psi(phi, n))
    phiq = positive_power(phi, k.q)
    rhs = (_integrate(g_t, phiq * (sol.s_const - s_gamma)) / t
           - _integrate(g_t, phi * lin_scalar(gamma, h).values))
    return {"lhs": float(lhs), "rhs": float(rhs), "gap": float(abs(lhs - rhs))}


def identity_checks(curve: VariationCurve, t_list=(1e-2, 1e-3, 1e-4), cfg: SolverConfig | None = None,
                    rng: np.random.Generator | None = None, random_factors: int = 20,
                    solutions: dict | None = None) -> dict:
    """Finite-t checks along the curve.

    For each t: the gap between the two sides of the integrated linearized
    Yamabe equation (should be O(t)), the volume quantity
    ``int (phi_t**(2n/(n-2)) - 1)/t dV`` (zero by the solver constraint), the
    Yamabe property of ``[g_t]`` (``s_t`` at most the total scalar curvature of
    ``g_t`` and of random unit-volume metrics in the class) and the Yamabe
    property of gamma (``yamabe_energy(gamma, phi) >= s_gamma`` for ``phi_t``
    and random unit-volume factors).
    """
    gamma, h = curve.gamma, curve.h
    cfg = cfg or SolverConfig(descent_steps=0)
    rng = rng or np.random.default_rng(0)
    k = YamabeConstants(gamma.grid.dim)
    s_field = gamma.scalar
    s_gamma = solve_csc(gamma, cfg).s_const
    rows = []
    prev = None
    for t in sorted(t_list):
        g_t = curve.metric_at(t)
        sol = (solutions or {}).get(t) or solve_csc(g_t, cfg, init=prev)
        prev = sol.phi
        phi = sol.phi.values
        gap = _linearized_gap(g_t, gamma, h, sol, s_field, t)
        weights = g_t.sqrt_det * g_t.grid.cell_volume
        vol_q = math.fsum((np.expm1(k.critical_exponent * np.log(phi)) * weights).ravel()) / t
        total_s = _integrate(g_t, g_t.scalar)
        rand_class, rand_energy = [], []
        for _ in range(random_factors):
            w = gamma.grid.band_limited(rng, 0.3, max_mode=2)
            f = np.exp(w)
            f = f * _integrate(gamma, positive_power(f, k.critical_exponent)) ** (-1.0 / k.critical_exponent)
            rand_class.append(sobolev_quotient(g_t, f) - sol.s_const)
            rand_energy.append(yamabe_energy(gamma, f) - s_gamma)
        rows.append({
            "t": t, "s_t": sol.s_const, **gap, "vol_quantity": float(vol_q),
            "slack_class": float(total_s - sol.s_const),
            "slack_class_random_min": float(min(rand_class, default=math.inf)),
            "slack_energy": float(yamabe_energy(gamma, sol.phi) - s_gamma),
            "slack_energy_random_min": float(min(rand_energy, default=math.inf)),
            "residual": sol.residual_linf,
        })
    ts = [r["t"] for r in rows]
    gaps = [r["gap"] for r in rows]
    order = measured_order(ts, gaps) if len(ts) >= 2 and min(gaps) > 0 else math.nan
    return {
        "s_gamma": s_gamma, "rows": rows, "gap_order": order,
        "max_vol_quantity": max(abs(r["vol_quantity"]) for r in rows),
        "min_slack": min(min(r["slack_class"], r["slack_class_random_min"], r["slack_energy"],
                             r["slack_energy_random_min"]) for r in rows),
    }


# --------------------------------------------------------------------------
# local-maximum test

def localmax_test(gamma, phi_list, h_samples, tol: float = 1e-10) -> dict:
    """Half-space data of each sampled h against every ``Z_phi``.

    For each h, ``s'(h)`` is estimated by the minimum over ``phi_list``.  gamma
    is flagged local-max-consistent only if every sampled ``s'(h) <= tol``.
    """
    if not phi_list:
        raise ValueError("phi_list is empty")
    per_h = []
    for i, h in enumerate(h_samples):
        vals, mn = formula_derivative_Zphi(gamma, h, phi_list)
        per_h.append({"h_index": i, "values": vals, "signs": [int(np.sign(v)) for v in vals],
                      "max_sign": int(max(np.sign(v) for v in vals)), "s_prime": mn})
    maxpoint = []
    for p in phi_list:
        if isinstance(gamma, WarpedProduct):
            maxpoint.append(gamma.l2_norm(gamma.maxpoint_residual(p)))
        else:
            from .conformal import maxpoint_residual
            from .grid import tensor_l2_norm
            maxpoint.append(tensor_l2_norm(gamma, maxpoint_residual(gamma, p)))
    return {
        "per_h": per_h,
        "local_max_consistent": all(r["s_prime"] <= tol for r in per_h),
        "maxpoint_residual_l2": maxpoint,
        "maxpoint_mechanism_active": [bool(m <= tol) for m in maxpoint],
    }


# --------------------------------------------------------------------------
# warped products over a circle

@dataclass(frozen=True, eq=False)
class WarpedProduct:
    """``gamma = e^{2w} (dtheta^2 + g_sphere)`` with w sampled on the circle grid.

    A tensor ``a dtheta^2 + b g_sphere`` is the array ``diag(a, b)`` of shape
    ``(m, 2, 2)``; its gamma-norm counts the sphere block ``n-1`` times.
    """

    geom: ProductGeometry
    w: np.ndarray

    @classmethod
    def unit_product(cls, geom: ProductGeometry) -> "WarpedProduct":
        c = -math.log(geom.L * geom.sphere_volume) / geom.n
        return cls(geom, np.full(geom.m, c))

    @classmethod
    def from_solution(cls, sol: ProductSolution) -> "WarpedProduct":
        """The unit-volume Yamabe metric ``phi**(4/(n-2)) (dtheta^2 + g_sphere)``."""
        n = sol.geometry.n
        return cls(sol.geometry, 2.0 / (n - 2) * np.log(sol.phi))

    @property
    def n(self) -> int:
        return self.geom.n

    @property
    def m(self) -> int:
        return self.geom.m

    @cached_property
    def A(self) -> np.ndarray:
        return np.exp(2 * self.w)

    @property
    def values(self) -> np.ndarray:
        return self.block(self.A, self.A)

    @staticmethod
    def block(a, b) -> np.ndarray:
        out = np.zeros(np.shape(a) + (2, 2))
        out[..., 0, 0] = a
        out[..., 1, 1] = b
        return out

    # the mean is removed first so constants differentiate to exact zeros
    def d1(self, f):
        f = np.asarray(f, dtype=float)
        return first_derivative(self.geom, f - f.mean())

    def d2(self, f):
        f = np.asarray(f, dtype=float)
        return second_derivative_matrix(self.geom) @ (f - f.mean())

    def integrate(self, f) -> float:
        return float(self.geom.sphere_volume * self.geom.spacing * np.sum(f * self.A ** (self.n / 2)))

    def volume(self) -> float:
        return self.integrate(np.ones(self.m))

    def inner(self, a, b) -> np.ndarray:
        return (a[:, 0, 0] * b[:, 0, 0] + (self.n - 1) * a[:, 1, 1] * b[:, 1, 1]) / self.A ** 2

    def trace(self, t) -> np.ndarray:
        return (t[:, 0, 0] + (self.n - 1) * t[:, 1, 1]) / self.A

    def l2_norm(self, t) -> float:
        return math.sqrt(max(self.integrate(self.inner(t, t)), 0.0))

    @cached_property
    def ricci(self) -> np.ndarray:
        n, w1, w2 = self.n, self.d1(self.w), self.d2(self.w)
        return self.block(-(n - 1) * w2, (n - 2) - w2 - (n - 2) * w1 ** 2)

    @cached_property
    def scalar(self) -> np.ndarray:
        return self.trace(self.ricci)

    @cached_property
    def z(self) -> np.ndarray:
        return self.ricci - (self.scalar / self.n)[:, None, None] * self.values

    def hessian(self, f) -> np.ndarray:
        w1, f1 = self.d1(self.w), self.d1(f)
        return self.block(self.d2(f) - w1 * f1, w1 * f1)

    def laplacian(self, f) -> np.ndarray:
        return self.trace(self.hessian(f))

    def hess0(self, f) -> np.ndarray:
        return self.hessian(f) - (self.laplacian(f) / self.n)[:, None, None] * self.values

    def _parts(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.min() <= 0:
            raise GeometryError("conformal factor must be positive")
        u = positive_power(phi, 2.0 / (self.n - 2))
        return u, self.hess0(1.0 / u)

    def Z_phi(self, phi) -> np.ndarray:
        u, h0 = self._parts(phi)
        return _Z(self.z, u, h0, self.n)

    def uniqueness_residual(self, phi) -> np.ndarray:
        return self.Z_phi(phi) - self.z

    def maxpoint_residual(self, phi) -> np.ndarray:
        u, h0 = self._parts(phi)
        return _maxpoint(self.z, u, h0, self.n)


def orbit_factors(sol: ProductSolution, count: int) -> list[np.ndarray]:
    """``phi(theta - a) / phi(theta)`` for ``count`` equally spaced shifts ``a``.

    These are the Yamabe factors, relative to the metric of ``sol``, of the
    translated solutions.  ``count`` must divide the number of grid points so
    shifts are exact rolls.
    """
    m = sol.geometry.m
    if count < 1 or m % count:
        raise ValueError(f"count must divide {m}")
    return [np.roll(sol.phi, j * (m // count)) / sol.phi for j in range(count)]


@dataclass(frozen=True, eq=False)
class ProductCurve:
    """Curve through a warped product along ``h = beta (-(n-1) dtheta^2 + g_sphere)``.

    h is gamma-trace-free for any beta.  The determinant correction is a
    conformal change, so ``[g_t]`` is the product class with circle length
    ``int sqrt((A - (n-1) t beta) / (A + t beta)) dtheta``.
    """

    gamma: WarpedProduct
    beta: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return WarpedProduct.block(-(self.gamma.n - 1) * self.beta, self.beta)

    @cached_property
    def max_safe_t(self) -> float:
        A, n, b = self.gamma.A, self.gamma.n, self.beta
        lim = []
        if (b > 0).any():
            lim.append(np.min(A[b > 0] / ((n - 1) * b[b > 0])))
        if (b < 0).any():
            lim.append(np.min(A[b < 0] / -b[b < 0]))
        return float(min(lim)) if lim else math.inf

    def length_at(self, t: float) -> float:
        if abs(t) >= self.max_safe_t:
            raise CurveError(f"t={t:g} exceeds the maximal safe t={self.max_safe_t:.6g}", self.max_safe_t)
        A, n, b = self.gamma.A, self.gamma.n, self.beta
        ratio = (A - (n - 1) * t * b) / (A + t * b)
        return float(self.gamma.geom.spacing * np.sum(np.sqrt(ratio)))


def product_yamabe_constant(geom: ProductGeometry, init: np.ndarray | None = None) -> tuple[float, ProductSolution]:
    """Smallest functional value among the constant solution and the solution continued from ``init``.

    ``init`` is a unit-volume solution at a nearby length.
    """
    const = solve_product(geom)
    best = const
    if init is not None:
        try:
            sol = solve_product(geom, init=init, s_init=product_energy(geom, init))
            if sol.energy < best.energy:
                best = sol
        except ProductSolveError:
            pass
    return best.energy, best


def _product_fd(curve: ProductCurve, ts, s_ref) -> FDResult:
    geom0 = curve.gamma.geom
    L0 = curve.length_at(0.0)
    phi0 = np.exp((geom0.n - 2) / 2.0 * curve.gamma.w)
    ref_s, ref_sol = product_yamabe_constant(geom0.with_L(L0), init=phi0)
    s_ref = ref_s if s_ref is None else s_ref
    s_vals, sols, basins = [], [], []
    for t in ts:
        s, sol = product_yamabe_constant(geom0.with_L(curve.length_at(t)), init=ref_sol.phi)
        s_vals.append(s)
        sols.append(sol)
        basins.append(0 if sol.is_constant == ref_sol.is_constant else 1)
    return _finish_fd(ts, s_vals, s_ref, basins, sols)
