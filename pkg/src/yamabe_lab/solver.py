"""Unit-volume constant scalar curvature solves in a conformal class on a torus grid.

Unknowns are ``(phi, s)``.  The system is the Yamabe equation together with
the constraint ``int phi**(2n/(n-2)) dV_g = 1``; it is solved by Newton with
GMRES on the bordered Jacobian, preconditioned by the FFT inverse of a
constant-coefficient model operator.  A few steps of preconditioned descent on
the Sobolev quotient run first so Newton starts in the basin of a minimizer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .conformal import (
    ConformalFactor, YamabeConstants, as_factor, conformal_metric, positive_power,
    sobolev_quotient,
)
from .grid import MetricField, ScalarField, _hessian, _integrate, l2_norm, stencil_symbol

log = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton: int = 50
    descent_steps: int = 200
    multistart_count: int = 10
    seed: int = 0
    descent_tol: float = 1e-3
    dedup_tol: float = 1e-4
    init_amplitude: float = 0.3
    init_max_mode: int = 2

    def __post_init__(self):
        if self.newton_tol <= 0 or self.descent_tol <= 0 or self.dedup_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton < 1 or self.descent_steps < 0 or self.multistart_count < 0:
            raise ValueError("iteration counts must be positive")


@dataclass(eq=False)
class YamabeSolution:
    base_metric: MetricField
    phi: ConformalFactor
    s_const: float
    residual_linf: float
    volume: float
    iterations: int
    seed: int
    energy: float = float("nan")
    init_energy: float = float("nan")
    history: list[float] = field(default_factory=list)
    experimental: bool = False

    @property
    def metric(self) -> MetricField:
        return conformal_metric(self.base_metric, self.phi)

    def report(self) -> dict:
        return {
            "s_const": self.s_const,
            "residual_linf": self.residual_linf,
            "volume": self.volume,
            "iterations": self.iterations,
            "seed": self.seed,
            "energy": self.energy,
            "init_energy": self.init_energy,
            "history": list(self.history),
            "experimental": self.experimental,
            "phi_min": float(self.phi.values.min()),
            "phi_max": float(self.phi.values.max()),
        }


class _Problem:
    """Discrete operators of the Yamabe equation on a fixed background metric."""

    def __init__(self, g: MetricField):
        self.g = g
        self.grid = g.grid
        self.k = YamabeConstants(g.grid.dim)
        self.weights = g.sqrt_det * g.grid.cell_volume
        self.s_g = g.scalar
        self._model = self._model_symbol()

    def _model_symbol(self) -> np.ndarray:
        grid = self.grid
        gbar = self.g.inverse.reshape(-1, grid.dim, grid.dim).mean(axis=0)
        d = np.meshgrid(*[stencil_symbol(grid, a) for a in range(grid.dim)], indexing="ij")
        sym = sum(gbar[i, j] * d[i] * d[j] for i in range(grid.dim) for j in range(grid.dim))
        floor = min(gbar[i, i] * (2 * np.pi / grid.periods[i]) ** 2 for i in range(grid.dim))
        return self.k.c_n * sym, self.k.c_n * floor

    def lap(self, v: np.ndarray) -> np.ndarray:
        return self.g.trace(_hessian(self.g, v)[1])

    def integral(self, v: np.ndarray) -> float:
        return math.fsum((v * self.weights).ravel())

    def residual(self, phi: np.ndarray, s: float) -> tuple[np.ndarray, float]:
        k = self.k
        F = -k.c_n * self.lap(phi) + self.s_g * phi - s * positive_power(phi, k.q)
        G = self.integral(positive_power(phi, k.critical_exponent)) - 1.0
        return F, G

    def energy(self, phi: np.ndarray) -> float:
        return sobolev_quotient(self.g, ScalarField(self.grid, phi))

    def rayleigh_s(self, phi: np.ndarray) -> float:
        """Constant ``s`` making the residual orthogonal to ``phi``; equals the quotient at unit volume."""
        k = self.k
        num = self.integral(phi * (-k.c_n * self.lap(phi) + self.s_g * phi))
        return num / self.integral(positive_power(phi, k.critical_exponent))

    def precondition(self, r: np.ndarray, shift: float) -> np.ndarray:
        sym, floor = self._model
        denom = sym + abs(shift) + 0.1 * floor
        return np.real(np.fft.ifftn(np.fft.fftn(r) / denom))

    def newton_step(self, phi: np.ndarray, s: float, F: np.ndarray, G: float, rtol: float):
        k, N = self.k, phi.size
        shape = phi.shape
        pot = self.s_g - k.q * s * positive_power(phi, k.q - 1.0)
        col = -positive_power(phi, k.q)
        row = k.critical_exponent * positive_power(phi, k.critical_exponent - 1.0) * self.weights
        shift = float(np.mean(pot))
        scale = float(np.sum(row * col))

        def matvec(x):
            v = x[:N].reshape(shape)
            ds = x[N]
            top = -k.c_n * self.lap(v) + pot * v + col * ds
            return np.append(top.ravel(), np.sum(row * v))

        def prec(x):
            v = self.precondition(x[:N].reshape(shape), shift)
            return np.append(v.ravel(), x[N] / scale if scale != 0 else x[N])

        A = LinearOperator((N + 1, N + 1), matvec=matvec, dtype=float)
        M = LinearOperator((N + 1, N + 1), matvec=prec, dtype=float)
        b = -np.append(F.ravel(), G)
        x, info = gmres(A, b, rtol=rtol, atol=0.0, restart=60, maxiter=20, M=M)
        if info < 0:
            raise SolverFailure(f"GMRES breakdown (info={info})")
        return x[:N].reshape(shape), float(x[N])


def _descend(prob: _Problem, phi: np.ndarray, steps: int, tol: float) -> tuple[np.ndarray, int]:
    """Preconditioned descent on the Sobolev quotient; never increases it."""
    k = prob.k
    Q = prob.energy(phi)
    taken = 0
    for _ in range(steps):
        lam = prob.rayleigh_s(phi)
        r = -k.c_n * prob.lap(phi) + prob.s_g * phi - lam * positive_power(phi, k.q)
        d = prob.precondition(r, float(np.mean(np.abs(prob.s_g))))
        size = np.sqrt(prob.integral(d * d) / prob.integral(phi * phi))
        if size < tol:
            break
        alpha, moved = 1.0, False
        while alpha > 1e-6:
            trial = phi - alpha * d
            if trial.min() > 0:
                Qt = prob.energy(trial)
                if Qt < Q:
                    phi, Q, moved = trial, Qt, True
                    break
            alpha *= 0.5
        if not moved:
            break
        taken += 1
    vol = prob.integral(positive_power(phi, k.critical_exponent))
    return phi * vol ** (-1.0 / k.critical_exponent), taken


def _round_to_unit_volume(phi_x: np.ndarray, w_x: np.ndarray, p: float) -> np.ndarray:
    """Round an extended-precision factor to doubles keeping ``sum(phi**p w)`` at 1.

    Plain rounding leaves a volume error of about one ulp, which a uniform
    rescale cannot remove.  Points whose exact value lies closest to the
    neighbouring double are moved there until the error is smallest
    (largest-remainder rounding); every entry stays within one ulp.
    """
    phi = phi_x.astype(float)
    power = lambda v: np.exp(p * np.log(v.astype(np.longdouble)))
    excess = np.sum(power(phi) * w_x) - 1
    if excess == 0:
        return phi
    alt = np.nextafter(phi, -np.inf if excess > 0 else np.inf)
    gain = ((power(alt) - power(phi)) * w_x).ravel()
    remainder = ((phi_x - phi) / (alt - phi)).ravel()
    order = np.argsort(-remainder, kind="stable")
    totals = np.abs(excess + np.concatenate([[0], np.cumsum(gain[order])]))
    count = int(np.argmin(totals))
    flat = phi.ravel()
    flat[order[:count]] = alt.ravel()[order[:count]]
    return flat.reshape(phi.shape)


def solve_csc(g: MetricField, cfg: SolverConfig | None = None, init=None, seed: int | None = None) -> YamabeSolution:
    """Unit-volume constant scalar curvature metric ``phi**(4/(n-2)) g`` in the class of ``g``."""
    cfg = cfg or SolverConfig()
    prob = _Problem(g)
    k = prob.k
    if init is None:
        phi = np.ones(g.grid.points)
    else:
        phi = np.array(as_factor(init, g.grid).values, dtype=float)
    vol = prob.integral(positive_power(phi, k.critical_exponent))
    phi = phi * vol ** (-1.0 / k.critical_exponent)
    init_energy = prob.energy(phi)

    phi, _ = _descend(prob, phi, cfg.descent_steps, cfg.descent_tol)
    s = prob.rayleigh_s(phi)
    F, G = prob.residual(phi, s)
    history = [float(np.abs(F).max())]
    it = 0
    while history[-1] > cfg.newton_tol or abs(G) > 1e-13:
        if it >= cfg.max_newton:
            raise SolverFailure(
                f"Newton did not converge in {cfg.max_newton} iterations (residual {history[-1]:.3e})",
                {"history": history, "last_residual": history[-1]})
        it += 1
        rtol = max(1e-12, min(1e-3, 0.1 * history[-1]))
        dphi, ds = prob.newton_step(phi, s, F, G, rtol)
        merit = np.sqrt(np.sum(F * F) + G * G)
        alpha = 1.0
        while True:
            trial = phi + alpha * dphi
            if trial.min() > 0:
                Ft, Gt = prob.residual(trial, s + alpha * ds)
                if np.sqrt(np.sum(Ft * Ft) + Gt * Gt) < (1 - 1e-4 * alpha) * merit or alpha < 1e-3:
                    break
            alpha *= 0.5
            if alpha < 1e-10:
                raise SolverFailure("no positive Newton step found", {"history": history})
        phi, s, F, G = trial, s + alpha * ds, Ft, Gt
        history.append(float(np.abs(F).max()))
        log.debug("newton %d: |F| = %.3e, |G| = %.3e", it, history[-1], abs(G))

    # rescale in extended precision; a double-precision factor within an ulp of 1 cannot move phi
    phi_x = phi.astype(np.longdouble)
    w_x = prob.weights.astype(np.longdouble)
    for _ in range(2):
        vol = np.sum(np.exp(k.critical_exponent * np.log(phi_x)) * w_x)
        phi_x = phi_x * vol ** (-1.0 / k.critical_exponent)
    phi = _round_to_unit_volume(phi_x, w_x, k.critical_exponent)
    F, _ = prob.residual(phi, s)
    factor = ConformalFactor(ScalarField(g.grid, phi))
    return YamabeSolution(
        base_metric=g, phi=factor, s_const=float(s), residual_linf=float(np.abs(F).max()),
        volume=prob.integral(positive_power(phi, k.critical_exponent)), iterations=it,
        seed=cfg.seed if seed is None else seed, energy=prob.energy(phi), init_energy=init_energy,
        history=history, experimental=bool(s > 0))


def conformal_scalar(sol: YamabeSolution) -> np.ndarray:
    """Scalar curvature of ``sol.metric`` from the conformal change formula.

    Uses the solver's own discrete operator, so it is constant to the
    solver residual; the curvature of the assembled metric field is constant
    only up to truncation error.
    """
    prob = _Problem(sol.base_metric)
    phi = sol.phi.values
    return (-prob.k.c_n * prob.lap(phi) + prob.s_g * phi) / positive_power(phi, prob.k.q)


def phi_diagnostic(sol: YamabeSolution) -> float:
    """L2 norm of the Laplacian of ``conformal_scalar`` with respect to the solution metric."""
    gt = sol.metric
    st = conformal_scalar(sol)
    return l2_norm(gt, gt.trace(_hessian(gt, st)[1]))


def random_init(g: MetricField, rng: np.random.Generator, cfg: SolverConfig) -> ConformalFactor:
    w = g.grid.band_limited(rng, cfg.init_amplitude, max_mode=cfg.init_max_mode)
    return ConformalFactor(ScalarField(g.grid, np.exp(w)))


def phi_distance(a: YamabeSolution, b: YamabeSolution) -> float:
    return l2_norm(a.base_metric, a.phi.values - b.phi.values)


def multistart_run(g: MetricField, cfg: SolverConfig | None = None) -> tuple[list[YamabeSolution], dict, list]:
    """Solve from the constant start plus ``multistart_count`` random ones.

    Returns the deduplicated solutions sorted by ``s``, a map from each
    start's seed to the index of its class, and the failed starts.
    """
    cfg = cfg or SolverConfig()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.multistart_count)
    starts = [(None, cfg.seed)]
    for ss in seeds:
        starts.append((random_init(g, np.random.default_rng(ss), cfg), int(ss.generate_state(1)[0])))
    found: list[YamabeSolution] = []
    failures = []
    for init, seed in starts:
        try:
            found.append(solve_csc(g, cfg, init=init, seed=seed))
        except SolverFailure as exc:
            failures.append({"seed": seed, "error": str(exc), **exc.report})
    if not found:
        raise SolverFailure("all multistart solves failed", {"failures": failures})
    classes: list[YamabeSolution] = []
    members: list[int] = []
    for sol in sorted(found, key=lambda x: (x.s_const, x.seed)):
        dists = [phi_distance(sol, c) for c in classes]
        if dists and min(dists) <= cfg.dedup_tol:
            members.append(int(np.argmin(dists)))
        else:
            classes.append(sol)
            members.append(len(classes) - 1)
    order = sorted(found, key=lambda x: (x.s_const, x.seed))
    dedup_map = {str(sol.seed): idx for sol, idx in zip(order, members)}
    return classes, dedup_map, failures


def multistart_enumerate(g: MetricField, cfg: SolverConfig | None = None) -> list[YamabeSolution]:
    """Deduplicated multistart solutions, lowest ``s`` first.

    The head of the list is the numerical Yamabe representative.  Reports
    should read the length as "found at least k solutions".
    """
    return multistart_run(g, cfg)[0]


def multistart_spread(g: MetricField, cfg: SolverConfig | None = None) -> tuple[list[YamabeSolution], float]:
    """All multistart solutions (not deduplicated) and their maximal pairwise L2 distance in phi."""
    cfg = cfg or SolverConfig()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.multistart_count)
    sols = [solve_csc(g, cfg, init=random_init(g, np.random.default_rng(ss), cfg), seed=i)
            for i, ss in enumerate(seeds)]
    spread = max((phi_distance(a, b) for a in sols for b in sols), default=0.0)
    return sols, spread


def recenter(sol: YamabeSolution, cfg: SolverConfig | None = None, max_rounds: int = 6) -> YamabeSolution:
    """Re-solve in the class of ``sol.metric`` until its discrete curvature is as constant as rounding allows.

    The discrete curvature of ``phi**(4/(n-2)) g`` matches the discrete Yamabe
    operator only up to truncation error, so a solution metric is constant
    curvature only to that order.  Each round shrinks the mismatch by roughly
    the relative truncation error.  Returns the round whose base metric has
    the smallest scalar-curvature spread; its ``phi`` is 1 to that spread.
    """
    cfg = cfg or SolverConfig()
    best, best_spread = None, np.inf
    cur = sol
    for _ in range(max_rounds):
        base = cur.metric
        spread = float(np.ptp(base.scalar))
        if spread >= best_spread:
            break
        cur = solve_csc(base, cfg)
        best, best_spread = cur, spread
    return best


def solution_report(sols: list[YamabeSolution], cfg: SolverConfig, dedup_map: dict | None = None,
                    failures: list | None = None) -> dict:
    return {
        "config": asdict(cfg),
        "found_at_least": len(sols),
        "solutions": [s.report() for s in sols],
        "dedup_map": dedup_map or {},
        "failures": failures or [],
    }
