"""Yamabe metrics on S^1(L) x S^{n-1}(1) with conformal factors depending on the circle.

The product metric has constant scalar curvature ``(n-1)(n-2)`` and the
Yamabe equation reduces to the periodic ODE

    -c_n phi'' + (n-1)(n-2) phi - s phi**q = 0.

Solves run in the subspace of functions even about theta = 0, which removes
the translation null mode of nonconstant solutions and fixes their phase up to
the half-period shift.  Continuation in L keeps ``s = (n-1)(n-2)`` fixed and
normalizes volume afterwards; the functional is scale invariant so nothing is
lost.  On the constant branch the linearization has kernel
``cos(2 pi k theta / L)`` exactly at ``L_k = 2 pi k / sqrt(n-2)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .conformal import YamabeConstants, positive_power


class ProductSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProductGeometry:
    n: int
    L: float
    m: int = 128
    method: str = "spectral"

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.m < 8 or self.m % 2:
            raise ValueError("m must be even and >= 8")
        if self.method not in ("spectral", "fd4"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def consts(self) -> YamabeConstants:
        return YamabeConstants(self.n)

    @property
    def sphere_scalar(self) -> float:
        """Scalar curvature of the product metric (that of the unit S^{n-1})."""
        return float((self.n - 1) * (self.n - 2))

    @property
    def sphere_volume(self) -> float:
        return 2 * math.pi ** (self.n / 2) / math.gamma(self.n / 2)

    @property
    def spacing(self) -> float:
        return self.L / self.m

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.m) * self.spacing

    def with_L(self, L: float) -> "ProductGeometry":
        return ProductGeometry(self.n, float(L), self.m, self.method)

    def bifurcation_length(self, k: int = 1) -> float:
        return 2 * math.pi * k / math.sqrt(self.n - 2)


@lru_cache(maxsize=32)
def _unit_second_derivative(m: int, method: str) -> np.ndarray:
    """Second-derivative matrix on a circle of length 1."""
    if method == "spectral":
        k = np.fft.fftfreq(m, d=1.0 / m)
        sym = -(2 * np.pi * k) ** 2
        return np.real(np.fft.ifft(sym[:, None] * np.fft.fft(np.eye(m), axis=0), axis=0))
    h = 1.0 / m
    D = np.zeros((m, m))
    for off, c in ((-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)):
        D[np.arange(m), (np.arange(m) + off) % m] = c / (12 * h * h)
    return D


def second_derivative_matrix(geom: ProductGeometry) -> np.ndarray:
    return _unit_second_derivative(geom.m, geom.method) / geom.L ** 2


def first_derivative(geom: ProductGeometry, phi: np.ndarray) -> np.ndarray:
    if geom.method == "spectral":
        k = np.fft.fftfreq(geom.m, d=1.0 / geom.m)
        k[geom.m // 2] = 0.0
        return np.real(np.fft.ifft(2j * np.pi * k / geom.L * np.fft.fft(phi)))
    h = geom.spacing
    r = lambda s: np.roll(phi, -s)
    return (8 * (r(1) - r(-1)) - (r(2) - r(-2))) / (12 * h)


def ode_residual(geom: ProductGeometry, phi: np.ndarray, s: float) -> np.ndarray:
    """``-c_n phi'' + (n-1)(n-2) phi - s phi**q`` on the circle grid."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (geom.m,):
        raise ValueError(f"expected {geom.m} samples, got {phi.shape}")
    if phi.min() <= 0:
        raise ValueError("phi must be positive")
    k = geom.consts
    return -k.c_n * second_derivative_matrix(geom) @ phi + geom.sphere_scalar * phi - s * positive_power(phi, k.q)


# --------------------------------------------------------------------------
# even subspace

def _extension(m: int) -> np.ndarray:
    half = m // 2
    E = np.zeros((m, half + 1))
    for j in range(m):
        E[j, min(j, m - j)] = 1.0
    return E


def extend(y: np.ndarray) -> np.ndarray:
    half = len(y) - 1
    return np.concatenate([y, y[-2:0:-1]]) if half > 0 else y


def restrict(phi: np.ndarray) -> np.ndarray:
    return phi[: len(phi) // 2 + 1].copy()


def symmetrize(phi: np.ndarray) -> np.ndarray:
    """Roll the maximum to index 0 and average with the reflection about it."""
    phi = np.roll(phi, -int(np.argmax(phi)))
    return 0.5 * (phi + np.roll(phi[::-1], 1))


class _Reduced:
    """Residual and Jacobians of the even-subspace ODE at fixed ``s = s_g``."""

    def __init__(self, geom: ProductGeometry):
        self.geom = geom
        self.k = geom.consts
        self.s = geom.sphere_scalar
        self.E = _extension(geom.m)
        self.D1 = _unit_second_derivative(geom.m, geom.method)

    def F(self, y: np.ndarray, L: float) -> np.ndarray:
        phi = extend(y)
        k = self.k
        out = -k.c_n * (self.D1 @ phi) / L ** 2 + self.s * phi - self.s * positive_power(phi, k.q)
        return restrict(out)

    def Jy(self, y: np.ndarray, L: float) -> np.ndarray:
        phi = extend(y)
        k = self.k
        full = -k.c_n * self.D1 / L ** 2 + np.diag(self.s - k.q * self.s * positive_power(phi, k.q - 1))
        return (full @ self.E)[: len(y)]

    def tol(self, L: float) -> float:
        """Residual floor set by rounding in the second-derivative matrix."""
        scale = self.k.c_n * np.abs(self.D1).max() / L ** 2 + self.k.q * self.s
        return max(1e-11, 100 * np.finfo(float).eps * scale)

    def JL(self, y: np.ndarray, L: float) -> np.ndarray:
        phi = extend(y)
        return restrict(2 * self.k.c_n * (self.D1 @ phi) / L ** 3)


def _newton_fixed_L(red: _Reduced, y: np.ndarray, L: float, maxit: int = 40) -> np.ndarray:
    tol = red.tol(L)
    for _ in range(maxit):
        F = red.F(y, L)
        if np.abs(F).max() < tol:
            return y
        dy = np.linalg.solve(red.Jy(y, L), -F)
        alpha = 1.0
        while (y + alpha * dy).min() <= 0:
            alpha *= 0.5
            if alpha < 1e-8:
                raise ProductSolveError("positivity lost in Newton")
        y = y + alpha * dy
    if np.abs(red.F(y, L)).max() < 10 * tol:
        return y
    raise ProductSolveError(f"Newton did not converge at L={L:.6g} (residual {np.abs(red.F(y, L)).max():.2e})")


# --------------------------------------------------------------------------
# solutions

@dataclass(eq=False)
class ProductSolution:
    geometry: ProductGeometry
    phi: np.ndarray
    s_const: float
    energy: float
    is_constant: bool
    phase: float = 0.0
    residual: float = 0.0
    is_yamabe: bool = False
    branch_id: str = "constant"

    def shifted(self, shift: int) -> np.ndarray:
        """Orbit representative ``phi(theta - shift * spacing)``."""
        return np.roll(self.phi, shift)

    def summary(self) -> dict:
        return {
            "n": self.geometry.n, "L": self.geometry.L, "branch_id": self.branch_id,
            "s_const": self.s_const, "S_value": self.energy, "is_yamabe": self.is_yamabe,
            "residual": self.residual, "phi_min": float(self.phi.min()),
            "phi_max": float(self.phi.max()),
        }


def product_energy(geom: ProductGeometry, phi: np.ndarray) -> float:
    """Scale-invariant total scalar curvature of ``phi**(4/(n-2)) (dtheta^2 + g_sphere)``."""
    k = geom.consts
    w = geom.spacing * geom.sphere_volume
    dphi = first_derivative(geom, phi)
    num = w * np.sum(k.c_n * dphi ** 2 + geom.sphere_scalar * phi ** 2)
    vol = w * np.sum(positive_power(phi, k.critical_exponent))
    return float(num / vol ** k.volume_exponent)


def normalize(geom: ProductGeometry, phi: np.ndarray, s: float) -> tuple[np.ndarray, float]:
    """Rescale ``(phi, s)`` so the conformal metric has unit volume."""
    k = geom.consts
    vol = geom.spacing * geom.sphere_volume * np.sum(positive_power(phi, k.critical_exponent))
    lam = vol ** (-1.0 / k.critical_exponent)
    return phi * lam, s * lam ** (1.0 - k.q)


def _make_solution(geom: ProductGeometry, phi: np.ndarray, branch_id: str) -> ProductSolution:
    s0 = geom.sphere_scalar
    phi_n, s_n = normalize(geom, phi, s0)
    shift = int(np.argmax(phi_n))
    phi_n = np.roll(phi_n, -shift)
    const = bool(np.ptp(phi_n) < 1e-8 * phi_n.max())
    return ProductSolution(
        geometry=geom, phi=phi_n, s_const=float(s_n), energy=product_energy(geom, phi_n),
        is_constant=const, phase=shift * geom.spacing,
        residual=float(np.abs(ode_residual(geom, phi_n, s_n)).max()),
        branch_id="constant" if const else branch_id)


def solve_product(geom: ProductGeometry, init=None, s_init: float | None = None,
                  branch_id: str = "solve") -> ProductSolution:
    """Newton-collocation solve, then unit-volume normalization and phase normalization.

    ``init`` is rescaled so that the fixed-``s`` solve uses ``s_init`` (the
    product value by default); any positive ``s`` is equivalent up to scaling.
    """
    k = geom.consts
    s_g = geom.sphere_scalar
    phi0 = np.ones(geom.m) if init is None else np.asarray(init, dtype=float)
    if phi0.min() <= 0:
        raise ValueError("init must be positive")
    if s_init is not None and s_init > 0:
        # a solution at s_init maps to one at s_g by phi -> (s_init/s_g)**(1/(q-1)) phi
        phi0 = phi0 * (s_init / s_g) ** (1.0 / (k.q - 1))
    red = _Reduced(geom)
    y = _newton_fixed_L(red, restrict(symmetrize(phi0)), geom.L)
    return _make_solution(geom, extend(y), branch_id)


# --------------------------------------------------------------------------
# continuation

@dataclass(eq=False)
class SolutionBranch:
    parameter_samples: list[tuple[float, ProductSolution]] = field(default_factory=list)
    branch_type: str = "constant"
    bifurcation_points: list[dict] = field(default_factory=list)
    children: list["SolutionBranch"] = field(default_factory=list)
    truncated: str | None = None

    @property
    def L_values(self) -> np.ndarray:
        return np.array([L for L, _ in self.parameter_samples])

    def all_branches(self) -> list["SolutionBranch"]:
        out = [self]
        for c in self.children:
            out.extend(c.all_branches())
        return out


def _index(J: np.ndarray) -> tuple[int, float, np.ndarray]:
    """Number of negative eigenvalues, the smallest-magnitude eigenvalue and its eigenvector."""
    lam, vec = np.linalg.eig(J)
    lam, vec = np.real(lam), np.real(vec)
    i = int(np.argmin(np.abs(lam)))
    return int(np.sum(lam < 0)), float(lam[i]), vec[:, i]


def _dominant_mode(y: np.ndarray) -> int:
    return int(np.argmax(np.abs(np.fft.rfft(extend(y)))[1:]) + 1)


def _tangent(red: _Reduced, y, L, prev=None, weight=1.0):
    A = np.hstack([red.Jy(y, L), red.JL(y, L)[:, None]])
    _, _, vt = np.linalg.svd(A)
    t = vt[-1]
    t = t / _wnorm(t, weight)
    if prev is not None and _wdot(t, prev, weight) < 0:
        t = -t
    return t


def _wdot(a, b, weight):
    return weight * np.dot(a[:-1], b[:-1]) + a[-1] * b[-1]


def _wnorm(a, weight):
    return math.sqrt(_wdot(a, a, weight))


def _correct(red: _Reduced, x_pred: np.ndarray, direction: np.ndarray, weight: float,
             maxit: int = 25) -> np.ndarray | None:
    """Newton on ``F(x) = 0`` with the hyperplane ``<direction, x - x_pred> = 0``."""
    x = x_pred.copy()
    tol = red.tol(x_pred[-1])
    for _ in range(maxit):
        y, L = x[:-1], x[-1]
        if y.min() <= 0 or L <= 0:
            return None
        F = red.F(y, L)
        g = _wdot(direction, x - x_pred, weight)
        if np.abs(F).max() < tol and abs(g) < tol:
            return x
        A = np.vstack([
            np.hstack([red.Jy(y, L), red.JL(y, L)[:, None]]),
            np.concatenate([weight * direction[:-1], [direction[-1]]])[None, :],
        ])
        dx = np.linalg.solve(A, -np.append(F, g))
        x = x + dx
    return None


def _locate(red: _Reduced, xa, xb, ia, weight, tol=1e-10):
    """Bisect along the secant between two branch points to where the index changes."""
    lo, hi = 0.0, 1.0
    ta = (xb - xa)
    x_lo = xa
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        xm = _correct(red, xa + mid * ta, ta / _wnorm(ta, weight), weight)
        if xm is None:
            break
        idx, _, _ = _index(red.Jy(xm[:-1], xm[-1]))
        if idx == ia:
            lo, x_lo = mid, xm
        else:
            hi = mid
        if (hi - lo) * abs(ta[-1]) < tol:
            break
    xm = _correct(red, xa + 0.5 * (lo + hi) * ta, ta / _wnorm(ta, weight), weight)
    return xm if xm is not None else x_lo


def continue_branch(geom: ProductGeometry, L_range: tuple[float, float], seed: ProductSolution | None = None,
                    step: float | None = None, max_steps: int = 2000, switch: bool = True,
                    branch_id: str = "constant", depth: int = 1) -> SolutionBranch:
    """Pseudo-arclength continuation in L over ``L_range`` starting at its first endpoint.

    Steps adapt within ``[1e-4, 0.1] * L_1``.  Changes of the Morse index of
    the even-subspace Jacobian mark singular points; where the L-component of
    the tangent keeps its sign the point is a bifurcation, located by
    bisection and switched onto along the critical eigenvector.
    """
    L0, L1 = map(float, L_range)
    red = _Reduced(geom.with_L(L0))
    Lref = geom.bifurcation_length(1)
    hmin, hmax = 1e-4 * Lref, 0.1 * Lref
    h = step or 0.02 * Lref
    weight = 1.0 / (geom.m // 2 + 1)
    direction = 1.0 if L1 >= L0 else -1.0

    if seed is None:
        y = np.ones(geom.m // 2 + 1)
    else:
        y = restrict(seed.phi * (seed.s_const / geom.sphere_scalar) ** (1.0 / (geom.consts.q - 1)))
    y = _newton_fixed_L(red, y, L0)
    x = np.append(y, L0)
    t = _tangent(red, y, L0)
    if t[-1] * direction < 0:
        t = -t
    branch = SolutionBranch(branch_type=branch_id)
    branch.parameter_samples.append((L0, _make_solution(geom.with_L(L0), extend(y), branch_id)))
    idx, lam, _ = _index(red.Jy(y, L0))

    for _ in range(max_steps):
        if (x[-1] - L1) * direction >= 0:
            break
        x_pred = x + h * t
        x_new = _correct(red, x_pred, t, weight)
        if x_new is None or _wnorm(x_new - x, weight) > 2.5 * h:
            h *= 0.5
            if h < hmin:
                branch.truncated = f"step collapse below {hmin:.2e} at L={x[-1]:.6g}"
                break
            continue
        t_new = _tangent(red, x_new[:-1], x_new[-1], prev=t, weight=weight)
        idx_new, lam_new, _ = _index(red.Jy(x_new[:-1], x_new[-1]))
        if idx_new != idx:
            xb = _locate(red, x, x_new, idx, weight)
            yb, Lb = xb[:-1], xb[-1]
            _, lam_b, vec = _index(red.Jy(yb, Lb))
            fold = t[-1] * t_new[-1] < 0
            point = {"L": float(Lb), "eigenvalue_before": lam, "eigenvalue_after": lam_new,
                     "eigenvalue_at": lam_b, "kind": "fold" if fold else "bifurcation",
                     "mode": _dominant_mode(vec)}
            branch.bifurcation_points.append(point)
            if switch and not fold and depth > 0:
                child = _switch(geom, red, xb, vec, L1, weight, h, f"{branch_id}/bif-{point['mode']}",
                                max_steps, depth - 1)
                if child is not None:
                    branch.children.append(child)
        x, t, idx, lam = x_new, t_new, idx_new, lam_new
        L = x[-1]
        branch.parameter_samples.append((float(L), _make_solution(geom.with_L(L), extend(x[:-1]), branch_id)))
        if _wnorm(x_new - x_pred, weight) < 0.1 * h:
            h = min(hmax, 1.5 * h)
    else:
        branch.truncated = "max_steps reached"
    return branch


def _switch(geom, red, xb, vec, L1, weight, h, branch_id, max_steps, depth) -> SolutionBranch | None:
    v = vec / (math.sqrt(weight) * np.linalg.norm(vec))
    if v[0] < 0:
        v = -v
    d = np.append(v, 0.0)
    for eps in (0.02, 0.01, 0.05):
        x_pred = xb + eps * d
        x_new = _correct(red, x_pred, d, weight)
        if x_new is None or np.abs(x_new[:-1] - xb[:-1]).max() < 1e-6:
            continue
        if x_new[:-1].min() < 0.5 * xb[:-1].min():
            continue  # collapsed toward the trivial solution
        direction = 1.0 if x_new[-1] >= xb[-1] else -1.0
        # continue along the new branch in whichever direction it leaves the bifurcation
        target = L1 if direction * (L1 - x_new[-1]) > 0 else x_new[-1] + direction * 10 * geom.bifurcation_length(1)
        seed_geom = geom.with_L(x_new[-1])
        seed = _make_solution(seed_geom, extend(x_new[:-1]), branch_id)
        child = continue_branch(seed_geom, (x_new[-1], target), seed=seed, step=h, max_steps=max_steps,
                                switch=depth > 0, branch_id=branch_id, depth=depth)
        child.parameter_samples.insert(0, (float(xb[-1]), _make_solution(geom.with_L(xb[-1]), extend(xb[:-1]), branch_id)))
        return child
    return None


def solve_on_branch(branch: SolutionBranch, L: float) -> ProductSolution | None:
    """Solution on ``branch`` at exactly ``L``, seeded from the nearest samples."""
    Ls = branch.L_values
    for i in range(len(Ls) - 1):
        a, b = Ls[i], Ls[i + 1]
        if min(a, b) <= L <= max(a, b) and a != b:
            sa, sb = branch.parameter_samples[i][1], branch.parameter_samples[i + 1][1]
            geom = sa.geometry.with_L(L)
            w = (L - a) / (b - a)
            s_g = geom.sphere_scalar
            q = geom.consts.q
            ya = sa.phi * (sa.s_const / s_g) ** (1 / (q - 1))
            yb = sb.phi * (sb.s_const / s_g) ** (1 / (q - 1))
            init = (1 - w) * ya + w * yb
            try:
                return solve_product(geom, init, branch_id=branch.branch_type)
            except ProductSolveError:
                continue
    return None


def enumerate_yamabe(geom: ProductGeometry, L_start: float | None = None) -> list[ProductSolution]:
    """Constant solution plus every branch solution found at ``geom.L``, sorted by the functional.

    Entries with the minimal value (to 1e-9 relative) are marked Yamabe.  A
    nonconstant entry stands for its whole translation orbit.
    """
    sols = [solve_product(geom)]
    L_start = L_start if L_start is not None else 0.5 * geom.bifurcation_length(1)
    if geom.L > geom.bifurcation_length(1):
        root = continue_branch(geom, (L_start, geom.L))
        for br in root.all_branches()[1:]:
            sol = solve_on_branch(br, geom.L)
            if sol is not None and not sol.is_constant:
                if all(np.abs(sol.phi - other.phi).max() > 1e-6 for other in sols):
                    sols.append(sol)
    sols.sort(key=lambda s: s.energy)
    best = sols[0].energy
    for s in sols:
        s.is_yamabe = bool(s.energy <= best + 1e-9 * abs(best))
    return sols


# --------------------------------------------------------------------------
# output

CSV_COLUMNS = ["n", "L", "branch_id", "s_const", "S_value", "is_yamabe", "residual", "phi_min", "phi_max"]


def constant_energy(geom: ProductGeometry) -> float:
    """Functional of the product metric itself: ``(n-1)(n-2) (L vol(S^{n-1}))**(2/n)``."""
    return geom.sphere_scalar * (geom.L * geom.sphere_volume) ** (2.0 / geom.n)


def _lowest_energy(branches: list[SolutionBranch], geom: ProductGeometry, L: float) -> float:
    """Smallest energy at ``L``: the constant solution exactly, other branches by linear interpolation."""
    best = constant_energy(geom.with_L(L))
    for br in branches:
        if br.branch_type == "constant":
            continue
        Ls = br.L_values
        E = np.array([s.energy for _, s in br.parameter_samples])
        for i in range(len(Ls) - 1):
            a, b = Ls[i], Ls[i + 1]
            if a != b and min(a, b) <= L <= max(a, b):
                w = (L - a) / (b - a)
                best = min(best, (1 - w) * E[i] + w * E[i + 1])
    return best


def branch_rows(root: SolutionBranch, L_range: tuple[float, float] | None = None) -> list[dict]:
    """One row per sample inside ``L_range``; ``is_yamabe`` marks samples no branch undercuts at the same L."""
    branches = root.all_branches()
    lo, hi = (min(L_range), max(L_range)) if L_range else (-math.inf, math.inf)
    rows = []
    for br in branches:
        for L, sol in br.parameter_samples:
            if not lo - 1e-12 <= L <= hi + 1e-12:
                continue
            row = sol.summary()
            row["branch_id"] = br.branch_type
            row["is_yamabe"] = bool(sol.energy <= _lowest_energy(branches, sol.geometry, L) + 1e-9 * abs(sol.energy))
            rows.append(row)
    return rows


def write_branch_csv(root: SolutionBranch, path, L_range: tuple[float, float] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in branch_rows(root, L_range):
            w.writerow({k: row[k] for k in CSV_COLUMNS})


def branch_json(root: SolutionBranch) -> dict:
    return {
        "branches": [
            {
                "branch_id": br.branch_type,
                "bifurcation_points": br.bifurcation_points,
                "truncated": br.truncated,
                "samples": [{"L": L, "s_const": s.s_const, "S_value": s.energy, "phi": s.phi.tolist()}
                            for L, s in br.parameter_samples],
            }
            for br in root.all_branches()
        ]
    }


def write_branch_json(root: SolutionBranch, path) -> None:
    with open(path, "w") as fh:
        json.dump(branch_json(root), fh, indent=1)
