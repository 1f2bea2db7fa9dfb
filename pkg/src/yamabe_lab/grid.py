"""Discrete tensor calculus on periodic structured grids.

Fields store their components in the trailing axes, so a metric on an
``(N1, N2, N3)`` grid has values of shape ``(N1, N2, N3, 3, 3)``.
All derivatives are 4th-order central differences applied with ``np.roll``;
second derivatives are compositions of the first-derivative stencil.  That
composition keeps every discrete operator built here an exact transpose of
its partner under the uniform quadrature, which is what makes the
``lin_scalar`` / ``lin_scalar_adjoint`` pair adjoint to rounding.

Sign conventions
----------------
* ``lap = trace_g(hess)``, so ``-lap`` is non-negative.
* ``(divergence T)_j = -nabla^i T_ij``, so ``divergence(Ric) + ds/2 = 0``.
* ``lin_scalar(h) = -lap(tr h) + div div h - <Ric, h>`` is the derivative of
  ``s_{g+th}`` at ``t = 0``, and ``lin_scalar_adjoint(f) = hess f - lap f g - f Ric``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

MIN_EIGENVALUE = 1e-8


class GeometryError(ValueError):
    """Invalid geometric input (non-SPD metric, grid mismatch, bad dimension)."""


class NumericalFailure(ArithmeticError):
    """Non-finite values appeared during a computation."""


@dataclass(frozen=True)
class PeriodicGrid:
    points: tuple[int, ...]
    periods: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(int(p) for p in self.points))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if len(self.points) != len(self.periods):
            raise GeometryError("points and periods must have the same length")
        if len(self.points) < 2:
            raise GeometryError("grid dimension must be at least 2")
        for p in self.points:
            if p < 8 or p % 2:
                raise GeometryError(f"points per axis must be even and >= 8, got {p}")
        if any(not np.isfinite(L) or L <= 0 for L in self.periods):
            raise GeometryError("periods must be positive")

    @classmethod
    def cube(cls, n: int, points: int, period: float = 2 * np.pi) -> "PeriodicGrid":
        return cls((points,) * n, (period,) * n)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / p for L, p in zip(self.periods, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def coords(self) -> list[np.ndarray]:
        axes = [np.arange(p) * h for p, h in zip(self.points, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")

    def refined(self, factor: int = 2) -> "PeriodicGrid":
        return PeriodicGrid(tuple(p * factor for p in self.points), self.periods)

    def band_limited(self, rng: np.random.Generator, amplitude: float = 1.0,
                     max_mode: int | None = None) -> np.ndarray:
        """Random real trigonometric polynomial sampled on the grid.

        Modes run up to ``max_mode`` per axis (default ``min(points) // 4``);
        coefficients decay like ``1 / (1 + |k|^2)`` and the result is scaled
        to have maximum modulus ``amplitude``.
        """
        kmax = min(self.points) // 4 if max_mode is None else max_mode
        ks = np.arange(-kmax, kmax + 1)
        X = self.coords()
        out = np.zeros(self.points)
        for kvec in np.array(np.meshgrid(*([ks] * self.dim), indexing="ij")).reshape(self.dim, -1).T:
            if not kvec.any():
                continue
            wave = sum(2 * np.pi * k / L * x for k, L, x in zip(kvec, self.periods, X))
            a, b = rng.standard_normal(2) / (1.0 + float(kvec @ kvec))
            out += a * np.cos(wave) + b * np.sin(wave)
        return amplitude * out / np.abs(out).max()

    def band_limited_tensor(self, rng: np.random.Generator, amplitude: float = 1.0,
                            max_mode: int | None = None) -> np.ndarray:
        """Symmetric ``n x n`` field whose components are independent ``band_limited`` draws."""
        n = self.dim
        out = np.empty(self.points + (n, n))
        for i in range(n):
            for j in range(i, n):
                out[..., i, j] = out[..., j, i] = self.band_limited(rng, amplitude, max_mode)
        return out


def _check_same(*fields) -> PeriodicGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GeometryError(f"grid mismatch: {grid} vs {f.grid}")
    return grid


def _ensure_finite(values: np.ndarray, grid: PeriodicGrid, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad)[0][: grid.dim]
        raise NumericalFailure(f"non-finite {what} at grid point {tuple(int(i) for i in idx)}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.points:
            raise GeometryError(f"scalar field shape {v.shape} does not match grid {self.grid.points}")
        _ensure_finite(v, self.grid, "scalar value")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class OneFormField:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.points + (self.grid.dim,):
            raise GeometryError(f"one-form shape {v.shape} does not match grid")
        _ensure_finite(v, self.grid, "one-form component")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class SymTensorField:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.grid.dim
        if v.shape != self.grid.points + (n, n):
            raise GeometryError(f"tensor shape {v.shape} does not match grid")
        _ensure_finite(v, self.grid, "tensor component")
        object.__setattr__(self, "values", 0.5 * (v + np.swapaxes(v, -1, -2)))


@dataclass(frozen=True, eq=False)
class ThreeTensorField:
    """Components ``T[..., i, j, k]``, antisymmetric in ``(i, j)``."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.grid.dim
        if v.shape != self.grid.points + (n, n, n):
            raise GeometryError(f"3-tensor shape {v.shape} does not match grid")
        object.__setattr__(self, "values", 0.5 * (v - np.swapaxes(v, -3, -2)))


@dataclass(frozen=True, eq=False)
class MetricField(SymTensorField):
    """Riemannian metric; geometric quantities are computed lazily and cached."""

    def __post_init__(self):
        super().__post_init__()
        eig = np.linalg.eigvalsh(self.values)
        lo = eig[..., 0]
        if lo.min() < MIN_EIGENVALUE:
            idx = np.unravel_index(np.argmin(lo), lo.shape)
            raise GeometryError(
                f"metric not positive definite at grid point {tuple(int(i) for i in idx)} "
                f"(smallest eigenvalue {lo.min():.3e})")

    @classmethod
    def flat(cls, grid: PeriodicGrid) -> "MetricField":
        return cls(grid, np.broadcast_to(np.eye(grid.dim), grid.points + (grid.dim, grid.dim)).copy())

    @classmethod
    def conformally_flat(cls, grid: PeriodicGrid, w: np.ndarray) -> "MetricField":
        """``exp(2w) * delta``."""
        return cls(grid, np.exp(2 * np.asarray(w))[..., None, None] * np.eye(grid.dim))

    @cached_property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.values)

    @cached_property
    def sqrt_det(self) -> np.ndarray:
        det = np.linalg.det(self.values)
        if det.min() <= 0:
            raise GeometryError("metric determinant is not positive")
        return np.sqrt(det)

    @cached_property
    def christoffel(self) -> np.ndarray:
        """``Gamma[..., k, i, j]`` = Gamma^k_ij."""
        dg = gradient_components(self.grid, self.values)  # dg[..., a, b, c] = D_a g_bc
        lower = 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
        gam = np.einsum("...kl,...lij->...kij", self.inverse, lower)
        _ensure_finite(gam, self.grid, "Christoffel symbol")
        return gam

    @cached_property
    def ricci(self) -> np.ndarray:
        grid, gam = self.grid, self.christoffel
        n = grid.dim
        ric = np.zeros(grid.points + (n, n))
        for k in range(n):
            ric += diff(grid, gam[..., k, :, :], k)
        contracted = np.einsum("...kik->...i", gam)
        for j in range(n):
            ric[..., :, j] -= diff(grid, contracted, j)
        ric += np.einsum("...kkl,...lij->...ij", gam, gam)
        ric -= np.einsum("...kjl,...lik->...ij", gam, gam)
        ric = 0.5 * (ric + np.swapaxes(ric, -1, -2))
        _ensure_finite(ric, grid, "Ricci component")
        return ric

    @cached_property
    def scalar(self) -> np.ndarray:
        return np.einsum("...ij,...ij->...", self.inverse, self.ricci)

    def raise_both(self, t: np.ndarray) -> np.ndarray:
        return np.einsum("...ia,...jb,...ab->...ij", self.inverse, self.inverse, t)

    def trace(self, t: np.ndarray) -> np.ndarray:
        return np.einsum("...ij,...ij->...", self.inverse, t)


# --------------------------------------------------------------------------
# stencils

def diff(grid: PeriodicGrid, a: np.ndarray, axis: int) -> np.ndarray:
    """4th-order central first derivative along grid ``axis`` (leading axes are the grid)."""
    h = grid.spacing[axis]
    p1, m1 = np.roll(a, -1, axis), np.roll(a, 1, axis)
    p2, m2 = np.roll(a, -2, axis), np.roll(a, 2, axis)
    return (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)


def gradient_components(grid: PeriodicGrid, a: np.ndarray) -> np.ndarray:
    """Stack ``D_k a`` along a new axis placed right after the grid axes."""
    d = np.stack([diff(grid, a, k) for k in range(grid.dim)], axis=grid.dim)
    return d


def stencil_symbol(grid: PeriodicGrid, axis: int) -> np.ndarray:
    """Fourier symbol (divided by i) of ``diff`` along ``axis`` for ``np.fft.fftfreq`` ordering."""
    h = grid.spacing[axis]
    theta = 2 * np.pi * np.fft.fftfreq(grid.points[axis])
    return (8 * np.sin(theta) - np.sin(2 * theta)) / (6 * h)


# --------------------------------------------------------------------------
# integration

def integrate(g: MetricField, f: ScalarField) -> float:
    _check_same(g, f)
    return float(np.sum(f.values * g.sqrt_det) * g.grid.cell_volume)


def _integrate(g: MetricField, values: np.ndarray) -> float:
    return float(np.sum(values * g.sqrt_det) * g.grid.cell_volume)


def volume(g: MetricField) -> float:
    return math.fsum((g.sqrt_det * g.grid.cell_volume).ravel())


def normalize_volume(g: MetricField) -> MetricField:
    v = volume(g)
    return MetricField(g.grid, g.values * v ** (-2.0 / g.grid.dim))


def tensor_inner(g: MetricField, a: SymTensorField, b: SymTensorField) -> ScalarField:
    """Pointwise full contraction ``g^ik g^jl A_ij B_kl``."""
    _check_same(g, a, b)
    return ScalarField(g.grid, np.einsum("...ij,...ij->...", g.raise_both(a.values), b.values))


def l2_norm(g: MetricField, f: ScalarField | np.ndarray) -> float:
    v = f.values if isinstance(f, ScalarField) else f
    return float(np.sqrt(_integrate(g, v * v)))


def tensor_l2_norm(g: MetricField, t: SymTensorField | np.ndarray) -> float:
    v = t.values if isinstance(t, SymTensorField) else t
    return float(np.sqrt(_integrate(g, np.einsum("...ij,...ij->...", g.raise_both(v), v))))


# --------------------------------------------------------------------------
# curvature and differential operators

def curvature(g: MetricField) -> tuple[SymTensorField, ScalarField, SymTensorField]:
    """Ricci tensor, scalar curvature and trace-free Ricci ``z = Ric - (s/n) g``."""
    n = g.grid.dim
    s = g.scalar
    z = g.ricci - (s / n)[..., None, None] * g.values
    return SymTensorField(g.grid, g.ricci), ScalarField(g.grid, s), SymTensorField(g.grid, z)


def _hessian(g: MetricField, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grid = g.grid
    n = grid.dim
    df = gradient_components(grid, f)
    dd = np.empty(grid.points + (n, n))
    for j in range(n):
        for i in range(j, n):
            dd[..., i, j] = diff(grid, df[..., j], i)
            dd[..., j, i] = dd[..., i, j]
    hess = dd - np.einsum("...kij,...k->...ij", g.christoffel, df)
    return df, hess


def _laplacian(g: MetricField, f: np.ndarray) -> np.ndarray:
    return g.trace(_hessian(g, f)[1])


def differential(g: MetricField, f: ScalarField):
    """Gradient, covariant Hessian, trace-free Hessian and Laplacian of ``f``."""
    _check_same(g, f)
    n = g.grid.dim
    df, hess = _hessian(g, f.values)
    lap = g.trace(hess)
    hess0 = hess - (lap / n)[..., None, None] * g.values
    return (OneFormField(g.grid, df), SymTensorField(g.grid, hess),
            SymTensorField(g.grid, hess0), ScalarField(g.grid, lap))


def covariant_derivative(g: MetricField, t: np.ndarray) -> np.ndarray:
    """``out[..., a, b, c] = nabla_a T_bc`` for a symmetric 2-tensor."""
    dt = gradient_components(g.grid, t)
    gam = g.christoffel
    return dt - np.einsum("...mab,...mc->...abc", gam, t) - np.einsum("...mac,...bm->...abc", gam, t)


def _divergence(g: MetricField, t: np.ndarray) -> np.ndarray:
    return -np.einsum("...ia,...aij->...j", g.inverse, covariant_derivative(g, t))


def divergence(g: MetricField, t: SymTensorField) -> OneFormField:
    """``(delta T)_j = -nabla^i T_ij``."""
    _check_same(g, t)
    return OneFormField(g.grid, _divergence(g, t.values))


def lin_scalar(g: MetricField, h: SymTensorField) -> ScalarField:
    """Linearized scalar curvature ``d/dt s_{g+th}`` at ``t = 0``.

    Written as the exact discrete transpose of ``lin_scalar_adjoint``: with
    ``H = h^# - (tr h) g^{-1}`` it is ``(D_i D_j + D_k Gamma^k_ij)(sqrt|g| H^ij) / sqrt|g|
    - <Ric, h>``.
    """
    _check_same(g, h)
    grid = g.grid
    n = grid.dim
    hu = g.raise_both(h.values)
    H = hu - g.trace(h.values)[..., None, None] * g.inverse
    X = g.sqrt_det[..., None, None] * H
    acc = np.zeros(grid.points)
    for i in range(n):
        inner = sum(diff(grid, X[..., i, j], j) for j in range(n))
        acc += diff(grid, inner, i)
    flux = np.einsum("...kij,...ij->...k", g.christoffel, X)
    for k in range(n):
        acc += diff(grid, flux[..., k], k)
    out = acc / g.sqrt_det - np.einsum("...ij,...ij->...", hu, g.ricci)
    return ScalarField(grid, out)


def _lin_scalar_adjoint(g: MetricField, f: np.ndarray) -> np.ndarray:
    _, hess = _hessian(g, f)
    lap = g.trace(hess)
    return hess - lap[..., None, None] * g.values - f[..., None, None] * g.ricci


def lin_scalar_adjoint(g: MetricField, f: ScalarField) -> SymTensorField:
    """``L* f = D^2 f - (lap f) g - f Ric``."""
    _check_same(g, f)
    return SymTensorField(g.grid, _lin_scalar_adjoint(g, f.values))


def phi_map(g: MetricField) -> ScalarField:
    """Laplacian of the scalar curvature; vanishes exactly on constant scalar curvature metrics."""
    return ScalarField(g.grid, _laplacian(g, g.scalar))


def cotton3(g: MetricField) -> ThreeTensorField:
    """``omega_ijk = nabla_i P_jk - nabla_j P_ik`` with ``P = Ric - (s/4) g`` (dimension 3 only)."""
    if g.grid.dim != 3:
        raise GeometryError(f"cotton3 requires dimension 3, got {g.grid.dim}")
    P = g.ricci - 0.25 * g.scalar[..., None, None] * g.values
    dP = covariant_derivative(g, P)
    return ThreeTensorField(g.grid, dP - np.swapaxes(dP, -3, -2))


# --------------------------------------------------------------------------
# refinement helpers

def observed_order(err_coarse: float, err_fine: float, ratio: float = 2.0) -> float:
    return float(np.log(err_coarse / err_fine) / np.log(ratio))


def richardson(coarse: float, fine: float, order: float, ratio: float = 2.0) -> float:
    """Two-step Richardson extrapolation of a quantity with error ``~ step**order``."""
    r = ratio ** order
    return (r * fine - coarse) / (r - 1.0)
