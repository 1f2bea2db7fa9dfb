"""Conformal change formulas, the Yamabe functional/equation and the Z tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GeometryError, MetricField, ScalarField, SymTensorField, _check_same, _integrate,
    curvature, differential, volume,
)


@dataclass(frozen=True)
class YamabeConstants:
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise GeometryError(f"Yamabe constants need n >= 3, got {self.n}")

    @property
    def c_n(self) -> float:
        return 4.0 * (self.n - 1) / (self.n - 2)

    @property
    def q(self) -> float:
        return (self.n + 2.0) / (self.n - 2)

    @property
    def volume_exponent(self) -> float:
        return (self.n - 2.0) / self.n

    @property
    def critical_exponent(self) -> float:
        """``2n / (n - 2) = q + 1``; the volume form scales by ``phi**critical_exponent``."""
        return 2.0 * self.n / (self.n - 2)


def positive_power(x, a: float):
    """``x**a`` through exp/log so non-integer exponents behave uniformly."""
    return np.exp(a * np.log(x))


@dataclass(frozen=True, eq=False)
class ConformalFactor:
    """Positive conformal factor ``phi``; the metric is ``phi**(4/(n-2)) g``."""

    phi: ScalarField

    def __post_init__(self):
        if np.min(self.phi.values) <= 0:
            raise GeometryError("conformal factor must be positive")

    @classmethod
    def from_values(cls, grid, values) -> "ConformalFactor":
        return cls(ScalarField(grid, values))

    @classmethod
    def one(cls, grid) -> "ConformalFactor":
        return cls(ScalarField(grid, np.ones(grid.points)))

    @classmethod
    def from_u(cls, grid, u: np.ndarray) -> "ConformalFactor":
        n = grid.dim
        return cls(ScalarField(grid, positive_power(u, (n - 2) / 2.0)))

    @property
    def grid(self):
        return self.phi.grid

    @property
    def values(self) -> np.ndarray:
        return self.phi.values

    @property
    def u(self) -> np.ndarray:
        """``phi**(2/(n-2))``, so the conformal metric is ``u**2 g``."""
        return positive_power(self.values, 2.0 / (self.grid.dim - 2))


def as_factor(phi, grid=None) -> ConformalFactor:
    if isinstance(phi, ConformalFactor):
        return phi
    if isinstance(phi, ScalarField):
        return ConformalFactor(phi)
    return ConformalFactor(ScalarField(grid, np.asarray(phi, dtype=float)))


def conformal_metric(g: MetricField, phi) -> MetricField:
    phi = as_factor(phi, g.grid)
    _check_same(g, phi)
    n = g.grid.dim
    return MetricField(g.grid, positive_power(phi.values, 4.0 / (n - 2))[..., None, None] * g.values)


def yamabe_functional(g: MetricField) -> float:
    """Scale-invariant total scalar curvature ``v**(-(n-2)/n) * int s dV``."""
    k = YamabeConstants(g.grid.dim)
    return volume(g) ** (-k.volume_exponent) * _integrate(g, g.scalar)


def yamabe_energy(g: MetricField, phi) -> float:
    """``int (c_n |d phi|^2 + s_g phi^2) dV_g``, equal to ``int s dV`` of the conformal metric."""
    phi = as_factor(phi, g.grid)
    k = YamabeConstants(g.grid.dim)
    grad = differential(g, phi.phi)[0].values
    dphi2 = np.einsum("...i,...ij,...j->...", grad, g.inverse, grad)
    return _integrate(g, k.c_n * dphi2 + g.scalar * phi.values ** 2)


def sobolev_quotient(g: MetricField, phi) -> float:
    """Yamabe energy divided by ``(int phi**(2n/(n-2)) dV)**((n-2)/n)``; equals the functional of the conformal metric."""
    phi = as_factor(phi, g.grid)
    k = YamabeConstants(g.grid.dim)
    denom = _integrate(g, positive_power(phi.values, k.critical_exponent)) ** k.volume_exponent
    return yamabe_energy(g, phi) / denom


def yamabe_residual(g: MetricField, phi, s_target: float) -> ScalarField:
    """``-c_n lap phi + s_g phi - s_target phi**q``."""
    phi = as_factor(phi, g.grid)
    _check_same(g, phi)
    k = YamabeConstants(g.grid.dim)
    lap = differential(g, phi.phi)[3].values
    v = phi.values
    return ScalarField(g.grid, -k.c_n * lap + g.scalar * v - s_target * positive_power(v, k.q))


def psi(phi, n: int):
    """Quotient ``(phi^4 + phi^3 + phi^2 + phi) / sum_{j<n-2} phi^{(q-1) j}``.

    It satisfies ``phi**q - phi = psi(phi) * (phi - 1)`` and ``psi(1) = 4/(n-2)``.
    Works elementwise on arrays.
    """
    x = np.asarray(phi, dtype=float)
    if np.any(x <= 0):
        raise ValueError("psi requires phi > 0")
    k = YamabeConstants(n)
    y = positive_power(x, k.q - 1.0)
    num = x ** 4 + x ** 3 + x ** 2 + x
    den = sum(y ** j for j in range(n - 2))
    out = num / den
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Z tensors.  The helpers below only use pointwise products and sums, so the
# product adapter in ``variation`` reuses them with its own block tensors.

def _z_tilde(z, u, hess0_uinv, n):
    return z + (n - 2) * u[..., None, None] * hess0_uinv


def _Z(z, u, hess0_uinv, n):
    return (u ** (n - 2))[..., None, None] * _z_tilde(z, u, hess0_uinv, n)


def _maxpoint(z, u, hess0_uinv, n):
    return ((1.0 + u ** (n - 2)) / u)[..., None, None] * z + (n - 2) * hess0_uinv


def _conformal_parts(g: MetricField, phi):
    phi = as_factor(phi, g.grid)
    _check_same(g, phi)
    u = phi.u
    hess0 = differential(g, ScalarField(g.grid, 1.0 / u))[2].values
    z = curvature(g)[2].values
    return z, u, hess0, phi


def z_conformal(g: MetricField, phi) -> SymTensorField:
    """Trace-free Ricci of ``phi**(4/(n-2)) g`` from ``z + (n-2) u D0^2 u^{-1}``."""
    z, u, hess0, _ = _conformal_parts(g, phi)
    return SymTensorField(g.grid, _z_tilde(z, u, hess0, g.grid.dim))


def Z_phi(gamma: MetricField, phi) -> SymTensorField:
    """``u^{n-2} (z + (n-2) u D0^2 u^{-1})`` with ``u = phi**(2/(n-2))``."""
    z, u, hess0, _ = _conformal_parts(gamma, phi)
    return SymTensorField(gamma.grid, _Z(z, u, hess0, gamma.grid.dim))


def uniqueness_residual(gamma: MetricField, phi) -> SymTensorField:
    """``Z_phi - z``; vanishes at ``phi = 1``."""
    z, u, hess0, _ = _conformal_parts(gamma, phi)
    return SymTensorField(gamma.grid, _Z(z, u, hess0, gamma.grid.dim) - z)


def maxpoint_residual(gamma: MetricField, phi) -> SymTensorField:
    """``u^{-1} (1 + u^{n-2}) z + (n-2) D0^2 u^{-1}``; zero exactly when ``z = -Z_phi``."""
    z, u, hess0, _ = _conformal_parts(gamma, phi)
    return SymTensorField(gamma.grid, _maxpoint(z, u, hess0, gamma.grid.dim))


def rigidity_residual(gamma: MetricField, phi) -> ScalarField:
    """Pointwise gamma-norm of ``z - phi^2 z~``."""
    z, u, hess0, phi = _conformal_parts(gamma, phi)
    d = z - (phi.values ** 2)[..., None, None] * _z_tilde(z, u, hess0, gamma.grid.dim)
    norm2 = np.einsum("...ij,...ij->...", gamma.raise_both(d), d)
    return ScalarField(gamma.grid, np.sqrt(np.maximum(norm2, 0.0)))
