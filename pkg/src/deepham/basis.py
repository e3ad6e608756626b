"""Periodic nodal hat-function basis, its Gram (mass) matrix, and the map from
autodiff gradients over nodal values to variational derivatives.

A functional evaluated on nodal values ``u_i`` has a Euclidean gradient
``grad`` over those values.  The L2 representative of the same differential is
``g = G^{-1} grad`` with ``G_ij = int phi_i phi_j dx``; since ``phi_j(x_i) =
delta_ij`` the coefficients ``g_i`` are point values of the variational
derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class NodalBasis:
    n_points: int
    x_lo: float = 0.0
    x_hi: float = 1.0
    periodic: bool = True

    def __post_init__(self):
        if self.n_points < 3:
            raise ValueError(f"nodal basis needs at least 3 points, got {self.n_points}")
        if not self.x_hi > self.x_lo:
            raise ValueError(f"empty domain [{self.x_lo}, {self.x_hi}]")
        if not self.periodic:
            raise ValueError("only periodic bases are supported")

    @property
    def length(self) -> float:
        return self.x_hi - self.x_lo

    @property
    def h(self) -> float:
        return self.length / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return self.x_lo + self.h * np.arange(self.n_points)

    def hat(self, i: int, x) -> np.ndarray:
        """Evaluate ``phi_i`` (0-based) at ``x``; the support wraps periodically."""
        x = np.asarray(x, dtype=np.float64)
        s = (x - self.nodes[i]) / self.length
        s = s - np.round(s)
        return np.clip(1.0 - np.abs(s) * self.length / self.h, 0.0, None)

    def interpolate(self, values, x) -> np.ndarray:
        """Evaluate ``sum_i values_i phi_i`` at ``x``."""
        values = np.asarray(values, dtype=np.float64)
        s = (np.asarray(x, dtype=np.float64) - self.x_lo) / self.h
        left = np.floor(s)
        frac = s - left
        i = left.astype(int) % self.n_points
        j = (i + 1) % self.n_points
        return (1.0 - frac) * values[..., i] + frac * values[..., j]

    def check_field(self, v, name: str = "field") -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.n_points:
            raise ValueError(f"{name}: last axis {v.shape[-1]} does not match N={self.n_points}")
        return v


def build_basis(n_points: int, domain: tuple[float, float] = (0.0, 1.0), periodic: bool = True) -> NodalBasis:
    return NodalBasis(int(n_points), float(domain[0]), float(domain[1]), periodic)


@dataclass(frozen=True)
class GramMatrix:
    """Cyclic tridiagonal mass matrix of periodic hats, stored factorized.

    ``mode="identity"`` replaces G by ``h * I`` (the lumped approximation);
    it exists for ablations only.
    """

    basis: NodalBasis
    mode: str = "exact"
    _factor: kernels.CyclicFactor | None = field(default=None, repr=False, compare=False)

    @property
    def diag(self) -> float:
        return 2.0 * self.basis.h / 3.0 if self.mode == "exact" else self.basis.h

    @property
    def off(self) -> float:
        return self.basis.h / 6.0 if self.mode == "exact" else 0.0

    @property
    def n(self) -> int:
        return self.basis.n_points

    @property
    def matrix(self) -> np.ndarray:
        n = self.n
        g = np.zeros((n, n))
        idx = np.arange(n)
        g[idx, idx] = self.diag
        g[idx, (idx + 1) % n] = self.off
        g[idx, (idx - 1) % n] = self.off
        return g

    def apply(self, v) -> np.ndarray:
        """``G v`` along the last axis."""
        v = self.basis.check_field(v)
        if self.mode != "exact":
            return self.basis.h * v
        return self.diag * v + self.off * (np.roll(v, 1, axis=-1) + np.roll(v, -1, axis=-1))

    def solve(self, rhs) -> np.ndarray:
        """``G^{-1} rhs`` along the last axis."""
        rhs = self.basis.check_field(rhs, "gram solve rhs")
        if self.mode != "exact":
            return rhs / self.basis.h
        return kernels.cyclic_solve(self._factor, rhs)


def gram_matrix(basis: NodalBasis, mode: str = "exact") -> GramMatrix:
    if mode not in ("exact", "identity"):
        raise ValueError(f"unknown gram mode {mode!r}")
    factor = None
    if mode == "exact":
        factor = kernels.CyclicFactor(basis.n_points, 2.0 * basis.h / 3.0, basis.h / 6.0)
    return GramMatrix(basis, mode, factor)


def variational_derivative(grad_ad, gram: GramMatrix) -> np.ndarray:
    """Nodal values of the variational derivative from a gradient over nodal values."""
    return gram.solve(grad_ad)


def l2_inner(a, b, gram: GramMatrix):
    a = gram.basis.check_field(a, "l2_inner lhs")
    b = gram.basis.check_field(b, "l2_inner rhs")
    if a.shape != b.shape:
        raise ValueError(f"l2_inner: shapes {a.shape} and {b.shape} differ")
    return np.sum(a * gram.apply(b), axis=-1)
