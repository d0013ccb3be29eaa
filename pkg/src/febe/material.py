"""Pointwise nonlinear constitutive laws and the exterior Lame coefficients.

The law acts on 2-vectors (gradients, scalar problem) or on symmetric 2x2
matrices (strains, vector problem) with the Frobenius inner product.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

P_LAPLACE = "plaplace"
CARREAU = "carreau"

MODE_VECTOR = "vector"
MODE_MATRIX = "matrix"

# |x| is floored at this value inside the tangent for p < 2
TANGENT_FLOOR = 1e-10


class SingularTangentWarning(UserWarning):
    """Raised when the tangent of a p<2 law is requested at a near-zero argument."""


@dataclass(frozen=True)
class MaterialLaw:
    p: float
    kind: str = P_LAPLACE
    delta: float = 0.0
    mode: str = MODE_VECTOR

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError("material exponent p must be > 1")
        if self.kind not in (P_LAPLACE, CARREAU):
            raise ValueError("unknown material kind %r" % self.kind)
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("Carreau delta must lie in [0, 1]")
        if self.mode not in (MODE_VECTOR, MODE_MATRIX):
            raise ValueError("unknown material mode %r" % self.mode)

    @property
    def p_prime(self):
        return self.p / (self.p - 1.0)

    @property
    def r(self):
        return min(self.p, 2.0)

    @property
    def q(self):
        return max(self.p, 2.0)


@dataclass(frozen=True)
class ExteriorCoefficients:
    mu: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("exterior mu must be positive")
        if not self.lam > -self.mu:
            raise ValueError("exterior lambda must exceed -mu")


def _norm(law, x):
    """Pointwise norm over the trailing component axes."""
    x = np.asarray(x, dtype=float)
    if law.mode == MODE_MATRIX:
        return np.sqrt(np.einsum("...ij,...ij->...", x, x))
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def _scalar_coeff(law, s):
    """A'(x) = coeff(|x|) * x; returns coeff at s = |x|, with coeff(0) := 0.

    The zero value is the continuous extension of the stress (A'(0) = 0);
    the coefficient itself may diverge at 0 for p < 2.
    """
    s = np.asarray(s, dtype=float)
    e2 = 0.5 * (law.p - 2.0)
    s_safe = np.where(s > 0, s, 1.0)
    if law.kind == P_LAPLACE or law.delta == 0.0:
        c = s_safe ** (2 * e2)
    else:
        c = (s_safe ** (1.0 - law.delta) * (1.0 + s_safe ** 2) ** law.delta) ** e2
    return np.where(s > 0, c, 0.0)


def _scalar_coeff_deriv(law, s):
    """d/ds of the radial coefficient, for s > 0."""
    s = np.asarray(s, dtype=float)
    c = _scalar_coeff(law, s)
    e2 = 0.5 * (law.p - 2.0)
    if law.kind == P_LAPLACE or law.delta == 0.0:
        return 2 * e2 * c / s
    return c * e2 * ((1.0 - law.delta) / s + 2.0 * law.delta * s / (1.0 + s ** 2))


def stress(law, x):
    """A'(x), acting pointwise on arrays of gradients/strains."""
    x = np.asarray(x, dtype=float)
    s = _norm(law, x)
    c = _scalar_coeff(law, s)
    if law.mode == MODE_MATRIX:
        return c[..., None, None] * x
    return c[..., None] * x


def tangent_coeffs(law, x):
    """(c1, c2) with  DA'(x) h = c1 h + c2 <x, h> x  (Frobenius pairing).

    For p < 2 the radius is floored to keep Newton matrices finite; a
    SingularTangentWarning is raised when the floor engages.
    """
    x = np.asarray(x, dtype=float)
    s = _norm(law, x)
    if law.p < 2 and np.any(s < TANGENT_FLOOR):
        warnings.warn("tangent evaluated near the singular origin of a p<2 law",
                      SingularTangentWarning, stacklevel=2)
    s_eff = np.maximum(s, TANGENT_FLOOR)
    c1 = _scalar_coeff(law, s_eff)
    dc = _scalar_coeff_deriv(law, s_eff)
    c2 = dc / s_eff
    return c1, c2


def tangent(law, x):
    """Dense matrix of DA'(x) on the flattened component space (2x2 or 4x4)."""
    x = np.asarray(x, dtype=float)
    c1, c2 = tangent_coeffs(law, x)
    v = x.reshape(x.shape[:-2] + (4,)) if law.mode == MODE_MATRIX else x
    n = v.shape[-1]
    eye = np.eye(n)
    return c1[..., None, None] * eye + c2[..., None, None] * (
        v[..., :, None] * v[..., None, :])


def tangent_apply(law, x, h):
    c1, c2 = tangent_coeffs(law, x)
    if law.mode == MODE_MATRIX:
        dot = np.einsum("...ij,...ij->...", x, h)
        return c1[..., None, None] * h + (c2 * dot)[..., None, None] * x
    dot = np.einsum("...i,...i->...", x, h)
    return c1[..., None] * h + (c2 * dot)[..., None] * x


_GAUSS32 = np.polynomial.legendre.leggauss(32)


def potential(law, x):
    """A(x) with dA/dx = A'(x): |x|^p / p for the power law, radial quadrature otherwise."""
    x = np.asarray(x, dtype=float)
    s = _norm(law, x)
    if law.kind == P_LAPLACE or law.delta == 0.0:
        return s ** law.p / law.p
    # integrate coeff(t) * t along the ray [0, s]
    nodes, wts = _GAUSS32
    t = 0.5 * (nodes + 1.0)[:, None] * s[None, ...].reshape(1, -1)
    w = 0.5 * wts[:, None] * s.reshape(1, -1)
    vals = _scalar_coeff(law, t) * t
    return np.sum(vals * w, axis=0).reshape(s.shape)


def monotonicity_gap(law, x, y):
    """(lhs, lower, upper) of the pointwise two-sided monotonicity bounds.

    lhs   = <A'(x) - A'(y), x - y>
    lower = (|x|+|y|)^(p-2) |x-y|^2   (p < 2)   resp.  |x-y|^p        (p >= 2)
    upper = |x-y|^p                   (p < 2)   resp.  (|x|+|y|)^(p-2) |x-y|^2
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    if law.mode == MODE_MATRIX:
        lhs = np.einsum("...ij,...ij->...", stress(law, x) - stress(law, y), d)
    else:
        lhs = np.einsum("...i,...i->...", stress(law, x) - stress(law, y), d)
    sx, sy, sd = _norm(law, x), _norm(law, y), _norm(law, d)
    ssum = sx + sy
    with np.errstate(divide="ignore", invalid="ignore"):
        mixed = np.where(ssum > 0, ssum ** (law.p - 2.0), 0.0) * sd ** 2
    powr = sd ** law.p
    if law.p < 2:
        return lhs, mixed, powr
    return lhs, powr, mixed
