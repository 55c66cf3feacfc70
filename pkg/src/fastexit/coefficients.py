"""Reaction and gain coefficients, their averaged forms, and the noise intensity.

Coefficients come from a small registered catalog of closed forms rather than
arbitrary user code, so configs stay reproducible and Lipschitz / sup bounds
are bookkept exactly:

    constant            c
    linear              (slope + xi_slope * xi) * r + offset
    linear_plus_source  slope * r + source_amp * sin(source_freq * pi * xi) + offset
    logistic_clipped    amp * tanh(r / width) + offset   (bounded, smooth)

The boundary gain sigma is constant in time: either one value for both
boundary points or a value per point.

Averaging replaces the reaction term f(xi, r) by its integral against the
invariant density m,

    F_bar(t, u) = int_O f(t, xi, u) m(xi) dxi,

and the two noise channels by the row vectors

    row_H(t, u) = sqrt(Q) [ g(t, ., u) m ]          (mode j: lambda_j <g m, e_j>)
    row_Z(t)    = delta0 sqrt(B) [ Sigma(t) N*_delta0 m ]

whose squared norms combine into the scalar noise intensity

    H(t, u) = ( |row_H|^2 + rho_bar^2 |row_Z|^2 ) / (1 + rho_bar)^2,

with the rho_bar = inf case defined as the limit |row_Z|^2.  The adjoint
Neumann map evaluates as (N*_delta m)(p) = sum_k <m, e_k> e_k(p) / (delta + alpha_k);
for constant density only the k = 0 term survives and delta0 cancels, which is
why the boundary row is delta0-free in the reference instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .operator import BoundaryData, Field, SpectralOperator

__all__ = [
    "Coefficient",
    "BoundaryCoefficient",
    "CoefficientSet",
    "AveragedModel",
    "NondegeneracyReport",
    "CoefficientHypothesesReport",
    "make_coefficient",
    "make_boundary_coefficient",
    "make_coefficient_set",
    "nemytskii_F",
    "nemytskii_G_matrix",
    "averaged_F",
    "averaged_G_row",
    "averaged_Sigma_row",
    "noise_intensity_H",
    "check_nondegeneracy",
    "check_coefficient_hypotheses",
]

_COEFF_KINDS = ("constant", "linear", "linear_plus_source", "logistic_clipped")


@dataclass(frozen=True)
class Coefficient:
    """A catalog reaction/gain coefficient (t, xi, r) -> real.

    All catalog entries are autonomous; the time argument is accepted for
    interface uniformity and ignored.
    """

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in _COEFF_KINDS:
            raise ValueError(f"unknown coefficient kind '{self.kind}'")

    def value(self, t, xi, r):
        p = self.params
        xi = np.asarray(xi, dtype=float)
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(p["value"], np.broadcast_shapes(xi.shape, r.shape)).copy()
        if self.kind == "linear":
            return (p["slope"] + p.get("xi_slope", 0.0) * xi) * r + p.get("offset", 0.0)
        if self.kind == "linear_plus_source":
            src = p["source_amp"] * np.sin(p.get("source_freq", 1) * np.pi * xi)
            return p["slope"] * r + src + p.get("offset", 0.0)
        # logistic_clipped
        return p["amp"] * np.tanh(r / p["width"]) + p.get("offset", 0.0) + 0.0 * xi

    def d_dr(self, t, xi, r):
        p = self.params
        xi = np.asarray(xi, dtype=float)
        r = np.asarray(r, dtype=float)
        shape = np.broadcast_shapes(xi.shape, r.shape)
        if self.kind == "constant":
            return np.zeros(shape)
        if self.kind == "linear":
            return np.broadcast_to(p["slope"] + p.get("xi_slope", 0.0) * xi, shape).copy()
        if self.kind == "linear_plus_source":
            return np.broadcast_to(p["slope"], shape).copy()
        return p["amp"] / p["width"] * (1.0 / np.cosh(r / p["width"]) ** 2) + 0.0 * xi

    @property
    def lipschitz_bound(self) -> float:
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "linear":
            xs = p.get("xi_slope", 0.0)
            return max(abs(p["slope"]), abs(p["slope"] + xs))  # |slope + xs * xi| on [0, 1]
        if self.kind == "linear_plus_source":
            return abs(p["slope"])
        return abs(p["amp"] / p["width"])

    @property
    def sup_bound(self) -> float | None:
        """Uniform bound over (xi, r), when the form admits one."""
        p = self.params
        if self.kind == "constant":
            return abs(p["value"])
        if self.kind == "logistic_clipped":
            return abs(p["amp"]) + abs(p.get("offset", 0.0))
        return None

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def constant_value(self) -> float:
        if not self.is_constant:
            raise ValueError("coefficient is not constant")
        return float(self.params["value"])


@dataclass(frozen=True)
class BoundaryCoefficient:
    """Boundary gain sigma(t, p) for the two boundary points p in {0, 1}."""

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in ("constant", "per_point"):
            raise ValueError(f"unknown boundary coefficient kind '{self.kind}'")

    def values(self, t) -> np.ndarray:
        if self.kind == "constant":
            return np.full(2, float(self.params["value"]))
        return np.array([self.params["left"], self.params["right"]], dtype=float)

    @property
    def sup_bound(self) -> float:
        return float(np.abs(self.values(0.0)).max())


def make_coefficient(spec: dict) -> Coefficient:
    spec = dict(spec)
    kind = spec.pop("kind")
    return Coefficient(kind=kind, params=spec)


def make_boundary_coefficient(spec: dict) -> BoundaryCoefficient:
    spec = dict(spec)
    kind = spec.pop("kind")
    return BoundaryCoefficient(kind=kind, params=spec)


@dataclass(frozen=True)
class CoefficientSet:
    """The triple (f, g, sigma) with declared bounds."""

    f: Coefficient
    g: Coefficient
    sigma: BoundaryCoefficient

    @property
    def lipschitz_bound_f(self) -> float:
        return self.f.lipschitz_bound

    @property
    def lipschitz_bound_g(self) -> float:
        return self.g.lipschitz_bound

    @property
    def g_sup_bound(self) -> float | None:
        return self.g.sup_bound


def make_coefficient_set(f_spec: dict, g_spec: dict, sigma_spec: dict) -> CoefficientSet:
    return CoefficientSet(
        f=make_coefficient(f_spec),
        g=make_coefficient(g_spec),
        sigma=make_boundary_coefficient(sigma_spec),
    )


def nemytskii_F(cs: CoefficientSet, op: SpectralOperator, t: float, u: Field) -> Field:
    """F(t, u)(xi) = f(t, xi, u(xi)), applied on the grid and re-projected."""
    vals = cs.f.value(t, op.grid, op.to_grid(u.coeffs))
    return Field(op.to_modes(vals))


def nemytskii_G_matrix(cs: CoefficientSet, op: SpectralOperator, t: float, u: Field) -> np.ndarray:
    """Matrix M_kj = <g(t, ., u) e_j, e_k> of the multiplication operator G(t, u)."""
    g_vals = cs.g.value(t, op.grid, op.to_grid(u.coeffs))
    weighted = op.modes_on_grid * (g_vals * op.quad_weights)
    return weighted @ op.modes_on_grid.T


@dataclass(frozen=True)
class AveragedModel:
    """Averaged drift, noise rows, and noise intensity for the limit dynamics.

    Bundles the operator, coefficients, covariance spectra and the scaling
    ratio rho_bar = lim beta/alpha in [0, inf].  All evaluations broadcast
    over an array of states u.
    """

    op: SpectralOperator
    coeffs: CoefficientSet
    q_lambdas: np.ndarray   # (N,) eigenvalues of sqrt(Q)
    b_thetas: np.ndarray    # (2,) eigenvalues of sqrt(B)
    rho_bar: float
    delta0: float = 1.0

    def __post_init__(self):
        if self.delta0 <= 0:
            raise ValueError("delta0 must be strictly positive")
        if not (self.rho_bar >= 0):
            raise ValueError("rho_bar must be in [0, inf]")
        object.__setattr__(self, "q_lambdas", np.asarray(self.q_lambdas, dtype=float))
        object.__setattr__(self, "b_thetas", np.asarray(self.b_thetas, dtype=float))

    @property
    def weights(self) -> tuple[float, float]:
        """Channel weights (1/(1+rho), rho/(1+rho)), with (0, 1) at rho = inf."""
        if math.isinf(self.rho_bar):
            return 0.0, 1.0
        return 1.0 / (1.0 + self.rho_bar), self.rho_bar / (1.0 + self.rho_bar)

    @property
    def is_additive(self) -> bool:
        return self.coeffs.g.is_constant

    @cached_property
    def _density_weights(self) -> np.ndarray:
        return self.op.density_on_grid * self.op.quad_weights

    @cached_property
    def _nstar_m(self) -> np.ndarray:
        """(N*_delta0 m)(p) at the two boundary points."""
        m_modes = self.op.to_modes(self.op.density_on_grid)
        return (m_modes / (self.delta0 + self.op.eigenvalues)) @ self.op.boundary_values

    def f_bar(self, t, u):
        """F_bar(t, u): integral of f(t, ., u) against the invariant density."""
        u = np.asarray(u, dtype=float)
        vals = self.coeffs.f.value(t, self.op.grid, u[..., None])
        return (vals * self._density_weights).sum(axis=-1)

    def f_bar_prime(self, t, u):
        u = np.asarray(u, dtype=float)
        vals = self.coeffs.f.d_dr(t, self.op.grid, u[..., None])
        return (vals * self._density_weights).sum(axis=-1)

    def row_h(self, t, u):
        """sqrt(Q)[g(t, ., u) m] as mode coefficients; shape (..., N)."""
        u = np.asarray(u, dtype=float)
        g_vals = self.coeffs.g.value(t, self.op.grid, u[..., None])
        proj = (g_vals * self._density_weights) @ self.op.modes_on_grid.T
        return self.q_lambdas * proj

    def row_h_prime(self, t, u):
        u = np.asarray(u, dtype=float)
        g_vals = self.coeffs.g.d_dr(t, self.op.grid, u[..., None])
        proj = (g_vals * self._density_weights) @ self.op.modes_on_grid.T
        return self.q_lambdas * proj

    def row_z(self, t) -> np.ndarray:
        """delta0 sqrt(B)[Sigma(t) N*_delta0 m] at the two boundary points."""
        sig = self.coeffs.sigma.values(t)
        return self.delta0 * self.b_thetas * sig * self._nstar_m

    def h(self, t, u):
        """Noise intensity H(t, u); broadcasts over u."""
        w_h, w_z = self.weights
        rh = self.row_h(t, u)
        rz = self.row_z(t)
        return w_h**2 * (rh * rh).sum(axis=-1) + w_z**2 * (rz * rz).sum()

    def h_prime(self, t, u):
        w_h, _ = self.weights
        rh = self.row_h(t, u)
        drh = self.row_h_prime(t, u)
        return 2.0 * w_h**2 * (rh * drh).sum(axis=-1)


def averaged_F(model: AveragedModel, t: float, u: float) -> float:
    return float(model.f_bar(t, u))


def averaged_G_row(model: AveragedModel, t: float, u: float) -> Field:
    return Field(model.row_h(t, u))


def averaged_Sigma_row(model: AveragedModel, t: float) -> BoundaryData:
    return BoundaryData(model.row_z(t))


def noise_intensity_H(model: AveragedModel, t: float, u: float) -> float:
    return float(model.h(t, u))


@dataclass(frozen=True)
class NondegeneracyReport:
    min_h: float
    argmin_t: float
    argmin_u: float
    floor: float
    passed: bool


def check_nondegeneracy(model: AveragedModel, t_grid, u_grid, floor: float = 1e-12) -> NondegeneracyReport:
    """Report the minimum of H over a (t, u) grid against a positive floor."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    u_grid = np.atleast_1d(np.asarray(u_grid, dtype=float))
    if t_grid.size == 0 or u_grid.size == 0:
        raise ValueError("nondegeneracy grids must be nonempty")
    best = (np.inf, 0.0, 0.0)
    for t in t_grid:
        hs = model.h(t, u_grid)
        i = int(np.argmin(hs))
        if hs[i] < best[0]:
            best = (float(hs[i]), float(t), float(u_grid[i]))
    return NondegeneracyReport(
        min_h=best[0], argmin_t=best[1], argmin_u=best[2], floor=floor, passed=best[0] > floor
    )


@dataclass(frozen=True)
class CoefficientHypothesesReport:
    """Sampled evidence for the Lipschitz and sup-bound conditions on f, g, sigma."""

    max_f_ratio: float
    max_g_ratio: float
    f_zero_sup: float
    g_zero_sup: float
    sigma_sup: float
    passed: bool


def check_coefficient_hypotheses(
    cs: CoefficientSet,
    op: SpectralOperator,
    rng: np.random.Generator,
    n_samples: int = 200,
    r_scale: float = 5.0,
    slack: float = 1.0 + 1e-9,
) -> CoefficientHypothesesReport:
    """Stochastic probe of the declared Lipschitz bounds on sampled grids.

    Evidence, not proof: ratios |f(r1)-f(r2)| / |r1-r2| are sampled at random
    (xi, r1, r2) and compared to the declared constants.
    """
    r1 = r_scale * rng.standard_normal((n_samples, 1))
    r2 = r_scale * rng.standard_normal((n_samples, 1))
    xi = op.grid[None, :]
    t = 0.0
    dr = np.abs(r1 - r2).clip(1e-12, None)

    def max_ratio(coeff):
        num = np.abs(coeff.value(t, xi, r1) - coeff.value(t, xi, r2))
        return float((num / dr).max())

    f_ratio = max_ratio(cs.f)
    g_ratio = max_ratio(cs.g)
    f_zero = float(np.abs(cs.f.value(t, op.grid, 0.0)).max())
    g_zero = float(np.abs(cs.g.value(t, op.grid, 0.0)).max())
    sig_sup = cs.sigma.sup_bound
    ok = (
        f_ratio <= cs.lipschitz_bound_f * slack + 1e-12
        and g_ratio <= cs.lipschitz_bound_g * slack + 1e-12
        and np.isfinite(f_zero)
        and np.isfinite(g_zero)
        and np.isfinite(sig_sup)
    )
    return CoefficientHypothesesReport(
        max_f_ratio=f_ratio,
        max_g_ratio=g_ratio,
        f_zero_sup=f_zero,
        g_zero_sup=g_zero,
        sigma_sup=sig_sup,
        passed=bool(ok),
    )
