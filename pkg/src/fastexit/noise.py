"""Covariance spectra, reproducible Gaussian streams, and stochastic convolutions.

Both Wiener processes are diagonal in their reference bases: w^Q in the
operator eigenbasis with sqrt(Q) e_k = lambda_k e_k, and w^B on the two
boundary points with sqrt(B) weights theta_j.

The stochastic convolutions in the mild solution are infinite-dimensional OU
processes and are integrated exactly per mode (exponential integrator), never
by Euler on the stiff linear part.  Over one step of size dt,

    state_k <- exp(-alpha_k dt / eps) state_k + eta_k,

where eta_k is a centered Gaussian whose variance carries the exact OU weight

    v_k(dt) = eps / (2 alpha_k) * (1 - exp(-2 alpha_k dt / eps)),   v_0 = dt.

Interior channel: variance_k = sum_j (lambda_j M_kj)^2 v_k with
M_kj = <g e_j, e_k> frozen at the step start (weak order 1/2 for
state-dependent g; exact for constant g, where M = g I).  Boundary channel:
the (delta0 - A) prefactor of the mild form cancels the Neumann-map
denominator (delta0 + alpha_k) exactly in the eigenbasis, leaving the
delta0-free coupling b_kj = sigma(j) e_k(j) and
variance_k = sum_j theta_j^2 b_kj^2 v_k.

Randomness comes from counter-based Philox generators keyed by
(seed, stream), so a fixed (seed, stream, call sequence) reproduces draws
bit-for-bit under any parallel schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operator import Field, SpectralOperator

__all__ = [
    "CovarianceSpectrumQ",
    "CovarianceSpectrumB",
    "RngStream",
    "EigenvalueCheckReport",
    "make_q_spectrum",
    "make_b_spectrum",
    "check_hyp_eigenvalues",
    "sample_wQ_increment",
    "conv_Q_step",
    "conv_B_step",
    "ou_step_weights",
    "boundary_coupling",
]


@dataclass(frozen=True)
class CovarianceSpectrumQ:
    """Eigenvalues lambda_k of sqrt(Q) on the interior modes."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if np.any(lam < 0):
            raise ValueError("sqrt(Q) eigenvalues must be nonnegative")
        object.__setattr__(self, "lambdas", lam)


@dataclass(frozen=True)
class CovarianceSpectrumB:
    """Eigenvalues theta_j of sqrt(B) on the two boundary points."""

    thetas: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.thetas, dtype=float)
        if th.shape != (2,):
            raise ValueError("boundary spectrum needs exactly two weights")
        if np.any(th < 0):
            raise ValueError("sqrt(B) eigenvalues must be nonnegative")
        object.__setattr__(self, "thetas", th)


def make_q_spectrum(spec: dict, n_modes: int) -> CovarianceSpectrumQ:
    kind = spec["kind"]
    if kind == "flat":
        return CovarianceSpectrumQ(np.full(n_modes, float(spec["value"])))
    if kind == "power":
        k = np.arange(n_modes)
        return CovarianceSpectrumQ(spec["amp"] * (1.0 + k) ** (-float(spec["exponent"])))
    if kind == "list":
        vals = np.asarray(spec["values"], dtype=float)
        if vals.shape[0] < n_modes:
            raise ValueError("explicit spectrum shorter than the mode count")
        return CovarianceSpectrumQ(vals[:n_modes])
    if kind == "mode0":
        lam = np.zeros(n_modes)
        lam[0] = float(spec["value"])
        return CovarianceSpectrumQ(lam)
    raise ValueError(f"unknown Q spectrum kind '{kind}'")


def make_b_spectrum(spec: dict) -> CovarianceSpectrumB:
    kind = spec["kind"]
    if kind == "flat":
        return CovarianceSpectrumB(np.full(2, float(spec["value"])))
    if kind == "list":
        return CovarianceSpectrumB(np.asarray(spec["values"], dtype=float))
    raise ValueError(f"unknown B spectrum kind '{kind}'")


@dataclass
class RngStream:
    """Counter-based Gaussian stream keyed by (seed, stream id).

    A stream is owned by exactly one in-flight path (or path block); identical
    (seed, stream, call sequence) yields bit-identical draws regardless of
    what other streams do.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed % 2**64, self.stream % 2**64], dtype=np.uint64))
        )

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def spawn(self, stream: int) -> "RngStream":
        return RngStream(seed=self.seed, stream=stream)


@dataclass(frozen=True)
class EigenvalueCheckReport:
    dim: int
    passed: bool
    note: str
    best_rho: float | None = None
    kappa_q: float | None = None
    best_beta: float | None = None
    kappa_b: float | None = None


def _tail_exponent(terms: np.ndarray) -> float:
    """Log-log slope of the term sequence over its tail half (decay exponent p)."""
    n = terms.shape[0]
    tail = terms[n // 2 :]
    k = np.arange(n // 2, n) + 1.0
    good = tail > 0
    if good.sum() < 3:
        return np.inf  # identically-zero tail: series trivially summable
    logs = np.log(tail[good])
    logk = np.log(k[good])
    slope = np.polyfit(logk, logs, 1)[0]
    return -slope


def _summability(terms: np.ndarray) -> tuple[bool, float]:
    """Judge summability of a finite term list by its fitted tail decay.

    Returns (finite, partial sum + integral tail bound).  Decay exponents
    p > 1 are accepted; the tail estimate is a_n * n / (p - 1).
    """
    s = float(terms.sum())
    p = _tail_exponent(terms)
    if not np.isfinite(p):
        return True, s
    if p <= 1.0 + 1e-6:
        return False, np.inf
    n = terms.shape[0]
    tail = float(terms[-1]) * n / (p - 1.0)
    return True, s + tail


def check_hyp_eigenvalues(dim: int, lambdas, e_sup_norms=None, thetas=None) -> EigenvalueCheckReport:
    """Colored-noise admissibility check on the covariance eigenvalues.

    For dim = 1 the check passes unconditionally (space-time white noise is
    admissible) and says so.  For dim >= 2 it searches exponents rho below
    2 dim / (dim - 2) (unbounded at dim = 2) and beta below 2 dim / (dim - 1)
    for finite weighted sums

        kappa_Q = sum_k lambda_k^rho |e_k|_inf^2,     kappa_B = sum_k theta_k^beta,

    judging finiteness of the finite lists by their fitted tail decay.
    """
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    if dim == 1:
        return EigenvalueCheckReport(
            dim=1, passed=True, note="d = 1: white noise admissible, no eigenvalue condition"
        )
    lam = np.asarray(lambdas, dtype=float)
    sup = np.ones_like(lam) if e_sup_norms is None else np.asarray(e_sup_norms, dtype=float)
    rho_max = np.inf if dim == 2 else 2.0 * dim / (dim - 2.0)
    beta_max = 2.0 * dim / (dim - 1.0)
    rho_grid = [r for r in (0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0) if r < rho_max]
    best_rho, kappa_q = None, None
    for rho in rho_grid:
        ok, s = _summability(lam**rho * sup**2)
        if ok:
            best_rho, kappa_q = rho, s
            break
    best_beta, kappa_b = None, None
    if thetas is not None:
        th = np.asarray(thetas, dtype=float)
        beta_grid = [b for b in (0.25, 0.5, 1.0, 1.5, 2.0, 3.0) if b < beta_max]
        for beta in beta_grid:
            ok, s = _summability(th**beta)
            if ok:
                best_beta, kappa_b = beta, s
                break
        b_ok = best_beta is not None
    else:
        b_ok = True
    q_ok = best_rho is not None
    note = "finite partial sums found" if (q_ok and b_ok) else "no admissible exponents on the search grid"
    return EigenvalueCheckReport(
        dim=dim,
        passed=bool(q_ok and b_ok),
        note=note,
        best_rho=best_rho,
        kappa_q=kappa_q,
        best_beta=best_beta,
        kappa_b=kappa_b,
    )


def sample_wQ_increment(spec: CovarianceSpectrumQ, rng: RngStream, dt: float) -> Field:
    """One increment of w^Q over dt: mode k gets lambda_k N(0, dt), independently."""
    if dt <= 0:
        raise ValueError("dt must be strictly positive")
    z = rng.normal(spec.lambdas.shape)
    return Field(spec.lambdas * np.sqrt(dt) * z)


def ou_step_weights(alphas: np.ndarray, eps: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode decay exp(-alpha dt/eps) and exact OU variance weight v_k(dt)."""
    if eps <= 0 or dt <= 0:
        raise ValueError("eps and dt must be strictly positive")
    decay = np.exp(-alphas * dt / eps)
    rate = 2.0 * alphas / eps
    v = np.full(alphas.shape, dt)
    pos = alphas > 0
    v[pos] = -np.expm1(-rate[pos] * dt) / rate[pos]
    return decay, v


def conv_Q_step(
    op: SpectralOperator,
    spec: CovarianceSpectrumQ,
    eps: float,
    dt: float,
    g_frozen: np.ndarray | None,
    state: Field,
    rng: RngStream,
) -> Field:
    """Advance the interior stochastic convolution one step.

    g_frozen is the multiplier g(t, ., u(t)) evaluated on the quadrature grid
    at the step start, or None for g = 1 (then the coupling matrix is the
    identity and the per-mode update is the exact OU law).
    """
    decay, v = ou_step_weights(op.eigenvalues, eps, dt)
    if g_frozen is None:
        var = spec.lambdas**2 * v
    else:
        weighted = op.modes_on_grid * (np.asarray(g_frozen) * op.quad_weights)
        m_mat = weighted @ op.modes_on_grid.T  # M_kj = <g e_j, e_k>
        var = ((m_mat * spec.lambdas[None, :]) ** 2).sum(axis=1) * v
    eta = np.sqrt(var) * rng.normal(op.eigenvalues.shape)
    return Field(decay * state.coeffs + eta)


def boundary_coupling(op: SpectralOperator, sigma_values: np.ndarray) -> np.ndarray:
    """Coupling rows b_kj = sigma(j) e_k(boundary point j); delta0-free."""
    return op.boundary_values * np.asarray(sigma_values)[None, :]


def conv_B_step(
    op: SpectralOperator,
    spec: CovarianceSpectrumB,
    sigma_values: np.ndarray,
    delta0: float,
    eps: float,
    dt: float,
    state: Field,
    rng: RngStream,
) -> Field:
    """Advance the boundary stochastic convolution one step.

    delta0 is validated but does not enter the update: the (delta0 - A)
    factor and the Neumann denominator (delta0 + alpha_k) cancel exactly.
    """
    if delta0 <= 0:
        raise ValueError("delta0 must be strictly positive")
    decay, v = ou_step_weights(op.eigenvalues, eps, dt)
    b = boundary_coupling(op, sigma_values)
    var = ((spec.thetas[None, :] * b) ** 2).sum(axis=1) * v
    eta = np.sqrt(var) * rng.normal(op.eigenvalues.shape)
    return Field(decay * state.coeffs + eta)
