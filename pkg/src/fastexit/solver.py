"""Time steppers for the full system and its averaged/limit descriptions.

Four related dynamics are integrated here:

* the full stochastic reaction-diffusion system, by an exponential-Euler
  mild-solution recursion per eigenmode (the stiff transport term eps^{-1} A
  is handled exactly, so the time step is independent of eps);
* the deterministic limit ODE  u' = F_bar(t, u)  by classical RK4;
* the one-dimensional averaged SDE  du = F_bar dt + sqrt(scale * H) dW  by
  Euler-Maruyama;
* the controlled (skeleton) ODE driven by a deterministic control
  phi = (phi_H, phi_Z), by RK4 with the control interpolated between nodes.

The controlled forward solve of the full system adds the control as a
deterministic forcing with weights alpha/sqrt(gamma) and beta/sqrt(gamma)
(their limits 1/(1+rho_bar), rho_bar/(1+rho_bar) may be pinned explicitly,
e.g. to study the noise-free averaging of the forced equation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import AveragedModel, CoefficientSet
from .ensemble import SpdeStepper, diverged_mask, map_blocks, block_stream, BLOCK_SIZE
from .errors import DivergenceError
from .noise import CovarianceSpectrumB, CovarianceSpectrumQ, RngStream
from .operator import Field, SpectralOperator

__all__ = [
    "MultiscaleParams",
    "FieldTrajectory",
    "ScalarTrajectory",
    "solve_spde",
    "solve_controlled_spde",
    "solve_limit_ode",
    "solve_averaged_sde",
    "solve_controlled_ode",
    "solve_controlled_ode_batch",
    "averaging_error",
    "averaging_error_ensemble",
]


@dataclass(frozen=True)
class MultiscaleParams:
    """Scaling bundle (eps, alpha(eps), beta(eps), rho_bar); gamma = (alpha+beta)^2."""

    eps: float
    alpha: float
    beta: float
    rho_bar: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be strictly positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if not (self.rho_bar >= 0):
            raise ValueError("rho_bar must be in [0, inf]")

    @property
    def gamma(self) -> float:
        return (self.alpha + self.beta) ** 2

    @classmethod
    def from_schedule(cls, eps: float, alpha_law: dict, beta_law: dict, rho_bar: float) -> "MultiscaleParams":
        """Evaluate power-law schedules alpha = c eps^p, beta = c eps^p at eps."""
        alpha = alpha_law["coeff"] * eps ** alpha_law["exponent"]
        beta = beta_law["coeff"] * eps ** beta_law["exponent"]
        return cls(eps=eps, alpha=alpha, beta=beta, rho_bar=rho_bar)

    def schedule_ratio(self) -> float:
        """beta/alpha at this eps, recorded against the declared rho_bar."""
        if self.alpha == 0:
            return math.inf if self.beta > 0 else 0.0
        return self.beta / self.alpha


def _float_csv(x: float) -> str:
    return repr(float(x))


@dataclass
class FieldTrajectory:
    """Mode coefficients along a strictly increasing time grid."""

    times: np.ndarray    # (n,)
    states: np.ndarray   # (n, N)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def n_modes(self) -> int:
        return self.states.shape[1]

    def state_at(self, i: int) -> Field:
        return Field(self.states[i])

    def write_csv(self, path):
        header = "t," + ",".join(f"mode_{k}" for k in range(self.n_modes))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(_float_csv(t) + "," + ",".join(_float_csv(v) for v in row) + "\n")


@dataclass
class ScalarTrajectory:
    """Real-valued path on a strictly increasing time grid."""

    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,value\n")
            for t, v in zip(self.times, self.values):
                fh.write(_float_csv(t) + "," + _float_csv(v) + "\n")


def _time_grid(t_final: float, dt: float) -> tuple[np.ndarray, float, int]:
    if t_final <= 0 or dt <= 0:
        raise ValueError("t_final and dt must be strictly positive")
    if dt > t_final:
        raise ValueError("dt must not exceed t_final")
    n = max(1, int(round(t_final / dt)))
    dt_eff = t_final / n
    return np.arange(n + 1) * dt_eff, dt_eff, n


def _control_callable(control, n_modes: int):
    """Turn a ControlPath (or None) into t -> (phi_H coeffs, phi_Z values)."""
    if control is None:
        zero_h = np.zeros(n_modes)
        zero_z = np.zeros(2)
        return lambda t: (zero_h, zero_z)
    times = control.times
    t0, dtg = times[0], times[1] - times[0]

    def at(t):
        s = np.clip((t - t0) / dtg, 0.0, len(times) - 1.0)
        i = min(int(s), len(times) - 2)
        w = s - i
        phi_h = (1.0 - w) * control.phi_h[i] + w * control.phi_h[i + 1]
        phi_z = (1.0 - w) * control.phi_z[i] + w * control.phi_z[i + 1]
        return phi_h, phi_z

    return at


def solve_controlled_spde(
    op: SpectralOperator,
    cs: CoefficientSet,
    spec_q: CovarianceSpectrumQ,
    spec_b: CovarianceSpectrumB,
    params: MultiscaleParams,
    x: Field,
    control,
    t_final: float,
    dt: float,
    rng: RngStream,
    control_weights: tuple[float, float] | None = None,
) -> FieldTrajectory:
    """Forward solve of the full system with deterministic control forcing.

    control may be None (plain forward solve) or a ControlPath; a zero control
    reproduces the uncontrolled solve pathwise for the same stream.
    """
    times, dt_eff, n = _time_grid(t_final, dt)
    stepper = SpdeStepper(
        op, cs, spec_q, spec_b,
        alpha=params.alpha, beta=params.beta, eps=params.eps, dt=dt_eff,
        control=_control_callable(control, op.n_modes) if control is not None else None,
        control_weights=control_weights,
    )
    u = np.array([x.coeffs], dtype=float)
    states = np.empty((n + 1, op.n_modes))
    states[0] = u[0]
    gen = rng._gen
    for i in range(n):
        u = stepper.step(times[i], u, gen)
        if diverged_mask(u)[0]:
            raise DivergenceError(step=i + 1, t=times[i + 1])
        states[i + 1] = u[0]
    return FieldTrajectory(times=times, states=states, meta={"seed": rng.seed, "stream": rng.stream})


def solve_spde(
    op: SpectralOperator,
    cs: CoefficientSet,
    spec_q: CovarianceSpectrumQ,
    spec_b: CovarianceSpectrumB,
    params: MultiscaleParams,
    x: Field,
    t_final: float,
    dt: float,
    rng: RngStream,
) -> FieldTrajectory:
    """Mild-solution forward solve (exponential Euler per mode)."""
    return solve_controlled_spde(op, cs, spec_q, spec_b, params, x, None, t_final, dt, rng)


def _rk4(rhs, u0, times):
    """Classical RK4 over a uniform grid; u0 may be scalar or a batch array."""
    u = np.asarray(u0, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u).copy()
    out = np.empty((len(times),) + u.shape)
    out[0] = u
    for i in range(len(times) - 1):
        t, dt = times[i], times[i + 1] - times[i]
        k1 = rhs(t, u)
        k2 = rhs(t + dt / 2, u + dt / 2 * k1)
        k3 = rhs(t + dt / 2, u + dt / 2 * k2)
        k4 = rhs(t + dt, u + dt * k3)
        u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise DivergenceError(step=i + 1, t=times[i + 1])
        out[i + 1] = u
    return out[:, 0] if scalar else out


def solve_limit_ode(model: AveragedModel, x_mean: float, t_final: float, dt: float) -> ScalarTrajectory:
    """RK4 on the averaged limit dynamics u' = F_bar(t, u), u(0) = <x, mu>."""
    times, _, _ = _time_grid(t_final, dt)
    values = _rk4(lambda t, u: model.f_bar(t, u), float(x_mean), times)
    return ScalarTrajectory(times=times, values=values)


def solve_averaged_sde(
    model: AveragedModel,
    gamma_scale: float,
    x_mean: float,
    t_final: float,
    dt: float,
    rng: RngStream,
) -> ScalarTrajectory:
    """Euler-Maruyama for du = F_bar dt + sqrt(gamma_scale * H(t, u)) dW.

    gamma_scale = 1 gives the averaged SDE itself; gamma_scale = gamma(eps)
    gives the one-dimensional surrogate with the small-noise scaling.
    """
    if gamma_scale < 0:
        raise ValueError("gamma_scale must be nonnegative")
    times, dt_eff, n = _time_grid(t_final, dt)
    values = np.empty(n + 1)
    u = float(x_mean)
    values[0] = u
    sq_dt = np.sqrt(dt_eff)
    for i in range(n):
        t = times[i]
        h = float(model.h(t, u))
        if h < 0:
            raise AssertionError("noise intensity H went negative")
        u = u + dt_eff * float(model.f_bar(t, u)) + math.sqrt(gamma_scale * h) * sq_dt * float(rng.normal())
        if not math.isfinite(u):
            raise DivergenceError(step=i + 1, t=times[i + 1])
        values[i + 1] = u
    return ScalarTrajectory(times=times, values=values)


def solve_controlled_ode(
    model: AveragedModel, x_mean: float, control, t_final: float, dt: float
) -> ScalarTrajectory:
    """RK4 on the skeleton dynamics

        u' = F_bar(t, u) + w_H <phi_H(t), row_H(t, u)> + w_Z <phi_Z(t), row_Z(t)>

    with weights (w_H, w_Z) = (1/(1+rho_bar), rho_bar/(1+rho_bar)).
    """
    times, _, _ = _time_grid(t_final, dt)
    w_h, w_z = model.weights
    ctrl = _control_callable(control, model.op.n_modes)

    def rhs(t, u):
        phi_h, phi_z = ctrl(t)
        drift = model.f_bar(t, u)
        forcing = w_h * (model.row_h(t, u) * phi_h).sum(axis=-1) + w_z * float(model.row_z(t) @ phi_z)
        return drift + forcing

    values = _rk4(rhs, float(x_mean), times)
    return ScalarTrajectory(times=times, values=values)


def solve_controlled_ode_batch(
    model: AveragedModel,
    x_means: np.ndarray,
    node_times: np.ndarray,
    phi_h_all: np.ndarray,
    phi_z_all: np.ndarray,
    t_final: float,
    dt: float,
) -> np.ndarray:
    """Vectorized skeleton solve for a batch of controls on one uniform node grid.

    phi_h_all has shape (P, n_nodes, N) and phi_z_all (P, n_nodes, 2); returns
    the (n_steps + 1, P) array of path values.
    """
    times, _, _ = _time_grid(t_final, dt)
    w_h, w_z = model.weights
    t0, dtg = node_times[0], node_times[1] - node_times[0]
    n_nodes = len(node_times)

    def ctrl(t):
        s = np.clip((t - t0) / dtg, 0.0, n_nodes - 1.0)
        i = min(int(s), n_nodes - 2)
        w = s - i
        return (
            (1.0 - w) * phi_h_all[:, i] + w * phi_h_all[:, i + 1],
            (1.0 - w) * phi_z_all[:, i] + w * phi_z_all[:, i + 1],
        )

    def rhs(t, u):
        phi_h, phi_z = ctrl(t)
        forcing = w_h * (model.row_h(t, u) * phi_h).sum(axis=-1) + w_z * (phi_z @ model.row_z(t))
        return model.f_bar(t, u) + forcing

    return _rk4(rhs, np.asarray(x_means, dtype=float), times)


def averaging_error(
    op: SpectralOperator,
    traj: FieldTrajectory,
    ref: ScalarTrajectory,
    delta: float,
    t_final: float,
) -> float:
    """sup over grid times in [delta, t_final] of |u(t) - ref(t) e_0|_{H_mu}.

    The grids must already coincide; resampling is the caller's job.
    """
    if not (0 < delta < t_final):
        raise ValueError("delta must lie in (0, t_final)")
    if len(traj.times) != len(ref.times) or not np.allclose(traj.times, ref.times):
        raise ValueError("trajectory and reference grids do not match")
    mask = (traj.times >= delta) & (traj.times <= t_final)
    if not mask.any():
        raise ValueError("no grid points in [delta, t_final]")
    diff = traj.states[mask].copy()
    diff[:, 0] -= ref.values[mask]
    return float(op.hmu_norm(diff).max())


def averaging_error_ensemble(
    op: SpectralOperator,
    cs: CoefficientSet,
    spec_q: CovarianceSpectrumQ,
    spec_b: CovarianceSpectrumB,
    params: MultiscaleParams,
    x: Field,
    t_final: float,
    dt: float,
    delta: float,
    ref: ScalarTrajectory,
    n_paths: int,
    seed: int,
    stream_base: int = 0,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo panel of sup_{[delta, T]} |u - ref e_0|_{H_mu} per path.

    Returns (errors, sup_norms) where sup_norms[p] = sup_t |u_p(t)|_H, used by
    the eps-uniform moment probe.  Paths live in fixed blocks with one
    counter-based stream per block, so the panel is reproducible for a given
    seed under any thread count.
    """
    times, dt_eff, n = _time_grid(t_final, dt)
    if len(ref.times) != n + 1 or not np.allclose(ref.times, times):
        raise ValueError("reference grid must match the solver grid")
    stepper = SpdeStepper(
        op, cs, spec_q, spec_b, alpha=params.alpha, beta=params.beta, eps=params.eps, dt=dt_eff
    )
    errors = np.full(n_paths, np.nan)
    sup_norms = np.full(n_paths, np.nan)

    def run_block(b, start, stop, rows):
        gen = block_stream(seed, stream_base | b)._gen
        u = np.tile(x.coeffs, (BLOCK_SIZE, 1))
        err = np.zeros(BLOCK_SIZE)
        sup = np.linalg.norm(u, axis=1)
        alive = np.ones(BLOCK_SIZE, dtype=bool)
        for i in range(n):
            u = stepper.step(times[i], u, gen)
            bad = diverged_mask(u) & alive
            if bad.any():
                alive &= ~bad
                u[bad] = 0.0
            t = times[i + 1]
            np.maximum(sup, np.linalg.norm(u, axis=1), out=sup)
            if t >= delta:
                d = u.copy()
                d[:, 0] -= ref.values[i + 1]
                np.maximum(err, op.hmu_norm(d), out=err)
        err[~alive] = np.nan
        errors[start:stop] = err[: rows]
        sup_norms[start:stop] = sup[: rows]

    map_blocks(run_block, n_paths, threads)
    return errors, sup_norms
