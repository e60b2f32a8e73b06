"""Forward model specification and deterministic/stochastic integrators.

The forward dynamics are

    dX_t = S(theta, t, X_t) dt + epsilon * sigma(t, X_t) dW_t,   X_0 = x0,

on [0, T], with theta an unknown scalar in a bounded open interval.  As
epsilon -> 0 the paths concentrate on the deterministic flow

    dx_t/dt = S(theta, t, x_t),   x_0 = x0.

All model callables must broadcast over numpy arrays in every argument; the
package evaluates them on scalars, on vectors of parameter candidates, and on
whole path arrays.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import (
    ConfigurationError,
    IntegrationDivergedError,
    ModelValidationError,
    SimulationDivergedError,
)
from .grids import NoiseSource, Path, TimeGrid

# Simulated paths beyond this magnitude abort the replication.
BLOWUP_GUARD = 1e12


def broadcast_eval(value, shape):
    """Coerce a model-callable result to float64 with the expected shape.

    Lets coefficient functions that are constant in some argument return a
    plain scalar without breaking vectorized callers.
    """
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


@dataclass
class ModelSpec:
    """Coefficients of the forward dynamics together with their derivatives.

    Parameters
    ----------
    drift : callable (theta, t, x) -> S
    drift_dtheta : callable, derivative of S in theta
    drift_ddtheta : callable, second derivative of S in theta
    drift_dx : callable, derivative of S in x
    drift_dtheta_dx : callable, mixed derivative of S in theta and x
    diffusion : callable (t, x) -> sigma, with sigma(t,x)^2 >= kappa > 0
    diffusion_dx : callable, derivative of sigma in x
    theta_interval : open interval (alpha, beta) of admissible theta
    x0 : initial state
    horizon : terminal time T
    kappa : declared uniform lower bound on sigma^2
    growth_const : declared Lipschitz/linear-growth constant for S and sigma
    """

    drift: Callable
    drift_dtheta: Callable
    drift_ddtheta: Callable
    drift_dx: Callable
    drift_dtheta_dx: Callable
    diffusion: Callable
    diffusion_dx: Callable
    theta_interval: Tuple[float, float]
    x0: float
    horizon: float
    kappa: float
    growth_const: float

    def __post_init__(self):
        a, b = self.theta_interval
        if not a < b:
            raise ConfigurationError("theta_interval must be a nonempty open interval")
        if self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        if self.kappa <= 0:
            raise ConfigurationError("kappa must be positive")

    def clamp_theta(self, theta: float) -> Tuple[float, bool]:
        """Project theta onto the closure of theta_interval."""
        a, b = self.theta_interval
        if theta < a:
            return a, True
        if theta > b:
            return b, True
        return theta, False

    def contains_theta(self, theta: float) -> bool:
        a, b = self.theta_interval
        return a <= theta <= b


def _central_diff(f, u, step):
    return (f(u + step) - f(u - step)) / (2.0 * step)


def validate_model(model: ModelSpec, n_samples: int = 5, rel_tol: float = 1e-5) -> None:
    """Spot-check a model's declared derivatives and bounds.

    Derivative fields are compared against central finite differences of their
    parents on a lattice of (theta, t, x) samples; the diffusion floor kappa
    and the declared Lipschitz/growth constant are checked on the same lattice.
    Raises ModelValidationError on the first violation.
    """
    a, b = model.theta_interval
    thetas = np.linspace(a + 0.05 * (b - a), b - 0.05 * (b - a), n_samples)
    ts = np.linspace(0.0, model.horizon, n_samples)
    span = 2.0 * (1.0 + abs(model.x0))
    xs = np.linspace(model.x0 - span, model.x0 + span, n_samples)

    def check(name, got, want):
        tol = rel_tol * max(1.0, abs(want), abs(got))
        if not np.isfinite(got) or abs(got - want) > tol:
            raise ModelValidationError(
                f"{name} disagrees with finite difference: declared {got}, measured {want}"
            )

    h_th = 1e-5 * max(1.0, b - a)
    for th in thetas:
        for t in ts:
            for x in xs:
                s2 = float(model.diffusion(t, x)) ** 2
                if s2 < model.kappa * (1.0 - 1e-12):
                    raise ModelValidationError(
                        f"diffusion^2 = {s2} below declared floor kappa = {model.kappa}"
                    )
                L = model.growth_const
                if abs(float(model.drift(th, t, x))) > L * (1.0 + abs(x)) * (1.0 + 1e-9):
                    raise ModelValidationError("drift violates declared growth bound")
                if abs(float(model.diffusion(t, x))) > L * (1.0 + abs(x)) * (1.0 + 1e-9):
                    raise ModelValidationError("diffusion violates declared growth bound")
                h_x = 1e-5 * max(1.0, abs(x))
                check(
                    "drift_dtheta",
                    float(model.drift_dtheta(th, t, x)),
                    _central_diff(lambda u: float(model.drift(u, t, x)), th, h_th),
                )
                check(
                    "drift_ddtheta",
                    float(model.drift_ddtheta(th, t, x)),
                    _central_diff(lambda u: float(model.drift_dtheta(u, t, x)), th, h_th),
                )
                check(
                    "drift_dx",
                    float(model.drift_dx(th, t, x)),
                    _central_diff(lambda u: float(model.drift(th, t, u)), x, h_x),
                )
                check(
                    "drift_dtheta_dx",
                    float(model.drift_dtheta_dx(th, t, x)),
                    _central_diff(lambda u: float(model.drift_dtheta(th, t, u)), x, h_x),
                )
                check(
                    "diffusion_dx",
                    float(model.diffusion_dx(t, x)),
                    _central_diff(lambda u: float(model.diffusion(t, u)), x, h_x),
                )
    # Lipschitz spot check in x on sample pairs.
    for th in thetas:
        for t in ts:
            for x1, x2 in zip(xs[:-1], xs[1:]):
                gap = abs(float(model.drift(th, t, x2)) - float(model.drift(th, t, x1)))
                if gap > model.growth_const * abs(x2 - x1) * (1.0 + 1e-9) + 1e-12:
                    raise ModelValidationError("drift violates declared Lipschitz bound in x")


def _rk4_values(model: ModelSpec, theta, grid: TimeGrid):
    """RK4 solution values of the limit ODE; theta may be a scalar or a vector.

    Returns an array of shape (n+1,) for scalar theta, or (n+1, k) when theta
    is a vector of k parameter candidates advanced in lockstep.
    """
    theta = np.asarray(theta, dtype=float)
    times = grid.times
    h = grid.h
    x = np.broadcast_to(np.asarray(model.x0, dtype=float), theta.shape).copy()
    out = np.empty((grid.n_steps + 1,) + theta.shape)
    out[0] = x
    S = model.drift
    for k in range(grid.n_steps):
        t = times[k]
        k1 = S(theta, t, x)
        k2 = S(theta, t + 0.5 * h, x + 0.5 * h * k1)
        k3 = S(theta, t + 0.5 * h, x + 0.5 * h * k2)
        k4 = S(theta, t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(
                f"limit ODE diverged at node {k + 1} (t={times[k + 1]:.6g})",
                node_index=k + 1,
            )
        out[k + 1] = x
    return out


def solve_limit_ode(model: ModelSpec, theta: float, grid: TimeGrid) -> Path:
    """Solve dx/dt = S(theta, t, x), x(t_start) = x0 with fixed-step RK4."""
    values = _rk4_values(model, float(theta), grid)
    return Path(grid, values)


def simulate_forward(
    model: ModelSpec,
    theta: float,
    epsilon: float,
    grid: TimeGrid,
    noise: NoiseSource,
) -> Tuple[Path, Path]:
    """Euler-Maruyama path of the forward SDE plus its driving Brownian path.

    Returns (X, W) on the same grid, with W(t_start) = 0.  Any |X| beyond the
    blow-up guard aborts the replication with SimulationDivergedError.
    """
    if epsilon < 0:
        raise ConfigurationError("epsilon must be nonnegative")
    if not model.contains_theta(theta):
        raise ConfigurationError(f"theta={theta} outside closure of theta_interval")
    h = grid.h
    times = grid.times
    dw = noise.increments(grid.n_steps, h)
    x = float(model.x0)
    xs = np.empty(grid.n_steps + 1)
    xs[0] = x
    S = model.drift
    sig = model.diffusion
    for k in range(grid.n_steps):
        t = times[k]
        x = x + float(S(theta, t, x)) * h + epsilon * float(sig(t, x)) * dw[k]
        if not np.isfinite(x) or abs(x) > BLOWUP_GUARD:
            raise SimulationDivergedError(
                f"simulated path exceeded guard at node {k + 1}", node_index=k + 1
            )
        xs[k + 1] = x
    w = np.concatenate(([0.0], np.cumsum(dw)))
    return Path(grid, xs), Path(grid, w)


def sensitivity_xdot(model: ModelSpec, theta: float, grid: TimeGrid) -> Path:
    """Derivative of the limit flow in theta, by variation of constants:

        xdot_t = int_0^t exp{ int_s^t S_x(theta, v, x_v) dv } S_theta(theta, s, x_s) ds.

    The inner exponent is accumulated once on the grid, so the whole profile
    costs one ODE solve plus two cumulative trapezoid passes.
    """
    x = _rk4_values(model, float(theta), grid)
    times = grid.times
    h = grid.h
    g = broadcast_eval(model.drift_dx(theta, times, x), times.shape)
    expo = np.concatenate(([0.0], np.cumsum(0.5 * h * (g[1:] + g[:-1]))))
    sdot = broadcast_eval(model.drift_dtheta(theta, times, x), times.shape)
    integrand = np.exp(-expo) * sdot
    acc = np.concatenate(([0.0], np.cumsum(0.5 * h * (integrand[1:] + integrand[:-1]))))
    return Path(grid, np.exp(expo) * acc)
