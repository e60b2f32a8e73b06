"""Assembly of the backward-equation approximation from one observed path.

Given a forward path X on [0, T], the approximation on [delta, T] is

    Y_hat_t = u(t, X_t, theta_onestep_t),
    Z_hat_t = epsilon sigma(t, X_t) u_x(t, X_t, theta_onestep_t),

with theta_onestep the one-step estimator profile.  In experiment mode (true
theta0 supplied) the oracle pair Y, Z and the limiting Gaussian factor

    xi_t = I(theta0, t)^{-1} int_0^t (S_theta/sigma)(theta0, s, x_s) dW_s

are computed alongside, so that first-order residuals and efficiency ratios
can be formed per replication.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, SingularInformationError
from .estimation import (
    INFO_FLOOR,
    EstimateTrace,
    EstimationWindow,
    fisher_information,
    fisher_profile,
    mde_estimate,
    onestep_trace,
)
from .grids import Path, TimeGrid, window_grid
from .models import ModelSpec, broadcast_eval, solve_limit_ode


@dataclass
class BsdeApproximation:
    """Approximation output on the nodes of [delta, T]."""

    x_obs: Path
    y_hat: Path
    z_hat: Path
    trace: EstimateTrace
    y_true: Optional[Path] = None
    z_true: Optional[Path] = None
    error_limit: Optional[Path] = None

    @property
    def times(self) -> np.ndarray:
        return self.y_hat.times

    def node_index(self, t: float) -> int:
        return self.y_hat.grid.node_index(t)


@dataclass
class ResidualDecomposition:
    """First-order residuals r_Y = (Y_hat - Y - eps udot xi)/eps and
    r_Z = (Z_hat - Z - eps^2 sigma udot_x xi)/eps^2."""

    r_y: Path
    r_z: Path
    degenerate: bool = False


def approximate_bsde(model: ModelSpec, vf, X: Path, W: Path,
                     window: EstimationWindow, epsilon: float,
                     theta0: Optional[float] = None) -> BsdeApproximation:
    """Pilot estimate, one-step profile, and value-function evaluation.

    vf is any value-function backend exposing value/value_x (and the limit
    accessors for bounds).  When theta0 is given the oracle Y, Z and the
    limiting Gaussian factor xi are attached for risk evaluation.
    """
    delta = window.delta
    i = X.grid.node_index(delta)
    theta_pilot = mde_estimate(model, X, delta)
    trace = onestep_trace(model, theta_pilot, X, delta, epsilon)

    wgrid = window_grid(X.grid, delta)
    t_arr = X.times[i:]
    x_arr = X.values[i:]
    sig = broadcast_eval(model.diffusion(t_arr, x_arr), t_arr.shape)

    y_hat = np.asarray(vf.value(t_arr, x_arr, trace.theta_onestep), dtype=float)
    z_hat = epsilon * sig * np.asarray(vf.value_x(t_arr, x_arr, trace.theta_onestep), dtype=float)

    out = BsdeApproximation(
        x_obs=Path(wgrid, x_arr.copy()),
        y_hat=Path(wgrid, y_hat),
        z_hat=Path(wgrid, z_hat),
        trace=trace,
    )
    if theta0 is None:
        return out

    y_true = np.asarray(vf.value(t_arr, x_arr, theta0), dtype=float)
    z_true = epsilon * sig * np.asarray(vf.value_x(t_arr, x_arr, theta0), dtype=float)

    flow = solve_limit_ode(model, theta0, X.grid)
    info0 = fisher_profile(model, theta0, flow)
    if np.any(info0[i:] < INFO_FLOOR):
        raise SingularInformationError("information below floor past the learning window")
    tk = X.times[:-1]
    xk = flow.values[:-1]
    weight = broadcast_eval(model.drift_dtheta(theta0, tk, xk), tk.shape) / \
        broadcast_eval(model.diffusion(tk, xk), tk.shape)
    dw = np.diff(W.values)
    cums = np.concatenate(([0.0], np.cumsum(weight * dw)))
    xi = cums[i:] / info0[i:]

    out.y_true = Path(wgrid, y_true)
    out.z_true = Path(wgrid, z_true)
    out.error_limit = Path(wgrid, xi)
    return out


def residual_decomposition(approx: BsdeApproximation, model: ModelSpec, vf,
                           theta0: float, epsilon: float) -> ResidualDecomposition:
    """Normalized remainders after subtracting the first-order expansion."""
    if approx.y_true is None or approx.error_limit is None:
        raise ConfigurationError("residuals need an approximation built with theta0")
    wgrid = approx.y_hat.grid
    if epsilon == 0.0:
        zeros = np.zeros(approx.y_hat.values.shape)
        return ResidualDecomposition(Path(wgrid, zeros), Path(wgrid, zeros.copy()), degenerate=True)
    t_arr = approx.times
    x_arr = approx.x_obs.values
    xi = approx.error_limit.values
    udot = np.asarray(vf.value_theta(t_arr, x_arr, theta0), dtype=float)
    udot_x = np.asarray(vf.value_theta_x(t_arr, x_arr, theta0), dtype=float)
    sig = broadcast_eval(model.diffusion(t_arr, x_arr), t_arr.shape)
    r_y = (approx.y_hat.values - approx.y_true.values - epsilon * udot * xi) / epsilon
    r_z = (approx.z_hat.values - approx.z_true.values - epsilon**2 * sig * udot_x * xi) / epsilon**2
    return ResidualDecomposition(Path(wgrid, r_y), Path(wgrid, r_z))


def efficiency_bounds(model: ModelSpec, vf, theta0: float, t: float,
                      n_steps: int = 2000):
    """Pointwise lower bounds for the normalized Y and Z risks at time t:

        boundY = udot0(t, x_t, theta0)^2 / I(theta0, t),
        boundZ = udot0_x(t, x_t, theta0)^2 sigma(t, x_t)^2 / I(theta0, t),

    with udot0 the theta-derivative of the limit value function along the
    limit flow x at theta0.
    """
    if t <= 0:
        raise ConfigurationError("bounds need t > 0")
    grid = TimeGrid(0.0, t, n_steps)
    flow = solve_limit_ode(model, theta0, grid)
    info = fisher_information(model, theta0, flow, t)
    x_t = float(flow.values[-1])
    udot0 = float(np.asarray(vf.limit_value_theta(t, x_t, theta0)))
    udot0_x = float(np.asarray(vf.limit_value_theta_x(t, x_t, theta0)))
    sig_t = float(model.diffusion(t, x_t))
    return udot0**2 / info, udot0_x**2 * sig_t**2 / info


def plugin_value_path(model: ModelSpec, vf, X: Path, window: EstimationWindow,
                      epsilon: float, theta_pilot: Optional[float] = None) -> Path:
    """Plug-in comparator: freeze the pilot estimate in the value function.

    Y_bar_t = u(t, X_t, theta_pilot) on [delta, T].  Inefficient relative to
    the one-step construction; used as the risk comparator in experiments.
    """
    delta = window.delta
    i = X.grid.node_index(delta)
    if theta_pilot is None:
        theta_pilot = mde_estimate(model, X, delta)
    t_arr = X.times[i:]
    x_arr = X.values[i:]
    y_bar = np.asarray(vf.value(t_arr, x_arr, float(theta_pilot)), dtype=float)
    return Path(window_grid(X.grid, delta), y_bar)
