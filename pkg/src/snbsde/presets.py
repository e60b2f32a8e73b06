"""Ready-made model families, terminal payoffs, and drivers.

Every coefficient lives at module level (closures only through
functools.partial over plain floats) so bundles can be pickled and rebuilt
from a name plus a parameter dict.  Each bundle is validated against its
declared derivatives and bounds at build time.
"""

from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ConfigurationError
from .models import ModelSpec, validate_model
from .value_functions import LinearModelSpec, TerminalCondition


# ---------------------------------------------------------------------------
# terminal payoffs

def _identity_f(x):
    return np.asarray(x, dtype=float)


def _identity_df(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _identity_d2f(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _square_f(x):
    x = np.asarray(x, dtype=float)
    return x * x


def _square_df(x):
    return 2.0 * np.asarray(x, dtype=float)


def _square_d2f(x):
    return np.full_like(np.asarray(x, dtype=float), 2.0)


def _cosine_f(x):
    return np.cos(np.asarray(x, dtype=float))


def _cosine_df(x):
    return -np.sin(np.asarray(x, dtype=float))


def _cosine_d2f(x):
    return -np.cos(np.asarray(x, dtype=float))


TERMINALS = {
    "identity": TerminalCondition("identity", _identity_f, _identity_df,
                                  _identity_d2f, 1.0, 1.0),
    "square": TerminalCondition("square", _square_f, _square_df,
                                _square_d2f, 1.0, 2.0),
    "cosine": TerminalCondition("cosine", _cosine_f, _cosine_df,
                                _cosine_d2f, 1.0, 0.0),
}


# ---------------------------------------------------------------------------
# drivers

def linear_driver(beta, gamma, t, x, y, z):
    return beta * y + gamma * z


def make_linear_driver(beta: float, gamma: float) -> Callable:
    return partial(linear_driver, float(beta), float(gamma))


# ---------------------------------------------------------------------------
# drift/diffusion families; theta and x may be scalars or broadcastable arrays

def _const_drift(theta, t, x):
    return theta + 0.0 * np.asarray(x, dtype=float)


def _const_drift_dtheta(theta, t, x):
    return np.ones(np.broadcast_shapes(np.shape(theta), np.shape(x)))


def _zero_theta_x(theta, t, x):
    return np.zeros(np.broadcast_shapes(np.shape(theta), np.shape(x)))


def _prop_drift(theta, t, x):
    return theta * np.asarray(x, dtype=float)


def _prop_drift_dtheta(theta, t, x):
    return np.asarray(x, dtype=float) + 0.0 * theta


def _prop_drift_dx(theta, t, x):
    return theta + 0.0 * np.asarray(x, dtype=float)


def _prop_drift_dtheta_dx(theta, t, x):
    return np.ones(np.broadcast_shapes(np.shape(theta), np.shape(x)))


def _sine_drift(theta, t, x):
    return theta * np.sin(np.asarray(x, dtype=float))


def _sine_drift_dtheta(theta, t, x):
    return np.sin(np.asarray(x, dtype=float)) + 0.0 * theta


def _sine_drift_dx(theta, t, x):
    return theta * np.cos(np.asarray(x, dtype=float))


def _sine_drift_dtheta_dx(theta, t, x):
    return np.cos(np.asarray(x, dtype=float)) + 0.0 * theta


def _tanh_drift(theta, t, x):
    return theta * np.tanh(np.asarray(x, dtype=float))


def _tanh_drift_dtheta(theta, t, x):
    return np.tanh(np.asarray(x, dtype=float)) + 0.0 * theta


def _tanh_drift_dx(theta, t, x):
    return theta * (1.0 - np.tanh(np.asarray(x, dtype=float)) ** 2)


def _tanh_drift_dtheta_dx(theta, t, x):
    return (1.0 - np.tanh(np.asarray(x, dtype=float)) ** 2) + 0.0 * theta


def _const_diffusion(sigma, t, x):
    return sigma + 0.0 * np.asarray(x, dtype=float)


def _zero_diffusion_dx(t, x):
    return np.zeros(np.shape(x))


_DRIFT_SHAPES = {
    "sine": (_sine_drift, _sine_drift_dtheta, _zero_theta_x,
             _sine_drift_dx, _sine_drift_dtheta_dx),
    "tanh": (_tanh_drift, _tanh_drift_dtheta, _zero_theta_x,
             _tanh_drift_dx, _tanh_drift_dtheta_dx),
}


# ---------------------------------------------------------------------------
# bundles

@dataclass(frozen=True)
class ModelBundle:
    """A forward model with its backward driver and terminal payoff.

    linear is set when the constant-drift closed form applies; other bundles
    must be priced through the grid solver or the characteristics fallback.
    """

    name: str
    model: ModelSpec
    driver: Callable
    terminal: TerminalCondition
    linear: Optional[LinearModelSpec]


MODEL_NAMES = ("linear-constant-drift", "linear-ou", "custom-pde")

_COMMON_PARAMS = {"sigma", "beta", "gamma", "terminal", "theta_interval",
                  "x0", "horizon"}
_ALLOWED_PARAMS = {
    "linear-constant-drift": _COMMON_PARAMS,
    "linear-ou": _COMMON_PARAMS,
    "custom-pde": _COMMON_PARAMS | {"drift_shape"},
}


def build_preset(name: str, params: Optional[dict] = None) -> ModelBundle:
    """Build and validate a named bundle.

    params may override sigma, beta, gamma, terminal, theta_interval, x0 and
    horizon; custom-pde additionally accepts drift_shape in {sine, tanh}.
    Unknown keys are rejected by name.
    """
    if name not in MODEL_NAMES:
        raise ConfigurationError(
            f"unknown model '{name}'; choose from {', '.join(MODEL_NAMES)}")
    params = dict(params or {})
    for key in params:
        if key not in _ALLOWED_PARAMS[name]:
            raise ConfigurationError(f"unknown model parameter '{key}' for {name}")

    sigma = float(params.get("sigma", 1.0))
    beta = float(params.get("beta", 0.1))
    gamma = float(params.get("gamma", 0.2))
    terminal_name = params.get("terminal", "identity")
    if terminal_name not in TERMINALS:
        raise ConfigurationError(
            f"unknown terminal '{terminal_name}'; choose from {', '.join(sorted(TERMINALS))}")
    terminal = TERMINALS[terminal_name]
    interval = params.get("theta_interval", (0.1, 1.9))
    if len(interval) != 2:
        raise ConfigurationError("theta_interval must have two entries")
    interval = (float(interval[0]), float(interval[1]))
    # x = 0 is a fixed point of the proportional and sine/tanh drifts where the
    # parameter sensitivity vanishes, so those families start at 1 by default
    x0 = float(params.get("x0", 0.0 if name == "linear-constant-drift" else 1.0))
    horizon = float(params.get("horizon", 1.0))
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")

    growth = max(abs(interval[0]), abs(interval[1]), sigma)
    diffusion = partial(_const_diffusion, sigma)
    kappa = sigma * sigma

    if name == "linear-constant-drift":
        model = ModelSpec(
            drift=_const_drift,
            drift_dtheta=_const_drift_dtheta,
            drift_ddtheta=_zero_theta_x,
            drift_dx=_zero_theta_x,
            drift_dtheta_dx=_zero_theta_x,
            diffusion=diffusion,
            diffusion_dx=_zero_diffusion_dx,
            theta_interval=interval,
            x0=x0,
            horizon=horizon,
            kappa=kappa,
            growth_const=growth,
        )
        linear = LinearModelSpec(sigma, beta, gamma, terminal, interval, x0, horizon)
    elif name == "linear-ou":
        model = ModelSpec(
            drift=_prop_drift,
            drift_dtheta=_prop_drift_dtheta,
            drift_ddtheta=_zero_theta_x,
            drift_dx=_prop_drift_dx,
            drift_dtheta_dx=_prop_drift_dtheta_dx,
            diffusion=diffusion,
            diffusion_dx=_zero_diffusion_dx,
            theta_interval=interval,
            x0=x0,
            horizon=horizon,
            kappa=kappa,
            growth_const=growth,
        )
        linear = None
    else:
        shape = params.get("drift_shape", "sine")
        if shape not in _DRIFT_SHAPES:
            raise ConfigurationError(
                f"unknown drift_shape '{shape}'; choose from {', '.join(sorted(_DRIFT_SHAPES))}")
        s, s_th, s_thth, s_x, s_thx = _DRIFT_SHAPES[shape]
        model = ModelSpec(
            drift=s,
            drift_dtheta=s_th,
            drift_ddtheta=s_thth,
            drift_dx=s_x,
            drift_dtheta_dx=s_thx,
            diffusion=diffusion,
            diffusion_dx=_zero_diffusion_dx,
            theta_interval=interval,
            x0=x0,
            horizon=horizon,
            kappa=kappa,
            growth_const=growth,
        )
        linear = None

    validate_model(model)
    driver = make_linear_driver(beta, gamma)
    return ModelBundle(name, model, driver, terminal, linear)
