"""Lockstep vectorized replication engine for Monte Carlo runs.

Replications are statistically independent, so the harness advances many of
them simultaneously: one array op per Euler step, per RK4 stage, per score
update.  No state crosses replications; every iterative routine (grid-scan
refinement, golden-section, composite quadrature) freezes a replication at
its own convergence point, so each replication's numbers are a pure function
of (seed, stream_id) and never depend on which other replications share the
batch.  All reductions run along the time axis only, which keeps results
bit-identical for any chunking of the replication set.

The scalar single-path operations in `estimation` and `bsde` remain the
reference implementations; the engine mirrors them and is pinned to them by
equivalence tests.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .estimation import INFO_FLOOR, SCAN_POINTS, REFINE_FACTOR, _INVPHI, _trapezoid_weights
from .grids import NoiseSource, TimeGrid
from .models import BLOWUP_GUARD, ModelSpec, broadcast_eval, _rk4_values

# Element cap per value-function evaluation block; keeps the quadrature
# work matrix (elements x nodes) around half a GB.
EVAL_BLOCK = 500_000
VECTOR_QUAD_TOL = 1e-10


def _cumtrapz_rows(values: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros(values.shape)
    np.cumsum(0.5 * h * (values[..., 1:] + values[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def simulate_batch(model: ModelSpec, theta0: float, epsilon: float, grid: TimeGrid,
                   seed: int, stream_ids: Sequence[int]):
    """Euler-Maruyama paths for a block of replications.

    Returns (X, W, diverged) with X, W of shape (M, n+1).  Diverged rows are
    frozen at x0 from the blow-up node on and flagged; their numbers are
    never used downstream.
    """
    m = len(stream_ids)
    n = grid.n_steps
    h = grid.h
    times = grid.times
    dw = np.empty((m, n))
    for r, sid in enumerate(stream_ids):
        dw[r] = NoiseSource(seed, sid).increments(n, h)
    x = np.full(m, float(model.x0))
    xs = np.empty((m, n + 1))
    xs[:, 0] = x
    diverged = np.zeros(m, dtype=bool)
    for k in range(n):
        t = times[k]
        s = broadcast_eval(model.drift(theta0, t, x), x.shape)
        sig = broadcast_eval(model.diffusion(t, x), x.shape)
        x = x + s * h + epsilon * sig * dw[:, k]
        bad = ~np.isfinite(x) | (np.abs(x) > BLOWUP_GUARD)
        diverged |= bad
        x = np.where(diverged, model.x0, x)
        xs[:, k + 1] = x
    w = np.concatenate((np.zeros((m, 1)), np.cumsum(dw, axis=1)), axis=1)
    return xs, w, diverged


def pilot_batch(model: ModelSpec, X: np.ndarray, grid: TimeGrid, delta: float):
    """Minimum-distance pilots for all rows of X; mirrors mde_estimate.

    Returns (theta_pilot, flat) where flat marks rows whose window objective
    has no usable spread.
    """
    i = grid.node_index(delta)
    wgrid = grid.prefix(delta)
    xw = X[:, : i + 1]
    w = _trapezoid_weights(i + 1, wgrid.h)
    lo, hi = model.theta_interval
    tol = (hi - lo) * REFINE_FACTOR

    cand = np.linspace(lo, hi, SCAN_POINTS)
    flows = _rk4_values(model, cand, wgrid)  # (nw+1, 64)
    obj = np.empty((X.shape[0], SCAN_POINTS))
    for j in range(SCAN_POINTS):
        obj[:, j] = np.sum(w * (xw - flows[:, j]) ** 2, axis=1)
    spread = obj.max(axis=1) - obj.min(axis=1)
    flat = spread <= 1e-12 * np.maximum(1.0, np.abs(obj.max(axis=1)))

    best = np.argmin(obj, axis=1)
    a = cand[np.maximum(best - 1, 0)]
    b = cand[np.minimum(best + 1, SCAN_POINTS - 1)]

    def batch_obj(thetas):
        fl = _rk4_values(model, thetas, wgrid)  # (nw+1, M)
        return np.sum(w * (xw - fl.T) ** 2, axis=1)

    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = batch_obj(c)
    fd = batch_obj(d)
    for _ in range(200):
        live = ((b - a) > tol) & ~flat
        if not np.any(live):
            break
        upd = (fc < fd) & live
        oth = ~upd & live
        # shrink toward c where fc < fd
        b = np.where(upd, d, b)
        d = np.where(upd, c, d)
        fd = np.where(upd, fc, fd)
        c_new = b - _INVPHI * (b - a)
        # shrink toward d elsewhere
        a = np.where(oth, c, a)
        c = np.where(oth, d, c)
        fc = np.where(oth, fd, fc)
        d_new = a + _INVPHI * (b - a)
        probe = np.where(upd, c_new, np.where(oth, d_new, c))
        fprobe = batch_obj(probe)
        c = np.where(upd, c_new, c)
        fc = np.where(upd, fprobe, fc)
        d = np.where(oth, d_new, d)
        fd = np.where(oth, fprobe, fd)
    theta = 0.5 * (a + b)
    theta = np.where(flat, 0.5 * (lo + hi), theta)
    return theta, flat


def flow_batch(model: ModelSpec, thetas: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Limit flows for a vector of parameters, shape (M, n+1)."""
    return _rk4_values(model, thetas, grid).T


def fisher_profile_batch(model: ModelSpec, thetas: np.ndarray, flows: np.ndarray,
                         grid: TimeGrid) -> np.ndarray:
    times = grid.times[None, :]
    th = thetas[:, None]
    sdot = broadcast_eval(model.drift_dtheta(th, times, flows), flows.shape)
    sig = broadcast_eval(model.diffusion(times, flows), flows.shape)
    return _cumtrapz_rows(sdot**2 / sig**2, grid.h)


def score_tail_profile_batch(model: ModelSpec, thetas: np.ndarray, X: np.ndarray,
                             grid: TimeGrid, i_delta: int) -> np.ndarray:
    h = grid.h
    tk = grid.times[None, i_delta:-1]
    xk = X[:, i_delta:-1]
    th = thetas[:, None]
    shape = xk.shape
    b = broadcast_eval(model.drift_dtheta(th, tk, xk), shape) / \
        broadcast_eval(model.diffusion(tk, xk), shape) ** 2
    incr = b * (X[:, i_delta + 1:] - xk - broadcast_eval(model.drift(th, tk, xk), shape) * h)
    out = np.zeros((X.shape[0], X.shape[1] - i_delta))
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def vector_simpson(fn, n_rows: int, tol: float = VECTOR_QUAD_TOL, max_levels: int = 14):
    """Composite-Simpson quadrature on [0, 1] for a batch of integrands.

    fn(u) maps quadrature nodes (k,) to integrand values (n_rows, k).  Interval
    count doubles until each row's Richardson estimate settles to tol; settled
    rows freeze so results do not depend on the rest of the batch.  Returns
    (values, failed).
    """
    n = 2
    u = np.linspace(0.0, 1.0, n + 1)
    vals = fn(u)
    s_prev = (1.0 / (3.0 * n)) * (vals[:, 0] + 4.0 * vals[:, 1] + vals[:, 2])
    result = np.zeros(n_rows)
    settled = np.zeros(n_rows, dtype=bool)
    for _ in range(max_levels):
        n *= 2
        u = np.linspace(0.0, 1.0, n + 1)
        vals = fn(u)
        hu = 1.0 / n
        s = (hu / 3.0) * (vals[:, 0] + vals[:, -1]
                          + 4.0 * np.sum(vals[:, 1:-1:2], axis=1)
                          + 2.0 * np.sum(vals[:, 2:-1:2], axis=1))
        err = s - s_prev
        est = s + err / 15.0
        agree = np.abs(err) <= 15.0 * tol
        newly = agree & ~settled
        result = np.where(newly, est, result)
        settled |= agree
        if np.all(settled):
            return result, np.zeros(n_rows, dtype=bool)
        s_prev = s
    result = np.where(settled, result, s_prev)
    return result, ~settled


def _primitive_batch(model: ModelSpec, thetas: np.ndarray, s_time: float,
                     x_to: np.ndarray):
    """Vector state primitive A(theta_m, s, x_m) = int_{x0}^{x_m} B dz."""
    span = x_to - model.x0
    th = thetas[:, None]

    def integrand(u):
        z = model.x0 + span[:, None] * u[None, :]
        shape = z.shape
        b = broadcast_eval(model.drift_dtheta(th, s_time, z), shape) / \
            broadcast_eval(model.diffusion(s_time, z), shape) ** 2
        return b * span[:, None]

    return vector_simpson(integrand, thetas.size)


def score_head_batch(model: ModelSpec, thetas: np.ndarray, X: np.ndarray,
                     grid: TimeGrid, i_delta: int, epsilon: float):
    """Vector head score on [0, delta]; mirrors score_head.  Returns (head, failed)."""
    h = grid.h
    times = grid.times[: i_delta + 1]
    xs = X[:, : i_delta + 1]
    w = _trapezoid_weights(i_delta + 1, h)
    m = thetas.size
    delta = float(times[-1])

    a_term, failed = _primitive_batch(model, thetas, delta, xs[:, -1])

    a_s_sum = np.zeros(m)
    horizon = model.horizon
    for k in range(i_delta + 1):
        t_node = float(times[k])
        lo = t_node - h
        hi = t_node + h
        if lo < 0.0:
            lo = t_node
        if hi > horizon:
            hi = t_node
        if hi == lo:
            raise ConfigurationError("cannot form a finite difference in s")
        ap, f1 = _primitive_batch(model, thetas, hi, xs[:, k])
        am, f2 = _primitive_batch(model, thetas, lo, xs[:, k])
        failed = failed | f1 | f2
        a_s_sum += w[k] * (ap - am) / (hi - lo)

    th = thetas[:, None]
    tk = times[None, :]
    shape = xs.shape
    sdot = broadcast_eval(model.drift_dtheta(th, tk, xs), shape)
    sig = broadcast_eval(model.diffusion(tk, xs), shape)
    sdot_x = broadcast_eval(model.drift_dtheta_dx(th, tk, xs), shape)
    sig_x = broadcast_eval(model.diffusion_dx(tk, xs), shape)
    s_val = broadcast_eval(model.drift(th, tk, xs), shape)
    bx_sigma2 = sdot_x - 2.0 * sdot * sig_x / sig
    head = (a_term - a_s_sum
            - 0.5 * epsilon**2 * np.sum(w * bx_sigma2, axis=1)
            - np.sum(w * sdot * s_val / sig**2, axis=1))
    return head, failed


@dataclass
class BatchResult:
    """Per-replication outputs of one engine block (all arrays length M)."""

    stream_ids: np.ndarray
    diverged: np.ndarray
    flat: np.ndarray
    quad_failed: np.ndarray
    failed: np.ndarray
    theta_pilot: np.ndarray
    report_times: np.ndarray
    theta_onestep: np.ndarray      # (M, R)
    clamped: np.ndarray            # (M, R)
    y_hat: np.ndarray              # (M, R)
    y_true: np.ndarray
    z_hat: np.ndarray
    z_true: np.ndarray
    y_plugin: Optional[np.ndarray]
    xi: np.ndarray                 # (M, R)
    r_y: Optional[np.ndarray]
    r_z: Optional[np.ndarray]
    terminal_abs_err: np.ndarray
    sup_abs_y_err: Optional[np.ndarray]


def _blocked_value(vf, method, t_nodes, x_rows, theta_rows):
    """Evaluate a value-function method over (M, K) arrays in bounded blocks."""
    m, k = x_rows.shape
    out = np.empty((m, k))
    rows_per_block = max(1, EVAL_BLOCK // max(k, 1))
    fn = getattr(vf, method)
    for lo in range(0, m, rows_per_block):
        hi = min(lo + rows_per_block, m)
        out[lo:hi] = fn(t_nodes[None, :], x_rows[lo:hi], theta_rows[lo:hi])
    return out


def run_batch(model: ModelSpec, vf, theta0: float, epsilon: float, grid: TimeGrid,
              delta: float, report_times: Sequence[float], seed: int,
              stream_ids: Sequence[int], *, plugin: bool = False,
              residuals: bool = False, sup_stride: int = 0) -> BatchResult:
    """Full pipeline for one block of replications.

    sup_stride > 0 additionally tracks sup |Y_hat - Y| over every
    sup_stride-th node of [delta, T].
    """
    i = grid.node_index(delta)
    report_times = np.asarray([float(t) for t in report_times])
    r_idx = np.array([grid.node_index(t) for t in report_times])
    if np.any(r_idx < i):
        raise ConfigurationError("report times must not precede delta")

    X, W, diverged = simulate_batch(model, theta0, epsilon, grid, seed, stream_ids)
    theta_pilot, flat = pilot_batch(model, X, grid, delta)

    flows = flow_batch(model, theta_pilot, grid)
    info = fisher_profile_batch(model, theta_pilot, flows, grid)[:, i:]
    tail = score_tail_profile_batch(model, theta_pilot, X, grid, i)
    head, quad_failed = score_head_batch(model, theta_pilot, X, grid, i, epsilon)

    # information is nondecreasing, so a row is unusable only if its final value is
    info_bad = info[:, -1] < INFO_FLOOR
    safe_info = np.where(info < INFO_FLOOR, np.inf, info)
    raw = theta_pilot[:, None] + (tail + head[:, None]) / safe_info
    lo, hi = model.theta_interval
    theta_prof = np.clip(raw, lo, hi)
    clamp_prof = (raw < lo) | (raw > hi) | (info < INFO_FLOOR)

    # limiting Gaussian factor along the true flow
    flow0 = _rk4_values(model, float(theta0), grid)
    info0 = _cumtrapz_rows(
        broadcast_eval(model.drift_dtheta(theta0, grid.times, flow0), grid.times.shape) ** 2
        / broadcast_eval(model.diffusion(grid.times, flow0), grid.times.shape) ** 2,
        grid.h,
    )
    wgt = broadcast_eval(model.drift_dtheta(theta0, grid.times[:-1], flow0[:-1]),
                         (grid.n_steps,)) / \
        broadcast_eval(model.diffusion(grid.times[:-1], flow0[:-1]), (grid.n_steps,))
    cums = np.concatenate((np.zeros((X.shape[0], 1)),
                           np.cumsum(wgt[None, :] * np.diff(W, axis=1), axis=1)), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi_full = np.where(info0[None, :] < INFO_FLOOR, 0.0, cums / info0[None, :])

    rel = r_idx - i
    t_rep = grid.times[r_idx]
    x_rep = X[:, r_idx]
    th_rep = theta_prof[:, rel]
    y_hat = _blocked_value(vf, "value", t_rep, x_rep, th_rep)
    y_true = _blocked_value(vf, "value", t_rep, x_rep, np.broadcast_to(theta0, th_rep.shape))
    sig_rep = broadcast_eval(model.diffusion(t_rep[None, :], x_rep), x_rep.shape)
    z_hat = epsilon * sig_rep * _blocked_value(vf, "value_x", t_rep, x_rep, th_rep)
    z_true = epsilon * sig_rep * _blocked_value(
        vf, "value_x", t_rep, x_rep, np.broadcast_to(theta0, th_rep.shape))
    xi_rep = xi_full[:, r_idx]

    y_plugin = None
    if plugin:
        y_plugin = _blocked_value(vf, "value", t_rep, x_rep,
                                  np.broadcast_to(theta_pilot[:, None], th_rep.shape))

    r_y = r_z = None
    if residuals and epsilon > 0:
        th0_rep = np.broadcast_to(theta0, th_rep.shape)
        udot = _blocked_value(vf, "value_theta", t_rep, x_rep, th0_rep)
        udot_x = _blocked_value(vf, "value_theta_x", t_rep, x_rep, th0_rep)
        r_y = (y_hat - y_true - epsilon * udot * xi_rep) / epsilon
        r_z = (z_hat - z_true - epsilon**2 * sig_rep * udot_x * xi_rep) / epsilon**2

    # terminal identity
    t_T = grid.times[-1:]
    x_T = X[:, -1:]
    y_hat_T = _blocked_value(vf, "value", t_T, x_T, theta_prof[:, -1:])
    phi_T = _blocked_value(vf, "value", t_T, x_T, np.broadcast_to(theta0, x_T.shape))
    terminal_abs_err = np.abs(y_hat_T[:, 0] - phi_T[:, 0])

    sup_err = None
    if sup_stride > 0:
        nodes = np.arange(i, grid.n_steps + 1, sup_stride)
        if nodes[-1] != grid.n_steps:
            nodes = np.append(nodes, grid.n_steps)
        sup_err = np.zeros(X.shape[0])
        cols_per_block = max(1, EVAL_BLOCK // max(X.shape[0], 1))
        for lo_c in range(0, nodes.size, cols_per_block):
            sel = nodes[lo_c: lo_c + cols_per_block]
            t_sel = grid.times[sel]
            x_sel = X[:, sel]
            th_sel = theta_prof[:, sel - i]
            yh = _blocked_value(vf, "value", t_sel, x_sel, th_sel)
            yt = _blocked_value(vf, "value", t_sel, x_sel, np.broadcast_to(theta0, th_sel.shape))
            sup_err = np.maximum(sup_err, np.max(np.abs(yh - yt), axis=1))

    failed = diverged | flat | quad_failed | info_bad
    return BatchResult(
        stream_ids=np.asarray(list(stream_ids)),
        diverged=diverged,
        flat=flat,
        quad_failed=quad_failed,
        failed=failed,
        theta_pilot=theta_pilot,
        report_times=report_times,
        theta_onestep=th_rep,
        clamped=clamp_prof[:, rel],
        y_hat=y_hat,
        y_true=y_true,
        z_hat=z_hat,
        z_true=z_true,
        y_plugin=y_plugin,
        xi=xi_rep,
        r_y=r_y,
        r_z=r_z,
        terminal_abs_err=terminal_abs_err,
        sup_abs_y_err=sup_err,
    )
