"""Uniform time grids, discrete paths, and reproducible Brownian noise."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

# Relative tolerance used when matching a requested time to a grid node.
NODE_ATOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_start = t_0 < t_1 < ... < t_n = t_end."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ConfigurationError("TimeGrid requires t_end > t_start")
        if self.n_steps < 1:
            raise ConfigurationError("TimeGrid requires n_steps >= 1")

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    def node_index(self, t: float) -> int:
        """Index of the node equal to t; raises if t is not a node."""
        i = int(round((t - self.t_start) / self.h))
        if i < 0 or i > self.n_steps:
            raise ConfigurationError(f"time {t} outside grid [{self.t_start}, {self.t_end}]")
        if abs(self.times[i] - t) > NODE_ATOL * max(1.0, abs(t)):
            raise ConfigurationError(f"time {t} is not a node of the grid (h={self.h})")
        return i

    def prefix(self, t: float) -> "TimeGrid":
        """Sub-grid from t_start up to the node at t."""
        i = self.node_index(t)
        if i == 0:
            raise ConfigurationError("prefix grid must contain at least one step")
        return TimeGrid(self.t_start, float(self.times[i]), i)


@dataclass
class Path:
    """Real-valued function sampled on every node of a TimeGrid."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_steps + 1,):
            raise ConfigurationError(
                f"path has {self.values.shape} values for a grid of {self.grid.n_steps + 1} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("path contains non-finite values")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def at(self, t: float) -> float:
        return float(self.values[self.grid.node_index(t)])


@dataclass(frozen=True)
class NoiseSource:
    """Counter-based Gaussian increment stream.

    Increments are a pure function of (seed, stream_id, step index): each
    (seed, stream_id) pair keys an independent Philox stream, and the k-th
    increment is the k-th draw of that stream.  Replications can therefore be
    generated in any order, or in parallel, without changing any draw.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) < 2**64):
                raise ConfigurationError(f"{name} must be an unsigned 64-bit integer")

    def increments(self, n_steps: int, h: float) -> np.ndarray:
        """n_steps Brownian increments with variance h each."""
        if n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if h <= 0:
            raise ConfigurationError("h must be positive")
        key = (int(self.seed) << 64) | int(self.stream_id)
        gen = np.random.Generator(np.random.Philox(key=key))
        return np.sqrt(h) * gen.standard_normal(n_steps)


def brownian_path(noise: NoiseSource, grid: TimeGrid) -> Path:
    """Brownian motion W with W(t_start) = 0 sampled on the grid."""
    dw = noise.increments(grid.n_steps, grid.h)
    w = np.concatenate(([0.0], np.cumsum(dw)))
    return Path(grid, w)


def window_grid(grid: TimeGrid, t_from: float) -> TimeGrid:
    """Sub-grid of `grid` from the node at t_from through t_end."""
    i = grid.node_index(t_from)
    if i >= grid.n_steps:
        raise ConfigurationError("window must contain at least one step")
    return TimeGrid(float(grid.times[i]), grid.t_end, grid.n_steps - i)
