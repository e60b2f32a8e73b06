import numpy as np
import numpy.testing as npt
import pytest

from snbsde.errors import ConfigurationError
from snbsde.grids import NoiseSource, Path, TimeGrid, brownian_path, window_grid


def test_grid_nodes_and_step():
    grid = TimeGrid(0.0, 1.0, 4)
    npt.assert_allclose(grid.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert grid.h == 0.25
    assert grid.n_steps == 4


def test_node_index_exact_and_tolerant():
    grid = TimeGrid(0.0, 1.0, 1000)
    assert grid.node_index(0.5) == 500
    # float noise below the node tolerance still resolves
    assert grid.node_index(0.5 + 1e-12) == 500
    with pytest.raises(ConfigurationError):
        grid.node_index(0.50041)


def test_invalid_grid_rejected():
    with pytest.raises(ConfigurationError):
        TimeGrid(0.0, 0.0, 10)
    with pytest.raises(ConfigurationError):
        TimeGrid(0.0, 1.0, 0)


def test_prefix_and_window():
    grid = TimeGrid(0.0, 1.0, 10)
    pre = grid.prefix(0.3)
    assert pre.n_steps == 3
    assert pre.t_end == pytest.approx(0.3)
    win = window_grid(grid, 0.3)
    assert win.t_start == pytest.approx(0.3)
    assert win.n_steps == 7
    npt.assert_allclose(win.times, grid.times[3:])


def test_path_validation():
    grid = TimeGrid(0.0, 1.0, 4)
    with pytest.raises(ConfigurationError):
        Path(grid, np.zeros(4))  # wrong length
    with pytest.raises(ConfigurationError):
        Path(grid, np.array([0.0, 1.0, np.nan, 2.0, 3.0]))
    p = Path(grid, np.arange(5.0))
    assert p.at(0.5) == 2.0


def test_noise_reproducible_and_stream_separated():
    g = TimeGrid(0.0, 1.0, 64)
    a = NoiseSource(123, 0).increments(g.n_steps, g.h)
    b = NoiseSource(123, 0).increments(g.n_steps, g.h)
    c = NoiseSource(123, 1).increments(g.n_steps, g.h)
    d = NoiseSource(124, 0).increments(g.n_steps, g.h)
    npt.assert_array_equal(a, b)
    assert np.max(np.abs(a - c)) > 1e-3
    assert np.max(np.abs(a - d)) > 1e-3


def test_noise_increment_scale():
    # variance h per increment, checked loosely on a long stream
    h = 0.01
    inc = NoiseSource(7, 3).increments(200_000, h)
    assert abs(np.var(inc) / h - 1.0) < 0.02
    assert abs(np.mean(inc)) < 3.0 * np.sqrt(h / 200_000)


def test_noise_rejects_bad_ids():
    with pytest.raises(ConfigurationError):
        NoiseSource(-1, 0)
    with pytest.raises(ConfigurationError):
        NoiseSource(0, 2**64)


def test_brownian_path_starts_at_zero():
    grid = TimeGrid(0.0, 1.0, 100)
    w = brownian_path(NoiseSource(5, 0), grid)
    assert w.values[0] == 0.0
    assert w.values.shape == (101,)
