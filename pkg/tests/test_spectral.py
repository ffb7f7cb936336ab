import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgnull import spectral
from kgnull.spectral import GridSpec, GridMismatchError


def test_grid_validation():
    for n in (6, 9, 31):
        with pytest.raises(ValueError):
            GridSpec(n, 10.0)
    with pytest.raises(ValueError):
        GridSpec(16, 0.0)
    g = GridSpec(16, 8.0)
    assert g.dx == 0.5
    assert g.axis[8] == 0.0
    assert g.axis[0] == -4.0


def test_minimal_box_length_is_tight():
    n, t_end = 32, 10.0
    L = GridSpec.minimal_box_length(n, t_end)
    g = GridSpec(n, L)
    assert np.isclose(0.5 * L, 1 + (t_end - 2) + 2 * g.dx)
    assert np.isclose(g.light_cone_horizon(), t_end)


def test_dft_zero_and_single_mode():
    g = GridSpec(16, 2 * np.pi * 1.5)
    assert np.all(spectral.forward_dft(g, np.zeros(g.shape)) == 0)
    k1 = 2 * np.pi / g.box_length
    f = np.cos(k1 * g.coords[0]) * np.ones(g.shape)
    c = spectral.forward_dft(g, f)
    assert np.isclose(c[1, 0, 0], 0.5, atol=1e-14)
    assert np.isclose(c[-1, 0, 0], 0.5, atol=1e-14)
    c[1, 0, 0] = c[-1, 0, 0] = 0
    assert np.max(np.abs(c)) < 1e-14
    assert np.allclose(spectral.inverse_dft(g, spectral.forward_dft(g, f)), f, atol=1e-14)


def test_parseval_random_8cubed():
    g = GridSpec(8, 3.0)
    f = np.random.default_rng(1).normal(size=g.shape)
    c = spectral.forward_dft(g, f)
    lhs = np.sum(f**2) * g.cell_volume
    rhs = g.box_length**3 * np.sum(np.abs(c) ** 2)
    assert abs(lhs - rhs) < 1e-12 * lhs


def test_derivative_of_sine_and_constant():
    g = GridSpec(32, 5.0)
    k1 = 2 * np.pi * 3 / g.box_length
    f = np.sin(k1 * g.coords[1]) * np.ones(g.shape)
    d = spectral.spatial_derivative(g, f, 2)
    assert np.max(np.abs(d - k1 * np.cos(k1 * g.coords[1]))) < 1e-12
    assert np.max(np.abs(spectral.spatial_derivative(g, np.full(g.shape, 3.0), 1))) < 1e-14
    with pytest.raises(ValueError):
        spectral.spatial_derivative(g, f, 0)
    with pytest.raises(GridMismatchError):
        spectral.spatial_derivative(g, np.zeros((8, 8, 8)), 1)


def _fd4(f, axis, h):
    return (-np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis) - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)) / (12 * h)


def test_derivative_against_fourth_order_differences():
    # a Gaussian is periodic to round-off on this box
    errs = []
    for n in (32, 64):
        g = GridSpec(n, 12.0)
        f = np.exp(-(g.radius**2))
        errs.append(np.max(np.abs(spectral.spatial_derivative(g, f, 1) - _fd4(f, 0, g.dx))))
    order = np.log2(errs[0] / errs[1])
    assert 3.6 < order < 4.4


def test_dispersion_multiplier_examples():
    g = GridSpec(16, 2 * np.pi)
    assert spectral.dispersion_multiplier(g, 0.0)[0, 0, 0] == 0.0
    assert spectral.dispersion_multiplier(g, 1.0)[0, 0, 0] == 1.0
    assert np.isclose(spectral.dispersion_multiplier(g, 0.5)[3, 0, 0], np.sqrt(9.25), rtol=1e-15)
    with pytest.raises(ValueError):
        spectral.dispersion_multiplier(g, 1.5)


def test_dealias_keeps_band_and_is_projection():
    g = GridSpec(24, 6.0)
    f = np.random.default_rng(2).normal(size=g.shape)
    p = spectral.dealias(g, f)
    assert np.allclose(spectral.dealias(g, p), p, atol=1e-14)
    k = 2 * np.pi / g.box_length
    low = np.cos(7 * k * g.coords[0]) * np.ones(g.shape)  # 7 < 24/3
    high = np.cos(8 * k * g.coords[0]) * np.ones(g.shape)
    assert np.allclose(spectral.dealias(g, low), low, atol=1e-13)
    assert np.max(np.abs(spectral.dealias(g, high))) < 1e-13


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    seed=st.integers(0, 2**16),
)
def test_derivative_is_linear_and_real(a, b, seed):
    g = GridSpec(8, 4.0)
    rng = np.random.default_rng(seed)
    f, h = rng.normal(size=g.shape), rng.normal(size=g.shape)
    lhs = spectral.spatial_derivative(g, a * f + b * h, 3)
    rhs = a * spectral.spatial_derivative(g, f, 3) + b * spectral.spatial_derivative(g, h, 3)
    assert lhs.dtype == np.float64
    assert np.allclose(lhs, rhs, atol=1e-11)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_derivative_is_antisymmetric(seed):
    # sum f d_a h = -sum h d_a f on a periodic grid
    g = GridSpec(8, 3.0)
    rng = np.random.default_rng(seed)
    f, h = rng.normal(size=g.shape), rng.normal(size=g.shape)
    lhs = np.sum(f * spectral.spatial_derivative(g, h, 1))
    rhs = -np.sum(h * spectral.spatial_derivative(g, f, 1))
    assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))


def test_gradient_matches_axis_derivatives_and_workers():
    g = GridSpec(16, 4.0)
    f = np.exp(-(g.radius**2)) * (1 + g.coords[0])
    grad = spectral.gradient(g, f)
    spectral.set_workers(2)
    try:
        for a in (1, 2, 3):
            assert np.allclose(grad[a - 1], spectral.spatial_derivative(g, f, a), atol=1e-14)
    finally:
        spectral.set_workers(1)
    with pytest.raises(ValueError):
        spectral.set_workers(0)
