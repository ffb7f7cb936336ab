import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgnull import spectral
from kgnull.spectral import GridSpec
from kgnull.system import (
    BoxTooSmallError,
    BumpSpec,
    CouplingTensors,
    FieldState,
    assemble_rhs,
    bump_profile,
    eval_Q0,
    eval_Qab,
    make_initial_data,
    null_source,
    state_derivatives,
)


def test_coupling_canonical_storage():
    c = CouplingTensors(2, M={(0, 0, 1, 3, 1): 2.0, (0, 1, 1, 2, 2): 5.0, (1, 0, 0, 0, 1): 0.0})
    assert c.M == {(0, 0, 1, 1, 3): -2.0}
    with pytest.raises(ValueError):
        CouplingTensors(1, N={(0, 0, 1): 1.0})
    with pytest.raises(ValueError):
        CouplingTensors(1, M={(0, 0, 0, 0, 4): 1.0})
    d = CouplingTensors.default()
    assert d.uses_time_derivative()
    assert not CouplingTensors(1, M={(0, 0, 0, 1, 2): 1.0}).uses_time_derivative()
    assert d.only_N().M == {} and d.only_M().N == {}
    assert d.scaled(2.0).N[(0, 1, 1)] == 2.0


def test_bump_profile_values():
    assert bump_profile(np.array(0.0)) == 1.0
    assert np.all(bump_profile(np.array([1.0, 1.5, 3.0])) == 0.0)
    r = np.linspace(0, 0.999, 50)
    assert np.all(np.diff(bump_profile(r)) <= 0)


def test_initial_data_examples():
    g = GridSpec(16, 6.0)
    s = make_initial_data(g, BumpSpec.uniform(2, 1e-3), 0.3)
    assert s.t == 2.0
    origin = (8, 8, 8)
    assert s.v[0][origin] == 1e-3 and s.w[1][origin] == 1e-3
    # x = (1.5, 0, 0) sits on the grid at index 8 + 4
    assert g.axis[12] == 1.5
    assert s.v[0][12, 8, 8] == 0.0
    assert np.all(s.v[:, g.radius >= 1.0] == 0.0)
    z = make_initial_data(g, BumpSpec.uniform(1, 0.0), 0.0)
    assert not np.any(z.v) and not np.any(z.w)


def test_initial_data_validation():
    with pytest.raises(ValueError):
        BumpSpec.uniform(1, 0.2)
    with pytest.raises(ValueError):
        BumpSpec((0.01,), (0.01, 0.01))
    g = GridSpec(16, 6.0)
    with pytest.raises(BoxTooSmallError):
        make_initial_data(g, BumpSpec.uniform(1, 1e-3), 0.0, t_end=10.0)
    with pytest.raises(ValueError):
        FieldState.zeros(g, 1, m=1.2)


def test_filtered_data_are_band_limited():
    g = GridSpec(16, 6.0)
    s = make_initial_data(g, BumpSpec.uniform(1, 1e-3), 0.0, filtered=True)
    assert np.allclose(spectral.dealias(g, s.v), s.v, atol=1e-18)


def test_q0_null_direction_and_positivity():
    g = GridSpec(32, 2 * np.pi)
    x1 = g.coords[0] * np.ones(g.shape)
    t = 0.3
    u = np.cos(2 * (x1 - t)) + 0.5 * np.sin(3 * (x1 - t))  # f(x1 - t)
    u_t = 2 * np.sin(2 * (x1 - t)) - 1.5 * np.cos(3 * (x1 - t))
    q = eval_Q0(g, u, u_t, u, u_t)
    assert np.max(np.abs(q)) < 1e-12
    q = eval_Q0(g, u, np.zeros(g.shape), u, np.zeros(g.shape))
    assert np.min(q) > -1e-12


def test_qab_antisymmetry_and_diagonal():
    g = GridSpec(16, 6.0)
    rng = np.random.default_rng(0)
    u, ut = rng.normal(size=g.shape), rng.normal(size=g.shape)
    assert np.max(np.abs(eval_Qab(g, u, ut, u, ut, 0, 2))) < 1e-12
    w, wt = rng.normal(size=g.shape), rng.normal(size=g.shape)
    assert not np.any(eval_Qab(g, u, ut, w, wt, 1, 1))
    assert np.allclose(eval_Qab(g, u, ut, w, wt, 1, 3), -eval_Qab(g, w, wt, u, ut, 1, 3), atol=1e-12)
    with pytest.raises(ValueError):
        eval_Qab(g, u, ut, w, wt, 0, 4)


def test_qab_divergence_form_on_grid():
    # Q_ab(u, w) = d_a(u d_b w) - d_b(u d_a w), spatial a, b, band-limited data
    g = GridSpec(32, 2 * np.pi)
    x1, x2, x3 = g.coords
    u = np.cos(x1 + 2 * x2) * np.ones(g.shape)
    w = np.sin(3 * x1 - x2 + x3) * np.ones(g.shape)
    z = np.zeros(g.shape)
    d = spectral.spatial_derivative
    div = d(g, u * d(g, w, 2), 1) - d(g, u * d(g, w, 1), 2)
    assert np.max(np.abs(eval_Qab(g, u, z, w, z, 1, 2) - div)) < 1e-11


def test_assemble_rhs_zero_cases():
    g = GridSpec(8, 4.0)
    s = make_initial_data(g, BumpSpec.uniform(2, 1e-2), 0.5)
    assert not np.any(assemble_rhs(s, CouplingTensors.zero(2)))
    assert not np.any(assemble_rhs(FieldState.zeros(g, 2), CouplingTensors.default()))
    with pytest.raises(ValueError):
        assemble_rhs(s, CouplingTensors.zero(3))


def test_assemble_rhs_single_mode_pointwise():
    # N_0^{00} = 1, v = cos(x1), w = sin(x1): Q0 = -sin^2 + sin^2 = 0 pointwise
    g = GridSpec(8, 2 * np.pi)
    x1 = g.coords[0] * np.ones(g.shape)
    s = FieldState(g, 2.0, 0.0, np.cos(x1)[None], np.sin(x1)[None])
    c = CouplingTensors(1, N={(0, 0, 0): 1.0})
    direct = -np.sin(x1) ** 2 + np.sin(x1) ** 2
    assert np.max(np.abs(assemble_rhs(s, c)[0] - direct)) < 1e-14
    # v = cos(x1), w = 0.5: Q0 = -0.25 + sin^2 x1 (band 2 < 8/3 survives dealiasing)
    s = FieldState(g, 2.0, 0.0, np.cos(x1)[None], np.full((1,) + g.shape, 0.5))
    direct = -0.25 + np.sin(x1) ** 2
    assert np.max(np.abs(assemble_rhs(s, c)[0] - direct)) < 1e-14


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), scale=st.floats(0.1, 10))
def test_null_source_is_quadratic(seed, scale):
    rng = np.random.default_rng(seed)
    dv = rng.normal(size=(2, 4, 5))
    c = CouplingTensors.default()
    assert np.allclose(null_source(c, scale * dv), scale**2 * null_source(c, dv), rtol=1e-12, atol=1e-12)


def test_state_derivatives_layout():
    g = GridSpec(8, 4.0)
    s = make_initial_data(g, BumpSpec((1e-2, 0.0), (0.0, 2e-2)), 0.0)
    dv = state_derivatives(s)
    assert dv.shape == (2, 4) + g.shape
    assert np.array_equal(dv[:, 0], s.w)
    assert np.allclose(dv[0, 2], spectral.spatial_derivative(g, s.v[0], 2))
