import numpy as np
import pytest

from kgnull.diagnostics import (
    BufferCoverageError,
    DiagnosticsRecord,
    HyperboloidAccumulator,
    SnapshotBuffer,
    apply_vector_field,
    decay_fit,
    energy_inequality_check,
    flat_energy,
    hermite,
    hyperboloidal_energy,
    record_state,
    support_radius,
)
from kgnull.integrator import StepParams, evolve
from kgnull.spectral import GridSpec
from kgnull.system import BumpSpec, CouplingTensors, FieldState, make_initial_data


def _plane_wave(g, m, t, kx=1):
    """Exact free solution cos(k x1 - omega t) and its time derivative."""
    k = 2 * np.pi * kx / g.box_length
    om = np.sqrt(k * k + m * m)
    ph = k * g.coords[0] * np.ones(g.shape) - om * t
    return FieldState(g, t, m, np.cos(ph)[None], (om * np.sin(ph))[None]), k, om, ph


def test_flat_energy_examples():
    g = GridSpec(16, 5.0)
    assert flat_energy(FieldState.zeros(g, 1), 0) == 0.0
    s, k, _, _ = _plane_wave(g, 0.0, 0.0, kx=2)
    s = s.replace(w=np.zeros_like(s.w))
    assert np.isclose(flat_energy(s, 0), g.box_length**3 * k * k / 2, rtol=1e-13)


def test_support_radius():
    g = GridSpec(16, 8.0)
    s = make_initial_data(g, BumpSpec.uniform(1, 1e-3), 0.0)
    r = support_radius(g, s.v[0], 1e-10)
    assert r < 1.0
    assert support_radius(g, np.zeros(g.shape)) == 0.0


def test_record_state_fields():
    g = GridSpec(16, 8.0)
    s = make_initial_data(g, BumpSpec((1e-3, 0.0), (1e-3, 0.0)), 0.5)
    recs = record_state(s, CouplingTensors.default(), with_source=True)
    assert [r.species for r in recs] == [0, 1]
    assert recs[1].E_m == 0.0 and recs[1].sup == 0.0
    assert recs[0].sup == 1e-3
    assert recs[0].source_l2 is not None


def test_buffer_rules():
    g = GridSpec(8, 4.0)
    b = SnapshotBuffer(0.5, window=1.0, checkpoints=[2.5])
    for t in (2.0, 2.5, 3.0, 3.5, 4.0):
        b.append(FieldState.zeros(g, 1, t=t))
    assert b.times == [2.5, 3.0, 3.5, 4.0]
    with pytest.raises(ValueError):
        b.append(FieldState.zeros(g, 1, t=4.2))
    with pytest.raises(ValueError):
        b.append(FieldState.zeros(g, 1, t=3.0))
    with pytest.raises(ValueError):
        b.append(FieldState.zeros(g, 1, m=0.3, t=4.5))
    with pytest.raises(BufferCoverageError):
        b.at(2.0)
    assert not b.is_contiguous(2.5, 4.0) or b.is_contiguous(2.5, 4.0)
    with pytest.raises(ValueError):
        SnapshotBuffer(0.5, window=0.7)


def test_vector_fields_on_plane_wave():
    g = GridSpec(32, 2 * np.pi)
    m, t = 0.6, 2.7
    s, k, om, ph = _plane_wave(g, m, t)
    b = SnapshotBuffer(0.1, CouplingTensors.zero(1))
    b.append(s)
    x1 = g.coords[0]
    # L_1 v = x1 v_t + t d_1 v
    expect = x1 * om * np.sin(ph) - t * k * np.sin(ph)
    assert np.max(np.abs(apply_vector_field(b, t, 0, "L1") - expect)) < 1e-11
    assert np.max(np.abs(apply_vector_field(b, t, 0, "L2") - g.coords[1] * om * np.sin(ph))) < 1e-11
    # d_t^2 v comes from the equation
    assert np.max(np.abs(apply_vector_field(b, t, 0, ["d0", "d0"]) + om * om * np.cos(ph))) < 1e-11
    # [d_b, L_a] = delta_ab d_t, on a field that decays well inside the box
    g = GridSpec(48, 12.0)
    gauss = np.exp(-(g.radius**2)) * (1 + 0.3 * g.coords[0])
    b = SnapshotBuffer(0.1, CouplingTensors.zero(1))
    b.append(FieldState(g, t, m, gauss[None], (0.5 * gauss * g.coords[2])[None]))
    for a in (1, 2, 3):
        for bb in (1, 2, 3):
            comm = apply_vector_field(b, t, 0, [f"d{bb}", f"L{a}"]) - apply_vector_field(b, t, 0, [f"L{a}", f"d{bb}"])
            target = apply_vector_field(b, t, 0, "d0") if a == bb else 0.0
            assert np.max(np.abs(comm - target)) < 1e-8
    with pytest.raises(ValueError):
        apply_vector_field(b, t, 0, "X1")
    with pytest.raises(ValueError):
        apply_vector_field(b, t, 0, ["L1", "L2", "L3"])


def test_rotation_of_radial_field_and_zero_boost():
    g = GridSpec(48, 12.0)
    s = FieldState(g, 3.0, 0.0, np.exp(-(g.radius**2))[None], np.zeros((1,) + g.shape))
    b = SnapshotBuffer(0.5, CouplingTensors.zero(1))
    b.append(s)
    for name in ("O12", "O13", "O23"):
        assert np.max(np.abs(apply_vector_field(b, 3.0, 0, name))) < 1e-9
    z = SnapshotBuffer(0.5, CouplingTensors.zero(1))
    z.append(FieldState.zeros(g, 1, t=3.0))
    assert not np.any(apply_vector_field(z, 3.0, 0, "L2"))


def test_hermite_exact_on_cubics():
    p = np.poly1d([0.3, -1.2, 2.0, 0.7])
    dp = p.deriv()
    t = np.linspace(1.0, 1.5, 11)
    assert np.allclose(hermite(t, 1.0, 1.5, p(1.0), p(1.5), dp(1.0), dp(1.5)), p(t), atol=1e-14)


def _hyperboloid_run(m, couplings, eps=1e-3, n=32, s_max=3.0, dt=0.1):
    t_end = 2.0 + np.ceil((np.sqrt(s_max**2 + (0.5 * (s_max**2 - 1)) ** 2) + 3 * 0.2 - 2.0) / 0.2) * 0.2
    g = GridSpec(n, GridSpec.minimal_box_length(n, t_end))
    st = make_initial_data(g, BumpSpec.uniform(couplings.n_species, eps), m)
    buf = SnapshotBuffer(dt, couplings)
    acc = HyperboloidAccumulator([2.5, s_max], couplings)
    evolve(st, couplings, StepParams(dt), t_end, observers=[buf, acc], save_dt=dt)
    return buf, acc


def test_hyperboloidal_forms_agree_and_accumulator_matches():
    c = CouplingTensors.default()
    buf, acc = _hyperboloid_run(0.5, c)
    for s in (2.5, 3.0):
        assert acc.complete(s)
        for i in range(2):
            vals = [hyperboloidal_energy(buf, s, i, f) for f in (1, 2, 3)]
            assert max(vals) - min(vals) < 1e-10 * max(vals)
            assert np.allclose(vals, acc.energies[s][i], rtol=1e-12)
    with pytest.raises(ValueError):
        hyperboloidal_energy(buf, 3.0, 0, 4)


def test_hyperboloidal_zero_state_and_massless_positivity():
    c = CouplingTensors.zero(1)
    buf, acc = _hyperboloid_run(0.0, c, eps=0.0)
    assert all(hyperboloidal_energy(buf, 3.0, 0, f) == 0.0 for f in (1, 2, 3))
    buf, acc = _hyperboloid_run(0.0, c)
    assert hyperboloidal_energy(buf, 3.0, 0, 2) > 0


def test_hyperboloid_needs_coverage():
    g = GridSpec(16, 20.0)
    b = SnapshotBuffer(0.5)
    b.append(FieldState.zeros(g, 1, t=2.0))
    b.append(FieldState.zeros(g, 1, t=2.5))
    with pytest.raises(BufferCoverageError):
        hyperboloidal_energy(b, 3.0, 0, 1)


def test_decay_fit_synthetic():
    recs = [DiagnosticsRecord(t, 0, 1.0, 1.0, 7.0 / t, 0.0) for t in np.linspace(5, 30, 26)]
    fit = decay_fit(recs, 0, (5, 30), 0.0)
    assert abs(fit.slope + 1) < 1e-12 and abs(fit.C - 7) < 1e-12 and fit.residual < 1e-12
    assert fit.within_factor(1.0 + 1e-12)
    m = 0.5
    recs = [DiagnosticsRecord(t, 0, 1.0, 1.0, 2.0 / (t + m * t**1.5), 0.0) for t in np.linspace(5, 30, 26)]
    assert abs(decay_fit(recs, 0, (5, 30), m).C - 2.0) < 1e-12
    with pytest.raises(ValueError):
        decay_fit(recs[:5], 0, (5, 30), m)


def test_energy_inequality_examples():
    g = GridSpec(16, GridSpec.minimal_box_length(16, 6.0))
    st = make_initial_data(g, BumpSpec.uniform(1, 1e-3), 0.4)
    rec = []
    evolve(st, CouplingTensors.zero(1), StepParams(0.25), 6.0,
           observers=[lambda s: rec.extend(record_state(s, CouplingTensors.zero(1), True))], save_dt=0.5)
    t = [r.t for r in rec]
    rep = energy_inequality_check(t, [r.E_m for r in rec], [r.source_l2 for r in rec])
    assert abs(rep.min_slack) < 1e-9 and not rep.violated
    # a negative "source" that would be needed to shrink the bound is flagged
    times = np.linspace(2, 4, 11)
    rep = energy_inequality_check(times, np.ones(11), -np.ones(11))
    assert rep.violated and rep.min_slack < 0
    with pytest.raises(ValueError):
        energy_inequality_check(times, np.ones(10), np.ones(11))
