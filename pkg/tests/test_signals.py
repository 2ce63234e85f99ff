import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from qdm.signals import (AffineScaling, Component, RayleighSpec, SignalSpec, composite_spec, cosine_spec,
                         denormalize, generate_signal, normalize, rayleigh_rhs, rayleigh_trajectory, rk4_integrate)


def test_generate_signal_examples():
    t = np.arange(5)
    assert np.allclose(generate_signal(cosine_spec(), t), 0.5 * np.cos(0.04 * np.pi * t))
    assert generate_signal(composite_spec(2.0), [0])[0] == pytest.approx(0.2)
    zero = SignalSpec((Component(0.0, 0.3), Component(0.0, 1.1, kind="sin")))
    assert np.all(generate_signal(zero, t) == 0)
    assert composite_spec().peak_bound == pytest.approx(0.5)


def test_component_validation():
    with pytest.raises(ValueError):
        Component(0.1, 0.2, kind="tan")
    with pytest.raises(ValueError):
        Component(np.inf, 0.2)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(0, 3), st.floats(-3, 3), st.sampled_from(["cos", "sin"])),
                min_size=1, max_size=3),
       st.lists(st.tuples(st.floats(-1, 1), st.floats(0, 3), st.floats(-3, 3), st.sampled_from(["cos", "sin"])),
                min_size=1, max_size=3))
def test_composite_linearity(a, b):
    sa = SignalSpec(tuple(Component(*c) for c in a))
    sb = SignalSpec(tuple(Component(*c) for c in b))
    t = np.arange(50)
    assert np.max(np.abs(generate_signal(sa + sb, t) - generate_signal(sa, t) - generate_signal(sb, t))) < 1e-14


def test_rayleigh_equilibrium():
    tr = rayleigh_trajectory(RayleighSpec(x0=0.0, v0=0.0, steps=20))
    assert np.all(tr == 0)


def test_rayleigh_harmonic_limit():
    tr = rayleigh_trajectory(RayleighSpec(epsilon=0.0, x0=1.0, v0=0.0, dt=1e-3, sample_every=1000, steps=1))
    assert tr[1, 0] == pytest.approx(-1.0, abs=1e-6)


def test_rk4_fourth_order():
    f = lambda y: rayleigh_rhs(y, np.pi, 3.0, np.pi)  # noqa: E731
    y0 = (0.3, 0.5)
    ref = solve_ivp(lambda t, y: f(y), (0, 1.0), y0, method="DOP853", rtol=1e-13, atol=1e-14).y[:, -1]
    errs = [np.linalg.norm(rk4_integrate(f, y0, dt, int(round(1.0 / dt)))[-1] - ref) for dt in (0.02, 0.01, 0.005)]
    for coarse, fine in zip(errs, errs[1:]):
        assert 13 < coarse / fine < 19


def test_rayleigh_limit_cycle_against_fine_oracle():
    spec = RayleighSpec(steps=400)
    tr = rayleigh_trajectory(spec)
    t = np.arange(spec.steps + 1) * spec.sample_interval
    f = lambda _, y: rayleigh_rhs(y, spec.epsilon, spec.delta, spec.omega)  # noqa: E731
    ref = solve_ivp(f, (0, t[-1]), (spec.x0, spec.v0), t_eval=t, method="DOP853", rtol=1e-12, atol=1e-14).y.T
    assert np.max(np.abs(tr - ref)) < 1e-6
    # the amplitude settles: consecutive late windows have the same peak
    late = np.abs(tr[200:, 0])
    assert abs(late[:100].max() - late[100:].max()) < 1e-3
    assert 0.5 < late.max() < 1.5


def test_rayleigh_validation():
    with pytest.raises(ValueError):
        RayleighSpec(dt=0.0)
    with pytest.raises(ValueError):
        RayleighSpec(epsilon=np.nan)


def test_normalize_examples():
    s = np.array([0.2, -0.5, 0.9])
    out, rec = normalize(s)
    assert np.array_equal(out, s) and np.all(rec.scale == 1) and np.all(rec.offset == 0)
    out, rec = normalize([0.0, 2.0])
    assert np.allclose(out, [-1, 1]) and rec.scale[0] == 1.0 and rec.offset[0] == -1.0
    out, rec = normalize([3.0, 3.0])
    assert np.all(out == 0) and rec.scale[0] == 1.0
    with pytest.raises(ValueError):
        normalize([])


def test_normalize_per_column_bound():
    tr = rayleigh_trajectory(RayleighSpec(steps=100))
    out, rec = normalize(tr, 0.9, only_if_needed=False)
    assert np.allclose(out.min(axis=0), -0.9) and np.allclose(out.max(axis=0), 0.9)
    assert isinstance(rec, AffineScaling) and rec.scale.shape == (2,)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(0.1, 1.0))
def test_normalize_roundtrip(values, bound):
    s = np.array(values)
    out, rec = normalize(s, bound, only_if_needed=False)
    assert np.all(np.abs(out) <= bound + 1e-12)
    assert np.allclose(denormalize(out, rec), s, rtol=0, atol=1e-12 * max(1.0, np.abs(s).max()))
