import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinfilter.sde_engine import (
    IntegrationError,
    Interpretation,
    SdeSystem,
    coarsen,
    coevolve,
    integrate,
    ito_to_stratonovich_drift,
    stratonovich_system,
    wiener_path,
    wiener_paths,
)


def linear(a, b, interp=Interpretation.ITO):
    return SdeSystem(lambda t, x: a * x, lambda t, x: b * x, interp)


# ---------------------------------------------------------------- noise


def test_same_seed_same_path():
    p, q = wiener_path(42, 1000, 1e-5), wiener_path(42, 1000, 1e-5)
    assert p.increments.tobytes() == q.increments.tobytes()


def test_distinct_seeds_differ():
    assert not np.array_equal(wiener_path(1, 100, 1e-5).increments, wiener_path(2, 100, 1e-5).increments)


def test_streams_differ():
    assert not np.array_equal(wiener_path(1, 100, 1e-5).increments,
                              wiener_path(1, 100, 1e-5, stream=1).increments)


def test_increment_statistics():
    n, dt = 10**6, 1e-5
    inc = wiener_path(2024, n, dt).increments
    assert abs(inc.mean()) < 4 * np.sqrt(dt / n)
    assert abs(inc.var() / dt - 1) < 0.01


@pytest.mark.parametrize("n,dt", [(0, 1e-5), (10, 0.0), (10, -1.0)])
def test_invalid_sizes(n, dt):
    with pytest.raises(ValueError):
        wiener_path(0, n, dt)


def test_paths_stack_columns():
    P = wiener_paths([3, 4], 50, 1e-3)
    assert P.increments.shape == (50, 2)
    assert np.array_equal(P.increments[:, 1], wiener_path(4, 50, 1e-3).increments)


def test_coarsen_sums_blocks():
    p = wiener_path(5, 12, 0.1)
    c = coarsen(p, 4)
    assert c.n_steps == 3 and c.dt == pytest.approx(0.4)
    assert np.allclose(c.increments, p.increments.reshape(3, 4).sum(axis=1))


# ---------------------------------------------------------------- integrate


def test_zero_system_is_constant():
    sys = SdeSystem(lambda t, x: 0 * x, lambda t, x: 0 * x)
    t, xs = integrate(sys, np.array([1.0, -2.0]), wiener_path(0, 100, 1e-3))
    assert np.all(xs == np.array([1.0, -2.0]))
    assert t[-1] == pytest.approx(0.1)


def test_ode_limit_exponential():
    sys = SdeSystem(lambda t, x: -x, lambda t, x: 0 * x)
    _, x = integrate(sys, 1.0, wiener_path(0, 10**4, 1e-5), keep=False)
    assert x == pytest.approx(np.exp(-0.1), abs=1e-6)


def test_strong_error_decreases_on_refinement():
    # reference: the same Brownian paths at dt = 1e-7
    a, b, T = 1.5, 0.8, 0.1
    base_dt = 1e-7
    fine = wiener_paths(range(8), int(round(T / base_dt)), base_dt)
    _, ref = integrate(linear(a, b), np.ones(8), fine, keep=False)
    exact = np.exp((a - b * b / 2) * T + b * fine.increments.sum(axis=0))
    # strong order 1/2 for multiplicative noise
    assert np.max(np.abs(ref - exact)) < 1e-3
    errs = []
    for factor in (400, 200, 100):
        _, x = integrate(linear(a, b), np.ones(8), coarsen(fine, factor), keep=False)
        errs.append(np.sqrt(np.mean((x - ref) ** 2)))
    assert errs[0] > errs[1] > errs[2]


def test_stride_keeps_endpoints():
    sys = SdeSystem(lambda t, x: 0 * x, lambda t, x: 0 * x)
    t, xs = integrate(sys, np.zeros(2), wiener_path(0, 10, 0.1), stride=4)
    assert np.allclose(t, [0, 0.4, 0.8, 1.0])
    assert xs.shape == (4, 2)


def test_post_step_applied():
    sys = SdeSystem(lambda t, x: x, lambda t, x: 0 * x, post_step=lambda x: x / np.linalg.norm(x))
    _, x = integrate(sys, np.array([3.0, 4.0]), wiener_path(0, 10, 0.1), keep=False)
    assert np.linalg.norm(x) == pytest.approx(1.0)


def test_non_finite_aborts_with_step():
    sys = SdeSystem(lambda t, x: x * x * 1e300, lambda t, x: 0 * x)
    with pytest.raises(IntegrationError) as info, np.errstate(over="ignore"):
        integrate(sys, 10.0, wiener_path(0, 100, 1.0))
    assert info.value.step >= 0 and np.isfinite(info.value.time)


def test_coevolve_matches_integrate():
    noise = wiener_path(9, 200, 1e-3)
    s1, s2 = linear(1.0, 0.5), linear(-1.0, 0.2)
    r = coevolve([s1, s2, s1], [1.0, 2.0, 1.0], noise)
    t, x = integrate(s1, 1.0, noise)
    assert np.array_equal(r[0][1], x) and np.array_equal(r[2][1], x)
    assert np.array_equal(r[1][1], integrate(s2, 2.0, noise)[1])


def test_coevolve_length_mismatch():
    with pytest.raises(ValueError):
        coevolve([linear(1, 1)], [1.0, 2.0], wiener_path(0, 5, 0.1))


# ---------------------------------------------------------------- Itô / Stratonovich


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(0.1, 5))
def test_converter_linear_exact(a, b, x):
    got = ito_to_stratonovich_drift(lambda t, y: a * y, lambda t, y: b * y, np.array([x]))
    assert got[0] == pytest.approx((a - 0.5 * b * b) * x, rel=1e-8, abs=1e-10)


def test_converter_complex_state():
    # b(psi) = i k psi: rotation; Stratonovich drift gains +k^2/2 psi
    k = 0.7
    psi = np.array([0.6 + 0.1j, -0.3j])
    got = ito_to_stratonovich_drift(lambda t, y: 0 * y, lambda t, y: 1j * k * y, psi)
    assert np.allclose(got, 0.5 * k * k * psi, atol=1e-9)


def test_converter_no_noise_returns_drift():
    got = ito_to_stratonovich_drift(lambda t, y: 2 * y, lambda t, y: 0 * y, np.array([1.0]))
    assert got[0] == 2.0


def test_stratonovich_heun_matches_ito_scalar():
    a, b = 0.5, 0.9
    noise = wiener_paths(range(8), 2000, 5e-5)
    _, xi = integrate(linear(a, b), np.ones(8), noise, keep=False)
    _, xs = integrate(stratonovich_system(linear(a, b)), np.ones(8), noise, keep=False)
    assert np.max(np.abs(xi - xs)) < 2e-2


def test_stratonovich_system_requires_ito():
    with pytest.raises(ValueError):
        stratonovich_system(linear(1, 1, Interpretation.STRATONOVICH))
