import math
import warnings

import numpy as np
import pytest

from kpzpolymer.colehopf import log_G_linear
from kpzpolymer.errors import ConeViolation, ConfigError, EnumerationLimit
from kpzpolymer.noise import Environment, NoiseLaw, log_mgf
from kpzpolymer.polymer import (InitialCondition, brute_force_f, evolve, initial_slab,
                                log_partition, log_Y_coupled, log_Y_samples, eta_estimate,
                                lower_tail_check, memo_f, midpoint_decomposition, normalized_Y,
                                partition_Z, step, surface, cauchy_differences)
from kpzpolymer.stats import stats

ZERO_G = InitialCondition.zero()
LIN = InitialCondition.linear((0.2, -0.1, 0.05))
LAW = NoiseLaw.standard()


def test_initial_condition_kinds():
    assert LIN([[1.0, 2.0, 3.0]])[0] == pytest.approx(0.2 - 0.2 + 0.15)
    assert InitialCondition.constant(2.5)(np.zeros((4, 3))).tolist() == [2.5] * 4
    cap = InitialCondition.custom("capped-norm")
    assert cap.lipschitz_constant == 1.0
    assert cap([[30.0, 40.0, 0.0]])[0] == 10.0
    for g in (ZERO_G, LIN, cap, InitialCondition.constant(1.0)):
        assert g.spot_check(3)
        assert InitialCondition.from_dict(g.to_dict()) == g


def test_initial_condition_spot_check_catches_wrong_constant():
    bad = InitialCondition.from_callable(lambda u: 3 * u[..., 0], lipschitz=1.0)
    assert not bad.spot_check(3)


def test_initial_condition_validation():
    with pytest.raises(ConfigError):
        InitialCondition(kind="quadratic")
    with pytest.raises(ConfigError):
        InitialCondition.custom("no-such-function")
    with pytest.raises(ConfigError):
        InitialCondition.from_dict("quadratic")
    assert InitialCondition.from_dict("capped-norm") == InitialCondition.custom("capped-norm")


def test_zero_noise_one_step():
    env = Environment(0, mode="zero")
    beta = 0.7
    slab = step(initial_slab(ZERO_G, 1.0, beta, (0, 0, 0), 3), env, beta)
    np.testing.assert_allclose(slab.values / beta, math.log(6) / beta, rtol=1e-15)
    assert brute_force_f(env, beta, ZERO_G, 1, (4, 5, 6)) == pytest.approx(math.log(6) / beta, rel=1e-15)


def test_brute_force_time_zero_is_initial_condition():
    env = Environment(1)
    assert brute_force_f(env, 0.3, LIN, 0, (1, 2, 3), eps=0.5) == pytest.approx(LIN([[0.5, 1.0, 1.5]])[0])


def test_brute_force_matches_memo_oracle():
    # frozen from two independent oracles (path enumeration and memoized recursion)
    env = Environment(7)
    assert brute_force_f(env, 0.3, ZERO_G, 3, (0, 0, 0)) == pytest.approx(18.703942235617593, rel=1e-12)
    assert memo_f(env, 0.3, ZERO_G, 3, (0, 0, 0)) == pytest.approx(18.703942235617593, rel=1e-12)
    assert brute_force_f(env, 0.3, LIN, 4, (1, -2, 0), 0.5) == pytest.approx(25.39243770496242, rel=1e-12)


def test_brute_force_guard():
    with pytest.raises(EnumerationLimit):
        brute_force_f(Environment(0), 0.3, ZERO_G, 10, (0, 0, 0))


@pytest.mark.parametrize("seed", range(5))
def test_step_engine_matches_brute_force_t2(seed):
    env = Environment(seed)
    slab = evolve(env, 0.3, LIN, 0.5, 2, (0, 0, 0), 1)
    for x in slab.coords():
        assert slab.f(x) == pytest.approx(brute_force_f(env, 0.3, LIN, 2, x, 0.5), rel=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_sweep_matches_step_engine(seed):
    env = Environment(100 + seed)
    a = surface(env, 0.4, LIN, 0.3, 7, (2, -1, 0), 2)
    b = evolve(env, 0.4, LIN, 0.3, 7, (2, -1, 0), 2)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_sweep_log_domain_fallback():
    # strong disorder pushes the linear-domain sweep outside double range
    env = Environment(3)
    a = surface(env, 30.0, LIN, 1.0, 12, (0, 0, 0), 1)
    b = evolve(env, 30.0, LIN, 1.0, 12, (0, 0, 0), 1)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_constant_shift():
    env = Environment(21)
    a = surface(env, 0.3, ZERO_G, 1.0, 5, (0, 0, 0), 2)
    b = surface(env, 0.3, InitialCondition.constant(1.75), 1.0, 5, (0, 0, 0), 2)
    np.testing.assert_allclose(b.values / 0.3 - a.values / 0.3, 1.75, atol=1e-12)


def test_valid_radius_shrinks_and_guards():
    env = Environment(2)
    slab = initial_slab(ZERO_G, 1.0, 0.3, (0, 0, 0), 2)
    radii = []
    for _ in range(2):
        slab = step(slab, env, 0.3)
        radii.append(slab.valid_radius)
    assert radii == [1, 0]
    assert np.all(np.isfinite(slab.values))
    with pytest.raises(ConeViolation):
        step(slab, env, 0.3)
    with pytest.raises(ConeViolation):
        slab.f((1, 0, 0))


def test_cone_exactness_two_box_sizes():
    env = Environment(8)
    small = evolve(env, 0.3, LIN, 0.5, 4, (0, 0, 0), 1)
    big = evolve(env, 0.3, LIN, 0.5, 4, (0, 0, 0), 3)
    for x in small.coords():
        assert big.log_value(x) == pytest.approx(small.log_value(x), rel=1e-13)


def test_monotone_in_noise():
    env = Environment(4)
    bumped = env.with_bump(2, (1, 0, 0), 0.8)
    a = surface(env, 0.3, ZERO_G, 1.0, 5, (0, 0, 0), 2)
    b = surface(bumped, 0.3, ZERO_G, 1.0, 5, (0, 0, 0), 2)
    assert np.all(b.values >= a.values)
    assert np.any(b.values > a.values)


def test_zero_noise_Y_closed_form():
    env = Environment(0, mode="zero")
    beta, t = 0.5, 9
    Y = normalized_Y(env, beta, t, (0, 0, 0))
    assert Y.log == pytest.approx(-t * log_mgf(LAW, beta), rel=1e-13)
    assert Y.value == pytest.approx(math.exp(-t * beta**2 / 2), rel=1e-12)


def test_Z_with_zero_g_is_Y():
    env = Environment(31)
    assert partition_Z(env, 0.3, ZERO_G, 0.2, 6, (1, 0, 0)).log == normalized_Y(env, 0.3, 6, (1, 0, 0)).log


@pytest.mark.parametrize("t", [1, 2, 3])
def test_Z_matches_brute_force(t):
    env = Environment(40 + t)
    beta, eps, x = 0.3, 0.5, (1, 0, -1)
    expect = beta * brute_force_f(env, beta, LIN, t, x, eps) - t * (math.log(6) + log_mgf(LAW, beta))
    assert partition_Z(env, beta, LIN, eps, t, x).log == pytest.approx(expect, rel=1e-10)


def test_backward_and_forward_routes_agree():
    env = Environment(50)
    beta, eps, t = 0.3, 0.25, 20
    slab = surface(env, beta, LIN, eps, t, (0, 0, 0), 0)
    logZ = log_partition(env, beta, LIN, eps, t, (0, 0, 0))
    assert logZ == pytest.approx(slab.values.item() - t * (math.log(6) + log_mgf(LAW, beta)), rel=1e-12)


def test_Y_outside_l2_regime_warns():
    with pytest.warns(UserWarning):
        normalized_Y(Environment(0), 2.0, 3, (0, 0, 0))


def test_mean_Y8_is_one():
    vals = np.exp(log_Y_samples(LAW, 0.3, [8], 10_000, seed=60)[8])
    rs = stats(vals)
    assert abs(rs.mean - 1) <= 3 * rs.se


def test_mean_Z_matches_heat_solution():
    beta, eps, t, x = 0.3, 0.5, 6, (1, 0, 0)
    g = InitialCondition.linear((0.4, 0.0, 0.0))
    vals = [math.exp(log_partition(Environment(70_000 + i), beta, g, eps, t, x)) for i in range(10_000)]
    rs = stats(vals)
    G = math.exp(log_G_linear(g.slope, eps, beta, t, x))
    assert abs(rs.mean - G) <= 3 * rs.se


def test_coupled_sweep_is_reflected_per_horizon():
    env = Environment(80)
    ts = [1, 3, 8, 13]
    coupled = log_Y_coupled(env, 0.3, ts)
    for t, v in zip(ts, coupled):
        assert v == pytest.approx(log_partition(env.reflected(t), 0.3, None, 1.0, t, (0, 0, 0)), rel=1e-12)


def test_midpoint_identity():
    env = Environment(90)
    md = midpoint_decomposition(env, 0.3, LIN, 0.5, 2, 4, (0, 1, 0))
    assert md.residual <= 1e-10
    assert md.zeta.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(md.zeta >= 0)
    assert md.weighted_average == pytest.approx(md.W, rel=1e-10)


def test_midpoint_one_step_sites_are_neighbours():
    md = midpoint_decomposition(Environment(91), 0.3, LIN, 0.5, 3, 4, (0, 0, 0))
    got = sorted(map(tuple, md.sites.tolist()))
    want = sorted(tuple(int(v) for v in s * e) for e in np.eye(3, dtype=int) for s in (1, -1))
    assert got == want


def test_midpoint_guards():
    with pytest.raises(ConfigError):
        midpoint_decomposition(Environment(0), 0.3, LIN, 0.5, 4, 4, (0, 0, 0))
    with pytest.raises(EnumerationLimit):
        midpoint_decomposition(Environment(0), 0.3, LIN, 0.5, 1, 9, (0, 0, 0))


def test_eta_jensen_bound_and_small_beta():
    rows = eta_estimate(LAW, 0.3, [4, 8, 16], 2000, seed=100)
    assert all(r.eta <= 3 * r.se for r in rows)
    (row,) = eta_estimate(LAW, 0.01, [16], 1000, seed=101)
    assert abs(row.eta) <= 3 * row.se


def test_cauchy_differences_shape():
    samples = log_Y_samples(LAW, 0.3, [2, 4, 8], 50, seed=102, coupled=True)
    rows = cauchy_differences(samples, [2, 4, 8])
    assert [r[0] for r in rows] == [2, 4]
    assert all(r[1] >= 0 and r[2] > 0 for r in rows)


def test_lower_tail_zero_noise_closed_form():
    env = Environment(0, mode="zero")
    beta, theta = 0.3, 1.0
    for t in (8, 16):
        F = normalized_Y(env, beta, t, (0, 0, 0)).log
        assert math.exp(-theta * F) == pytest.approx(math.exp(theta * t * log_mgf(LAW, beta)), rel=1e-12)


@pytest.fixture(scope="module")
def tail_samples():
    return log_Y_samples(LAW, 0.3, [8, 16, 32], 2000, seed=110, coupled=True)


@pytest.mark.parametrize("theta", [1.0, 2.0])
def test_lower_tail_bounded(theta, tail_samples):
    rows, bounded = lower_tail_check(LAW, 0.3, theta, [8, 16, 32], 2000, 110, samples=tail_samples)
    assert bounded
    assert [r.t for r in rows] == [8, 16, 32]


def test_lower_tail_validation():
    with pytest.raises(ConfigError):
        lower_tail_check(LAW, 0.3, 0.0, [8], 10, 0)


def test_samples_reproducible():
    a = log_Y_samples(LAW, 0.3, [4, 8], 20, seed=120)
    b = log_Y_samples(LAW, 0.3, [4, 8], 20, seed=120, workers=2)
    for t in (4, 8):
        assert a[t].tobytes() == b[t].tobytes()
