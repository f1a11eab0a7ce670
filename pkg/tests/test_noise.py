import math

import numpy as np
import pytest
from scipy import special

from kpzpolymer import _rng
from kpzpolymer.errors import ConfigError
from kpzpolymer.noise import (Environment, NoiseLaw, beta0, log_mgf, mgf, mgf_quadrature, mu,
                              xi, xi_field)

GAUSS = NoiseLaw.standard()
AFFINE = NoiseLaw.affine(2.0, 1.0)
# tabulated identity map: the same law as the standard Gaussian, through the quadrature path
IDENTITY = NoiseLaw.tabulated(np.linspace(-6, 6, 25), np.linspace(-6, 6, 25))
# a bounded-slope, saturating map (tanh-like, slope <= 1)
SQUASH = NoiseLaw.tabulated([-3, -1, 0, 1, 3], [-1.5, -0.8, 0.0, 0.8, 1.5])
LAWS = [GAUSS, AFFINE, IDENTITY, SQUASH]


def sites(n, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(-10**6, 10**6, size=(n, d))


def test_mgf_examples():
    assert mgf(GAUSS, 0.0) == 1.0
    assert mgf(GAUSS, 1.0) == pytest.approx(math.exp(0.5), rel=1e-15)
    assert mgf(AFFINE, 0.5) == pytest.approx(math.e, rel=1e-15)


def test_mu_examples():
    assert mu(GAUSS, 0.0) == 1.0
    assert mu(GAUSS, 0.5) == pytest.approx(math.exp(0.25), rel=1e-14)
    assert mu(GAUSS, 1.0) == pytest.approx(math.e, rel=1e-14)


def test_beta0_examples():
    assert beta0(GAUSS, 1 / math.e) == pytest.approx(1.0, abs=2e-9)
    assert beta0(GAUSS, 0.3405) == pytest.approx(math.sqrt(math.log(1 / 0.3405)), abs=2e-9)
    assert round(beta0(GAUSS, 0.3405), 4) == 1.0379
    assert beta0(GAUSS, 0.99) < beta0(GAUSS, 0.9)


def test_beta0_infinite_for_bounded_noise():
    # a constant-ish map has mu bounded close to 1, so mu never reaches 1/rho
    flat = NoiseLaw.tabulated([-1, 1], [0.0, 1e-3])
    assert math.isinf(beta0(flat, 0.3405))


def test_beta0_rejects_bad_rho():
    with pytest.raises(ValueError):
        beta0(GAUSS, 1.0)


@pytest.mark.parametrize("law", LAWS, ids=["gauss", "affine", "identity", "squash"])
def test_mu_nondecreasing_and_at_least_one(law):
    grid = np.round(np.arange(0, 2.01, 0.1), 10)
    vals = [mu(law, b) for b in grid]
    assert all(v >= 1 - 1e-12 for v in vals)
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.7, 1.5])
def test_quadrature_matches_closed_form(beta):
    # the quadrature route applied to a law whose closed form is known
    assert mgf_quadrature(AFFINE, beta) == pytest.approx(mgf(AFFINE, beta), rel=1e-8)
    assert mgf(IDENTITY, beta) == pytest.approx(math.exp(beta**2 / 2), rel=1e-8)


def test_log_mgf_consistent():
    for law in LAWS:
        assert log_mgf(law, 0.4) == pytest.approx(math.log(mgf(law, 0.4)), rel=1e-12)


def test_law_validation():
    with pytest.raises(ConfigError):
        NoiseLaw.tabulated([0, 0], [0, 1])
    with pytest.raises(ConfigError):
        NoiseLaw.tabulated([0, 1], [1, 0])
    with pytest.raises(ConfigError):
        NoiseLaw.affine(0.0, 1.0)
    with pytest.raises(ConfigError):
        NoiseLaw(kind="cauchy")


def test_law_lipschitz_constant():
    assert SQUASH.lipschitz_constant == pytest.approx(0.8)
    assert AFFINE.lipschitz_constant == 2.0


def test_law_from_csv(tmp_path):
    p = tmp_path / "map.csv"
    p.write_text("z,value\n-1,-2\n0,0\n1,2\n")
    law = NoiseLaw.from_csv(p)
    assert law.grid == (-1.0, 0.0, 1.0)
    assert law.transform(0.5) == pytest.approx(1.0)
    assert law.transform(3.0) == pytest.approx(6.0)        # linear extension beyond the grid
    assert NoiseLaw.from_dict(law.to_dict()) == law


def test_norm_ppf_accuracy():
    p = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 20001), [1e-300, 1e-20, 1 - 1e-16]])
    ours = np.array([_rng.norm_ppf(v) for v in p])
    assert np.max(np.abs(ours - special.ndtri(p))) <= 1e-9


def test_xi_pure():
    env = Environment(1234)
    pts = sites(1000)
    a = xi_field(env, 5, pts)
    b = xi_field(Environment(1234), 5, pts)
    assert a.tobytes() == b.tobytes()
    assert xi(env, 5, pts[7]) == a[7]


def test_xi_gaussian_moments():
    env = Environment(99)
    vals = np.concatenate([xi_field(env, t, sites(100_000, seed=t)) for t in range(1, 11)])
    n = vals.size
    assert abs(vals.mean()) <= 4 / math.sqrt(n)
    # var of the sample variance for a Gaussian is 2/n
    assert abs(vals.var() - 1.0) <= 4 * math.sqrt(2 / n)


def test_xi_independent_across_seeds():
    pts = sites(1_000_000)
    a = xi_field(Environment(1), 3, pts)
    b = xi_field(Environment(2), 3, pts)
    assert abs(np.corrcoef(a, b)[0, 1]) <= 4e-3


def test_xi_independent_across_times_and_neighbours():
    env = Environment(5)
    pts = sites(200_000)
    a = xi_field(env, 1, pts)
    assert abs(np.corrcoef(a, xi_field(env, 2, pts))[0, 1]) <= 4 / math.sqrt(pts.shape[0])
    assert abs(np.corrcoef(a, xi_field(env, 1, pts + [1, 0, 0]))[0, 1]) <= 4 / math.sqrt(pts.shape[0])


def test_xi_mapped_law():
    env = Environment(3, AFFINE)
    base = Environment(3)
    pts = sites(500)
    np.testing.assert_allclose(xi_field(env, 2, pts), 2 * xi_field(base, 2, pts) + 1, rtol=1e-15)


def test_zero_mode_and_bumps():
    env = Environment(0, mode="zero").with_bump(2, (1, 0, 0), 0.5)
    assert xi(env, 2, (1, 0, 0)) == 0.5
    assert xi(env, 2, (0, 0, 0)) == 0.0
    assert xi(env, 1, (1, 0, 0)) == 0.0


def test_reflected_environment():
    env = Environment(11)
    T = 9
    ref = env.reflected(T)
    pts = sites(50)
    for t in range(1, T + 1):
        assert np.array_equal(xi_field(ref, t, pts), xi_field(env, T + 1 - t, pts))
    with pytest.raises(ConfigError):
        xi(ref, T + 1, (0, 0, 0))


def test_environment_validation():
    with pytest.raises(ConfigError):
        Environment(-1)
    with pytest.raises(ConfigError):
        Environment(0, mode="other")
    with pytest.raises(ValueError):
        xi(Environment(0), 0, (0, 0, 0))
