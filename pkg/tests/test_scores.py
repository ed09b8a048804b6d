import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairpol.data import Dataset, SimConfig, simulate
from fairpol.errors import EstimationError, NumericError, ShapeError
from fairpol.nuisance import NuisanceEstimates, oracle_nuisance
from fairpol.scores import (METHODS, ScoreVector, conditional_values, empirical_value, score,
                            score_coefficients, write_scores_csv)


def _random_instance(rng, n=None, groups=None):
    n = n or int(rng.integers(5, 60))
    k = groups or int(rng.integers(1, 4))
    s = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    ds = Dataset(x=rng.normal(size=(n, 2)), s=s, a=rng.integers(0, 2, n), y=rng.normal(size=n), group_count=k)
    nuis = NuisanceEstimates(rng.normal(size=n), rng.normal(size=n), rng.uniform(0.05, 0.95, n))
    return ds, nuis, rng.uniform(0, 1, n)


def test_dm_zero_policy_is_mu0():
    ds, nuis, _ = _random_instance(np.random.default_rng(0))
    assert np.array_equal(score("DM", np.zeros(ds.n), ds, nuis).values, nuis.mu0_hat)


def test_ipw_behavioral_clone_is_y():
    ds, nuis, _ = _random_instance(np.random.default_rng(1))
    sv = score("IPW", nuis.pb_hat, ds, nuis)
    assert np.array_equal(sv.values, ds.y)
    assert empirical_value(sv) == np.mean(ds.y)


def test_dr_equals_dm_when_outcome_matches():
    ds, nuis, pi = _random_instance(np.random.default_rng(2))
    y = np.where(ds.a == 1, nuis.mu1_hat, nuis.mu0_hat)
    ds = Dataset(x=ds.x, s=ds.s, a=ds.a, y=y, group_count=ds.group_count)
    assert np.allclose(score("DR", pi, ds, nuis).values, score("DM", pi, ds, nuis).values, atol=1e-14, rtol=0)


def test_ipw_hand_value():
    ds = Dataset(x=[[0.0]], s=[0], a=[1], y=[2.0], group_count=1)
    nuis = NuisanceEstimates(np.zeros(1), np.zeros(1), np.array([0.5]))
    assert score("IPW", np.ones(1), ds, nuis).values[0] == 4.0


@pytest.mark.parametrize("method", METHODS)
def test_affine_coefficients_match_scores(method):
    ds, nuis, pi = _random_instance(np.random.default_rng(3))
    c, d = score_coefficients(method, ds, nuis)
    assert np.allclose(c + d * pi, score(method, pi, ds, nuis).values, atol=1e-12, rtol=0)


@pytest.mark.parametrize("method", METHODS)
def test_decomposition_identity(method):
    rng = np.random.default_rng(4)
    for _ in range(100):
        ds, nuis, pi = _random_instance(rng)
        rep = conditional_values(score(method, pi, ds, nuis), ds.s, ds.group_count)
        assert abs(rep.p_hat_by_group @ rep.v_hat_by_group - rep.v_hat) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1))
def test_dm_affine_in_policy(seed, lam):
    ds, nuis, p1 = _random_instance(np.random.default_rng(seed))
    p2 = np.random.default_rng(seed + 1).uniform(0, 1, ds.n)
    mix = score("DM", lam * p1 + (1 - lam) * p2, ds, nuis).values
    lin = lam * score("DM", p1, ds, nuis).values + (1 - lam) * score("DM", p2, ds, nuis).values
    assert np.allclose(mix, lin, atol=1e-12, rtol=0)


def test_empirical_value_examples():
    assert empirical_value(ScoreVector("DM", np.array([1.0, 2.0, 3.0]))) == 2.0
    assert empirical_value(ScoreVector("DM", np.full(7, 0.3))) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(EstimationError):
        empirical_value(ScoreVector("DM", np.array([])))


def test_conditional_values_examples():
    rep = conditional_values(ScoreVector("DM", np.array([1.0, 1.0, 3.0, 3.0])), np.array([0, 0, 1, 1]))
    assert rep.v_hat_by_group.tolist() == [1.0, 3.0] and rep.v_hat == 2.0
    assert rep.group_gap == 2.0 and rep.worst_group == 1.0
    one = conditional_values(ScoreVector("DM", np.array([0.5, 2.5])), np.array([0, 0]))
    assert one.v_hat_by_group[0] == one.v_hat


def test_empty_group_named():
    with pytest.raises(EstimationError) as err:
        conditional_values(ScoreVector("DM", np.ones(3)), np.array([0, 0, 2]), 3)
    assert err.value.group == 1


def test_score_errors():
    ds, nuis, pi = _random_instance(np.random.default_rng(5), n=10)
    with pytest.raises(ShapeError):
        score("DM", pi[:5], ds, nuis)
    with pytest.raises(ValueError):
        score("XYZ", pi, ds, nuis)
    bad = NuisanceEstimates(nuis.mu0_hat, nuis.mu1_hat, np.where(np.arange(10) == 3, 1.0, 0.5))
    with pytest.raises(NumericError):
        score("IPW", pi, ds, bad)


def test_oracle_dm_dr_agreement():
    ds, oracle = simulate(SimConfig(n=5000, seed=1))
    nuis = oracle_nuisance(ds, oracle)
    rng = np.random.default_rng(0)
    for _ in range(10):
        pi = rng.uniform(0, 1, ds.n)
        dm = score("DM", pi, ds, nuis)
        dr = score("DR", pi, ds, nuis)
        assert abs(empirical_value(dm) - empirical_value(dr)) <= 3 * dr.std_error()


def test_write_scores_csv(tmp_path):
    path = tmp_path / "s.csv"
    write_scores_csv(path, ScoreVector("DR", np.array([0.25, -1.0])))
    lines = path.read_text().splitlines()
    assert lines == ["row,method,score", "0,DR,0.25", "1,DR,-1.0"]
