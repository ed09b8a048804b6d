import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairpol.data import (CsvSchema, Dataset, SimConfig, SimOracle, load_csv, schema_for, simulate,
                          split, standardize, write_csv)
from fairpol.errors import (ConfigError, EmptyFileError, MissingColumnError, NonBinaryActionError,
                            NonNumericCellError)


def test_oracle_point_values():
    o = SimOracle()
    assert o.propensity(0.0, 0.0, 0) == pytest.approx(0.5, abs=1e-15)
    assert o.mu0(0.3, -0.2, 1) == 0.0
    assert o.ite(0.75, -0.1, 1) == pytest.approx(0.3, abs=1e-15)
    assert o.ite(0.75, 0.9, 0) == pytest.approx(-0.3, abs=1e-15)
    assert o.mu1(0.5, 0.3, 1) == 0.0


def test_untreated_outcome_is_noise():
    ds, _ = simulate(SimConfig(n=5000, seed=3))
    y0 = ds.y[ds.a == 0]
    assert abs(y0.mean()) <= 3 * 0.1 / np.sqrt(len(y0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 0.9))
def test_support_of_x_s(seed, p_s):
    ds, _ = simulate(SimConfig(n=500, p_s=p_s, seed=seed))
    x_s = ds.x[:, 1]
    assert ((ds.s - 1 <= x_s) & (x_s <= ds.s)).all()
    assert ((ds.x[:, 0] >= -1) & (ds.x[:, 0] <= 1)).all()


@pytest.mark.parametrize("p_s", [0.3, 0.5, 0.7])
def test_group_rate_and_treatment_rate(p_s):
    n = 10_000
    ds, o = simulate(SimConfig(n=n, p_s=p_s, seed=11))
    assert abs(ds.s.mean() - p_s) <= 4 * np.sqrt(p_s * (1 - p_s) / n)
    pb = o.propensity(ds.x[:, 0], ds.x[:, 1], ds.s)
    se = np.sqrt(np.mean(pb * (1 - pb)) / n)
    assert abs(ds.a.mean() - pb.mean()) <= 4 * se


def test_oracle_ite_consistency():
    rng = np.random.default_rng(0)
    x_u, x_s, s = rng.uniform(-1, 1, 1000), rng.uniform(-1, 1, 1000), rng.integers(0, 2, 1000)
    o = SimOracle()
    assert np.max(np.abs(o.ite(x_u, x_s, s) - (o.mu1(x_u, x_s, s) - o.mu0(x_u, x_s, s)))) <= 1e-12


def test_simulation_is_seeded():
    a, _ = simulate(SimConfig(n=100, seed=4))
    b, _ = simulate(SimConfig(n=100, seed=4))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(p_s=1.0)
    with pytest.raises(ConfigError):
        SimConfig(n=0)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_csv_maps_groups(tmp_path):
    p = _write(tmp_path / "d.csv", "x1,s,a,y\n0.1,F,0,1.0\n0.2,M,1,2.0\n0.3,F,1,0.5\n0.4,M,0,0.0\n")
    ds = load_csv(p, CsvSchema(x=("x1",)))
    assert ds.group_count == 2
    assert ds.group_labels == ("F", "M")
    assert ds.s.tolist() == [0, 1, 0, 1]


def test_load_csv_bad_action_names_row(tmp_path):
    rows = ["x1,s,a,y"] + [f"{i},F,{2 if i == 7 else 1},0" for i in range(1, 9)]
    p = _write(tmp_path / "d.csv", "\n".join(rows) + "\n")
    with pytest.raises(NonBinaryActionError) as err:
        load_csv(p, CsvSchema(x=("x1",)))
    assert err.value.row == 7 and err.value.column == "a"


def test_load_csv_errors(tmp_path):
    with pytest.raises(MissingColumnError):
        load_csv(_write(tmp_path / "a.csv", "x1,s,a\n1,F,0\n"), CsvSchema(x=("x1",)))
    with pytest.raises(NonNumericCellError):
        load_csv(_write(tmp_path / "b.csv", "x1,s,a,y\nabc,F,0,1\n"), CsvSchema(x=("x1",)))
    with pytest.raises(EmptyFileError):
        load_csv(_write(tmp_path / "c.csv", ""), CsvSchema(x=("x1",)))
    with pytest.raises(EmptyFileError):
        load_csv(_write(tmp_path / "d.csv", "x1,s,a,y\n"), CsvSchema(x=("x1",)))


def test_csv_round_trip(tmp_path):
    ds, _ = simulate(SimConfig(n=200, seed=9))
    back = load_csv(write_csv(ds, tmp_path / "sim.csv"), schema_for(ds))
    for name in ("x", "s", "a", "y"):
        assert np.max(np.abs(getattr(back, name) - getattr(ds, name))) <= 1e-12
    assert back.group_labels == ds.group_labels and back.feature_names == ds.feature_names


def test_split_sizes_and_determinism():
    ds, _ = simulate(SimConfig(n=3000, seed=0))
    tr, va, te = split(ds, (0.8, 0.0, 0.2), seed=1)
    assert (tr.n, va.n, te.n) == (2400, 0, 600)
    tr2, _, te2 = split(ds, (0.8, 0.0, 0.2), seed=1)
    assert np.array_equal(tr.index, tr2.index) and np.array_equal(te.index, te2.index)
    assert not set(tr.index) & set(te.index)


def test_split_errors():
    ds, _ = simulate(SimConfig(n=10, seed=0))
    with pytest.raises(ConfigError):
        split(ds, (0.0, 0.5, 0.5))
    with pytest.raises(ConfigError):
        split(ds, (0.5, 0.2, 0.2))


def _ds(x):
    n = len(x)
    return Dataset(x=np.asarray(x, float), s=np.zeros(n, int), a=np.zeros(n, int), y=np.zeros(n), group_count=1)


def test_standardize_hand_value():
    # mean 5, population sd 2
    (tr, te), std = standardize(_ds([[3.0], [7.0]]), _ds([[7.0]]))
    assert te.x[0, 0] == pytest.approx(1.0)
    assert std.mean[0] == 5.0 and std.scale[0] == 2.0


def test_standardize_moments_and_constant():
    rng = np.random.default_rng(0)
    x = np.column_stack([rng.normal(3, 4, 500), np.full(500, 2.5)])
    (tr,), std = standardize(_ds(x))
    assert abs(tr.x[:, 0].mean()) <= 1e-10 and abs(tr.x[:, 0].std() - 1) <= 1e-10
    assert np.array_equal(tr.x[:, 1], x[:, 1])
    assert std.constant.tolist() == [False, True]


def test_dataset_is_immutable():
    ds = _ds([[1.0]])
    with pytest.raises(ValueError):
        ds.x[0, 0] = 2.0
