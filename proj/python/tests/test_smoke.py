import json
import math

import numpy as np
import pytest

import bvcox


@pytest.fixture(scope="module")
def data():
    return bvcox.simulate(n=600, seed=11)


def test_simulate_is_deterministic(data):
    again = bvcox.simulate(n=600, seed=11)
    for key in ("time", "cause", "modifier", "z", "w"):
        assert np.array_equal(np.asarray(data[key]), np.asarray(again[key]))
    other = bvcox.simulate(n=600, seed=11, stream=1)
    assert not np.array_equal(np.asarray(data["time"]), np.asarray(other["time"]))


def fit_data(d, **kwargs):
    z = np.asarray(d["z"]).reshape(-1, 1)
    w = np.asarray(d["w"]).reshape(-1, 1)
    return bvcox.fit(d["time"], d["cause"], z, w=w, modifier=d["modifier"], **kwargs)


def test_fit_dimensions_and_surface(data):
    f = fit_data(data, knots_t=2, knots_x=2)
    assert f.converged
    assert (f.K, f.Kx) == (6, 6)
    assert f.gamma.shape == (36,)
    assert f.theta.shape == (1,)
    # The invariant effect is 1 in the simulation.
    assert abs(f.theta[0] - 1.0) < 0.3
    s = f.surface([1.0, 2.0, 3.0], [0.0, 10.0])
    assert s["estimate"].shape == (2, 3)
    assert np.all(s["lo"] <= s["estimate"]) and np.all(s["estimate"] <= s["hi"])
    cov = f.covariance()
    assert cov.shape == (37, 37)
    assert np.allclose(cov, cov.T)


def test_wald_tests(data):
    f = fit_data(data, knots_t=1, knots_x=1)
    joint = f.test("joint")
    assert joint["df"] == f.K * f.Kx - 1
    assert 0.0 <= joint["p_value"] <= 1.0
    pen = fit_data(data, knots_t=1, knots_x=1, mu=[0.5], mu_x=[0.5])
    gray = pen.test("joint", "gray")
    assert len(gray["eigenvalues"]) == gray["df"]


def test_residuals_sum_to_zero(data):
    f = fit_data(data, knots_t=1, knots_x=1)
    r = f.residuals()
    assert abs(float(np.sum(r["martingale"]))) < 1e-8
    assert len(r["deviance"]) == len(data["time"])


def test_plain_cox_score_is_zero():
    rng = np.random.default_rng(3)
    n = 200
    z = rng.normal(size=(n, 1))
    time = rng.exponential(scale=np.exp(-0.5 * z[:, 0]))
    cause = (rng.uniform(size=n) < 0.8).astype(int)
    modifier = rng.uniform(0.0, 10.0, size=n)
    f = bvcox.fit(time, cause, z, modifier=modifier, degree=0, degree_x=0, knots_t=0, knots_x=0, epsilon=1e-24)
    record = json.loads(f.to_json())
    assert record["record"] == "fit"
    assert np.max(np.abs(record["gradient"])) < 1e-8


def test_quadform_tail_matches_chi_squared():
    # One degree of freedom: P(G^2 > 1) = erfc(1/sqrt(2)).
    assert abs(bvcox.quadform_tail([1.0], 1.0) - math.erfc(1.0 / math.sqrt(2.0))) < 1e-6


def test_validation_errors_are_value_errors():
    with pytest.raises(ValueError):
        bvcox.fit([1.0, 2.0], [1], np.zeros((2, 1)))


def test_cli_entry(tmp_path):
    code, out, err = bvcox.run_cli(["simulate", "--n", "50", "--seed", "1", "--out", str(tmp_path)])
    assert code == 0, err
    assert (tmp_path / "data.csv").exists()
    code, _, err = bvcox.run_cli(["simulate", "--n", "50", "--out", str(tmp_path / "x")])
    assert code == 1
    assert '"record":"error"' in err
