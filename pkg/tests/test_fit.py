import math

import numpy as np
import pytest

from astree.core import ValidationError
from astree.fit import Observation, fit_c, ingest, model_curve, objective
from astree.senescence import limit_fraction

TS = np.geomspace(0.2, 10, 12)


def synthetic(c, r=1.0, sigma=0.0, seed=0, weight=1.0):
    rng = np.random.default_rng(seed)
    L = np.array([limit_fraction(t, c, r).L for t in TS])
    L = np.clip(L + sigma * rng.standard_normal(L.size), 0, 1)
    return [Observation(float(t), float(x), weight) for t, x in zip(TS, L)]


def test_ingest_accepts_weights_and_comments():
    obs = ingest("# note\nt,L,weight\n0.5,0.9,2\n1,0.5,1\n")
    assert obs == [Observation(0.5, 0.9, 2.0), Observation(1.0, 0.5, 1.0)]


def test_ingest_reports_every_bad_row():
    text = "t,L\n0.5,0.9\n-1,0.5\n1,1.5\n2,x\n3\n"
    with pytest.raises(ValidationError) as info:
        ingest(text)
    msg = str(info.value)
    for line in ("line 3", "line 4", "line 5", "line 6"):
        assert line in msg
    assert "line 2" not in msg


def test_ingest_rejects_header():
    with pytest.raises(ValidationError):
        ingest("time,L\n1,0.5\n")


def test_model_curve_scaling():
    ts = [0.5, 1.0, 2.0]
    assert np.allclose(model_curve(ts, 2.0, 2.0), model_curve([0.25, 0.5, 1.0], 2.0))
    assert np.allclose(model_curve([4 * 0.5], 2.0, 1.0, h=2), model_curve([0.5], 2.0))


def test_noiseless_recovery():
    res = fit_c(synthetic(1.7))
    assert abs(res.c_hat - 1.7) < 1e-3
    assert res.sse < 1e-10 and not res.boundary


def test_weight_invariance():
    a = fit_c(synthetic(2.2, sigma=0.01, seed=1))
    b = fit_c(synthetic(2.2, sigma=0.01, seed=1, weight=5.0))
    assert b.c_hat == pytest.approx(a.c_hat, rel=1e-5)
    assert b.sse == pytest.approx(5 * a.sse, rel=1e-6)


def test_result_is_a_local_minimum():
    obs = synthetic(1.5, sigma=0.02, seed=4)
    res = fit_c(obs)
    f0 = objective(obs, res.c_hat)
    for step in (1e-3, 1e-2):
        assert objective(obs, res.c_hat * math.exp(step)) >= f0
        assert objective(obs, res.c_hat * math.exp(-step)) >= f0


def test_all_proliferating_data_hits_the_boundary():
    obs = [Observation(t, 1.0) for t in (0.5, 1.0, 2.0, 4.0)]
    res = fit_c(obs, c_hi=3.0)
    assert res.boundary and res.c_hat == pytest.approx(1.05, rel=1e-5)


def test_flat_objective_is_reported():
    obs = [Observation(t, 1.0) for t in (0.001, 0.002, 0.005)]
    res = fit_c(obs, c_lo=2.0, c_hi=3.0)
    assert any("not identifiable" in d for d in res.diagnostics)


def test_free_time_unit():
    obs = synthetic(2.0, r=2.0)
    res = fit_c(obs, r="free", c_lo=1.5, c_hi=3.0, grid_points=9)
    assert res.r_free and len(res.valley) == 9
    assert res.sse < 1e-6


def test_argument_checks():
    obs = synthetic(2.0)
    with pytest.raises(ValidationError):
        fit_c(obs[:2])
    with pytest.raises(ValidationError):
        fit_c(obs, c_lo=1.01)
    with pytest.raises(ValidationError):
        fit_c(obs, c_lo=3.0, c_hi=2.0)
    with pytest.raises(ValidationError):
        fit_c(obs, r=-1.0)
