import math

import numpy as np
import pytest

import neon_bo

SMALL = """
[problem]
id = env_model
[model]
encoder_hidden = 16
latent_dim = 8
decoder_hidden = 16
fourier_features = 8
epinet_hidden = 8
index_dim = 4
[train]
steps = 40
[bo]
budget = 2
n_reset = 6
seeds = 0
"""

U_TRUE = np.array([10.0, 0.07, 1.505, 30.1525])


def test_registry():
    ids = neon_bo.problem_ids()
    assert "env_model" in ids and "brusselator" in ids
    p = neon_bo.make_problem("env_model")
    assert p.id == "env_model"
    assert p.lower.shape == (4,)
    assert np.all(p.lower < p.upper)
    assert p.grid.shape[1] == 2
    assert p.sense == neon_bo.Sense.MAXIMIZE
    with pytest.raises(neon_bo.ConfigError):
        neon_bo.make_problem("nope")


def test_env_model_truth():
    p = neon_bo.make_problem("env_model")
    assert p.evaluate(U_TRUE) == pytest.approx(0.0, abs=1e-12)
    assert p.field(U_TRUE).shape == (p.grid.shape[0], 1)
    m, d, l, tau = U_TRUE
    s = 0.5
    first = m / math.sqrt(4 * math.pi * d * 30.0) * math.exp(-s * s / (4 * d * 30.0))
    assert neon_bo.env_model_field(U_TRUE, s, 30.0) == pytest.approx(first, rel=1e-12)
    t = 40.0
    c = m / math.sqrt(4 * math.pi * d * t) * math.exp(-s * s / (4 * d * t))
    c += m / math.sqrt(4 * math.pi * d * (t - tau)) * math.exp(-(s - l) ** 2 / (4 * d * (t - tau)))
    assert neon_bo.env_model_field(U_TRUE, s, t) == pytest.approx(c, rel=1e-12)
    with pytest.raises(neon_bo.DimensionError):
        p.evaluate(np.zeros(3))


def test_acquisition_points():
    assert neon_bo.ei_point(2.0, 0.5) == pytest.approx(1.5)
    assert neon_bo.ei_point(0.1, 0.5) == 0.0
    assert neon_bo.lei_point(2.0, 0.5, 0.01) == pytest.approx(1.5)
    assert neon_bo.lei_point(0.1, 0.5, 0.01) == pytest.approx(-0.004)
    with pytest.raises(neon_bo.ConfigError):
        neon_bo.lei_point(0.1, 0.5, 0.0)


def test_objectives():
    field = np.full((16, 2), 3.0)
    assert neon_bo.weighted_variance(field) == 0.0
    rng = np.random.default_rng(0)
    field = rng.normal(size=(64, 2))
    want = field[:, 0].var() + 2.0 * field[:, 1].var()
    assert neon_bo.weighted_variance(field, 1.0, 2.0) == pytest.approx(want, rel=1e-10)


def test_brusselator_small():
    f = neon_bo.brusselator_solve(np.array([1.0, 2.5, 0.01, 0.1]), resolution=16)
    assert f.shape == (256, 2)
    assert np.all(np.isfinite(f))
    assert neon_bo.weighted_variance(f) == pytest.approx(1.2621735107733807, rel=1e-9)


def test_initial_design():
    d = neon_bo.initial_design(np.zeros(3), np.ones(3), 7, 4)
    assert d.shape == (7, 3)
    assert np.all((d >= 0) & (d <= 1))
    assert np.array_equal(d, neon_bo.initial_design(np.zeros(3), np.ones(3), 7, 4))


def test_config_round_trip():
    text = neon_bo.default_config("env_model")
    assert neon_bo.normalize_config(text) == text
    assert neon_bo.parameter_count(text) > 0
    with pytest.raises(neon_bo.ConfigError):
        neon_bo.normalize_config("[bo]\nbudget = -1\n")


def test_run_bo_deterministic():
    a = neon_bo.run_bo(SMALL, 3)
    b = neon_bo.run_bo(SMALL, 3)
    assert a["error"] is None
    assert len(a["records"]) == 8 + 2
    best = [r["best_so_far"] for r in a["records"]]
    assert all(x <= y for x, y in zip(best, best[1:]))
    assert a["best"] == best[-1]
    assert [r["objective"] for r in a["records"]] == [r["objective"] for r in b["records"]]


def test_random_search():
    log = neon_bo.random_search("env_model", 5, 1)
    assert len(log["records"]) == 5
    assert log["best"] == max(r["objective"] for r in log["records"])


def test_cli():
    code, out, err = neon_bo.cli(["--help"])
    assert code == 0 and "eval" in out
    code, _, err = neon_bo.cli(["frobnicate"])
    assert code == 2 and err
