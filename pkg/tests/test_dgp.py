import numpy as np
import pytest

from cyclestudy.dgp import (AgentParams, ConfigError, SimConfig, check_proposition1, check_proposition2,
                            closed_form_efforts, dump_config, numerical_efforts, parse_config, prop2_affine,
                            simulate_panel, solve_agent)
from cyclestudy.eventstudy import EventStudySpec, fit_dynamic


def test_closed_form_hand_examples():
    # delta=1, V=1, psi=1, alpha=(0.1, 0.2): e1 = (1 + 0.1)/2, e2 = (1 + 0.2)/2
    assert closed_form_efforts(1.0, 1.0, 1.0, 1.0, 0.1, 0.2) == pytest.approx((0.55, 0.60), abs=1e-15)
    # delta=0.5: e1 = (1 + 0.25*0.1)/2, e2 = (1 + 0.5*0.2)/2
    assert closed_form_efforts(0.5, 1.0, 1.0, 1.0, 0.1, 0.2) == pytest.approx((0.5125, 0.55), abs=1e-15)


def test_solve_agent_and_gap():
    sol = solve_agent(AgentParams(delta=1.0, V=1.0, psi=1.0, alpha1=0.1, alpha2=0.2))
    assert sol.gap == pytest.approx(0.05, abs=1e-15)
    assert sol.probability == pytest.approx(0.1 * 0.55 + 0.2 * 0.6)


def test_solve_agent_rejects_boundary_probability():
    with pytest.raises(ValueError, match="probability"):
        solve_agent(AgentParams(delta=1.0, V=10.0, psi=1.0, alpha1=0.5, alpha2=0.9))


def test_agent_params_validation():
    with pytest.raises(ValueError):
        AgentParams(delta=0.0, V=1.0, psi=1.0, alpha1=0.1, alpha2=0.2)
    with pytest.raises(ValueError):
        AgentParams(delta=0.5, V=1.0, psi=1.0, alpha1=0.3, alpha2=0.2)


def test_numerical_matches_closed_form():
    e1, e2 = numerical_efforts(0.7, 2.0, 1.0, 1.0, 0.05, 0.09)
    c1, c2 = closed_form_efforts(0.7, 2.0, 1.0, 1.0, 0.05, 0.09)
    assert abs(e1 - c1) < 1e-8 and abs(e2 - c2) < 1e-8


def test_proposition1_small_grid():
    g = {"delta": np.array([0.05, 0.5, 1.0, 1.0]), "V": np.array([1.0, 2.0, 5.0, 1.0]), "psi": np.ones(4),
         "sigma": np.ones(4), "alpha1": np.array([0.01, 0.05, 0.05, 0.1]),
         "alpha2": np.array([0.02, 0.05, 0.1, 0.1])}
    rep = check_proposition1(g)
    # equal alphas still give a positive gap while delta < 1; at delta = 1 the gap is exactly 0
    assert rep["violations"] == 1
    assert rep["min_gap"] == 0.0
    assert rep["max_effort_error"] < 1e-6


def test_proposition2_gaps():
    p = AgentParams(delta=1.0, V=1.0, psi=1.0, alpha1=0.1, alpha2=0.1)
    rep = check_proposition2(p, [0.1, 0.2])
    assert rep["gaps"] == pytest.approx([0.05, 0.10], abs=1e-15)
    assert rep["strictly_increasing"]
    intercept, slope = prop2_affine(p)
    assert intercept == 0.0 and slope == 0.5


def test_simulation_is_deterministic():
    cfg = SimConfig(n_states=3, districts_per_state=2, n_years=8, seed=4)
    a, b = simulate_panel(cfg), simulate_panel(cfg)
    assert a.dataset == b.dataset
    assert a.da_map.equals(b.da_map)
    assert simulate_panel(SimConfig(n_states=3, districts_per_state=2, n_years=8, seed=5)).dataset != a.dataset


def test_simulation_shape_and_truth():
    cfg = SimConfig(n_states=3, districts_per_state=2, counties_per_district=(2, 2), n_years=8,
                    event_path={-2: -0.02, -1: -0.03, 1: -0.04}, da_effect_sd=0.2)
    res = simulate_panel(cfg)
    assert len(res.dataset) == 3 * 2 * 2 * 8
    assert res.truth.relative_path == {-2: -0.02, -1: -0.03, 0: 0.0, 1: -0.04}
    assert res.truth.static_effect == pytest.approx(0.03)
    assert res.truth.gamma_sq == pytest.approx(0.04)
    assert set(res.da_map.columns) == {"county_id", "period", "da_id"}


def test_noiseless_panel_gives_exact_path():
    cfg = SimConfig(n_states=4, districts_per_state=3, n_years=12, event_path={-2: -0.02, -1: -0.03, 1: -0.04},
                    county_sd=0.0, noise_sd=0.0, seed=1)
    est = fit_dynamic(simulate_panel(cfg).dataset, EventStudySpec(transform="log", fe=("state", "year")))
    assert np.allclose(est.estimate, [-0.02, -0.03, 0.0, -0.04], atol=1e-10)


def test_config_round_trip():
    cfg = SimConfig(n_states=5, counties_per_district=(2, 4), event_path={-2: -0.02, 1: -0.04},
                    cohort_probs=(0.1, 0.2, 0.3, 0.4), amplitude=0.01, seed=9)
    assert parse_config(dump_config(cfg)) == cfg


def test_config_errors_name_the_key():
    with pytest.raises(ConfigError, match="'n_states'"):
        parse_config("[panel]\nn_states = many\n")
    with pytest.raises(ConfigError, match="'bogus'"):
        parse_config("[panel]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="'event_path'"):
        parse_config("[effects]\nevent_path = -2 -0.02\n")
    with pytest.raises(ConfigError, match="'noise_sd'"):
        parse_config("[noise]\nnoise_sd = -1\n")
    with pytest.raises(ConfigError, match="section"):
        parse_config("[nope]\nx = 1\n")


def test_cohort_path_sections():
    cfg = parse_config("[cohort.1987]\npath = -2: 0.1, -1: 0.2\n")
    assert cfg.cohort_paths == {1987: {-2: 0.1, -1: 0.2}}
