import math

import numpy as np
import pandas as pd
import pytest

from cyclestudy.dgp import SimConfig, simulate_panel
from cyclestudy.eventstudy import (EstimationError, EventStudySpec, StaticEstimate, fit_dynamic, fit_static,
                                   monthly_path, transform_outcome, write_plot_csv)
from cyclestudy.panel import PanelDataset

from conftest import make_panel

TWFE = EventStudySpec(fe=("county", "year"))


def additive(frame):
    """County effect + year effect, nothing at the cycle."""
    c = frame["county_id"].str[1:].astype(int)
    return 1.0 + 0.3 * c + 0.05 * (frame["year"] - 2000) ** 1.5


def test_zero_effect_gives_zero_path():
    ds = make_panel(outcome=additive)
    est = fit_dynamic(ds, TWFE)
    assert est.ks == [-2, -1, 0, 1]
    assert np.max(np.abs(est.estimate)) < 1e-10
    assert fit_static(ds, TWFE).estimate == pytest.approx(0, abs=1e-10)


def test_exact_path_recovered():
    ds = make_panel(outcome=additive)
    path = {-2: 0.1, -1: -0.2, 0: 0.0, 1: 0.4}
    k = ds.relative_time()
    y = ds.frame["admissions_per_1000"].to_numpy() + np.array([path[int(j)] for j in k])
    est = fit_dynamic(ds.with_outcome("admissions_per_1000", y), TWFE)
    for j, v in path.items():
        assert est.coef(j) == pytest.approx(v, abs=1e-10)


def test_renormalization_differences(small_panel):
    base = fit_dynamic(small_panel, TWFE)
    for j in (-2, -1, 1):
        alt = fit_dynamic(small_panel, EventStudySpec(fe=("county", "year"), normalize=j))
        for k in base.ks:
            assert alt.coef(k) == pytest.approx(base.coef(k) - base.coef(j), abs=1e-10)


def test_constant_shift_invariance(small_panel):
    y = small_panel.frame["admissions_per_1000"].to_numpy()
    a = fit_dynamic(small_panel)
    b = fit_dynamic(small_panel.with_outcome("admissions_per_1000", y + 12.5))
    assert np.allclose(a.estimate, b.estimate, atol=1e-10)
    assert np.allclose(a.se, b.se, rtol=1e-8)


def test_row_permutation_invariance(small_panel):
    a = fit_dynamic(small_panel, TWFE)
    perm = np.random.default_rng(0).permutation(len(small_panel))
    frame = small_panel.frame.iloc[perm].reset_index(drop=True)
    b = fit_dynamic(PanelDataset(frame, small_panel.calendars), TWFE)
    assert np.allclose(a.estimate, b.estimate, atol=1e-12)
    assert np.allclose(a.se, b.se, rtol=1e-9)


def test_static_on_constant_outcome_is_zero(small_panel):
    ds = small_panel.with_outcome("admissions_per_1000", np.full(len(small_panel), 3.0))
    est = fit_static(ds, EventStudySpec(transform="log"))
    assert est.estimate == pytest.approx(0.0, abs=1e-12)


def test_static_equals_dynamic_when_only_election_year_differs():
    ds = make_panel(outcome=additive)
    y = ds.frame["admissions_per_1000"].to_numpy() + 0.07 * (ds.relative_time() == 0)
    ds = ds.with_outcome("admissions_per_1000", y)
    assert fit_static(ds, TWFE).estimate == pytest.approx(0.07, abs=1e-10)


def test_multiplicative_reading():
    est = StaticEstimate(-0.045, 0.01, 10, 2, EventStudySpec())
    assert est.multiplicative == pytest.approx(math.exp(-0.045))
    assert round(est.multiplicative, 3) == 0.956


def test_ci_is_two_se(sim_small):
    est = fit_dynamic(sim_small.dataset, EventStudySpec(transform="log"))
    assert np.allclose(est.ci_high - est.ci_low, 4 * est.se)
    assert est.n_clusters == 32
    assert est.stderr(0) == 0.0


def test_missing_k_is_an_error():
    ds = make_panel(anchors=[2000])
    ds = ds.subset(ds.relative_time() != 1)
    with pytest.raises(EstimationError, match="k=1"):
        fit_dynamic(ds)


def test_bad_normalization():
    with pytest.raises(EstimationError, match="outside"):
        fit_dynamic(make_panel(), EventStudySpec(normalize=2))


def test_log_of_zero_is_an_error():
    with pytest.raises(EstimationError, match="log1p"):
        transform_outcome([1.0, 0.0], "log")
    assert transform_outcome([0.0], "log1p")[0] == 0.0


def test_controls_with_missing_values_are_excluded(small_panel):
    x = np.random.default_rng(1).normal(size=len(small_panel))
    x[:5] = np.nan
    frame = small_panel.frame.assign(ctrl_income_pc=x)
    ds = PanelDataset(frame, small_panel.calendars, controls=["ctrl_income_pc"])
    est = fit_dynamic(ds, EventStudySpec(controls=("ctrl_income_pc",)))
    assert est.excluded_rows == 5
    assert est.n_obs == len(small_panel) - 5
    assert "ctrl_income_pc" in est.controls


@pytest.fixture(scope="module")
def monthly():
    cfg = SimConfig(n_states=4, districts_per_state=3, counties_per_district=(1, 2), n_years=10,
                    frequency="monthly", seed=2)
    return simulate_panel(cfg).dataset


def test_monthly_window(monthly):
    est = monthly_path(monthly)
    assert est.ks == list(range(-24, 24))
    assert est.omitted == list(range(-24, -19)) + list(range(13, 24))
    assert all(est.coef(k) == 0 for k in est.omitted)
    with pytest.raises(EstimationError, match="exceeds"):
        monthly_path(monthly, EventStudySpec(window=(-30, 12)))
    with pytest.raises(EstimationError, match="monthly"):
        monthly_path(make_panel())


def test_write_plot_csv(tmp_path, small_panel):
    est = fit_dynamic(small_panel)
    p = tmp_path / "plot.csv"
    write_plot_csv(est, p)
    df = pd.read_csv(p, float_precision="round_trip")
    assert list(df.columns) == ["k", "estimate", "se", "ci_low", "ci_high"]
    assert np.array_equal(df["estimate"].to_numpy(), est.estimate)
