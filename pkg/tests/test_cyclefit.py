import math

import numpy as np
import pytest

from cyclestudy.cyclefit import LoessError, fit_cycle, loess_fit, sinusoid_fit, tricube, write_curve_csv
from cyclestudy.dgp import SimConfig, simulate_panel
from cyclestudy.eventstudy import EstimationError, EventStudySpec

SPEC = EventStudySpec(transform="log", fe=("county", "year"))


def test_tricube():
    assert tricube(0.0) == 1.0
    assert tricube(1.0) == 0.0 and tricube(2.0) == 0.0
    assert tricube(0.5) == pytest.approx((1 - 0.125) ** 3)


@pytest.mark.parametrize("degree", [1, 2])
@pytest.mark.parametrize("span", [0.3, 0.6, 1.0])
def test_loess_reproduces_a_line(degree, span):
    k = np.arange(-24, 24, dtype=float)
    y = 0.3 - 0.02 * k
    w = np.random.default_rng(0).uniform(0.5, 2.0, k.size)
    fit = loess_fit(k, y, w, span=span, degree=degree)
    assert np.max(np.abs(fit.curve - y)) < 1e-10


def test_loess_degree2_reproduces_a_parabola():
    k = np.arange(-10, 10, dtype=float)
    y = 1 + 0.1 * k - 0.03 * k ** 2
    assert np.max(np.abs(loess_fit(k, y, span=0.5, degree=2).curve - y)) < 1e-10


def test_loess_periodic_has_no_edges():
    """With wrap-around, a cyclic shift of the data rotates the curve exactly."""
    k = np.arange(-24, 24, dtype=float)
    y = np.sin(2 * np.pi * k / 48) + 0.1 * np.random.default_rng(1).normal(size=48)
    base = loess_fit(k, y, span=0.3, period=48).curve
    shifted = (k + 10 + 24) % 48 - 24
    rot = loess_fit(shifted, y, span=0.3, period=48, grid=k).curve
    assert np.allclose(rot, np.roll(base, 10), atol=1e-12)


def test_loess_errors():
    with pytest.raises(LoessError, match="span"):
        loess_fit(np.arange(10.0), np.arange(10.0), span=0.0)
    with pytest.raises(LoessError, match="degree"):
        loess_fit(np.arange(10.0), np.arange(10.0), degree=3)
    with pytest.raises(LoessError, match="neighbours"):
        loess_fit(np.arange(4.0), np.arange(4.0), span=0.3)


def test_loess_call_on_grid():
    fit = loess_fit(np.arange(6.0), np.arange(6.0), span=1.0)
    assert fit(np.array([2.0, 5.0])) == pytest.approx([2.0, 5.0])
    with pytest.raises(KeyError):
        fit(np.array([2.5]))


def sim(amplitude, phase, noise, seed=0, frequency="annual"):
    cfg = SimConfig(n_states=10, districts_per_state=4, counties_per_district=(2, 4), amplitude=amplitude,
                    phase=phase, noise_sd=noise, frequency=frequency, n_years=12 if frequency == "annual" else 8,
                    seed=seed)
    return simulate_panel(cfg).dataset


def test_noiseless_sinusoid_exact():
    fit = sinusoid_fit(sim(0.05, 0.7, 0.0), SPEC)
    assert abs(fit.A - 0.05) < 1e-6
    assert abs(fit.phi - 0.7) < 1e-6


def test_phase_range_and_zero_phase():
    fit = sinusoid_fit(sim(0.05, 0.0, 0.0), SPEC)
    assert 0.0 <= fit.phi < 2 * math.pi
    assert min(fit.phi, 2 * math.pi - fit.phi) < 1e-6
    fit = sinusoid_fit(sim(0.05, 5.5, 0.0), SPEC)
    assert fit.phi == pytest.approx(5.5, abs=1e-6)


def test_sinusoid_forms_agree():
    fit = sinusoid_fit(sim(0.04, 1.2, 0.01), SPEC)
    k = np.arange(-2, 2)
    assert np.allclose(fit.value(k), fit.linear_value(k), atol=1e-14)
    assert fit.se_A > 0 and fit.se_phi > 0
    assert set(fit.to_dict()) == {"A", "phi", "se_A", "se_phi", "ssr"}


def test_zero_amplitude_gives_nan_se():
    ds = sim(0.0, 0.0, 0.0)
    ds = ds.with_outcome("admissions_per_1000", np.full(len(ds), 2.0))
    fit = sinusoid_fit(ds, SPEC)
    assert fit.A < 1e-12
    if fit.A == 0:
        assert fit.phi == 0.0 and math.isnan(fit.se_A)


def test_frequency_mismatch():
    with pytest.raises(EstimationError, match="annual"):
        sinusoid_fit(sim(0.05, 0.0, 0.0), SPEC, frequency="monthly")


def test_monthly_cycle(tmp_path):
    ds = sim(0.05, 0.3, 0.01, frequency="monthly")
    rep = fit_cycle(ds, EventStudySpec(transform="log", fe=("county", "period")))
    assert rep.sinusoid.period == 48
    assert abs(rep.sinusoid.A - 0.05) < 0.005
    assert rep.loess.span == 0.3
    assert np.max(np.abs(rep.loess.curve - rep.sinusoid.value(rep.loess.grid))) < 0.01
    p = tmp_path / "curve.csv"
    write_curve_csv(rep, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "k,loess,sinusoid" and len(lines) == 49


def test_annual_cycle_defaults_and_second_stage():
    rep = fit_cycle(sim(0.05, 0.3, 0.01), SPEC, second_stage=True)
    assert rep.loess.span == 1.0
    d = rep.to_dict()
    assert {"transform_beta", "transform_se", "period"} <= set(d)
    assert d["period"] == 4
