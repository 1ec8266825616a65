import math

import numpy as np
import pandas as pd
import pytest

from cyclestudy.dgp import SimConfig, simulate_panel
from cyclestudy.magnitude import (DAEffects, MagnitudeError, da_fixed_effects, normal_cdf, signal_variance,
                                  to_sd_and_percentile)

# reference values computed with mpmath at 30 digits
PHI = {0.85: 0.802337456877307613, 0.62: 0.732371106531016969, -1.5: 0.066807201268858066,
       3.0: 0.998650101968369905}


@pytest.mark.parametrize("x", sorted(PHI))
def test_normal_cdf_oracle(x):
    assert abs(normal_cdf(x) - PHI[x]) < 1e-15


def test_normal_cdf_symmetry_and_vector():
    x = np.linspace(-8, 8, 161)
    v = normal_cdf(x)
    assert np.allclose(v + normal_cdf(-x), 1.0, atol=1e-15)
    assert np.all(np.diff(v) > 0)
    assert normal_cdf(0.0) == 0.5


def test_sd_and_percentile_hand_example():
    rep = to_sd_and_percentile(0.1528, 0.0323)
    assert rep.sd_units == pytest.approx(0.1528 / math.sqrt(0.0323), abs=1e-15)
    assert round(rep.sd_units, 2) == 0.85
    assert round(rep.percentile, 1) == 80.2
    assert set(rep.to_dict()) == {"effect", "gamma_sq", "sd_units", "percentile", "clamped"}


def test_zero_gamma_is_an_error():
    with pytest.raises(MagnitudeError, match="gamma_sq is 0"):
        to_sd_and_percentile(0.1, 0.0)
    with pytest.raises(MagnitudeError):
        to_sd_and_percentile(0.1, -0.01)


def test_mapping_is_monotone():
    p = [to_sd_and_percentile(e, 0.04).percentile for e in np.linspace(-0.5, 0.5, 21)]
    assert np.all(np.diff(p) > 0)
    assert to_sd_and_percentile(0.0, 0.04).percentile == 50.0


def table(est, se, states, n=None):
    m = len(est)
    return DAEffects(pd.DataFrame({"da_id": [f"D{i}" for i in range(m)], "state_id": states, "estimate": est,
                                   "se": se, "n_obs": n or [10] * m, "reliable": np.isfinite(se)}))


def test_constant_within_state_gives_zero():
    sv = signal_variance(table([0.1, 0.1, 0.5, 0.5], [0.0, 0.0, 0.0, 0.0], ["A", "A", "B", "B"]))
    assert sv.raw == 0.0 and sv.gamma_sq == 0.0 and not sv.clamped


def test_signal_variance_hand_example():
    # state A deviations +-0.2, state B +-0.1, equal counts: raw = (0.04 + 0.01) / 2
    sv = signal_variance(table([0.3, -0.1, 1.1, 0.9], [0.1, 0.1, 0.1, 0.1], ["A", "A", "B", "B"]))
    assert sv.raw == pytest.approx(0.025, abs=1e-15)
    assert sv.mean_sq_se == pytest.approx(0.01, abs=1e-15)
    assert sv.gamma_sq == pytest.approx(0.015, abs=1e-15)


def test_clamp_flag():
    sv = signal_variance(table([0.0, 0.01, 0.0, 0.01], [0.5, 0.5, 0.5, 0.5], ["A", "A", "B", "B"]))
    assert sv.gamma_sq == 0.0 and sv.clamped


def test_da_permutation_invariance():
    t = table([0.3, -0.1, 1.1, 0.9, 0.2], [0.1, 0.2, 0.1, 0.05, 0.1], ["A", "A", "B", "B", "B"])
    perm = DAEffects(t.table.iloc[[4, 2, 0, 3, 1]].reset_index(drop=True))
    a, b = signal_variance(t), signal_variance(perm)
    assert a.gamma_sq == pytest.approx(b.gamma_sq, abs=1e-15)


def test_single_da_states_are_an_error():
    with pytest.raises(MagnitudeError, match="single DA"):
        signal_variance(table([0.1, 0.2], [0.1, 0.1], ["A", "B"]))


@pytest.fixture(scope="module")
def sim():
    cfg = SimConfig(n_states=20, districts_per_state=3, counties_per_district=(2, 3), county_sd=0.0,
                    noise_sd=0.02, da_effect_sd=0.2, n_years=12, seed=4)
    return simulate_panel(cfg)


def test_da_effects_from_panel(sim):
    eff = da_fixed_effects(sim.dataset, sim.da_map)
    t = eff.table
    assert set(t.columns) == {"da_id", "state_id", "estimate", "se", "n_obs", "reliable"}
    assert t["n_obs"].sum() == len(sim.dataset)
    assert t["reliable"].all() and (t["se"] > 0).all()


def test_scale_equivariance(sim):
    """Scaling a level outcome by c scales gamma_sq by c^2."""
    ds = sim.dataset
    base = signal_variance(da_fixed_effects(ds, sim.da_map, transform=None))
    y = ds.frame["admissions_per_1000"].to_numpy()
    scaled = ds.with_outcome("admissions_per_1000", 3.0 * y)
    s = signal_variance(da_fixed_effects(scaled, sim.da_map, transform=None))
    assert s.gamma_sq == pytest.approx(9.0 * base.gamma_sq, rel=1e-10)


def test_map_gaps_are_reported(sim):
    with pytest.raises(MagnitudeError, match="no DA"):
        da_fixed_effects(sim.dataset, sim.da_map.iloc[1:])
    with pytest.raises(MagnitudeError, match="columns"):
        da_fixed_effects(sim.dataset, sim.da_map.drop(columns="da_id"))
