import numpy as np
import pandas as pd
import pytest

from cyclestudy.dgp import SimConfig, simulate_panel
from cyclestudy.panel import ElectionCalendar, PanelDataset


def make_panel(n_counties=8, years=range(2000, 2012), anchors=None, seed=0, outcome=None,
               districts=4, states=2):
    """Small annual panel built by hand; calendars cycle through four anchors."""
    rng = np.random.default_rng(seed)
    anchors = anchors or [2000, 2001, 2002, 2003]
    years = list(years)
    rows, cals = [], {}
    for c in range(n_counties):
        cid = f"C{c:02d}"
        d = c % districts
        s = d % states
        cals[cid] = ElectionCalendar.covering(anchors[d % len(anchors)], 4, years[0], years[-1])
        pop = float(rng.integers(1_000, 50_000))
        for y in years:
            rows.append({"county_id": cid, "state_id": f"S{s}", "district_id": f"D{d}", "year": y,
                         "period": y, "population": pop,
                         "admissions_per_1000": float(rng.gamma(4.0, 0.4)),
                         "months_per_1000": float(rng.gamma(4.0, 30.0))})
    frame = pd.DataFrame(rows)
    if outcome is not None:
        frame["admissions_per_1000"] = outcome(frame)
    return PanelDataset(frame, cals)


@pytest.fixture
def small_panel():
    return make_panel()


@pytest.fixture(scope="session")
def sim_small():
    cfg = SimConfig(n_states=8, districts_per_state=4, counties_per_district=(2, 3), n_years=12,
                    event_path={-2: -0.02, -1: -0.03, 1: -0.04}, seed=3)
    return simulate_panel(cfg)
