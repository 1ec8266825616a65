"""Signal variance of prosecutor fixed effects and SD/percentile magnitudes.

The recipe has three steps.  First estimate DA fixed effects, net of period
effects.  Then take their mean squared deviation about state means.  Finally
subtract the average sampling variance.  The square root of the result turns
an effect in log points into standard deviations of the within-state DA
distribution, and a normal CDF turns those into percentiles.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import pandas as pd

from . import regress
from .eventstudy import transform_outcome
from .panel import PanelDataset

log = logging.getLogger(__name__)


class MagnitudeError(ValueError):
    pass


def normal_cdf(x):
    """Standard normal CDF via ``erfc``; accurate in both tails."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))
    from scipy.special import erfc

    return 0.5 * erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))


@dataclass
class DAEffects:
    """Per-DA fixed effects with sampling SEs and observation counts."""

    table: pd.DataFrame  # da_id, state_id, estimate, se, n_obs, reliable

    @property
    def estimates(self) -> Dict[str, float]:
        return dict(zip(self.table["da_id"], self.table["estimate"]))

    @property
    def se(self) -> Dict[str, float]:
        return dict(zip(self.table["da_id"], self.table["se"]))


@dataclass
class SignalVariance:
    gamma_sq: float
    raw: float
    mean_sq_se: float
    clamped: bool
    n_das: int = 0
    n_states: int = 0

    def to_dict(self) -> dict:
        return {"gamma_sq": self.gamma_sq, "raw": self.raw, "mean_sq_se": self.mean_sq_se,
                "clamped": self.clamped, "n_das": self.n_das, "n_states": self.n_states}


@dataclass
class MagnitudeReport:
    effect: float
    gamma_sq: float
    sd_units: float
    percentile: float
    clamped: bool = False

    def to_dict(self) -> dict:
        return {"effect": self.effect, "gamma_sq": self.gamma_sq, "sd_units": self.sd_units,
                "percentile": self.percentile, "clamped": self.clamped}


def da_fixed_effects(dataset: PanelDataset, da_map: pd.DataFrame, outcome: str = "admissions_per_1000",
                     transform: Optional[str] = "log", weights: str = "population",
                     fe: str = "period") -> DAEffects:
    """DA fixed effects from a weighted regression on DA indicators plus period FE.

    ``da_map`` has ``county_id``, ``period`` and ``da_id`` columns.  The SE of
    each effect is the leverage-corrected (HC2) SE of a weighted mean of its
    residuals, ``sqrt(sum(w^2 r^2 / (1 - h))) / sum(w)`` with ``h = w / sum(w)``.  DAs with fewer than
    two observations keep their estimate but get ``se = nan`` and
    ``reliable = False``.
    """
    df = dataset.frame
    need = {"county_id", "period", "da_id"}
    if not need.issubset(da_map.columns):
        raise MagnitudeError(f"DA map needs columns {sorted(need)}")
    m = da_map[["county_id", "period", "da_id"]].copy()
    m["county_id"] = m["county_id"].astype(str)
    m["period"] = m["period"].astype(np.int64)
    if m.duplicated(["county_id", "period"]).any():
        raise MagnitudeError("DA map has duplicate (county_id, period) rows")
    merged = df[["county_id", "state_id", "period", "population", outcome]].merge(
        m, on=["county_id", "period"], how="left", validate="one_to_one")
    if merged["da_id"].isna().any():
        row = merged.index[merged["da_id"].isna()][0]
        raise MagnitudeError(
            f"observation county={merged.at[row, 'county_id']} period={merged.at[row, 'period']} "
            "has no DA in the map")
    y = transform_outcome(merged[outcome].to_numpy(), transform)
    keep = np.isfinite(y)
    merged = merged[keep].reset_index(drop=True)
    y = y[keep]
    w = merged["population"].to_numpy(float) if weights == "population" else np.ones(len(y))
    da = merged["da_id"].to_numpy()
    per = merged["period"].to_numpy() if fe == "period" else np.asarray(merged[fe])
    levels, resid, dims = regress.fe_values(y, [da, per], w)
    codes, g = dims[0]
    n = np.bincount(codes, minlength=g)
    wsum = np.bincount(codes, weights=w, minlength=g)
    lev = w / wsum[codes]
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.bincount(codes, weights=(w * resid) ** 2 / (1.0 - lev), minlength=g)
        se = np.sqrt(s2) / wsum
    reliable = n >= 2
    se[~reliable] = np.nan
    if (~reliable).any():
        log.warning("%d DAs have fewer than two observations; SE unreliable", int((~reliable).sum()))
    da_labels = np.unique(da)
    states = merged.groupby("da_id", sort=True)["state_id"].agg(lambda s: s.iloc[0])
    multi = merged.groupby("da_id", sort=True)["state_id"].nunique()
    if (multi > 1).any():
        raise MagnitudeError(f"DA {multi.index[multi > 1][0]} spans more than one state")
    table = pd.DataFrame({
        "da_id": da_labels,
        "state_id": states.loc[da_labels].to_numpy(),
        "estimate": levels[0],
        "se": se,
        "n_obs": n,
        "reliable": reliable,
    })
    return DAEffects(table)


def signal_variance(effects: DAEffects) -> SignalVariance:
    """Noise-corrected within-state variance of DA effects.

    ``raw`` is the mean squared deviation of each DA effect from its state's
    mean, weighted by DA observation counts (no degrees-of-freedom
    correction).  ``gamma_sq = max(0, raw - mean(se^2))`` over reliable DAs.
    """
    t = effects.table
    if len(t) < 2:
        raise MagnitudeError("need at least two DAs")
    per_state = t.groupby("state_id")["da_id"].count()
    if (per_state < 2).all():
        raise MagnitudeError("every state has a single DA; within-state variance undefined")
    if per_state.mean() < 2:
        log.warning("fewer than two DAs per state on average (%.2f)", per_state.mean())
    n = t["n_obs"].to_numpy(float)
    mu = t["estimate"].to_numpy(float)
    codes, g = regress.factorize(t["state_id"].to_numpy())
    state_mean = np.bincount(codes, weights=n * mu, minlength=g) / np.bincount(codes, weights=n, minlength=g)
    dev = mu - state_mean[codes]
    raw = float(np.sum(n * dev ** 2) / n.sum())
    se = t["se"].to_numpy(float)
    ok = np.isfinite(se)
    if not ok.any():
        raise MagnitudeError("no DA has a reliable SE")
    msq = float(np.mean(se[ok] ** 2))
    return SignalVariance(max(0.0, raw - msq), raw, msq, raw < msq, len(t), g)


def to_sd_and_percentile(effect: float, gamma_sq: float, clamped: bool = False) -> MagnitudeReport:
    """``sd_units = effect / sqrt(gamma_sq)`` and ``percentile = 100 * Phi(sd_units)``."""
    if not np.isfinite(gamma_sq) or gamma_sq < 0:
        raise MagnitudeError(f"gamma_sq must be a nonnegative number, got {gamma_sq}")
    if gamma_sq == 0:
        raise MagnitudeError("gamma_sq is 0: no detectable DA heterogeneity, so SD units are undefined")
    sd = float(effect) / math.sqrt(gamma_sq)
    return MagnitudeReport(float(effect), float(gamma_sq), sd, 100.0 * normal_cdf(sd), clamped)
