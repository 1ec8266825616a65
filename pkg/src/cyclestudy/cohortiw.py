"""Interaction-weighted aggregation of cohort-by-relative-time effects.

Every county belongs to an election cohort (its calendar phase).  One weighted
FE regression interacts cohort indicators with relative-time indicators
(``k != 0``), giving a cell effect for each ``(cohort, k)``.  Cell effects are
averaged within each ``k`` using population-weighted sample shares and then
across ``k``.  Standard errors come from a district-level pairs bootstrap.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import regress
from .eventstudy import (FE_COLUMNS, EstimationError, EventStudySpec, build_design,
                         fit_static, run_regression)
from .panel import PanelDataset

log = logging.getLogger(__name__)

Cell = Tuple[int, int]


def cell_name(e: int, k: int) -> str:
    return f"e={e}:k={k}"


@dataclass
class CattFit:
    estimates: Dict[Cell, float]
    se: Dict[Cell, float]
    cell_weight: Dict[Cell, float]
    dropped: List[Tuple[Cell, str]]
    ks: List[int]
    n_obs: int
    n_clusters: int
    fit: Optional[regress.FitResult] = field(default=None, repr=False)


@dataclass
class CohortAggregate:
    catt: Dict[Cell, float]
    shares: Dict[Cell, float]
    vg: float
    se: Optional[float] = None
    reps: int = 0
    seed: Optional[int] = None
    redraws: int = 0

    def to_dict(self) -> dict:
        cells = [
            {"cohort": int(e), "k": int(k), "estimate": float(self.catt[(e, k)]),
             "share": float(self.shares[(e, k)])}
            for e, k in sorted(self.catt)
        ]
        return {"vg": float(self.vg), "se": None if self.se is None else float(self.se),
                "reps": int(self.reps), "seed": self.seed, "cells": cells}

    def interpretation(self) -> str:
        """Plain reading of the sign: negative ``vg`` means the election year is higher."""
        side = "+" if self.vg <= 0 else "-"
        return f"election-year effect {side}{abs(self.vg) * 100:.1f} log points (approx.)"


@dataclass
class _IWDesign:
    design: object
    X: np.ndarray
    cells: List[Cell]
    ks: List[int]
    row_cell: np.ndarray


def _iw_design(dataset: PanelDataset, spec: EventStudySpec) -> _IWDesign:
    design = build_design(dataset, spec)
    cohorts = dataset.cohorts()[design.frame_index]
    T = dataset.term() // 2
    ks = [k for k in range(-T, T) if k != 0]
    cells, cols = [], []
    row_cell = np.full(len(design.y), -1, dtype=np.int64)
    for e in np.unique(cohorts):
        for k in ks:
            ind = (cohorts == e) & (design.k == k)
            if not ind.any():
                log.warning("cohort %s has no observations at k=%d; cell dropped", e, k)
                continue
            row_cell[ind] = len(cells)
            cells.append((int(e), int(k)))
            cols.append(ind.astype(float))
    if not cells:
        raise EstimationError("no cohort-by-relative-time cells with observations")
    return _IWDesign(design, np.column_stack(cols), cells, ks, row_cell)


def fit_catt(dataset: PanelDataset, spec: EventStudySpec = EventStudySpec()) -> CattFit:
    """Cell effects from the saturated cohort-by-relative-time regression."""
    iw = _iw_design(dataset, spec)
    names = [cell_name(e, k) for e, k in iw.cells]
    res = run_regression(iw.design, iw.X, names)
    dropped = []
    all_cohorts = np.unique(dataset.cohorts()[iw.design.frame_index])
    present = set(iw.cells)
    for e in all_cohorts:
        for k in iw.ks:
            if (int(e), k) not in present:
                dropped.append(((int(e), k), "empty cell"))
    lost = [n for n, _ in res.dropped if n in names]
    if lost:
        raise EstimationError(
            "cohort-by-relative-time cells not identified under fixed effects "
            f"{list(spec.fe)}: " + ", ".join(lost)
            + " (absorbing cohort levels leaves a periodic calendar pattern collinear with the cells)"
        )
    w = iw.design.weights
    est, se, cw = {}, {}, {}
    for j, cell in enumerate(iw.cells):
        n = names[j]
        if n in res.names:
            est[cell] = res.get(n)
            se[cell] = res.stderr(n)
            cw[cell] = float(w[iw.X[:, j] > 0].sum())
    return CattFit(est, se, cw, dropped, iw.ks, res.n_obs, res.n_clusters, res)


def cohort_shares(cell_weight: Dict[Cell, float]) -> Dict[Cell, float]:
    totals: Dict[int, float] = {}
    for (e, k), v in cell_weight.items():
        totals[k] = totals.get(k, 0.0) + v
    return {(e, k): v / totals[k] for (e, k), v in cell_weight.items()}


def aggregate_vg(catt: CattFit, ks: Optional[Sequence[int]] = None) -> CohortAggregate:
    """Share-weighted average of cell effects within each ``k``, then mean over ``k``."""
    ks = list(catt.ks if ks is None else ks)
    for k in ks:
        if not any(kk == k for (_, kk) in catt.estimates):
            raise EstimationError(f"every cohort cell is empty at k={k}")
    shares = cohort_shares({c: catt.cell_weight[c] for c in catt.estimates if c[1] in ks})
    per_k = {k: 0.0 for k in ks}
    for cell, s in shares.items():
        per_k[cell[1]] += s * catt.estimates[cell]
    vg = float(np.mean([per_k[k] for k in ks]))
    return CohortAggregate({c: catt.estimates[c] for c in shares}, shares, vg)


def _vg_from_weights(iw: _IWDesign, fe_dims, keep, w, ks) -> Optional[float]:
    """v_g on a reweighted sample.

    Returns ``None`` when some ``k`` has no cell in the sample, or when a
    present cell is collinear with the fixed effects.
    """
    d = iw.design
    y = d.y[keep]
    X = iw.X[keep]
    if d.controls.shape[1]:
        X = np.column_stack([X, d.controls[keep]])
    present = X[:, : len(iw.cells)].any(axis=0)
    cell_idx = np.flatnonzero(present)
    cells = [iw.cells[j] for j in cell_idx]
    if set(k for _, k in cells) != set(ks):
        return None
    cols = list(cell_idx) + list(range(len(iw.cells), X.shape[1]))
    X = X[:, cols]
    M = np.column_stack([y, X])
    M = regress.absorb_fe(M, [(codes[keep], g) for codes, g in fe_dims], w)
    names = [str(j) for j in range(X.shape[1])]
    s = regress._wls_solve(M[:, 1:], M[:, 0], w, names)
    kept = list(s.kept)
    if any(pos not in kept for pos in range(len(cells))):
        # a collinear cell would bias the cells it leans on; treat as non-estimable
        return None
    est, cw = {}, {}
    for pos, cell in enumerate(cells):
        est[cell] = s.coef[kept.index(pos)]
        cw[cell] = float(w[X[:, pos] > 0].sum())
    shares = cohort_shares(cw)
    per_k = {k: 0.0 for k in ks}
    for cell, sh in shares.items():
        per_k[cell[1]] += sh * est[cell]
    return float(np.mean([per_k[k] for k in ks]))


@dataclass
class BootstrapResult:
    se: float
    replicates: np.ndarray
    reps: int
    seed: int
    redraws: int


def bootstrap_se(dataset: PanelDataset, spec: EventStudySpec = EventStudySpec(), reps: int = 1000,
                 seed: int = 0, threads: int = 1, strata: Optional[str] = None) -> BootstrapResult:
    """District pairs bootstrap of ``v_g``.

    Replicate ``r`` draws districts with replacement from its own stream
    ``default_rng([seed, r])``; a district drawn ``m`` times enters with its
    weights multiplied by ``m``, which reproduces the duplicated-row fit
    exactly.  A draw that leaves some ``k`` without a cell, or makes a
    present cell collinear with the fixed effects, is redrawn from the same
    stream.

    With ``strata="state"`` districts are resampled within their state, so
    each replicate keeps every state's district count.
    """
    if reps < 2:
        raise ValueError("need at least two bootstrap replicates")
    iw = _iw_design(dataset, spec)
    d = iw.design
    ccodes, G = regress.factorize(d.clusters)
    if G < 2:
        raise EstimationError("bootstrap needs at least two clusters")
    fe_dims = [regress.factorize(f) for f in d.fe]
    ks = iw.ks
    max_redraws = 10 * reps
    if strata is None:
        groups = [np.arange(G)]
    else:
        col = FE_COLUMNS.get(strata, strata)
        labels = dataset.frame[col].to_numpy()[d.frame_index]
        first = np.zeros(G, dtype=np.int64)
        first[ccodes[::-1]] = np.arange(len(ccodes))[::-1]
        scodes, _ = regress.factorize(labels[first])
        groups = [np.flatnonzero(scodes == j) for j in range(scodes.max() + 1)]

    def draw(rng):
        m = np.zeros(G, dtype=np.int64)
        for members in groups:
            m += np.bincount(members[rng.integers(0, len(members), len(members))], minlength=G)
        return m

    def one(r):
        rng = np.random.default_rng([int(seed), int(r)])
        redraws = 0
        while True:
            m = draw(rng)
            mult = m[ccodes]
            keep = mult > 0
            v = _vg_from_weights(iw, fe_dims, keep, d.weights[keep] * mult[keep], ks)
            if v is not None:
                return v, redraws
            redraws += 1
            if redraws > max_redraws:
                raise EstimationError(f"bootstrap replicate {r} exhausted {max_redraws} redraws")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(reps)))
    else:
        out = [one(r) for r in range(reps)]
    vals = np.array([v for v, _ in out])
    redraws = int(sum(n for _, n in out))
    if redraws > max_redraws:
        raise EstimationError(f"bootstrap exhausted {max_redraws} redraws")
    if redraws:
        log.warning("bootstrap redrew %d replicates with empty relative-time cells", redraws)
    return BootstrapResult(float(np.std(vals, ddof=1)), vals, reps, int(seed), redraws)


def estimate_iw(dataset: PanelDataset, spec: EventStudySpec = EventStudySpec(), reps: int = 1000,
                seed: int = 0, threads: int = 1) -> CohortAggregate:
    catt = fit_catt(dataset, spec)
    agg = aggregate_vg(catt)
    if reps:
        boot = bootstrap_se(dataset, spec, reps, seed, threads)
        agg.se, agg.reps, agg.seed, agg.redraws = boot.se, reps, int(seed), boot.redraws
    return agg


# --- negative weights ----------------------------------------------------


@dataclass
class NegativeWeightReport:
    naive: float
    naive_se: float
    naive_truth: float
    vg: float
    vg_truth: float
    cohort_effects: Dict[int, float]
    implicit_weights: Dict[Cell, float]
    shares: Dict[Cell, float]
    true_effects: Dict[Cell, float]
    attempts: int
    params: dict

    @property
    def sign_reversed(self) -> bool:
        return all(np.sign(self.naive) != np.sign(v) for v in self.cohort_effects.values())

    def to_dict(self) -> dict:
        return {
            "naive_twfe": self.naive,
            "naive_se": self.naive_se,
            "naive_truth": self.naive_truth,
            "vg": self.vg,
            "vg_truth": self.vg_truth,
            "cohort_effects": {str(e): v for e, v in self.cohort_effects.items()},
            "attempts": self.attempts,
            "params": self.params,
            "cells": [
                {"cohort": e, "k": k, "true_effect": self.true_effects[(e, k)],
                 "twfe_weight": self.implicit_weights.get((e, k), 0.0),
                 "share": self.shares.get((e, k), 0.0)}
                for e, k in sorted(self.true_effects)
            ],
        }


def implicit_twfe_weights(dataset: PanelDataset, spec: EventStudySpec) -> Dict[Cell, float]:
    """Weight each ``(cohort, k != 0)`` cell receives in the static TWFE coefficient.

    The coefficient on ``N = 1{k != 0}`` equals ``sum_i w_i r_i y_i / sum_i w_i r_i N_i``
    with ``r`` the FE residual of ``N``; summing ``w_i r_i`` by cell gives the
    weights, which add up to one and need not be positive.
    """
    d = build_design(dataset, spec)
    N = (d.k != 0).astype(float)
    r = regress.absorb_fe(N, d.fe, d.weights)
    denom = float(np.sum(d.weights * r * N))
    cohorts = dataset.cohorts()[d.frame_index]
    out = {}
    for e in np.unique(cohorts):
        for k in np.unique(d.k):
            if k == 0:
                continue
            m = (cohorts == e) & (d.k == k)
            if m.any():
                out[(int(e), int(k))] = float(np.sum(d.weights[m] * r[m]) / denom)
    return out


def naive_nonelection_effect(dataset: PanelDataset, spec: EventStudySpec):
    """Static TWFE on the non-election indicator; same sign convention as ``v_g``."""
    est = fit_static(dataset, spec)
    return -est.estimate, est.se


@dataclass
class DemoParams:
    mean_effect: float = 0.05
    heterogeneity: float = 0.4
    n_states: int = 30
    districts_per_state: int = 6
    counties_per_district: Tuple[int, int] = (2, 4)
    n_years: int = 20
    noise_sd: float = 0.01
    county_sd: float = 0.05
    fe: Tuple[str, ...] = ("state", "year")
    max_attempts: int = 500
    tolerance: float = 0.01
    seed: int = 0


def _window_mask(dataset: PanelDataset, windows: Dict[int, Tuple[int, int]]):
    years = dataset.frame["year"].to_numpy()
    cohorts = dataset.cohorts()
    keep = np.zeros(len(years), dtype=bool)
    for e, (lo, hi) in windows.items():
        keep |= (cohorts == e) & (years >= lo) & (years <= hi)
    return keep


def negative_weight_demo(params: DemoParams = DemoParams()) -> NegativeWeightReport:
    """Search for a staggered, heterogeneous panel where static TWFE gets the sign wrong.

    Every cohort's mean effect over ``k != 0`` equals ``params.mean_effect``;
    cell effects deviate from it by cohort-specific, mean-zero patterns, and
    each cohort is observed over its own window of years.  A candidate is
    accepted when the exact noiseless TWFE coefficient (implicit weights times
    true cell effects) has the opposite sign, the fitted naive estimate on a
    noisy draw agrees, and the fitted ``v_g`` lands within
    ``params.tolerance`` of both its share-weighted truth and the common mean.
    """
    from .dgp import SimConfig, simulate_panel

    rng = np.random.default_rng([int(params.seed), 99])
    cohorts = (1986, 1987, 1988, 1989)
    ks = (-2, -1, 1)
    spec = EventStudySpec(transform="log", fe=tuple(params.fe), weights="population")
    start = 1986
    tried = []
    for attempt in range(1, params.max_attempts + 1):
        paths = {}
        for e in cohorts:
            eta = rng.normal(0.0, 1.0, len(ks))
            eta = params.heterogeneity * (eta - eta.mean()) / max(np.abs(eta - eta.mean()).max(), 1e-12)
            paths[e] = {k: params.mean_effect + float(x) for k, x in zip(ks, eta)}
            paths[e][0] = 0.0
        windows = {}
        for e in cohorts:
            length = int(rng.integers(4, params.n_years + 1))
            lo = start + int(rng.integers(0, params.n_years - length + 1))
            windows[e] = (lo, lo + length - 1)
        cfg = SimConfig(
            n_states=params.n_states,
            districts_per_state=params.districts_per_state,
            counties_per_district=params.counties_per_district,
            start_year=start,
            n_years=params.n_years,
            cohorts=cohorts,
            cohort_paths=paths,
            state_sd=0.1,
            year_sd=0.05,
            county_sd=params.county_sd,
            noise_sd=0.0,
            seed=int(params.seed) * 1000 + attempt,
        )
        clean = simulate_panel(cfg).dataset
        clean = clean.subset(_window_mask(clean, windows))
        tried.append({"attempt": attempt, "windows": windows})
        try:
            weights = implicit_twfe_weights(clean, spec)
            catt0 = fit_catt(clean, spec)
            agg0 = aggregate_vg(catt0)
        except (EstimationError, regress.RegressionError):
            continue
        truth_cells = {(e, k): paths[e][k] for e in cohorts for k in ks}
        naive_truth = sum(wt * truth_cells[c] for c, wt in weights.items())
        vg_truth = sum(agg0.shares[c] * truth_cells[c] for c in agg0.shares) / len(ks)
        if not naive_truth < 0:
            continue
        noisy_cfg = replace(cfg, noise_sd=params.noise_sd)
        noisy = simulate_panel(noisy_cfg).dataset
        noisy = noisy.subset(_window_mask(noisy, windows))
        naive, naive_se = naive_nonelection_effect(noisy, spec)
        agg = aggregate_vg(fit_catt(noisy, spec))
        if (naive >= 0 or abs(agg.vg - vg_truth) > params.tolerance
                or abs(agg.vg - params.mean_effect) > params.tolerance):
            continue
        effects = {e: float(np.mean([paths[e][k] for k in ks])) for e in cohorts}
        return NegativeWeightReport(
            naive=naive,
            naive_se=naive_se,
            naive_truth=float(naive_truth),
            vg=agg.vg,
            vg_truth=float(vg_truth),
            cohort_effects=effects,
            implicit_weights=weights,
            shares=agg.shares,
            true_effects=truth_cells,
            attempts=attempt,
            params={"windows": {str(e): list(w) for e, w in windows.items()},
                    "paths": {str(e): {str(k): v for k, v in p.items()} for e, p in paths.items()},
                    "seed": cfg.seed, "fe": list(params.fe)},
        )
    raise EstimationError(
        f"no sign-reversing panel found in {params.max_attempts} attempts; tried windows "
        + "; ".join(str(t["windows"]) for t in tried[:5]) + (" ..." if len(tried) > 5 else "")
    )


# --- table rendering -------------------------------------------------------

TABLE_ROWS = (
    ("Admissions / 1000 Pop.", ("All Offenses", "Violent Offenses", "Property Offenses", "Drug Offenses")),
    ("Sentenced Months / 1000 Pop.", ("All Offenses", "Violent Offenses", "Property Offenses", "Drug Offenses")),
)


def format_row(label: str, vg: float, se: Optional[float]) -> str:
    """One indented row: ``v_g`` to 3 decimals, SE to 4 decimals in parentheses."""
    se_text = "" if se is None else f"({se:.4f})"
    return f"    {label:<22}{vg:>10.3f}{se_text:>12}"


def render_table(rows: Sequence[Tuple[str, Sequence[Tuple[str, float, float]]]]) -> str:
    """Text table: group headers, then indented rows of ``v_g`` and bootstrap SE."""
    lines = [f"{'':<26}{'CATT (v_g)':>10}{'Bootstrap':>12}",
             f"{'':<26}{'(log pts)':>10}{'SE':>12}"]
    for header, items in rows:
        lines.append(header)
        for label, vg, se in items:
            lines.append(format_row(label, vg, se))
    return "\n".join(lines) + "\n"
