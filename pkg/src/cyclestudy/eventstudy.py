"""Dynamic and static difference-in-differences over election-cycle relative time."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .panel import MONTHLY, PanelDataset
from .regress import FitResult, RegressionProblem, fit

log = logging.getLogger(__name__)

FE_COLUMNS = {"state": "state_id", "county": "county_id", "district": "district_id"}
MONTHLY_WINDOW = (-19, 12)


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EventStudySpec:
    """What to regress and how.

    ``transform`` is ``None`` (levels), ``"log"`` or ``"log1p"``.  ``fe`` names
    come from ``state``, ``county``, ``district``, ``year`` and ``period``;
    for annual data ``year`` and ``period`` coincide, for monthly data
    ``period`` is year-month.
    """

    outcome: str = "admissions_per_1000"
    normalize: int = 0
    fe: Tuple[str, ...] = ("state", "year")
    controls: Tuple[str, ...] = ()
    weights: str = "population"
    cluster: str = "district"
    transform: Optional[str] = None
    window: Tuple[int, int] = MONTHLY_WINDOW

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fe"] = list(self.fe)
        d["controls"] = list(self.controls)
        d["window"] = list(self.window)
        return d


@dataclass
class Design:
    y: np.ndarray
    frame_index: np.ndarray
    fe: list
    weights: np.ndarray
    clusters: np.ndarray
    controls: np.ndarray
    control_names: List[str]
    k: np.ndarray
    excluded: int


def transform_outcome(values, transform: Optional[str]) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if transform is None or transform == "level":
        return x
    if transform == "log1p":
        return np.log1p(x)
    if transform == "log":
        with np.errstate(divide="ignore"):
            out = np.log(x)
        if np.any(np.isfinite(x) & (x <= 0)):
            raise EstimationError("log transform of a zero or negative outcome; use log1p")
        return out
    raise ValueError(f"unknown transform {transform!r}")


def _fe_labels(dataset: PanelDataset, name: str):
    df = dataset.frame
    if name in FE_COLUMNS:
        return df[FE_COLUMNS[name]].to_numpy()
    if name == "period":
        return df["period"].to_numpy()
    if name == "year":
        return df["year"].to_numpy()
    raise ValueError(f"unknown fixed-effect dimension {name!r}")


def build_design(dataset: PanelDataset, spec: EventStudySpec) -> Design:
    df = dataset.frame
    if spec.outcome not in df.columns:
        raise EstimationError(f"outcome {spec.outcome!r} not in panel")
    y = transform_outcome(df[spec.outcome].to_numpy(), spec.transform)
    keep = np.isfinite(y)
    ctrl_cols = []
    for c in spec.controls:
        col = "population" if c == "county_population" else c
        if col not in df.columns:
            raise EstimationError(f"control {c!r} not in panel")
        v = df[col].to_numpy(dtype=float)
        ctrl_cols.append(v)
    ctrl = np.column_stack(ctrl_cols) if ctrl_cols else np.empty((len(df), 0))
    missing_ctrl = ~np.all(np.isfinite(ctrl), axis=1)
    excluded = int(np.sum(keep & missing_ctrl))
    if excluded:
        log.info("excluded %d rows with missing control values", excluded)
    keep &= ~missing_ctrl
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise EstimationError("no usable observations")
    if spec.weights == "population":
        w = df["population"].to_numpy(dtype=float)[idx]
    elif spec.weights == "unit":
        w = np.ones(idx.size)
    else:
        raise ValueError(f"unknown weights {spec.weights!r}")
    if spec.cluster not in FE_COLUMNS:
        raise ValueError(f"unknown cluster dimension {spec.cluster!r}")
    return Design(
        y=y[idx],
        frame_index=idx,
        fe=[_fe_labels(dataset, f)[idx] for f in spec.fe],
        weights=w,
        clusters=df[FE_COLUMNS[spec.cluster]].to_numpy()[idx],
        controls=ctrl[idx],
        control_names=list(spec.controls),
        k=df["rel_time"].to_numpy()[idx],
        excluded=excluded,
    )


def run_regression(design: Design, X, names, vcov: str = "cluster") -> FitResult:
    X = np.column_stack([X, design.controls]) if design.controls.shape[1] else X
    names = list(names) + design.control_names
    problem = RegressionProblem(design.y, X, names, design.clusters, fe=design.fe,
                                weights=design.weights)
    return fit(problem, vcov=vcov)


def k_name(k: int) -> str:
    return f"k={k}"


@dataclass
class EventStudyEstimate:
    ks: List[int]
    estimate: np.ndarray
    se: np.ndarray
    omitted: List[int]
    n_obs: int
    n_clusters: int
    spec: EventStudySpec
    excluded_rows: int = 0
    controls: dict = field(default_factory=dict)
    fit: Optional[FitResult] = field(default=None, repr=False)

    @property
    def ci_low(self) -> np.ndarray:
        return self.estimate - 2.0 * self.se

    @property
    def ci_high(self) -> np.ndarray:
        return self.estimate + 2.0 * self.se

    def coef(self, k: int) -> float:
        return float(self.estimate[self.ks.index(k)])

    def stderr(self, k: int) -> float:
        return float(self.se[self.ks.index(k)])

    def multiplicative(self, k: int) -> float:
        """Estimate read as a multiplicative effect ``exp(beta)``."""
        return math.exp(self.coef(k))

    def rows(self):
        return [
            {"k": int(k), "estimate": float(b), "se": float(s), "ci_low": float(lo), "ci_high": float(hi)}
            for k, b, s, lo, hi in zip(self.ks, self.estimate, self.se, self.ci_low, self.ci_high)
        ]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n_obs": int(self.n_obs),
            "n_clusters": int(self.n_clusters),
            "coefficients": self.rows(),
        }


@dataclass
class StaticEstimate:
    estimate: float
    se: float
    n_obs: int
    n_clusters: int
    spec: EventStudySpec
    ssr: float = 0.0
    excluded_rows: int = 0
    fit: Optional[FitResult] = field(default=None, repr=False)

    @property
    def ci_low(self) -> float:
        return self.estimate - 2.0 * self.se

    @property
    def ci_high(self) -> float:
        return self.estimate + 2.0 * self.se

    @property
    def multiplicative(self) -> float:
        return math.exp(self.estimate)

    def rows(self):
        return [{"k": 0, "estimate": self.estimate, "se": self.se,
                 "ci_low": self.ci_low, "ci_high": self.ci_high}]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n_obs": int(self.n_obs),
            "n_clusters": int(self.n_clusters),
            "coefficients": self.rows(),
        }


def _path_fit(dataset, spec, design, estimated: Sequence[int], omitted: Sequence[int], vcov="cluster"):
    present = set(np.unique(design.k).tolist())
    for k in list(estimated) + list(omitted):
        if k not in present and k in estimated:
            raise EstimationError(f"no observations at relative time k={k}")
    X = np.column_stack([(design.k == k).astype(float) for k in estimated])
    names = [k_name(k) for k in estimated]
    res = run_regression(design, X, names, vcov=vcov)
    lost = [n for n, _ in res.dropped if n in names]
    if lost:
        raise EstimationError("event-time indicators not identified: " + ", ".join(lost))
    ks = sorted(set(estimated) | set(omitted))
    est = np.zeros(len(ks))
    se = np.zeros(len(ks))
    for i, k in enumerate(ks):
        if k in estimated:
            est[i] = res.get(k_name(k))
            se[i] = res.stderr(k_name(k))
    ctrl = {n: res.get(n) for n in design.control_names if n in res.names}
    return EventStudyEstimate(ks, est, se, sorted(omitted), res.n_obs, res.n_clusters, spec,
                              design.excluded, ctrl, res)


def fit_dynamic(dataset: PanelDataset, spec: EventStudySpec = EventStudySpec(),
                vcov: str = "cluster") -> EventStudyEstimate:
    """Regress the outcome on ``1{k = j}`` for every ``j`` except the normalized one."""
    design = build_design(dataset, spec)
    T = dataset.term() // 2
    all_k = list(range(-T, T))
    if spec.normalize not in all_k:
        raise EstimationError(f"normalization k={spec.normalize} outside [{-T}, {T - 1}]")
    present = set(np.unique(design.k).tolist())
    for k in all_k:
        if k not in present:
            raise EstimationError(f"no observations at relative time k={k}")
    estimated = [k for k in all_k if k != spec.normalize]
    return _path_fit(dataset, spec, design, estimated, [spec.normalize], vcov)


def fit_static(dataset: PanelDataset, spec: EventStudySpec = EventStudySpec(),
               vcov: str = "cluster") -> StaticEstimate:
    """Regress the outcome on the election-period indicator ``1{k = 0}``."""
    design = build_design(dataset, spec)
    D = (design.k == 0).astype(float)
    if D.sum() == 0:
        raise EstimationError("no observations at relative time k=0")
    if D.sum() == len(D):
        raise EstimationError("every observation is in an election period")
    res = run_regression(design, D[:, None], ["election"], vcov=vcov)
    if "election" not in res.names:
        raise EstimationError("election indicator not identified after fixed effects")
    return StaticEstimate(res.get("election"), res.stderr("election"), res.n_obs, res.n_clusters,
                          spec, res.ssr, design.excluded, res)


def monthly_path(dataset: PanelDataset, spec: Optional[EventStudySpec] = None,
                 vcov: str = "cluster") -> EventStudyEstimate:
    """Monthly path over ``spec.window``; months outside it form the omitted set.

    Year-month fixed effects replace year fixed effects.
    """
    if dataset.frequency != MONTHLY:
        raise EstimationError("monthly_path needs a monthly panel")
    spec = spec or EventStudySpec(fe=("state", "period"))
    if "year" in spec.fe:
        spec = replace(spec, fe=tuple("period" if f == "year" else f for f in spec.fe))
    design = build_design(dataset, spec)
    lo, hi = spec.window
    T = dataset.term() // 2
    if lo < -T or hi > T - 1 or lo > hi:
        raise EstimationError(f"window [{lo}, {hi}] exceeds relative-time range [{-T}, {T - 1}]")
    omitted = [k for k in range(-T, T) if k < lo or k > hi]
    if not omitted:
        raise EstimationError("omitted month set is empty")
    present = set(np.unique(design.k).tolist())
    if not any(k in present for k in omitted):
        raise EstimationError("no observations in the omitted months")
    estimated = list(range(lo, hi + 1))
    missing = [k for k in estimated if k not in present]
    if missing:
        raise EstimationError(f"window exceeds data: no observations at k={missing[0]}")
    return _path_fit(dataset, spec, design, estimated, omitted, vcov)


def write_plot_csv(estimate, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "estimate", "se", "ci_low", "ci_high"])
        for r in estimate.rows():
            w.writerow([r["k"], repr(r["estimate"]), repr(r["se"]), repr(r["ci_low"]), repr(r["ci_high"])])
