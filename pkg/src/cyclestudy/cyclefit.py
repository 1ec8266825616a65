"""Smooth and sinusoidal descriptions of outcomes over the election cycle.

``loess_fit`` is a plain local-polynomial smoother.  ``sinusoid_fit`` fits
``A sin(2 pi k / L + phi)`` with the period ``L`` fixed at one term; writing it
as ``a sin + b cos`` makes the fit an ordinary weighted FE regression.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import regress
from .eventstudy import EstimationError, EventStudySpec, build_design, run_regression
from .panel import ANNUAL, MONTHLY, PanelDataset


class LoessError(ValueError):
    pass


@dataclass
class LoessFit:
    span: float
    degree: int
    grid: np.ndarray
    curve: np.ndarray

    def __call__(self, k):
        """Curve values at grid points ``k`` (must lie on the grid)."""
        k = np.asarray(k)
        idx = np.searchsorted(self.grid, k)
        if np.any(idx >= len(self.grid)) or np.any(self.grid[np.minimum(idx, len(self.grid) - 1)] != k):
            raise KeyError("point not on the LOESS grid")
        return self.curve[idx]


@dataclass
class SinusoidFit:
    A: float
    phi: float
    se_A: float
    se_phi: float
    ssr: float
    period: int
    a: float = 0.0
    b: float = 0.0
    vcov_ab: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)), repr=False)
    n_obs: int = 0
    n_clusters: int = 0

    def value(self, k):
        return self.A * np.sin(2 * np.pi * np.asarray(k, dtype=float) / self.period + self.phi)

    def linear_value(self, k):
        th = 2 * np.pi * np.asarray(k, dtype=float) / self.period
        return self.a * np.sin(th) + self.b * np.cos(th)

    def to_dict(self) -> dict:
        return {"A": self.A, "phi": self.phi, "se_A": self.se_A, "se_phi": self.se_phi, "ssr": self.ssr}


def tricube(u):
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u ** 3) ** 3


def loess_fit(k, y, w=None, span: float = 0.3, degree: int = 1, grid=None,
              period: Optional[float] = None) -> LoessFit:
    """Local polynomial regression with a tricube kernel.

    Parameters
    ----------
    k, y : array_like
        Points to smooth.
    w : array_like, optional
        Observation weights, multiplied into the kernel weights.
    span : float
        Fraction of points in each local window, in ``(0, 1]``.  The window
        radius is the distance to the ``ceil(span * n)``-th nearest point,
        which itself gets zero weight.
    degree : {1, 2}
    grid : array_like, optional
        Where to evaluate the curve; defaults to the distinct ``k``.
    period : float, optional
        Treat ``k`` as circular with this period: the points are copied one
        period to each side before smoothing, so windows wrap around.  The
        window size still counts only the original ``n`` points.

    Raises
    ------
    LoessError
        When a window holds fewer than ``degree + 1`` distinct ``k`` with
        positive weight.
    """
    if not 0 < span <= 1:
        raise LoessError(f"span must be in (0, 1], got {span}")
    if degree not in (1, 2):
        raise LoessError(f"degree must be 1 or 2, got {degree}")
    k = np.asarray(k, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(k) if w is None else np.asarray(w, dtype=float)
    if not (len(k) == len(y) == len(w)):
        raise LoessError("k, y and w must have equal length")
    if len(k) < degree + 2:
        raise LoessError(f"need at least {degree + 2} points, got {len(k)}")
    grid = np.unique(k) if grid is None else np.asarray(grid, dtype=float)
    q = max(int(math.ceil(span * len(k))), 1)
    if period is not None:
        k = np.concatenate([k - period, k, k + period])
        y = np.tile(y, 3)
        w = np.tile(w, 3)
    curve = np.empty(len(grid))
    for i, x0 in enumerate(grid):
        d = np.abs(k - x0)
        h = np.partition(d, q - 1)[q - 1]
        kw = tricube(d / h) * w if h > 0 else (d == 0) * w
        use = kw > 0
        if np.unique(k[use]).size < degree + 1:
            raise LoessError(f"window at k={x0:g} has fewer than {degree + 1} distinct neighbours; increase span")
        dx = k[use] - x0
        X = np.vander(dx, degree + 1, increasing=True)
        sw = np.sqrt(kw[use])
        coef, *_ = np.linalg.lstsq(X * sw[:, None], y[use] * sw, rcond=None)
        curve[i] = coef[0]
    if not np.all(np.isfinite(curve)):
        raise LoessError("non-finite fitted values")
    return LoessFit(span, degree, grid, curve)


def cycle_period(frequency: str, term_years: int = 4) -> int:
    if frequency == ANNUAL:
        return term_years
    if frequency == MONTHLY:
        return 12 * term_years
    raise ValueError(f"unknown frequency {frequency!r}")


def _period(dataset: PanelDataset, frequency: Optional[str]) -> int:
    if frequency is not None and frequency != dataset.frequency:
        raise EstimationError(f"panel is {dataset.frequency}, not {frequency}")
    return dataset.term()


def sinusoid_fit(dataset: PanelDataset, spec: EventStudySpec = EventStudySpec(),
                 frequency: Optional[str] = None, vcov: str = "cluster") -> SinusoidFit:
    """Fit ``A sin(2 pi k / L + phi)`` net of the spec's fixed effects.

    ``a`` and ``b`` come from one weighted FE regression on ``sin`` and ``cos``
    of ``2 pi k / L``; then ``A = hypot(a, b)`` and ``phi = atan2(b, a)`` in
    ``[0, 2 pi)``.  SEs use the delta method on the ``(a, b)`` covariance.
    At ``A = 0`` the phase is undefined and reported as 0 with NaN SEs.
    """
    L = _period(dataset, frequency)
    design = build_design(dataset, spec)
    th = 2 * np.pi * design.k / L
    X = np.column_stack([np.sin(th), np.cos(th)])
    res = run_regression(design, X, ["sin", "cos"], vcov=vcov)
    lost = [n for n, _ in res.dropped if n in ("sin", "cos")]
    if lost:
        raise EstimationError("sinusoid terms not identified: " + ", ".join(lost))
    a, b = res.get("sin"), res.get("cos")
    V = res.vcov[:2, :2]
    if vcov != "none" and not np.all(np.isfinite(V)):
        raise EstimationError("degenerate (a, b) covariance")
    A = math.hypot(a, b)
    if A > 0:
        phi = math.atan2(b, a) % (2 * np.pi)
        if phi >= 2 * np.pi:
            phi = 0.0
        gA = np.array([a / A, b / A])
        gphi = np.array([-b / A ** 2, a / A ** 2])
        se_A = math.sqrt(max(float(gA @ V @ gA), 0.0))
        se_phi = math.sqrt(max(float(gphi @ V @ gphi), 0.0))
    else:
        phi, se_A, se_phi = 0.0, float("nan"), float("nan")
    return SinusoidFit(A, phi, se_A, se_phi, res.ssr, L, a, b, V, res.n_obs, res.n_clusters)


@dataclass
class CyclePoints:
    k: np.ndarray
    y: np.ndarray
    w: np.ndarray


def cycle_points(dataset: PanelDataset, spec: EventStudySpec = EventStudySpec()) -> CyclePoints:
    """Weighted mean of the FE-residualized outcome at each relative time."""
    design = build_design(dataset, spec)
    y = design.y
    if design.controls.shape[1]:
        M = regress.absorb_fe(np.column_stack([y, design.controls]), design.fe, design.weights)
        s = regress._wls_solve(M[:, 1:], M[:, 0], design.weights, design.control_names)
        r = s.resid
    else:
        r = regress.absorb_fe(y, design.fe, design.weights) if design.fe else y - np.average(y, weights=design.weights)
    codes, ks = _factor(design.k)
    wsum = np.bincount(codes, weights=design.weights)
    mean = np.bincount(codes, weights=design.weights * r) / wsum
    return CyclePoints(ks.astype(float), mean, wsum)


def _factor(k):
    ks, codes = np.unique(k, return_inverse=True)
    return codes, ks


@dataclass
class CycleReport:
    sinusoid: SinusoidFit
    loess: LoessFit
    points: CyclePoints
    beta: Optional[float] = None
    beta_se: Optional[float] = None

    def to_dict(self) -> dict:
        d = self.sinusoid.to_dict()
        d.update({"period": self.sinusoid.period, "span": self.loess.span, "degree": self.loess.degree,
                  "n_obs": self.sinusoid.n_obs, "n_clusters": self.sinusoid.n_clusters})
        if self.beta is not None:
            d["transform_beta"] = self.beta
            d["transform_se"] = self.beta_se
        return d

    def curve_rows(self):
        return [{"k": int(k), "loess": float(lv), "sinusoid": float(self.sinusoid.value(k))}
                for k, lv in zip(self.loess.grid, self.loess.curve)]


def transform_stage(dataset: PanelDataset, spec: EventStudySpec, curve: LoessFit):
    """Second stage: regress the outcome on the fitted cycle curve ``f(k)``."""
    design = build_design(dataset, spec)
    f = curve(design.k.astype(float))
    res = run_regression(design, f[:, None], ["f"])
    if "f" not in res.names:
        raise EstimationError("fitted cycle curve absorbed by fixed effects")
    return res.get("f"), res.stderr("f")


DEFAULT_SPAN = {MONTHLY: 0.3, ANNUAL: 1.0}


def fit_cycle(dataset: PanelDataset, spec: EventStudySpec = EventStudySpec(), span: Optional[float] = None,
              degree: int = 1, frequency: Optional[str] = None, second_stage: bool = False) -> CycleReport:
    """Sinusoid fit plus a LOESS curve through the per-k residual means.

    The LOESS treats relative time as circular.  ``span`` defaults to 0.3 for
    monthly panels and 1.0 for annual ones, where a cycle has only four
    points and smaller spans leave windows with a single point.
    """
    L = _period(dataset, frequency)
    if span is None:
        span = DEFAULT_SPAN[dataset.frequency]
    sin = sinusoid_fit(dataset, spec, frequency)
    pts = cycle_points(dataset, spec)
    T = L // 2
    lo = loess_fit(pts.k, pts.y, pts.w, span=span, degree=degree,
                   grid=np.arange(-T, T, dtype=float), period=L)
    rep = CycleReport(sin, lo, pts)
    if second_stage:
        rep.beta, rep.beta_se = transform_stage(dataset, spec, lo)
    return rep


def write_curve_csv(report: CycleReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "loess", "sinusoid"])
        for r in report.curve_rows():
            wr.writerow([r["k"], repr(r["loess"]), repr(r["sinusoid"])])
