"""Weighted least squares with absorbed fixed effects and cluster-robust variance."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from . import _kernels

PIVOT_TOL = 1e-10
FE_TOL = 1e-10
MAX_SWEEPS = 1000


class RegressionError(RuntimeError):
    pass


class ConvergenceError(RegressionError):
    pass


def factorize(values) -> Tuple[np.ndarray, int]:
    codes, uniques = pd.factorize(np.asarray(values), sort=True)
    if (codes < 0).any():
        raise ValueError("group labels contain missing values")
    return codes.astype(np.int64), len(uniques)


@dataclass
class RegressionProblem:
    """Design for one weighted FE regression.

    ``fe`` holds one label array per absorbed dimension (state, county, period
    ...).  ``weights=None`` means unit weights.
    """

    y: np.ndarray
    X: np.ndarray
    names: Sequence[str]
    clusters: np.ndarray
    fe: Sequence[np.ndarray] = ()
    weights: Optional[np.ndarray] = None
    fe_names: Sequence[str] = ()

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), -1)
        self.names = list(self.names)
        if self.X.shape[1] != len(self.names):
            raise ValueError("one name per regressor column required")
        if self.X.shape[1] == 0:
            raise RegressionError("no regressors")
        if self.clusters is None or len(self.clusters) != len(self.y):
            raise ValueError("cluster labels required for every row")


@dataclass
class FitResult:
    names: List[str]
    coef: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_clusters: int
    dropped: List[Tuple[str, str]] = field(default_factory=list)
    ssr: float = 0.0
    resid: Optional[np.ndarray] = field(default=None, repr=False)
    bread: Optional[np.ndarray] = field(default=None, repr=False)
    vcov_type: str = "cluster"

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.names, self.coef.tolist()))

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def stderr(self, name: str) -> float:
        return float(self.se[self.names.index(name)])

    def get(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients,
            "se": dict(zip(self.names, self.se.tolist())),
            "vcov": self.vcov.tolist(),
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "dropped": [{"name": n, "reason": r} for n, r in self.dropped],
            "ssr": self.ssr,
            "vcov_type": self.vcov_type,
        }


def absorb_fe(M, fe, weights=None, tol: float = FE_TOL, max_sweeps: int = MAX_SWEEPS):
    """Weighted within-transformation of the columns of ``M``.

    Alternating projections over the FE dimensions until no group has a
    weighted mean above ``tol`` (relative to each column's scale, floored at
    one).  A single dimension is exact after one pass.
    """
    M = np.array(M, dtype=float, order="C", copy=True)
    squeeze = M.ndim == 1
    if squeeze:
        M = M[:, None]
    n = M.shape[0]
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    dims = [f if isinstance(f, tuple) else factorize(f) for f in fe]
    if not dims:
        return M[:, 0] if squeeze else M
    scale = np.maximum(1.0, np.abs(M).max(axis=0)) if n else np.ones(M.shape[1])
    if len(dims) == 1:
        codes, g = dims[0]
        _kernels.demean_sweep(M, codes, g, w)
        return M[:, 0] if squeeze else M
    for sweep in range(max_sweeps):
        worst = np.zeros(M.shape[1])
        for codes, g in dims:
            means = _kernels.demean_sweep(M, codes, g, w)
            if g:
                np.maximum(worst, np.abs(means).max(axis=0), out=worst)
        if np.all(worst < tol * scale):
            break
    else:
        raise ConvergenceError(f"fixed-effect absorption did not converge in {max_sweeps} sweeps")
    return M[:, 0] if squeeze else M


def fe_values(y, fe, weights=None, tol: float = FE_TOL, max_sweeps: int = MAX_SWEEPS):
    """Recover the fixed-effect levels themselves, one array per dimension.

    Levels of every dimension after the first are centred to weighted mean
    zero; the first dimension carries the overall level.
    """
    y = np.array(y, dtype=float).reshape(-1, 1).copy(order="C")
    w = np.ones(len(y)) if weights is None else np.ascontiguousarray(weights, dtype=float)
    dims = [factorize(f) for f in fe]
    levels = [np.zeros(g) for _, g in dims]
    scale = max(1.0, float(np.abs(y).max())) if len(y) else 1.0
    for sweep in range(max_sweeps):
        worst = 0.0
        for d, (codes, g) in enumerate(dims):
            means = _kernels.demean_sweep(y, codes, g, w)[:, 0]
            levels[d] += means
            worst = max(worst, float(np.abs(means).max()) if g else 0.0)
        if len(dims) == 1 or worst < tol * scale:
            break
    else:
        raise ConvergenceError(f"fixed-effect recovery did not converge in {max_sweeps} sweeps")
    for d in range(1, len(dims)):
        codes, g = dims[d]
        wsum = np.bincount(codes, weights=w, minlength=g)
        shift = float(np.dot(wsum, levels[d]) / wsum.sum())
        levels[d] -= shift
        levels[0] += shift
    return levels, y[:, 0], dims


@dataclass
class _Solve:
    kept: np.ndarray
    coef: np.ndarray
    bread: np.ndarray
    resid: np.ndarray
    ssr: float
    dropped: List[Tuple[str, str]]


def _wls_solve(X, y, w, names, raw_norms=None) -> _Solve:
    n, p = X.shape
    if n == 0:
        raise RegressionError("no observations")
    if np.any(~(w > 0)):
        raise RegressionError("weights must be positive")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise RegressionError("design contains non-finite values")
    sw = np.sqrt(w)
    Xs = X * sw[:, None]
    ys = y * sw
    Q, R, piv = linalg.qr(Xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    lead = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > PIVOT_TOL * lead)) if lead > 0 else 0
    kept = np.sort(piv[:rank])
    dropped = []
    for j in sorted(piv[rank:]):
        reason = "collinear"
        if raw_norms is not None and np.linalg.norm(Xs[:, j]) <= PIVOT_TOL * max(raw_norms[j], 1.0):
            reason = "absorbed by fixed effects"
        dropped.append((names[j], reason))
    if rank == 0:
        raise RegressionError("all regressors dropped: " + ", ".join(n for n, _ in dropped))
    Xk = Xs[:, kept]
    Qk, Rk = linalg.qr(Xk, mode="economic")
    coef = linalg.solve_triangular(Rk, Qk.T @ ys)
    Rinv = linalg.solve_triangular(Rk, np.eye(rank))
    bread = Rinv @ Rinv.T
    resid = y - X[:, kept] @ coef
    ssr = float(np.dot(w * resid, resid))
    return _Solve(kept, coef, bread, resid, ssr, dropped)


def wls_fit(X, y, weights=None, names=None) -> FitResult:
    """WLS via pivoted QR; near-collinear columns are dropped and reported.

    The returned ``vcov`` is the classical ``s^2 (X'WX)^{-1}``; use
    :func:`cluster_vcov` for the cluster-robust version.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    s = _wls_solve(X, y, w, names)
    n, k = len(y), len(s.kept)
    sigma2 = s.ssr / (n - k) if n > k else np.nan
    return FitResult(
        names=[names[j] for j in s.kept],
        coef=s.coef,
        vcov=sigma2 * s.bread,
        n_obs=n,
        n_clusters=n,
        dropped=s.dropped,
        ssr=s.ssr,
        resid=s.resid,
        bread=s.bread,
        vcov_type="iid",
    )


def cluster_vcov(X, resid, weights, clusters, bread, n_params: Optional[int] = None):
    """CR1 sandwich ``B (sum_g s_g s_g') B`` times ``G/(G-1) (N-1)/(N-K)``."""
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    k = k if n_params is None else n_params
    codes, G = clusters if isinstance(clusters, tuple) else factorize(clusters)
    if G < 2:
        raise RegressionError("cluster-robust variance needs at least two clusters")
    if not np.all(np.isfinite(bread)):
        raise RegressionError("singular bread matrix")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    S = X * (w * resid)[:, None]
    sums = _kernels.cluster_sums(S, codes, G)
    meat = sums.T @ sums
    factor = G / (G - 1) * (n - 1) / (n - k) if n > k else np.nan
    V = factor * (bread @ meat @ bread)
    return 0.5 * (V + V.T)


def hc1_vcov(X, resid, weights, bread):
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    S = X * (w * resid)[:, None]
    V = n / (n - k) * (bread @ (S.T @ S) @ bread)
    return 0.5 * (V + V.T)


def fit(problem: RegressionProblem, vcov: str = "cluster", tol: float = FE_TOL,
        max_sweeps: int = MAX_SWEEPS) -> FitResult:
    """Absorb fixed effects, solve WLS, and attach the requested variance.

    ``vcov`` is ``"cluster"`` (CR1, the default), ``"hc1"``, ``"iid"``, or
    ``"none"`` to skip the variance.
    """
    y, X = problem.y, problem.X
    n = len(y)
    w = np.ones(n) if problem.weights is None else np.asarray(problem.weights, dtype=float)
    M = np.column_stack([y, X])
    raw_norms = np.linalg.norm(X * np.sqrt(w)[:, None], axis=0)
    if problem.fe:
        M = absorb_fe(M, problem.fe, w, tol=tol, max_sweeps=max_sweeps)
    yd, Xd = M[:, 0], M[:, 1:]
    s = _wls_solve(Xd, yd, w, problem.names, raw_norms)
    Xk = Xd[:, s.kept]
    codes, G = factorize(problem.clusters)
    k = len(s.kept)
    if vcov == "cluster":
        V = cluster_vcov(Xk, s.resid, w, (codes, G), s.bread)
    elif vcov == "hc1":
        V = hc1_vcov(Xk, s.resid, w, s.bread)
    elif vcov == "iid":
        V = s.ssr / (n - k) * s.bread
    elif vcov == "none":
        V = np.full((k, k), np.nan)
    else:
        raise ValueError(f"unknown vcov type {vcov!r}")
    return FitResult(
        names=[problem.names[j] for j in s.kept],
        coef=s.coef,
        vcov=V,
        n_obs=n,
        n_clusters=G,
        dropped=s.dropped,
        ssr=s.ssr,
        resid=s.resid,
        bread=s.bread,
        vcov_type=vcov,
    )


def dummy_matrix(labels, drop_first: bool = False) -> np.ndarray:
    """Dense indicator columns, one per distinct label (sorted)."""
    codes, g = factorize(labels)
    D = np.zeros((len(codes), g))
    D[np.arange(len(codes)), codes] = 1.0
    return D[:, 1:] if drop_first else D
