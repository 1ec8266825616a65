"""Ground-truth generator.

Two pieces live here.  The two-period prosecutor-effort model: with reelection
probability ``P = psi * (pi + alpha1*s1 + alpha2*s2)`` and intensity
``s = sigma * e`` the first-order conditions solve in closed form.  And a
county-by-period panel simulator whose outcomes are log-additive in state,
period, county, district and DA effects plus a known election-cycle path, so
every estimator has a sealed truth to be checked against.
"""

import configparser
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .panel import ANNUAL, MONTHLY, ElectionCalendar, PanelDataset, month_period

P_CLAMP_EPS = 1e-6
BASELINE_MEAN_ADMISSIONS = 1.68
BASELINE_MEAN_MONTHS = 141.73


# --- agent model ------------------------------------------------------------


@dataclass(frozen=True)
class AgentParams:
    delta: float
    V: float
    psi: float
    alpha1: float
    alpha2: float
    sigma: float = 1.0
    pi: float = 0.0
    w: float = 0.0

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.V > 0:
            raise ValueError(f"V must be positive, got {self.V}")
        if not self.psi >= 0:
            raise ValueError(f"psi must be nonnegative, got {self.psi}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.alpha1 <= self.alpha2:
            raise ValueError(f"need 0 < alpha1 <= alpha2, got {self.alpha1}, {self.alpha2}")

    def probability(self, s1, s2):
        raw = self.psi * (self.pi + self.alpha1 * s1 + self.alpha2 * s2)
        return np.clip(raw, 0.0, 1.0 - P_CLAMP_EPS)

    def objectives(self, e1, e2):
        """Payoffs of the period-1 and period-2 problems at efforts ``(e1, e2)``."""
        P = self.probability(self.sigma * e1, self.sigma * e2)
        u1 = -e1 ** 2 + self.w + e1 + self.delta ** 2 * P * self.V
        u2 = -e2 ** 2 + self.w + e2 + self.delta * P * self.V
        return u1, u2


@dataclass(frozen=True)
class AgentSolution:
    e1: float
    e2: float
    s1: float
    s2: float
    probability: float

    @property
    def gap(self) -> float:
        return self.s2 - self.s1


def closed_form_efforts(delta, V, psi, sigma, alpha1, alpha2):
    """Interior FOC solution; broadcasts over array arguments."""
    e1 = (1.0 + delta ** 2 * psi * alpha1 * sigma * V) / 2.0
    e2 = (1.0 + delta * psi * alpha2 * sigma * V) / 2.0
    return e1, e2


def solve_agent(params: AgentParams) -> AgentSolution:
    e1, e2 = closed_form_efforts(params.delta, params.V, params.psi, params.sigma,
                                 params.alpha1, params.alpha2)
    s1, s2 = params.sigma * e1, params.sigma * e2
    raw = params.psi * (params.pi + params.alpha1 * s1 + params.alpha2 * s2)
    if not 0.0 <= raw < 1.0 - P_CLAMP_EPS:
        raise ValueError(
            f"reelection probability {raw:.6g} at the optimum leaves [0, 1); "
            "the linear FOCs do not apply"
        )
    return AgentSolution(float(e1), float(e2), float(s1), float(s2), float(raw))


def _golden_max(f, lo, hi, iters=100):
    """Vectorized golden-section maximization of a concave ``f`` on ``[lo, hi]``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = np.array(lo, dtype=float), np.array(hi, dtype=float)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - invphi * (b - a)
        d_new = a + invphi * (b - a)
        c, d = c_new, d_new
        fc, fd = f(c), f(d)
    return (a + b) / 2.0


def numerical_efforts(delta, V, psi, sigma, alpha1, alpha2, pi=0.0, rounds: int = 3):
    """Maximize each period's objective directly by best-response iteration.

    Independent of the FOC algebra: only the objective values are used.
    Broadcasts over arrays.
    """
    delta, V, psi, sigma, alpha1, alpha2, pi = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (delta, V, psi, sigma, alpha1, alpha2, pi)))

    def prob(e1, e2):
        raw = psi * (pi + alpha1 * sigma * e1 + alpha2 * sigma * e2)
        return np.clip(raw, 0.0, 1.0 - P_CLAMP_EPS)

    hi = 2.0 + delta * psi * np.maximum(alpha1, alpha2) * sigma * V
    e1 = np.full(delta.shape, 0.5)
    e2 = np.full(delta.shape, 0.5)
    for _ in range(rounds):
        e1 = _golden_max(lambda x: -x ** 2 + x + delta ** 2 * prob(x, e2) * V, 0.0, hi)
        e2 = _golden_max(lambda x: -x ** 2 + x + delta * prob(e1, x) * V, 0.0, hi)
    return e1, e2


def prop1_grid(n_delta=10, n_V=10, n_alpha1=10, n_gap=10):
    """Parameter grid with ``delta`` in [0.05, 1] and ``alpha2 > alpha1``."""
    d = np.linspace(0.05, 1.0, n_delta)
    v = np.geomspace(0.1, 10.0, n_V)
    a1 = np.linspace(0.01, 0.1, n_alpha1)
    gap = np.linspace(0.005, 0.1, n_gap)
    D, Vv, A1, G = np.meshgrid(d, v, a1, gap, indexing="ij")
    return {
        "delta": D.ravel(),
        "V": Vv.ravel(),
        "psi": np.ones(D.size),
        "sigma": np.ones(D.size),
        "alpha1": A1.ravel(),
        "alpha2": (A1 + G).ravel(),
        "pi": np.zeros(D.size),
    }


def check_proposition1(grid: Optional[Mapping[str, np.ndarray]] = None) -> dict:
    """Check ``s(e2) > s(e1)`` over a grid; compare closed form to direct maximization."""
    g = prop1_grid() if grid is None else {k: np.asarray(v, dtype=float) for k, v in grid.items()}
    pi = g.get("pi", 0.0)
    e1, e2 = closed_form_efforts(g["delta"], g["V"], g["psi"], g["sigma"], g["alpha1"], g["alpha2"])
    s1, s2 = g["sigma"] * e1, g["sigma"] * e2
    raw_p = g["psi"] * (pi + g["alpha1"] * s1 + g["alpha2"] * s2)
    interior = (raw_p >= 0) & (raw_p < 1 - P_CLAMP_EPS)
    n1, n2 = numerical_efforts(g["delta"], g["V"], g["psi"], g["sigma"], g["alpha1"], g["alpha2"], pi)
    gap = s2 - s1
    return {
        "n_points": int(gap.size),
        "violations": int(np.sum(~(gap > 0))),
        "min_gap": float(gap.min()),
        "non_interior": int(np.sum(~interior)),
        "max_effort_error": float(max(np.abs(n1 - e1).max(), np.abs(n2 - e2).max())),
    }


def prop2_affine(params: AgentParams) -> Tuple[float, float]:
    """``(intercept, slope)`` of ``s2 - s1`` as a function of ``k = alpha2 - alpha1``."""
    c = params.sigma ** 2 * params.delta * params.psi * params.V / 2.0
    return c * params.alpha1 * (1.0 - params.delta), c


def check_proposition2(params: AgentParams, ks: Sequence[float]) -> dict:
    """Sweep ``alpha2 = alpha1 + k`` holding everything else fixed."""
    ks = np.asarray(ks, dtype=float)
    if np.any(ks < 0):
        raise ValueError("k sweep must be nonnegative")
    gaps = np.array([
        solve_agent(AgentParams(params.delta, params.V, params.psi, params.alpha1,
                                params.alpha1 + k, params.sigma, params.pi, params.w)).gap
        for k in ks
    ])
    intercept, slope = prop2_affine(params)
    order = np.argsort(ks, kind="stable")
    steps = np.diff(gaps[order])
    return {
        "ks": ks.tolist(),
        "gaps": gaps.tolist(),
        "intercept": intercept,
        "slope": slope,
        "max_affine_error": float(np.abs(gaps - (intercept + slope * ks)).max()),
        "nondecreasing": bool(np.all(steps >= 0)),
        "strictly_increasing": bool(np.all(steps > 0)),
    }


# --- panel simulator -------------------------------------------------------


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    n_states: int = 40
    districts_per_state: int = 10
    counties_per_district: Tuple[int, int] = (3, 7)
    start_year: int = 1986
    n_years: int = 20
    frequency: str = ANNUAL
    term_years: int = 4
    election_month: int = 11
    cohorts: Tuple[int, ...] = (1986, 1987, 1988, 1989)
    cohort_probs: Optional[Tuple[float, ...]] = None
    event_path: Dict[int, float] = field(default_factory=dict)
    cohort_paths: Dict[int, Dict[int, float]] = field(default_factory=dict)
    amplitude: float = 0.0
    phase: float = 0.0
    state_sd: float = 0.1
    year_sd: float = 0.05
    county_sd: float = 0.2
    district_period_sd: float = 0.0
    noise_sd: float = 0.05
    da_effect_sd: float = 0.0
    da_terms: int = 1
    pop_log_mean: float = 10.5
    pop_log_sd: float = 1.0
    mean_admissions: float = BASELINE_MEAN_ADMISSIONS
    mean_months: float = BASELINE_MEAN_MONTHS
    controls: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(key, why):
            raise ConfigError(f"invalid config key {key!r}: {why}")

        for key in ("n_states", "districts_per_state", "n_years", "term_years", "da_terms"):
            if int(getattr(self, key)) < 1:
                bad(key, "must be >= 1")
        lo, hi = self.counties_per_district
        if not 1 <= lo <= hi:
            bad("counties_per_district", "need 1 <= low <= high")
        if self.frequency not in (ANNUAL, MONTHLY):
            bad("frequency", "must be annual or monthly")
        if self.term_years % 2:
            bad("term_years", "must be even")
        if not 1 <= self.election_month <= 12:
            bad("election_month", "must be in 1..12")
        for key in ("state_sd", "year_sd", "county_sd", "district_period_sd", "noise_sd",
                    "da_effect_sd", "pop_log_sd", "amplitude"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")
        if not self.cohorts:
            bad("cohorts", "need at least one cohort")
        if self.cohort_probs is not None:
            p = np.asarray(self.cohort_probs, dtype=float)
            if len(p) != len(self.cohorts) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                bad("cohort_probs", "one nonnegative probability per cohort, summing to 1")
        missing = set(self.cohort_paths) - set(self.cohorts)
        if missing:
            bad("cohort_paths", f"cohorts {sorted(missing)} are not declared")
        for key in ("mean_admissions", "mean_months"):
            if not getattr(self, key) > 0:
                bad(key, "must be > 0")
        T = self.term_periods // 2
        for k in list(self.event_path) + [k for p in self.cohort_paths.values() for k in p]:
            if not -T <= int(k) <= T - 1:
                bad("event_path", f"relative time {k} outside [{-T}, {T - 1}]")

    @property
    def term_periods(self) -> int:
        return self.term_years * 12 if self.frequency == MONTHLY else self.term_years

    @property
    def log_variance(self) -> float:
        return (self.state_sd ** 2 + self.year_sd ** 2 + self.county_sd ** 2
                + self.district_period_sd ** 2 + self.noise_sd ** 2 + self.da_effect_sd ** 2)

    def effect(self, cohort: int, k):
        """True log-point effect at relative time ``k`` for one cohort."""
        k = np.asarray(k)
        path = self.cohort_paths.get(cohort, self.event_path)
        out = np.array([path.get(int(j), 0.0) for j in k.ravel()], dtype=float).reshape(k.shape)
        if self.amplitude:
            out = out + self.amplitude * np.sin(2 * np.pi * k / self.term_periods + self.phase)
        return out


@dataclass
class Truth:
    relative_path: Dict[int, float]
    cohort_paths: Dict[int, Dict[int, float]]
    gamma_sq: float
    amplitude: float
    phase: float
    static_effect: float
    normalization: int = 0

    def to_dict(self) -> dict:
        return {
            "relative_path": {str(k): v for k, v in self.relative_path.items()},
            "cohort_paths": {str(e): {str(k): v for k, v in p.items()} for e, p in self.cohort_paths.items()},
            "gamma_sq": self.gamma_sq,
            "amplitude": self.amplitude,
            "phase": self.phase,
            "static_effect": self.static_effect,
            "normalization": self.normalization,
        }


@dataclass
class SimResult:
    dataset: PanelDataset
    truth: Truth
    da_map: pd.DataFrame
    config: SimConfig


def _stream(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag, index])


def simulate_panel(config: SimConfig) -> SimResult:
    """Draw a county-by-period panel from ``config``.

    Outcome rows are ``mean * exp(state + period + county + DA + cycle effect +
    district-period shock + noise)`` with the baseline scaled so the expected
    rate matches the configured mean.  Each county, district and state has
    its own random stream keyed by ``(seed, index)``.
    """
    cfg = config
    cfg.validate()
    L = cfg.term_periods
    if cfg.frequency == MONTHLY:
        periods = np.arange(cfg.start_year * 12, (cfg.start_year + cfg.n_years) * 12, dtype=np.int64)
    else:
        periods = np.arange(cfg.start_year, cfg.start_year + cfg.n_years, dtype=np.int64)
    n_p = len(periods)
    probs = None if cfg.cohort_probs is None else np.asarray(cfg.cohort_probs, dtype=float)

    period_fx = _stream(cfg.seed, 4, 0).normal(0.0, cfg.year_sd, n_p)
    scale = math.exp(-cfg.log_variance / 2.0)

    cols = {k: [] for k in ("county_id", "state_id", "district_id", "period", "population",
                            "admissions_per_1000", "months_per_1000", "da_id",
                            "ctrl_white_share", "ctrl_income_pc")}
    calendars = {}
    county_index = 0
    for s in range(cfg.n_states):
        state_id = f"S{s:03d}"
        state_fx = _stream(cfg.seed, 3, s).normal(0.0, cfg.state_sd)
        for d in range(cfg.districts_per_state):
            district_index = s * cfg.districts_per_state + d
            district_id = f"{state_id}D{d:03d}"
            drng = _stream(cfg.seed, 2, district_index)
            n_c = int(drng.integers(cfg.counties_per_district[0], cfg.counties_per_district[1] + 1))
            ci = drng.choice(len(cfg.cohorts), p=probs)
            cohort = int(cfg.cohorts[ci])
            dp_shock = drng.normal(0.0, cfg.district_period_sd, (2, n_p))
            anchor = cohort * 12 + cfg.election_month - 1 if cfg.frequency == MONTHLY else cohort
            cal = ElectionCalendar.covering(anchor, L, int(periods[0]), int(periods[-1]))
            k = cal.relative_times(periods)
            term_index = (periods - cal.elections[0] + L - 1) // L
            da_offset = int(drng.integers(0, cfg.da_terms))
            da_index = (term_index + da_offset) // cfg.da_terms
            n_da = int(da_index.max()) + 1
            da_fx = drng.normal(0.0, cfg.da_effect_sd, n_da)
            effect = cfg.effect(cohort, k)
            common = state_fx + period_fx + da_fx[da_index] + effect
            for c in range(n_c):
                county_id = f"{district_id}C{c:03d}"
                crng = _stream(cfg.seed, 1, county_index)
                county_index += 1
                pop = float(np.round(np.exp(crng.normal(cfg.pop_log_mean, cfg.pop_log_sd)))) + 1.0
                c_fx = crng.normal(0.0, cfg.county_sd)
                noise = crng.normal(0.0, cfg.noise_sd, (2, n_p))
                adm = cfg.mean_admissions * scale * np.exp(common + c_fx + dp_shock[0] + noise[0])
                mon = cfg.mean_months * scale * np.exp(common + c_fx + dp_shock[1] + noise[1])
                calendars[county_id] = cal
                cols["county_id"].extend([county_id] * n_p)
                cols["state_id"].extend([state_id] * n_p)
                cols["district_id"].extend([district_id] * n_p)
                cols["period"].append(periods)
                cols["population"].append(np.full(n_p, pop))
                cols["admissions_per_1000"].append(adm)
                cols["months_per_1000"].append(mon)
                cols["da_id"].extend(f"{district_id}-T{j:02d}" for j in da_index)
                if cfg.controls:
                    cols["ctrl_white_share"].append(np.clip(crng.normal(0.8, 0.1, n_p), 0.0, 1.0))
                    cols["ctrl_income_pc"].append(np.exp(crng.normal(10.0, 0.3, n_p)))

    frame = pd.DataFrame({
        "county_id": cols["county_id"],
        "state_id": cols["state_id"],
        "district_id": cols["district_id"],
        "period": np.concatenate(cols["period"]),
        "population": np.concatenate(cols["population"]),
        "admissions_per_1000": np.concatenate(cols["admissions_per_1000"]),
        "months_per_1000": np.concatenate(cols["months_per_1000"]),
    })
    if cfg.frequency == MONTHLY:
        frame["year"] = frame["period"] // 12
        frame["month"] = frame["period"] % 12 + 1
    else:
        frame["year"] = frame["period"]
    controls = ()
    if cfg.controls:
        frame["ctrl_white_share"] = np.concatenate(cols["ctrl_white_share"])
        frame["ctrl_income_pc"] = np.concatenate(cols["ctrl_income_pc"])
        controls = ("ctrl_white_share", "ctrl_income_pc")
    da_map = pd.DataFrame({
        "county_id": frame["county_id"],
        "period": frame["period"],
        "da_id": cols["da_id"],
    })
    dataset = PanelDataset(frame, calendars, cfg.frequency,
                           ("admissions_per_1000", "months_per_1000"), controls)
    da_map = da_map.sort_values(["county_id", "period"], kind="mergesort").reset_index(drop=True)
    return SimResult(dataset, make_truth(cfg), da_map, cfg)


def make_truth(cfg: SimConfig) -> Truth:
    T = cfg.term_periods // 2
    ks = np.arange(-T, T)
    cohort_paths = {}
    for e in cfg.cohorts:
        eff = cfg.effect(int(e), ks)
        base = eff[ks == 0][0]
        cohort_paths[int(e)] = {int(k): float(v - base) for k, v in zip(ks, eff)}
    if cfg.cohort_paths:
        rel = {int(k): float(np.mean([cohort_paths[int(e)][int(k)] for e in cfg.cohorts])) for k in ks}
    else:
        rel = cohort_paths[int(cfg.cohorts[0])]
    nonzero = [v for k, v in rel.items() if k != 0]
    return Truth(
        relative_path=rel,
        cohort_paths=cohort_paths,
        gamma_sq=cfg.da_effect_sd ** 2,
        amplitude=cfg.amplitude,
        phase=cfg.phase % (2 * np.pi),
        static_effect=-float(np.mean(nonzero)) if nonzero else 0.0,
    )


# --- config files ----------------------------------------------------------

_SECTIONS = {
    "panel": ("n_states", "districts_per_state", "counties_per_district", "start_year", "n_years",
              "frequency", "term_years", "election_month", "cohorts", "cohort_probs", "controls"),
    "effects": ("event_path", "amplitude", "phase"),
    "noise": ("state_sd", "year_sd", "county_sd", "district_period_sd", "noise_sd",
              "da_effect_sd", "da_terms"),
    "population": ("pop_log_mean", "pop_log_sd"),
    "baseline": ("mean_admissions", "mean_months"),
    "run": ("seed",),
}


def _parse_path(text: str, key: str) -> Dict[int, float]:
    out = {}
    text = text.strip()
    if not text:
        return out
    for item in text.split(","):
        try:
            k, v = item.split(":")
            out[int(k)] = float(v)
        except ValueError:
            raise ConfigError(f"invalid config key {key!r}: expected 'k: value, ...', got {item.strip()!r}")
    return out


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(SimConfig)}
    try:
        if name == "counties_per_district":
            parts = [int(x) for x in raw.replace("-", " ").replace(",", " ").split()]
            return (parts[0], parts[-1])
        if name == "cohorts":
            return tuple(int(x) for x in raw.split(","))
        if name == "cohort_probs":
            return tuple(float(x) for x in raw.split(","))
        if name == "event_path":
            return _parse_path(raw, name)
        if name == "frequency":
            return raw.strip()
        if name == "controls":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            return low in ("true", "yes", "1")
        kind = kinds[name]
        return int(raw) if kind is int else float(raw)
    except (ValueError, IndexError):
        raise ConfigError(f"invalid config key {name!r}: cannot parse {raw!r}")


def parse_config(text: str) -> SimConfig:
    """Parse an INI-style config (``key = value`` under ``[section]`` headers)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}")
    kwargs = {}
    cohort_paths = {}
    for section in cp.sections():
        if section.startswith("cohort."):
            try:
                e = int(section.split(".", 1)[1])
            except ValueError:
                raise ConfigError(f"invalid config section [{section}]")
            for key, raw in cp.items(section):
                if key != "path":
                    raise ConfigError(f"unknown config key {key!r} in section [{section}]")
                cohort_paths[e] = _parse_path(raw, f"{section}.path")
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            kwargs[key] = _coerce(key, raw)
    if cohort_paths:
        kwargs["cohort_paths"] = cohort_paths
    return SimConfig(**kwargs)


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: SimConfig) -> str:
    d = asdict(cfg)
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = d[key]
            if v is None:
                continue
            if key == "event_path":
                v = ", ".join(f"{k}: {x!r}" for k, x in sorted(v.items()))
            elif isinstance(v, (tuple, list)):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{key} = {v}")
        lines.append("")
    for e, path in sorted(cfg.cohort_paths.items()):
        lines.append(f"[cohort.{e}]")
        lines.append("path = " + ", ".join(f"{k}: {x!r}" for k, x in sorted(path.items())))
        lines.append("")
    return "\n".join(lines)
